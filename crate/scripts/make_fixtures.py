#!/usr/bin/env python3
"""Regenerate the checked-in fixtures under fixtures/.

Writes architecture JSON files for the reference networks and the toy
three-layer model (weights + architecture). The .nrpw writer here is an
independent implementation of the format; the Rust loader must accept its
output and re-serialize it byte-for-byte.

Usage: python3 scripts/make_fixtures.py
"""

import json
import math
import struct
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent / "fixtures"


def layer(name, cin, cout, k, hw, inputs, prunable=True, group=None):
    entry = {
        "name": name,
        "in_channels": cin,
        "out_channels": cout,
        "kh": k,
        "kw": k,
        "out_h": hw,
        "out_w": hw,
        "inputs": inputs,
        "prunable": prunable,
        "min_filters_floor": 1,
    }
    if group is not None:
        entry["coupling_group"] = group
    return entry


def resnet_cifar(depth):
    """CIFAR ResNet with identity (zero-pad) shortcuts, no projection convs."""
    blocks = (depth - 2) // 6
    layers = [layer("conv1", 3, 16, 3, 32, [], prunable=False, group="stage1")]
    prev, prev_c = "conv1", 16
    for s in range(1, 4):
        width = 16 * 2 ** (s - 1)
        hw = 32 // 2 ** (s - 1)
        for b in range(blocks):
            c1 = f"layer{s}.{b}.conv1"
            c2 = f"layer{s}.{b}.conv2"
            layers.append(layer(c1, prev_c, width, 3, hw, [prev]))
            layers.append(layer(c2, width, width, 3, hw, [c1], prunable=False, group=f"stage{s}"))
            prev, prev_c = c2, width
    return {"layers": layers}


def resnet50():
    layers = [layer("conv1", 3, 64, 7, 112, [])]
    prev, prev_c, prev_hw = "conv1", 64, 56
    for s, (nblocks, hw) in enumerate(zip([3, 4, 6, 3], [56, 28, 14, 7]), start=1):
        width = 64 * 2 ** (s - 1)
        for b in range(nblocks):
            p = f"layer{s}.{b}"
            c1_hw = prev_hw if b == 0 else hw
            layers.append(layer(f"{p}.conv1", prev_c, width, 1, c1_hw, [prev]))
            layers.append(layer(f"{p}.conv2", width, width, 3, hw, [f"{p}.conv1"]))
            layers.append(
                layer(f"{p}.conv3", width, 4 * width, 1, hw, [f"{p}.conv2"], prunable=False, group=f"layer{s}")
            )
            if b == 0:
                layers.append(
                    layer(f"{p}.downsample", prev_c, 4 * width, 1, hw, [prev], prunable=False, group=f"layer{s}")
                )
            prev, prev_c = f"{p}.conv3", 4 * width
        prev_hw = hw
    return {"layers": layers}


def alexnet_cifar():
    return {
        "layers": [
            layer("conv1", 3, 64, 3, 16, []),
            layer("conv2", 64, 192, 3, 8, ["conv1"]),
            layer("conv3", 192, 384, 3, 4, ["conv2"]),
            layer("conv4", 384, 256, 3, 4, ["conv3"]),
            layer("conv5", 256, 256, 3, 4, ["conv4"]),
        ]
    }


def toy_arch():
    return {
        "layers": [
            layer("conv1", 2, 5, 1, 8, []),
            layer("conv2", 5, 8, 3, 8, ["conv1"]),
            layer("conv3", 8, 6, 3, 8, ["conv2"]),
        ]
    }


def toy_weights():
    rng = np.random.default_rng(20240611)
    # conv1: five 2-d filters spaced 0.04 rad apart on the circle. At
    # gamma = 0.034 neighbours are joined (sqrt(2)*sin(0.02) ~ 0.0283) and
    # two-step pairs are not (sqrt(2)*sin(0.04) ~ 0.0566): a path of five.
    # Filter i sits at arc position pos[i], so the path reads 1-2-0-3-4.
    scales = [1.0, 0.5, 2.0, 0.25, 1.5]
    pos = [2, 0, 1, 3, 4]
    conv1 = np.array(
        [[s * math.cos(0.3 + 0.04 * p), s * math.sin(0.3 + 0.04 * p)] for p, s in zip(pos, scales)],
        dtype=np.float32,
    ).reshape(5, 2, 1, 1)

    # conv2: two direction clusters, interleaved, each copy rescaled and
    # perturbed well below the edge threshold.
    base = rng.standard_normal((2, 45))
    copy_scales = [0.8, 1.3, 0.4, 2.1, 1.0, 0.6, 1.7, 0.9]
    rows = []
    for i, s in enumerate(copy_scales):
        d = base[i % 2] / np.linalg.norm(base[i % 2])
        noise = rng.standard_normal(45)
        noise *= 0.02 / np.linalg.norm(noise)
        rows.append(s * (d + noise))
    conv2 = np.array(rows, dtype=np.float32).reshape(8, 5, 3, 3)

    # conv3: six generic directions, pairwise far apart.
    conv3 = rng.standard_normal((6, 8, 3, 3)).astype(np.float32)
    return [("conv1", conv1), ("conv2", conv2), ("conv3", conv3)]


def write_nrpw(path, layers):
    header, payload, offset = [], bytearray(), 0
    for name, t in layers:
        out, cin, kh, kw = t.shape
        data = np.ascontiguousarray(t, dtype="<f4").tobytes()
        header.append(
            {"name": name, "out": out, "in": cin, "kh": kh, "kw": kw, "dtype": "f32", "offset": offset, "len": len(data)}
        )
        payload += data
        offset += len(data)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(b"NRPW")
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        f.write(payload)


def dump(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def main():
    dump(ROOT / "arch" / "resnet20_cifar.json", resnet_cifar(20))
    dump(ROOT / "arch" / "resnet56_cifar.json", resnet_cifar(56))
    dump(ROOT / "arch" / "resnet50_imagenet.json", resnet50())
    dump(ROOT / "arch" / "alexnet_cifar.json", alexnet_cifar())
    dump(ROOT / "toy" / "arch.json", toy_arch())
    write_nrpw(ROOT / "toy" / "weights.nrpw", toy_weights())


if __name__ == "__main__":
    main()
