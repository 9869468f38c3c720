//! Subcommand bodies.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use srr_core::covering::DegreeMode;
use srr_core::flops::{model_flops, plan_flops_drop, FlopsReport};
use srr_core::redundancy::{
    allocate, analyze_model_with, AllocationConfig, Budget, LayerRedundancyReport, RedundancyWeights,
    TieBreak,
};
use srr_core::selection::{apply_plan, make_plan, PruningPlan};
use srr_core::statmodel::{
    convergence_sweep, full_chain_within_ci, simulate_system, sweep_csv, verify_ordering, OrderingReport,
    SoftCheck, StatEstimates, StatModelConfig, Threshold,
};
use srr_core::weights_io::{bind, load_arch, load_weights, write_weights, BoundModel};

use crate::args::{AnalyzeArgs, ApplyArgs, BenchArgs, FlopsArgs, GraphOpts, PlanArgs, SimulateArgs};
use crate::bench::{run_bench, BenchConfig};
use crate::CliError;

fn load_model(weights: &Path, arch: Option<&Path>) -> Result<BoundModel, CliError> {
    let w = load_weights(weights).map_err(|e| CliError::weights(weights, e))?;
    match arch {
        None => Ok(BoundModel::unbound(w)),
        Some(p) => {
            let a = load_arch(p).map_err(|e| CliError::arch(p, e))?;
            Ok(bind(w, a)?)
        }
    }
}

fn graph_settings(g: &GraphOpts) -> Result<(f64, RedundancyWeights), CliError> {
    if !(g.gamma > 0.0 && g.gamma.is_finite()) {
        return Err(CliError::Validation(format!("--gamma must be positive, got {}", g.gamma)));
    }
    let w = RedundancyWeights::new(g.w1, g.w2).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((g.gamma, w))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    std::fs::write(&path, contents).map_err(|source| CliError::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
    create_dir(dir)?;
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(dir.join(name), text)
}

// Human output is best effort: a closed pipe should not fail the command
// after its files are written.
macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        let _ = writeln!($out, $($arg)*);
    };
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub gamma: f64,
    pub w1: f64,
    pub w2: f64,
    pub degree_mode: DegreeMode,
    pub source_digest: String,
    /// Prunable layers in model order.
    pub layers: Vec<LayerRedundancyReport>,
}

pub fn analyze_report(a: &AnalyzeArgs) -> Result<AnalyzeReport, CliError> {
    let (gamma, w) = graph_settings(&a.graph)?;
    let model = load_model(&a.weights, a.arch.as_deref())?;
    let mode: DegreeMode = a.graph.degree_mode.into();
    let layers = analyze_model_with(&model, gamma, w, mode)?;
    Ok(AnalyzeReport {
        gamma,
        w1: w.w1(),
        w2: w.w2(),
        degree_mode: mode,
        source_digest: model.weights().digest(),
        layers,
    })
}

pub fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = analyze_report(a)?;
    let mut rows: Vec<&LayerRedundancyReport> = report.layers.iter().collect();
    rows.sort_by(|x, y| y.r.total_cmp(&x.r));
    say!(out, "{:<24} {:>6} {:>6} {:>6} {:>6} {:>8} {:>10}", "layer", "N", "k", "n1", "n2", "N1c~", "R");
    for r in rows {
        say!(
            out,
            "{:<24} {:>6} {:>6} {:>6} {:>6} {:>8.1} {:>10.4}",
            r.layer, r.n, r.k, r.n1, r.n2, r.n1c_estimate, r.r
        );
    }
    if let Some(dir) = &a.out {
        let p = write_json(dir, "analyze.json", &report)?;
        say!(out, "wrote {}", p.display());
    }
    Ok(())
}

pub fn plan(a: &PlanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (gamma, weights) = graph_settings(&a.graph)?;
    let model = load_model(&a.weights, a.arch.as_deref())?;
    let budget = match (a.budget.filters, a.budget.flops_drop) {
        (Some(n), None) => Budget::FilterCount(n),
        (None, Some(f)) => Budget::FlopsFraction(f),
        _ => unreachable!("clap enforces exactly one budget"),
    };
    let cfg = AllocationConfig {
        budget,
        gamma,
        weights,
        metric: a.metric.into(),
        removal: a.removal.into(),
        ties: if a.deterministic_ties {
            TieBreak::LowestIndex
        } else {
            TieBreak::Random
        },
        degree_mode: a.graph.degree_mode.into(),
        seed: a.seed,
    };
    let alloc = allocate(&model, &cfg)?;
    let plan = make_plan(&alloc, &model, a.criterion.into(), a.seed)?;
    let flops = model.arch().map(|arch| plan_flops_drop(arch, &plan)).transpose()?;

    create_dir(&a.out)?;
    let plan_path = write_file(a.out.join("plan.json"), plan.to_json())?;
    write_file(a.out.join("allocation.json"), alloc.to_json())?;
    if let Some(f) = &flops {
        write_json(&a.out, "flops.json", f)?;
    }

    say!(out, "{:<24} {:>8} {:>8} {:>8}", "layer", "filters", "removed", "kept");
    for b in model.bindings().iter().filter(|b| b.prunable) {
        let total = model.tensor(b).out_channels();
        let removed = plan.removal(&b.name).len();
        say!(out, "{:<24} {:>8} {:>8} {:>8}", b.name, total, removed, total - removed);
    }
    say!(out, "removed {} filters", plan.total_removed());
    if let Some(d) = flops.as_ref().and_then(|f| f.drop_fraction) {
        say!(out, "FLOPs drop {:.4}", d);
    }
    if let Some(o) = alloc.overshoot {
        say!(out, "overshoot {:.4}", o);
    }
    say!(out, "seed {}", a.seed);
    say!(out, "wrote {}", plan_path.display());
    Ok(())
}

pub fn apply(a: &ApplyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(&a.weights, a.arch.as_deref())?;
    let plan = PruningPlan::load(&a.plan)?;
    let pruned = apply_plan(&model, &plan)?;

    create_dir(&a.out)?;
    let wpath = a.out.join("pruned.nrpw");
    write_weights(&pruned.weights, &wpath).map_err(|e| CliError::Output {
        path: wpath.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    if let Some(arch) = &pruned.arch {
        write_file(a.out.join("pruned_arch.json"), arch.to_json())?;
    }
    say!(out, "{:<24} {:>16} {:>16}", "layer", "before", "after");
    for (old, new) in model.weights().layers().iter().zip(pruned.weights.layers()) {
        let fmt = |t: &srr_core::weights_io::LayerTensor| {
            let (o, i, kh, kw) = t.shape();
            format!("{o}x{i}x{kh}x{kw}")
        };
        say!(out, "{:<24} {:>16} {:>16}", old.name(), fmt(old), fmt(new));
    }
    say!(out, "wrote {}", wpath.display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub config: StatModelConfig,
    pub estimates: StatEstimates,
    pub ordering: OrderingReport,
    /// Each link of the five-term chain judged within its paired CI.
    pub chain_within_ci: Vec<SoftCheck>,
}

pub fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| CliError::Parse(format!("{}: {e}", a.config.display())))?;
    let config = StatModelConfig::from_json(&text)?;
    let estimates = simulate_system(&config)?;
    let ordering = verify_ordering(&estimates);
    let report = SimulationReport {
        config,
        chain_within_ci: full_chain_within_ci(&estimates),
        ordering,
        estimates,
    };

    say!(out, "{:<10} {:>10} {:>10}", "estimate", "value", "99% +/-");
    for e in srr_core::statmodel::Estimator::ALL {
        let v = report.estimates.get(e);
        say!(out, "{:<10} {:>10.6} {:>10.6}", e.label(), v.value, v.half_width);
    }
    for c in &report.ordering.hard {
        say!(out, "[{}] {}", if c.holds { "ok" } else { "FAIL" }, c.relation);
    }
    let s = &report.ordering.soft;
    say!(
        out,
        "[{}] {} (diff {:+.6} +/- {:.6}, n = {}){}",
        if s.holds { "ok" } else { "--" },
        s.relation,
        s.difference,
        s.half_width,
        s.n,
        s.note.as_deref().map(|n| format!(": {n}")).unwrap_or_default()
    );

    if let Some(dir) = &a.out {
        write_json(dir, "simulation.json", &report)?;
    }
    if !a.sweep.is_empty() {
        let b = a
            .sweep_b_per_filter
            .map_or(Threshold::Fixed(config.b), Threshold::PerFilter);
        let rows = convergence_sweep(&config, &a.sweep, b)?;
        say!(out, "{:>8} {:>10} {:>12} {:>12}", "n", "b", "p_o-p_eta_r", "p_eta_bar-p_g");
        for r in &rows {
            say!(out, "{:>8} {:>10.2} {:>12.6} {:>12.6}", r.n, r.b, r.gap_random.value, r.gap_global.value);
        }
        if let Some(dir) = &a.out {
            write_json(dir, "sweep.json", &rows)?;
            write_file(dir.join("sweep.csv"), sweep_csv(&rows))?;
        }
    }
    if !report.ordering.hard_ok() {
        return Err(CliError::Invariant(
            "a per-sample inequality failed; this indicates a bug".into(),
        ));
    }
    Ok(())
}

pub fn bench_cover(a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = run_bench(&BenchConfig {
        sizes: a.sizes.clone(),
        max_cover: a.max_cover,
        per_bin: a.per_bin,
        oracle_max_vertices: a.oracle_max_vertices,
        seed: a.seed,
    });
    say!(out, "{:>6} {:>6} {:>7} {:>14} {:>14}", "N", "N1c", "graphs", "oracle (s)", "estimate (s)");
    for r in &rows {
        let oracle = r.oracle_secs.map_or("skipped".to_string(), |t| format!("{t:.6}"));
        say!(out, "{:>6} {:>6} {:>7} {:>14} {:>14.6}", r.n, r.n1c, r.graphs, oracle, r.estimate_secs);
    }
    if let Some(dir) = &a.out {
        write_json(dir, "bench_cover.json", &rows)?;
    }
    Ok(())
}

pub fn flops(a: &FlopsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let arch = load_arch(&a.arch).map_err(|e| CliError::arch(&a.arch, e))?;
    let report: FlopsReport = match &a.plan {
        Some(p) => plan_flops_drop(&arch, &PruningPlan::load(p)?)?,
        None => model_flops(&arch),
    };
    say!(out, "{:<28} {:>6} {:>6} {:>16}", "layer", "in", "out", "FLOPs");
    for l in &report.layers {
        say!(out, "{:<28} {:>6} {:>6} {:>16}", l.name, l.in_channels, l.out_channels, l.flops);
    }
    say!(out, "total {}", report.total);
    if let Some(d) = report.drop_fraction {
        say!(out, "drop {:.6}", d);
    }
    if let Some(dir) = &a.out {
        write_json(dir, "flops.json", &report)?;
    }
    Ok(())
}
