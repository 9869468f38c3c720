//! Structural-redundancy channel pruning planner.
//!
//! Each convolution layer's filters are turned into a threshold graph whose
//! connected components and 1-covering number measure how much of the layer
//! is redundant. A budget of filters (or a FLOPs target) is then spent one
//! filter at a time on the currently most redundant layer, and the resulting
//! per-layer counts are turned into a concrete pruning plan.

pub mod covering;
pub mod filter_graph;
pub mod weights_io;
pub mod flops;
pub mod redundancy;
pub mod selection;
pub mod statmodel;
