//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use srr_core::covering::DegreeMode;
use srr_core::redundancy::{Metric, RemovalPolicy};
use srr_core::selection::Criterion;

#[derive(Debug, Parser)]
#[command(name = "srr", version, about = "Structural-redundancy channel pruning planner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer redundancy report.
    Analyze(AnalyzeArgs),
    /// Allocate a pruning budget and write plan.json.
    Plan(PlanArgs),
    /// Apply a plan, writing slimmed weights and architecture.
    Apply(ApplyArgs),
    /// Monte Carlo model of single-filter pruning.
    Simulate(SimulateArgs),
    /// Time exact covering numbers against the greedy estimate.
    BenchCover(BenchArgs),
    /// FLOPs of an architecture, optionally after a plan.
    Flops(FlopsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Graph,
    Nof,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Graph => Metric::Graph,
            MetricArg::Nof => Metric::Nof,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    #[value(name = "mw", alias = "min-weight")]
    MinWeight,
    Random,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::MinWeight => Criterion::MinWeight,
            CriterionArg::Random => Criterion::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RemovalArg {
    Random,
    MinWeight,
}

impl From<RemovalArg> for RemovalPolicy {
    fn from(r: RemovalArg) -> Self {
        match r {
            RemovalArg::Random => RemovalPolicy::Random,
            RemovalArg::MinWeight => RemovalPolicy::MinWeight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DegreeArg {
    Full,
    Residual,
}

impl From<DegreeArg> for DegreeMode {
    fn from(d: DegreeArg) -> Self {
        match d {
            DegreeArg::Full => DegreeMode::FullGraph,
            DegreeArg::Residual => DegreeMode::Residual,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GraphOpts {
    /// Edge threshold on normalized filter distance.
    #[arg(long, default_value_t = 0.034)]
    pub gamma: f64,
    /// Weight of the component count.
    #[arg(long, default_value_t = 0.35)]
    pub w1: f64,
    /// Weight of the covering estimate.
    #[arg(long, default_value_t = 0.65)]
    pub w2: f64,
    /// Degree used to order greedy cover centres.
    #[arg(long, value_enum, default_value = "full")]
    pub degree_mode: DegreeArg,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Directory for analyze.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[group(id = "budget", required = true, multiple = false)]
pub struct BudgetArgs {
    /// Number of filters to remove.
    #[arg(long, group = "budget")]
    pub filters: Option<usize>,
    /// Target FLOPs reduction in [0, 1).
    #[arg(long, group = "budget")]
    pub flops_drop: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub graph: GraphOpts,
    #[arg(long, value_enum, default_value = "graph")]
    pub metric: MetricArg,
    /// Which filters to drop inside each layer.
    #[arg(long, value_enum, default_value = "mw")]
    pub criterion: CriterionArg,
    /// Which vertex the allocator removes from the chosen layer's graph.
    #[arg(long, value_enum, default_value = "random")]
    pub removal: RemovalArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Break score ties by layer order instead of at random.
    #[arg(long)]
    pub deterministic_ties: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Model configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Also run a convergence sweep over these filter counts.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    /// Scale the η threshold as `b = F * n` in the sweep (default: keep b).
    #[arg(long, value_name = "F")]
    pub sweep_b_per_filter: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Graph sizes.
    #[arg(long, value_delimiter = ',', default_value = "64,192")]
    pub sizes: Vec<usize>,
    /// Largest covering number to generate graphs for.
    #[arg(long, default_value_t = 4)]
    pub max_cover: usize,
    /// Graphs timed per (size, covering number) bin.
    #[arg(long, default_value_t = 5)]
    pub per_bin: usize,
    /// Skip the exhaustive search on graphs larger than this.
    #[arg(long, default_value_t = 64)]
    pub oracle_max_vertices: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub arch: PathBuf,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
