//! Command-line surface: argument parsing, settings resolution and dispatch.

mod commands;
mod config;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{ConfigFile, Settings};
pub use report::{sha256_file, InputDigest, RunManifest, Table};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "facetspace",
    version,
    about = "Train, extract and evaluate multi-facet concept embeddings"
)]
pub struct Cli {
    /// Master seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs (created if missing).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a normalized pair corpus.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Train encoders and write a checkpoint.
    Train(TrainCmd),
    /// Cluster facet vectors into k facets.
    Extract(ExtractCmd),
    /// Build or run outlier-detection benchmarks.
    #[command(subcommand)]
    Outlier(OutlierCmd),
    /// Affinity-propagation clustering and augmentation files.
    Cluster(ClusterCmd),
    /// Property prediction F1 under concept, property or C+P splits.
    Eval(EvalCmd),
    /// Nearest concepts, overall or within one facet.
    Neighbours(NeighboursCmd),
}

#[derive(Debug, Subcommand)]
pub enum IngestCmd {
    /// Parse a ConceptNet 5 assertions dump.
    Conceptnet {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        min_tail_count: Option<usize>,
        /// `default` or a comma-separated relation list.
        #[arg(long)]
        relations: Option<String>,
    },
    /// Merge existing concept-property and property-facet files.
    Pairs {
        #[arg(long, required = true)]
        cp: Vec<PathBuf>,
        #[arg(long)]
        pf: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Concept-property pair file(s), TSV or JSONL.
    #[arg(long, required = true)]
    pub cp: Vec<PathBuf>,
    /// Property-facet pair file(s).
    #[arg(long)]
    pub pf: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Faceted,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, visible_alias = "k-dim")]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n_neg_cp: Option<usize>,
    #[arg(long)]
    pub n_neg_pf: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Labeled `concept<TAB>property<TAB>{0,1}` pairs for early stopping.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FacetArgs {
    /// Decomposition written by `extract`; computed on the fly when absent.
    #[arg(long)]
    pub facets: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Unit-normalize facet vectors before k-means.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct ExtractCmd {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub normalize: bool,
    /// File with one property per line; all properties when absent.
    #[arg(long)]
    pub properties: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Single,
    Multi,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum OutlierCmd {
    /// Generate benchmark instances from a property database.
    Build {
        /// `concept<TAB>property` facts.
        #[arg(long, required = true)]
        facts: Vec<PathBuf>,
        /// `property<TAB>group<TAB>concept` taxonomic groups.
        #[arg(long)]
        groups: PathBuf,
        /// One property per line; every grouped property when absent.
        #[arg(long)]
        properties: Option<PathBuf>,
        #[arg(long)]
        n_instances: Option<usize>,
    },
    /// Score a benchmark with single and/or facet-specific spaces.
    Run {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        facet: FacetArgs,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusterModeArg {
    Clu,
    Mclu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreferenceKindArg {
    /// Quantile of the off-diagonal similarities.
    Quantile,
    /// Fixed similarity value.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Rules,
    Labels,
}

#[derive(Debug, Args)]
pub struct ClusterCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub facet: FacetArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ClusterModeArg>,
    #[arg(long, allow_hyphen_values = true)]
    pub preference: Option<f64>,
    #[arg(long, value_enum)]
    pub preference_kind: Option<PreferenceKindArg>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub skip_singletons: bool,
    /// File with one concept per line; all concepts when absent.
    #[arg(long)]
    pub concepts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Concept,
    Property,
    Cpp,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Labeled `concept<TAB>property<TAB>{0,1}` judgements.
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Fixed test concepts (one per line) for the concept split.
    #[arg(long)]
    pub test_concepts: Option<PathBuf>,
    /// Pre-trained parameters to fine-tune; fresh ones when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct NeighboursCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub concept: String,
    /// Facet index; plain concept embeddings when absent.
    #[arg(long)]
    pub facet: Option<usize>,
    #[command(flatten)]
    pub facets: FacetArgs,
    #[arg(long)]
    pub top_n: Option<usize>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    commands::run(cli)
}
