//! Command-line flags. Every metric's argument struct is also its config
//! echo: reports store it verbatim so a run can be replayed from the report.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use remia_core::quality::Task;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "audit", version, about = "Privacy and quality audits for synthetic tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relative membership-inference score of a generator.
    Remia(RemiaArgs),
    /// Distance-to-closest-record score.
    Dcr(DcrArgs),
    /// Density-ratio membership attack.
    Domias(DomiasArgs),
    /// Detection AUROC and optional downstream efficacy.
    Quality(QualityArgs),
    /// One metric over a grid of risk-model parameters, as CSV.
    Sweep(SweepArgs),
    /// Rank correlations between metrics across saved reports.
    Compare(CompareArgs),
    /// Re-run the command recorded in a report's config echo.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CommonArgs {
    /// Data CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema: {"columns": [{"name", "kind", "categories"?}]}.
    #[arg(long)]
    pub schema: PathBuf,
    /// builtin:<name> | risk:leaky:p=<v> | risk:anonymizer:alpha=<v> | exec:<template>
    #[arg(long)]
    pub generator: String,
    #[arg(long, default_value_t = 4)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 3600)]
    pub timeout_secs: u64,
    /// Rows the leaky model draws its non-leaked output from. Without it a
    /// seeded half of --data is set aside for that purpose.
    #[arg(long)]
    pub leak_pool: Option<PathBuf>,
    /// Overrides the discriminator's epoch budget.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RemiaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1.0)]
    pub target_fraction: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DcrArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Holdout CSV, same size as --data. Without it --data is split in half.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DomiasArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Reference CSV; carved from --data when absent.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Non-member CSV; carved from --data when absent.
    #[arg(long)]
    pub control: Option<PathBuf>,
    /// Carved reference size as a multiple of the training size.
    #[arg(long, default_value_t = 5.0)]
    pub reference_ratio: f64,
    /// Carved control size as a multiple of the training size.
    #[arg(long, default_value_t = 1.0)]
    pub control_ratio: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct QualityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Real test CSV; without it 20% of --data is held out.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long, requires = "task")]
    pub target_column: Option<String>,
    #[arg(long, requires = "target_column")]
    pub task: Option<Task>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMetric {
    Remia,
    Dcr,
    Domias,
}

impl SweepMetric {
    pub fn name(self) -> &'static str {
        match self {
            SweepMetric::Remia => "remia",
            SweepMetric::Dcr => "dcr",
            SweepMetric::Domias => "domias",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Generator family: risk:leaky or risk:anonymizer.
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub metric: SweepMetric,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub target_fraction: f64,
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub control: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Report JSON files from any metric commands.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Clip per-repetition scores, then average (default: average, then clip).
    #[arg(long)]
    pub clip_before_average: bool,
    #[arg(long, default_value_t = 0.5)]
    pub floor: f64,
    /// Output JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
