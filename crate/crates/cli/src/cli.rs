use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmfeedback::distill::Pipeline;
use cmfeedback::metrics::TableLayout;
use cmfeedback::Error;

#[derive(Debug, Parser)]
#[command(name = "cmfb", version, about = "Distilled CSI feedback experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test datasets.
    GenData(GenDataArgs),
    /// Train one encoder/decoder pair.
    Train(TrainArgs),
    /// Run a mimic-proportion or scheduler grid and render its table.
    Ablate(AblateArgs),
    /// Evaluate a checkpointed encoder/decoder on a dataset.
    Eval(EvalArgs),
    /// Render a table from saved run reports.
    Table(TableArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; receives train.csid and test.csid.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Generator seed, overriding `channel.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Plain,
    Kd,
    Cm,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Plain => Pipeline::Plain,
            PipelineArg::Kd => Pipeline::VanillaKd,
            PipelineArg::Cm => Pipeline::CodewordMimic,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub pipeline: PipelineArg,
    /// Directory holding the teacher's encoder.csim and decoder.csim.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Directory with train.csid and test.csid; generated from the config
    /// when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training seed; defaults to the first entry of `seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Proportions,
    Schedulers,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub grid: Grid,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub decoder: PathBuf,
    /// A CSID dataset file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub teacher_encoder: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long, value_parser = parse_layout)]
    pub layout: TableLayout,
    /// Writes table.{txt,csv,json} here in addition to printing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report JSON files, or directories of them.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

fn parse_layout(s: &str) -> Result<TableLayout, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// 2 for bad input, 3 for I/O, 4 for unreadable or incompatible artifacts.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Dimension { .. } | Error::Usage(_) | Error::DegenerateSample => 2,
        Error::Io { .. } => 3,
        Error::Format { .. } | Error::Version { .. } => 4,
    }
}
