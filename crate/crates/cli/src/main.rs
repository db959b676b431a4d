//! `fflp`: rule search, online adaptation and accelerator benchmarks, with a
//! manifest per run so every result can be replayed.

mod error;
mod manifest;
mod run;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fflp::evolution::TASK_LR_MU;
use fflp::tasks::TaskKind;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "fflp", version, about = "Plastic spiking-network controller toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Search for a plasticity rule on a task.
    TrainRule(TrainArgs),
    /// Run one episode of online adaptation with a fixed rule.
    Adapt(AdaptArgs),
    /// Time synthetic frames on the accelerator model.
    Bench(BenchArgs),
    /// Write a procedurally generated glyph dataset.
    GenDataset(DatasetArgs),
    /// Re-run a command from its manifest and compare outputs.
    Replay(ReplayArgs),
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: fflp::tasks::TaskError| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    /// Network config JSON; defaults to the task's network.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Hidden width when no --net is given.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub generations: u64,
    #[arg(long, default_value_t = 32)]
    pub pop: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "FFLP_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = TASK_LR_MU)]
    pub lr_mu: f64,
    /// Control steps per training episode; defaults to the task's length.
    #[arg(long)]
    pub episode_len: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Functional,
    Cycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Overlapped,
    Serial,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptArgs {
    /// FFLP rule file.
    #[arg(long)]
    pub rule: PathBuf,
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    /// Task variant; defaults to the first held-out variant.
    #[arg(long)]
    pub variant: Option<usize>,
    /// Control steps; defaults to the task's episode length.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "none", value_parser = ["none", "joint-weak", "joint-freeze"])]
    pub perturb: String,
    #[arg(long, value_enum, default_value = "functional")]
    pub backend: BackendKind,
    /// Hardware config JSON for the cycle backend.
    #[arg(long)]
    pub hwconfig: Option<PathBuf>,
    /// Network timesteps per control step.
    #[arg(long, default_value_t = 16)]
    pub window: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Glyph dataset for mini_classify; generated when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Also run the other backend and fail on any difference.
    #[arg(long)]
    pub check: bool,
    /// Print the summary JSON to stdout.
    #[arg(long)]
    pub report: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchArgs {
    /// Network config JSON, or sizes as `IN,HIDDEN,OUT`.
    #[arg(long)]
    pub net: String,
    #[arg(long)]
    pub hwconfig: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub frames: u64,
    #[arg(long, default_value_t = 16)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub input_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "overlapped")]
    pub policy: Policy,
    /// Write the cycle event trace of this many leading frames.
    #[arg(long, default_value_t = 0)]
    pub trace_frames: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetArgs {
    #[arg(long, default_value_t = 600)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where to write the rerun; defaults to `replay/` next to the manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run::execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fflp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
