use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use ttadmm::data::{load_idx, Split};
use ttadmm::experiment::{
    baseline_standard_tt, rank_search_layer, run_pipeline, BaselineMode, ExperimentConfig, TEST_IMAGES, TEST_LABELS,
};
use ttadmm::nn::Network;
use ttadmm::train::evaluate;
use ttadmm::Error;

#[derive(Parser)]
#[command(
    name = "ttadmm",
    version,
    about = "Tensor-train compression of neural networks with ADMM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, run ADMM, decompose and fine-tune; prints the report.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Largest uniform TT rank per tensorized layer meeting a compression ratio.
    RankSearch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        target_ratio: f64,
    },
    /// Test accuracy of a saved network on an IDX image/label pair.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory with t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a TT model without ADMM for comparison.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    RandomTt,
    DirectDecompose,
}

impl From<Mode> for BaselineMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::RandomTt => BaselineMode::RandomTt,
            Mode::DirectDecompose => BaselineMode::DirectDecompose,
        }
    }
}

/// Process exit status for each error class.
fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_)
        | Error::InvalidRanks(_)
        | Error::Tensorization(_)
        | Error::InvalidLayer(_)
        | Error::Json(_) => 3,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::EmptyDataset
        | Error::LabelOutOfRange { .. }
        | Error::DimensionMismatch { .. } => 4,
        Error::Checkpoint(_) => 5,
        Error::NonFinite(_) | Error::SvdNoConvergence { .. } => 6,
        Error::RankTargetUnreachable { .. } => 7,
        Error::Io(_) | Error::Csv(_) => 8,
        _ => 1,
    }
}

fn eval(checkpoint: &Path, data: &Path) -> ttadmm::Result<serde_json::Value> {
    let net = Network::load(checkpoint)?;
    let test = load_idx(&data.join(TEST_IMAGES), &data.join(TEST_LABELS), Split::Test)?;
    if net.input_dim() != test.sample_dim() {
        return Err(Error::DimensionMismatch {
            op: "eval",
            left: vec![net.input_dim()],
            right: test.sample_shape().to_vec(),
        });
    }
    Ok(json!({
        "checkpoint": checkpoint,
        "samples": test.len(),
        "accuracy": evaluate(&net, &test)?,
    }))
}

fn rank_search(config: &Path, target: f64) -> ttadmm::Result<serde_json::Value> {
    let config = ExperimentConfig::load(config)?;
    let mut layers = Vec::new();
    for (i, spec) in config.model.iter().enumerate() {
        if let Some(t) = spec.tt_target() {
            let choice = rank_search_layer(&t.map, target)?;
            layers.push(json!({
                "layer": i,
                "rank": choice.rank,
                "ranks": choice.ranks,
                "dense_params": choice.dense_params,
                "tt_params": choice.tt_params,
                "compression_ratio": choice.ratio,
            }));
        }
    }
    Ok(json!({ "target_ratio": target, "layers": layers }))
}

fn execute(cli: Cli) -> ttadmm::Result<serde_json::Value> {
    match cli.command {
        Command::Run { config } => {
            let report = run_pipeline(&ExperimentConfig::load(&config)?)?;
            Ok(serde_json::to_value(report)?)
        }
        Command::RankSearch { config, target_ratio } => rank_search(&config, target_ratio),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::Baseline { config, mode } => {
            let report = baseline_standard_tt(&ExperimentConfig::load(&config)?, mode.into())?;
            Ok(serde_json::to_value(report)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(value) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&value).expect("json value serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
