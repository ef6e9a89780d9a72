//! `sgr` command-line tool: calibrate a selective classifier, evaluate the
//! calibrated threshold, compute single bounds, emit risk-coverage curves and
//! run guarantee simulations.

mod commands;
mod error;
pub mod records;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgr_core::confidence::{KappaKind, LossKind, ScoreScale};
use sgr_core::simulate::ErrorModel;

pub use error::{CliError, EXIT_DATA, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_USAGE};
use records::RecordFormat;

#[derive(Debug, Parser)]
#[command(
    name = "sgr",
    version,
    about = "Selective classification with guaranteed risk"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the widest-coverage threshold whose risk bound is below the target.
    Calibrate(CalibrateArgs),
    /// Apply a calibrated threshold to a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Exact binomial upper bound for k errors out of m.
    Bound(BoundArgs),
    /// Empirical risk-coverage curve as CSV.
    Curve(CurveArgs),
    /// Repeat calibration on synthetic data and count guarantee violations.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Records as JSON lines, or CSV with header `kappa,loss`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = RecordFormat::Auto)]
    format: RecordFormat,
    /// Confidence function. Defaults to the natural one for the record layout.
    #[arg(long, value_enum)]
    kappa: Option<KappaArg>,
    /// top1, top5, topk:K or precomputed. Defaults to precomputed for scored
    /// records and top1 otherwise.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// Whether prediction scores are raw logits or already probabilities.
    #[arg(long, value_enum, default_value_t = ScoresArg::Probabilities)]
    scores: ScoresArg,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Target risk. Repeat or comma-separate for several targets.
    #[arg(long, required = true, value_delimiter = ',', value_parser = parse_open_unit)]
    risk: Vec<f64>,
    #[arg(long, default_value_t = 0.001, value_parser = parse_open_unit)]
    delta: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Report written by `calibrate`.
    #[arg(long)]
    report: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: u64,
    #[arg(long)]
    errors: u64,
    #[arg(long, default_value_t = 0.001, value_parser = parse_open_unit)]
    delta: f64,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// linear:A, constant:C or logistic:AMP:STEEP:MID
    #[arg(long, value_parser = parse_dist)]
    dist: ErrorModel,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: u64,
    #[arg(long, value_parser = parse_open_unit)]
    risk: f64,
    #[arg(long, default_value_t = 0.001, value_parser = parse_open_unit)]
    delta: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Optional per-trial CSV log.
    #[arg(long)]
    trials_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KappaArg {
    /// Softmax response (maximum class probability).
    Sr,
    McDropout,
    Precomputed,
}

impl From<KappaArg> for KappaKind {
    fn from(k: KappaArg) -> Self {
        match k {
            KappaArg::Sr => KappaKind::SoftmaxResponse,
            KappaArg::McDropout => KappaKind::McDropout,
            KappaArg::Precomputed => KappaKind::Precomputed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScoresArg {
    Logits,
    Probabilities,
}

impl From<ScoresArg> for ScoreScale {
    fn from(s: ScoresArg) -> Self {
        match s {
            ScoresArg::Logits => ScoreScale::Logits,
            ScoresArg::Probabilities => ScoreScale::Probabilities,
        }
    }
}

fn parse_open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s {
        "top1" => Ok(LossKind::TOP1),
        "top5" => Ok(LossKind::TOP5),
        "precomputed" => Ok(LossKind::Precomputed),
        _ => {
            let k = s
                .strip_prefix("topk:")
                .ok_or_else(|| format!("expected top1, top5, topk:K or precomputed, got `{s}`"))?;
            match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(LossKind::TopK(k)),
                _ => Err(format!("topk needs a positive integer, got `{k}`")),
            }
        }
    }
}

fn parse_dist(s: &str) -> Result<ErrorModel, String> {
    let mut parts = s.split(':');
    let kind = parts.next().unwrap_or_default();
    let params = parts
        .map(|p| p.parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let model = match (kind, params.as_slice()) {
        ("linear", &[slope]) => ErrorModel::Linear { slope },
        ("constant", &[rate]) => ErrorModel::Constant { rate },
        ("logistic", &[amplitude, steepness, midpoint]) => ErrorModel::Logistic {
            amplitude,
            steepness,
            midpoint,
        },
        _ => {
            return Err(format!(
                "expected linear:A, constant:C or logistic:AMP:STEEP:MID, got `{s}`"
            ))
        }
    };
    // reject out-of-range parameters at parse time
    sgr_core::simulate::SyntheticDistribution::new(model, 0).map_err(|e| e.to_string())?;
    Ok(model)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Bound(a) => commands::bound(&a),
        Command::Curve(a) => commands::curve(&a),
        Command::Simulate(a) => commands::simulate(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("sgr: {e}");
            e.exit_code()
        }
    }
}
