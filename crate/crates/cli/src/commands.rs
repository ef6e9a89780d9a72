use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgr_core::bounds::{hoeffding_b, solve_b_star, BoundQuery};
use sgr_core::confidence::{score_dataset, KappaKind, LossKind, RecordBatch};
use sgr_core::selective::{risk_coverage_curve, ScoredDataset};
use sgr_core::sgr::{evaluate as evaluate_report, sgr_calibrate, CalibrationReport, SgrRequest};
use sgr_core::simulate::{validate_guarantee, SyntheticDistribution};

use crate::error::{CliError, EXIT_INFEASIBLE, EXIT_OK};
use crate::records::read_records;
use crate::{BoundArgs, CalibrateArgs, CurveArgs, EvaluateArgs, InputArgs, SimulateArgs};

type CmdResult = Result<i32, CliError>;

fn load(args: &InputArgs) -> Result<ScoredDataset, CliError> {
    let path = &args.input;
    let batch = read_records(path, args.format)?;
    let (default_kappa, default_loss) = match batch {
        RecordBatch::Scored(_) => (KappaKind::Precomputed, LossKind::Precomputed),
        RecordBatch::Prediction(_) => (KappaKind::SoftmaxResponse, LossKind::TOP1),
        RecordBatch::McDropout(_) => (KappaKind::McDropout, LossKind::TOP1),
    };
    let kappa = args.kappa.map_or(default_kappa, Into::into);
    let loss = args.loss.unwrap_or(default_loss);
    let data = score_dataset(&batch, kappa, loss, args.scores.into())
        .map_err(|e| CliError::data(path, e))?;
    if data.is_empty() {
        return Err(CliError::data(path, sgr_core::Error::EmptyDataset));
    }
    Ok(data)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("finite values always serialize");
    s.push('\n');
    s
}

pub(crate) fn calibrate(args: &CalibrateArgs) -> CmdResult {
    let data = load(&args.input)?;
    if args.risk.len() > 1 {
        eprintln!(
            "sgr: warning: {} targets calibrated on the same data, each at delta = {}; \
             no correction for multiple targets is applied",
            args.risk.len(),
            args.delta
        );
    }

    let reports = args
        .risk
        .iter()
        .map(|&r| {
            let req = SgrRequest::new(data.clone(), r, args.delta)
                .map_err(|e| CliError::data(&args.input.input, e))?;
            sgr_calibrate(&req).map_err(|e| CliError::data(&args.input.input, e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let json = match reports.as_slice() {
        [single] => to_json(single),
        many => to_json(many),
    };
    write(&args.output, &json)?;

    println!(
        "{:>8}  {:>8}  {:>10}  {:>10}  {:>10}  {:>10}  feasible",
        "r*", "delta", "theta", "risk", "coverage", "bound"
    );
    for r in &reports {
        println!(
            "{:>8}  {:>8}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}  {}",
            r.r_star, r.delta, r.theta, r.train_risk, r.train_coverage, r.bound, r.feasible
        );
    }

    if reports.iter().all(|r| r.feasible) {
        Ok(EXIT_OK)
    } else {
        eprintln!("sgr: no threshold certified below the target risk");
        Ok(EXIT_INFEASIBLE)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReportFile {
    One(CalibrationReport),
    Many(Vec<CalibrationReport>),
}

#[derive(Serialize)]
struct Evaluation {
    theta: f64,
    r_star: f64,
    bound: f64,
    risk: f64,
    coverage: f64,
    accepted: usize,
    errors_accepted: usize,
    total: usize,
    degenerate: bool,
}

pub(crate) fn evaluate(args: &EvaluateArgs) -> CmdResult {
    let text = fs::read_to_string(&args.report).map_err(|e| CliError::data(&args.report, e))?;
    let file: ReportFile = serde_json::from_str(&text).map_err(|e| {
        CliError::line(
            &args.report,
            e.line(),
            format!("not a calibration report: {e}"),
        )
    })?;
    let data = load(&args.input)?;

    let reports = match &file {
        ReportFile::One(r) => std::slice::from_ref(r),
        ReportFile::Many(v) => v.as_slice(),
    };
    let results = reports
        .iter()
        .map(|r| {
            let m = evaluate_report(r, &data).map_err(|e| CliError::data(&args.report, e))?;
            if m.degenerate {
                eprintln!(
                    "sgr: warning: threshold {} rejects every example; risk reported as 0",
                    r.theta
                );
            }
            Ok(Evaluation {
                theta: r.theta,
                r_star: r.r_star,
                bound: r.bound,
                risk: m.risk,
                coverage: m.coverage,
                accepted: m.accepted,
                errors_accepted: m.errors_accepted,
                total: m.total,
                degenerate: m.degenerate,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let json = match (&file, results.as_slice()) {
        (ReportFile::One(_), [single]) => to_json(single),
        _ => to_json(&results),
    };
    match &args.output {
        Some(path) => write(path, &json)?,
        None => print!("{json}"),
    }
    Ok(EXIT_OK)
}

pub(crate) fn bound(args: &BoundArgs) -> CmdResult {
    let q = BoundQuery::new(args.m, args.errors, args.delta)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let r = solve_b_star(&q);
    println!("b_star = {}", r.b_star);
    println!("hoeffding = {}", hoeffding_b(&q));
    println!("residual = {:e}", r.residual);
    println!("iterations = {}", r.iterations);
    Ok(EXIT_OK)
}

pub(crate) fn curve(args: &CurveArgs) -> CmdResult {
    let data = load(&args.input)?;
    let points = risk_coverage_curve(&data).map_err(|e| CliError::data(&args.input.input, e))?;
    let mut csv = String::from("theta,coverage,risk\n");
    for p in points {
        writeln!(csv, "{},{},{}", p.theta, p.coverage, p.risk).unwrap();
    }
    write(&args.output, &csv)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SimulationSummary {
    violation_rate: f64,
    feasible_trials: usize,
    infeasible_trials: usize,
    delta: f64,
    trials: usize,
    seed: u64,
}

pub(crate) fn simulate(args: &SimulateArgs) -> CmdResult {
    let dist = SyntheticDistribution::new(args.dist, args.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let s = validate_guarantee(
        &dist,
        args.m as usize,
        args.risk,
        args.delta,
        args.trials as usize,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let summary = SimulationSummary {
        violation_rate: s.violation_rate,
        feasible_trials: s.feasible_trials,
        infeasible_trials: s.infeasible_trials,
        delta: s.delta,
        trials: s.trials,
        seed: s.seed,
    };
    write(&args.output, &to_json(&summary))?;

    if let Some(path) = &args.trials_csv {
        let mut csv = String::from(
            "trial,seed,feasible,theta,bound,train_risk,train_coverage,true_selective_risk,violated\n",
        );
        for t in &s.log {
            let r = &t.report;
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                t.trial,
                t.seed,
                r.feasible,
                r.theta,
                r.bound,
                r.train_risk,
                r.train_coverage,
                t.true_selective_risk,
                t.violated
            )
            .unwrap();
        }
        write(path, &csv)?;
    }

    println!(
        "violation rate {} ({} violations / {} feasible trials, {} infeasible)",
        s.violation_rate, s.violations, s.feasible_trials, s.infeasible_trials
    );
    Ok(EXIT_OK)
}
