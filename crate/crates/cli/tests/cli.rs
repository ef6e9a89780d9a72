use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn sgr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgr"))
        .args(args)
        .output()
        .expect("run sgr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    let text = fs::read_to_string(p).unwrap();
    assert!(text.ends_with('\n'));
    serde_json::from_str(&text).unwrap()
}

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    k.sort_unstable();
    k
}

fn check_report_schema(r: &Value) {
    assert_eq!(
        keys(r),
        [
            "bound",
            "delta",
            "feasible",
            "k_iterations",
            "r_star",
            "theta",
            "trace",
            "train_coverage",
            "train_risk"
        ]
    );
    for f in [
        "theta",
        "bound",
        "train_risk",
        "train_coverage",
        "delta",
        "r_star",
    ] {
        assert!(r[f].is_f64(), "{f} not a float: {}", r[f]);
    }
    assert!(r["feasible"].is_boolean());
    assert!(r["k_iterations"].is_u64());
    let trace = r["trace"].as_array().unwrap();
    assert_eq!(trace.len() as u64, r["k_iterations"].as_u64().unwrap());
    for it in trace {
        assert_eq!(
            keys(it),
            [
                "accepted",
                "bound",
                "errors",
                "feasible",
                "iteration",
                "theta",
                "train_coverage",
                "train_risk",
                "z"
            ]
        );
    }
}

#[test]
fn bound_zero_errors_closed_form() {
    let out = sgr(&["bound", "--m", "100", "--errors", "0", "--delta", "0.001"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let b: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("b_star = "))
        .unwrap()
        .parse()
        .unwrap();
    let want = 1.0 - 0.001_f64.powf(1.0 / 100.0);
    assert!((b - want).abs() < 1e-11, "{b} vs {want}");
}

#[test]
fn bound_rejects_more_errors_than_samples() {
    assert_eq!(code(&sgr(&["bound", "--m", "3", "--errors", "4"])), 2);
    assert_eq!(code(&sgr(&["bound", "--m", "0", "--errors", "0"])), 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.json");
    let input = fixture("four.jsonl");
    // r* has no default
    assert_eq!(
        code(&sgr(&[
            "calibrate",
            "--input",
            s(&input),
            "--output",
            s(&out)
        ])),
        2
    );
    assert_eq!(
        code(&sgr(&[
            "calibrate",
            "--input",
            s(&input),
            "--risk",
            "1.5",
            "--output",
            s(&out)
        ])),
        2
    );
    assert_eq!(
        code(&sgr(&[
            "calibrate",
            "--input",
            s(&input),
            "--risk",
            "0.1",
            "--loss",
            "top0",
            "--output",
            s(&out)
        ])),
        2
    );
    assert_eq!(code(&sgr(&["frobnicate"])), 2);
    assert!(!out.exists(), "nothing may be computed on a usage error");
}

#[test]
fn calibrate_empty_input() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "# nothing here\n\n").unwrap();
    let out = sgr(&[
        "calibrate",
        "--input",
        s(&input),
        "--risk",
        "0.1",
        "--output",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("empty dataset"), "{}", stderr(&out));
}

#[test]
fn calibrate_four_example_fixture() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.json");
    let out = sgr(&[
        "calibrate",
        "--input",
        s(&fixture("four.jsonl")),
        "--risk",
        "0.05",
        "--delta",
        "0.001",
        "--output",
        s(&report),
    ]);
    // two probes (z = 3 then z = 4), neither certifies 5%
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let r = read_json(&report);
    check_report_schema(&r);
    assert_eq!(r["feasible"], false);
    assert_eq!(r["k_iterations"], 2);
    assert_eq!(r["theta"], 0.9);
    let zs: Vec<u64> = r["trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|it| it["z"].as_u64().unwrap())
        .collect();
    assert_eq!(zs, [3, 4]);
    // one accepted example, no error, per-probe delta 0.0005
    assert!((r["bound"].as_f64().unwrap() - 0.9995).abs() < 1e-11);
    assert_eq!(r["trace"][0]["accepted"], 2);
    assert_eq!(r["trace"][0]["errors"], 1);
}

#[test]
fn calibrate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        sgr(&[
            "calibrate",
            "--input",
            s(&fixture("logits.jsonl")),
            "--scores",
            "logits",
            "--risk",
            "0.3,0.5",
            "--output",
            s(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn feasible_calibration_exits_0() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("clean.csv");
    let mut body = String::from("kappa,loss\n");
    for i in 0..1024 {
        body.push_str(&format!("{},0\n", i as f64 / 1024.0));
    }
    fs::write(&input, body).unwrap();
    let report = dir.path().join("r.json");
    let out = sgr(&[
        "calibrate",
        "--input",
        s(&input),
        "--risk",
        "0.02",
        "--output",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["feasible"], true);
    assert_eq!(r["train_coverage"], 1023.0 / 1024.0);
}

#[test]
fn several_targets_give_an_array_and_a_warning() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("r.json");
    let out = sgr(&[
        "calibrate",
        "--input",
        s(&fixture("four.jsonl")),
        "--risk",
        "0.05",
        "--risk",
        "0.5,0.9",
        "--output",
        s(&report),
    ]);
    assert!(stderr(&out).contains("no correction"));
    let r = read_json(&report);
    let all = r.as_array().unwrap();
    assert_eq!(all.len(), 3);
    all.iter().for_each(check_report_schema);
    let targets: Vec<f64> = all.iter().map(|r| r["r_star"].as_f64().unwrap()).collect();
    assert_eq!(targets, [0.05, 0.5, 0.9]);
}

#[test]
fn evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("r.json");
    let metrics = dir.path().join("m.json");
    let input = fixture("four.jsonl");
    sgr(&[
        "calibrate",
        "--input",
        s(&input),
        "--risk",
        "0.05",
        "--output",
        s(&report),
    ]);
    let out = sgr(&[
        "evaluate",
        "--input",
        s(&fixture("two.csv")),
        "--report",
        s(&report),
        "--output",
        s(&metrics),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = read_json(&metrics);
    // theta = 0.9 accepts the single 0.9 example of two.csv
    assert_eq!(m["theta"], 0.9);
    assert_eq!(m["accepted"], 1);
    assert_eq!(m["coverage"], 0.5);
    assert_eq!(m["risk"], 0.0);
    assert_eq!(m["degenerate"], false);

    // without --output the metrics go to stdout
    let out = sgr(&["evaluate", "--input", s(&input), "--report", s(&report)]);
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["total"], 4);
}

#[test]
fn evaluate_rejects_garbage_report() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("r.json");
    fs::write(&report, "{\"theta\": 0.5}\n").unwrap();
    let out = sgr(&[
        "evaluate",
        "--input",
        s(&fixture("four.jsonl")),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("r.json"));
}

#[test]
fn curve_of_four_example_fixture() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("curve.csv");
    let out = sgr(&[
        "curve",
        "--input",
        s(&fixture("four.jsonl")),
        "--output",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let third = 1.0_f64 / 3.0;
    assert_eq!(
        text,
        format!("theta,coverage,risk\n0.9,0.25,0\n0.6,0.5,0.5\n0.4,0.75,{third}\n0.1,1,0.5\n")
    );
}

#[test]
fn csv_input() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("curve.csv");
    let out = sgr(&[
        "curve",
        "--input",
        s(&fixture("two.csv")),
        "--output",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "theta,coverage,risk\n0.9,0.5,0\n0.2,1,0.5\n"
    );

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "kappa,loss,id\n0.9,0,a\n").unwrap();
    let out = sgr(&["curve", "--input", s(&bad), "--output", s(&csv)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("kappa,loss"));
}

#[test]
fn prediction_records_with_logits() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("curve.csv");
    let out = sgr(&[
        "curve",
        "--input",
        s(&fixture("logits.jsonl")),
        "--scores",
        "logits",
        "--output",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    // p1 is the only misclassified record and has the flattest softmax
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][2], 0.0);
    assert!((rows[2][2] - 1.0 / 3.0).abs() < 1e-15);
    let p2 = 3.0_f64.exp() / ((-1.0_f64).exp() + 3.0_f64.exp() + 1.0);
    assert!((rows[0][0] - p2).abs() < 1e-15);

    // the same scores read as probabilities do not sum to one
    let out = sgr(&[
        "curve",
        "--input",
        s(&fixture("logits.jsonl")),
        "--output",
        s(&csv),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("p0"), "{}", stderr(&out));
}

#[test]
fn mc_dropout_records() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("curve.csv");
    let out = sgr(&[
        "curve",
        "--input",
        s(&fixture("mc.jsonl")),
        "--output",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    // kappa = -(sample variance of the mean-argmax column)
    assert!((rows[0][0] + 0.01).abs() < 1e-12);
    assert_eq!(&rows[0][1..], [0.5, 0.0]);
    assert!((rows[1][0] + 0.16).abs() < 1e-12);
    assert_eq!(&rows[1][1..], [1.0, 0.5]);

    let out = sgr(&[
        "curve",
        "--input",
        s(&fixture("mc.jsonl")),
        "--kappa",
        "precomputed",
        "--output",
        s(&csv),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_records_report_their_location() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.jsonl");
    let csv = dir.path().join("c.csv");

    fs::write(
        &input,
        "{\"scores\": [0.2, 0.8], \"label\": 2, \"id\": \"img-42\"}\n",
    )
    .unwrap();
    let out = sgr(&["curve", "--input", s(&input), "--output", s(&csv)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("img-42"), "{}", stderr(&out));

    fs::write(&input, "{\"passes\": [[0.2, 0.8]], \"label\": 0}\n").unwrap();
    let out = sgr(&["curve", "--input", s(&input), "--output", s(&csv)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("T >= 2"), "{}", stderr(&out));

    fs::write(
        &input,
        "{\"kappa\": 0.2, \"loss\": 0}\n\n{\"kappa\": 0.3 \"loss\": 1}\n",
    )
    .unwrap();
    let out = sgr(&["curve", "--input", s(&input), "--output", s(&csv)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("bad.jsonl:3:"), "{}", stderr(&out));

    let out = sgr(&[
        "curve",
        "--input",
        s(&dir.path().join("missing.jsonl")),
        "--output",
        s(&csv),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn simulate_summary_and_trial_log() {
    let dir = TempDir::new().unwrap();
    let summary = dir.path().join("s.json");
    let log = dir.path().join("t.csv");
    let args = [
        "simulate",
        "--dist",
        "linear:0.5",
        "--m",
        "500",
        "--risk",
        "0.2",
        "--delta",
        "0.05",
        "--trials",
        "20",
        "--seed",
        "7",
        "--output",
        s(&summary),
        "--trials-csv",
        s(&log),
    ];
    let out = sgr(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = read_json(&summary);
    assert_eq!(
        keys(&v),
        [
            "delta",
            "feasible_trials",
            "infeasible_trials",
            "seed",
            "trials",
            "violation_rate"
        ]
    );
    assert_eq!(v["trials"], 20);
    assert_eq!(v["seed"], 7);
    assert_eq!(
        v["feasible_trials"].as_u64().unwrap() + v["infeasible_trials"].as_u64().unwrap(),
        20
    );
    let text = fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("trial,seed,feasible,"));
    // trial i is seeded with seed ^ i
    assert!(text.lines().nth(4).unwrap().starts_with("3,4,"));

    let first = fs::read(&summary).unwrap();
    sgr(&args);
    assert_eq!(fs::read(&summary).unwrap(), first);

    let bad = sgr(&[
        "simulate",
        "--dist",
        "linear:2",
        "--m",
        "5",
        "--risk",
        "0.1",
        "--trials",
        "1",
        "--output",
        s(&summary),
    ]);
    assert_eq!(code(&bad), 2);
}
