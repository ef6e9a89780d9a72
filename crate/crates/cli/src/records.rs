//! Line-oriented record ingestion.
//!
//! Three JSON-lines layouts are accepted, one object per line:
//!
//! - scored: `{"kappa": 0.93, "loss": 0, "id": "a"}`
//! - prediction: `{"scores": [0.1, 0.9], "label": 1, "id": "a"}`
//! - MC-dropout: `{"passes": [[0.1, 0.9], [0.2, 0.8]], "label": 1, "id": "a"}`
//!
//! `id` is optional everywhere. Blank lines and lines starting with `#` are
//! skipped. Scored records may also come as CSV with the exact header
//! `kappa,loss`. A file must use a single layout.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use sgr_core::confidence::{McDropoutRecord, PredictionRecord, RecordBatch};
use sgr_core::selective::ScoredExample;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RecordFormat {
    /// CSV for `.csv` files, JSON lines otherwise.
    Auto,
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Scored,
    Prediction,
    McDropout,
}

impl Layout {
    fn detect(obj: &Value) -> Option<Self> {
        let obj = obj.as_object()?;
        if obj.contains_key("kappa") {
            Some(Layout::Scored)
        } else if obj.contains_key("scores") {
            Some(Layout::Prediction)
        } else if obj.contains_key("passes") {
            Some(Layout::McDropout)
        } else {
            None
        }
    }

    fn name(self) -> &'static str {
        match self {
            Layout::Scored => "scored",
            Layout::Prediction => "prediction",
            Layout::McDropout => "mc-dropout",
        }
    }
}

#[derive(Deserialize)]
struct ScoredLine {
    kappa: f64,
    loss: u8,
    #[serde(default)]
    id: Option<String>,
}

impl ScoredLine {
    fn into_example(self) -> Result<ScoredExample, sgr_core::Error> {
        let ex = ScoredExample::new(self.kappa, self.loss)?;
        Ok(match self.id {
            Some(id) => ex.with_id(id),
            None => ex,
        })
    }
}

pub fn read_records(path: &Path, format: RecordFormat) -> Result<RecordBatch, CliError> {
    let csv = match format {
        RecordFormat::Csv => true,
        RecordFormat::Jsonl => false,
        RecordFormat::Auto => path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv")),
    };
    if csv {
        read_csv(path)
    } else {
        read_jsonl(path)
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::data(path, e))
}

fn read_jsonl(path: &Path) -> Result<RecordBatch, CliError> {
    let reader = BufReader::new(open(path)?);
    let mut layout = None;
    let mut batch: Option<RecordBatch> = None;

    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| CliError::line(path, n, e))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::line(path, n, e))?;
        let this = Layout::detect(&value).ok_or_else(|| {
            CliError::line(
                path,
                n,
                "expected an object with `kappa`, `scores` or `passes`",
            )
        })?;
        match layout {
            None => layout = Some(this),
            Some(first) if first != this => {
                return Err(CliError::line(
                    path,
                    n,
                    format!(
                        "{} record in a file of {} records",
                        this.name(),
                        first.name()
                    ),
                ))
            }
            _ => {}
        }
        let batch = batch.get_or_insert_with(|| match this {
            Layout::Scored => RecordBatch::Scored(Vec::new()),
            Layout::Prediction => RecordBatch::Prediction(Vec::new()),
            Layout::McDropout => RecordBatch::McDropout(Vec::new()),
        });
        let bad = |e: &dyn std::fmt::Display, id: Option<&str>| {
            let who = id.map(|id| format!("record {id}: ")).unwrap_or_default();
            CliError::line(path, n, format!("{who}{e}"))
        };
        match batch {
            RecordBatch::Scored(v) => {
                let rec: ScoredLine = serde_json::from_value(value).map_err(|e| bad(&e, None))?;
                let id = rec.id.clone();
                v.push(rec.into_example().map_err(|e| bad(&e, id.as_deref()))?);
            }
            RecordBatch::Prediction(v) => {
                let rec: PredictionRecord =
                    serde_json::from_value(value).map_err(|e| bad(&e, None))?;
                rec.validate().map_err(|e| bad(&e, rec.id.as_deref()))?;
                v.push(rec);
            }
            RecordBatch::McDropout(v) => {
                let rec: McDropoutRecord =
                    serde_json::from_value(value).map_err(|e| bad(&e, None))?;
                rec.validate().map_err(|e| bad(&e, rec.id.as_deref()))?;
                v.push(rec);
            }
        }
    }
    Ok(batch.unwrap_or(RecordBatch::Scored(Vec::new())))
}

fn read_csv(path: &Path) -> Result<RecordBatch, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader
        .headers()
        .map_err(|e| CliError::line(path, 1, e))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["kappa", "loss"] {
        return Err(CliError::line(
            path,
            1,
            format!(
                "expected header `kappa,loss`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            CliError::line(path, line, e)
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let kappa: f64 = row[0]
            .parse()
            .map_err(|e| CliError::line(path, line, format!("kappa `{}`: {e}", &row[0])))?;
        let loss: u8 = row[1]
            .parse()
            .map_err(|e| CliError::line(path, line, format!("loss `{}`: {e}", &row[1])))?;
        out.push(ScoredExample::new(kappa, loss).map_err(|e| CliError::line(path, line, e))?);
    }
    Ok(RecordBatch::Scored(out))
}
