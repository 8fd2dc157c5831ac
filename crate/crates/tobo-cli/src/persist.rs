//! On-disk artifacts of one run directory. Record files are append-only CSV
//! so partially completed runs survive a crash; every float is written with
//! Rust's shortest round-trip formatting so identical runs are byte
//! identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use tobo_core::ptogp::SelectionVector;
use tobo_core::tobo::RunRecord;
use tobo_core::tocbbo::CBBORunRecord;
use tobo_core::togp::TOGPHyper;

pub fn records_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("records_seed{seed}.csv"))
}

pub fn result_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("result_seed{seed}.json"))
}

pub fn surrogate_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("surrogate_seed{seed}.json"))
}

pub fn failure_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("failure_seed{seed}.marker"))
}

/// Streams one round per CSV row:
/// `seed,round,x0..x{d-1},lambda,scalarized,incumbent,regret`.
pub struct RecordWriter {
    out: BufWriter<File>,
    seed: u64,
    tensor_total: usize,
}

impl RecordWriter {
    pub fn create(dir: &Path, seed: u64, input_dim: usize, tensor_total: usize) -> anyhow::Result<Self> {
        let path = records_path(dir, seed);
        let file = File::create(&path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        let mut out = BufWriter::new(file);
        let mut header = String::from("seed,round");
        for j in 0..input_dim {
            header.push_str(&format!(",x{j}"));
        }
        header.push_str(",lambda,scalarized,incumbent,regret\n");
        out.write_all(header.as_bytes())?;
        out.flush()?;
        Ok(Self {
            out,
            seed,
            tensor_total,
        })
    }

    fn write_row(
        &mut self,
        round: usize,
        input: &[f64],
        lambda: &str,
        scalarized: f64,
        incumbent: f64,
        regret: Option<f64>,
    ) -> anyhow::Result<()> {
        let mut row = format!("{},{}", self.seed, round);
        for v in input {
            row.push_str(&format!(",{v}"));
        }
        row.push_str(&format!(",{lambda},{scalarized},{incumbent},"));
        if let Some(r) = regret {
            row.push_str(&format!("{r}"));
        }
        row.push('\n');
        self.out.write_all(row.as_bytes())?;
        self.out.flush()?;
        Ok(())
    }

    pub fn write_bo(&mut self, record: &RunRecord) -> anyhow::Result<()> {
        let lambda = "1".repeat(self.tensor_total);
        self.write_row(
            record.round,
            &record.input,
            &lambda,
            record.scalarized,
            record.incumbent,
            record.regret,
        )
    }

    pub fn write_cbbo(&mut self, record: &CBBORunRecord) -> anyhow::Result<()> {
        self.write_row(
            record.round,
            &record.input,
            &record.selection.bitstring(),
            record.scalarized,
            record.incumbent,
            record.regret,
        )
    }
}

/// One parsed record row (as read back by `summarize`).
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub seed: u64,
    pub round: usize,
    pub input: Vec<f64>,
    pub lambda: String,
    pub scalarized: f64,
    pub incumbent: f64,
    pub regret: Option<f64>,
}

/// Reads a records CSV, returning the header and rows.
pub fn read_records(path: &Path) -> anyhow::Result<(String, Vec<RecordRow>)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .with_context(|| format!("{} is empty", path.display()))?
        .to_string();
    let columns: Vec<&str> = header.split(',').collect();
    let d = columns
        .iter()
        .filter(|c| c.starts_with('x') && c[1..].chars().all(|ch| ch.is_ascii_digit()))
        .count();
    let expected = 2 + d + 4;
    if columns.len() != expected {
        anyhow::bail!("{}: malformed header {header:?}", path.display());
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            anyhow::bail!(
                "{}:{}: expected {expected} fields, found {}",
                path.display(),
                lineno + 2,
                fields.len()
            );
        }
        let parse = |s: &str| -> anyhow::Result<f64> {
            s.parse::<f64>()
                .with_context(|| format!("{}:{}: bad float {s:?}", path.display(), lineno + 2))
        };
        rows.push(RecordRow {
            seed: fields[0].parse()?,
            round: fields[1].parse()?,
            input: fields[2..2 + d]
                .iter()
                .map(|s| parse(s))
                .collect::<anyhow::Result<_>>()?,
            lambda: fields[2 + d].to_string(),
            scalarized: parse(fields[2 + d + 1])?,
            incumbent: parse(fields[2 + d + 2])?,
            regret: if fields[2 + d + 3].is_empty() {
                None
            } else {
                Some(parse(fields[2 + d + 3])?)
            },
        });
    }
    Ok((header, rows))
}

/// Per-seed result document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub schema: String,
    pub seed: u64,
    pub task: String,
    pub best_round: Option<usize>,
    pub best_input: Option<Vec<f64>>,
    pub best_lambda: Option<String>,
    pub truth: Option<TruthDoc>,
    pub metrics: MetricsDoc,
}

pub const RESULT_SCHEMA: &str = "tobo-result/1";
pub const SURROGATE_SCHEMA: &str = "tobo-surrogate/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthDoc {
    pub x_star: Vec<f64>,
    pub lambda_star: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub nll: Option<f64>,
    pub mae: Option<f64>,
    pub cov_norm: Option<f64>,
    pub mse_x: Option<f64>,
    pub mae_y: Option<f64>,
    pub acc: Option<f64>,
    /// Regret of the final recommendation against the known optimum.
    pub final_regret: Option<f64>,
    pub excluded_entries: usize,
}

/// Surrogate checkpoint: hyperparameters plus a reference to the data that
/// produced them (see the schema document in `docs/SCHEMAS.md`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateCheckpoint {
    pub schema: String,
    pub seed: u64,
    pub hyper: TOGPHyper,
    pub dataset: DatasetRef,
    /// Per-round selections for partially observed runs.
    pub selections: Option<Vec<SelectionVector>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRef {
    pub kind: String,
    pub path: String,
    pub rows: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_failure_marker(dir: &Path, seed: u64, error: &str) -> anyhow::Result<()> {
    fs::write(failure_path(dir, seed), format!("seed {seed} failed: {error}\n"))?;
    Ok(())
}
