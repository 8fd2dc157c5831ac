//! Aggregation across seeds: the summary document (median / IQR of the
//! optimization metrics) and the regret-curve file (per-round median log10
//! instantaneous regret), both recomputable from the persisted artifacts by
//! the `summarize` verb.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::persist::{self, RecordRow, SeedResult};

pub const SUMMARY_SCHEMA: &str = "tobo-summary/1";

/// Regret values below this floor are clamped before taking log10.
pub const REGRET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub task: String,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub iqr: f64,
    pub values: Vec<f64>,
}

/// Median with the even-count convention (mean of the middle two).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn iqr(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile(&v, 0.75) - quantile(&v, 0.25)
}

fn summarize_metric(values: Vec<f64>) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    Some(MetricSummary {
        median: median(&values),
        iqr: iqr(&values),
        values,
    })
}

fn list_seed_files(dir: &Path, prefix: &str, suffix: &str) -> anyhow::Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
    {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix(prefix) {
            if let Some(num) = rest.strip_suffix(suffix) {
                if let Ok(seed) = num.parse::<u64>() {
                    out.push((seed, entry.path()));
                }
            }
        }
    }
    out.sort_by_key(|(seed, _)| *seed);
    Ok(out)
}

/// Aggregates the optimization artifacts of a run directory into
/// `summary.json` and `regret_curve.csv`.
pub fn summarize_dir(dir: &Path) -> anyhow::Result<Summary> {
    let record_files = list_seed_files(dir, "records_seed", ".csv")?;
    if record_files.is_empty() {
        bail!("{}: no records_seed*.csv files found", dir.display());
    }

    // Consistent schema across files: identical headers.
    let mut header: Option<String> = None;
    let mut per_seed_rows: BTreeMap<u64, Vec<RecordRow>> = BTreeMap::new();
    for (seed, path) in &record_files {
        let (h, rows) = persist::read_records(path)?;
        match &header {
            None => header = Some(h),
            Some(expect) => {
                if *expect != h {
                    bail!(
                        "{}: header {h:?} does not match {expect:?}",
                        path.display()
                    );
                }
            }
        }
        per_seed_rows.insert(*seed, rows);
    }

    let result_files = list_seed_files(dir, "result_seed", ".json")?;
    let mut results: BTreeMap<u64, SeedResult> = BTreeMap::new();
    let mut task = String::from("bo");
    for (seed, path) in &result_files {
        let result: SeedResult = persist::read_json(path)?;
        if result.schema != persist::RESULT_SCHEMA {
            bail!("{}: unexpected schema {}", path.display(), result.schema);
        }
        task = result.task.clone();
        results.insert(*seed, result);
    }
    let failed_seeds: Vec<u64> = list_seed_files(dir, "failure_seed", ".marker")?
        .into_iter()
        .map(|(seed, _)| seed)
        .collect();

    let collect = |pick: &dyn Fn(&SeedResult) -> Option<f64>| -> Vec<f64> {
        results.values().filter_map(|r| pick(r)).collect()
    };
    let mut metrics = BTreeMap::new();
    for (name, pick) in [
        (
            "mse_x",
            &(|r: &SeedResult| r.metrics.mse_x) as &dyn Fn(&SeedResult) -> Option<f64>,
        ),
        ("mae_y", &|r: &SeedResult| r.metrics.mae_y),
        ("acc", &|r: &SeedResult| r.metrics.acc),
        ("final_regret", &|r: &SeedResult| r.metrics.final_regret),
    ] {
        if let Some(summary) = summarize_metric(collect(pick)) {
            metrics.insert(name.to_string(), summary);
        }
    }

    let summary = Summary {
        schema: SUMMARY_SCHEMA.to_string(),
        task,
        seeds: per_seed_rows.keys().copied().collect(),
        failed_seeds,
        metrics,
    };
    persist::write_json(&dir.join("summary.json"), &summary)?;
    write_regret_curve(dir, &per_seed_rows)?;
    Ok(summary)
}

/// Aggregates surrogate-task artifacts (prediction metrics only).
pub fn summarize_surrogate_dir(dir: &Path) -> anyhow::Result<Summary> {
    let result_files = list_seed_files(dir, "result_seed", ".json")?;
    if result_files.is_empty() {
        bail!("{}: no result_seed*.json files found", dir.display());
    }
    let mut results: BTreeMap<u64, SeedResult> = BTreeMap::new();
    for (seed, path) in &result_files {
        results.insert(*seed, persist::read_json(path)?);
    }
    let failed_seeds: Vec<u64> = list_seed_files(dir, "failure_seed", ".marker")?
        .into_iter()
        .map(|(seed, _)| seed)
        .collect();
    let collect = |pick: &dyn Fn(&SeedResult) -> Option<f64>| -> Vec<f64> {
        results.values().filter_map(|r| pick(r)).collect()
    };
    let mut metrics = BTreeMap::new();
    for (name, pick) in [
        (
            "nll",
            &(|r: &SeedResult| r.metrics.nll) as &dyn Fn(&SeedResult) -> Option<f64>,
        ),
        ("mae", &|r: &SeedResult| r.metrics.mae),
        ("cov_norm", &|r: &SeedResult| r.metrics.cov_norm),
    ] {
        if let Some(summary) = summarize_metric(collect(pick)) {
            metrics.insert(name.to_string(), summary);
        }
    }
    let summary = Summary {
        schema: SUMMARY_SCHEMA.to_string(),
        task: "surrogate".to_string(),
        seeds: results.keys().copied().collect(),
        failed_seeds,
        metrics,
    };
    persist::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Writes `regret_curve.csv`: per round, the median over seeds of
/// `log10(max(regret, 1e-12))`, for rounds where every contributing seed
/// reported a regret.
fn write_regret_curve(
    dir: &Path,
    per_seed_rows: &BTreeMap<u64, Vec<RecordRow>>,
) -> anyhow::Result<()> {
    let mut by_round: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rows in per_seed_rows.values() {
        for row in rows {
            if let Some(r) = row.regret {
                by_round
                    .entry(row.round)
                    .or_default()
                    .push(r.max(REGRET_FLOOR).log10());
            }
        }
    }
    let mut text = String::from("round,median_log10_regret\n");
    for (round, values) in &by_round {
        text.push_str(&format!("{},{}\n", round, median(values)));
    }
    std::fs::write(dir.join("regret_curve.csv"), text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn iqr_of_known_values() {
        // Sorted 1..=5: q25 = 2, q75 = 4.
        assert!((iqr(&[5.0, 3.0, 1.0, 4.0, 2.0]) - 2.0).abs() < 1e-12);
    }
}
