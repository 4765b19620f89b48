//! Run-directory artifacts: the JSONL training log, similarity-histogram
//! CSVs, the metrics report, and the id remap table. All files are
//! deterministic functions of the resolved config and seed (no
//! timestamps, no absolute paths).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fenrec_core::data::RemapTable;
use fenrec_core::metrics::{MetricsReport, SimilarityHistogram};
use fenrec_core::train::EpochSummary;
use serde::Serialize;
use serde_json::json;

/// `epoch,bucket_low,bucket_high,count_original,count_synthesized`
pub fn histogram_csv(h: &SimilarityHistogram) -> String {
    let mut out = String::from("epoch,bucket_low,bucket_high,count_original,count_synthesized\n");
    for bin in &h.bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, bin.low, bin.high, bin.count_original, bin.count_synthesized
        ));
    }
    out
}

/// One JSONL record per epoch; `histogram_csv` is the run-relative path of
/// the dump when one was captured.
pub fn epoch_record(summary: &EpochSummary, histogram_path: Option<&str>) -> String {
    json!({
        "epoch": summary.epoch,
        "mean_rec_loss": summary.mean_rec_loss,
        "mean_cl_loss": summary.mean_cl_loss,
        "batches": summary.batches,
        "batches_skipped": summary.batches_skipped,
        "anchors_skipped": summary.anchors_skipped,
        "lemma_violations": summary.lemma_violations,
        "mix_fallbacks": summary.mix_fallbacks,
        "mu_in_effect": summary.mu_in_effect,
        "valid_ndcg10": summary.valid_ndcg10,
        "histogram_csv": histogram_path,
    })
    .to_string()
}

#[derive(Serialize)]
struct AtKJson {
    #[serde(rename = "5")]
    at5: f64,
    #[serde(rename = "10")]
    at10: f64,
    #[serde(rename = "20")]
    at20: f64,
}

#[derive(Serialize)]
struct CohortJson {
    n_users: usize,
    hr: AtKJson,
    ndcg: AtKJson,
}

#[derive(Serialize)]
struct ReportJson {
    n_users: usize,
    hr: AtKJson,
    ndcg: AtKJson,
    uniformity: f64,
    cohorts: serde_json::Map<String, serde_json::Value>,
}

fn at_k(values: &[fenrec_core::metrics::MetricsAtK], pick: impl Fn(&fenrec_core::metrics::MetricsAtK) -> f64) -> AtKJson {
    let get = |k: usize| {
        values
            .iter()
            .find(|m| m.k == k)
            .map(&pick)
            .unwrap_or(0.0)
    };
    AtKJson {
        at5: get(5),
        at10: get(10),
        at20: get(20),
    }
}

pub fn metrics_json(report: &MetricsReport) -> Result<String> {
    let mut cohorts = serde_json::Map::new();
    for c in &report.cohorts {
        cohorts.insert(
            c.cohort.to_string(),
            serde_json::to_value(CohortJson {
                n_users: c.n_users,
                hr: at_k(&c.at_k, |m| m.hr),
                ndcg: at_k(&c.at_k, |m| m.ndcg),
            })?,
        );
    }
    let report = ReportJson {
        n_users: report.n_users,
        hr: at_k(&report.at_k, |m| m.hr),
        ndcg: at_k(&report.at_k, |m| m.ndcg),
        uniformity: report.uniformity,
        cohorts,
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

/// `original_id new_id` per line, in first-appearance order.
pub fn remap_table_text(remap: &RemapTable) -> String {
    let mut out = String::new();
    for (original, dense) in &remap.pairs {
        out.push_str(&format!("{original} {dense}\n"));
    }
    out
}

/// Resolve the output directory: explicit flag beats the environment
/// override (`FENREC_OUT_DIR`), which beats `./runs`.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Ok(env_dir) = std::env::var("FENREC_OUT_DIR") {
        if !env_dir.is_empty() {
            return PathBuf::from(env_dir);
        }
    }
    PathBuf::from("runs")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
