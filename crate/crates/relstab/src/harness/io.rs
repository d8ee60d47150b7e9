//! Results-directory layout and readers/writers.
//!
//! Records go to JSON-lines files with a CSV mirror for plotting. Output is
//! byte-deterministic: no timestamps, fixed field order, `BTreeMap` for any
//! keyed data, floats in shortest round-trip form.

use crate::bounds::BoundRecord;
use crate::error::{Error, Result};
use crate::neighborhood::Neighborhood;
use crate::stability::{DenomMode, StabilityRecord};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const ANCHORS_FILE: &str = "anchors.csv";
pub const STABILITY_JSONL: &str = "stability_records.jsonl";
pub const STABILITY_CSV: &str = "stability_records.csv";
pub const BOUNDS_JSONL: &str = "bound_records.jsonl";
pub const BOUNDS_CSV: &str = "bound_records.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub n: usize,
    pub d: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: String,
    pub hidden_width: usize,
    pub epochs_run: usize,
    pub best_val_accuracy: f64,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorInfo {
    pub requested: usize,
    pub used: usize,
    /// Anchors whose neighborhood sampling exhausted its budget.
    pub skipped_point_ids: Vec<usize>,
    /// Predicted-class mix of the used anchors.
    pub class_mix: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileNames {
    pub model: String,
    pub anchors: String,
    pub stability_jsonl: String,
    pub stability_csv: String,
    pub bounds_jsonl: String,
    pub bounds_csv: String,
    pub summary: String,
}

impl Default for FileNames {
    fn default() -> Self {
        FileNames {
            model: MODEL_FILE.into(),
            anchors: ANCHORS_FILE.into(),
            stability_jsonl: STABILITY_JSONL.into(),
            stability_csv: STABILITY_CSV.into(),
            bounds_jsonl: BOUNDS_JSONL.into(),
            bounds_csv: BOUNDS_CSV.into(),
            summary: SUMMARY_FILE.into(),
        }
    }
}

/// Everything needed to reproduce and audit one run. Deliberately carries no
/// timestamps or host paths so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: super::config::ExperimentConfig,
    pub dataset: DatasetInfo,
    pub model: ModelInfo,
    pub anchors: AnchorInfo,
    pub denom_modes: Vec<DenomMode>,
    pub files: FileNames,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::Config(format!("cannot read manifest in {}: {e}", dir.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse manifest: {e}")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut items = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(line)?);
    }
    Ok(items)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_stability_csv(path: &Path, records: &[StabilityRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "point_id",
        "method",
        "denom_mode",
        "p",
        "ris",
        "rrs",
        "ros",
        "lipschitz_eq1",
        "argmax_neighbor_ris",
        "argmax_neighbor_rrs",
        "argmax_neighbor_ros",
        "skipped_ris",
        "skipped_rrs",
        "skipped_ros",
        "config_hash",
    ])?;
    for r in records {
        w.write_record([
            r.point_id.to_string(),
            r.method.name().to_string(),
            r.denom_mode.label().to_string(),
            r.p.label().to_string(),
            fmt_opt(r.ris),
            fmt_opt(r.rrs),
            fmt_opt(r.ros),
            fmt_opt(r.lipschitz_eq1),
            fmt_opt_usize(r.argmax_neighbor_ris),
            fmt_opt_usize(r.argmax_neighbor_rrs),
            fmt_opt_usize(r.argmax_neighbor_ros),
            r.skipped_ris.to_string(),
            r.skipped_rrs.to_string(),
            r.skipped_ros.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds_csv(path: &Path, records: &[BoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "point_id",
        "method",
        "p",
        "l1",
        "l2",
        "lambda1",
        "lambda2",
        "ris",
        "rrs",
        "ros",
        "bound_ris",
        "bound_rrs",
        "bound_ris_composite",
        "slack_ris",
        "slack_rrs",
        "violated_ris",
        "violated_rrs",
    ])?;
    for r in records {
        w.write_record([
            r.point_id.to_string(),
            r.method.name().to_string(),
            r.p.label().to_string(),
            r.l1.to_string(),
            r.l2.to_string(),
            r.lambda1.to_string(),
            r.lambda2.to_string(),
            r.ris.to_string(),
            r.rrs.to_string(),
            r.ros.to_string(),
            r.bound_ris.to_string(),
            r.bound_rrs.to_string(),
            r.bound_ris_composite.to_string(),
            fmt_opt(r.slack_ris),
            fmt_opt(r.slack_rrs),
            r.violated_ris.to_string(),
            r.violated_rrs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Anchors file: `point_id, test_row, predicted_label, f0..f{d−1}`.
pub fn write_anchors_csv(
    path: &Path,
    anchors: &Array2<f64>,
    test_rows: &[usize],
    predicted: &[usize],
) -> Result<()> {
    let d = anchors.ncols();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "point_id".to_string(),
        "test_row".to_string(),
        "predicted_label".to_string(),
    ];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..anchors.nrows() {
        let mut row = vec![
            i.to_string(),
            test_rows[i].to_string(),
            predicted[i].to_string(),
        ];
        row.extend(anchors.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the feature matrix back from an anchors file.
pub fn read_anchors_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with('f')).count();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(d);
        for (h, cell) in headers.iter().zip(record.iter()) {
            if h.starts_with('f') {
                row.push(cell.parse::<f64>().map_err(|_| {
                    Error::Config(format!("anchors file holds non-numeric cell {cell:?}"))
                })?);
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let mut out = Array2::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[[i, j]] = *v;
        }
    }
    Ok(out)
}

/// Debug dump of a neighborhood: anchor row first, then the accepted points.
pub fn write_neighborhood_csv(path: &Path, nb: &Neighborhood) -> Result<()> {
    let d = nb.anchor.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["role".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let mut anchor_row = vec!["anchor".to_string(), nb.anchor_label.to_string()];
    anchor_row.extend(nb.anchor.iter().map(|v| v.to_string()));
    w.write_record(&anchor_row)?;
    for z in nb.points.rows() {
        let mut row = vec!["perturbation".to_string(), nb.anchor_label.to_string()];
        row.extend(z.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Path helpers for a results directory.
pub fn results_paths(dir: &Path, files: &FileNames) -> ResultsPaths {
    ResultsPaths {
        model: dir.join(&files.model),
        anchors: dir.join(&files.anchors),
        stability_jsonl: dir.join(&files.stability_jsonl),
        stability_csv: dir.join(&files.stability_csv),
        bounds_jsonl: dir.join(&files.bounds_jsonl),
        bounds_csv: dir.join(&files.bounds_csv),
        summary: dir.join(&files.summary),
    }
}

pub struct ResultsPaths {
    pub model: PathBuf,
    pub anchors: PathBuf,
    pub stability_jsonl: PathBuf,
    pub stability_csv: PathBuf,
    pub bounds_jsonl: PathBuf,
    pub bounds_csv: PathBuf,
    pub summary: PathBuf,
}
