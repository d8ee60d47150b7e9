//! Embedding-drift analysis on a 2-d synthetic dataset.
//!
//! Trains a predictor, then checks how often label-preserving perturbations
//! land with a hidden embedding nearer the *opposite* class's embedding
//! centroid than their own — the toy-example phenomenon the representation
//! metric exists to catch. Also rasterizes model confidence over the input
//! plane for plotting.

use crate::data::{self, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::{vector_norm, NormOrder};
use crate::model::{self, ModelArtifact, TrainConfig};
use crate::neighborhood::{self, NeighborhoodParams};
use crate::seeding;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::config::{DatasetSource, ModelSettings, PerturbationSettings};

pub const REPORT_FILE: &str = "embedding_report.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingReportConfig {
    pub dataset: DatasetSource,
    pub model: ModelSettings,
    pub seed: u64,
    pub train: TrainConfig,
    /// Anchors per axis of the uniform grid over the (padded) data box.
    pub grid_size: usize,
    /// Heatmap cells per axis.
    pub heatmap_resolution: usize,
    pub m_perturbations: usize,
    pub perturbation: PerturbationSettings,
    /// Training below this validation accuracy aborts the analysis.
    pub min_val_accuracy: f64,
}

impl Default for EmbeddingReportConfig {
    fn default() -> Self {
        EmbeddingReportConfig {
            dataset: DatasetSource::default(), // circles
            model: ModelSettings::default(),   // 100-unit MLP
            seed: 7,
            train: TrainConfig::default(),
            grid_size: 9,
            heatmap_resolution: 60,
            m_perturbations: 50,
            perturbation: PerturbationSettings::default(),
            min_val_accuracy: 0.95,
        }
    }
}

impl EmbeddingReportConfig {
    pub fn load(path: &Path) -> Result<EmbeddingReportConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub val_accuracy: f64,
    pub n_anchors: usize,
    pub skipped_anchors: usize,
    pub n_perturbations: usize,
    /// Perturbations whose embedding sits nearer the opposite-class centroid.
    pub nearer_opposite: usize,
    pub fraction_nearer_opposite: f64,
    /// The anchors' own centroid assignment, the zero-noise reference.
    pub anchors_nearer_opposite: usize,
    pub anchor_fraction_nearer_opposite: f64,
    pub centroid_distance: f64,
}

/// One heatmap cell: input coordinates and the class-1 probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub x0: f64,
    pub x1: f64,
    pub prob_class1: f64,
}

pub struct EmbeddingAnalysis {
    pub report: EmbeddingReport,
    pub heatmap: Vec<HeatmapCell>,
    pub model: ModelArtifact,
    pub standardizer: Standardizer,
}

fn embedding_centroids(model: &ModelArtifact, ds: &data::Dataset) -> Result<[Array1<f64>; 2]> {
    let mut sums = [
        Array1::<f64>::zeros(model.hidden_width),
        Array1::<f64>::zeros(model.hidden_width),
    ];
    let mut counts = [0usize; 2];
    for i in 0..ds.n() {
        let x = ds.x.row(i);
        let label = model.predict(x)?;
        if label > 1 {
            return Err(Error::InvalidParameter(
                "embedding analysis expects a binary classifier".into(),
            ));
        }
        sums[label] += &model.representation(x)?;
        counts[label] += 1;
    }
    for c in 0..2 {
        if counts[c] == 0 {
            return Err(Error::InvalidParameter(format!(
                "model predicts no training point as class {c}"
            )));
        }
        sums[c] /= counts[c] as f64;
    }
    Ok(sums)
}

fn nearer_opposite(
    model: &ModelArtifact,
    centroids: &[Array1<f64>; 2],
    x: ndarray::ArrayView1<'_, f64>,
    own: usize,
) -> Result<bool> {
    let rep = model.representation(x)?;
    let d_own = vector_norm((&rep - &centroids[own]).view(), NormOrder::L2);
    let d_opp = vector_norm((&rep - &centroids[1 - own]).view(), NormOrder::L2);
    Ok(d_opp < d_own)
}

/// Runs the full analysis: train, locate centroids, perturb a grid of
/// anchors, count embedding flips, rasterize confidence.
pub fn embedding_report(cfg: &EmbeddingReportConfig) -> Result<EmbeddingAnalysis> {
    if cfg.grid_size == 0 || cfg.heatmap_resolution < 2 {
        return Err(Error::Config(
            "grid_size must be >= 1 and heatmap_resolution >= 2".into(),
        ));
    }
    let raw = cfg
        .dataset
        .build(seeding::derive_seed(cfg.seed, "dataset", 0))
        .map_err(|e| Error::stage("dataset", e))?;
    if raw.d() != 2 {
        return Err(Error::Config(
            "embedding analysis is defined for 2-d datasets".into(),
        ));
    }
    let (train_raw, val_raw, _test) = data::split(
        &raw,
        (0.8, 0.1, 0.1),
        seeding::derive_seed(cfg.seed, "split", 0),
    )
    .map_err(|e| Error::stage("dataset", e))?;
    let standardizer = Standardizer::fit(&train_raw).map_err(|e| Error::stage("dataset", e))?;
    let train = standardizer.transform(&train_raw)?;
    let val = standardizer.transform(&val_raw)?;

    let init = ModelArtifact::init(
        cfg.model.kind,
        2,
        raw.n_classes(),
        cfg.model.hidden_width,
        seeding::derive_seed(cfg.seed, "model", 0),
    );
    let trained =
        model::train(init, &train, &val, &cfg.train).map_err(|e| Error::stage("train", e))?;
    let val_accuracy = trained.training_meta.best_val_accuracy;
    if val_accuracy <= cfg.min_val_accuracy {
        return Err(Error::stage(
            "train",
            Error::TrainingBelowThreshold {
                required: cfg.min_val_accuracy,
                achieved: val_accuracy,
            },
        ));
    }

    let centroids = embedding_centroids(&trained, &train)?;
    let centroid_distance = vector_norm((&centroids[0] - &centroids[1]).view(), NormOrder::L2);

    // Bounding box of the standardized train features, padded 5% per side.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in 0..train.n() {
        for j in 0..2 {
            lo[j] = lo[j].min(train.x[[i, j]]);
            hi[j] = hi[j].max(train.x[[i, j]]);
        }
    }
    for j in 0..2 {
        let pad = 0.05 * (hi[j] - lo[j]);
        lo[j] -= pad;
        hi[j] += pad;
    }
    let grid_coord = |j: usize, k: usize, size: usize| -> f64 {
        if size == 1 {
            0.5 * (lo[j] + hi[j])
        } else {
            lo[j] + (hi[j] - lo[j]) * k as f64 / (size - 1) as f64
        }
    };

    let params = NeighborhoodParams {
        m: cfg.m_perturbations,
        std: cfg.perturbation.std,
        p_flip: cfg.perturbation.p_flip,
        max_attempts: cfg.perturbation.max_attempts,
    };
    let binary_mask = [false, false];
    let mut n_perturbations = 0usize;
    let mut flips = 0usize;
    let mut anchor_flips = 0usize;
    let mut skipped = 0usize;
    let mut n_anchors = 0usize;
    for gy in 0..cfg.grid_size {
        for gx in 0..cfg.grid_size {
            let anchor = Array1::from_vec(vec![
                grid_coord(0, gx, cfg.grid_size),
                grid_coord(1, gy, cfg.grid_size),
            ]);
            let idx = (gy * cfg.grid_size + gx) as u64;
            let seed = seeding::derive_seed(cfg.seed, "grid-neighborhood", idx);
            let nb = match neighborhood::sample_neighborhood(
                &trained,
                anchor.view(),
                &binary_mask,
                &params,
                seed,
            ) {
                Ok(nb) => nb,
                Err(Error::AcceptanceExhausted { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(other) => return Err(Error::stage("neighborhoods", other)),
            };
            n_anchors += 1;
            let own = nb.anchor_label;
            if nearer_opposite(&trained, &centroids, anchor.view(), own)? {
                anchor_flips += 1;
            }
            for z in nb.points.rows() {
                n_perturbations += 1;
                if nearer_opposite(&trained, &centroids, z, own)? {
                    flips += 1;
                }
            }
        }
    }

    let res = cfg.heatmap_resolution;
    let mut heatmap = Vec::with_capacity(res * res);
    for gy in 0..res {
        for gx in 0..res {
            let x0 = grid_coord(0, gx, res);
            let x1 = grid_coord(1, gy, res);
            let prob = trained.probability(Array1::from_vec(vec![x0, x1]).view(), 1)?;
            heatmap.push(HeatmapCell {
                x0,
                x1,
                prob_class1: prob,
            });
        }
    }

    let report = EmbeddingReport {
        val_accuracy,
        n_anchors,
        skipped_anchors: skipped,
        n_perturbations,
        nearer_opposite: flips,
        fraction_nearer_opposite: if n_perturbations == 0 {
            0.0
        } else {
            flips as f64 / n_perturbations as f64
        },
        anchors_nearer_opposite: anchor_flips,
        anchor_fraction_nearer_opposite: if n_anchors == 0 {
            0.0
        } else {
            anchor_flips as f64 / n_anchors as f64
        },
        centroid_distance,
    };
    Ok(EmbeddingAnalysis {
        report,
        heatmap,
        model: trained,
        standardizer,
    })
}

pub fn write_outputs(dir: &Path, analysis: &EmbeddingAnalysis) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(&analysis.report)?;
    text.push('\n');
    std::fs::write(dir.join(REPORT_FILE), text)?;
    let mut w = csv::Writer::from_path(dir.join(HEATMAP_FILE))?;
    w.write_record(["x0", "x1", "prob_class1"])?;
    for cell in &analysis.heatmap {
        w.write_record([
            cell.x0.to_string(),
            cell.x1.to_string(),
            cell.prob_class1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn quick_cfg(dataset: DatasetSource, kind: ModelKind, hidden: usize) -> EmbeddingReportConfig {
        EmbeddingReportConfig {
            dataset,
            model: ModelSettings {
                kind,
                hidden_width: hidden,
                load_path: None,
            },
            train: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            grid_size: 5,
            heatmap_resolution: 8,
            m_perturbations: 10,
            ..EmbeddingReportConfig::default()
        }
    }

    #[test]
    fn linear_model_on_blobs_rarely_flips() {
        let cfg = quick_cfg(
            DatasetSource::Blobs {
                n: 600,
                separation: 4.0,
                std: 0.6,
            },
            ModelKind::LogisticRegression,
            0,
        );
        let analysis = embedding_report(&cfg).unwrap();
        assert!(analysis.report.val_accuracy > 0.95);
        assert!(
            analysis.report.fraction_nearer_opposite < 0.01,
            "fraction {}",
            analysis.report.fraction_nearer_opposite
        );
        assert_eq!(analysis.heatmap.len(), 64);
    }

    #[test]
    fn zero_noise_matches_anchor_assignment() {
        let mut cfg = quick_cfg(
            DatasetSource::Blobs {
                n: 600,
                separation: 4.0,
                std: 0.6,
            },
            ModelKind::LogisticRegression,
            0,
        );
        cfg.perturbation.std = 0.0;
        cfg.perturbation.p_flip = 0.0;
        let analysis = embedding_report(&cfg).unwrap();
        assert_eq!(
            analysis.report.fraction_nearer_opposite,
            analysis.report.anchor_fraction_nearer_opposite
        );
    }

    #[test]
    fn underfit_training_is_rejected() {
        let mut cfg = quick_cfg(
            DatasetSource::Circles {
                n: 400,
                noise_std: 0.05,
                factor: 0.5,
            },
            ModelKind::Mlp,
            4,
        );
        cfg.train.epochs = 0; // untrained model cannot hit 95% on circles
        let err = embedding_report(&cfg).unwrap_err();
        assert!(matches!(
            err.root(),
            Error::TrainingBelowThreshold { .. }
        ));
    }
}
