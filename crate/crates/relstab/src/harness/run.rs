//! The end-to-end pipeline: train, sample, explain, score, verify, persist.
//!
//! Determinism contract: every randomized step draws from a seed derived via
//! `seeding::derive_seed(parent, stage, index)`, anchors are processed by a
//! worker pool whose partitioning cannot change results, and records are
//! sorted before writing. Two runs with the same config produce byte-identical
//! record files regardless of worker count.

use crate::bounds::{self, BoundRecord};
use crate::data::{self, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::explain::{self, Attribution, ExplainerSpec};
use crate::model::{self, ModelArtifact};
use crate::neighborhood::{self, Neighborhood, NeighborhoodParams};
use crate::seeding;
use crate::stability::{
    self, DenomMode, MetricConfig, MetricOutcome, StabilityRecord,
};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use std::collections::BTreeMap;
use std::path::Path;

use super::config::ExperimentConfig;
use super::io::{self, AnchorInfo, DatasetInfo, FileNames, Manifest, ModelInfo};
use super::summary::{self, Summary};

pub const BOUND_TOL: f64 = 1e-9;

/// Everything a finished run hands back, mirroring what was persisted.
pub struct RunOutput {
    pub manifest: Manifest,
    pub stability_records: Vec<StabilityRecord>,
    pub bound_records: Vec<BoundRecord>,
    pub summary: Summary,
    pub model: ModelArtifact,
    pub anchors: Array2<f64>,
}

struct PreparedData {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    info: DatasetInfo,
    #[allow(dead_code)]
    standardizer: Standardizer,
}

fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let raw = cfg.dataset.build(seeding::derive_seed(cfg.seed, "dataset", 0))?;
    let n = raw.n();
    let (train, val, test) = data::split(&raw, (0.8, 0.1, 0.1), seeding::derive_seed(cfg.seed, "split", 0))?;
    let standardizer = Standardizer::fit(&train)?;
    let info = DatasetInfo {
        n,
        d: raw.d(),
        n_train: train.n(),
        n_val: val.n(),
        n_test: test.n(),
        classes: raw.n_classes(),
    };
    Ok(PreparedData {
        train: standardizer.transform(&train)?,
        val: standardizer.transform(&val)?,
        test: standardizer.transform(&test)?,
        info,
        standardizer,
    })
}

fn obtain_model(cfg: &ExperimentConfig, prepared: &PreparedData) -> Result<ModelArtifact> {
    if let Some(path) = &cfg.model.load_path {
        let loaded = ModelArtifact::load_json(path)?;
        if loaded.d() != prepared.info.d {
            return Err(Error::Config(format!(
                "loaded model expects d={}, dataset has d={}",
                loaded.d(),
                prepared.info.d
            )));
        }
        return Ok(loaded);
    }
    let init = ModelArtifact::init(
        cfg.model.kind,
        prepared.info.d,
        prepared.info.classes,
        cfg.model.hidden_width,
        seeding::derive_seed(cfg.seed, "model", 0),
    );
    model::train(init, &prepared.train, &prepared.val, &cfg.train)
}

struct AnchorSet {
    features: Array2<f64>,
    test_rows: Vec<usize>,
    predicted: Vec<usize>,
}

fn sample_anchors(
    cfg: &ExperimentConfig,
    test: &Dataset,
    model: &ModelArtifact,
) -> Result<AnchorSet> {
    if test.n() < cfg.n_test_points {
        return Err(Error::Config(format!(
            "test split holds {} rows, cannot sample {} anchors without replacement",
            test.n(),
            cfg.n_test_points
        )));
    }
    let mut rows: Vec<usize> = (0..test.n()).collect();
    rows.shuffle(&mut seeding::rng_from(seeding::derive_seed(
        cfg.seed, "anchors", 0,
    )));
    rows.truncate(cfg.n_test_points);
    let mut features = Array2::zeros((rows.len(), test.d()));
    let mut predicted = Vec::with_capacity(rows.len());
    for (i, &row) in rows.iter().enumerate() {
        features.row_mut(i).assign(&test.x.row(row));
        predicted.push(model.predict(test.x.row(row))?);
    }
    Ok(AnchorSet {
        features,
        test_rows: rows,
        predicted,
    })
}

fn neighborhood_params(cfg: &ExperimentConfig) -> NeighborhoodParams {
    NeighborhoodParams {
        m: cfg.m_perturbations,
        std: cfg.perturbation.std,
        p_flip: cfg.perturbation.p_flip,
        max_attempts: cfg.perturbation.max_attempts,
    }
}

fn build_neighborhoods(
    cfg: &ExperimentConfig,
    anchors: &AnchorSet,
    model: &ModelArtifact,
    binary_mask: &[bool],
) -> Result<(Vec<Option<Neighborhood>>, Vec<usize>)> {
    let params = neighborhood_params(cfg);
    let mut neighborhoods = Vec::with_capacity(anchors.features.nrows());
    let mut skipped = Vec::new();
    for i in 0..anchors.features.nrows() {
        let seed = seeding::derive_seed(cfg.seed, "neighborhood", i as u64);
        match neighborhood::sample_neighborhood(
            model,
            anchors.features.row(i),
            binary_mask,
            &params,
            seed,
        ) {
            Ok(nb) => neighborhoods.push(Some(nb)),
            Err(Error::AcceptanceExhausted { .. }) => {
                skipped.push(i);
                neighborhoods.push(None);
            }
            Err(other) => return Err(other),
        }
    }
    Ok((neighborhoods, skipped))
}

fn metric_fields(
    out: &MetricOutcome,
    keep: bool,
) -> (Option<f64>, Option<usize>, usize, Option<Vec<Option<f64>>>) {
    (
        out.value,
        out.argmax,
        out.skipped,
        keep.then(|| out.per_neighbor.clone()),
    )
}

/// Attributions and metric rows for a single anchor.
fn score_anchor(
    cfg: &ExperimentConfig,
    model: &ModelArtifact,
    baseline: &Array1<f64>,
    nb: &Neighborhood,
    point_id: usize,
    modes: &[DenomMode],
    config_hash: &str,
) -> Result<Vec<StabilityRecord>> {
    let anchor = nb.anchor.view();
    let target = nb.anchor_label;
    let anchor_seed = seeding::derive_seed(cfg.seed, "anchor", point_id as u64);
    let mut records = Vec::with_capacity(cfg.explainers.len() * modes.len());
    for spec in &cfg.explainers {
        let stage = spec.method().name();
        let e_x: Attribution = explain::explain(
            model,
            anchor,
            target,
            spec,
            baseline.view(),
            seeding::derive_seed(anchor_seed, stage, 0),
        )?;
        let mut e_neighbors: Vec<Array1<f64>> = Vec::with_capacity(nb.m());
        for k in 0..nb.m() {
            let e_z = explain::explain(
                model,
                nb.points.row(k),
                target,
                spec,
                baseline.view(),
                seeding::derive_seed(anchor_seed, stage, (k + 1) as u64),
            )?;
            e_neighbors.push(e_z.values);
        }
        let eq1 = stability::pointwise_lipschitz_stability(
            e_x.values.view(),
            &e_neighbors,
            anchor,
            &nb.points,
            cfg.metric.p,
        );
        for &mode in modes {
            let mc: MetricConfig = cfg.metric.with_mode(mode);
            let ris = stability::relative_input_stability(
                e_x.values.view(),
                &e_neighbors,
                anchor,
                &nb.points,
                &mc,
            );
            let rrs = stability::relative_representation_stability(
                e_x.values.view(),
                &e_neighbors,
                model,
                anchor,
                &nb.points,
                &mc,
            )?;
            let ros = stability::relative_output_stability(
                e_x.values.view(),
                &e_neighbors,
                model,
                anchor,
                &nb.points,
                &mc,
            )?;
            let (ris_v, ris_arg, ris_skip, ris_pn) = metric_fields(&ris, cfg.keep_per_neighbor);
            let (rrs_v, rrs_arg, rrs_skip, rrs_pn) = metric_fields(&rrs, cfg.keep_per_neighbor);
            let (ros_v, ros_arg, ros_skip, ros_pn) = metric_fields(&ros, cfg.keep_per_neighbor);
            records.push(StabilityRecord {
                point_id,
                method: spec.method(),
                denom_mode: mode,
                p: cfg.metric.p,
                ris: ris_v,
                rrs: rrs_v,
                ros: ros_v,
                lipschitz_eq1: eq1.value,
                argmax_neighbor_ris: ris_arg,
                argmax_neighbor_rrs: rrs_arg,
                argmax_neighbor_ros: ros_arg,
                skipped_ris: ris_skip,
                skipped_rrs: rrs_skip,
                skipped_ros: ros_skip,
                per_neighbor_ris: ris_pn,
                per_neighbor_rrs: rrs_pn,
                per_neighbor_ros: ros_pn,
                config_hash: config_hash.to_string(),
            });
        }
    }
    Ok(records)
}

/// Explain/score stage over a worker pool. Work is partitioned round-robin;
/// per-anchor seeds make the partitioning invisible in the output.
fn score_all_anchors(
    cfg: &ExperimentConfig,
    model: &ModelArtifact,
    baseline: &Array1<f64>,
    neighborhoods: &[Option<Neighborhood>],
    modes: &[DenomMode],
    config_hash: &str,
    workers: usize,
) -> Result<Vec<StabilityRecord>> {
    let workers = workers.max(1);
    let n = neighborhoods.len();
    let mut slots: Vec<Option<Vec<StabilityRecord>>> = Vec::new();
    slots.resize_with(n, || None);
    if workers == 1 {
        for (i, nb) in neighborhoods.iter().enumerate() {
            if let Some(nb) = nb {
                slots[i] = Some(score_anchor(cfg, model, baseline, nb, i, modes, config_hash)?);
            }
        }
    } else {
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for worker in 0..workers {
                let handle = scope.spawn(move || {
                    let mut partial: Vec<(usize, Result<Vec<StabilityRecord>>)> = Vec::new();
                    for (i, nb) in neighborhoods.iter().enumerate() {
                        if i % workers != worker {
                            continue;
                        }
                        if let Some(nb) = nb {
                            partial.push((
                                i,
                                score_anchor(cfg, model, baseline, nb, i, modes, config_hash),
                            ));
                        }
                    }
                    partial
                });
                handles.push(handle);
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect::<Vec<_>>()
        });
        for (i, result) in results {
            slots[i] = Some(result?);
        }
    }
    // Stable output order: by point, then config explainer order, then mode.
    let mut records = Vec::new();
    for slot in slots.into_iter().flatten() {
        records.extend(slot);
    }
    let mode_index = |m: DenomMode| DenomMode::BOTH.iter().position(|x| *x == m).unwrap_or(0);
    let method_index = |r: &StabilityRecord| {
        cfg.explainers
            .iter()
            .position(|s| s.method() == r.method)
            .unwrap_or(usize::MAX)
    };
    records.sort_by_key(|r| (r.point_id, method_index(r), mode_index(r.denom_mode)));
    Ok(records)
}

/// Runs the full pipeline into `out_dir`.
///
/// `modes` selects which denominator modes are scored (default both);
/// `workers` only changes wall-clock time, never the records.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
    modes: &[DenomMode],
) -> Result<RunOutput> {
    cfg.validate()?;
    if modes.is_empty() {
        return Err(Error::Config("at least one denominator mode required".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::stage("setup", e.into()))?;

    let prepared = prepare_data(cfg).map_err(|e| Error::stage("dataset", e))?;
    let model = obtain_model(cfg, &prepared).map_err(|e| Error::stage("train", e))?;
    let anchors =
        sample_anchors(cfg, &prepared.test, &model).map_err(|e| Error::stage("anchors", e))?;
    let binary_mask = prepared.test.binary_mask();
    let (neighborhoods, skipped) = build_neighborhoods(cfg, &anchors, &model, &binary_mask)
        .map_err(|e| Error::stage("neighborhoods", e))?;

    let baseline = prepared.train.feature_means();
    let config_hash = cfg.hash();
    let stability_records = score_all_anchors(
        cfg,
        &model,
        &baseline,
        &neighborhoods,
        modes,
        &config_hash,
        workers,
    )
    .map_err(|e| Error::stage("explain-score", e))?;

    let bound_records = if modes.contains(&DenomMode::NormRatio) {
        let norm_ratio: Vec<StabilityRecord> = stability_records
            .iter()
            .filter(|r| r.denom_mode == DenomMode::NormRatio)
            .cloned()
            .collect();
        bounds::verify_bounds(&norm_ratio, &anchors.features, &model, BOUND_TOL)
            .map_err(|e| Error::stage("bounds", e))?
    } else {
        Vec::new()
    };

    let mut class_mix: BTreeMap<String, usize> = BTreeMap::new();
    for (i, label) in anchors.predicted.iter().enumerate() {
        if !skipped.contains(&i) {
            *class_mix.entry(label.to_string()).or_insert(0) += 1;
        }
    }
    let manifest = Manifest {
        config_hash: config_hash.clone(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        dataset: prepared.info.clone(),
        model: ModelInfo {
            kind: match model.kind {
                model::ModelKind::LogisticRegression => "lr".into(),
                model::ModelKind::Mlp => "mlp".into(),
            },
            hidden_width: model.hidden_width,
            epochs_run: model.training_meta.epochs_run,
            best_val_accuracy: model.training_meta.best_val_accuracy,
            best_epoch: model.training_meta.best_epoch,
        },
        anchors: AnchorInfo {
            requested: cfg.n_test_points,
            used: cfg.n_test_points - skipped.len(),
            skipped_point_ids: skipped,
            class_mix,
        },
        denom_modes: modes.to_vec(),
        files: FileNames::default(),
    };

    write_outputs(out_dir, &manifest, &model, &anchors, &stability_records, &bound_records)
        .map_err(|e| Error::stage("write", e))?;

    if cfg.dump_neighborhoods {
        let nb_dir = out_dir.join("neighborhoods");
        std::fs::create_dir_all(&nb_dir).map_err(|e| Error::stage("write", e.into()))?;
        for (i, nb) in neighborhoods.iter().enumerate() {
            if let Some(nb) = nb {
                io::write_neighborhood_csv(&nb_dir.join(format!("anchor_{i}.csv")), nb)
                    .map_err(|e| Error::stage("write", e))?;
            }
        }
    }

    let summary = summary::summarize_records(&stability_records, &bound_records);
    let mut summary_text = serde_json::to_string_pretty(&summary)?;
    summary_text.push('\n');
    std::fs::write(out_dir.join(io::SUMMARY_FILE), summary_text)
        .map_err(|e| Error::stage("write", e.into()))?;

    Ok(RunOutput {
        manifest,
        stability_records,
        bound_records,
        summary,
        model,
        anchors: anchors.features,
    })
}

fn write_outputs(
    out_dir: &Path,
    manifest: &Manifest,
    model: &ModelArtifact,
    anchors: &AnchorSet,
    stability_records: &[StabilityRecord],
    bound_records: &[BoundRecord],
) -> Result<()> {
    let paths = io::results_paths(out_dir, &manifest.files);
    manifest.save(out_dir)?;
    model.save_json(&paths.model)?;
    io::write_anchors_csv(
        &paths.anchors,
        &anchors.features,
        &anchors.test_rows,
        &anchors.predicted,
    )?;
    io::write_jsonl(&paths.stability_jsonl, stability_records)?;
    io::write_stability_csv(&paths.stability_csv, stability_records)?;
    io::write_jsonl(&paths.bounds_jsonl, bound_records)?;
    io::write_bounds_csv(&paths.bounds_csv, bound_records)?;
    Ok(())
}

/// Re-runs bound verification over a persisted results directory.
/// Returns the fresh records and the number of violated ones.
pub fn reverify_bounds(dir: &Path, tol: f64) -> Result<(Vec<BoundRecord>, usize)> {
    let manifest = Manifest::load(dir)?;
    let paths = io::results_paths(dir, &manifest.files);
    let model = ModelArtifact::load_json(&paths.model)?;
    let anchors = io::read_anchors_csv(&paths.anchors)?;
    let records: Vec<StabilityRecord> = io::read_jsonl(&paths.stability_jsonl)?;
    let norm_ratio: Vec<StabilityRecord> = records
        .into_iter()
        .filter(|r| r.denom_mode == DenomMode::NormRatio)
        .collect();
    if norm_ratio.is_empty() {
        return Err(Error::Config(
            "results hold no norm-ratio records; rerun with the norm_ratio mode enabled".into(),
        ));
    }
    let bound_records = bounds::verify_bounds(&norm_ratio, &anchors, &model, tol)?;
    let violations = bound_records
        .iter()
        .filter(|r| r.violated_ris || r.violated_rrs)
        .count();
    Ok((bound_records, violations))
}

/// Trains (or loads) the model for a config and persists it, without running
/// the metric pipeline.
pub fn train_only(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ModelArtifact> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::stage("setup", e.into()))?;
    let prepared = prepare_data(cfg).map_err(|e| Error::stage("dataset", e))?;
    let model = obtain_model(cfg, &prepared).map_err(|e| Error::stage("train", e))?;
    model
        .save_json(&out_dir.join(io::MODEL_FILE))
        .map_err(|e| Error::stage("write", e))?;
    Ok(model)
}
