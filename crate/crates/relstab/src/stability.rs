//! The stability metrics.
//!
//! All three relative metrics share one numerator, the ℓ_p norm of the
//! componentwise percent change between the anchor's explanation and a
//! neighbor's. They differ in the denominator: normalized input change (RIS),
//! normalized internal-representation change (RRS), or the raw logit change
//! (ROS — intentionally unnormalized). Every division is guarded: percent
//! changes use `eps_div` against zero components, denominators clamp at
//! `eps_min`, and neighbors whose numerator and raw denominator are both
//! exactly zero are skipped and counted rather than scored as `0/eps_min`.

use crate::error::{Error, Result};
use crate::linalg::{vector_norm, NormOrder};
use crate::model::ModelArtifact;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Denominator form of Eqs. RIS/RRS.
///
/// `Elementwise` is the literal reading (`‖Δv / v‖_p`); `NormRatio` reads the
/// same quantity as `‖Δv‖_p / ‖v‖_p`, the form under which the Lipschitz
/// bound chain is an identity. Bound verification is pinned to `NormRatio`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenomMode {
    Elementwise,
    NormRatio,
}

impl DenomMode {
    pub const BOTH: [DenomMode; 2] = [DenomMode::Elementwise, DenomMode::NormRatio];

    pub fn label(&self) -> &'static str {
        match self {
            DenomMode::Elementwise => "elementwise",
            DenomMode::NormRatio => "norm_ratio",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "elementwise" => Ok(DenomMode::Elementwise),
            "norm_ratio" | "norm-ratio" => Ok(DenomMode::NormRatio),
            other => Err(Error::InvalidParameter(format!(
                "denominator mode must be elementwise or norm-ratio, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for DenomMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub p: NormOrder,
    /// Clamp floor for metric denominators.
    pub eps_min: f64,
    /// Guard for componentwise divisions in percent changes.
    pub eps_div: f64,
    pub denom_mode: DenomMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            p: NormOrder::L2,
            eps_min: 1e-6,
            eps_div: 1e-8,
            denom_mode: DenomMode::Elementwise,
        }
    }
}

impl MetricConfig {
    pub fn with_mode(&self, denom_mode: DenomMode) -> MetricConfig {
        MetricConfig { denom_mode, ..*self }
    }
}

/// Componentwise percent change `(a_i − b_i) / (sign(a_i)·max(|a_i|, eps_div))`,
/// with `sign(0) = +1`.
pub fn percent_change(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    eps_div: f64,
) -> Array1<f64> {
    Array1::from_shape_fn(a.len(), |i| {
        let sign = if a[i] < 0.0 { -1.0 } else { 1.0 };
        (a[i] - b[i]) / (sign * a[i].abs().max(eps_div))
    })
}

/// One metric evaluated over a neighborhood: the max ratio, which neighbor
/// attains it, and the per-neighbor ratios (`None` marks a skipped neighbor
/// whose numerator and raw denominator were both exactly zero).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricOutcome {
    /// `None` when every neighbor was skipped (reason in `skipped`).
    pub value: Option<f64>,
    pub argmax: Option<usize>,
    pub per_neighbor: Vec<Option<f64>>,
    pub skipped: usize,
}

impl MetricOutcome {
    fn from_ratios(numerators: &[f64], raw_denoms: &[f64], eps_min: f64) -> MetricOutcome {
        let mut per_neighbor = Vec::with_capacity(numerators.len());
        let mut value: Option<f64> = None;
        let mut argmax = None;
        let mut skipped = 0usize;
        for (j, (&num, &den)) in numerators.iter().zip(raw_denoms.iter()).enumerate() {
            if num == 0.0 && den == 0.0 {
                skipped += 1;
                per_neighbor.push(None);
                continue;
            }
            let ratio = num / den.max(eps_min);
            per_neighbor.push(Some(ratio));
            if value.map_or(true, |best| ratio > best) {
                value = Some(ratio);
                argmax = Some(j);
            }
        }
        MetricOutcome {
            value,
            argmax,
            per_neighbor,
            skipped,
        }
    }
}

fn explanation_numerators(
    e_x: ArrayView1<'_, f64>,
    e_neighbors: &[Array1<f64>],
    cfg: &MetricConfig,
) -> Vec<f64> {
    e_neighbors
        .iter()
        .map(|e_z| vector_norm(percent_change(e_x, e_z.view(), cfg.eps_div).view(), cfg.p))
        .collect()
}

fn relative_denominator(
    v_x: ArrayView1<'_, f64>,
    v_z: ArrayView1<'_, f64>,
    cfg: &MetricConfig,
) -> f64 {
    match cfg.denom_mode {
        DenomMode::Elementwise => {
            vector_norm(percent_change(v_x, v_z, cfg.eps_div).view(), cfg.p)
        }
        DenomMode::NormRatio => {
            vector_norm((&v_x - &v_z).view(), cfg.p) / vector_norm(v_x, cfg.p)
        }
    }
}

/// Relative input stability: max over neighbors of the explanation percent
/// change over the normalized input change.
pub fn relative_input_stability(
    e_x: ArrayView1<'_, f64>,
    e_neighbors: &[Array1<f64>],
    x: ArrayView1<'_, f64>,
    points: &Array2<f64>,
    cfg: &MetricConfig,
) -> MetricOutcome {
    let numerators = explanation_numerators(e_x, e_neighbors, cfg);
    let denoms: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|z| relative_denominator(x, z, cfg))
        .collect();
    MetricOutcome::from_ratios(&numerators, &denoms, cfg.eps_min)
}

/// Relative representation stability: same numerator, denominator from the
/// model's internal representation. Re-checks the label constraint.
pub fn relative_representation_stability(
    e_x: ArrayView1<'_, f64>,
    e_neighbors: &[Array1<f64>],
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    points: &Array2<f64>,
    cfg: &MetricConfig,
) -> Result<MetricOutcome> {
    let numerators = explanation_numerators(e_x, e_neighbors, cfg);
    let anchor_label = model.predict(x)?;
    let rep_x = model.representation(x)?;
    let mut denoms = Vec::with_capacity(points.nrows());
    for (row, z) in points.rows().into_iter().enumerate() {
        if model.predict(z)? != anchor_label {
            return Err(Error::LabelInconsistentNeighborhood { row });
        }
        let rep_z = model.representation(z)?;
        denoms.push(relative_denominator(rep_x.view(), rep_z.view(), cfg));
    }
    Ok(MetricOutcome::from_ratios(&numerators, &denoms, cfg.eps_min))
}

/// Relative output stability: same numerator, denominator is the raw logit
/// distance `‖h(x) − h(x′)‖_p` with no normalization, in both modes.
pub fn relative_output_stability(
    e_x: ArrayView1<'_, f64>,
    e_neighbors: &[Array1<f64>],
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    points: &Array2<f64>,
    cfg: &MetricConfig,
) -> Result<MetricOutcome> {
    let numerators = explanation_numerators(e_x, e_neighbors, cfg);
    let trace_x = model.forward(x)?;
    let mut denoms = Vec::with_capacity(points.nrows());
    for (row, z) in points.rows().into_iter().enumerate() {
        let trace_z = model.forward(z)?;
        if trace_z.predicted != trace_x.predicted {
            return Err(Error::LabelInconsistentNeighborhood { row });
        }
        denoms.push(vector_norm(
            (&trace_x.logits - &trace_z.logits).view(),
            cfg.p,
        ));
    }
    Ok(MetricOutcome::from_ratios(&numerators, &denoms, cfg.eps_min))
}

/// The prior pointwise local-Lipschitz metric: max over neighbors of
/// `‖e_x − e_{x′}‖_p / ‖x − x′‖_p`, skipping zero-distance neighbors.
/// Undefined (`value = None`) when every neighbor coincides with `x`.
pub fn pointwise_lipschitz_stability(
    e_x: ArrayView1<'_, f64>,
    e_neighbors: &[Array1<f64>],
    x: ArrayView1<'_, f64>,
    points: &Array2<f64>,
    p: NormOrder,
) -> MetricOutcome {
    let mut per_neighbor = Vec::with_capacity(e_neighbors.len());
    let mut value: Option<f64> = None;
    let mut argmax = None;
    let mut skipped = 0usize;
    for (j, (e_z, z)) in e_neighbors.iter().zip(points.rows()).enumerate() {
        let dist = vector_norm((&x - &z).view(), p);
        if dist == 0.0 {
            skipped += 1;
            per_neighbor.push(None);
            continue;
        }
        let ratio = vector_norm((&e_x - e_z).view(), p) / dist;
        per_neighbor.push(Some(ratio));
        if value.map_or(true, |best| ratio > best) {
            value = Some(ratio);
            argmax = Some(j);
        }
    }
    MetricOutcome {
        value,
        argmax,
        per_neighbor,
        skipped,
    }
}

/// Per-(point, method) metric values, one results-file row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub point_id: usize,
    pub method: crate::explain::Method,
    pub denom_mode: DenomMode,
    pub p: NormOrder,
    pub ris: Option<f64>,
    pub rrs: Option<f64>,
    pub ros: Option<f64>,
    pub lipschitz_eq1: Option<f64>,
    pub argmax_neighbor_ris: Option<usize>,
    pub argmax_neighbor_rrs: Option<usize>,
    pub argmax_neighbor_ros: Option<usize>,
    pub skipped_ris: usize,
    pub skipped_rrs: usize,
    pub skipped_ros: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_neighbor_ris: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_neighbor_rrs: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_neighbor_ros: Option<Vec<Option<f64>>>,
    pub config_hash: String,
}
