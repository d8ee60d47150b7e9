//! Layer Lipschitz constants and the per-point factors that chain the three
//! stability metrics, plus empirical verification that the chain holds.
//!
//! For metrics computed in norm-ratio mode the chain is
//! `RIS ≤ λ₁L₁·RRS` and `RRS ≤ λ₂L₂·ROS` with `λ₁ = ‖h₁(x)‖_p/‖x‖_p`,
//! `λ₂ = ‖h₁(x)‖_p`, and `L₁`, `L₂` the operator norms of the two weight
//! matrices (ReLU is 1-Lipschitz). Verification therefore refuses records
//! computed in elementwise mode.

use crate::error::{Error, Result};
use crate::explain::Method;
use crate::linalg::{vector_norm, NormOrder};
use crate::model::{ModelArtifact, ModelKind};
use crate::seeding;
use crate::stability::{DenomMode, StabilityRecord};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const POWER_ITERATION_TOL: f64 = 1e-10;
const POWER_ITERATION_MAX: usize = 10_000;
/// Start-vector seed for the power iteration, fixed so results are stable.
const POWER_ITERATION_SEED: u64 = 0x52454c_53544142;

/// Operator norm of a matrix: max column sum (p=1), max row sum (p=∞), or the
/// largest singular value via power iteration on WᵀW (p=2, seed-fixed start).
pub fn operator_norm(w: ArrayView2<'_, f64>, p: NormOrder) -> Result<f64> {
    if w.is_empty() {
        return Ok(0.0);
    }
    match p {
        NormOrder::L1 => Ok((0..w.ncols())
            .map(|j| w.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        NormOrder::LInf => Ok(w
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        NormOrder::L2 => spectral_norm(w),
    }
}

fn spectral_norm(w: ArrayView2<'_, f64>) -> Result<f64> {
    if w.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let n = w.ncols();
    let gram = w.t().dot(&w);
    let mut rng = seeding::rng_from(POWER_ITERATION_SEED);
    let mut v: Array1<f64> = Array1::from_shape_fn(n, |_| rng.sample(StandardNormal));
    let norm0 = vector_norm(v.view(), NormOrder::L2);
    v /= norm0;
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_MAX {
        let gv = gram.dot(&v);
        let next = vector_norm(gv.view(), NormOrder::L2);
        if next == 0.0 {
            // v landed in the null space; restart from a fresh direction.
            v = Array1::from_shape_fn(n, |_| rng.sample(StandardNormal));
            let nv = vector_norm(v.view(), NormOrder::L2);
            v /= nv;
            continue;
        }
        let converged = (next - lambda).abs() <= POWER_ITERATION_TOL * next.max(1.0);
        lambda = next;
        v = gv / next;
        if converged {
            return Ok(lambda.sqrt());
        }
    }
    let residual = {
        let gv = gram.dot(&v);
        vector_norm((&gv - &(&v * lambda)).view(), NormOrder::L2) / lambda.max(1.0)
    };
    Err(Error::PowerIterationDiverged {
        iterations: POWER_ITERATION_MAX,
        residual,
    })
}

/// Lipschitz constants of the two layers.
///
/// MLP: `L1 = ‖W1‖_p` (the representation is pre-ReLU, so the first-layer map
/// is exactly the affine map) and `L2 = ‖W2‖_p` (ReLU is 1-Lipschitz).
/// LR: the representation is the logits themselves, `L1 = 1` for the identity
/// leg and `L2 = ‖W1‖_p` for the map onto the logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerLipschitz {
    pub l1: f64,
    pub l2: f64,
    /// Set when either constant is zero (zero weight matrix).
    pub degenerate: bool,
}

pub fn layer_lipschitz(model: &ModelArtifact, p: NormOrder) -> Result<LayerLipschitz> {
    let (l1, l2) = match model.kind {
        ModelKind::Mlp => (
            operator_norm(model.w1.view(), p)?,
            operator_norm(model.w2.as_ref().expect("mlp has w2").view(), p)?,
        ),
        ModelKind::LogisticRegression => (1.0, operator_norm(model.w1.view(), p)?),
    };
    Ok(LayerLipschitz {
        l1,
        l2,
        degenerate: l1 == 0.0 || l2 == 0.0,
    })
}

/// Per-(point, method) bound check. `bound_ris_composite` chains both bounds
/// onto ROS and is reported, never asserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub point_id: usize,
    pub method: Method,
    pub p: NormOrder,
    pub l1: f64,
    pub l2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ris: f64,
    pub rrs: f64,
    pub ros: f64,
    pub bound_ris: f64,
    pub bound_rrs: f64,
    pub bound_ris_composite: f64,
    pub slack_ris: Option<f64>,
    pub slack_rrs: Option<f64>,
    pub violated_ris: bool,
    pub violated_rrs: bool,
}

/// Checks `RIS ≤ λ₁L₁·RRS` and `RRS ≤ λ₂L₂·ROS` for every record.
///
/// `anchors` holds one row per `point_id`. Records must come from the same
/// neighborhoods/explanations pass and be computed in norm-ratio mode;
/// records with an undefined metric are skipped.
pub fn verify_bounds(
    records: &[StabilityRecord],
    anchors: &Array2<f64>,
    model: &ModelArtifact,
    tol: f64,
) -> Result<Vec<BoundRecord>> {
    let mut out = Vec::with_capacity(records.len());
    let mut lipschitz_cache: BTreeMap<&'static str, LayerLipschitz> = BTreeMap::new();
    for record in records {
        if record.denom_mode != DenomMode::NormRatio {
            return Err(Error::InvalidParameter(
                "bound verification requires metrics computed in norm-ratio mode".into(),
            ));
        }
        let (ris, rrs, ros) = match (record.ris, record.rrs, record.ros) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue,
        };
        let p = record.p;
        let lips = match lipschitz_cache.get(p.label()) {
            Some(l) => *l,
            None => {
                let l = layer_lipschitz(model, p)?;
                lipschitz_cache.insert(p.label(), l);
                l
            }
        };
        if record.point_id >= anchors.nrows() {
            return Err(Error::InvalidParameter(format!(
                "record point_id {} has no anchor row",
                record.point_id
            )));
        }
        let x = anchors.row(record.point_id);
        let h1 = model.representation(x)?;
        let h1_norm = vector_norm(h1.view(), p);
        let x_norm = vector_norm(x.view(), p);
        let lambda1 = h1_norm / x_norm;
        let lambda2 = h1_norm;
        let bound_ris = lambda1 * lips.l1 * rrs;
        let bound_rrs = lambda2 * lips.l2 * ros;
        let bound_ris_composite = lambda1 * lambda2 * lips.l1 * lips.l2 * ros;
        let slack = |bound: f64, empirical: f64| {
            (empirical > 0.0 && bound.is_finite()).then(|| bound / empirical)
        };
        out.push(BoundRecord {
            point_id: record.point_id,
            method: record.method,
            p,
            l1: lips.l1,
            l2: lips.l2,
            lambda1,
            lambda2,
            ris,
            rrs,
            ros,
            bound_ris,
            bound_rrs,
            bound_ris_composite,
            slack_ris: slack(bound_ris, ris),
            slack_rrs: slack(bound_rrs, rrs),
            violated_ris: ris > bound_ris * (1.0 + tol) + tol,
            violated_rrs: rrs > bound_rrs * (1.0 + tol) + tol,
        });
    }
    Ok(out)
}

/// Aggregate statistics over one stream of slack ratios (bound / empirical).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackStats {
    pub count: usize,
    /// Records whose slack is undefined (zero empirical metric).
    pub undefined: usize,
    pub violations: usize,
    pub geometric_mean: Option<f64>,
    /// Mean of ln(slack), the log-space aggregate behind the geometric mean.
    pub mean_ln: Option<f64>,
    pub median: Option<f64>,
}

fn slack_stats(slacks: &[Option<f64>], violations: usize) -> SlackStats {
    let mut finite: Vec<f64> = slacks
        .iter()
        .filter_map(|s| s.filter(|v| v.is_finite() && *v > 0.0))
        .collect();
    let undefined = slacks.len() - finite.len();
    if finite.is_empty() {
        return SlackStats {
            count: 0,
            undefined,
            violations,
            geometric_mean: None,
            mean_ln: None,
            median: None,
        };
    }
    finite.sort_by(|a, b| a.partial_cmp(b).expect("finite slacks"));
    let mean_ln = finite.iter().map(|v| v.ln()).sum::<f64>() / finite.len() as f64;
    let mid = finite.len() / 2;
    let median = if finite.len() % 2 == 1 {
        finite[mid]
    } else {
        0.5 * (finite[mid - 1] + finite[mid])
    };
    SlackStats {
        count: finite.len(),
        undefined,
        violations,
        geometric_mean: Some(mean_ln.exp()),
        mean_ln: Some(mean_ln),
        median: Some(median),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTightness {
    pub method: Method,
    pub ris_vs_rrs: SlackStats,
    pub rrs_vs_ros: SlackStats,
}

/// Per-method and overall slack aggregates of a bound-verification pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessSummary {
    pub per_method: Vec<MethodTightness>,
    pub overall_ris_vs_rrs: SlackStats,
    pub overall_rrs_vs_ros: SlackStats,
    pub total_violations: usize,
}

pub fn tightness_summary(records: &[BoundRecord]) -> TightnessSummary {
    let mut by_method: BTreeMap<Method, Vec<&BoundRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let collect = |rs: &[&BoundRecord]| {
        let ris_slacks: Vec<Option<f64>> = rs.iter().map(|r| r.slack_ris).collect();
        let rrs_slacks: Vec<Option<f64>> = rs.iter().map(|r| r.slack_rrs).collect();
        let v_ris = rs.iter().filter(|r| r.violated_ris).count();
        let v_rrs = rs.iter().filter(|r| r.violated_rrs).count();
        (
            slack_stats(&ris_slacks, v_ris),
            slack_stats(&rrs_slacks, v_rrs),
        )
    };
    let per_method: Vec<MethodTightness> = by_method
        .iter()
        .map(|(method, rs)| {
            let (a, b) = collect(rs);
            MethodTightness {
                method: *method,
                ris_vs_rrs: a,
                rrs_vs_ros: b,
            }
        })
        .collect();
    let all: Vec<&BoundRecord> = records.iter().collect();
    let (overall_a, overall_b) = collect(&all);
    let total_violations = records
        .iter()
        .filter(|r| r.violated_ris || r.violated_rrs)
        .count();
    TightnessSummary {
        per_method,
        overall_ris_vs_rrs: overall_a,
        overall_rrs_vs_ros: overall_b,
        total_violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;
    use ndarray::array;

    #[test]
    fn operator_norm_identity_is_one() {
        let eye = Array2::eye(4);
        for p in [NormOrder::L1, NormOrder::L2, NormOrder::LInf] {
            assert!((operator_norm(eye.view(), p).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_norm_diagonal_picks_largest() {
        let w = array![[3.0, 0.0], [0.0, 1.0]];
        assert!((operator_norm(w.view(), NormOrder::L2).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_norms_match_hand_sums() {
        let w = array![[1.0, -2.0], [3.0, 4.0]];
        assert_eq!(operator_norm(w.view(), NormOrder::L1).unwrap(), 6.0);
        assert_eq!(operator_norm(w.view(), NormOrder::LInf).unwrap(), 7.0);
    }

    #[test]
    fn spectral_norm_of_zero_matrix_is_zero() {
        let w = Array2::zeros((3, 5));
        assert_eq!(operator_norm(w.view(), NormOrder::L2).unwrap(), 0.0);
    }

    #[test]
    fn scaling_by_powers_of_two_scales_norm_exactly() {
        let mut rng = seeding::rng_from(8);
        let w = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
        for p in [NormOrder::L1, NormOrder::L2, NormOrder::LInf] {
            let base = operator_norm(w.view(), p).unwrap();
            for c in [2.0, 0.5] {
                let scaled = operator_norm((&w * c).view(), p).unwrap();
                assert_eq!(scaled, c * base, "p={p:?}, c={c}");
            }
            let tripled = operator_norm((&w * 3.0).view(), p).unwrap();
            assert!((tripled - 3.0 * base).abs() / (3.0 * base) < 1e-12);
        }
    }

    #[test]
    fn spectral_norm_upper_bounds_random_witnesses() {
        let mut rng = seeding::rng_from(19);
        let w = Array2::from_shape_fn((8, 5), |_| rng.gen_range(-2.0..2.0));
        let sigma = operator_norm(w.view(), NormOrder::L2).unwrap();
        for _ in 0..1000 {
            let mut v: Array1<f64> = Array1::from_shape_fn(5, |_| rng.sample(StandardNormal));
            let norm = vector_norm(v.view(), NormOrder::L2);
            v /= norm;
            let image = vector_norm(w.dot(&v).view(), NormOrder::L2);
            assert!(image <= sigma + 1e-9, "witness {image} exceeds sigma {sigma}");
        }
    }

    #[test]
    fn layer_lipschitz_mlp_and_lr() {
        let mlp = fixtures::mlp_with_weights(
            Array2::eye(2) * 2.0,
            Array1::zeros(2),
            array![[1.0, 0.0], [0.0, 1.0]],
            Array1::zeros(2),
        );
        let l = layer_lipschitz(&mlp, NormOrder::L2).unwrap();
        assert!((l.l1 - 2.0).abs() < 1e-9);
        assert!((l.l2 - 1.0).abs() < 1e-9);
        assert!(!l.degenerate);

        let degenerate = fixtures::mlp_with_weights(
            Array2::eye(2),
            Array1::zeros(2),
            Array2::zeros((2, 2)),
            Array1::zeros(2),
        );
        let ld = layer_lipschitz(&degenerate, NormOrder::L2).unwrap();
        assert_eq!(ld.l2, 0.0);
        assert!(ld.degenerate);

        let lr = fixtures::lr_with_weights(array![[3.0, 0.0], [0.0, 0.0]], Array1::zeros(2));
        let llr = layer_lipschitz(&lr, NormOrder::L2).unwrap();
        assert_eq!(llr.l1, 1.0);
        assert!((llr.l2 - 3.0).abs() < 1e-9);
    }

    fn record(
        point_id: usize,
        ris: f64,
        rrs: f64,
        ros: f64,
        mode: DenomMode,
    ) -> StabilityRecord {
        StabilityRecord {
            point_id,
            method: Method::VanillaGrad,
            denom_mode: mode,
            p: NormOrder::L2,
            ris: Some(ris),
            rrs: Some(rrs),
            ros: Some(ros),
            lipschitz_eq1: None,
            argmax_neighbor_ris: None,
            argmax_neighbor_rrs: None,
            argmax_neighbor_ros: None,
            skipped_ris: 0,
            skipped_rrs: 0,
            skipped_ros: 0,
            per_neighbor_ris: None,
            per_neighbor_rrs: None,
            per_neighbor_ros: None,
            config_hash: String::new(),
        }
    }

    #[test]
    fn verify_bounds_identity_layer_equality_case() {
        // Identity first layer: λ₁ = 1, L₁ = 1, and RIS = RRS, so the RIS
        // bound holds with equality under the ≤-with-tolerance semantics.
        let model = fixtures::identity_first_layer_mlp(
            2,
            array![[0.7, -0.1], [0.2, 0.4]],
            array![0.0, 0.0],
        );
        let anchors = array![[3.0, 4.0]];
        let records = vec![record(0, 1.5, 1.5, 0.9, DenomMode::NormRatio)];
        let out = verify_bounds(&records, &anchors, &model, 1e-9).unwrap();
        assert_eq!(out.len(), 1);
        let r = &out[0];
        assert!((r.lambda1 - 1.0).abs() < 1e-12);
        assert!((r.l1 - 1.0).abs() < 1e-9);
        assert!((r.bound_ris - 1.5).abs() < 1e-9);
        assert!(!r.violated_ris);
        // λ₁ definition check: λ₁·‖x‖ = ‖h₁(x)‖ to 1e−12.
        let h1 = model.representation(anchors.row(0)).unwrap();
        let h1_norm = vector_norm(h1.view(), NormOrder::L2);
        let x_norm = vector_norm(anchors.row(0), NormOrder::L2);
        assert!((r.lambda1 * x_norm - h1_norm).abs() < 1e-12);
    }

    #[test]
    fn verify_bounds_zero_metrics_hold_trivially() {
        let model = fixtures::identity_first_layer_mlp(
            2,
            array![[1.0, 0.0], [0.0, 1.0]],
            array![0.0, 0.0],
        );
        let anchors = array![[1.0, 1.0]];
        let records = vec![record(0, 0.0, 0.0, 0.0, DenomMode::NormRatio)];
        let out = verify_bounds(&records, &anchors, &model, 1e-9).unwrap();
        assert!(!out[0].violated_ris);
        assert!(!out[0].violated_rrs);
        assert_eq!(out[0].slack_ris, None);
    }

    #[test]
    fn verify_bounds_flags_a_genuine_violation() {
        let model = fixtures::identity_first_layer_mlp(
            2,
            array![[1.0, 0.0], [0.0, 1.0]],
            array![0.0, 0.0],
        );
        let anchors = array![[1.0, 1.0]];
        // λ₁L₁ = 1, so ris > rrs must be flagged.
        let records = vec![record(0, 2.0, 1.0, 1.0, DenomMode::NormRatio)];
        let out = verify_bounds(&records, &anchors, &model, 1e-9).unwrap();
        assert!(out[0].violated_ris);
        assert_eq!(out[0].slack_ris, Some(0.5));
    }

    #[test]
    fn verify_bounds_rejects_elementwise_records() {
        let model = fixtures::identity_first_layer_mlp(
            2,
            array![[1.0, 0.0], [0.0, 1.0]],
            array![0.0, 0.0],
        );
        let anchors = array![[1.0, 1.0]];
        let records = vec![record(0, 1.0, 1.0, 1.0, DenomMode::Elementwise)];
        assert!(verify_bounds(&records, &anchors, &model, 1e-9).is_err());
    }

    #[test]
    fn tightness_summary_hand_aggregates() {
        let model = fixtures::identity_first_layer_mlp(
            2,
            array![[1.0, 0.0], [0.0, 1.0]],
            array![0.0, 0.0],
        );
        let anchors = array![[1.0, 1.0], [2.0, 0.0]];
        // Constant slacks of 2: bound = 2·empirical everywhere.
        // λ₁L₁ = 1 for this model, so rrs = 2·ris gives slack_ris = 2.
        let records = vec![
            record(0, 1.0, 2.0, 4.0, DenomMode::NormRatio),
            record(1, 3.0, 6.0, 12.0, DenomMode::NormRatio),
        ];
        let out = verify_bounds(&records, &anchors, &model, 1e-9).unwrap();
        let summary = tightness_summary(&out);
        let s = &summary.overall_ris_vs_rrs;
        assert!((s.geometric_mean.unwrap() - 2.0).abs() < 1e-12);
        assert!((s.mean_ln.unwrap() - 2.0_f64.ln()).abs() < 1e-12);
        assert!((s.median.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(s.violations, 0);

        // Mixed slacks {1, 4} → geometric mean 2.
        let stats = slack_stats(&[Some(1.0), Some(4.0)], 0);
        assert!((stats.geometric_mean.unwrap() - 2.0).abs() < 1e-12);

        // A single record summarizes to itself.
        let single = tightness_summary(&out[..1]);
        assert_eq!(
            single.overall_ris_vs_rrs.median,
            out[0].slack_ris
        );
    }
}
