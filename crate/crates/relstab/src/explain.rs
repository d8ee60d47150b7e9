//! The seven attribution methods, behind one record type, plus a brute-force
//! Shapley oracle for testing.
//!
//! Gradient-based methods read the analytic input gradient of the
//! target-class logit. LIME fits a weighted ridge surrogate to the
//! target-class probability; kernel SHAP solves the Shapley-kernel weighted
//! least squares on the target-class logit with the efficiency constraint
//! eliminated exactly. Every method is a pure function of
//! `(model, x, hyperparameters, seed)`.

use crate::error::{Error, Result};
use crate::model::ModelArtifact;
use crate::seeding;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    VanillaGrad,
    GradXInput,
    SmoothGrad,
    IntegratedGradients,
    Lime,
    KernelShap,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::VanillaGrad,
        Method::GradXInput,
        Method::SmoothGrad,
        Method::IntegratedGradients,
        Method::Lime,
        Method::KernelShap,
        Method::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::VanillaGrad => "vanilla_grad",
            Method::GradXInput => "grad_x_input",
            Method::SmoothGrad => "smooth_grad",
            Method::IntegratedGradients => "integrated_gradients",
            Method::Lime => "lime",
            Method::KernelShap => "kernel_shap",
            Method::Random => "random",
        }
    }

    /// Methods that consume model gradients directly.
    pub fn is_gradient_based(&self) -> bool {
        matches!(
            self,
            Method::VanillaGrad
                | Method::GradXInput
                | Method::SmoothGrad
                | Method::IntegratedGradients
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Method selection plus hyperparameters, as configured for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ExplainerSpec {
    VanillaGrad,
    GradXInput,
    SmoothGrad {
        #[serde(default = "defaults::smoothgrad_n")]
        n: usize,
        #[serde(default = "defaults::noise_std")]
        std: f64,
    },
    IntegratedGradients {
        #[serde(default = "defaults::ig_steps")]
        steps: usize,
    },
    Lime {
        #[serde(default = "defaults::lime_samples")]
        n_samples: usize,
        #[serde(default = "defaults::lime_kernel_width")]
        kernel_width: f64,
        #[serde(default = "defaults::noise_std")]
        std: f64,
        #[serde(default = "defaults::lime_ridge")]
        ridge: f64,
    },
    KernelShap {
        #[serde(default = "defaults::shap_samples")]
        n_samples: usize,
    },
    Random,
}

mod defaults {
    pub fn smoothgrad_n() -> usize {
        50
    }
    pub fn noise_std() -> f64 {
        0.05
    }
    pub fn ig_steps() -> usize {
        64
    }
    pub fn lime_samples() -> usize {
        1000
    }
    pub fn lime_kernel_width() -> f64 {
        0.75
    }
    pub fn lime_ridge() -> f64 {
        1e-3
    }
    pub fn shap_samples() -> usize {
        500
    }
}

impl ExplainerSpec {
    pub fn method(&self) -> Method {
        match self {
            ExplainerSpec::VanillaGrad => Method::VanillaGrad,
            ExplainerSpec::GradXInput => Method::GradXInput,
            ExplainerSpec::SmoothGrad { .. } => Method::SmoothGrad,
            ExplainerSpec::IntegratedGradients { .. } => Method::IntegratedGradients,
            ExplainerSpec::Lime { .. } => Method::Lime,
            ExplainerSpec::KernelShap { .. } => Method::KernelShap,
            ExplainerSpec::Random => Method::Random,
        }
    }

    /// All seven methods at their default hyperparameters.
    pub fn default_suite() -> Vec<ExplainerSpec> {
        vec![
            ExplainerSpec::VanillaGrad,
            ExplainerSpec::GradXInput,
            ExplainerSpec::SmoothGrad {
                n: defaults::smoothgrad_n(),
                std: defaults::noise_std(),
            },
            ExplainerSpec::IntegratedGradients {
                steps: defaults::ig_steps(),
            },
            ExplainerSpec::Lime {
                n_samples: defaults::lime_samples(),
                kernel_width: defaults::lime_kernel_width(),
                std: defaults::noise_std(),
                ridge: defaults::lime_ridge(),
            },
            ExplainerSpec::KernelShap {
                n_samples: defaults::shap_samples(),
            },
            ExplainerSpec::Random,
        ]
    }
}

/// A per-feature importance vector tagged with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub values: Array1<f64>,
    pub method: Method,
    pub target: usize,
    pub hyper: ExplainerSpec,
    pub seed: u64,
}

impl Attribution {
    fn new(values: Array1<f64>, target: usize, hyper: ExplainerSpec, seed: u64) -> Self {
        Attribution {
            method: hyper.method(),
            values,
            target,
            hyper,
            seed,
        }
    }

    /// JSON record: `{method, target, seed, hyper, values[]}`.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "target": self.target,
            "seed": self.seed,
            "hyper": self.hyper,
            "values": self.values.to_vec(),
        })
    }
}

/// |gradient of the target logit|, elementwise.
pub fn vanilla_grad(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
) -> Result<Attribution> {
    let values = model.input_gradient(x, target)?.mapv(f64::abs);
    Ok(Attribution::new(values, target, ExplainerSpec::VanillaGrad, 0))
}

/// gradient ⊙ x, signed.
pub fn grad_x_input(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
) -> Result<Attribution> {
    let values = model.input_gradient(x, target)? * &x;
    Ok(Attribution::new(values, target, ExplainerSpec::GradXInput, 0))
}

/// Mean of |gradient| over `n` Gaussian draws around `x`.
///
/// `std = 0` short-circuits to the vanilla gradient so the two agree bitwise.
pub fn smoothgrad(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
    n: usize,
    std: f64,
    seed: u64,
) -> Result<Attribution> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "smoothgrad needs at least one sample".into(),
        ));
    }
    let hyper = ExplainerSpec::SmoothGrad { n, std };
    if std == 0.0 {
        let values = model.input_gradient(x, target)?.mapv(f64::abs);
        return Ok(Attribution::new(values, target, hyper, seed));
    }
    let mut rng = seeding::rng_from(seed);
    let mut sum = Array1::zeros(x.len());
    let mut probe = x.to_owned();
    for _ in 0..n {
        for (p, &orig) in probe.iter_mut().zip(x.iter()) {
            let g: f64 = rng.sample(StandardNormal);
            *p = orig + std * g;
        }
        sum += &model.input_gradient(probe.view(), target)?.mapv(f64::abs);
    }
    Ok(Attribution::new(sum / n as f64, target, hyper, seed))
}

/// Integrated gradients along the straight path from `baseline` to `x`,
/// midpoint Riemann rule.
pub fn integrated_gradients(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
    baseline: ArrayView1<'_, f64>,
    steps: usize,
) -> Result<Attribution> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "integrated gradients needs steps >= 1".into(),
        ));
    }
    if baseline.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: baseline.len(),
        });
    }
    let delta = &x - &baseline;
    let mut grad_sum = Array1::zeros(x.len());
    for k in 1..=steps {
        let t = (k as f64 - 0.5) / steps as f64;
        let point = &baseline + &(&delta * t);
        grad_sum += &model.input_gradient(point.view(), target)?;
    }
    let values = delta * grad_sum / steps as f64;
    Ok(Attribution::new(
        values,
        target,
        ExplainerSpec::IntegratedGradients { steps },
        0,
    ))
}

/// Weighted ridge surrogate of the target-class probability over Gaussian
/// perturbations; the coefficient vector is the attribution.
pub fn lime(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
    n_samples: usize,
    kernel_width: f64,
    std: f64,
    ridge: f64,
    seed: u64,
) -> Result<Attribution> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter(
            "lime needs at least one sample".into(),
        ));
    }
    if kernel_width <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lime kernel width must be positive, got {kernel_width}"
        )));
    }
    let d = x.len();
    let mut rng = seeding::rng_from(seed);

    // Normal equations for [intercept, coefficients] with ridge on the
    // coefficient block only: (AᵀWA + ridge·R) β = AᵀW y.
    let mut ata = Array2::zeros((d + 1, d + 1));
    let mut aty = Array1::zeros(d + 1);
    let mut z = Array1::zeros(d);
    let mut design_row = Array1::zeros(d + 1);
    for _ in 0..n_samples {
        let mut dist2 = 0.0;
        for (zi, &xi) in z.iter_mut().zip(x.iter()) {
            let g: f64 = rng.sample(StandardNormal);
            *zi = xi + std * g;
            dist2 += (*zi - xi) * (*zi - xi);
        }
        let weight = (-dist2 / (kernel_width * kernel_width)).exp();
        let response = model.probability(z.view(), target)?;
        design_row[0] = 1.0;
        design_row.slice_mut(ndarray::s![1..]).assign(&z);
        for i in 0..=d {
            let wi = weight * design_row[i];
            for j in i..=d {
                ata[[i, j]] += wi * design_row[j];
            }
            aty[i] += wi * response;
        }
    }
    for i in 0..=d {
        for j in 0..i {
            ata[[i, j]] = ata[[j, i]];
        }
    }
    for i in 1..=d {
        ata[[i, i]] += ridge;
    }
    let beta = crate::linalg::solve(ata, aty)?;
    let values = beta.slice(ndarray::s![1..]).to_owned();
    Ok(Attribution::new(
        values,
        target,
        ExplainerSpec::Lime {
            n_samples,
            kernel_width,
            std,
            ridge,
        },
        seed,
    ))
}

fn shapley_kernel_weight(d: usize, size: usize) -> f64 {
    // π(S) = (d−1) / (C(d,|S|) · |S| · (d−|S|)) for 0 < |S| < d.
    let mut binom = 1.0;
    for i in 0..size {
        binom *= (d - i) as f64 / (i + 1) as f64;
    }
    (d as f64 - 1.0) / (binom * size as f64 * (d - size) as f64)
}

fn masked_logit(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    baseline: ArrayView1<'_, f64>,
    mask: &[bool],
    target: usize,
) -> Result<f64> {
    let z = Array1::from_shape_fn(x.len(), |i| if mask[i] { x[i] } else { baseline[i] });
    model.logit(z.view(), target)
}

/// Kernel SHAP on the target-class logit.
///
/// All coalitions are enumerated whenever `2^d − 2 ≤ n_samples`; otherwise
/// coalitions are sampled uniformly. The efficiency constraint
/// `Σφ = h(x) − h(baseline)` is eliminated exactly, not fitted.
pub fn kernel_shap(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
    baseline: ArrayView1<'_, f64>,
    n_samples: usize,
    seed: u64,
) -> Result<Attribution> {
    let d = x.len();
    if d < 2 {
        return Err(Error::InvalidParameter(format!(
            "kernel shap needs d >= 2, got {d}"
        )));
    }
    if baseline.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: baseline.len(),
        });
    }
    let hyper = ExplainerSpec::KernelShap { n_samples };
    let v_empty = model.logit(baseline, target)?;
    let v_full = model.logit(x, target)?;
    let total = v_full - v_empty;

    // Collect (mask, kernel weight) for the non-trivial coalitions.
    let exhaustive = d < usize::BITS as usize && (1usize << d).saturating_sub(2) <= n_samples;
    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut distinct: HashSet<Vec<bool>> = HashSet::new();
    if exhaustive {
        for bits in 1..(1usize << d) - 1 {
            let mask: Vec<bool> = (0..d).map(|i| bits >> i & 1 == 1).collect();
            let size = mask.iter().filter(|&&b| b).count();
            weights.push(shapley_kernel_weight(d, size));
            distinct.insert(mask.clone());
            masks.push(mask);
        }
    } else {
        let mut rng = seeding::rng_from(seed);
        let mut attempts = 0usize;
        while masks.len() < n_samples && attempts < 100 * n_samples {
            attempts += 1;
            let mask: Vec<bool> = (0..d).map(|_| rng.gen::<bool>()).collect();
            let size = mask.iter().filter(|&&b| b).count();
            if size == 0 || size == d {
                continue;
            }
            weights.push(shapley_kernel_weight(d, size));
            distinct.insert(mask.clone());
            masks.push(mask);
        }
    }
    // The empty and full coalitions are always included (as constraints).
    if distinct.len() + 2 < d + 2 {
        return Err(Error::TooFewCoalitions {
            got: distinct.len() + 2,
            need: d + 2,
        });
    }

    // Eliminate φ_{d−1} = total − Σ_{i<d−1} φ_i, then solve the weighted
    // normal equations over the remaining d−1 unknowns.
    let free = d - 1;
    let mut ata = Array2::zeros((free, free));
    let mut aty = Array1::zeros(free);
    let mut row = vec![0.0; free];
    for (mask, &weight) in masks.iter().zip(weights.iter()) {
        let v = masked_logit(model, x, baseline, mask, target)?;
        let last_in = mask[d - 1];
        let offset = if last_in { total } else { 0.0 };
        let y = v - v_empty - offset;
        for i in 0..free {
            row[i] = f64::from(mask[i] as u8) - f64::from(last_in as u8);
        }
        for i in 0..free {
            if row[i] == 0.0 {
                continue;
            }
            let wi = weight * row[i];
            for j in 0..free {
                ata[[i, j]] += wi * row[j];
            }
            aty[i] += wi * y;
        }
    }
    let beta = crate::linalg::solve(ata, aty)?;
    let mut values = Array1::zeros(d);
    let mut partial = 0.0;
    for i in 0..free {
        values[i] = beta[i];
        partial += beta[i];
    }
    values[d - 1] = total - partial;
    Ok(Attribution::new(values, target, hyper, seed))
}

/// Exact Shapley values of the masking game on the target-class logit,
/// enumerating all 2^d coalitions. Test oracle; `d ≤ 12`.
pub fn exact_shapley_oracle(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
    baseline: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let d = x.len();
    if d == 0 || d > 12 {
        return Err(Error::InvalidParameter(format!(
            "exact shapley oracle supports 1 <= d <= 12, got {d}"
        )));
    }
    if baseline.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: baseline.len(),
        });
    }
    let n_masks = 1usize << d;
    let mut game = vec![0.0; n_masks];
    let mut mask = vec![false; d];
    for (bits, slot) in game.iter_mut().enumerate() {
        for (i, m) in mask.iter_mut().enumerate() {
            *m = bits >> i & 1 == 1;
        }
        *slot = masked_logit(model, x, baseline, &mask, target)?;
    }
    let mut factorial = vec![1.0; d + 1];
    for i in 1..=d {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut phi = Array1::zeros(d);
    for i in 0..d {
        let bit = 1usize << i;
        for bits in 0..n_masks {
            if bits & bit != 0 {
                continue;
            }
            let s = (bits as u64).count_ones() as usize;
            let coeff = factorial[s] * factorial[d - s - 1] / factorial[d];
            phi[i] += coeff * (game[bits | bit] - game[bits]);
        }
    }
    Ok(phi)
}

/// Control method: d i.i.d. draws from the standard normal.
pub fn random_baseline(d: usize, seed: u64) -> Attribution {
    let mut rng = seeding::rng_from(seed);
    let values = Array1::from_shape_fn(d, |_| rng.sample(StandardNormal));
    Attribution::new(values, 0, ExplainerSpec::Random, seed)
}

/// Dispatches one configured explainer. `baseline` is the shared IG/SHAP
/// baseline (train feature means). `target` is recorded on every attribution,
/// including the model-independent random control.
pub fn explain(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
    spec: &ExplainerSpec,
    baseline: ArrayView1<'_, f64>,
    seed: u64,
) -> Result<Attribution> {
    let mut attribution = match *spec {
        ExplainerSpec::VanillaGrad => vanilla_grad(model, x, target)?,
        ExplainerSpec::GradXInput => grad_x_input(model, x, target)?,
        ExplainerSpec::SmoothGrad { n, std } => smoothgrad(model, x, target, n, std, seed)?,
        ExplainerSpec::IntegratedGradients { steps } => {
            integrated_gradients(model, x, target, baseline, steps)?
        }
        ExplainerSpec::Lime {
            n_samples,
            kernel_width,
            std,
            ridge,
        } => lime(model, x, target, n_samples, kernel_width, std, ridge, seed)?,
        ExplainerSpec::KernelShap { n_samples } => {
            kernel_shap(model, x, target, baseline, n_samples, seed)?
        }
        ExplainerSpec::Random => random_baseline(x.len(), seed),
    };
    attribution.target = target;
    Ok(attribution)
}
