//! Label-preserving perturbation neighborhoods.
//!
//! Candidates add Gaussian noise on continuous dimensions and flip binary
//! dimensions with a small probability; rejection sampling keeps only
//! candidates the model assigns the anchor's predicted label.

use crate::error::{Error, Result};
use crate::linalg::{vector_norm, NormOrder};
use crate::model::ModelArtifact;
use crate::seeding;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborhoodParams {
    /// Accepted perturbations per anchor.
    pub m: usize,
    /// Gaussian noise std on continuous dimensions (standardized space).
    pub std: f64,
    /// Independent flip probability per binary dimension.
    pub p_flip: f64,
    /// Rejection-sampling budget; 0 means `100·m`.
    pub max_attempts: usize,
}

impl Default for NeighborhoodParams {
    fn default() -> Self {
        NeighborhoodParams {
            m: 50,
            std: 0.05,
            p_flip: 0.03,
            max_attempts: 0,
        }
    }
}

impl NeighborhoodParams {
    pub fn attempts_budget(&self) -> usize {
        if self.max_attempts == 0 {
            100 * self.m
        } else {
            self.max_attempts
        }
    }
}

/// An anchor plus `m` accepted perturbations, all sharing the anchor's
/// predicted label.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub anchor: Array1<f64>,
    pub anchor_label: usize,
    /// m×d accepted perturbations.
    pub points: Array2<f64>,
    pub gen_params: NeighborhoodParams,
    pub seed: u64,
    /// Candidates drawn before `m` were accepted.
    pub attempts_used: usize,
}

impl Neighborhood {
    pub fn m(&self) -> usize {
        self.points.nrows()
    }

    /// Re-validates the label constraint against a model.
    pub fn recheck_labels(&self, model: &ModelArtifact) -> Result<()> {
        for (row, z) in self.points.rows().into_iter().enumerate() {
            if model.predict(z)? != self.anchor_label {
                return Err(Error::LabelInconsistentNeighborhood { row });
            }
        }
        Ok(())
    }

    /// Largest realized anchor-to-neighbor distance, the effective radius.
    pub fn max_distance(&self, p: NormOrder) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|z| perturbation_distance(self.anchor.view(), z, p))
            .fold(0.0, f64::max)
    }
}

/// ℓ_p distance between an anchor and a perturbation.
pub fn perturbation_distance(x: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>, p: NormOrder) -> f64 {
    vector_norm((&x - &z).view(), p)
}

/// Rejection-samples a label-preserving neighborhood around `x`.
///
/// `binary_mask[i]` marks dimension `i` as binary (flip with `p_flip`);
/// all other dimensions receive `N(0, std²)` noise. Fails with
/// [`Error::AcceptanceExhausted`] when the attempts budget runs out, in which
/// case the caller may skip the anchor.
pub fn sample_neighborhood(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    binary_mask: &[bool],
    params: &NeighborhoodParams,
    seed: u64,
) -> Result<Neighborhood> {
    if binary_mask.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: binary_mask.len(),
        });
    }
    if params.m == 0 {
        return Err(Error::InvalidParameter(
            "neighborhood size m must be positive".into(),
        ));
    }
    let anchor_label = model.predict(x)?;
    let budget = params.attempts_budget();
    let mut rng = seeding::rng_from(seed);
    let mut points = Array2::zeros((params.m, x.len()));
    let mut candidate = Array1::zeros(x.len());
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < params.m && attempts < budget {
        attempts += 1;
        for (i, (c, &xi)) in candidate.iter_mut().zip(x.iter()).enumerate() {
            if binary_mask[i] {
                let u: f64 = rng.gen();
                *c = if u < params.p_flip { 1.0 - xi } else { xi };
            } else {
                let g: f64 = rng.sample(StandardNormal);
                *c = xi + params.std * g;
            }
        }
        if model.predict(candidate.view())? == anchor_label {
            points.row_mut(accepted).assign(&candidate);
            accepted += 1;
        }
    }
    if accepted < params.m {
        return Err(Error::AcceptanceExhausted {
            accepted_so_far: accepted,
            requested: params.m,
            attempts,
        });
    }
    Ok(Neighborhood {
        anchor: x.to_owned(),
        anchor_label,
        points,
        gen_params: params.clone(),
        seed,
        attempts_used: attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;
    use ndarray::array;

    #[test]
    fn constant_model_accepts_everything() {
        let model = fixtures::constant_output_mlp(2, 4, array![1.0, 0.0]);
        let params = NeighborhoodParams {
            m: 25,
            ..NeighborhoodParams::default()
        };
        let nb =
            sample_neighborhood(&model, array![0.0, 0.0].view(), &[false, false], &params, 3)
                .unwrap();
        assert_eq!(nb.m(), 25);
        assert_eq!(nb.attempts_used, 25);
        nb.recheck_labels(&model).unwrap();
    }

    #[test]
    fn degenerate_noise_duplicates_the_anchor() {
        let model = fixtures::lr_with_weights(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0]);
        let params = NeighborhoodParams {
            m: 5,
            std: 0.0,
            p_flip: 0.0,
            max_attempts: 0,
        };
        let x = array![2.0, -1.0];
        let nb = sample_neighborhood(&model, x.view(), &[false, false], &params, 1).unwrap();
        for z in nb.points.rows() {
            assert_eq!(z, x.view());
        }
    }

    #[test]
    fn acceptance_rate_is_high_far_from_boundary() {
        // Margin 40·σ: essentially nothing flips label.
        let model = fixtures::lr_with_weights(array![[1.0, 0.0], [-1.0, 0.0]], array![0.0, 0.0]);
        let params = NeighborhoodParams {
            m: 10_000,
            std: 0.05,
            p_flip: 0.0,
            max_attempts: 20_000,
        };
        let nb = sample_neighborhood(&model, array![2.0, 0.0].view(), &[false, false], &params, 7)
            .unwrap();
        let rate = params.m as f64 / nb.attempts_used as f64;
        assert!(rate > 0.99, "acceptance rate {rate}");
    }

    #[test]
    fn exhaustion_reports_progress() {
        // Anchor exactly on the boundary with huge noise: most candidates flip.
        let model = fixtures::lr_with_weights(array![[50.0, 0.0], [-50.0, 0.0]], array![0.0, 0.0]);
        let params = NeighborhoodParams {
            m: 50,
            std: 10.0,
            p_flip: 0.0,
            max_attempts: 60,
        };
        let err =
            sample_neighborhood(&model, array![0.01, 0.0].view(), &[false, false], &params, 2)
                .unwrap_err();
        match err {
            Error::AcceptanceExhausted {
                accepted_so_far,
                requested,
                attempts,
            } => {
                assert!(accepted_so_far < requested);
                assert_eq!(attempts, 60);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn binary_flip_rate_matches_p_flip() {
        let model = fixtures::constant_output_mlp(4, 2, array![1.0, 0.0]);
        let params = NeighborhoodParams {
            m: 10_000,
            std: 0.05,
            p_flip: 0.03,
            max_attempts: 10_000,
        };
        let x = array![0.2, 1.0, 0.0, 1.0];
        let mask = [false, true, true, true];
        let nb = sample_neighborhood(&model, x.view(), &mask, &params, 11).unwrap();
        let k = 3.0;
        let mut flips = 0.0;
        for z in nb.points.rows() {
            for i in 1..4 {
                if z[i] != x[i] {
                    flips += 1.0;
                }
            }
        }
        let mean_flips = flips / params.m as f64;
        let se = (k * 0.03 * 0.97 / params.m as f64).sqrt();
        assert!(
            (mean_flips - 0.03 * k).abs() < 3.0 * se,
            "mean flips {mean_flips} vs expected {}",
            0.03 * k
        );
        // Binary values stay in {0, 1}.
        for z in nb.points.rows() {
            for i in 1..4 {
                assert!(z[i] == 0.0 || z[i] == 1.0);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let model = fixtures::lr_with_weights(array![[1.0, 1.0], [0.0, 0.0]], array![0.0, 0.0]);
        let params = NeighborhoodParams {
            m: 20,
            ..NeighborhoodParams::default()
        };
        let x = array![1.0, 1.0];
        let a = sample_neighborhood(&model, x.view(), &[false, false], &params, 5).unwrap();
        let b = sample_neighborhood(&model, x.view(), &[false, false], &params, 5).unwrap();
        assert_eq!(a.points, b.points);
        let c = sample_neighborhood(&model, x.view(), &[false, false], &params, 6).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn distance_hand_values() {
        let x = array![0.0, 0.0];
        let z = array![3.0, 4.0];
        assert_eq!(perturbation_distance(x.view(), x.view(), NormOrder::L2), 0.0);
        assert_eq!(perturbation_distance(x.view(), z.view(), NormOrder::L2), 5.0);
        assert_eq!(
            perturbation_distance(x.view(), z.view(), NormOrder::LInf),
            4.0
        );
        assert_eq!(perturbation_distance(x.view(), z.view(), NormOrder::L1), 7.0);
    }
}
