//! Shared numeric plumbing: vector norms and a dense linear solver.
//!
//! Kept free of BLAS/LAPACK so the crate builds unchanged for wasm targets.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Norm order used by metrics and operator norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl NormOrder {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(NormOrder::L1),
            "2" => Ok(NormOrder::L2),
            "inf" | "Inf" | "INF" => Ok(NormOrder::LInf),
            other => Err(Error::InvalidParameter(format!(
                "norm order must be one of 1, 2, inf; got {other:?}"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NormOrder::L1 => "1",
            NormOrder::L2 => "2",
            NormOrder::LInf => "inf",
        }
    }
}

impl std::fmt::Display for NormOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// ℓ_p norm of a vector, p ∈ {1, 2, ∞}.
pub fn vector_norm(v: ArrayView1<'_, f64>, p: NormOrder) -> f64 {
    match p {
        NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::LInf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
    }
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
///
/// The systems solved here are small (surrogate regressions, kernel SHAP
/// normal equations), so a dense O(n³) solve is plenty.
pub fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols().max(b.len()),
        });
    }
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[[row, col]].abs() > a[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if a[[pivot, col]].abs() <= scale * 1e-13 {
            return Err(Error::SingularSystem);
        }
        if pivot != col {
            for k in 0..n {
                let tmp = a[[col, k]];
                a[[col, k]] = a[[pivot, k]];
                a[[pivot, k]] = tmp;
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[[row, k]] -= factor * a[[col, k]];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[[row, k]] * x[k];
        }
        x[row] = acc / a[[row, row]];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn norms_match_hand_values() {
        let v = array![3.0, -4.0];
        assert_eq!(vector_norm(v.view(), NormOrder::L1), 7.0);
        assert_eq!(vector_norm(v.view(), NormOrder::L2), 5.0);
        assert_eq!(vector_norm(v.view(), NormOrder::LInf), 4.0);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let x_true = array![1.5, -2.0];
        let b = a.dot(&x_true);
        let x = solve(a, b).unwrap();
        assert!((&x - &x_true).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn solve_rejects_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![1.0, 2.0];
        assert!(matches!(solve(a, b), Err(Error::SingularSystem)));
    }

    #[test]
    fn norm_order_round_trips_through_serde() {
        for p in [NormOrder::L1, NormOrder::L2, NormOrder::LInf] {
            let s = serde_json::to_string(&p).unwrap();
            let back: NormOrder = serde_json::from_str(&s).unwrap();
            assert_eq!(p, back);
        }
        assert_eq!(serde_json::to_string(&NormOrder::LInf).unwrap(), "\"inf\"");
    }
}
