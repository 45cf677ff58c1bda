//! Analytic Hierarchy Process over the three resource criteria.
//!
//! Weights come either from an expert-supplied reciprocal pairwise matrix or
//! from a VM's observed demand profile. A profile becomes the consistent
//! matrix `a[i][j] = s[i] / s[j]` of its demand shares `s`, so profile-driven
//! weights reproduce the shares exactly and always pass the consistency check.

#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};

use crate::error::AhpError;
use crate::resource::{ResourceVector, WeightVector};

/// Random consistency index for a 3x3 matrix.
pub const RANDOM_INDEX_N3: f64 = 0.58;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
pub const DEFAULT_CR_LIMIT: f64 = 0.1;

const RECIPROCITY_TOLERANCE: f64 = 1e-9;

/// A positive reciprocal 3x3 comparison matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct PairwiseMatrix([[f64; 3]; 3]);

impl PairwiseMatrix {
    pub fn new(a: [[f64; 3]; 3]) -> Result<Self, AhpError> {
        for (i, row) in a.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() || x <= 0.0 {
                    return Err(AhpError::InvalidMatrix(format!("entry [{i}][{j}] = {x} is not positive")));
                }
            }
            if (a[i][i] - 1.0).abs() > RECIPROCITY_TOLERANCE {
                return Err(AhpError::InvalidMatrix(format!("diagonal [{i}][{i}] = {} is not 1", a[i][i])));
            }
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                if (a[j][i] - 1.0 / a[i][j]).abs() > RECIPROCITY_TOLERANCE {
                    return Err(AhpError::InvalidMatrix(format!(
                        "[{j}][{i}] = {} is not the reciprocal of [{i}][{j}] = {}",
                        a[j][i], a[i][j]
                    )));
                }
            }
        }
        Ok(PairwiseMatrix(a))
    }

    pub fn ones() -> Self {
        PairwiseMatrix([[1.0; 3]; 3])
    }

    /// Builds the matrix from the upper-triangle judgments `a01`, `a02`, `a12`.
    pub fn from_judgments(a01: f64, a02: f64, a12: f64) -> Result<Self, AhpError> {
        PairwiseMatrix::new([
            [1.0, a01, a02],
            [1.0 / a01, 1.0, a12],
            [1.0 / a02, 1.0 / a12, 1.0],
        ])
    }

    pub fn entries(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    fn mul(&self, w: &[f64; 3]) -> [f64; 3] {
        let a = &self.0;
        std::array::from_fn(|i| a[i][0] * w[0] + a[i][1] * w[1] + a[i][2] * w[2])
    }
}

impl TryFrom<[[f64; 3]; 3]> for PairwiseMatrix {
    type Error = AhpError;

    fn try_from(a: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        PairwiseMatrix::new(a)
    }
}

impl From<PairwiseMatrix> for [[f64; 3]; 3] {
    fn from(m: PairwiseMatrix) -> Self {
        m.0
    }
}

/// Mean observed demand of a VM or hotspot class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotspotProfile {
    pub avg_usage: ResourceVector,
}

impl HotspotProfile {
    pub fn new(avg_usage: ResourceVector) -> Self {
        HotspotProfile { avg_usage }
    }
}

/// The consistent ratio matrix of a profile's demand shares. A zero profile
/// maps to the all-ones matrix.
pub fn matrix_from_profile(p: &HotspotProfile) -> PairwiseMatrix {
    let total = p.avg_usage.sum_components();
    let s = p.avg_usage.to_array();
    // A zero share would make the ratios unbounded.
    if total.is_nan() || total <= 0.0 || s.iter().any(|x| *x <= 0.0) {
        if total > 0.0 {
            return matrix_from_shares(&floor_shares(s, total));
        }
        return PairwiseMatrix::ones();
    }
    matrix_from_shares(&s.map(|x| x / total))
}

/// Replaces zero shares by a small floor so a one-sided profile still yields a
/// valid positive matrix whose eigenvector is the (renormalized) share vector.
fn floor_shares(s: [f64; 3], total: f64) -> [f64; 3] {
    const FLOOR: f64 = 1e-6;
    let raw = s.map(|x| (x / total).max(FLOOR));
    let sum: f64 = raw.iter().sum();
    raw.map(|x| x / sum)
}

fn matrix_from_shares(s: &[f64; 3]) -> PairwiseMatrix {
    let a = std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 1.0 } else { s[i] / s[j] }));
    PairwiseMatrix(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSolution {
    pub weights: WeightVector,
    pub lambda_max: f64,
    pub iterations: usize,
}

/// Power iteration from the uniform vector, renormalized to sum one each step,
/// stopping once successive iterates differ by less than `tol` in max-norm.
pub fn principal_eigenvector(m: &PairwiseMatrix, tol: f64) -> Result<EigenSolution, AhpError> {
    principal_eigenvector_capped(m, tol, DEFAULT_MAX_ITERATIONS)
}

pub fn principal_eigenvector_capped(
    m: &PairwiseMatrix,
    tol: f64,
    max_iterations: usize,
) -> Result<EigenSolution, AhpError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(AhpError::InvalidTolerance(tol));
    }
    let mut w = [1.0 / 3.0; 3];
    for iteration in 1..=max_iterations {
        let v = m.mul(&w);
        let total: f64 = v.iter().sum();
        let next = v.map(|x| x / total);
        let delta = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        if delta < tol {
            let mw = m.mul(&w);
            let lambda_max = (0..3).map(|i| mw[i] / w[i]).sum::<f64>() / 3.0;
            let weights = WeightVector::normalized(w)
                .map_err(|_| AhpError::NonConvergence { iterations: iteration, last: w })?;
            return Ok(EigenSolution { weights, lambda_max, iterations: iteration });
        }
    }
    Err(AhpError::NonConvergence { iterations: max_iterations, last: w })
}

/// `CR = ((lambda_max - 3) / 2) / 0.58`.
pub fn consistency_ratio(lambda_max: f64) -> f64 {
    let ci = (lambda_max - 3.0) / 2.0;
    // lambda_max sits a few ulps under 3 for perfectly consistent input.
    (ci / RANDOM_INDEX_N3).max(0.0)
}

/// What the weights are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AhpInput {
    Profile(ResourceVector),
    Matrix(PairwiseMatrix),
}

impl From<HotspotProfile> for AhpInput {
    fn from(p: HotspotProfile) -> Self {
        AhpInput::Profile(p.avg_usage)
    }
}

impl From<PairwiseMatrix> for AhpInput {
    fn from(m: PairwiseMatrix) -> Self {
        AhpInput::Matrix(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AhpOutcome {
    pub weights: WeightVector,
    pub lambda_max: f64,
    pub cr: f64,
}

/// Derives weights and rejects them when the consistency ratio reaches
/// `cr_limit`.
pub fn derive_weights(input: impl Into<AhpInput>, tol: f64, cr_limit: f64) -> Result<AhpOutcome, AhpError> {
    let matrix = match input.into() {
        AhpInput::Profile(avg_usage) => matrix_from_profile(&HotspotProfile { avg_usage }),
        AhpInput::Matrix(m) => m,
    };
    let sol = principal_eigenvector(&matrix, tol)?;
    let cr = consistency_ratio(sol.lambda_max);
    if cr >= cr_limit {
        return Err(AhpError::InconsistentMatrix { cr, limit: cr_limit });
    }
    Ok(AhpOutcome { weights: sol.weights, lambda_max: sol.lambda_max, cr })
}

/// Weights for a demand profile with default tolerance and limit. Profile
/// matrices are consistent by construction, so this cannot be rejected.
pub fn profile_weights(demand: &ResourceVector) -> WeightVector {
    derive_weights(AhpInput::Profile(*demand), DEFAULT_TOLERANCE, DEFAULT_CR_LIMIT)
        .map(|o| o.weights)
        .unwrap_or_else(|_| WeightVector::uniform())
}
