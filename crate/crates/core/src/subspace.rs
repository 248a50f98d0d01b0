//! Orthonormal basis extraction from candidate matrices and the subspace
//! affinity/distance measures used for evaluation and model selection.
//!
//! Two affinities between column spaces are reported, both built from the
//! singular values λ_i of `B^T A` for orthonormal bases A, B:
//!
//! * γ = sqrt(Σ λ_i² / d): "vector correlation" — the averaging divisor is
//!   the number of compared directions d = min(d_A, d_B), so identical
//!   subspaces give γ = 1 for every d;
//! * ρ = sqrt(Π λ_i²): "trace correlation" — the product runs over the same
//!   d values so that identical subspaces give ρ = 1.
//!
//! The reported estimation error is D = 1 − γ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateMatrix;
use crate::error::{Error, Result};

/// A p×d matrix with orthonormal columns spanning an estimated subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    b: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Wrap a basis matrix, orthonormalizing the columns if they fail the
    /// orthonormality check (modified Gram-Schmidt).
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        let (p, d) = b.shape();
        if d < 1 || d > p {
            return Err(Error::BadDimension { d, p });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "basis entries must be finite".into(),
            ));
        }
        let gram = b.transpose() * &b;
        let ortho_err = (&gram - DMatrix::identity(d, d)).norm();
        let b = if ortho_err <= 1e-10 {
            b
        } else {
            orthonormalize(&b)?
        };
        Ok(SubspaceBasis { b })
    }

    /// The basis matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Ambient dimension p.
    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    /// Subspace dimension d.
    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> DVector<f64> {
        self.b.column(j).into_owned()
    }
}

fn orthonormalize(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, d) = b.shape();
    let mut q = b.clone();
    for j in 0..d {
        for prev in 0..j {
            let proj = q.column(prev).dot(&q.column(j));
            for i in 0..p {
                q[(i, j)] -= proj * q[(i, prev)];
            }
        }
        let norm = q.column(j).norm();
        if norm <= 1e-12 {
            return Err(Error::InvalidConfig(
                "basis columns are linearly dependent".into(),
            ));
        }
        for i in 0..p {
            q[(i, j)] /= norm;
        }
    }
    Ok(q)
}

/// Fix the sign of each column so its entry of largest absolute value is
/// positive; ties resolve to the lowest index (first maximum wins).
fn fix_signs(b: &mut DMatrix<f64>) {
    let (p, d) = b.shape();
    for j in 0..d {
        let mut arg = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..p {
            let a = b[(i, j)].abs();
            if a > best {
                best = a;
                arg = i;
            }
        }
        if b[(arg, j)] < 0.0 {
            for i in 0..p {
                b[(i, j)] = -b[(i, j)];
            }
        }
    }
}

/// Extract the d leading eigenvectors of a candidate matrix as an
/// orthonormal basis with a deterministic sign convention.
pub fn extract_basis(m: &CandidateMatrix, d: usize) -> Result<SubspaceBasis> {
    let p = m.p();
    if d < 1 || d > p {
        return Err(Error::BadDimension { d, p });
    }
    let lead = m.eigenvectors().columns(0, d).into_owned();
    let mut b = orthonormalize(&lead)?;
    fix_signs(&mut b);
    SubspaceBasis::new(b)
}

/// Subspace affinity report: γ (vector correlation), ρ (trace correlation)
/// and the estimation error D = 1 − γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// sqrt of the mean squared singular value of B^T A.
    pub gamma: f64,
    /// sqrt of the product of squared singular values of B^T A.
    pub rho: f64,
    /// 1 − gamma.
    pub d_measure: f64,
}

/// Distance/affinity between two subspaces of a common ambient space.
///
/// Singular values of `B^T A` are clamped into [0,1] (they can exceed 1 by
/// rounding); the averaging divisor is d = min(d_A, d_B).
pub fn distance(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<DistanceReport> {
    if a.p() != b.p() {
        return Err(Error::DimensionMismatch {
            context: "distance ambient dimension",
            left: a.p(),
            right: b.p(),
        });
    }
    let c = b.matrix().transpose() * a.matrix();
    let svd = c.svd(false, false);
    let d_min = a.d().min(b.d());
    let mut sum_sq = 0.0;
    let mut prod_sq = 1.0;
    for i in 0..d_min {
        let lam = svd.singular_values[i].clamp(0.0, 1.0);
        sum_sq += lam * lam;
        prod_sq *= lam * lam;
    }
    let gamma = (sum_sq / d_min as f64).sqrt().clamp(0.0, 1.0);
    let rho = prod_sq.sqrt().clamp(0.0, 1.0);
    Ok(DistanceReport {
        gamma,
        rho,
        d_measure: 1.0 - gamma,
    })
}
