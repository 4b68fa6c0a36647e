use nalgebra::DVector;

use super::state::hermitian_eigen;
use super::{CMatrix, DensityMatrix};
use crate::{Error, Result};

/// Eigenvalue floor applied before square roots.
const EIG_FLOOR: f64 = 1e-9;

/// Eigenvalues below this fraction of the largest are treated as zero
/// inside fidelity square roots, where `√` would amplify round-off of order
/// `1e-17` into errors of order `1e-9`.
const RANK_CUTOFF: f64 = 1e-13;

fn cutoff_sqrt(l: f64, max: f64) -> f64 {
    if l > RANK_CUTOFF * max {
        l.sqrt()
    } else {
        0.0
    }
}

/// Eigenvalues of the Hermitian part of `m` (unordered).
pub fn hermitian_eigenvalues(m: &CMatrix) -> DVector<f64> {
    hermitian_eigen(m).eigenvalues
}

/// Principal square root of a PSD matrix. Negative eigenvalues (numerical
/// drift, at most `1e-9` in magnitude on validated states) are clamped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let eig = hermitian_eigen(m);
    let roots = eig.eigenvalues.map(|l| {
        debug_assert!(l >= -EIG_FLOOR * 1e3, "psd_sqrt on a non-PSD matrix ({l})");
        l.max(0.0).sqrt()
    });
    let v = &eig.eigenvectors;
    let scaled = CMatrix::from_fn(v.nrows(), v.ncols(), |r, c| v[(r, c)] * roots[c]);
    scaled * v.adjoint()
}

fn same_dim(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<()> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            actual: sigma.dim(),
        });
    }
    Ok(())
}

/// `½‖ρ − σ‖₁`, clamped to `[0, 1]`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    same_dim(rho, sigma)?;
    let diff = rho.matrix() - sigma.matrix();
    let d = 0.5 * hermitian_eigenvalues(&diff).iter().map(|l| l.abs()).sum::<f64>();
    Ok(d.clamp(0.0, 1.0))
}

/// Squared Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`, clamped to `[0, 1]`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    same_dim(rho, sigma)?;
    let eig = hermitian_eigen(rho.matrix());
    let max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let v = &eig.eigenvectors;
    let scaled = CMatrix::from_fn(v.nrows(), v.ncols(), |r, c| {
        v[(r, c)] * cutoff_sqrt(eig.eigenvalues[c], max)
    });
    let sr = scaled * v.adjoint();
    let inner = &sr * sigma.matrix() * &sr;
    let eigs = hermitian_eigenvalues(&inner);
    let max = eigs.max().max(f64::MIN_POSITIVE);
    let root_trace: f64 = eigs.iter().map(|&l| cutoff_sqrt(l, max)).sum();
    Ok((root_trace * root_trace).clamp(0.0, 1.0))
}

pub fn infidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    Ok(1.0 - fidelity(rho, sigma)?)
}
