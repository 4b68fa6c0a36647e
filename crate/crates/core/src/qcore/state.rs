use nalgebra::SymmetricEigen;

use super::kernels::{apply_local, conjugate_by};
use super::{check_targets, max_abs, qubits_for_dim, CMatrix, CVector, C64, ONE, STATE_TOL, ZERO};
use crate::{Error, Result};

/// Normalized state vector on `n_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amplitudes: CVector,
}

impl PureState {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let n_qubits = qubits_for_dim(amplitudes.len())?;
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("norm {norm} is not 1")));
        }
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn from_amplitudes(amplitudes: &[C64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(amplitudes))
    }

    /// `|0…0⟩`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits > super::MAX_QUBITS {
            return Err(Error::TooManyQubits(n_qubits));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::InvalidState(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut amplitudes = CVector::zeros(dim);
        amplitudes[index] = ONE;
        Ok(Self { n_qubits, amplitudes })
    }

    pub(crate) fn from_vector_unchecked(n_qubits: usize, amplitudes: CVector) -> Self {
        Self { n_qubits, amplitudes }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `|self⟩ ⊗ |other⟩`, with `self` on the leading qubits.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let n = self.n_qubits + other.n_qubits;
        if n > super::MAX_QUBITS {
            return Err(Error::TooManyQubits(n));
        }
        Ok(Self {
            n_qubits: n,
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        })
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            n_qubits: self.n_qubits,
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }

    pub fn apply_unitary(&self, u: &CMatrix, targets: &[usize]) -> Result<PureState> {
        check_unitary_on(u, targets, self.n_qubits)?;
        let mut out = self.clone();
        apply_local(u, targets, self.n_qubits, out.amplitudes.as_mut_slice());
        Ok(out)
    }
}

/// Density operator on `n_qubits` qubits: Hermitian, unit trace, PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates the density-matrix invariants at [`STATE_TOL`].
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        let n_qubits = qubits_for_dim(matrix.nrows())?;
        let rho = Self { n_qubits, matrix };
        rho.validate(STATE_TOL)?;
        Ok(rho)
    }

    pub(crate) fn from_matrix_unchecked(n_qubits: usize, matrix: CMatrix) -> Self {
        Self { n_qubits, matrix }
    }

    pub fn maximally_mixed(n_qubits: usize) -> Result<Self> {
        if n_qubits > super::MAX_QUBITS {
            return Err(Error::TooManyQubits(n_qubits));
        }
        let dim = 1usize << n_qubits;
        Ok(Self {
            n_qubits,
            matrix: CMatrix::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0),
        })
    }

    pub fn from_pure(psi: &PureState) -> Self {
        psi.to_density()
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Checks Hermiticity, unit trace and positivity within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let herm = max_abs(&(&self.matrix - self.matrix.adjoint()));
        if herm > tol {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:.3e})")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > tol {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let min_eig = super::hermitian_eigenvalues(&self.matrix).min();
        if min_eig < -tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = super::hermitian_eigenvalues(&self.matrix).iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// `self ⊗ other`, with `self` on the leading qubits.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let n = self.n_qubits + other.n_qubits;
        if n > super::MAX_QUBITS {
            return Err(Error::TooManyQubits(n));
        }
        Ok(Self {
            n_qubits: n,
            matrix: self.matrix.kronecker(&other.matrix),
        })
    }

    pub fn apply_unitary(&self, u: &CMatrix, targets: &[usize]) -> Result<DensityMatrix> {
        check_unitary_on(u, targets, self.n_qubits)?;
        let n = self.n_qubits;
        Ok(Self {
            n_qubits: n,
            matrix: conjugate_by(&self.matrix, |col| apply_local(u, targets, n, col)),
        })
    }

    /// Convex mixture `Σ w_i ρ_i`; weights must be non-negative and sum to one.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<DensityMatrix> {
        let first = parts.first().ok_or(Error::Empty("mixture"))?.1;
        let mut acc = CMatrix::zeros(first.dim(), first.dim());
        let mut total = 0.0;
        for (w, rho) in parts {
            if *w < 0.0 || !w.is_finite() {
                return Err(Error::param("weight", format!("{w} is not a probability")));
            }
            if rho.dim() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    actual: rho.dim(),
                });
            }
            acc += rho.matrix.map(|z| z * *w);
            total += w;
        }
        if (total - 1.0).abs() > STATE_TOL {
            return Err(Error::param("weight", format!("weights sum to {total}")));
        }
        Ok(Self {
            n_qubits: first.n_qubits,
            matrix: acc,
        })
    }
}

/// Either kind of state, as produced by circuit execution.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Pure(PureState),
    Mixed(DensityMatrix),
}

impl State {
    pub fn n_qubits(&self) -> usize {
        match self {
            State::Pure(p) => p.n_qubits(),
            State::Mixed(d) => d.n_qubits(),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            State::Pure(p) => p.to_density(),
            State::Mixed(d) => d.clone(),
        }
    }

    pub fn as_pure(&self) -> Option<&PureState> {
        match self {
            State::Pure(p) => Some(p),
            State::Mixed(_) => None,
        }
    }

    pub fn apply_unitary(&self, u: &CMatrix, targets: &[usize]) -> Result<State> {
        apply_unitary(self, u, targets)
    }
}

impl From<PureState> for State {
    fn from(p: PureState) -> Self {
        State::Pure(p)
    }
}

impl From<DensityMatrix> for State {
    fn from(d: DensityMatrix) -> Self {
        State::Mixed(d)
    }
}

/// `|ψ⟩ ↦ (U ⊗ I)|ψ⟩` or `ρ ↦ U ρ U†` with `U` embedded on `targets`.
pub fn apply_unitary(state: &State, u: &CMatrix, targets: &[usize]) -> Result<State> {
    Ok(match state {
        State::Pure(p) => State::Pure(p.apply_unitary(u, targets)?),
        State::Mixed(d) => State::Mixed(d.apply_unitary(u, targets)?),
    })
}

fn check_unitary_on(u: &CMatrix, targets: &[usize], n_qubits: usize) -> Result<()> {
    check_targets(targets, n_qubits)?;
    if targets.is_empty() {
        return Err(Error::Empty("target list"));
    }
    let d = 1usize << targets.len();
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: u.nrows(),
        });
    }
    let dev = max_abs(&(u.adjoint() * u - CMatrix::identity(d, d)));
    if dev > STATE_TOL {
        return Err(Error::NotUnitary(dev));
    }
    Ok(())
}

/// Full-register basis index from kept and traced local indices.
fn compose_index(n: usize, keep: &[usize], traced: &[usize], k_idx: usize, t_idx: usize) -> usize {
    let mut idx = 0;
    let nk = keep.len();
    let nt = traced.len();
    for (b, &q) in keep.iter().enumerate() {
        if (k_idx >> (nk - 1 - b)) & 1 == 1 {
            idx |= 1 << (n - 1 - q);
        }
    }
    for (b, &q) in traced.iter().enumerate() {
        if (t_idx >> (nt - 1 - b)) & 1 == 1 {
            idx |= 1 << (n - 1 - q);
        }
    }
    idx
}

/// Reduced state on `keep`; the output's qubit `j` is input qubit `keep[j]`.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::Empty("keep set"));
    }
    let n = rho.n_qubits();
    check_targets(keep, n)?;
    let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    let dk = 1usize << keep.len();
    let dt = 1usize << traced.len();
    let m = rho.matrix();
    let mut out = CMatrix::from_element(dk, dk, ZERO);
    for r in 0..dk {
        for c in 0..dk {
            let mut acc = ZERO;
            for t in 0..dt {
                acc += m[(
                    compose_index(n, keep, &traced, r, t),
                    compose_index(n, keep, &traced, c, t),
                )];
            }
            out[(r, c)] = acc;
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(keep.len(), out))
}

/// `(I/2^|c| on block) ⊗ marginal`, with the block kept at its original
/// qubit positions.
pub(crate) fn replace_with_maximally_mixed(rho: &DensityMatrix, block: &[usize]) -> Result<DensityMatrix> {
    let n = rho.n_qubits();
    check_targets(block, n)?;
    let rest: Vec<usize> = (0..n).filter(|q| !block.contains(q)).collect();
    if rest.is_empty() {
        return Err(Error::param("client_block", "block covers every qubit"));
    }
    let marginal = partial_trace(rho, &rest)?;
    let dim = rho.dim();
    let block_mask: usize = block.iter().map(|&q| 1usize << (n - 1 - q)).sum();
    let scale = 1.0 / (1usize << block.len()) as f64;
    let rest_index = |idx: usize| -> usize { rest.iter().fold(0, |acc, &q| (acc << 1) | ((idx >> (n - 1 - q)) & 1)) };
    let mut out = CMatrix::from_element(dim, dim, ZERO);
    for i in 0..dim {
        for j in 0..dim {
            if i & block_mask == j & block_mask {
                out[(i, j)] = marginal.matrix()[(rest_index(i), rest_index(j))] * scale;
            }
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(n, out))
}

pub(crate) fn hermitian_eigen(m: &CMatrix) -> SymmetricEigen<C64, nalgebra::Dyn> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(h)
}
