//! Dense complex linear algebra for qubit registers: pure and mixed states,
//! unitaries, Kraus channels and the operational distances used by every
//! audit in the crate.
//!
//! Basis ordering is big-endian: qubit 0 is the most significant bit of a
//! basis index, so `|10⟩` has qubit 0 in `|1⟩`.

mod channel;
pub(crate) mod kernels;
mod metrics;
mod observable;
mod random;
mod state;

pub use channel::{apply_channel, make_channel, ChannelKind, KrausChannel};
pub use metrics::{fidelity, hermitian_eigenvalues, infidelity, psd_sqrt, trace_distance};
pub use observable::{expectation, Observable, PauliTerm};
pub use random::{random_channel, random_pure_state, random_state, random_unitary};
pub(crate) use state::replace_with_maximally_mixed;
pub use state::{apply_unitary, partial_trace, DensityMatrix, PureState, State};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;

/// Largest joint register simulated densely.
pub const MAX_QUBITS: usize = 10;

/// Tolerance on state and channel invariants.
pub const STATE_TOL: f64 = 1e-9;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn cnot() -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    m[(0, 0)] = ONE;
    m[(1, 1)] = ONE;
    m[(2, 3)] = ONE;
    m[(3, 2)] = ONE;
    m
}

pub fn hadamard() -> CMatrix {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMatrix::from_row_slice(2, 2, &[h, h, h, -h])
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn qubits_for_dim(dim: usize) -> crate::Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(crate::Error::InvalidState(format!(
            "dimension {dim} is not a power of two"
        )));
    }
    let n = dim.trailing_zeros() as usize;
    if n > MAX_QUBITS {
        return Err(crate::Error::TooManyQubits(n));
    }
    Ok(n)
}

/// Checks that `targets` are distinct qubit indices below `n_qubits`.
pub(crate) fn check_targets(targets: &[usize], n_qubits: usize) -> crate::Result<()> {
    for (i, &t) in targets.iter().enumerate() {
        if t >= n_qubits {
            return Err(crate::Error::QubitOutOfRange { index: t, n_qubits });
        }
        if targets[..i].contains(&t) {
            return Err(crate::Error::DuplicateQubit(t));
        }
    }
    Ok(())
}
