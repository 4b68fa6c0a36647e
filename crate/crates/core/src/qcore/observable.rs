use serde::{Deserialize, Serialize};

use super::{max_abs, CMatrix, DensityMatrix, PureState, State, C64, I, ONE, STATE_TOL, ZERO};
use crate::{Error, Result};

/// `coeff · P_0 ⊗ P_1 ⊗ …`, one character per qubit from `{I, X, Y, Z}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coeff: f64,
    pub paulis: String,
}

/// Hermitian observable, dense or as a real-weighted Pauli sum.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Dense(CMatrix),
    Pauli { n_qubits: usize, terms: Vec<PauliTerm> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ObservableRepr {
    Dense { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
    Pauli { n_qubits: usize, terms: Vec<PauliTerm> },
}

impl Serialize for Observable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            Observable::Dense(m) => {
                let rows = |f: fn(&C64) -> f64| {
                    (0..m.nrows())
                        .map(|r| (0..m.ncols()).map(|c| f(&m[(r, c)])).collect())
                        .collect()
                };
                ObservableRepr::Dense {
                    re: rows(|z| z.re),
                    im: rows(|z| z.im),
                }
            }
            Observable::Pauli { n_qubits, terms } => ObservableRepr::Pauli {
                n_qubits: *n_qubits,
                terms: terms.clone(),
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Observable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match ObservableRepr::deserialize(d)? {
            ObservableRepr::Dense { re, im } => {
                let n = re.len();
                if im.len() != n || re.iter().chain(im.iter()).any(|row| row.len() != n) {
                    return Err(D::Error::custom("dense observable must be square"));
                }
                let m = CMatrix::from_fn(n, n, |r, c| C64::new(re[r][c], im[r][c]));
                Observable::dense(m).map_err(D::Error::custom)
            }
            ObservableRepr::Pauli { n_qubits, terms } => Observable::pauli(n_qubits, terms).map_err(D::Error::custom),
        }
    }
}

impl Observable {
    pub fn dense(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidState("observable is not square".into()));
        }
        super::qubits_for_dim(m.nrows())?;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("observable has non-finite entries".into()));
        }
        let dev = max_abs(&(&m - m.adjoint()));
        if dev > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "observable is not Hermitian (deviation {dev:.3e})"
            )));
        }
        Ok(Observable::Dense(m))
    }

    pub fn pauli(n_qubits: usize, terms: Vec<PauliTerm>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > super::MAX_QUBITS {
            return Err(Error::TooManyQubits(n_qubits));
        }
        for t in &terms {
            if !t.coeff.is_finite() {
                return Err(Error::param("pauli coefficient", "not finite"));
            }
            if t.paulis.chars().count() != n_qubits || t.paulis.chars().any(|c| !matches!(c, 'I' | 'X' | 'Y' | 'Z')) {
                return Err(Error::param(
                    "pauli string",
                    format!("`{}` is not a {n_qubits}-qubit Pauli word", t.paulis),
                ));
            }
        }
        Ok(Observable::Pauli { n_qubits, terms })
    }

    /// `Z` on `qubit`, identity elsewhere.
    pub fn z(n_qubits: usize, qubit: usize) -> Result<Self> {
        if qubit >= n_qubits {
            return Err(Error::QubitOutOfRange { index: qubit, n_qubits });
        }
        let paulis: String = (0..n_qubits).map(|q| if q == qubit { 'Z' } else { 'I' }).collect();
        Self::pauli(n_qubits, vec![PauliTerm { coeff: 1.0, paulis }])
    }

    pub fn n_qubits(&self) -> usize {
        match self {
            Observable::Dense(m) => m.nrows().trailing_zeros() as usize,
            Observable::Pauli { n_qubits, .. } => *n_qubits,
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            Observable::Dense(m) => m.clone(),
            Observable::Pauli { n_qubits, terms } => {
                let d = 1usize << n_qubits;
                let mut out = CMatrix::zeros(d, d);
                for t in terms {
                    let flip = flip_mask(*n_qubits, &t.paulis);
                    for col in 0..d {
                        out[(col ^ flip, col)] += pauli_phase(*n_qubits, &t.paulis, col) * t.coeff;
                    }
                }
                out
            }
        }
    }

    /// `(λ_min, λ_max)` of the observable.
    pub fn spectral_range(&self) -> (f64, f64) {
        let ev = super::hermitian_eigenvalues(&self.to_dense());
        (ev.min(), ev.max())
    }
}

/// Basis bits flipped by the Pauli word (its X and Y positions).
fn flip_mask(n: usize, paulis: &str) -> usize {
    paulis
        .chars()
        .enumerate()
        .filter(|(_, c)| matches!(c, 'X' | 'Y'))
        .fold(0, |acc, (q, _)| acc | 1 << (n - 1 - q))
}

/// Phase `c` in `P|i⟩ = c |i ⊕ flip⟩`.
fn pauli_phase(n: usize, paulis: &str, i: usize) -> C64 {
    let mut z = ONE;
    for (q, c) in paulis.chars().enumerate() {
        let b = (i >> (n - 1 - q)) & 1;
        match c {
            'Z' if b == 1 => z = -z,
            // Y|0⟩ = i|1⟩, Y|1⟩ = −i|0⟩
            'Y' => z *= if b == 0 { I } else { -I },
            _ => {}
        }
    }
    z
}

fn check_dim(obs: &Observable, n_qubits: usize) -> Result<()> {
    if obs.n_qubits() != n_qubits {
        return Err(Error::DimensionMismatch {
            expected: obs.n_qubits(),
            actual: n_qubits,
        });
    }
    Ok(())
}

pub(crate) fn expectation_pure(psi: &PureState, obs: &Observable) -> Result<f64> {
    check_dim(obs, psi.n_qubits())?;
    let a = psi.amplitudes();
    let value = match obs {
        Observable::Dense(m) => a.dotc(&(m * a)),
        Observable::Pauli { n_qubits, terms } => {
            let mut acc = ZERO;
            for t in terms {
                let flip = flip_mask(*n_qubits, &t.paulis);
                let mut term = ZERO;
                for i in 0..a.len() {
                    term += a[i ^ flip].conj() * pauli_phase(*n_qubits, &t.paulis, i) * a[i];
                }
                acc += term * t.coeff;
            }
            acc
        }
    };
    debug_assert!(value.im.abs() < 1e-9, "non-real expectation {value}");
    Ok(value.re)
}

pub(crate) fn expectation_density(rho: &DensityMatrix, obs: &Observable) -> Result<f64> {
    check_dim(obs, rho.n_qubits())?;
    let m = rho.matrix();
    let value = match obs {
        Observable::Dense(o) => (m * o).trace(),
        Observable::Pauli { n_qubits, terms } => {
            let mut acc = ZERO;
            for t in terms {
                let flip = flip_mask(*n_qubits, &t.paulis);
                let mut term = ZERO;
                // Tr(ρP) = Σ_k ρ[k, k⊕flip] · phase(k)
                for k in 0..m.nrows() {
                    term += m[(k, k ^ flip)] * pauli_phase(*n_qubits, &t.paulis, k);
                }
                acc += term * t.coeff;
            }
            acc
        }
    };
    debug_assert!(value.im.abs() < 1e-9, "non-real expectation {value}");
    Ok(value.re)
}

/// `Tr(ρ O)`; the imaginary part (zero up to rounding) is discarded.
pub fn expectation(state: &State, obs: &Observable) -> Result<f64> {
    match state {
        State::Pure(p) => expectation_pure(p, obs),
        State::Mixed(d) => expectation_density(d, obs),
    }
}
