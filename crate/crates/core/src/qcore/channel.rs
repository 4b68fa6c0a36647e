use serde::{Deserialize, Serialize};

use super::kernels::{apply_local, conjugate_by};
use super::{check_targets, max_abs, pauli_x, pauli_y, pauli_z, CMatrix, DensityMatrix, C64, ONE, STATE_TOL, ZERO};
use crate::{Error, Result};

/// Completely positive trace-preserving map in Kraus form.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    n_qubits: usize,
    kraus_ops: Vec<CMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// `ρ ↦ (1 − p)ρ + p I/2`.
    Depolarizing,
    /// Off-diagonals scaled by `1 − p`.
    Dephasing,
    /// `|1⟩ → |0⟩` with probability `γ`.
    AmplitudeDamping,
}

impl KrausChannel {
    /// Validates `Σ K†K = I` within [`STATE_TOL`].
    pub fn new(kraus_ops: Vec<CMatrix>) -> Result<Self> {
        let first = kraus_ops.first().ok_or(Error::Empty("Kraus set"))?;
        let dim = first.nrows();
        let n_qubits = super::qubits_for_dim(dim)?;
        let mut sum = CMatrix::zeros(dim, dim);
        for k in &kraus_ops {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: k.nrows(),
                });
            }
            sum += k.adjoint() * k;
        }
        let dev = max_abs(&(sum - CMatrix::identity(dim, dim)));
        if dev > STATE_TOL {
            return Err(Error::NotTracePreserving(dev));
        }
        Ok(Self { n_qubits, kraus_ops })
    }

    pub fn identity(n_qubits: usize) -> Result<Self> {
        let d = 1usize << n_qubits;
        Self::new(vec![CMatrix::identity(d, d)])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn kraus_ops(&self) -> &[CMatrix] {
        &self.kraus_ops
    }

    /// Deviation `max|Σ K†K − I|`.
    pub fn trace_preservation_error(&self) -> f64 {
        let d = 1usize << self.n_qubits;
        let sum = self
            .kraus_ops
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, k| acc + k.adjoint() * k);
        max_abs(&(sum - CMatrix::identity(d, d)))
    }

    /// `next ∘ self`: Kraus set `{B_j A_i}`.
    pub fn then(&self, next: &KrausChannel) -> Result<KrausChannel> {
        if next.n_qubits != self.n_qubits {
            return Err(Error::ArityMismatch {
                channel: next.n_qubits,
                targets: self.n_qubits,
            });
        }
        let ops = next
            .kraus_ops
            .iter()
            .flat_map(|b| self.kraus_ops.iter().map(move |a| b * a))
            .collect();
        Ok(Self {
            n_qubits: self.n_qubits,
            kraus_ops: ops,
        })
    }
}

/// Standard single-qubit noise channels. Zero-weight Kraus operators are
/// dropped, so a zero-strength channel is the single operator `I`.
pub fn make_channel(kind: ChannelKind, param: f64) -> Result<KrausChannel> {
    if !(0.0..=1.0).contains(&param) {
        return Err(Error::param("channel parameter", format!("{param} not in [0, 1]")));
    }
    let id = CMatrix::identity(2, 2);
    let weighted = |w: f64, m: CMatrix| (w > 0.0).then(|| m * C64::new(w.sqrt(), 0.0));
    let ops: Vec<CMatrix> = match kind {
        ChannelKind::Depolarizing => [
            weighted(1.0 - 0.75 * param, id),
            weighted(param / 4.0, pauli_x()),
            weighted(param / 4.0, pauli_y()),
            weighted(param / 4.0, pauli_z()),
        ]
        .into_iter()
        .flatten()
        .collect(),
        ChannelKind::Dephasing => [weighted(1.0 - param / 2.0, id), weighted(param / 2.0, pauli_z())]
            .into_iter()
            .flatten()
            .collect(),
        ChannelKind::AmplitudeDamping => {
            let k0 = CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, C64::new((1.0 - param).sqrt(), 0.0)]);
            let k1 = CMatrix::from_row_slice(2, 2, &[ZERO, C64::new(param.sqrt(), 0.0), ZERO, ZERO]);
            if param > 0.0 {
                vec![k0, k1]
            } else {
                vec![k0]
            }
        }
    };
    KrausChannel::new(ops)
}

/// `ρ ↦ Σ_i K_i ρ K_i†` with the channel embedded on `targets`.
pub fn apply_channel(rho: &DensityMatrix, channel: &KrausChannel, targets: &[usize]) -> Result<DensityMatrix> {
    if channel.n_qubits() != targets.len() {
        return Err(Error::ArityMismatch {
            channel: channel.n_qubits(),
            targets: targets.len(),
        });
    }
    let n = rho.n_qubits();
    check_targets(targets, n)?;
    let mut acc = CMatrix::zeros(rho.dim(), rho.dim());
    for k in channel.kraus_ops() {
        acc += conjugate_by(rho.matrix(), |col| apply_local(k, targets, n, col));
    }
    Ok(DensityMatrix::from_matrix_unchecked(n, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{random_channel, random_state, PureState};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
        max_abs(&(a - b)) < tol
    }

    #[test]
    fn full_depolarization_gives_maximally_mixed() {
        let ch = make_channel(ChannelKind::Depolarizing, 1.0).unwrap();
        let mm = DensityMatrix::maximally_mixed(1).unwrap();
        for seed in 0..10 {
            let rho = random_state(1, seed).unwrap();
            let out = apply_channel(&rho, &ch, &[0]).unwrap();
            assert!(close(out.matrix(), mm.matrix(), 1e-12));
        }
    }

    #[test]
    fn full_dephasing_of_plus() {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let plus = PureState::from_amplitudes(&[h, h]).unwrap().to_density();
        let ch = make_channel(ChannelKind::Dephasing, 1.0).unwrap();
        let out = apply_channel(&plus, &ch, &[0]).unwrap();
        assert!(close(
            out.matrix(),
            DensityMatrix::maximally_mixed(1).unwrap().matrix(),
            1e-12
        ));
    }

    #[test]
    fn partial_depolarization_is_convex_mixture() {
        let zero = PureState::zero(1).unwrap().to_density();
        let ch = make_channel(ChannelKind::Depolarizing, 0.3).unwrap();
        let out = apply_channel(&zero, &ch, &[0]).unwrap();
        let expect = zero.matrix() * C64::new(0.7, 0.0)
            + DensityMatrix::maximally_mixed(1).unwrap().matrix() * C64::new(0.3, 0.0);
        assert!(close(out.matrix(), &expect, 1e-12));
    }

    #[test]
    fn zero_strength_is_identity() {
        let ch = make_channel(ChannelKind::Depolarizing, 0.0).unwrap();
        assert_eq!(ch.kraus_ops().len(), 1);
        assert_eq!(ch.kraus_ops()[0], CMatrix::identity(2, 2));
    }

    #[test]
    fn full_amplitude_damping_decays_one() {
        let one = PureState::basis(1, 1).unwrap().to_density();
        let ch = make_channel(ChannelKind::AmplitudeDamping, 1.0).unwrap();
        let out = apply_channel(&one, &ch, &[0]).unwrap();
        assert!(close(
            out.matrix(),
            PureState::zero(1).unwrap().to_density().matrix(),
            1e-12
        ));
    }

    #[test]
    fn dephasing_half_is_trace_preserving() {
        // Direct matrix-sum oracle.
        let ch = make_channel(ChannelKind::Dephasing, 0.5).unwrap();
        let sum = ch
            .kraus_ops()
            .iter()
            .fold(CMatrix::zeros(2, 2), |acc, k| acc + k.adjoint() * k);
        assert!(close(&sum, &CMatrix::identity(2, 2), 1e-12));
    }

    #[test]
    fn parameter_out_of_range() {
        assert!(make_channel(ChannelKind::Dephasing, 1.5).is_err());
        assert!(make_channel(ChannelKind::AmplitudeDamping, -0.1).is_err());
    }

    #[test]
    fn arity_mismatch() {
        let rho = PureState::zero(2).unwrap().to_density();
        let ch = make_channel(ChannelKind::Dephasing, 0.2).unwrap();
        assert!(matches!(
            apply_channel(&rho, &ch, &[0, 1]),
            Err(Error::ArityMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_trace_preserving() {
        let k = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
        assert!(matches!(KrausChannel::new(vec![k]), Err(Error::NotTracePreserving(_))));
    }

    #[test]
    fn composition_matches_sequential_application() {
        let a = random_channel(1, 3).unwrap();
        let b = make_channel(ChannelKind::AmplitudeDamping, 0.4).unwrap();
        let rho = random_state(2, 4).unwrap();
        let seq = apply_channel(&apply_channel(&rho, &a, &[1]).unwrap(), &b, &[1]).unwrap();
        let composed = apply_channel(&rho, &a.then(&b).unwrap(), &[1]).unwrap();
        assert!(close(seq.matrix(), composed.matrix(), 1e-9));
    }
}
