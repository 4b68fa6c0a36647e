//! Seeded generators for property tests and demo registers.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{CMatrix, CVector, DensityMatrix, KrausChannel, PureState, C64};
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

fn complex_gaussian(rng: &mut Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn check_n(n_qubits: usize) -> Result<usize> {
    if n_qubits == 0 {
        return Err(Error::param("n_qubits", "must be at least 1"));
    }
    if n_qubits > super::MAX_QUBITS {
        return Err(Error::TooManyQubits(n_qubits));
    }
    Ok(1 << n_qubits)
}

/// Haar-random pure state (normalized complex Gaussian vector).
pub fn random_pure_state(n_qubits: usize, rng: &mut Rng) -> Result<PureState> {
    let dim = check_n(n_qubits)?;
    let v = CVector::from_fn(dim, |_, _| complex_gaussian(rng));
    let norm = v.norm();
    Ok(PureState::from_vector_unchecked(n_qubits, v.unscale(norm)))
}

/// Haar-random pure state, or with equal odds a random mixture of two.
pub fn random_state(n_qubits: usize, seed: u64) -> Result<DensityMatrix> {
    let mut rng = rng_from_seed(seed);
    let a = random_pure_state(n_qubits, &mut rng)?.to_density();
    if rng.random_bool(0.5) {
        return Ok(a);
    }
    let b = random_pure_state(n_qubits, &mut rng)?.to_density();
    let w: f64 = rng.random();
    DensityMatrix::mixture(&[(w, &a), (1.0 - w, &b)])
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the phase
/// of `R`'s diagonal divided out.
pub fn random_unitary(n_qubits: usize, rng: &mut Rng) -> Result<CMatrix> {
    let dim = check_n(n_qubits)?;
    let g = CMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    Ok(CMatrix::from_fn(dim, dim, |i, j| {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        q[(i, j)] * phase
    }))
}

/// Random CPTP map from a random isometry `V: C^d → C^{r·d}` sliced into
/// `r ∈ [1, 4]` Kraus blocks.
pub fn random_channel(n_qubits: usize, seed: u64) -> Result<KrausChannel> {
    let dim = check_n(n_qubits)?;
    let mut rng = rng_from_seed(seed);
    let rank = rng.random_range(1..=4usize);
    let g = CMatrix::from_fn(rank * dim, dim, |_, _| complex_gaussian(&mut rng));
    let v = g.qr().q();
    let ops = (0..rank).map(|k| v.rows(k * dim, dim).into_owned()).collect();
    KrausChannel::new(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::max_abs;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(random_state(3, 42).unwrap(), random_state(3, 42).unwrap());
        assert_eq!(random_channel(2, 42).unwrap(), random_channel(2, 42).unwrap());
        assert_ne!(random_state(3, 42).unwrap(), random_state(3, 43).unwrap());
    }

    #[test]
    fn generated_channels_are_trace_preserving() {
        for seed in 0..500 {
            let n = 1 + (seed % 3) as usize;
            let ch = random_channel(n, seed).unwrap();
            assert!(ch.trace_preservation_error() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn generated_states_are_valid() {
        for seed in 0..500 {
            let n = 1 + (seed % 3) as usize;
            random_state(n, seed).unwrap().validate(1e-9).unwrap();
        }
    }

    #[test]
    fn random_pure_state_density_has_one_unit_eigenvalue() {
        let mut rng = rng_from_seed(5);
        let rho = random_pure_state(3, &mut rng).unwrap().to_density();
        let ev = rho.eigenvalues();
        assert!((ev[ev.len() - 1] - 1.0).abs() < 1e-10);
        assert!(ev[..ev.len() - 1].iter().all(|l| l.abs() < 1e-10));
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = rng_from_seed(9);
        let u = random_unitary(3, &mut rng).unwrap();
        assert!(max_abs(&(u.adjoint() * &u - CMatrix::identity(8, 8))) < 1e-12);
    }
}
