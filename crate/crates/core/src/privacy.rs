//! Gradient clipping, Gaussian-mechanism calibration and Rényi-DP
//! accounting.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::GradVector;
use crate::rng::Rng;
use crate::{Error, Result};

pub const GAUSSIAN: &str = "gaussian";

/// Rényi orders `1.25, 1.5, …, 64`.
pub fn rdp_orders() -> impl Iterator<Item = f64> {
    (5..=256).map(|k| k as f64 * 0.25)
}

/// `g` scaled onto the `C`-ball if it lies outside. `C = ∞` is a no-op.
pub fn clip(g: &GradVector, c: f64) -> Result<GradVector> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::param("clip", format!("{c} must be positive")));
    }
    let norm = g.norm();
    let mut out = g.clone();
    if norm > c {
        out.scale(c / norm);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSigma {
    pub sigma: f64,
    /// False when `ε ≥ 1`, outside the regime where the closed form is a
    /// proven `(ε, δ)` guarantee.
    pub in_proof_regime: bool,
}

/// `σ = C·√(2 ln(1.25/δ)) / ε`.
pub fn gaussian_sigma(c: f64, epsilon: f64, delta: f64) -> Result<GaussianSigma> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::param("clip", format!("{c} must be positive and finite")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("{epsilon} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("{delta} must lie in (0, 1)")));
    }
    Ok(GaussianSigma {
        sigma: c * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon,
        in_proof_regime: epsilon < 1.0,
    })
}

/// `g + N(0, σ²)` per coordinate.
pub fn add_noise(g: &GradVector, sigma: f64, rng: &mut Rng) -> Result<GradVector> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(
            "sigma",
            format!("{sigma} must be finite and non-negative"),
        ));
    }
    if sigma == 0.0 {
        return Ok(g.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param("sigma", e.to_string()))?;
    Ok(GradVector(g.0.iter().map(|v| v + normal.sample(rng)).collect()))
}

/// Privacy parameters of a DP run: clip norm plus exactly one of an
/// `(ε, δ)` target or an explicit `σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub clip: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub delta: f64,
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl DpConfig {
    /// Noise multiplier and whether it comes from the proven regime.
    pub fn calibrate(&self) -> Result<GaussianSigma> {
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::validation("dp.clip", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("dp.delta", "must lie in (0, 1)"));
        }
        match (self.epsilon, self.sigma) {
            (Some(eps), None) => {
                gaussian_sigma(self.clip, eps, self.delta).map_err(|e| Error::validation("dp.epsilon", e.to_string()))
            }
            (None, Some(sigma)) if sigma >= 0.0 && sigma.is_finite() => Ok(GaussianSigma {
                sigma,
                in_proof_regime: true,
            }),
            (None, Some(sigma)) => Err(Error::validation("dp.sigma", format!("{sigma} must be non-negative"))),
            _ => Err(Error::validation("dp", "set exactly one of `epsilon` and `sigma`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRound {
    pub sigma: f64,
    pub clip: f64,
    pub mechanism: String,
    pub in_proof_regime: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    /// RDP-accounted `ε`; infinite when any round was noiseless.
    pub epsilon: f64,
    /// Sum of single-round conversions at `δ/k`.
    pub naive_epsilon: f64,
    /// Minimizing Rényi order, absent for 0 rounds or unbounded `ε`.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub rounds: Vec<LedgerRound>,
}

impl PrivacyLedger {
    pub fn record_gaussian(&mut self, sigma: f64, clip: f64, in_proof_regime: bool) {
        self.rounds.push(LedgerRound {
            sigma,
            clip,
            mechanism: GAUSSIAN.into(),
            in_proof_regime,
        });
    }

    pub fn compose(&self, delta: f64) -> Result<Composition> {
        compose(&self.rounds, delta)
    }
}

fn round_rdp(r: &LedgerRound, order: f64) -> Result<f64> {
    if r.mechanism != GAUSSIAN {
        return Err(Error::Unknown {
            kind: "mechanism",
            name: r.mechanism.clone(),
        });
    }
    Ok(if r.sigma == 0.0 {
        f64::INFINITY
    } else {
        order * r.clip * r.clip / (2.0 * r.sigma * r.sigma)
    })
}

fn rdp_to_dp<F: Fn(f64) -> Result<f64>>(rdp: F, delta: f64) -> Result<(f64, Option<f64>)> {
    let mut best = (f64::INFINITY, None);
    for a in rdp_orders() {
        let eps = rdp(a)? + (1.0 / delta).ln() / (a - 1.0);
        if eps < best.0 {
            best = (eps, Some(a));
        }
    }
    Ok(best)
}

/// Cumulative `(ε, δ)` over Gaussian rounds via Rényi accounting.
pub fn compose(rounds: &[LedgerRound], delta: f64) -> Result<Composition> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("{delta} must lie in (0, 1)")));
    }
    if rounds.is_empty() {
        return Ok(Composition {
            epsilon: 0.0,
            naive_epsilon: 0.0,
            order: None,
        });
    }
    let (epsilon, order) = rdp_to_dp(|a| rounds.iter().map(|r| round_rdp(r, a)).sum::<Result<f64>>(), delta)?;
    let per_round_delta = delta / rounds.len() as f64;
    let mut naive_epsilon = 0.0;
    for r in rounds {
        naive_epsilon += rdp_to_dp(|a| round_rdp(r, a), per_round_delta)?.0;
    }
    Ok(Composition {
        epsilon,
        naive_epsilon,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn gaussian_round(sigma: f64) -> LedgerRound {
        LedgerRound {
            sigma,
            clip: 1.0,
            mechanism: GAUSSIAN.into(),
            in_proof_regime: true,
        }
    }

    #[test]
    fn clip_examples() {
        let g = GradVector(vec![0.3, 0.4]);
        assert_eq!(clip(&g, 1.0).unwrap(), g);
        let g = GradVector(vec![1.2, -1.6]);
        let c = clip(&g, 1.0).unwrap();
        assert!((c.norm() - 1.0).abs() < 1e-15);
        let cos = (g.0[0] * c.0[0] + g.0[1] * c.0[1]) / (g.norm() * c.norm());
        assert!((cos - 1.0).abs() < 1e-15);
        assert_eq!(clip(&g, f64::INFINITY).unwrap(), g);
        assert!(clip(&g, 0.0).is_err());
    }

    #[test]
    fn sigma_closed_form() {
        let s = gaussian_sigma(1.0, 1.0, 1e-5).unwrap();
        let oracle = (2.0f64 * (1.25e5f64).ln()).sqrt();
        assert!((s.sigma - oracle).abs() < 1e-12);
        assert!((s.sigma - 4.8448).abs() < 5e-4);
        assert!(!s.in_proof_regime);
        let base = gaussian_sigma(1.0, 0.5, 1e-5).unwrap();
        assert!(base.in_proof_regime);
        assert!((gaussian_sigma(2.0, 0.5, 1e-5).unwrap().sigma - 2.0 * base.sigma).abs() < 1e-12);
        assert!((gaussian_sigma(1.0, 0.25, 1e-5).unwrap().sigma - 2.0 * base.sigma).abs() < 1e-12);
        assert!(gaussian_sigma(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn noise_examples() {
        let g = GradVector(vec![1.0, 2.0]);
        assert_eq!(add_noise(&g, 0.0, &mut rng_from_seed(1)).unwrap(), g);
        let a = add_noise(&g, 0.7, &mut rng_from_seed(2)).unwrap();
        let b = add_noise(&g, 0.7, &mut rng_from_seed(2)).unwrap();
        assert_eq!(a, b);
        let mut rng = rng_from_seed(3);
        let zero = GradVector(vec![0.0]);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| add_noise(&zero, 0.7, &mut rng).unwrap().0[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!((sd - 0.7).abs() < 0.05 * 0.7);
    }

    #[test]
    fn composition_examples() {
        assert_eq!(compose(&[], 1e-5).unwrap().epsilon, 0.0);
        for eps0 in [0.5, 0.9, 1.0] {
            let s = gaussian_sigma(1.0, eps0, 1e-5).unwrap().sigma;
            let c = compose(&[gaussian_round(s)], 1e-5).unwrap();
            assert!(c.epsilon <= eps0 * 1.05, "{eps0}: {}", c.epsilon);
        }
        let one = compose(&[gaussian_round(5.0)], 1e-5).unwrap().epsilon;
        let four = compose(&vec![gaussian_round(5.0); 4], 1e-5).unwrap().epsilon;
        assert!(four < 4.0 * one);
    }

    #[test]
    fn composition_oracle_by_brute_force() {
        // Independent evaluation of the conversion over the same grid.
        let rounds = vec![gaussian_round(3.0), gaussian_round(4.0)];
        let delta: f64 = 1e-6;
        let mut best = f64::INFINITY;
        let mut a = 1.25;
        while a <= 64.0 {
            let rdp = a / (2.0 * 9.0) + a / (2.0 * 16.0);
            best = best.min(rdp + (1.0 / delta).ln() / (a - 1.0));
            a += 0.25;
        }
        assert!((compose(&rounds, delta).unwrap().epsilon - best).abs() < 1e-12);
    }

    #[test]
    fn noiseless_round_is_unbounded_and_unknown_tag_rejected() {
        assert!(compose(&[gaussian_round(0.0)], 1e-5).unwrap().epsilon.is_infinite());
        let mut r = gaussian_round(1.0);
        r.mechanism = "laplace".into();
        assert!(matches!(compose(&[r], 1e-5), Err(Error::Unknown { .. })));
    }

    #[test]
    fn dp_config_requires_exactly_one_driver() {
        let both = DpConfig {
            clip: 1.0,
            epsilon: Some(0.5),
            delta: 1e-5,
            sigma: Some(1.0),
        };
        assert!(both.calibrate().is_err());
        let neither = DpConfig {
            epsilon: None,
            sigma: None,
            ..both.clone()
        };
        assert!(neither.calibrate().is_err());
        let sigma = DpConfig { epsilon: None, ..both };
        assert_eq!(sigma.calibrate().unwrap().sigma, 1.0);
    }
}
