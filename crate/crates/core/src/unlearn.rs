//! Forgetting mechanisms: QFI-weighted influence unlearning (QMU-I),
//! one-shot influence deltas, diagonal Fisher steps, QFI-ranked partial
//! resets, and the client-level decohering channel.
//!
//! Every mechanism works on the forgetting objective `𝓛_S = −(mean training
//! loss on S)`, so descending it removes the fit to `S`.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample, Subset};
use crate::geo::{
    damped_inverse, natural_step, parameter_shift_gradient, qfim_batch, GradVector, LossSpec, Qfim, QfimMode,
};
use crate::learn::{fit_observed, Optimizer, TrainConfig, TrainedModel};
use crate::pqc::{random_params, CircuitTemplate, ParamVector};
use crate::privacy::clip;
use crate::qcore::DensityMatrix;
use crate::rng::derived_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    QmuI,
    Influence,
    FisherStep,
    ResetPartial,
    ClientChannel,
    GradientSubtract,
    Retrain,
}

/// Preconditioner used by the unlearning steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Qfim {
        mode: QfimMode,
    },
    /// `F = I`.
    Euclidean,
}

impl Metric {
    fn evaluate(self, t: &CircuitTemplate, theta: &ParamVector, batch: &[Sample]) -> Result<Qfim> {
        match self {
            Metric::Qfim { mode } => qfim_batch(t, theta, batch, mode),
            Metric::Euclidean => Ok(Qfim::identity(t.n_params())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmuIConfig {
    pub eta: f64,
    /// Gradient clip norm; `inf` disables clipping.
    pub clip: f64,
    /// Trust-region radius in the `F + λI` norm; `inf` disables it.
    pub trust_radius: f64,
    pub damping: f64,
    pub metric: Metric,
    /// Mini-batch size over `D_r`; defaults to `min(8, |D_r|)`.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub iterations: usize,
    /// Fine-tuning on `D_s` after the unlearning iterations.
    #[serde(default)]
    pub fine_tune: Option<TrainConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for QmuIConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            clip: 1.0,
            trust_radius: 1.0,
            damping: 1e-3,
            metric: Metric::Qfim {
                mode: QfimMode::Diagonal,
            },
            batch_size: None,
            iterations: 25,
            fine_tune: Some(TrainConfig {
                lr: 0.05,
                epochs: 30,
                batch_size: 128,
                optimizer: Optimizer::Natural {
                    mode: QfimMode::Diagonal,
                },
                damping: 1e-3,
                patience: 5,
                loss: LossSpec::Mse,
                seed: 0,
            }),
            seed: 0,
        }
    }
}

impl QmuIConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::validation("eta", "must be positive"));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::validation("clip", "must be positive"));
        }
        if self.trust_radius.is_nan() || self.trust_radius <= 0.0 {
            return Err(Error::validation("trust_radius", "must be positive"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::validation("damping", "must be non-negative"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if let Some(ft) = &self.fine_tune {
            ft.validate()?;
        }
        Ok(())
    }
}

/// One applied unlearning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub grad_norm: f64,
    pub clipped_norm: f64,
    /// `Δᵀ(F + λI)Δ` of the applied (possibly rescaled) step.
    pub metric_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnTrace {
    pub mechanism: Mechanism,
    /// Parameters before the first step, then after every step or epoch.
    pub snapshots: Vec<ParamVector>,
    /// Distances to the counterfactual, filled in by the audit.
    pub distances: Vec<f64>,
    pub steps: Vec<StepRecord>,
}

impl UnlearnTrace {
    pub fn new(mechanism: Mechanism, start: ParamVector) -> Self {
        Self {
            mechanism,
            snapshots: vec![start],
            distances: Vec::new(),
            steps: Vec::new(),
        }
    }
}

/// Gradient of the forgetting objective on `S`.
pub fn forget_gradient(t: &CircuitTemplate, theta: &ParamVector, s: &[Sample], loss: LossSpec) -> Result<GradVector> {
    let mut g = parameter_shift_gradient(t, theta, s, loss)?;
    g.scale(-1.0);
    Ok(g)
}

/// QMU-I: clipped, metric-preconditioned, trust-region-limited descent on
/// the forgetting objective over mini-batches of `D_r`, followed by
/// optional fine-tuning on `D_s`.
pub fn qmu_i(model: &TrainedModel, data: &Dataset, cfg: &QmuIConfig) -> Result<(TrainedModel, UnlearnTrace)> {
    cfg.validate()?;
    let forget = data.samples(Subset::Forget);
    if forget.is_empty() {
        return Err(Error::Empty("forget set"));
    }
    let t = &model.template;
    let batch_size = cfg.batch_size.unwrap_or(8).min(forget.len());
    let mut theta = model.theta.clone();
    let mut trace = UnlearnTrace::new(Mechanism::QmuI, theta.clone());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut pass = 0u64;
    for _ in 0..cfg.iterations {
        if cursor + batch_size > order.len() {
            order = (0..forget.len()).collect();
            order.shuffle(&mut derived_rng(cfg.seed, "qmu_i", pass));
            pass += 1;
            cursor = 0;
        }
        let batch: Vec<Sample> = order[cursor..cursor + batch_size]
            .iter()
            .map(|&i| forget[i].clone())
            .collect();
        cursor += batch_size;

        let raw = forget_gradient(t, &theta, &batch, model.loss)?;
        let g = clip(&raw, cfg.clip)?;
        let f = cfg.metric.evaluate(t, &theta, &batch)?;
        let p = damped_inverse(&f, cfg.damping)?;
        let gv = DVector::from_column_slice(&g.0);
        let mut delta = &p * &gv;
        // Δᵀ(F+λI)Δ = gᵀ P g for Δ = P g.
        let mut norm_sq = gv.dot(&delta).max(0.0);
        if cfg.trust_radius.is_finite() && norm_sq > cfg.trust_radius * cfg.trust_radius {
            delta *= cfg.trust_radius / norm_sq.sqrt();
            norm_sq = cfg.trust_radius * cfg.trust_radius;
        }
        theta = ParamVector::new(theta.iter().zip(delta.iter()).map(|(th, d)| th - cfg.eta * d).collect())?;
        trace.steps.push(StepRecord {
            grad_norm: raw.norm(),
            clipped_norm: g.norm(),
            metric_norm_sq: norm_sq,
        });
        trace.snapshots.push(theta.clone());
    }

    if let Some(ft) = &cfg.fine_tune {
        let retained = data.samples(Subset::Retain);
        if !retained.is_empty() {
            let snapshots = &mut trace.snapshots;
            let (out, _) = fit_observed(t, theta, &retained, ft, None, &mut |th| snapshots.push(th.clone()))?;
            theta = out;
        }
    }
    Ok((model.with_theta(theta), trace))
}

/// One-shot influence estimate `Δθ = −(F + λI)^{-1} ∇𝓛_S(θ)`.
pub fn influence_delta(model: &TrainedModel, s: &[Sample], lambda: f64, metric: Metric) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Empty("influence set"));
    }
    let g = forget_gradient(&model.template, &model.theta, s, model.loss)?;
    let f = metric.evaluate(&model.template, &model.theta, s)?;
    let p = damped_inverse(&f, lambda)?;
    Ok((p * DVector::from_column_slice(&g.0)).iter().map(|v| -v).collect())
}

/// `θ_i − η ∂_i𝓛_S / (F_ii + λ)` with the diagonal QFIM on `S`.
pub fn fisher_step(model: &TrainedModel, s: &[Sample], eta: f64, lambda: f64) -> Result<ParamVector> {
    if s.is_empty() {
        return Err(Error::Empty("fisher step set"));
    }
    let t = &model.template;
    let g = forget_gradient(t, &model.theta, s, model.loss)?;
    let f = qfim_batch(t, &model.theta, s, QfimMode::Diagonal)?;
    let next = (0..g.0.len())
        .map(|i| {
            let d = f.matrix[(i, i)] + lambda;
            if d <= crate::geo::SINGULAR_TOL {
                Err(Error::Singular(d))
            } else {
                Ok(model.theta[i] - eta * g.0[i] / d)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ParamVector::new(next)
}

/// Same update as [`fisher_step`], routed through the general natural step.
pub fn fisher_step_via_natural(model: &TrainedModel, s: &[Sample], eta: f64, lambda: f64) -> Result<ParamVector> {
    let g = forget_gradient(&model.template, &model.theta, s, model.loss)?;
    let f = qfim_batch(&model.template, &model.theta, s, QfimMode::Diagonal)?;
    natural_step(&model.theta, &g, &f, eta, lambda)
}

/// Indices of the `⌈fraction·p⌉` largest diagonal QFIM entries, ascending
/// index on ties, returned in ascending order.
pub fn fisher_ranked_selection(f: &Qfim, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param("fraction", format!("{fraction} must lie in (0, 1]")));
    }
    let n = f.dim();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| f.matrix[(b, b)].total_cmp(&f.matrix[(a, a)]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Redraws the selected coordinates from `reset_seed`, then fine-tunes only
/// those coordinates on `D_s`.
pub fn reset_partial(
    model: &TrainedModel,
    data: &Dataset,
    selection: &[usize],
    reset_seed: u64,
    fine_tune: Option<&TrainConfig>,
) -> Result<(TrainedModel, UnlearnTrace)> {
    if selection.is_empty() {
        return Err(Error::Empty("reset selection"));
    }
    let n = model.theta.len();
    if let Some(&bad) = selection.iter().find(|&&i| i >= n) {
        return Err(Error::validation(
            "selection",
            format!("index {bad} out of range for {n} parameters"),
        ));
    }
    let fresh = random_params(n, &mut derived_rng(reset_seed, "reset", 0));
    let mut mask = vec![false; n];
    for &i in selection {
        mask[i] = true;
    }
    let theta = ParamVector::from(
        (0..n)
            .map(|i| if mask[i] { fresh[i] } else { model.theta[i] })
            .collect::<Vec<_>>(),
    );
    let mut trace = UnlearnTrace::new(Mechanism::ResetPartial, model.theta.clone());
    trace.snapshots.push(theta.clone());
    let theta = match fine_tune {
        Some(cfg) => {
            cfg.validate()?;
            let retained = data.samples(Subset::Retain);
            if retained.is_empty() {
                return Err(Error::Empty("retained set"));
            }
            let snapshots = &mut trace.snapshots;
            fit_observed(&model.template, theta, &retained, cfg, Some(&mask), &mut |th| {
                snapshots.push(th.clone())
            })?
            .0
        }
        None => theta,
    };
    Ok((model.with_theta(theta), trace))
}

/// Traces out the client block and replaces it with the maximally mixed
/// state, leaving the rest of the register untouched.
pub fn client_forget(rho: &DensityMatrix, client_block: &[usize]) -> Result<DensityMatrix> {
    crate::qcore::replace_with_maximally_mixed(rho, client_block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, ForgetPolicy, Generator};
    use crate::learn::{train, TrainConfig};
    use crate::pqc::{build_layered_ansatz, Binding, Entangler, GateKind, GateSpec};
    use crate::qcore::{max_abs, partial_trace, random_state, trace_distance, Observable, PureState};
    use nalgebra::DMatrix;

    fn toy() -> (TrainedModel, Dataset) {
        let t = build_layered_ansatz(2, 2, Entangler::Linear, false).unwrap();
        let d = generate_dataset(Generator::TwoMoons, 40, 0.1, 1).unwrap();
        let d = d
            .apply_forget_policy(&ForgetPolicy::Cluster { label: 1, count: 5 })
            .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 2,
            ..TrainConfig::default()
        };
        (train(&t, &d, &cfg).unwrap(), d)
    }

    #[test]
    fn empty_forget_set_rejected() {
        let (m, d) = toy();
        let d = d.with_forget_rows(&[]).unwrap();
        assert!(matches!(qmu_i(&m, &d, &QmuIConfig::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn degenerate_config_is_a_plain_gradient_step() {
        let (m, d) = toy();
        let forget = d.samples(Subset::Forget);
        let cfg = QmuIConfig {
            clip: f64::INFINITY,
            trust_radius: f64::INFINITY,
            damping: 0.0,
            metric: Metric::Euclidean,
            batch_size: Some(forget.len()),
            iterations: 1,
            fine_tune: None,
            ..QmuIConfig::default()
        };
        let (out, trace) = qmu_i(&m, &d, &cfg).unwrap();
        let g = forget_gradient(&m.template, &m.theta, &forget, m.loss).unwrap();
        for i in 0..g.0.len() {
            assert!((out.theta[i] - (m.theta[i] - cfg.eta * g.0[i])).abs() < 1e-12);
        }
        assert_eq!(trace.snapshots.len(), 2);
    }

    #[test]
    fn trust_region_and_clip_hold_on_every_step() {
        let (m, d) = toy();
        let cfg = QmuIConfig {
            clip: 0.05,
            trust_radius: 0.02,
            iterations: 6,
            fine_tune: None,
            ..QmuIConfig::default()
        };
        let (_, trace) = qmu_i(&m, &d, &cfg).unwrap();
        for s in &trace.steps {
            assert!(s.clipped_norm <= cfg.clip + 1e-12);
            assert!(s.metric_norm_sq <= cfg.trust_radius * cfg.trust_radius + 1e-9);
        }
        assert_eq!(trace.snapshots.len(), 7);
    }

    #[test]
    fn qmu_i_fine_tune_adds_snapshots() {
        let (m, d) = toy();
        let cfg = QmuIConfig {
            iterations: 2,
            ..QmuIConfig::default()
        };
        let (_, trace) = qmu_i(&m, &d, &cfg).unwrap();
        assert!(trace.snapshots.len() > 3);
    }

    fn one_param() -> TrainedModel {
        let t = CircuitTemplate::new(
            1,
            vec![
                GateSpec::rotation(GateKind::Ry, 0, Binding::Data { feature: 0, scale: 1.0 }),
                GateSpec::rotation(GateKind::Ry, 0, Binding::Trainable { param: 0 }),
            ],
            1,
            1,
            Observable::z(1, 0).unwrap(),
        )
        .unwrap();
        TrainedModel {
            template: t,
            theta: ParamVector::from(vec![0.3]),
            loss_trace: vec![],
            loss: LossSpec::Mse,
            seed: 0,
        }
    }

    #[test]
    fn influence_examples() {
        let m = one_param();
        // At x = 0, θ = 0 the prediction is exactly the label: zero gradient.
        let mut at_opt = m.clone();
        at_opt.theta = ParamVector::from(vec![0.0]);
        let s = vec![Sample { x: vec![0.0], y: 1.0 }];
        let d = influence_delta(&at_opt, &s, 1e-3, Metric::Euclidean).unwrap();
        assert!(d[0].abs() < 1e-12);

        let s = vec![Sample { x: vec![0.2], y: 1.0 }, Sample { x: vec![-0.1], y: 1.0 }];
        let d = influence_delta(&m, &s, 0.0, Metric::Euclidean).unwrap();
        let g = forget_gradient(&m.template, &m.theta, &s, m.loss).unwrap();
        assert!((d[0] + g.0[0]).abs() < 1e-15);

        // Grid oracle: the training loss on S at θ + Δθ exceeds that at θ.
        let d = influence_delta(&m, &s, 1e-3, Metric::Qfim { mode: QfimMode::Full }).unwrap();
        let loss_at = |th: f64| {
            s.iter()
                .map(|p| {
                    let pred = (p.x[0] + th).cos();
                    (pred - p.y).powi(2)
                })
                .sum::<f64>()
                / s.len() as f64
        };
        assert!(loss_at(m.theta[0] + d[0]) > loss_at(m.theta[0]));
    }

    #[test]
    fn fisher_step_examples() {
        let m = one_param();
        let s = vec![Sample { x: vec![0.2], y: 1.0 }, Sample { x: vec![0.5], y: -1.0 }];
        let a = fisher_step(&m, &s, 0.1, 1e-3).unwrap();
        let b = fisher_step_via_natural(&m, &s, 0.1, 1e-3).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12);
        let mut at_opt = m.clone();
        at_opt.theta = ParamVector::from(vec![0.0]);
        let zero = vec![Sample { x: vec![0.0], y: 1.0 }];
        assert_eq!(fisher_step(&at_opt, &zero, 0.1, 1e-3).unwrap()[0], 0.0);
        // Single-RY QFIM is uniform 0.25: step is the plain step over 0.25+λ.
        let g = forget_gradient(&m.template, &m.theta, &s, m.loss).unwrap();
        assert!((a[0] - (m.theta[0] - 0.1 * g.0[0] / 0.251)).abs() < 1e-12);
    }

    #[test]
    fn selection_examples() {
        let f = Qfim {
            matrix: DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.0])),
            damping: 0.0,
        };
        assert_eq!(fisher_ranked_selection(&f, 0.5).unwrap(), vec![0]);
        assert_eq!(fisher_ranked_selection(&f, 1.0).unwrap(), vec![0, 1]);
        let flat = Qfim::identity(4);
        assert_eq!(fisher_ranked_selection(&flat, 0.5).unwrap(), vec![0, 1]);
        assert!(fisher_ranked_selection(&flat, 0.0).is_err());
        assert!(fisher_ranked_selection(&flat, 1.5).is_err());
    }

    #[test]
    fn reset_examples() {
        let (m, d) = toy();
        assert!(reset_partial(&m, &d, &[], 1, None).is_err());
        let all: Vec<usize> = (0..m.theta.len()).collect();
        let (out, _) = reset_partial(&m, &d, &all, 9, None).unwrap();
        assert_eq!(out.theta, random_params(m.theta.len(), &mut derived_rng(9, "reset", 0)));
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (out, _) = reset_partial(&m, &d, &[1, 4], 9, Some(&cfg)).unwrap();
        for i in 0..m.theta.len() {
            if i != 1 && i != 4 {
                assert_eq!(out.theta[i].to_bits(), m.theta[i].to_bits());
            }
        }
    }

    #[test]
    fn client_forget_examples() {
        let a = PureState::basis(1, 1).unwrap().to_density();
        let b = random_state(2, 3).unwrap();
        let out = client_forget(&a.tensor(&b).unwrap(), &[0]).unwrap();
        let expect = DensityMatrix::maximally_mixed(1).unwrap().tensor(&b).unwrap();
        assert!(max_abs(&(out.matrix() - expect.matrix())) < 1e-12);

        let h = crate::qcore::C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let z = crate::qcore::ZERO;
        let bell = PureState::from_amplitudes(&[h, z, z, h]).unwrap().to_density();
        let out = client_forget(&bell, &[1]).unwrap();
        assert!(max_abs(&(out.matrix() - DensityMatrix::maximally_mixed(2).unwrap().matrix())) < 1e-12);
        assert!(client_forget(&bell, &[0, 1]).is_err());
    }

    #[test]
    fn client_forget_contracts_toward_product_references() {
        for seed in 0..20u64 {
            let rho = random_state(4, seed).unwrap();
            let rest = random_state(2, seed + 100).unwrap();
            let reference = DensityMatrix::maximally_mixed(2).unwrap().tensor(&rest).unwrap();
            let out = client_forget(&rho, &[0, 1]).unwrap();
            out.validate(1e-9).unwrap();
            let m_in = partial_trace(&rho, &[2, 3]).unwrap();
            let m_out = partial_trace(&out, &[2, 3]).unwrap();
            assert!(max_abs(&(m_in.matrix() - m_out.matrix())) < 1e-9);
            assert!(trace_distance(&out, &reference).unwrap() <= trace_distance(&rho, &reference).unwrap() + 1e-9);
        }
    }
}
