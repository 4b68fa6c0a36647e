//! Supervised PQC training, evaluation, and the counterfactual retrain that
//! serves as the reference for every unlearning audit.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample, Subset};
use crate::geo::{mean_loss, natural_step, parameter_shift_gradient, qfim_batch, LossSpec, Qfim, QfimMode};
use crate::pqc::{predict, random_params, CircuitTemplate, ParamVector};
use crate::rng::derived_rng;
use crate::{Error, Result};

/// Minimum loss decrease that counts as an improvement for early stopping.
const IMPROVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Gd,
    /// Natural gradient preconditioned by the batch QFIM.
    Natural { mode: QfimMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// `λ` added to the QFIM before inversion.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    #[serde(default)]
    pub patience: usize,
    #[serde(default = "default_loss")]
    pub loss: LossSpec,
    pub seed: u64,
}

fn default_damping() -> f64 {
    1e-3
}

fn default_loss() -> LossSpec {
    LossSpec::Mse
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 30,
            batch_size: 8,
            optimizer: Optimizer::Gd,
            damping: default_damping(),
            patience: 0,
            loss: default_loss(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", format!("{} must be positive", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::validation(
                "damping",
                format!("{} must be non-negative", self.damping),
            ));
        }
        if let Optimizer::Natural {
            mode: QfimMode::Block { size: 0 },
        } = self.optimizer
        {
            return Err(Error::validation("optimizer.mode.size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub template: CircuitTemplate,
    pub theta: ParamVector,
    /// Mean training loss after each completed epoch.
    pub loss_trace: Vec<f64>,
    pub loss: LossSpec,
    pub seed: u64,
}

impl TrainedModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        predict(&self.template, &self.theta, x)
    }

    pub fn with_theta(&self, theta: ParamVector) -> Self {
        Self {
            theta,
            loss_trace: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// `+1` for `p ≥ 0`, else `−1`.
pub fn predicted_label(p: f64) -> f64 {
    if p >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Mini-batch descent from `theta` on `samples`. Coordinates with
/// `trainable[i] == false` are never written. Returns the final parameters
/// and the per-epoch loss trace.
pub fn fit(
    t: &CircuitTemplate,
    theta: ParamVector,
    samples: &[Sample],
    cfg: &TrainConfig,
    trainable: Option<&[bool]>,
) -> Result<(ParamVector, Vec<f64>)> {
    fit_observed(t, theta, samples, cfg, trainable, &mut |_| {})
}

/// [`fit`] that hands the parameters to `on_epoch` after every epoch.
pub fn fit_observed(
    t: &CircuitTemplate,
    theta: ParamVector,
    samples: &[Sample],
    cfg: &TrainConfig,
    trainable: Option<&[bool]>,
    on_epoch: &mut dyn FnMut(&ParamVector),
) -> Result<(ParamVector, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let Some(mask) = trainable {
        if mask.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                actual: mask.len(),
            });
        }
    }
    let mut theta = theta;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derived_rng(cfg.seed, "epoch", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            theta = descent_step(t, &theta, &batch, cfg, trainable)?;
        }
        on_epoch(&theta);
        let loss = mean_loss(t, &theta, samples, cfg.loss)?;
        trace.push(loss);
        if loss < best - IMPROVE_TOL {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((theta, trace))
}

fn descent_step(
    t: &CircuitTemplate,
    theta: &ParamVector,
    batch: &[Sample],
    cfg: &TrainConfig,
    trainable: Option<&[bool]>,
) -> Result<ParamVector> {
    let mut g = parameter_shift_gradient(t, theta, batch, cfg.loss)?;
    if let Some(mask) = trainable {
        for (gi, &free) in g.0.iter_mut().zip(mask) {
            if !free {
                *gi = 0.0;
            }
        }
    }
    let proposal = match cfg.optimizer {
        Optimizer::Gd => ParamVector::from(
            theta
                .iter()
                .zip(&g.0)
                .map(|(th, gi)| th - cfg.lr * gi)
                .collect::<Vec<_>>(),
        ),
        Optimizer::Natural { mode } => {
            let mut f = qfim_batch(t, theta, batch, mode)?;
            if let Some(mask) = trainable {
                isolate_frozen(&mut f, mask);
            }
            natural_step(theta, &g, &f, cfg.lr, cfg.damping)?
        }
    };
    Ok(match trainable {
        None => proposal,
        Some(mask) => ParamVector::from(
            (0..theta.len())
                .map(|i| if mask[i] { proposal[i] } else { theta[i] })
                .collect::<Vec<_>>(),
        ),
    })
}

/// Decouples frozen coordinates from the metric so the free block is
/// preconditioned by its own sub-QFIM.
fn isolate_frozen(f: &mut Qfim, mask: &[bool]) {
    let n = f.dim();
    for i in 0..n {
        for j in 0..n {
            if !mask[i] || !mask[j] {
                f.matrix[(i, j)] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
}

/// Initial parameters for a training seed: uniform on `[−π, π)`.
pub fn init_params(t: &CircuitTemplate, seed: u64) -> ParamVector {
    random_params(t.n_params(), &mut derived_rng(seed, "init", 0))
}

fn train_rows(t: &CircuitTemplate, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (theta, loss_trace) = fit(t, init_params(t, cfg.seed), samples, cfg, None)?;
    Ok(TrainedModel {
        template: t.clone(),
        theta,
        loss_trace,
        loss: cfg.loss,
        seed: cfg.seed,
    })
}

/// Trains on the full train split (forget rows included).
pub fn train(t: &CircuitTemplate, data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_rows(t, &data.samples(Subset::Train), cfg)
}

/// Trains from the same initialization on `D_s` only.
pub fn retrain_counterfactual(t: &CircuitTemplate, data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let retained = data.samples(Subset::Retain);
    if retained.is_empty() {
        return Err(Error::Empty("retained set"));
    }
    train_rows(t, &retained, cfg)
}

pub fn evaluate(model: &TrainedModel, samples: &[Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let p = model.predict(&s.x)?;
        loss += model.loss.value(p, s.y);
        if predicted_label(p) == s.y {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(Metrics {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

pub fn evaluate_subset(model: &TrainedModel, data: &Dataset, subset: Subset) -> Result<Metrics> {
    evaluate(model, &data.samples(subset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Generator, Split};
    use crate::pqc::{build_layered_ansatz, Binding, Entangler, GateKind, GateSpec};
    use crate::qcore::Observable;
    use std::f64::consts::PI;

    fn one_qubit_encoder() -> CircuitTemplate {
        CircuitTemplate::new(
            1,
            vec![
                GateSpec::rotation(GateKind::Ry, 0, Binding::Data { feature: 0, scale: 1.0 }),
                GateSpec::rotation(GateKind::Ry, 0, Binding::Trainable { param: 0 }),
            ],
            1,
            1,
            Observable::z(1, 0).unwrap(),
        )
        .unwrap()
    }

    fn separable_1d() -> Dataset {
        let xs = [-2.5, -2.0, -1.6, -1.2, -0.9, 0.9, 1.2, 1.6, 2.0, 2.5];
        let features = xs.iter().map(|&x| vec![x]).collect();
        // ⟨Z⟩ = cos(x + θ): θ = π/2 gives −sin x, which is +1-signed for x < 0.
        let labels = xs.iter().map(|&x| if x < 0.0 { 1.0 } else { -1.0 }).collect();
        Dataset::new(features, labels, vec![Split::Train; 10], vec![false; 10]).unwrap()
    }

    #[test]
    fn epoch_contract() {
        let t = one_qubit_encoder();
        let d = separable_1d();
        let mut cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&t, &d, &cfg).is_err());
        cfg.epochs = 1;
        assert_eq!(train(&t, &d, &cfg).unwrap().loss_trace.len(), 1);
    }

    #[test]
    fn separable_toy_trains_to_high_accuracy() {
        let t = one_qubit_encoder();
        let d = separable_1d();
        // Oracle: a grid over θ confirms a perfect classifier exists.
        let grid_best = (0..720)
            .map(|k| {
                let th = -PI + 2.0 * PI * k as f64 / 720.0;
                let m = TrainedModel {
                    template: t.clone(),
                    theta: ParamVector::from(vec![th]),
                    loss_trace: vec![],
                    loss: LossSpec::Mse,
                    seed: 0,
                };
                evaluate(&m, &d.samples(Subset::Train)).unwrap().accuracy
            })
            .fold(0.0, f64::max);
        assert_eq!(grid_best, 1.0);
        let cfg = TrainConfig {
            lr: 0.2,
            epochs: 40,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let m = train(&t, &d, &cfg).unwrap();
        assert!(evaluate_subset(&m, &d, Subset::Train).unwrap().accuracy >= 0.95);
    }

    #[test]
    fn deterministic_and_counterfactual_of_empty_forget_is_train() {
        let t = build_layered_ansatz(2, 1, Entangler::Linear, false).unwrap();
        let d = generate_dataset(Generator::Blobs, 20, 0.1, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train(&t, &d, &cfg).unwrap();
        let b = train(&t, &d, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(retrain_counterfactual(&t, &d, &cfg).unwrap(), a);
    }

    #[test]
    fn evaluate_conventions() {
        // Zero-parameter circuit RX(π/2) on |0⟩ gives ⟨Z⟩ = 0 everywhere.
        let t = CircuitTemplate::new(
            1,
            vec![GateSpec::rotation(GateKind::Rx, 0, Binding::Fixed { angle: PI / 2.0 })],
            0,
            0,
            Observable::z(1, 0).unwrap(),
        )
        .unwrap();
        let m = TrainedModel {
            template: t,
            theta: ParamVector::zeros(0),
            loss_trace: vec![],
            loss: LossSpec::Mse,
            seed: 0,
        };
        let balanced = vec![
            Sample { x: vec![], y: 1.0 },
            Sample { x: vec![], y: -1.0 },
            Sample { x: vec![], y: 1.0 },
            Sample { x: vec![], y: -1.0 },
        ];
        let r = evaluate(&m, &balanced).unwrap();
        assert_eq!(r.accuracy, 0.5);
        // Hand oracle: (0 − 1)² and (0 + 1)² average to 1.
        assert!((r.loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gd_loss_is_monotone_on_convex_toy() {
        // 1 qubit, 1 parameter, single point at x = 0: loss (cos θ − 1)².
        let t = one_qubit_encoder();
        let d = Dataset::new(vec![vec![0.0]], vec![1.0], vec![Split::Train], vec![false]).unwrap();
        let cfg = TrainConfig {
            lr: 0.1,
            epochs: 30,
            batch_size: 1,
            seed: 11,
            ..TrainConfig::default()
        };
        let m = train(&t, &d, &cfg).unwrap();
        assert!(m.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn masked_fit_leaves_frozen_coordinates() {
        let t = build_layered_ansatz(2, 2, Entangler::Linear, false).unwrap();
        let d = generate_dataset(Generator::TwoMoons, 20, 0.1, 2).unwrap();
        let theta = init_params(&t, 5);
        let mask: Vec<bool> = (0..t.n_params()).map(|i| i % 3 == 0).collect();
        for optimizer in [Optimizer::Gd, Optimizer::Natural { mode: QfimMode::Full }] {
            let cfg = TrainConfig {
                epochs: 2,
                optimizer,
                ..TrainConfig::default()
            };
            let (out, _) = fit(&t, theta.clone(), &d.samples(Subset::Train), &cfg, Some(&mask)).unwrap();
            for i in 0..mask.len() {
                if !mask[i] {
                    assert_eq!(out[i].to_bits(), theta[i].to_bits());
                }
            }
            assert_ne!(out, theta);
        }
    }

    #[test]
    fn early_stopping_truncates_trace() {
        let t = one_qubit_encoder();
        let d = separable_1d();
        let cfg = TrainConfig {
            lr: 0.5,
            epochs: 200,
            patience: 2,
            seed: 1,
            ..TrainConfig::default()
        };
        let m = train(&t, &d, &cfg).unwrap();
        assert!(m.loss_trace.len() < 200);
    }
}
