//! Losses, parameter-shift gradients and the quantum Fisher information
//! metric (QFIM) used for natural-gradient steps.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::pqc::{predict, predict_tweaked, run_vector, CircuitTemplate, ParamVector, Tweak};
use crate::qcore::{CVector, C64};
use crate::{Error, Result};

/// Eigenvalue floor below which `F + λI` is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Per-sample loss on the readout expectation `p ∈ [−1, 1]` and label
/// `y ∈ {−1, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `(p − y)²`
    Mse,
    /// Binary cross-entropy on `q = (1 + p)/2`.
    Logistic,
    /// `−y·p`
    Expectation,
}

const PROB_FLOOR: f64 = 1e-12;

impl LossSpec {
    pub fn value(self, p: f64, y: f64) -> f64 {
        match self {
            LossSpec::Mse => (p - y) * (p - y),
            LossSpec::Logistic => {
                let q = ((1.0 + p) / 2.0).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                let t = (1.0 + y) / 2.0;
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            }
            LossSpec::Expectation => -y * p,
        }
    }

    /// `∂ℓ/∂p`.
    pub fn derivative(self, p: f64, y: f64) -> f64 {
        match self {
            LossSpec::Mse => 2.0 * (p - y),
            LossSpec::Logistic => {
                let q = ((1.0 + p) / 2.0).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                let t = (1.0 + y) / 2.0;
                0.5 * (q - t) / (q * (1.0 - q))
            }
            LossSpec::Expectation => -y,
        }
    }
}

/// Gradient of a scalar loss with respect to the trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(n: usize) -> Self {
        GradVector(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| *g *= s);
    }

    pub fn add_scaled(&mut self, other: &GradVector, s: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }
}

/// Mean loss over a batch.
pub fn mean_loss(t: &CircuitTemplate, theta: &ParamVector, batch: &[Sample], loss: LossSpec) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut acc = 0.0;
    for s in batch {
        acc += loss.value(predict(t, theta, &s.x)?, s.y);
    }
    Ok(acc / batch.len() as f64)
}

/// `∂p/∂θ_k` for every parameter by the two-term shift rule, summed over all
/// gates sharing a parameter.
pub fn prediction_gradient(t: &CircuitTemplate, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; t.n_params()];
    for (k, g) in grad.iter_mut().enumerate() {
        for gate in t.gates_for_param(k) {
            let plus = predict_tweaked(t, theta, x, Tweak::Shift { gate, delta: FRAC_PI_2 })?;
            let minus = predict_tweaked(
                t,
                theta,
                x,
                Tweak::Shift {
                    gate,
                    delta: -FRAC_PI_2,
                },
            )?;
            *g += 0.5 * (plus - minus);
        }
    }
    Ok(grad)
}

/// Gradient of a single sample's loss.
pub fn sample_gradient(t: &CircuitTemplate, theta: &ParamVector, s: &Sample, loss: LossSpec) -> Result<GradVector> {
    let p = predict(t, theta, &s.x)?;
    let dl = loss.derivative(p, s.y);
    let mut g = prediction_gradient(t, theta, &s.x)?;
    g.iter_mut().for_each(|v| *v *= dl);
    Ok(GradVector(g))
}

/// Exact gradient of the batch-mean loss by the parameter-shift rule. Valid
/// for noisy templates too, since depolarizing layers commute with the
/// linearity the rule relies on.
pub fn parameter_shift_gradient(
    t: &CircuitTemplate,
    theta: &ParamVector,
    batch: &[Sample],
    loss: LossSpec,
) -> Result<GradVector> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut acc = GradVector::zeros(t.n_params());
    for s in batch {
        acc.add_scaled(&sample_gradient(t, theta, s, loss)?, 1.0);
    }
    acc.scale(1.0 / batch.len() as f64);
    Ok(acc)
}

/// Central finite differences of the batch-mean loss with step `h`.
pub fn finite_diff_gradient(
    t: &CircuitTemplate,
    theta: &ParamVector,
    batch: &[Sample],
    loss: LossSpec,
    h: f64,
) -> Result<GradVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", format!("{h} must be positive")));
    }
    let mut grad = vec![0.0; t.n_params()];
    let mut probe = theta.clone();
    for (k, g) in grad.iter_mut().enumerate() {
        let base = theta[k];
        probe.as_mut_slice()[k] = base + h;
        let plus = mean_loss(t, &probe, batch, loss)?;
        probe.as_mut_slice()[k] = base - h;
        let minus = mean_loss(t, &probe, batch, loss)?;
        probe.as_mut_slice()[k] = base;
        *g = (plus - minus) / (2.0 * h);
    }
    Ok(GradVector(grad))
}

/// Which entries of the QFIM are computed; the rest are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QfimMode {
    Full,
    /// Block-diagonal with consecutive parameter blocks of `size`.
    Block {
        size: usize,
    },
    Diagonal,
}

impl QfimMode {
    fn keeps(self, i: usize, j: usize) -> bool {
        match self {
            QfimMode::Full => true,
            QfimMode::Block { size } => i / size == j / size,
            QfimMode::Diagonal => i == j,
        }
    }
}

/// Quantum Fisher information matrix together with the damping it will be
/// regularized with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qfim {
    pub matrix: DMatrix<f64>,
    pub damping: f64,
}

impl Qfim {
    pub fn identity(n: usize) -> Self {
        Qfim {
            matrix: DMatrix::identity(n, n),
            damping: 0.0,
        }
    }

    pub fn with_damping(mut self, lambda: f64) -> Self {
        self.damping = lambda;
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }
}

fn param_derivatives(t: &CircuitTemplate, theta: &ParamVector, x: &[f64]) -> Vec<CVector> {
    let dim = 1usize << t.n_qubits();
    (0..t.n_params())
        .map(|k| {
            let mut d = CVector::zeros(dim);
            for gate in t.gates_for_param(k) {
                d += run_vector(t, theta, x, Tweak::Derivative { gate });
            }
            d
        })
        .collect()
}

/// `F_ij = Re[⟨∂_iψ|∂_jψ⟩ − ⟨∂_iψ|ψ⟩⟨ψ|∂_jψ⟩]` for the noiseless state at
/// input `x`.
pub fn qfim(t: &CircuitTemplate, theta: &ParamVector, x: &[f64], mode: QfimMode) -> Result<Qfim> {
    if t.is_noisy() {
        return Err(Error::NoisyTemplate("qfim"));
    }
    if let QfimMode::Block { size: 0 } = mode {
        return Err(Error::param("qfim block size", "must be positive"));
    }
    t.check_inputs(theta, x)?;
    let psi = run_vector(t, theta, x, Tweak::None);
    let d = param_derivatives(t, theta, x);
    let overlaps: Vec<C64> = d.iter().map(|di| di.dotc(&psi)).collect();
    let n = t.n_params();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            if mode.keeps(i, j) {
                let v = (d[i].dotc(&d[j]) - overlaps[i] * overlaps[j].conj()).re;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    Ok(Qfim {
        matrix: m,
        damping: 0.0,
    })
}

/// QFIM averaged over the inputs of a batch.
pub fn qfim_batch(t: &CircuitTemplate, theta: &ParamVector, batch: &[Sample], mode: QfimMode) -> Result<Qfim> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = t.n_params();
    let mut acc = DMatrix::zeros(n, n);
    for s in batch {
        acc += qfim(t, theta, &s.x, mode)?.matrix;
    }
    Ok(Qfim {
        matrix: acc / batch.len() as f64,
        damping: 0.0,
    })
}

/// `(F + λI)^{-1}`; exact elementwise inverse when `F` is diagonal.
pub fn damped_inverse(f: &Qfim, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(
            "lambda",
            format!("{lambda} must be finite and non-negative"),
        ));
    }
    let n = f.dim();
    if f.is_diagonal() {
        let diag: Vec<f64> = (0..n).map(|i| f.matrix[(i, i)] + lambda).collect();
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= SINGULAR_TOL {
            return Err(Error::Singular(min));
        }
        return Ok(DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            diag.iter().map(|v| 1.0 / v),
        )));
    }
    let a = &f.matrix + DMatrix::identity(n, n) * lambda;
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= SINGULAR_TOL {
        return Err(Error::Singular(min));
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `θ − η (F + λI)^{-1} g`.
pub fn natural_step(theta: &ParamVector, g: &GradVector, f: &Qfim, eta: f64, lambda: f64) -> Result<ParamVector> {
    let n = theta.len();
    if g.0.len() != n || f.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: if g.0.len() != n { g.0.len() } else { f.dim() },
        });
    }
    let p = damped_inverse(f, lambda)?;
    let dir = p * DVector::from_column_slice(&g.0);
    ParamVector::new(theta.iter().zip(dir.iter()).map(|(t, d)| t - eta * d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pqc::{build_layered_ansatz, Binding, Entangler, GateKind, GateSpec};
    use crate::qcore::Observable;

    fn single_ry() -> CircuitTemplate {
        CircuitTemplate::new(
            1,
            vec![GateSpec::rotation(GateKind::Ry, 0, Binding::Trainable { param: 0 })],
            1,
            0,
            Observable::z(1, 0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn shift_rule_on_single_ry() {
        // ⟨Z⟩ = cos θ, so ∂/∂θ = −sin θ.
        let t = single_ry();
        for &th in &[0.0, 0.3, 1.2, -2.0] {
            let g = prediction_gradient(&t, &ParamVector::from(vec![th]), &[]).unwrap();
            assert!((g[0] + th.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_ry_qfim_is_quarter() {
        let t = single_ry();
        for &th in &[0.0, 0.7, 2.5] {
            let f = qfim(&t, &ParamVector::from(vec![th]), &[], QfimMode::Full).unwrap();
            assert!((f.matrix[(0, 0)] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_matches_finite_differences() {
        let t = build_layered_ansatz(2, 2, Entangler::Linear, true).unwrap();
        let theta = crate::pqc::random_params(t.n_params(), &mut crate::rng::rng_from_seed(4));
        let batch = vec![
            Sample {
                x: vec![0.3, -1.0],
                y: 1.0,
            },
            Sample {
                x: vec![-2.0, 0.5],
                y: -1.0,
            },
        ];
        for loss in [LossSpec::Mse, LossSpec::Logistic, LossSpec::Expectation] {
            let a = parameter_shift_gradient(&t, &theta, &batch, loss).unwrap();
            let b = finite_diff_gradient(&t, &theta, &batch, loss, 1e-5).unwrap();
            for (x, y) in a.0.iter().zip(&b.0) {
                assert!((x - y).abs() < 1e-6, "{loss:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn qfim_is_symmetric_psd_and_modes_mask() {
        let t = build_layered_ansatz(3, 2, Entangler::Ring, false).unwrap();
        let theta = crate::pqc::random_params(t.n_params(), &mut crate::rng::rng_from_seed(2));
        let x = [0.1, 0.2, 0.3];
        let full = qfim(&t, &theta, &x, QfimMode::Full).unwrap().matrix;
        assert!((&full - full.transpose()).amax() < 1e-12);
        assert!(full.clone().symmetric_eigen().eigenvalues.min() > -1e-10);
        let diag = qfim(&t, &theta, &x, QfimMode::Diagonal).unwrap().matrix;
        let block = qfim(&t, &theta, &x, QfimMode::Block { size: 4 }).unwrap().matrix;
        for i in 0..full.nrows() {
            for j in 0..full.ncols() {
                let d = if i == j { full[(i, j)] } else { 0.0 };
                assert_eq!(diag[(i, j)], d);
                let b = if i / 4 == j / 4 { full[(i, j)] } else { 0.0 };
                assert_eq!(block[(i, j)], b);
            }
        }
    }

    #[test]
    fn qfim_rejects_noise() {
        let t = single_ry().with_noise(0.1).unwrap();
        assert!(matches!(
            qfim(&t, &ParamVector::from(vec![0.0]), &[], QfimMode::Full),
            Err(Error::NoisyTemplate(_))
        ));
    }

    #[test]
    fn natural_step_with_identity_metric_is_plain_descent() {
        let theta = ParamVector::from(vec![1.0, -1.0]);
        let g = GradVector(vec![0.5, 2.0]);
        let next = natural_step(&theta, &g, &Qfim::identity(2), 0.1, 0.0).unwrap();
        assert!((next[0] - 0.95).abs() < 1e-15);
        assert!((next[1] + 1.2).abs() < 1e-15);
    }

    #[test]
    fn damped_inverse_singular_and_exact() {
        let zero = Qfim {
            matrix: DMatrix::zeros(2, 2),
            damping: 0.0,
        };
        assert!(matches!(damped_inverse(&zero, 0.0), Err(Error::Singular(_))));
        let inv = damped_inverse(&zero, 1e-3).unwrap();
        assert!((inv[(0, 0)] - 1e3).abs() < 1e-9);
        let f = Qfim {
            matrix: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
            damping: 0.0,
        };
        let inv = damped_inverse(&f, 0.5).unwrap();
        let a = &f.matrix + DMatrix::identity(2, 2) * 0.5;
        assert!((a * inv - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        let rank_one = Qfim {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            damping: 0.0,
        };
        assert!(matches!(damped_inverse(&rank_one, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn logistic_derivative_matches_difference() {
        for &(p, y) in &[(0.3, 1.0), (-0.8, 1.0), (0.1, -1.0)] {
            let h = 1e-6;
            let fd = (LossSpec::Logistic.value(p + h, y) - LossSpec::Logistic.value(p - h, y)) / (2.0 * h);
            assert!((fd - LossSpec::Logistic.derivative(p, y)).abs() < 1e-6);
        }
    }
}
