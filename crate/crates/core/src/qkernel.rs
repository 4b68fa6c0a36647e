//! Fidelity quantum kernels, kernel ridge regression with exact
//! decremental deletion, the deletion deviation bound, and alignment/MMD
//! drift diagnostics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::pqc::{run_vector, CircuitTemplate, ParamVector, Tweak};
use crate::qcore::CVector;
use crate::rng::derived_rng;
use crate::{Error, Result};

pub const GRAM_TOL: f64 = 1e-9;
pub const PSD_TOL: f64 = 1e-8;
/// Largest accepted `‖(K + λI)α − y‖_∞`.
pub const RESIDUAL_TOL: f64 = 1e-7;

/// Encoding circuit with frozen parameters: `φ(x) = U(θ_fixed, x)|0⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub template: CircuitTemplate,
    pub theta: ParamVector,
}

impl FeatureMap {
    pub fn new(template: CircuitTemplate, theta: ParamVector) -> Result<Self> {
        if template.is_noisy() {
            return Err(Error::NoisyTemplate("kernel feature map"));
        }
        if theta.len() != template.n_params() {
            return Err(Error::DimensionMismatch {
                expected: template.n_params(),
                actual: theta.len(),
            });
        }
        Ok(Self { template, theta })
    }

    /// Parameters drawn uniformly on `[−π, π)` from `seed`.
    pub fn from_seed(template: CircuitTemplate, seed: u64) -> Result<Self> {
        let theta = crate::pqc::random_params(template.n_params(), &mut derived_rng(seed, "feature_map", 0));
        Self::new(template, theta)
    }

    pub fn state(&self, x: &[f64]) -> Result<CVector> {
        self.template.check_inputs(&self.theta, x)?;
        Ok(run_vector(&self.template, &self.theta, x, Tweak::None))
    }
}

/// `|⟨φ(x)|φ(x')⟩|²`.
pub fn kernel_value(fm: &FeatureMap, x: &[f64], x2: &[f64]) -> Result<f64> {
    Ok(fm.state(x)?.dotc(&fm.state(x2)?).norm_sqr())
}

/// Kernel vector of `x` against `samples`.
pub fn kernel_vector(fm: &FeatureMap, samples: &[Vec<f64>], x: &[f64]) -> Result<DVector<f64>> {
    let phi = fm.state(x)?;
    let rows = samples
        .iter()
        .map(|s| Ok(fm.state(s)?.dotc(&phi).norm_sqr()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub samples: Vec<Vec<f64>>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Symmetry, unit diagonal and PSD checks.
    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        let asym = (m - m.transpose()).amax();
        if asym > GRAM_TOL {
            return Err(Error::Invariant(format!("gram asymmetry {asym:.3e}")));
        }
        if let Some(i) = (0..m.nrows()).find(|&i| (m[(i, i)] - 1.0).abs() > GRAM_TOL) {
            return Err(Error::Invariant(format!("gram diagonal entry {i} is {}", m[(i, i)])));
        }
        let min = m.clone().symmetric_eigen().eigenvalues.min();
        if min < -PSD_TOL {
            return Err(Error::Invariant(format!("gram eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let n = self.len();
        let mut out = String::new();
        let header: Vec<String> = (0..n).map(|j| format!("k{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.matrix[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Gram matrix of pairwise kernel values, assembled from the upper
/// triangle.
pub fn gram(fm: &FeatureMap, samples: &[Vec<f64>]) -> Result<GramMatrix> {
    if samples.is_empty() {
        return Err(Error::Empty("gram sample set"));
    }
    let states = samples.iter().map(|s| fm.state(s)).collect::<Result<Vec<_>>>()?;
    let n = states.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = states[i].dotc(&states[j]).norm_sqr();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        matrix: m,
        samples: samples.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRidgeModel {
    pub alpha: DVector<f64>,
    pub lambda: f64,
    pub y: DVector<f64>,
    pub samples: Vec<Vec<f64>>,
    pub gram: DMatrix<f64>,
    /// `(K + λI)^{-1}`, kept for decremental updates.
    pub inverse: DMatrix<f64>,
}

impl KernelRidgeModel {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn residual(&self) -> f64 {
        let a = &self.gram + DMatrix::identity(self.len(), self.len()) * self.lambda;
        (a * &self.alpha - &self.y).amax()
    }

    /// `k(x)ᵀ α` for a precomputed kernel vector.
    pub fn predict_kernel(&self, k: &DVector<f64>) -> f64 {
        k.dot(&self.alpha)
    }
}

/// Solves `(K + λI)α = y`.
pub fn krr_fit(k: &GramMatrix, y: &[f64], lambda: f64) -> Result<KernelRidgeModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda_ridge", format!("{lambda} must be positive")));
    }
    let n = k.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let a = &k.matrix + DMatrix::identity(n, n) * lambda;
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(a.clone().symmetric_eigen().eigenvalues.min()))?;
    let inverse = chol.inverse();
    let inverse = (&inverse + inverse.transpose()) * 0.5;
    let y = DVector::from_column_slice(y);
    let alpha = chol.solve(&y);
    let model = KernelRidgeModel {
        alpha,
        lambda,
        y,
        samples: k.samples.clone(),
        gram: k.matrix.clone(),
        inverse,
    };
    let r = model.residual();
    if r > RESIDUAL_TOL {
        return Err(Error::Invariant(format!("ridge residual {r:.3e}")));
    }
    Ok(model)
}

pub fn krr_predict(model: &KernelRidgeModel, fm: &FeatureMap, x: &[f64]) -> Result<f64> {
    Ok(model.predict_kernel(&kernel_vector(fm, &model.samples, x)?))
}

fn split_indices(n: usize, deleted: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut del = vec![false; n];
    for &i in deleted {
        if i >= n {
            return Err(Error::validation(
                "indices",
                format!("{i} out of range for {n} samples"),
            ));
        }
        if del[i] {
            return Err(Error::validation("indices", format!("{i} listed twice")));
        }
        del[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !del[i]).collect();
    if keep.is_empty() {
        return Err(Error::validation("indices", "cannot delete every sample"));
    }
    let mut gone = deleted.to_vec();
    gone.sort_unstable();
    Ok((keep, gone))
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Removes samples via the block-inverse identity
/// `(A_ss)^{-1} = B_ss − B_sr B_rr^{-1} B_rs` with `B = (K + λI)^{-1}`,
/// without refactorizing the retained system.
pub fn delete_samples_smw(model: &KernelRidgeModel, indices: &[usize]) -> Result<KernelRidgeModel> {
    let (keep, gone) = split_indices(model.len(), indices)?;
    if gone.is_empty() {
        return Ok(model.clone());
    }
    let b = &model.inverse;
    let b_ss = submatrix(b, &keep, &keep);
    let b_sr = submatrix(b, &keep, &gone);
    let b_rr = submatrix(b, &gone, &gone);
    let b_rr_inv = b_rr
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(b_rr.symmetric_eigen().eigenvalues.min()))?;
    let inverse = &b_ss - &b_sr * b_rr_inv * b_sr.transpose();
    let inverse = (&inverse + inverse.transpose()) * 0.5;
    let y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| model.y[i]));
    let alpha = &inverse * &y;
    Ok(KernelRidgeModel {
        alpha,
        lambda: model.lambda,
        y,
        samples: keep.iter().map(|&i| model.samples[i].clone()).collect(),
        gram: submatrix(&model.gram, &keep, &keep),
        inverse,
    })
}

/// Updated model plus the quantities behind its prediction-deviation bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionCertificate {
    pub updated: KernelRidgeModel,
    /// Original coefficients restricted to the retained samples.
    pub alpha_restricted: DVector<f64>,
    /// `‖α' − α_s‖₂`.
    pub alpha_gap: f64,
}

impl DeletionCertificate {
    /// `‖k_s(x)‖₂ · ‖α' − α_s‖₂`.
    pub fn bound(&self, fm: &FeatureMap, x: &[f64]) -> Result<f64> {
        Ok(kernel_vector(fm, &self.updated.samples, x)?.norm() * self.alpha_gap)
    }

    /// `(f'(x), f_s(x))`: the updated prediction and the original model's
    /// prediction with the deleted terms dropped.
    pub fn predictions(&self, fm: &FeatureMap, x: &[f64]) -> Result<(f64, f64)> {
        let k = kernel_vector(fm, &self.updated.samples, x)?;
        Ok((k.dot(&self.updated.alpha), k.dot(&self.alpha_restricted)))
    }
}

pub fn certify_deletion(model: &KernelRidgeModel, indices: &[usize]) -> Result<DeletionCertificate> {
    let (keep, _) = split_indices(model.len(), indices)?;
    let updated = delete_samples_smw(model, indices)?;
    let alpha_restricted = DVector::from_iterator(keep.len(), keep.iter().map(|&i| model.alpha[i]));
    let alpha_gap = (&updated.alpha - &alpha_restricted).norm();
    Ok(DeletionCertificate {
        updated,
        alpha_restricted,
        alpha_gap,
    })
}

/// Bound on `|f'(x) − f_s(x)|` after deleting `indices`.
pub fn deviation_bound(model: &KernelRidgeModel, indices: &[usize], fm: &FeatureMap, x: &[f64]) -> Result<f64> {
    certify_deletion(model, indices)?.bound(fm, x)
}

/// `⟨K1, K2⟩_F / (‖K1‖_F ‖K2‖_F)`.
pub fn alignment(k1: &DMatrix<f64>, k2: &DMatrix<f64>) -> Result<f64> {
    if k1.shape() != k2.shape() {
        return Err(Error::DimensionMismatch {
            expected: k1.nrows(),
            actual: k2.nrows(),
        });
    }
    let denom = k1.norm() * k2.norm();
    if denom == 0.0 {
        return Err(Error::Empty("kernel (zero norm)"));
    }
    Ok(k1.dot(k2) / denom)
}

/// Kernel MMD between two index sets of `K`, with `mmd²` floored at 0.
pub fn mmd(k: &DMatrix<f64>, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mmd index set"));
    }
    let n = k.nrows();
    if let Some(&i) = a.iter().chain(b).find(|&&i| i >= n) {
        return Err(Error::validation("mmd indices", format!("{i} out of range for {n}")));
    }
    let mean = |p: &[usize], q: &[usize]| {
        p.iter().flat_map(|&i| q.iter().map(move |&j| k[(i, j)])).sum::<f64>() / (p.len() * q.len()) as f64
    };
    Ok((mean(a, a) + mean(b, b) - 2.0 * mean(a, b)).max(0.0).sqrt())
}
