//! Parameterized circuit templates with angle-encoded classical features.

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::qcore::kernels::{apply_1q, apply_cnot, apply_cz, conjugate_by};
use crate::qcore::{
    apply_channel, expectation, make_channel, CVector, ChannelKind, DensityMatrix, Observable, PureState, State, C64,
    MAX_QUBITS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    Cnot,
    Cz,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz => 1,
            GateKind::Cnot | GateKind::Cz => 2,
        }
    }

    pub fn is_rotation(self) -> bool {
        self.arity() == 1
    }
}

/// Where a gate's angle comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binding {
    Fixed { angle: f64 },
    Trainable { param: usize },
    Data { feature: usize, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub binding: Binding,
}

impl GateSpec {
    pub fn rotation(kind: GateKind, qubit: usize, binding: Binding) -> Self {
        Self {
            kind,
            targets: vec![qubit],
            binding,
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::Cnot,
            targets: vec![control, target],
            binding: Binding::Fixed { angle: 0.0 },
        }
    }

    pub fn cz(a: usize, b: usize) -> Self {
        Self {
            kind: GateKind::Cz,
            targets: vec![a, b],
            binding: Binding::Fixed { angle: 0.0 },
        }
    }
}

/// Trainable angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("theta", format!("entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Ordered gate list acting on `|0⟩^⊗n`, with a readout observable and an
/// optional depolarizing probability applied to every qubit at each layer end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct CircuitTemplate {
    n_qubits: usize,
    gates: Vec<GateSpec>,
    n_params: usize,
    n_features: usize,
    readout: Observable,
    noise: Option<f64>,
    /// Gate counts after which a layer ends (noise insertion points).
    layer_ends: Vec<usize>,
}

#[derive(Deserialize)]
struct RawTemplate {
    n_qubits: usize,
    gates: Vec<GateSpec>,
    n_params: usize,
    n_features: usize,
    readout: Observable,
    #[serde(default)]
    noise: Option<f64>,
    #[serde(default)]
    layer_ends: Vec<usize>,
}

impl TryFrom<RawTemplate> for CircuitTemplate {
    type Error = Error;
    fn try_from(r: RawTemplate) -> Result<Self> {
        let t = CircuitTemplate::new(r.n_qubits, r.gates, r.n_params, r.n_features, r.readout)?
            .with_layer_ends(r.layer_ends)?;
        match r.noise {
            Some(p) => t.with_noise(p),
            None => Ok(t),
        }
    }
}

impl CircuitTemplate {
    pub fn new(
        n_qubits: usize,
        gates: Vec<GateSpec>,
        n_params: usize,
        n_features: usize,
        readout: Observable,
    ) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::validation("n_qubits", "must be at least 1"));
        }
        if n_qubits > MAX_QUBITS {
            return Err(Error::TooManyQubits(n_qubits));
        }
        if readout.n_qubits() != n_qubits {
            return Err(Error::validation(
                "readout",
                format!("acts on {} qubits, template has {n_qubits}", readout.n_qubits()),
            ));
        }
        let mut seen = vec![false; n_params];
        for (i, g) in gates.iter().enumerate() {
            let field = || format!("gates[{i}]");
            if g.targets.len() != g.kind.arity() {
                return Err(Error::validation(
                    field(),
                    format!("{:?} needs {} target(s)", g.kind, g.kind.arity()),
                ));
            }
            crate::qcore::check_targets(&g.targets, n_qubits).map_err(|e| Error::validation(field(), e.to_string()))?;
            match g.binding {
                Binding::Trainable { param } => {
                    if !g.kind.is_rotation() {
                        return Err(Error::validation(field(), "entangler cannot be trainable"));
                    }
                    if param >= n_params {
                        return Err(Error::validation(
                            field(),
                            format!("param index {param} >= n_params {n_params}"),
                        ));
                    }
                    seen[param] = true;
                }
                Binding::Data { feature, scale } => {
                    if !g.kind.is_rotation() {
                        return Err(Error::validation(field(), "entangler cannot be data-bound"));
                    }
                    if feature >= n_features {
                        return Err(Error::validation(
                            field(),
                            format!("feature index {feature} >= n_features {n_features}"),
                        ));
                    }
                    if !scale.is_finite() {
                        return Err(Error::validation(field(), "scale is not finite"));
                    }
                }
                Binding::Fixed { angle } => {
                    if !angle.is_finite() {
                        return Err(Error::validation(field(), "angle is not finite"));
                    }
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::validation(
                "n_params",
                format!("param {k} is not bound to any gate"),
            ));
        }
        Ok(Self {
            n_qubits,
            gates,
            n_params,
            n_features,
            readout,
            noise: None,
            layer_ends: Vec::new(),
        })
    }

    pub fn with_noise(mut self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation("noise", format!("{p} not in [0, 1]")));
        }
        self.noise = Some(p);
        Ok(self)
    }

    pub fn without_noise(mut self) -> Self {
        self.noise = None;
        self
    }

    pub fn with_layer_ends(mut self, ends: Vec<usize>) -> Result<Self> {
        if ends.iter().any(|&e| e == 0 || e > self.gates.len()) || ends.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "layer_ends",
                "must be strictly increasing gate counts in [1, len(gates)]",
            ));
        }
        self.layer_ends = ends;
        Ok(self)
    }

    pub fn with_readout(mut self, readout: Observable) -> Result<Self> {
        if readout.n_qubits() != self.n_qubits {
            return Err(Error::validation("readout", "qubit count mismatch"));
        }
        self.readout = readout;
        Ok(self)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn gates(&self) -> &[GateSpec] {
        &self.gates
    }

    pub fn readout(&self) -> &Observable {
        &self.readout
    }

    pub fn noise(&self) -> Option<f64> {
        self.noise
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }

    pub fn layer_ends(&self) -> &[usize] {
        &self.layer_ends
    }

    /// Gate positions bound to trainable parameter `k`.
    pub fn gates_for_param(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.gates
            .iter()
            .enumerate()
            .filter(move |(_, g)| matches!(g.binding, Binding::Trainable { param } if param == k))
            .map(|(i, _)| i)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("template: {e}")))
    }

    pub(crate) fn check_inputs(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                expected: self.n_params,
                actual: theta.len(),
            });
        }
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn angle(&self, gate: &GateSpec, theta: &[f64], x: &[f64]) -> f64 {
        match gate.binding {
            Binding::Fixed { angle } => angle,
            Binding::Trainable { param } => theta[param],
            Binding::Data { feature, scale } => scale * x[feature],
        }
    }
}

/// Perturbation applied to a single gate during execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Tweak {
    None,
    /// Adds `delta` to the gate's angle.
    Shift {
        gate: usize,
        delta: f64,
    },
    /// Follows the gate with `−(i/2)·G`, giving `∂U/∂angle` in place of `U`.
    Derivative {
        gate: usize,
    },
}

fn rotation_matrix(kind: GateKind, angle: f64) -> [[C64; 2]; 2] {
    let (s, c) = (angle / 2.0).sin_cos();
    let r = |v: f64| C64::new(v, 0.0);
    let i = |v: f64| C64::new(0.0, v);
    match kind {
        GateKind::Rx => [[r(c), i(-s)], [i(-s), r(c)]],
        GateKind::Ry => [[r(c), r(-s)], [r(s), r(c)]],
        GateKind::Rz => [[C64::new(c, -s), r(0.0)], [r(0.0), C64::new(c, s)]],
        GateKind::Cnot | GateKind::Cz => unreachable!("not a rotation"),
    }
}

/// `−(i/2)·G` for the rotation's Pauli generator `G`.
fn generator_matrix(kind: GateKind) -> [[C64; 2]; 2] {
    let z = C64::new(0.0, 0.0);
    let h = 0.5;
    match kind {
        GateKind::Rx => [[z, C64::new(0.0, -h)], [C64::new(0.0, -h), z]],
        GateKind::Ry => [[z, C64::new(-h, 0.0)], [C64::new(h, 0.0), z]],
        GateKind::Rz => [[C64::new(0.0, -h), z], [z, C64::new(0.0, h)]],
        GateKind::Cnot | GateKind::Cz => unreachable!("not a rotation"),
    }
}

fn apply_gate(t: &CircuitTemplate, idx: usize, theta: &[f64], x: &[f64], tweak: Tweak, buf: &mut [C64]) {
    let g = &t.gates[idx];
    let n = t.n_qubits;
    match g.kind {
        GateKind::Cnot => apply_cnot(g.targets[0], g.targets[1], n, buf),
        GateKind::Cz => apply_cz(g.targets[0], g.targets[1], n, buf),
        kind => {
            let mut angle = t.angle(g, theta, x);
            if let Tweak::Shift { gate, delta } = tweak {
                if gate == idx {
                    angle += delta;
                }
            }
            apply_1q(&rotation_matrix(kind, angle), g.targets[0], n, buf);
            if tweak == (Tweak::Derivative { gate: idx }) {
                apply_1q(&generator_matrix(kind), g.targets[0], n, buf);
            }
        }
    }
}

/// Noiseless statevector run; with `Tweak::Derivative` the result is an
/// unnormalized derivative vector.
pub(crate) fn run_vector(t: &CircuitTemplate, theta: &[f64], x: &[f64], tweak: Tweak) -> CVector {
    let mut v = CVector::zeros(1 << t.n_qubits);
    v[0] = C64::new(1.0, 0.0);
    let buf = v.as_mut_slice();
    for idx in 0..t.gates.len() {
        apply_gate(t, idx, theta, x, tweak, buf);
    }
    v
}

fn run_density(t: &CircuitTemplate, p: f64, theta: &[f64], x: &[f64], tweak: Tweak) -> Result<DensityMatrix> {
    let n = t.n_qubits;
    let mut rho = PureState::zero(n)?.to_density();
    let channel = make_channel(ChannelKind::Depolarizing, p)?;
    let mut ends = t.layer_ends.iter().peekable();
    for idx in 0..t.gates.len() {
        let m = conjugate_by(rho.matrix(), |col| apply_gate(t, idx, theta, x, tweak, col));
        rho = DensityMatrix::from_matrix_unchecked(n, m);
        if ends.peek() == Some(&&(idx + 1)) {
            ends.next();
            for q in 0..n {
                rho = apply_channel(&rho, &channel, &[q])?;
            }
        }
    }
    Ok(rho)
}

pub(crate) fn execute_tweaked(t: &CircuitTemplate, theta: &[f64], x: &[f64], tweak: Tweak) -> Result<State> {
    t.check_inputs(theta, x)?;
    Ok(match t.noise {
        None => State::Pure(PureState::from_vector_unchecked(
            t.n_qubits,
            run_vector(t, theta, x, tweak),
        )),
        Some(p) => State::Mixed(run_density(t, p, theta, x, tweak)?),
    })
}

/// Runs the circuit from `|0…0⟩`: a pure state when the template is
/// noiseless, otherwise a density matrix with depolarizing noise after each
/// layer.
pub fn execute(t: &CircuitTemplate, theta: &ParamVector, x: &[f64]) -> Result<State> {
    execute_tweaked(t, theta, x, Tweak::None)
}

/// Readout expectation of the executed state.
pub fn predict(t: &CircuitTemplate, theta: &ParamVector, x: &[f64]) -> Result<f64> {
    expectation(&execute(t, theta, x)?, &t.readout)
}

pub(crate) fn predict_tweaked(t: &CircuitTemplate, theta: &[f64], x: &[f64], tweak: Tweak) -> Result<f64> {
    expectation(&execute_tweaked(t, theta, x, tweak)?, &t.readout)
}

/// Probe-averaged output state `(1/|P|) Σ_x ρ(θ, x)`.
pub fn model_state(t: &CircuitTemplate, theta: &ParamVector, probes: &[Vec<f64>]) -> Result<DensityMatrix> {
    if probes.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let dim = 1usize << t.n_qubits;
    let mut acc = crate::qcore::CMatrix::zeros(dim, dim);
    for x in probes {
        acc += execute(t, theta, x)?.to_density().matrix();
    }
    let w = C64::new(1.0 / probes.len() as f64, 0.0);
    Ok(DensityMatrix::from_matrix_unchecked(t.n_qubits, acc * w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entangler {
    Linear,
    Ring,
}

/// Layered ansatz: `depth` blocks of [RY data encoding] → [RY, RZ trainable
/// per qubit] → [CNOT entangler]. Without re-uploading, only the first block
/// carries an encoding layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub n_qubits: usize,
    pub depth: usize,
    pub entangler: Entangler,
    pub reupload: bool,
    /// Features feeding the encoding layer; qubit `q` reads feature `q mod n_features`.
    /// Defaults to one feature per qubit.
    #[serde(default)]
    pub n_features: Option<usize>,
    #[serde(default = "default_scale")]
    pub encoding_scale: f64,
    #[serde(default)]
    pub noise: Option<f64>,
}

fn default_scale() -> f64 {
    1.0
}

impl AnsatzSpec {
    pub fn new(n_qubits: usize, depth: usize, entangler: Entangler, reupload: bool) -> Self {
        Self {
            n_qubits,
            depth,
            entangler,
            reupload,
            n_features: None,
            encoding_scale: 1.0,
            noise: None,
        }
    }

    pub fn build(&self) -> Result<CircuitTemplate> {
        let n = self.n_qubits;
        if n == 0 {
            return Err(Error::validation("n_qubits", "must be at least 1"));
        }
        if self.depth == 0 {
            return Err(Error::validation("depth", "must be at least 1"));
        }
        let n_features = self.n_features.unwrap_or(n);
        if n_features == 0 {
            return Err(Error::validation("n_features", "must be at least 1"));
        }
        let mut gates = Vec::new();
        let mut ends = Vec::new();
        for layer in 0..self.depth {
            if layer == 0 || self.reupload {
                for q in 0..n {
                    gates.push(GateSpec::rotation(
                        GateKind::Ry,
                        q,
                        Binding::Data {
                            feature: q % n_features,
                            scale: self.encoding_scale,
                        },
                    ));
                }
            }
            for q in 0..n {
                let base = 2 * (layer * n + q);
                gates.push(GateSpec::rotation(GateKind::Ry, q, Binding::Trainable { param: base }));
                gates.push(GateSpec::rotation(
                    GateKind::Rz,
                    q,
                    Binding::Trainable { param: base + 1 },
                ));
            }
            for q in 0..n.saturating_sub(1) {
                gates.push(GateSpec::cnot(q, q + 1));
            }
            if self.entangler == Entangler::Ring && n > 2 {
                gates.push(GateSpec::cnot(n - 1, 0));
            }
            ends.push(gates.len());
        }
        let t = CircuitTemplate::new(n, gates, 2 * n * self.depth, n_features, Observable::z(n, 0)?)?
            .with_layer_ends(ends)?;
        match self.noise {
            Some(p) => t.with_noise(p),
            None => Ok(t),
        }
    }
}

pub fn build_layered_ansatz(
    n_qubits: usize,
    depth: usize,
    entangler: Entangler,
    reupload: bool,
) -> Result<CircuitTemplate> {
    AnsatzSpec::new(n_qubits, depth, entangler, reupload).build()
}

/// Uniform draw on `[−π, π)` for each coordinate.
pub fn random_params(n: usize, rng: &mut crate::rng::Rng) -> ParamVector {
    use rand::Rng as _;
    ParamVector((0..n).map(|_| rng.random_range(-PI..PI)).collect())
}
