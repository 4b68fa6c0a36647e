//! TOML run configuration. Every section has defaults except the master
//! seed, which must come from the file or `--seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qmu_core::audit::{DEFAULT_EPS_CERT, DEFAULT_PROBES};
use qmu_core::data::{ForgetPolicy, Generator};
use qmu_core::fed::{FedConfig, Topology, UnlearnEvent};
use qmu_core::geo::{LossSpec, QfimMode};
use qmu_core::learn::{Optimizer, TrainConfig};
use qmu_core::pqc::{AnsatzSpec, Entangler};
use qmu_core::privacy::DpConfig;
use qmu_core::rng::derive_seed;
use qmu_core::unlearn::{Mechanism, Metric, QmuIConfig};
use qmu_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GenData,
    Train,
    Unlearn,
    Retrain,
    Audit,
    Fed,
    Kernel,
    Bench,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::GenData => "gen-data",
            Experiment::Train => "train",
            Experiment::Unlearn => "unlearn",
            Experiment::Retrain => "retrain",
            Experiment::Audit => "audit",
            Experiment::Fed => "fed",
            Experiment::Kernel => "kernel",
            Experiment::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub unlearn: UnlearnSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub dp: Option<DpConfig>,
    #[serde(default)]
    pub fed: FedSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Used when `path` is absent.
    pub generator: Generator,
    /// CSV file, relative to the config file.
    pub path: Option<PathBuf>,
    pub n: usize,
    pub noise: f64,
    pub forget: ForgetPolicy,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            generator: Generator::TwoMoons,
            path: None,
            n: 100,
            noise: 0.1,
            forget: ForgetPolicy::Cluster { label: 1, count: 15 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_qubits: usize,
    pub depth: usize,
    pub entangler: Entangler,
    pub reupload: bool,
    pub encoding_scale: f64,
    /// Depolarizing probability after every layer; absent means noiseless.
    pub noise: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_qubits: 2,
            depth: 2,
            entangler: Entangler::Linear,
            reupload: true,
            encoding_scale: 1.0,
            noise: None,
        }
    }
}

impl ModelSection {
    pub fn ansatz(&self, n_features: usize) -> AnsatzSpec {
        AnsatzSpec {
            n_features: Some(n_features),
            encoding_scale: self.encoding_scale,
            noise: self.noise,
            ..AnsatzSpec::new(self.n_qubits, self.depth, self.entangler, self.reupload)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub damping: f64,
    pub patience: usize,
    pub loss: LossSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 0.3,
            epochs: 150,
            batch_size: 128,
            optimizer: Optimizer::Gd,
            damping: 1e-3,
            patience: 0,
            loss: LossSpec::Mse,
        }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            damping: self.damping,
            patience: self.patience,
            loss: self.loss,
            seed,
        }
    }

    fn from_config(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            epochs: c.epochs,
            batch_size: c.batch_size,
            optimizer: c.optimizer,
            damping: c.damping,
            patience: c.patience,
            loss: c.loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnSection {
    pub mechanism: Mechanism,
    pub eta: f64,
    pub clip: f64,
    pub trust_radius: f64,
    pub damping: f64,
    pub metric: Metric,
    pub batch_size: Option<usize>,
    pub iterations: usize,
    /// Fine-tuning on `D_s`; `epochs = 0` disables it.
    pub fine_tune: TrainSection,
    /// Fraction of coordinates redrawn by `reset_partial`.
    pub reset_fraction: f64,
}

impl Default for UnlearnSection {
    fn default() -> Self {
        let q = QmuIConfig::default();
        Self {
            mechanism: Mechanism::QmuI,
            eta: q.eta,
            clip: q.clip,
            trust_radius: q.trust_radius,
            damping: q.damping,
            metric: q.metric,
            batch_size: q.batch_size,
            iterations: q.iterations,
            fine_tune: q.fine_tune.as_ref().map(TrainSection::from_config).unwrap_or_default(),
            reset_fraction: 0.5,
        }
    }
}

impl UnlearnSection {
    pub fn fine_tune(&self, seed: u64) -> Option<TrainConfig> {
        (self.fine_tune.epochs > 0).then(|| self.fine_tune.with_seed(seed))
    }

    pub fn qmu_i(&self, seed: u64, fine_tune_seed: u64) -> QmuIConfig {
        QmuIConfig {
            eta: self.eta,
            clip: self.clip,
            trust_radius: self.trust_radius,
            damping: self.damping,
            metric: self.metric,
            batch_size: self.batch_size,
            iterations: self.iterations,
            fine_tune: self.fine_tune(fine_tune_seed),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub eps_cert: f64,
    pub probes: usize,
    pub damping: f64,
    pub qfim_mode: QfimMode,
    /// Model files audited by the `audit` experiment, relative to the config.
    pub before: Option<PathBuf>,
    pub after: Option<PathBuf>,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            eps_cert: DEFAULT_EPS_CERT,
            probes: DEFAULT_PROBES,
            damping: 1e-3,
            qfim_mode: QfimMode::Diagonal,
            before: None,
            after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedSection {
    pub clients: usize,
    pub rounds: usize,
    pub lr: f64,
    pub clip: f64,
    pub topology: Topology,
    pub loss: LossSpec,
    pub alpha: Option<f64>,
    pub retrain_rounds: usize,
    pub unlearn: Vec<UnlearnEvent>,
}

impl Default for FedSection {
    fn default() -> Self {
        Self {
            clients: 3,
            rounds: 10,
            lr: 0.3,
            clip: 1.0,
            topology: Topology::Star,
            loss: LossSpec::Mse,
            alpha: None,
            retrain_rounds: 0,
            unlearn: Vec::new(),
        }
    }
}

impl FedSection {
    pub fn config(&self, dp: Option<DpConfig>, seed: u64) -> FedConfig {
        FedConfig {
            n_clients: self.clients,
            rounds: self.rounds,
            lr: self.lr,
            clip: self.clip,
            topology: self.topology,
            dp,
            loss: self.loss,
            alpha: self.alpha,
            retrain_rounds: self.retrain_rounds,
            unlearn: self.unlearn.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub lambda: f64,
    /// Train rows deleted when the dataset has no forget set.
    pub delete: usize,
    /// Random query points checked against the deletion bound, on top of
    /// the test split.
    pub queries: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            delete: 3,
            queries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub repeats: usize,
    /// Qubit counts of the benchmarked templates.
    pub qubits: Vec<usize>,
    /// Training-set sizes of the benchmarked kernel deletions.
    pub kernel_sizes: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            repeats: 3,
            qubits: vec![2, 4],
            kernel_sizes: vec![20, 40],
        }
    }
}

/// Parses a TOML document; unknown keys and type errors name the field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_owned();
        match e.span() {
            Some(span) => Error::Parse(format!("{msg} (bytes {}..{})", span.start, span.end)),
            None => Error::Parse(msg),
        }
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = parse_config(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset.path, &mut cfg.audit.before, &mut cfg.audit.after]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invariant(format!("config serialization failed: {e}")))
    }

    /// Master seed; there is no implicit fallback.
    pub fn master_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Validation {
            field: "seed".into(),
            reason: "no master seed in config or --seed".into(),
        })
    }

    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let invalid = |field: &str, reason: &str| Error::Validation {
            field: field.into(),
            reason: reason.into(),
        };
        if let Some(e) = self.experiment {
            if e != experiment {
                return Err(invalid(
                    "experiment",
                    &format!("config says {}, command is {}", e.name(), experiment.name()),
                ));
            }
        }
        let seed = self.master_seed()?;
        if let Some(p) = &self.dataset.path {
            if !p.is_file() {
                return Err(invalid("dataset.path", &format!("{} does not exist", p.display())));
            }
        }
        if experiment == Experiment::Audit {
            for (field, p) in [("audit.before", &self.audit.before), ("audit.after", &self.audit.after)] {
                match p {
                    None => return Err(invalid(field, "required by the audit experiment")),
                    Some(p) if !p.is_file() => return Err(invalid(field, &format!("{} does not exist", p.display()))),
                    Some(_) => {}
                }
            }
        }
        if !(self.audit.eps_cert >= 0.0 && self.audit.eps_cert.is_finite()) {
            return Err(invalid("audit.eps_cert", "must be finite and non-negative"));
        }
        if self.audit.probes == 0 {
            return Err(invalid("audit.probes", "must be at least 1"));
        }
        if !(self.unlearn.reset_fraction > 0.0 && self.unlearn.reset_fraction <= 1.0) {
            return Err(invalid("unlearn.reset_fraction", "must lie in (0, 1]"));
        }
        self.train.with_seed(seed).validate()?;
        if let Some(ft) = self.unlearn.fine_tune(seed) {
            ft.validate()?;
        }
        self.unlearn.qmu_i(seed, seed).validate()?;
        if let Some(dp) = &self.dp {
            dp.calibrate()?;
        }
        if experiment == Experiment::Fed {
            self.fed.config(self.dp.clone(), seed).validate()?;
        }
        if !(self.kernel.lambda > 0.0 && self.kernel.lambda.is_finite()) {
            return Err(invalid("kernel.lambda", "must be positive"));
        }
        if self.bench.repeats == 0 {
            return Err(invalid("bench.repeats", "must be at least 1"));
        }
        Ok(())
    }
}

/// Derived seeds consumed by a run, recorded in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedBook {
    pub master: u64,
    pub derived: std::collections::BTreeMap<String, u64>,
}

impl SeedBook {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            derived: Default::default(),
        }
    }

    pub fn take(&mut self, label: &str) -> u64 {
        let s = derive_seed(self.master, label, 0);
        self.derived.insert(label.to_owned(), s);
        s
    }
}
