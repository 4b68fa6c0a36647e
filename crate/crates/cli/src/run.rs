//! Experiment drivers. Each writes its artifacts into the output directory
//! and returns the manifest describing them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qmu_core::audit::{
    audit_unlearning, canonical_json, default_probes, document_digest, emit_report, probe_digest, AuditContext,
    KernelMetrics, PrivacySummary, Reproducibility, UnlearnReport,
};
use qmu_core::data::{generate_dataset, Dataset, Generator, Subset};
use qmu_core::fed::{run_simulation, ClientUnlearnOutcome, FedConfig, FedEventRecord, RoundRecord};
use qmu_core::geo::{parameter_shift_gradient, qfim_batch, LossSpec, QfimMode};
use qmu_core::learn::{evaluate, evaluate_subset, retrain_counterfactual, train, Metrics, TrainedModel};
use qmu_core::pqc::{build_layered_ansatz, AnsatzSpec, CircuitTemplate, Entangler, ParamVector};
use qmu_core::qkernel::{alignment, certify_deletion, gram, krr_fit, mmd, FeatureMap, GramMatrix};
use qmu_core::rng::derived_rng;
use qmu_core::unlearn::{
    fisher_ranked_selection, fisher_step, influence_delta, qmu_i, reset_partial, Mechanism, UnlearnTrace,
};
use qmu_core::{Error, Result};

use crate::config::{Experiment, RunConfig, SeedBook};

pub const MANIFEST_SCHEMA: &str = "qmu.manifest/1";
pub const TRAIN_REPORT_SCHEMA: &str = "qmu.train_report/1";
pub const FED_REPORT_SCHEMA: &str = "qmu.fed_report/1";
pub const BENCH_REPORT_SCHEMA: &str = "qmu.bench_report/1";
pub const DATASET_REPORT_SCHEMA: &str = "qmu.dataset_report/1";
/// Slack allowed on the kernel deletion bound.
pub const BOUND_TOL: f64 = 1e-9;
/// Largest tolerated gap between SMW and direct kernel refits.
pub const SMW_TOL: f64 = 1e-8;
/// Largest tolerated secure-aggregation cancellation error.
pub const MASK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub experiment: String,
    pub master_seed: u64,
    /// Every derived seed, keyed by stream label.
    pub seeds: BTreeMap<String, u64>,
    pub config_digest: String,
    pub dataset_digest: Option<String>,
    /// Report file name to document digest (wall-clock fields excluded).
    pub reports: BTreeMap<String, String>,
    /// Artifact file name to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: Metrics,
    pub test: Option<Metrics>,
    pub retain: Option<Metrics>,
    pub forget: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema: String,
    pub experiment: String,
    pub metrics: SplitMetrics,
    pub loss_trace: Vec<f64>,
    pub theta: ParamVector,
    pub reproducibility: Reproducibility,
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedReport {
    pub schema: String,
    pub config: FedConfig,
    pub rounds: Vec<RoundRecord>,
    pub events: Vec<FedEventRecord>,
    pub privacy: PrivacySummary,
    pub initial_theta: ParamVector,
    pub final_theta: ParamVector,
    pub test_accuracy: Option<f64>,
    pub reproducibility: Reproducibility,
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub op: String,
    pub size: usize,
    pub repeats: usize,
    /// Sum of the op's output, for cross-run comparison.
    pub checksum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub op: String,
    pub size: usize,
    pub mean_us: f64,
    pub min_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub master_seed: u64,
    pub rows: Vec<BenchRow>,
    /// Wall-clock measurements; excluded from the digest.
    pub timings: Vec<Timing>,
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub schema: String,
    pub rows: usize,
    pub n_features: usize,
    pub train: usize,
    pub test: usize,
    pub forget: usize,
    pub positive: usize,
    pub digest: String,
    pub created_at: Option<String>,
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("unix:{secs}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Run {
    cfg: RunConfig,
    experiment: Experiment,
    seeds: SeedBook,
    out: PathBuf,
    reports: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
    dataset_digest: Option<String>,
}

impl Run {
    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.out.join(name), text)?;
        self.artifacts.insert(name.to_owned(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, doc: &T) -> Result<()> {
        let text = canonical_json(doc)?;
        self.write(name, &text)
    }

    fn write_report<T: Serialize>(&mut self, name: &str, doc: &T) -> Result<()> {
        self.write_json(name, doc)?;
        self.reports.insert(name.to_owned(), document_digest(doc)?);
        Ok(())
    }

    fn write_unlearn_report(&mut self, name: &str, report: &mut UnlearnReport) -> Result<()> {
        report.created_at = Some(timestamp());
        report.reproducibility.seeds = self.seeds.derived.clone();
        let digest = emit_report(report, &self.out.join(name))?;
        let bytes = std::fs::read(self.out.join(name))?;
        self.artifacts.insert(name.to_owned(), sha256_hex(&bytes));
        self.reports.insert(name.to_owned(), digest);
        Ok(())
    }

    fn dataset(&mut self) -> Result<Dataset> {
        let sec = &self.cfg.dataset;
        let data = match &sec.path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Dataset::from_csv(&text, self.seeds.take("split"))?
            }
            None => generate_dataset(sec.generator, sec.n, sec.noise, self.seeds.take("generate"))?,
        };
        let data = data.apply_forget_policy(&sec.forget.clone())?;
        self.dataset_digest = Some(data.digest());
        self.write("dataset.csv", &data.to_csv())?;
        Ok(data)
    }

    fn template(&self, data: &Dataset) -> Result<CircuitTemplate> {
        self.cfg.model.ansatz(data.n_features()).build()
    }

    fn reproducibility(&self, t: &CircuitTemplate, probes: &[Vec<f64>], data: &Dataset) -> Reproducibility {
        Reproducibility {
            noise: t.noise(),
            seeds: self.seeds.derived.clone(),
            ..Reproducibility::new(self.seeds.master, t, self.cfg.model.depth, probes, data)
        }
    }

    fn manifest(&self) -> Result<Manifest> {
        Ok(Manifest {
            schema: MANIFEST_SCHEMA.into(),
            experiment: self.experiment.name().into(),
            master_seed: self.seeds.master,
            seeds: self.seeds.derived.clone(),
            config_digest: sha256_hex(self.cfg.to_toml()?.as_bytes()),
            dataset_digest: self.dataset_digest.clone(),
            reports: self.reports.clone(),
            artifacts: self.artifacts.clone(),
            created_at: timestamp(),
        })
    }
}

/// Runs `experiment` with the fully resolved `cfg` (seed and output
/// directory already applied) and writes `manifest.json` last.
pub fn run(experiment: Experiment, cfg: RunConfig) -> Result<Manifest> {
    cfg.validate(experiment)?;
    let master = cfg.master_seed()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let mut run = Run {
        cfg,
        experiment,
        seeds: SeedBook::new(master),
        out,
        reports: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        dataset_digest: None,
    };
    let resolved = run.cfg.to_toml()?;
    run.write("config.resolved.toml", &resolved)?;
    match experiment {
        Experiment::GenData => gen_data(&mut run)?,
        Experiment::Train => train_experiment(&mut run, false)?,
        Experiment::Retrain => train_experiment(&mut run, true)?,
        Experiment::Unlearn => unlearn_experiment(&mut run)?,
        Experiment::Audit => audit_experiment(&mut run)?,
        Experiment::Fed => fed_experiment(&mut run)?,
        Experiment::Kernel => kernel_experiment(&mut run)?,
        Experiment::Bench => bench_experiment(&mut run)?,
    }
    let manifest = run.manifest()?;
    let text = canonical_json(&manifest)?;
    std::fs::write(run.out.join("manifest.json"), text)?;
    Ok(manifest)
}

fn gen_data(run: &mut Run) -> Result<()> {
    let data = run.dataset()?;
    let report = DatasetReport {
        schema: DATASET_REPORT_SCHEMA.into(),
        rows: data.len(),
        n_features: data.n_features(),
        train: data.indices(Subset::Train).len(),
        test: data.indices(Subset::Test).len(),
        forget: data.indices(Subset::Forget).len(),
        positive: data.labels().iter().filter(|&&y| y > 0.0).count(),
        digest: data.digest(),
        created_at: Some(timestamp()),
    };
    run.write_report("report.json", &report)
}

fn optional_metrics(model: &TrainedModel, data: &Dataset, subset: Subset) -> Result<Option<Metrics>> {
    if data.indices(subset).is_empty() {
        return Ok(None);
    }
    evaluate_subset(model, data, subset).map(Some)
}

fn split_metrics(model: &TrainedModel, data: &Dataset) -> Result<SplitMetrics> {
    Ok(SplitMetrics {
        train: evaluate_subset(model, data, Subset::Train)?,
        test: optional_metrics(model, data, Subset::Test)?,
        retain: optional_metrics(model, data, Subset::Retain)?,
        forget: optional_metrics(model, data, Subset::Forget)?,
    })
}

fn train_experiment(run: &mut Run, counterfactual: bool) -> Result<()> {
    let data = run.dataset()?;
    let t = run.template(&data)?;
    let cfg = run.cfg.train.with_seed(run.seeds.take("train"));
    let model = if counterfactual {
        retrain_counterfactual(&t, &data, &cfg)?
    } else {
        train(&t, &data, &cfg)?
    };
    let probes = default_probes(&data, run.cfg.audit.probes)?;
    let report = TrainReport {
        schema: TRAIN_REPORT_SCHEMA.into(),
        experiment: run.experiment.name().into(),
        metrics: split_metrics(&model, &data)?,
        loss_trace: model.loss_trace.clone(),
        theta: model.theta.clone(),
        reproducibility: run.reproducibility(&t, &probes, &data),
        created_at: Some(timestamp()),
    };
    run.write_json("model.json", &model)?;
    run.write_report("report.json", &report)
}

fn unlearn_with(run: &mut Run, model: &TrainedModel, data: &Dataset) -> Result<(TrainedModel, UnlearnTrace)> {
    let sec = run.cfg.unlearn.clone();
    let forget = data.samples(Subset::Forget);
    if forget.is_empty() {
        return Err(Error::Validation {
            field: "dataset.forget".into(),
            reason: "forget set is empty".into(),
        });
    }
    let one_step = |mechanism, theta: ParamVector| {
        let mut trace = UnlearnTrace::new(mechanism, model.theta.clone());
        trace.snapshots.push(theta.clone());
        (model.with_theta(theta), trace)
    };
    match sec.mechanism {
        Mechanism::QmuI => {
            let cfg = sec.qmu_i(run.seeds.take("unlearn"), run.seeds.take("fine_tune"));
            qmu_i(model, data, &cfg)
        }
        Mechanism::Influence => {
            let delta = influence_delta(model, &forget, sec.damping, sec.metric)?;
            let theta = ParamVector::new(model.theta.iter().zip(&delta).map(|(a, b)| a + b).collect())?;
            Ok(one_step(Mechanism::Influence, theta))
        }
        Mechanism::FisherStep => {
            let theta = fisher_step(model, &forget, sec.eta, sec.damping)?;
            Ok(one_step(Mechanism::FisherStep, theta))
        }
        Mechanism::ResetPartial => {
            let f = qfim_batch(&model.template, &model.theta, &forget, run.cfg.audit.qfim_mode)?;
            let selection = fisher_ranked_selection(&f, sec.reset_fraction)?;
            let ft = sec.fine_tune(run.seeds.take("fine_tune"));
            reset_partial(model, data, &selection, run.seeds.take("reset"), ft.as_ref())
        }
        Mechanism::Retrain => {
            let cfg = run.cfg.train.with_seed(model.seed);
            let theta = retrain_counterfactual(&model.template, data, &cfg)?.theta;
            Ok(one_step(Mechanism::Retrain, theta))
        }
        Mechanism::ClientChannel | Mechanism::GradientSubtract => Err(Error::Validation {
            field: "unlearn.mechanism".into(),
            reason: "client-level mechanisms run in the fed experiment".into(),
        }),
    }
}

fn audited_report(
    run: &mut Run,
    data: &Dataset,
    before: &TrainedModel,
    after: &TrainedModel,
    trace: &mut UnlearnTrace,
) -> Result<UnlearnReport> {
    let cfg = run.cfg.train.with_seed(before.seed);
    let reference = retrain_counterfactual(&before.template, data, &cfg)?;
    let probes = default_probes(data, run.cfg.audit.probes)?;
    let ctx = AuditContext {
        data,
        probes: &probes,
        eps_cert: run.cfg.audit.eps_cert,
        damping: run.cfg.audit.damping,
        qfim_mode: run.cfg.audit.qfim_mode,
    };
    let repro = run.reproducibility(&before.template, &probes, data);
    let report = audit_unlearning(&ctx, before, after, &reference.theta, trace, repro)?;
    run.write_json("counterfactual.json", &reference)?;
    Ok(report)
}

fn curve_csv(report: &UnlearnReport) -> String {
    qmu_core::audit::ForgettingCurve {
        points: report.forgetting_curve.clone(),
    }
    .to_csv()
}

fn unlearn_experiment(run: &mut Run) -> Result<()> {
    let data = run.dataset()?;
    let t = run.template(&data)?;
    let cfg = run.cfg.train.with_seed(run.seeds.take("train"));
    let before = train(&t, &data, &cfg)?;
    let (after, mut trace) = unlearn_with(run, &before, &data)?;
    let mut report = audited_report(run, &data, &before, &after, &mut trace)?;
    run.write_json("model_before.json", &before)?;
    run.write_json("model.json", &after)?;
    run.write_json("trace.json", &trace)?;
    run.write("forgetting_curve.csv", &curve_csv(&report))?;
    run.write_unlearn_report("report.json", &mut report)
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path)?;
    qmu_core::audit::parse_document(&text)
}

fn audit_experiment(run: &mut Run) -> Result<()> {
    let data = run.dataset()?;
    let before = load_model(run.cfg.audit.before.as_deref().unwrap_or(Path::new("")))?;
    let after = load_model(run.cfg.audit.after.as_deref().unwrap_or(Path::new("")))?;
    if before.template != after.template {
        return Err(Error::Validation {
            field: "audit.after".into(),
            reason: "template differs from audit.before".into(),
        });
    }
    if before.template.n_features() != data.n_features() {
        return Err(Error::Validation {
            field: "dataset".into(),
            reason: "feature count differs from the audited models".into(),
        });
    }
    let mut trace = UnlearnTrace::new(Mechanism::Retrain, before.theta.clone());
    trace.snapshots.push(after.theta.clone());
    let mut report = audited_report(run, &data, &before, &after, &mut trace)?;
    report.mechanism = "audit".into();
    run.write("forgetting_curve.csv", &curve_csv(&report))?;
    run.write_unlearn_report("report.json", &mut report)
}

fn ledger_csv(rounds: &[RoundRecord]) -> String {
    let mut out = String::from("round,participants,sigma,epsilon,mask_cancellation_error,masked_digest\n");
    for r in rounds {
        let ids: Vec<String> = r.participants.iter().map(usize::to_string).collect();
        let eps = r.epsilon.map_or_else(|| "inf".to_owned(), |e| e.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round,
            ids.join(";"),
            r.sigma,
            eps,
            r.mask_cancellation_error,
            r.masked_digest
        ));
    }
    out
}

fn fed_experiment(run: &mut Run) -> Result<()> {
    let data = run.dataset()?;
    let t = run.template(&data)?;
    let cfg = run.cfg.fed.config(run.cfg.dp.clone(), run.seeds.take("fed"));
    let (result, _) = run_simulation(&t, &data, &cfg)?;
    if let Some(r) = result.history.iter().find(|r| r.mask_cancellation_error > MASK_TOL) {
        return Err(Error::Invariant(format!(
            "round {} mask cancellation error {:.3e}",
            r.round, r.mask_cancellation_error
        )));
    }
    if let Some(ClientUnlearnOutcome { client, .. }) = result
        .events
        .iter()
        .map(|e| &e.outcome)
        .find(|o| o.channel.is_some_and(|c| c.trace_after > c.trace_before + 1e-9))
    {
        return Err(Error::Invariant(format!("client {client} channel did not contract")));
    }
    let test = data.samples(Subset::Test);
    let final_model = TrainedModel {
        template: t.clone(),
        theta: result.final_theta.clone(),
        loss_trace: Vec::new(),
        loss: cfg.loss,
        seed: cfg.seed,
    };
    let test_accuracy = if test.is_empty() {
        None
    } else {
        Some(evaluate(&final_model, &test)?.accuracy)
    };
    let probes = default_probes(&data, run.cfg.audit.probes)?;
    let delta = cfg.dp.as_ref().map_or(1e-5, |d| d.delta);
    let report = FedReport {
        schema: FED_REPORT_SCHEMA.into(),
        privacy: PrivacySummary::from_ledger(&result.ledger, delta)?,
        config: cfg,
        rounds: result.history.clone(),
        events: result.events.clone(),
        initial_theta: result.initial_theta.clone(),
        final_theta: result.final_theta.clone(),
        test_accuracy,
        reproducibility: run.reproducibility(&t, &probes, &data),
        created_at: Some(timestamp()),
    };
    run.write("fed_ledger.csv", &ledger_csv(&result.history))?;
    run.write_json("model.json", &final_model)?;
    run.write_report("report.json", &report)
}

fn kernel_experiment(run: &mut Run) -> Result<()> {
    let data = run.dataset()?;
    let t = run.template(&data)?;
    let fm = FeatureMap::from_seed(t.clone(), run.seeds.take("feature_map"))?;
    let train_rows = data.indices(Subset::Train);
    let xs: Vec<Vec<f64>> = train_rows.iter().map(|&i| data.features()[i].clone()).collect();
    let ys: Vec<f64> = train_rows.iter().map(|&i| data.labels()[i]).collect();
    let k = gram(&fm, &xs)?;
    k.validate()?;
    let model = krr_fit(&k, &ys, run.cfg.kernel.lambda)?;

    let forget_mask = data.forget_mask();
    let mut deleted: Vec<usize> = (0..train_rows.len()).filter(|&p| forget_mask[train_rows[p]]).collect();
    if deleted.is_empty() {
        let mut rng = derived_rng(run.seeds.take("kernel_delete"), "kernel_delete", 0);
        let count = run.cfg.kernel.delete.min(train_rows.len().saturating_sub(1));
        while deleted.len() < count {
            let p = rng.random_range(0..train_rows.len());
            if !deleted.contains(&p) {
                deleted.push(p);
            }
        }
        deleted.sort_unstable();
    }
    let cert = certify_deletion(&model, &deleted)?;

    let kept: Vec<usize> = (0..xs.len()).filter(|p| !deleted.contains(p)).collect();
    let kept_x: Vec<Vec<f64>> = kept.iter().map(|&p| xs[p].clone()).collect();
    let kept_y: Vec<f64> = kept.iter().map(|&p| ys[p]).collect();
    let direct = krr_fit(&gram(&fm, &kept_x)?, &kept_y, run.cfg.kernel.lambda)?;
    let smw_error = (&cert.updated.alpha - &direct.alpha).amax();
    if smw_error > SMW_TOL {
        return Err(Error::Invariant(format!(
            "SMW deletion differs from direct refit by {smw_error:.3e}"
        )));
    }

    let mut queries: Vec<Vec<f64>> = data.samples(Subset::Test).into_iter().map(|s| s.x).collect();
    let mut qrng = derived_rng(run.seeds.take("kernel_queries"), "kernel_queries", 0);
    let pi = std::f64::consts::PI;
    for _ in 0..run.cfg.kernel.queries {
        queries.push((0..data.n_features()).map(|_| qrng.random_range(-pi..pi)).collect());
    }
    let mut max_dev: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    for q in &queries {
        let (updated, restricted) = cert.predictions(&fm, q)?;
        let dev = (updated - restricted).abs();
        let slack = cert.bound(&fm, q)? - dev;
        if slack < -BOUND_TOL {
            return Err(Error::Invariant(format!("deletion bound violated by {:.3e}", -slack)));
        }
        max_dev = max_dev.max(dev);
        min_slack = min_slack.min(slack);
    }

    let ideal = nalgebra::DMatrix::from_fn(ys.len(), ys.len(), |i, j| ys[i] * ys[j]);
    let pos: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] > 0.0).collect();
    let neg: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] < 0.0).collect();
    let class_mmd = if pos.is_empty() || neg.is_empty() {
        None
    } else {
        Some(mmd(&k.matrix, &pos, &neg)?)
    };

    let mut report = UnlearnReport::new("kernel_smw", run.reproducibility(&t, &queries, &data));
    report.kernel = Some(KernelMetrics {
        alignment: Some(alignment(&k.matrix, &ideal)?),
        mmd: class_mmd,
        max_deviation: (!queries.is_empty()).then_some(max_dev),
        min_bound_slack: (!queries.is_empty()).then_some(min_slack),
        smw_alpha_error: Some(smw_error),
        bound_label: "implemented bound".into(),
    });
    report.reproducibility.probe_digest = probe_digest(&queries);
    run.write("gram.csv", &GramMatrix::to_csv(&k))?;
    run.write_unlearn_report("report.json", &mut report)
}

fn time_op<F: FnMut() -> Result<f64>>(repeats: usize, mut f: F) -> Result<(f64, f64, f64)> {
    let mut total = 0.0;
    let mut min = f64::INFINITY;
    let mut checksum = 0.0;
    for _ in 0..repeats {
        let start = Instant::now();
        checksum = f()?;
        let us = start.elapsed().as_secs_f64() * 1e6;
        total += us;
        min = min.min(us);
    }
    Ok((checksum, total / repeats as f64, min))
}

fn bench_csv(timings: &[Timing], repeats: usize) -> String {
    let mut out = String::from("op,size,repeats,mean_us,min_us\n");
    for t in timings {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.3}\n",
            t.op, t.size, repeats, t.mean_us, t.min_us
        ));
    }
    out
}

fn bench_experiment(run: &mut Run) -> Result<()> {
    let sec = run.cfg.bench.clone();
    let data = generate_dataset(Generator::TwoMoons, 40, 0.1, run.seeds.take("bench_data"))?;
    let batch: Vec<_> = data.samples(Subset::Train).into_iter().take(8).collect();
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut record = |op: &str, size: usize, (checksum, mean_us, min_us): (f64, f64, f64)| {
        rows.push(BenchRow {
            op: op.into(),
            size,
            repeats: sec.repeats,
            checksum,
        });
        timings.push(Timing {
            op: op.into(),
            size,
            mean_us,
            min_us,
        });
    };
    for &q in &sec.qubits {
        let t = AnsatzSpec {
            n_features: Some(data.n_features()),
            ..AnsatzSpec::new(q, 2, Entangler::Linear, true)
        }
        .build()?;
        let theta = qmu_core::learn::init_params(&t, run.seeds.take(&format!("bench_theta_{q}")));
        let g = time_op(sec.repeats, || {
            Ok(parameter_shift_gradient(&t, &theta, &batch, LossSpec::Mse)?
                .0
                .iter()
                .sum())
        })?;
        record("parameter_shift_gradient", q, g);
        let f = time_op(sec.repeats, || {
            Ok(qfim_batch(&t, &theta, &batch, QfimMode::Full)?.matrix.sum())
        })?;
        record("qfim_full", q, f);
    }
    let fm_t = build_layered_ansatz(2, 2, Entangler::Linear, true)?;
    let fm = FeatureMap::from_seed(fm_t, run.seeds.take("bench_feature_map"))?;
    for &n in &sec.kernel_sizes {
        let kdata = generate_dataset(
            Generator::TwoMoons,
            n.max(4),
            0.1,
            run.seeds.take(&format!("bench_kernel_{n}")),
        )?;
        let xs: Vec<Vec<f64>> = kdata.features().to_vec();
        let k = gram(&fm, &xs)?;
        let model = krr_fit(&k, kdata.labels(), run.cfg.kernel.lambda)?;
        let deleted: Vec<usize> = (0..3.min(xs.len() - 1)).collect();
        let s = time_op(sec.repeats, || {
            Ok(qmu_core::qkernel::delete_samples_smw(&model, &deleted)?.alpha.sum())
        })?;
        record("smw_delete", xs.len(), s);
    }
    let report = BenchReport {
        schema: BENCH_REPORT_SCHEMA.into(),
        master_seed: run.seeds.master,
        rows,
        timings,
        created_at: Some(timestamp()),
    };
    run.write("bench.csv", &bench_csv(&report.timings, sec.repeats))?;
    run.write_report("report.json", &report)
}
