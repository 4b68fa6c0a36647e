//! Certification and evaluation: distances to the retrained counterfactual,
//! parameter-gap bounds, loss-threshold membership inference, forgetting
//! curves and retention metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Sample, Subset};
use crate::geo::{qfim_batch, QfimMode};
use crate::learn::{evaluate, TrainedModel};
use crate::pqc::{model_state, CircuitTemplate, ParamVector};
use crate::privacy::PrivacyLedger;
use crate::qcore::{infidelity, trace_distance, DensityMatrix};
use crate::unlearn::{forget_gradient, UnlearnTrace};
use crate::{Error, Result};

/// Default certificate threshold on the trace distance.
pub const DEFAULT_EPS_CERT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceAudit {
    pub trace_before: f64,
    pub trace_after: f64,
    pub infidelity_before: f64,
    pub infidelity_after: f64,
    pub contracted: bool,
    pub eps_cert: f64,
    pub certified: bool,
}

/// Probe-averaged model states of several parameter vectors.
pub struct StateCache<'a> {
    t: &'a CircuitTemplate,
    probes: &'a [Vec<f64>],
}

impl<'a> StateCache<'a> {
    pub fn new(t: &'a CircuitTemplate, probes: &'a [Vec<f64>]) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::Empty("probe set"));
        }
        if let Some(p) = probes.iter().find(|p| p.len() != t.n_features()) {
            return Err(Error::DimensionMismatch {
                expected: t.n_features(),
                actual: p.len(),
            });
        }
        Ok(Self { t, probes })
    }

    pub fn state(&self, theta: &ParamVector) -> Result<DensityMatrix> {
        model_state(self.t, theta, self.probes)
    }
}

/// Trace distance and infidelity of the before/after models to the
/// counterfactual on a shared probe set.
pub fn distance_audit(
    t: &CircuitTemplate,
    before: &ParamVector,
    after: &ParamVector,
    reference: &ParamVector,
    probes: &[Vec<f64>],
    eps_cert: f64,
) -> Result<DistanceAudit> {
    if !(eps_cert >= 0.0 && eps_cert.is_finite()) {
        return Err(Error::param("eps_cert", "must be finite and non-negative"));
    }
    let cache = StateCache::new(t, probes)?;
    let target = cache.state(reference)?;
    let rho_before = cache.state(before)?;
    let rho_after = cache.state(after)?;
    let trace_before = trace_distance(&rho_before, &target)?;
    let trace_after = trace_distance(&rho_after, &target)?;
    Ok(DistanceAudit {
        trace_before,
        trace_after,
        infidelity_before: infidelity(&rho_before, &target)?,
        infidelity_after: infidelity(&rho_after, &target)?,
        contracted: trace_after < trace_before,
        eps_cert,
        certified: trace_after <= eps_cert,
    })
}

/// Heuristic `‖(F + λI)^{-1}‖₂ · ‖∇𝓛_S(θ)‖₂ = ‖∇𝓛_S‖₂ / (λ_min(F) + λ)`
/// with the QFIM standing in for the Hessian.
pub fn param_gap_bound(model: &TrainedModel, s: &[Sample], lambda: f64, mode: QfimMode) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Empty("bound set"));
    }
    let g = forget_gradient(&model.template, &model.theta, s, model.loss)?;
    let f = qfim_batch(&model.template, &model.theta, s, mode)?;
    gap_bound_from(&f.matrix, g.norm(), lambda)
}

/// `‖g‖ / (λ_min(F) + λ)`, rejecting a singular damped metric.
pub fn gap_bound_from(f: &nalgebra::DMatrix<f64>, grad_norm: f64, lambda: f64) -> Result<f64> {
    if grad_norm == 0.0 {
        return Ok(0.0);
    }
    let min = f.clone().symmetric_eigen().eigenvalues.min() + lambda;
    if min <= crate::geo::SINGULAR_TOL {
        return Err(Error::Singular(min));
    }
    Ok(grad_norm / min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipResult {
    /// `TPR − FPR` on the forget set (members) vs holdout (non-members).
    pub advantage: f64,
    pub auc: f64,
    /// Loss at or below which a sample is declared a member.
    pub threshold: f64,
}

fn losses(model: &TrainedModel, s: &[Sample]) -> Result<Vec<f64>> {
    s.iter()
        .map(|x| Ok(model.loss.value(model.predict(&x.x)?, x.y)))
        .collect()
}

fn rate_at_or_below(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s <= threshold).count() as f64 / scores.len() as f64
}

/// Threshold maximizing `TPR − FPR` between `members` and `non_members`;
/// the smallest such threshold wins ties.
pub fn calibrate_threshold(members: &[f64], non_members: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = members.iter().chain(non_members).copied().collect();
    candidates.push(f64::MIN);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in candidates {
        let adv = rate_at_or_below(members, c) - rate_at_or_below(non_members, c);
        if adv > best.0 {
            best = (adv, c);
        }
    }
    best.1
}

/// `P(member loss < non-member loss)` with ties counted as ½.
pub fn auc(members: &[f64], non_members: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &m in members {
        for &n in non_members {
            acc += match m.total_cmp(&n) {
                std::cmp::Ordering::Less => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Greater => 0.0,
            };
        }
    }
    acc / (members.len() * non_members.len()) as f64
}

/// Loss-threshold attack calibrated on the retained set vs holdout, then
/// scored on the forget set vs holdout.
pub fn membership_inference(
    model: &TrainedModel,
    forget: &[Sample],
    retain: &[Sample],
    holdout: &[Sample],
) -> Result<MembershipResult> {
    if forget.is_empty() || retain.is_empty() || holdout.is_empty() {
        return Err(Error::Empty("membership split"));
    }
    let l_forget = losses(model, forget)?;
    let l_retain = losses(model, retain)?;
    let l_holdout = losses(model, holdout)?;
    Ok(score_attack(&l_forget, &l_retain, &l_holdout))
}

/// Attack on precomputed loss scores.
pub fn score_attack(forget: &[f64], retain: &[f64], holdout: &[f64]) -> MembershipResult {
    let threshold = calibrate_threshold(retain, holdout);
    MembershipResult {
        advantage: rate_at_or_below(forget, threshold) - rate_at_or_below(holdout, threshold),
        auc: auc(forget, holdout),
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingCurve {
    /// `(iteration, trace distance to the counterfactual)`.
    pub points: Vec<(usize, f64)>,
}

impl ForgettingCurve {
    /// `max − min` over the final `k` points.
    pub fn flatness(&self, k: usize) -> f64 {
        let tail = &self.points[self.points.len().saturating_sub(k)..];
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
        if tail.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,trace_distance\n");
        for (t, d) in &self.points {
            out.push_str(&format!("{t},{d}\n"));
        }
        out
    }
}

/// Distance to the counterfactual at every trace snapshot; also fills the
/// trace's distance column.
pub fn forgetting_curve(
    trace: &mut UnlearnTrace,
    reference: &ParamVector,
    t: &CircuitTemplate,
    probes: &[Vec<f64>],
) -> Result<ForgettingCurve> {
    if trace.snapshots.is_empty() {
        return Err(Error::Empty("unlearn trace"));
    }
    let cache = StateCache::new(t, probes)?;
    let target = cache.state(reference)?;
    let distances = trace
        .snapshots
        .iter()
        .map(|th| trace_distance(&cache.state(th)?, &target))
        .collect::<Result<Vec<_>>>()?;
    trace.distances = distances.clone();
    Ok(ForgettingCurve {
        points: distances.into_iter().enumerate().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub acc_retain: f64,
    pub acc_forget: f64,
    pub delta_retain: f64,
    pub delta_forget: f64,
}

/// Accuracy on `D_s` and `D_r` and the change relative to `before`.
pub fn retention_metrics(before: &TrainedModel, after: &TrainedModel, data: &Dataset) -> Result<Retention> {
    let retain = data.samples(Subset::Retain);
    let forget = data.samples(Subset::Forget);
    let r_after = evaluate(after, &retain)?.accuracy;
    let f_after = evaluate(after, &forget)?.accuracy;
    let r_before = evaluate(before, &retain)?.accuracy;
    let f_before = evaluate(before, &forget)?.accuracy;
    Ok(Retention {
        acc_retain: r_after,
        acc_forget: f_after,
        delta_retain: r_after - r_before,
        delta_forget: f_after - f_before,
    })
}

/// Schema tag written into every report.
pub const REPORT_SCHEMA: &str = "qmu.unlearn_report/1";
/// Top-level wall-clock keys excluded from document digests.
pub const TIMESTAMP_KEYS: &[&str] = &["created_at", "timings"];
/// Number of test rows used as the default probe set.
pub const DEFAULT_PROBES: usize = 32;
/// Slack allowed on the Fuchs–van de Graaf inequalities.
pub const SANDWICH_TOL: f64 = 1e-7;

/// First `count` test rows, or train rows when the test split is empty.
pub fn default_probes(data: &Dataset, count: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = data.indices(Subset::Test);
    if rows.is_empty() {
        rows = data.indices(Subset::Train);
    }
    rows.truncate(count);
    if rows.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    Ok(rows.into_iter().map(|i| data.features()[i].clone()).collect())
}

/// SHA-256 over the little-endian bytes of every probe coordinate.
pub fn probe_digest(probes: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    for p in probes {
        h.update((p.len() as u64).to_le_bytes());
        for x in p {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertGap {
    /// Trace distance of the unlearned model to the counterfactual.
    pub value: f64,
    pub eps_cert: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapBound {
    pub value: f64,
    pub damping: f64,
    /// Always `"heuristic"`: the QFIM stands in for the Hessian.
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipPair {
    pub before: MembershipResult,
    pub after: MembershipResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelMetrics {
    pub alignment: Option<f64>,
    pub mmd: Option<f64>,
    /// Largest observed prediction deviation after deletion.
    pub max_deviation: Option<f64>,
    /// Smallest slack `bound − deviation` over the query points.
    pub min_bound_slack: Option<f64>,
    /// `‖α_SMW − α_direct‖_∞` against a direct refit on the kept samples.
    pub smw_alpha_error: Option<f64>,
    /// Always `"implemented bound"` (Cauchy–Schwarz on the coefficient gap).
    pub bound_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySummary {
    pub ledger: PrivacyLedger,
    pub delta: f64,
    /// `None` when unbounded.
    pub epsilon: Option<f64>,
    pub naive_epsilon: Option<f64>,
}

impl PrivacySummary {
    pub fn from_ledger(ledger: &PrivacyLedger, delta: f64) -> Result<Self> {
        let c = ledger.compose(delta)?;
        let finite = |v: f64| v.is_finite().then_some(v);
        Ok(Self {
            ledger: ledger.clone(),
            delta,
            epsilon: finite(c.epsilon),
            naive_epsilon: finite(c.naive_epsilon),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reproducibility {
    pub master_seed: u64,
    /// Every derived seed consumed, keyed by purpose.
    pub seeds: BTreeMap<String, u64>,
    pub n_qubits: usize,
    pub depth: usize,
    pub n_params: usize,
    pub noise: Option<f64>,
    pub probe_count: usize,
    pub probe_digest: String,
    pub dataset_digest: String,
    pub backend: String,
    /// How a parameter vector is mapped to the audited state.
    pub model_state: String,
}

impl Reproducibility {
    pub fn new(master_seed: u64, t: &CircuitTemplate, depth: usize, probes: &[Vec<f64>], data: &Dataset) -> Self {
        Self {
            master_seed,
            seeds: BTreeMap::new(),
            n_qubits: t.n_qubits(),
            depth,
            n_params: t.n_params(),
            noise: None,
            probe_count: probes.len(),
            probe_digest: probe_digest(probes),
            dataset_digest: data.digest(),
            backend: "dense density-matrix simulator".into(),
            model_state: "probe-averaged output state".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearnReport {
    pub schema: String,
    pub mechanism: String,
    #[serde(deserialize_with = "Option::deserialize")]
    pub distances: Option<DistanceAudit>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub cert_gap: Option<CertGap>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub param_gap_bound: Option<GapBound>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub membership: Option<MembershipPair>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub retention: Option<Retention>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub kernel: Option<KernelMetrics>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub privacy: Option<PrivacySummary>,
    pub forgetting_curve: Vec<(usize, f64)>,
    pub reproducibility: Reproducibility,
    /// Wall-clock creation time; excluded from the digest.
    #[serde(default)]
    pub created_at: Option<String>,
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(field, format!("{v} outside [0, 1]")))
    }
}

impl UnlearnReport {
    pub fn new(mechanism: impl Into<String>, reproducibility: Reproducibility) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            mechanism: mechanism.into(),
            distances: None,
            cert_gap: None,
            param_gap_bound: None,
            membership: None,
            retention: None,
            kernel: None,
            privacy: None,
            forgetting_curve: Vec::new(),
            reproducibility,
            created_at: None,
        }
    }

    /// Range, ordering and Fuchs–van de Graaf checks.
    pub fn validate(&self) -> Result<()> {
        if self.schema != REPORT_SCHEMA {
            return Err(Error::validation(
                "schema",
                format!("expected {REPORT_SCHEMA}, got {}", self.schema),
            ));
        }
        if let Some(d) = &self.distances {
            for (name, td, inf) in [
                ("distances.before", d.trace_before, d.infidelity_before),
                ("distances.after", d.trace_after, d.infidelity_after),
            ] {
                check_unit(name, td)?;
                check_unit(name, inf)?;
                let fid = 1.0 - inf;
                if td + SANDWICH_TOL < 1.0 - fid.sqrt() || td > inf.sqrt() + SANDWICH_TOL {
                    return Err(Error::validation(name, "violates the Fuchs–van de Graaf inequalities"));
                }
            }
        }
        if let Some(c) = &self.cert_gap {
            check_unit("cert_gap.value", c.value)?;
        }
        if let Some(m) = &self.membership {
            for r in [&m.before, &m.after] {
                if !(-1.0..=1.0).contains(&r.advantage) {
                    return Err(Error::validation(
                        "membership.advantage",
                        format!("{} outside [-1, 1]", r.advantage),
                    ));
                }
                check_unit("membership.auc", r.auc)?;
            }
        }
        for (k, (_, d)) in self.forgetting_curve.iter().enumerate() {
            check_unit("forgetting_curve", *d)?;
            if k > 0 && self.forgetting_curve[k - 1].0 >= self.forgetting_curve[k].0 {
                return Err(Error::validation(
                    "forgetting_curve",
                    "iterations must strictly increase",
                ));
            }
        }
        Ok(())
    }
}

/// Key-sorted, pretty-printed JSON of any serializable document.
pub fn canonical_json<T: Serialize>(doc: &T) -> Result<String> {
    let value = serde_json::to_value(doc).map_err(|e| Error::Invariant(format!("serialization failed: {e}")))?;
    let mut out = serde_json::to_string_pretty(&sort_keys(value)).map_err(|e| Error::Invariant(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// SHA-256 of the compact canonical JSON with [`TIMESTAMP_KEYS`] removed
/// from the top level.
pub fn document_digest<T: Serialize>(doc: &T) -> Result<String> {
    let mut value = serde_json::to_value(doc).map_err(|e| Error::Invariant(format!("serialization failed: {e}")))?;
    if let Some(map) = value.as_object_mut() {
        for k in TIMESTAMP_KEYS {
            map.remove(*k);
        }
    }
    let text = serde_json::to_string(&sort_keys(value)).map_err(|e| Error::Invariant(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Parses a JSON document, turning serde's missing-field errors into a
/// named validation error.
pub fn parse_document<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            Some(field) => Error::validation(field, "missing required field"),
            None => Error::Parse(msg),
        }
    })
}

pub fn report_digest(report: &UnlearnReport) -> Result<String> {
    document_digest(report)
}

pub fn report_to_json(report: &UnlearnReport) -> Result<String> {
    report.validate()?;
    let text = canonical_json(report)?;
    let back: UnlearnReport =
        parse_document(&text).map_err(|e| Error::Invariant(format!("report does not round-trip: {e}")))?;
    if &back != report {
        return Err(Error::Invariant("report does not round-trip losslessly".into()));
    }
    Ok(text)
}

pub fn parse_report(text: &str) -> Result<UnlearnReport> {
    let report: UnlearnReport = parse_document(text)?;
    report.validate()?;
    Ok(report)
}

/// Writes the canonical report to `path` and returns its digest.
pub fn emit_report(report: &UnlearnReport, path: &Path) -> Result<String> {
    let text = report_to_json(report)?;
    std::fs::write(path, text)?;
    report_digest(report)
}

/// Inputs shared by every model-level audit.
pub struct AuditContext<'a> {
    pub data: &'a Dataset,
    pub probes: &'a [Vec<f64>],
    pub eps_cert: f64,
    pub damping: f64,
    pub qfim_mode: QfimMode,
}

/// Full model-level audit of an unlearning run against its counterfactual.
pub fn audit_unlearning(
    ctx: &AuditContext<'_>,
    before: &TrainedModel,
    after: &TrainedModel,
    reference: &ParamVector,
    trace: &mut UnlearnTrace,
    reproducibility: Reproducibility,
) -> Result<UnlearnReport> {
    let t = &before.template;
    let forget = ctx.data.samples(Subset::Forget);
    let retain = ctx.data.samples(Subset::Retain);
    let holdout = ctx.data.samples(Subset::Test);
    let d = distance_audit(t, &before.theta, &after.theta, reference, ctx.probes, ctx.eps_cert)?;
    let curve = forgetting_curve(trace, reference, t, ctx.probes)?;
    let bound = param_gap_bound(before, &forget, ctx.damping, ctx.qfim_mode)?;
    let mut report = UnlearnReport::new(mechanism_tag(trace), reproducibility);
    report.distances = Some(d);
    report.cert_gap = Some(CertGap {
        value: d.trace_after,
        eps_cert: d.eps_cert,
        satisfied: d.certified,
    });
    report.param_gap_bound = Some(GapBound {
        value: bound,
        damping: ctx.damping,
        label: "heuristic".into(),
    });
    if !holdout.is_empty() {
        report.membership = Some(MembershipPair {
            before: membership_inference(before, &forget, &retain, &holdout)?,
            after: membership_inference(after, &forget, &retain, &holdout)?,
        });
    }
    report.retention = Some(retention_metrics(before, after, ctx.data)?);
    report.forgetting_curve = curve.points;
    report.validate()?;
    Ok(report)
}

fn mechanism_tag(trace: &UnlearnTrace) -> String {
    serde_json::to_value(trace.mechanism)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, ForgetPolicy, Generator};
    use crate::learn::{train, TrainConfig};
    use crate::pqc::{build_layered_ansatz, Entangler};
    use crate::rng::rng_from_seed;
    use crate::unlearn::Mechanism;
    use nalgebra::DMatrix;
    use rand::seq::SliceRandom;
    use rand::Rng as _;

    fn fixture() -> (TrainedModel, Dataset, Vec<Vec<f64>>) {
        let t = build_layered_ansatz(2, 1, Entangler::Linear, false).unwrap();
        let d = generate_dataset(Generator::Blobs, 40, 0.2, 3)
            .unwrap()
            .apply_forget_policy(&ForgetPolicy::Random { count: 6, seed: 1 })
            .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let m = train(&t, &d, &cfg).unwrap();
        let probes = default_probes(&d, DEFAULT_PROBES).unwrap();
        (m, d, probes)
    }

    #[test]
    fn distance_audit_examples() {
        let (m, _, probes) = fixture();
        let other = ParamVector::from(m.theta.iter().map(|v| v + 0.4).collect::<Vec<_>>());
        let hit = distance_audit(&m.template, &m.theta, &other, &other, &probes, 0.0).unwrap();
        assert!(hit.trace_after.abs() < 1e-9 && hit.certified);
        let idle = distance_audit(&m.template, &m.theta, &m.theta, &other, &probes, 0.05).unwrap();
        assert!(!idle.contracted);
        assert!(idle.trace_before > 0.0);
        assert!(distance_audit(&m.template, &m.theta, &m.theta, &other, &[vec![0.0]], 0.05).is_err());
    }

    #[test]
    fn gap_bound_examples() {
        assert_eq!(gap_bound_from(&DMatrix::identity(3, 3), 0.0, 0.0).unwrap(), 0.0);
        assert!((gap_bound_from(&DMatrix::identity(3, 3), 2.5, 0.0).unwrap() - 2.5).abs() < 1e-12);
        assert!(gap_bound_from(&DMatrix::zeros(2, 2), 1.0, 0.0).is_err());

        // Quadratic surrogate 0.5·h·(θ − c)² with a metric no larger than h.
        let (h, c, theta) = (2.0, 0.7, -0.4);
        let grid_min = (0..=20_000)
            .map(|k| -2.0 + 4.0 * k as f64 / 20_000.0)
            .min_by(|a, b| (0.5 * h * (a - c) * (a - c)).total_cmp(&(0.5 * h * (b - c) * (b - c))))
            .unwrap();
        let grad = h * (theta - c);
        let bound = gap_bound_from(&DMatrix::from_element(1, 1, 0.8 * h), grad.abs(), 0.0).unwrap();
        assert!(bound >= (theta - grid_min).abs());
        assert!(param_gap_bound(&fixture().0, &[], 1e-3, QfimMode::Diagonal).is_err());
    }

    #[test]
    fn membership_same_distribution_is_near_zero() {
        let mut rng = rng_from_seed(17);
        let mut draw = |n: usize| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
        let (forget, retain, holdout) = (draw(64), draw(64), draw(64));
        let observed = score_attack(&forget, &retain, &holdout).advantage;

        let mut pooled: Vec<f64> = forget.iter().chain(&holdout).copied().collect();
        let mut prng = rng_from_seed(99);
        let mut null: Vec<f64> = (0..400)
            .map(|_| {
                pooled.shuffle(&mut prng);
                score_attack(&pooled[..64], &retain, &pooled[64..]).advantage.abs()
            })
            .collect();
        null.sort_by(f64::total_cmp);
        let q95 = null[(0.95 * null.len() as f64) as usize];
        assert!(observed.abs() <= q95);
        assert!(observed.abs() <= 0.15);
    }

    #[test]
    fn membership_memorized_is_one() {
        let r = score_attack(&[0.0; 10], &[0.0; 10], &[1.0; 10]);
        assert_eq!(r.advantage, 1.0);
        assert_eq!(r.auc, 1.0);
        assert_eq!(auc(&[1.0], &[1.0]), 0.5);
        let (m, d, _) = fixture();
        assert!(membership_inference(&m, &[], &d.samples(Subset::Retain), &d.samples(Subset::Test)).is_err());
    }

    #[test]
    fn curve_examples() {
        let (m, _, probes) = fixture();
        let mut single = UnlearnTrace::new(Mechanism::QmuI, m.theta.clone());
        assert_eq!(
            forgetting_curve(&mut single, &m.theta, &m.template, &probes)
                .unwrap()
                .points
                .len(),
            1
        );
        let mut flat = UnlearnTrace::new(Mechanism::QmuI, m.theta.clone());
        flat.snapshots.push(m.theta.clone());
        flat.snapshots.push(m.theta.clone());
        let c = forgetting_curve(&mut flat, &m.theta, &m.template, &probes).unwrap();
        assert!(c.points.iter().all(|p| p.1.abs() < 1e-9));
        assert_eq!(flat.distances.len(), 3);
        assert!(c.flatness(2) < 1e-9);
        let mut empty = single.clone();
        empty.snapshots.clear();
        assert!(forgetting_curve(&mut empty, &m.theta, &m.template, &probes).is_err());
        assert!(c.to_csv().starts_with("iteration,trace_distance\n0,"));
    }

    #[test]
    fn noop_retention_is_zero_delta() {
        let (m, d, _) = fixture();
        let r = retention_metrics(&m, &m, &d).unwrap();
        assert_eq!((r.delta_retain, r.delta_forget), (0.0, 0.0));
    }

    fn sample_report() -> UnlearnReport {
        let (m, d, probes) = fixture();
        let mut trace = UnlearnTrace::new(Mechanism::QmuI, m.theta.clone());
        let after = m.with_theta(ParamVector::from(m.theta.iter().map(|v| v * 0.9).collect::<Vec<_>>()));
        trace.snapshots.push(after.theta.clone());
        let reference = ParamVector::from(m.theta.iter().map(|v| v * 0.8).collect::<Vec<_>>());
        let ctx = AuditContext {
            data: &d,
            probes: &probes,
            eps_cert: DEFAULT_EPS_CERT,
            damping: 1e-3,
            qfim_mode: QfimMode::Diagonal,
        };
        let repro = Reproducibility::new(5, &m.template, 1, &probes, &d);
        audit_unlearning(&ctx, &m, &after, &reference, &mut trace, repro).unwrap()
    }

    #[test]
    fn report_round_trip_and_digest() {
        let mut r = sample_report();
        assert_eq!(r.mechanism, "qmu_i");
        let text = report_to_json(&r).unwrap();
        assert_eq!(parse_report(&text).unwrap(), r);
        let d1 = report_digest(&r).unwrap();
        assert_eq!(d1, report_digest(&sample_report()).unwrap());
        r.created_at = Some("2026-01-01T00:00:00Z".into());
        assert_eq!(report_digest(&r).unwrap(), d1);
        r.mechanism = "retrain".into();
        assert_ne!(report_digest(&r).unwrap(), d1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        assert_eq!(emit_report(&r, &path).unwrap(), report_digest(&r).unwrap());
        assert!(emit_report(&r, &dir.path().join("missing/report.json")).is_err());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let text = canonical_json(&sample_report()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(text.find("\"cert_gap\"").unwrap() < text.find("\"distances\"").unwrap());
    }

    #[test]
    fn missing_field_is_named() {
        let text = report_to_json(&sample_report()).unwrap();
        for key in ["reproducibility", "distances", "privacy"] {
            let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
            v.as_object_mut().unwrap().remove(key);
            match parse_report(&v.to_string()) {
                Err(Error::Validation { field, .. }) => assert_eq!(field, key),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn out_of_range_values_rejected() {
        let mut r = sample_report();
        r.membership.as_mut().unwrap().after.advantage = 1.5;
        assert!(r.validate().is_err());
        let mut r = sample_report();
        r.forgetting_curve = vec![(1, 0.1), (1, 0.2)];
        assert!(r.validate().is_err());
        let mut r = sample_report();
        r.distances.as_mut().unwrap().trace_after = 0.9;
        r.distances.as_mut().unwrap().infidelity_after = 0.01;
        assert!(r.validate().is_err());
    }
}
