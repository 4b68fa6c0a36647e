//! Deterministic federated PQC training: client shards, zero-sum-mask secure
//! aggregation over star or ring topologies, Gaussian DP rounds, and
//! client-level unlearning.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Sample, Subset};
use crate::geo::{parameter_shift_gradient, GradVector, LossSpec};
use crate::learn::init_params;
use crate::pqc::{CircuitTemplate, ParamVector};
use crate::privacy::{add_noise, clip, DpConfig, PrivacyLedger};
use crate::qcore::{self, trace_distance, DensityMatrix, PureState, C64};
use crate::rng::{derived_rng, Rng};
use crate::unlearn::{client_forget, Mechanism, UnlearnTrace};
use crate::{Error, Result};

/// Mask entries are drawn uniformly from `[−MASK_SCALE, MASK_SCALE]`.
pub const MASK_SCALE: f64 = 1.0;
pub const MASK_TOL: f64 = 1e-9;
/// Qubits per client in the joint demo register.
pub const QUBITS_PER_CLIENT: usize = 2;
pub const MAX_CHANNEL_CLIENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Every client masks against a server-coordinated zero-sum draw.
    Star,
    /// Client `i` adds `r_i − r_{i−1}`, cancelling around the ring.
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetMode {
    GradientSubtract,
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Client {
    pub id: usize,
    /// Dataset row indices of the shard.
    pub rows: Vec<usize>,
    pub shard: Vec<Sample>,
    pub active: bool,
    /// `Σ_rounds g_i / m`: the client's cumulative share of applied updates.
    pub contribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub masks: Vec<Vec<f64>>,
}

impl MaskSet {
    pub fn zeros(n_clients: usize, n_params: usize) -> Self {
        Self {
            masks: vec![vec![0.0; n_params]; n_clients],
        }
    }

    /// Largest absolute entry of `Σ_i m_i`.
    pub fn sum_error(&self) -> f64 {
        let n = self.masks.first().map_or(0, Vec::len);
        (0..n)
            .map(|k| self.masks.iter().map(|m| m[k]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

pub fn generate_masks(n_clients: usize, n_params: usize, topology: Topology, rng: &mut Rng) -> MaskSet {
    let draw = |rng: &mut Rng| -> Vec<f64> {
        (0..n_params)
            .map(|_| rng.random_range(-MASK_SCALE..=MASK_SCALE))
            .collect()
    };
    if n_clients < 2 {
        return MaskSet::zeros(n_clients, n_params);
    }
    let masks = match topology {
        Topology::Star => {
            let mut masks: Vec<Vec<f64>> = (0..n_clients - 1).map(|_| draw(rng)).collect();
            let last = (0..n_params)
                .map(|k| -masks.iter().map(|m| m[k]).sum::<f64>())
                .collect();
            masks.push(last);
            masks
        }
        Topology::Ring => {
            let r: Vec<Vec<f64>> = (0..n_clients).map(|_| draw(rng)).collect();
            (0..n_clients)
                .map(|i| {
                    let prev = &r[(i + n_clients - 1) % n_clients];
                    r[i].iter().zip(prev).map(|(a, b)| a - b).collect()
                })
                .collect()
        }
    };
    MaskSet { masks }
}

/// Masks used in round `round` of a federation configured by `cfg`.
pub fn round_masks(cfg: &FedConfig, round: usize, n_clients: usize, n_params: usize) -> MaskSet {
    generate_masks(
        n_clients,
        n_params,
        cfg.topology,
        &mut derived_rng(cfg.seed, "mask", round as u64),
    )
}

/// `clip(mean parameter-shift gradient over the shard, C)`.
pub fn local_update(
    t: &CircuitTemplate,
    theta: &ParamVector,
    shard: &[Sample],
    c: f64,
    loss: LossSpec,
) -> Result<GradVector> {
    if shard.is_empty() {
        return Err(Error::Empty("client shard"));
    }
    clip(&parameter_shift_gradient(t, theta, shard, loss)?, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sum: Vec<f64>,
    /// What the aggregator observes: `g_i + m_i`.
    pub masked: Vec<Vec<f64>>,
}

pub fn secure_aggregate(updates: &[GradVector], masks: &MaskSet) -> Result<Aggregate> {
    if updates.len() != masks.masks.len() {
        return Err(Error::validation(
            "masks",
            format!("{} masks for {} clients", masks.masks.len(), updates.len()),
        ));
    }
    let err = masks.sum_error();
    if err > MASK_TOL {
        return Err(Error::Invariant(format!("mask sum deviates from zero by {err:.3e}")));
    }
    let n = updates.first().map_or(0, |u| u.0.len());
    let masked: Vec<Vec<f64>> = updates
        .iter()
        .zip(&masks.masks)
        .map(|(g, m)| {
            if g.0.len() != n || m.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: g.0.len().max(m.len()),
                });
            }
            Ok(g.0.iter().zip(m).map(|(a, b)| a + b).collect())
        })
        .collect::<Result<_>>()?;
    let sum = (0..n).map(|k| masked.iter().map(|v| v[k]).sum()).collect();
    Ok(Aggregate { sum, masked })
}

/// SHA-256 over the little-endian bytes of the masked messages.
pub fn masked_digest(vs: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    for v in vs {
        for x in v {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnEvent {
    /// Executed before the training round with this index.
    pub round: usize,
    pub client: usize,
    pub mode: ForgetMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub n_clients: usize,
    pub rounds: usize,
    /// Server learning rate `η`.
    pub lr: f64,
    pub clip: f64,
    pub topology: Topology,
    #[serde(default)]
    pub dp: Option<DpConfig>,
    #[serde(default = "default_loss")]
    pub loss: LossSpec,
    /// Scale of the stored contribution removed by gradient subtraction;
    /// defaults to `lr`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Rounds of retraining on the remaining clients after a subtraction.
    #[serde(default)]
    pub retrain_rounds: usize,
    #[serde(default)]
    pub unlearn: Vec<UnlearnEvent>,
    pub seed: u64,
}

fn default_loss() -> LossSpec {
    LossSpec::Mse
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(Error::validation("fed.n_clients", "need at least 2 clients"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("fed.lr", "must be positive"));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::validation("fed.clip", "must be positive and finite"));
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::validation("fed.alpha", "must be non-negative"));
            }
        }
        if let Some(dp) = &self.dp {
            dp.calibrate()?;
            if dp.clip != self.clip {
                return Err(Error::validation("dp.clip", "must equal fed.clip"));
            }
        }
        for e in &self.unlearn {
            if e.client >= self.n_clients {
                return Err(Error::validation(
                    "fed.unlearn.client",
                    format!("unknown client {}", e.client),
                ));
            }
            if e.mode == ForgetMode::Channel && self.n_clients > MAX_CHANNEL_CLIENTS {
                return Err(Error::validation(
                    "fed.unlearn.mode",
                    format!("channel mode supports at most {MAX_CHANNEL_CLIENTS} clients"),
                ));
            }
        }
        Ok(())
    }

    fn sigma(&self) -> Result<(f64, bool)> {
        match &self.dp {
            Some(dp) => {
                let s = dp.calibrate()?;
                Ok((s.sigma, s.in_proof_regime))
            }
            None => Ok((0.0, true)),
        }
    }

    fn delta(&self) -> f64 {
        self.dp.as_ref().map_or(1e-5, |d| d.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    /// SHA-256 over the masked messages the aggregator saw.
    pub masked_digest: String,
    pub aggregate: Vec<f64>,
    /// `‖Σ masked − Σ unmasked‖_∞`.
    pub mask_cancellation_error: f64,
    pub sigma: f64,
    /// Cumulative `ε` at the configured `δ`; `None` when unbounded.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedState {
    pub template: CircuitTemplate,
    pub theta: ParamVector,
    pub clients: Vec<Client>,
    pub ledger: PrivacyLedger,
    pub history: Vec<RoundRecord>,
    pub round: usize,
    pub config: FedConfig,
}

/// Deals the shuffled train rows round-robin into `n` shards.
pub fn iid_shards(data: &Dataset, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rows = data.indices(Subset::Train);
    rows.shuffle(&mut derived_rng(seed, "shard", 0));
    let mut shards = vec![Vec::new(); n];
    for (k, r) in rows.into_iter().enumerate() {
        shards[k % n].push(r);
    }
    shards.iter_mut().for_each(|s| s.sort_unstable());
    shards
}

impl FedState {
    pub fn new(t: &CircuitTemplate, data: &Dataset, cfg: &FedConfig) -> Result<Self> {
        cfg.validate()?;
        Self::with_shards(t, data, iid_shards(data, cfg.n_clients, cfg.seed), cfg)
    }

    /// Federation over explicit shards, which must partition the train split.
    pub fn with_shards(t: &CircuitTemplate, data: &Dataset, shards: Vec<Vec<usize>>, cfg: &FedConfig) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.n_clients {
            return Err(Error::validation(
                "fed.shards",
                format!("{} shards for {} clients", shards.len(), cfg.n_clients),
            ));
        }
        let mut seen = vec![false; data.len()];
        for &r in shards.iter().flatten() {
            if r >= data.len() || data.split()[r] != crate::data::Split::Train {
                return Err(Error::validation("fed.shards", format!("row {r} is not a train row")));
            }
            if seen[r] {
                return Err(Error::validation("fed.shards", format!("row {r} in two shards")));
            }
            seen[r] = true;
        }
        if data.indices(Subset::Train).iter().any(|&r| !seen[r]) {
            return Err(Error::validation("fed.shards", "shards do not cover the train split"));
        }
        let n_params = t.n_params();
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(id, rows)| Client {
                id,
                shard: data.samples_at(&rows),
                rows,
                active: true,
                contribution: vec![0.0; n_params],
            })
            .collect();
        Ok(Self {
            template: t.clone(),
            theta: init_params(t, cfg.seed),
            clients,
            ledger: PrivacyLedger::default(),
            history: Vec::new(),
            round: 0,
            config: cfg.clone(),
        })
    }

    /// Clients that take part in the next round.
    pub fn participants(&self) -> Vec<usize> {
        self.clients
            .iter()
            .filter(|c| c.active && !c.shard.is_empty())
            .map(|c| c.id)
            .collect()
    }

    pub fn epsilon(&self) -> Result<Option<f64>> {
        let e = self.ledger.compose(self.config.delta())?.epsilon;
        Ok(e.is_finite().then_some(e))
    }
}

/// One round: local updates, zero-sum masking, aggregation, Gaussian noise,
/// server step `θ ← θ − η (G + noise)/m`, ledger update.
pub fn fed_round(state: &mut FedState) -> Result<RoundRecord> {
    if state.clients.len() < 2 {
        return Err(Error::validation("fed.n_clients", "need at least 2 clients"));
    }
    let ids = state.participants();
    if ids.is_empty() {
        return Err(Error::Empty("participating clients"));
    }
    let cfg = &state.config;
    let updates = ids
        .iter()
        .map(|&i| {
            local_update(
                &state.template,
                &state.theta,
                &state.clients[i].shard,
                cfg.clip,
                cfg.loss,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let n_params = state.theta.len();
    let masks = round_masks(cfg, state.round, ids.len(), n_params);
    let agg = secure_aggregate(&updates, &masks)?;
    let plain: Vec<f64> = (0..n_params).map(|k| updates.iter().map(|u| u.0[k]).sum()).collect();
    let mask_cancellation_error = agg
        .sum
        .iter()
        .zip(&plain)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (sigma, proven) = cfg.sigma()?;
    let noisy = add_noise(
        &GradVector(agg.sum.clone()),
        sigma,
        &mut derived_rng(cfg.seed, "noise", state.round as u64),
    )?;
    let m = ids.len() as f64;
    state.theta = ParamVector::new(
        state
            .theta
            .iter()
            .zip(&noisy.0)
            .map(|(t, g)| t - cfg.lr * g / m)
            .collect(),
    )?;
    for (&i, u) in ids.iter().zip(&updates) {
        for (c, g) in state.clients[i].contribution.iter_mut().zip(&u.0) {
            *c += g / m;
        }
    }
    state.ledger.record_gaussian(sigma, cfg.clip, proven);
    let record = RoundRecord {
        round: state.round,
        participants: ids,
        masked_digest: masked_digest(&agg.masked),
        aggregate: agg.sum,
        mask_cancellation_error,
        sigma,
        epsilon: state.epsilon()?,
    };
    state.round += 1;
    state.history.push(record.clone());
    Ok(record)
}

/// Trace-distance audit of the client channel on the joint demo register.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelAudit {
    pub trace_before: f64,
    pub trace_after: f64,
    /// `‖Tr_c ρ_out − Tr_c ρ_in‖_max`.
    pub marginal_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUnlearnOutcome {
    pub client: usize,
    pub mode: ForgetMode,
    pub trace: UnlearnTrace,
    pub channel: Option<ChannelAudit>,
}

fn client_block(client: usize) -> Vec<usize> {
    (0..QUBITS_PER_CLIENT).map(|k| client * QUBITS_PER_CLIENT + k).collect()
}

fn shard_mean(shard: &[Sample]) -> Vec<f64> {
    let d = shard.first().map_or(0, |s| s.x.len());
    (0..d)
        .map(|j| shard.iter().map(|s| s.x[j]).sum::<f64>() / shard.len() as f64)
        .collect()
}

/// Joint register with one `QUBITS_PER_CLIENT` block per client: each
/// included client encodes its shard mean by RY rotations and a local CNOT,
/// and adjacent included blocks are linked by a CNOT. Excluded blocks stay
/// in `|0…0⟩`.
pub fn joint_demo_state(clients: &[Client], include: &[bool]) -> Result<DensityMatrix> {
    let n_clients = clients.len();
    if n_clients > MAX_CHANNEL_CLIENTS {
        return Err(Error::validation(
            "fed.n_clients",
            format!("joint register supports at most {MAX_CHANNEL_CLIENTS} clients"),
        ));
    }
    let n = n_clients * QUBITS_PER_CLIENT;
    let mut psi = PureState::zero(n)?;
    let ry = |a: f64| {
        let (s, c) = (a / 2.0).sin_cos();
        qcore::CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0)],
        )
    };
    for (i, c) in clients.iter().enumerate() {
        if !include[i] {
            continue;
        }
        let mean = shard_mean(&c.shard);
        let block = client_block(i);
        for (k, &q) in block.iter().enumerate() {
            let angle = if mean.is_empty() { 0.0 } else { mean[k % mean.len()] };
            psi = psi.apply_unitary(&ry(angle), &[q])?;
        }
        psi = psi.apply_unitary(&qcore::cnot(), &[block[0], block[1]])?;
    }
    for i in 0..n_clients.saturating_sub(1) {
        if include[i] && include[i + 1] {
            psi = psi.apply_unitary(&qcore::cnot(), &[client_block(i)[1], client_block(i + 1)[0]])?;
        }
    }
    Ok(psi.to_density())
}

fn retained_positions(n_clients: usize, client: usize) -> Vec<usize> {
    (0..n_clients * QUBITS_PER_CLIENT)
        .filter(|q| !client_block(client).contains(q))
        .collect()
}

/// Removes a client. `GradientSubtract` adds back `α` times the client's
/// stored contribution and retrains on the rest; `Channel` applies the
/// client channel to the joint demo register and audits contraction toward
/// the client-free reference. Either way the client leaves all future
/// rounds.
pub fn unlearn_client(state: &mut FedState, client: usize, mode: ForgetMode) -> Result<ClientUnlearnOutcome> {
    if client >= state.clients.len() {
        return Err(Error::Unknown {
            kind: "client",
            name: client.to_string(),
        });
    }
    let mut trace = UnlearnTrace::new(
        match mode {
            ForgetMode::GradientSubtract => Mechanism::GradientSubtract,
            ForgetMode::Channel => Mechanism::ClientChannel,
        },
        state.theta.clone(),
    );
    let mut channel = None;
    match mode {
        ForgetMode::GradientSubtract => {
            let alpha = state.config.alpha.unwrap_or(state.config.lr);
            let c = &state.clients[client].contribution;
            state.theta = ParamVector::new(state.theta.iter().zip(c).map(|(t, g)| t + alpha * g).collect())?;
            state.clients[client].active = false;
            trace.snapshots.push(state.theta.clone());
            for _ in 0..state.config.retrain_rounds {
                fed_round(state)?;
                trace.snapshots.push(state.theta.clone());
            }
        }
        ForgetMode::Channel => {
            let n_clients = state.clients.len();
            let all: Vec<bool> = state.clients.iter().map(|c| c.active).collect();
            let rho = joint_demo_state(&state.clients, &all)?;
            let mut without = all.clone();
            without[client] = false;
            let reference = client_forget(&joint_demo_state(&state.clients, &without)?, &client_block(client))?;
            let out = client_forget(&rho, &client_block(client))?;
            let keep = retained_positions(n_clients, client);
            let m_in = qcore::partial_trace(&rho, &keep)?;
            let m_out = qcore::partial_trace(&out, &keep)?;
            channel = Some(ChannelAudit {
                trace_before: trace_distance(&rho, &reference)?,
                trace_after: trace_distance(&out, &reference)?,
                marginal_error: (m_in.matrix() - m_out.matrix())
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max),
            });
            state.clients[client].active = false;
            trace.snapshots.push(state.theta.clone());
        }
    }
    Ok(ClientUnlearnOutcome {
        client,
        mode,
        trace,
        channel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedEventRecord {
    pub round: usize,
    pub outcome: ClientUnlearnOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRun {
    pub initial_theta: ParamVector,
    pub final_theta: ParamVector,
    pub history: Vec<RoundRecord>,
    pub events: Vec<FedEventRecord>,
    pub ledger: PrivacyLedger,
    pub epsilon: Option<f64>,
    pub naive_epsilon: Option<f64>,
}

/// Full deterministic run: `rounds` training rounds with the scheduled
/// unlearning events applied before their round index (events scheduled at
/// `rounds` run after the last round).
pub fn run_simulation(t: &CircuitTemplate, data: &Dataset, cfg: &FedConfig) -> Result<(FedRun, FedState)> {
    let mut state = FedState::new(t, data, cfg)?;
    let initial_theta = state.theta.clone();
    let mut events = Vec::new();
    for r in 0..=cfg.rounds {
        for e in cfg.unlearn.iter().filter(|e| e.round == r) {
            let outcome = unlearn_client(&mut state, e.client, e.mode)?;
            events.push(FedEventRecord { round: r, outcome });
        }
        if r < cfg.rounds {
            fed_round(&mut state)?;
        }
    }
    if let Some(e) = cfg.unlearn.iter().find(|e| e.round > cfg.rounds) {
        return Err(Error::validation(
            "fed.unlearn.round",
            format!("round {} beyond {} rounds", e.round, cfg.rounds),
        ));
    }
    let comp = state.ledger.compose(cfg.delta())?;
    let finite = |v: f64| v.is_finite().then_some(v);
    Ok((
        FedRun {
            initial_theta,
            final_theta: state.theta.clone(),
            history: state.history.clone(),
            events,
            ledger: state.ledger.clone(),
            epsilon: finite(comp.epsilon),
            naive_epsilon: finite(comp.naive_epsilon),
        },
        state,
    ))
}
