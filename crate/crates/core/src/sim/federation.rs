//! Round driver: sampling, downlink, local training, uplink, aggregation and
//! privacy read-out.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_clip, calibrate_noise_mult, OrderGrid, PrivacyTarget};
use crate::codec::{RecConfig, DEFAULT_COMPUTE_BUDGET};
use crate::data::LocalDataset;
use crate::error::{Error, Result};
use crate::model::{local_train, model_delta, Model, ModelKind};
use crate::param::{GroupPartition, ParamVector};
use crate::rng::{derive_seed, Purpose, StreamKey, MAX_ROUND};

use super::history::{
    choose_downlink, client_reconstruct, full_model_bits, mean_update, ClientHistory,
    ClientSnapshot, Downlink, HistoryEntry, ModelTemplate,
};
use super::mechanism::{
    ClientContext, MechanismParams, MechanismRegistry, PrivacyTracker, UplinkMechanism, Upload,
};
use super::sampling::{sample_clients, SamplingMode};

/// Codec settings before the model's layout is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecSettings {
    pub sigma: f64,
    /// Clip threshold as a multiple of `sigma`.
    pub clip_mult: f64,
    pub bits: u32,
    /// Splits each tensor into groups of at most this many parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_group_len: Option<usize>,
}

impl RecSettings {
    pub fn to_config(&self, layout: &GroupPartition) -> Result<RecConfig> {
        let partition = match self.max_group_len {
            None => layout.clone(),
            Some(0) => {
                return Err(Error::InvalidConfig(
                    "max_group_len must be at least 1".into(),
                ))
            }
            Some(max) => {
                let mut sizes = Vec::new();
                for g in layout.groups() {
                    let chunks = g.len.div_ceil(max);
                    for i in 0..chunks {
                        let len = max.min(g.len - i * max);
                        sizes.push((format!("{}.{i}", g.name), len));
                    }
                }
                GroupPartition::from_sizes(sizes)?
            }
        };
        let mut cfg = RecConfig::new(self.sigma, self.clip_mult, self.bits, partition)?;
        cfg.compute_budget = DEFAULT_COMPUTE_BUDGET;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub per_round: usize,
    pub rounds: usize,
    pub sampling: SamplingMode,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub model: ModelKind,
    /// Registry name of the uplink mechanism.
    pub mechanism: String,
    pub rec: RecSettings,
    /// DP-FedAvg noise multiplier.
    pub noise_mult: f64,
    /// DP-FedAvg clip threshold.
    pub fedavg_clip: f64,
    /// `None` means `1 / N^1.1`.
    pub delta: Option<f64>,
    pub max_order: u32,
    pub eval_every: usize,
    pub master_seed: u64,
    /// Reconstructs every history-served client and checks it against the server.
    pub verify_replay: bool,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_clients == 0
            || self.per_round == 0
            || self.eval_every == 0
            || self.batch_size == 0
        {
            return bad(
                "n_clients, per_round, eval_every and batch_size must all be at least 1".into(),
            );
        }
        if self.sampling == SamplingMode::WithoutReplacement && self.per_round > self.n_clients {
            return bad(format!(
                "per_round {} exceeds n_clients {} without replacement",
                self.per_round, self.n_clients
            ));
        }
        if self.rounds > MAX_ROUND as usize {
            return bad(format!("at most {MAX_ROUND} rounds are addressable"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        let delta = self.delta();
        if !(delta > 0.0 && delta < 1.0) {
            return bad(format!("delta {delta} outside (0, 1)"));
        }
        OrderGrid::up_to(self.max_order)?;
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or_else(|| default_delta(self.n_clients))
    }

    pub fn orders(&self) -> Result<OrderGrid> {
        OrderGrid::up_to(self.max_order)
    }

    /// Index bits every DP-REC message carries.
    pub fn index_bits_per_message(&self, layout: &GroupPartition) -> Result<u64> {
        let rec = self.rec.to_config(layout)?;
        Ok(rec.partition.num_groups() as u64 * u64::from(rec.bits))
    }

    /// Sets `rec.clip_mult` to the largest value meeting `epsilon` at the
    /// configured δ after all rounds. Assumes sampling with replacement.
    pub fn calibrate_dprec(&mut self, epsilon: f64, layout: &GroupPartition) -> Result<f64> {
        let target = PrivacyTarget::new(epsilon, self.delta())?;
        let bits_total =
            (self.rounds * self.per_round) as u64 * self.index_bits_per_message(layout)?;
        let c = calibrate_clip(
            self.rounds as u64,
            self.per_round as u64,
            self.n_clients as u64,
            self.rec.sigma,
            bits_total,
            target,
            &self.orders()?,
        )?;
        self.rec.clip_mult = c / self.rec.sigma;
        Ok(self.rec.clip_mult)
    }

    /// Sets `noise_mult` to the smallest value meeting `epsilon` for DP-FedAvg.
    pub fn calibrate_fedavg(&mut self, epsilon: f64) -> Result<f64> {
        let target = PrivacyTarget::new(epsilon, self.delta())?;
        let q = (self.per_round as f64 / self.n_clients as f64).min(1.0);
        self.noise_mult = calibrate_noise_mult(self.rounds as u64, q, target, &self.orders()?)?;
        Ok(self.noise_mult)
    }
}

/// `1 / N^1.1`.
pub fn default_delta(n_clients: usize) -> f64 {
    (n_clients as f64).powf(-1.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedData {
    pub clients: Vec<LocalDataset>,
    pub test: LocalDataset,
}

impl FederatedData {
    pub fn feature_dim(&self) -> usize {
        self.test.feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.test.num_classes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub eps_central: f64,
    pub eps_local: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
}

pub const METRICS_HEADER: [&str; 6] = [
    "round",
    "accuracy",
    "eps_central",
    "eps_local",
    "uplink_bits",
    "downlink_bits",
];

pub fn write_metrics_csv<W: Write>(out: W, rows: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.accuracy.to_string(),
            r.eps_central.to_string(),
            r.eps_local.to_string(),
            r.uplink_bits.to_string(),
            r.downlink_bits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Counters a test can inspect after a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimCounters {
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub messages: u64,
    pub history_downlinks: u64,
    pub full_model_downlinks: u64,
    /// Participations whose replayed model was checked against the server.
    pub replay_checks: u64,
}

pub struct Simulation<'a> {
    cfg: FederationConfig,
    data: &'a FederatedData,
    mechanism: Box<dyn UplinkMechanism>,
    tracker: Box<dyn PrivacyTracker>,
    rec: RecConfig,
    template: ModelTemplate,
    server: Model,
    round: u32,
    histories: Vec<ClientHistory>,
    snapshots: Vec<Option<ClientSnapshot>>,
    counters: SimCounters,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: FederationConfig, data: &'a FederatedData) -> Result<Self> {
        Self::with_registry(cfg, data, &MechanismRegistry::with_builtins())
    }

    pub fn with_registry(
        cfg: FederationConfig,
        data: &'a FederatedData,
        registry: &MechanismRegistry,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.clients.len() != cfg.n_clients {
            return Err(Error::InvalidConfig(format!(
                "config has {} clients, data has {}",
                cfg.n_clients,
                data.clients.len()
            )));
        }
        let template = ModelTemplate {
            kind: cfg.model,
            feature_dim: data.feature_dim(),
            num_classes: data.num_classes(),
        };
        let init_seed = derive_seed(cfg.master_seed, Purpose::ModelInit, 0, 0, 0);
        let server = Model::initialize(
            template.kind,
            template.feature_dim,
            template.num_classes,
            init_seed,
        )?;
        let rec = cfg.rec.to_config(server.weights().partition())?;
        let params = MechanismParams {
            rec: rec.clone(),
            noise_mult: cfg.noise_mult,
            fedavg_clip: cfg.fedavg_clip,
            n_clients: cfg.n_clients,
            per_round: cfg.per_round,
            sampling: cfg.sampling,
            delta: cfg.delta(),
            orders: cfg.orders()?,
            master_seed: cfg.master_seed,
        };
        let mechanism = registry.build(&cfg.mechanism, &params)?;
        let tracker = mechanism.new_tracker();
        let n = cfg.n_clients;
        Ok(Self {
            histories: vec![ClientHistory::fresh(init_seed); n],
            snapshots: vec![None; n],
            cfg,
            data,
            mechanism,
            tracker,
            rec,
            template,
            server,
            round: 0,
            counters: SimCounters::default(),
        })
    }

    pub fn server_model(&self) -> &Model {
        &self.server
    }

    pub fn rec_config(&self) -> &RecConfig {
        &self.rec
    }

    pub fn counters(&self) -> SimCounters {
        self.counters
    }

    pub fn tracker(&self) -> &dyn PrivacyTracker {
        self.tracker.as_ref()
    }

    pub fn rounds_done(&self) -> usize {
        self.round as usize
    }

    pub fn history(&self, client: usize) -> &ClientHistory {
        &self.histories[client]
    }

    pub fn metrics(&self) -> Result<RoundMetrics> {
        let privacy = self.tracker.report()?;
        Ok(RoundMetrics {
            round: self.round as usize,
            accuracy: self.server.accuracy(&self.data.test),
            eps_central: privacy.eps_central,
            eps_local: privacy.eps_local,
            uplink_bits: self.counters.uplink_bits,
            downlink_bits: self.counters.downlink_bits,
        })
    }

    /// Executes one round and returns the sampled client ids.
    pub fn run_round(&mut self) -> Result<Vec<usize>> {
        let round = self.round;
        let round_key =
            StreamKey::for_purpose(self.cfg.master_seed, Purpose::ClientSampling, round, 0);
        let participants = sample_clients(
            self.cfg.n_clients,
            self.cfg.per_round,
            self.cfg.sampling,
            round_key,
        )?;

        let mut distinct = participants.clone();
        distinct.dedup();
        for &c in &distinct {
            self.serve_downlink(c)?;
        }

        let mut uploads = Vec::with_capacity(participants.len());
        let mut draw = 0u32;
        for (i, &client) in participants.iter().enumerate() {
            draw = if i > 0 && participants[i - 1] == client {
                draw + 1
            } else {
                0
            };
            let private_seed = derive_seed(
                self.cfg.master_seed,
                Purpose::ClientSeed,
                round,
                client as u32,
                u64::from(draw),
            );
            let ctx = ClientContext {
                round,
                client,
                draw,
                private_seed,
            };
            let trained = local_train(
                &self.server,
                &self.data.clients[client],
                self.cfg.local_epochs,
                self.cfg.batch_size,
                self.cfg.learning_rate,
                private_seed,
            )?;
            let delta = model_delta(&trained, &self.server)?;
            uploads.push(self.mechanism.encode(&delta, &ctx)?);
        }

        let layout = self.server.weights().partition();
        let decoded = uploads
            .iter()
            .map(|u| self.mechanism.decode(u)?.with_partition(layout.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = mean_update(self.server.weights(), &decoded)?;
        self.mechanism.finalize(&mut mean, round, uploads.len())?;
        let mut weights = self.server.weights().clone();
        weights.add_scaled(&mean, 1.0)?;
        if !weights.is_finite() {
            return Err(Error::NonFinite("server model"));
        }
        self.server = self.server.with_weights(weights)?;

        self.counters.uplink_bits += uploads
            .iter()
            .map(|u| self.mechanism.upload_bits(u))
            .sum::<u64>();
        self.counters.messages += uploads.len() as u64;
        self.tracker.record_round(&participants)?;

        if self.mechanism.supports_history() {
            let messages: Arc<[_]> = uploads
                .into_iter()
                .filter_map(|u| match u {
                    Upload::Rec(m) => Some(m),
                    Upload::Dense(_) => None,
                })
                .collect();
            let entry = HistoryEntry::Round { round, messages };
            for h in &mut self.histories {
                h.push(entry.clone());
            }
        }
        self.round += 1;
        Ok(participants)
    }

    fn serve_downlink(&mut self, client: usize) -> Result<()> {
        let model_bits = full_model_bits(self.server.weights(), 0);
        if !self.mechanism.supports_history() {
            self.counters.downlink_bits += model_bits;
            self.counters.full_model_downlinks += 1;
            return Ok(());
        }
        let history = std::mem::take(&mut self.histories[client]);
        let payload = choose_downlink(history.size_bits(&self.rec), model_bits);
        self.counters.downlink_bits += payload.bits();
        match payload {
            Downlink::FullModel { .. } => self.counters.full_model_downlinks += 1,
            Downlink::History { .. } => {
                self.counters.history_downlinks += 1;
                if self.cfg.verify_replay {
                    self.verify_replay(client, &history)?;
                }
            }
        }
        if self.cfg.verify_replay {
            self.snapshots[client] = Some(ClientSnapshot {
                weights: self.server.weights().clone(),
                next_round: self.round,
            });
        }
        Ok(())
    }

    /// What `client` would rebuild from its last known model and its pending
    /// history. Needs `verify_replay` so that last known models are kept.
    pub fn replay_client(&self, client: usize) -> Result<ClientSnapshot> {
        if !self.cfg.verify_replay {
            return Err(Error::InvalidConfig(
                "client snapshots are only kept with verify_replay".into(),
            ));
        }
        self.rebuild(client, &self.histories[client])
    }

    fn rebuild(&self, client: usize, history: &ClientHistory) -> Result<ClientSnapshot> {
        let last = match &self.snapshots[client] {
            Some(s) => s.clone(),
            None => ClientSnapshot {
                weights: ParamVector::zeros(self.server.weights().partition().clone()),
                next_round: 0,
            },
        };
        client_reconstruct(&last, history, &self.rec, &self.template)
    }

    fn verify_replay(&mut self, client: usize, history: &ClientHistory) -> Result<()> {
        let rebuilt = self.rebuild(client, history)?;
        let same = rebuilt.next_round == self.round
            && rebuilt
                .weights
                .values()
                .iter()
                .zip(self.server.weights().values())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::Desync(format!(
                "client {client} replay differs from the server model in round {}",
                self.round
            )));
        }
        self.counters.replay_checks += 1;
        Ok(())
    }
}

/// Runs all rounds, emitting a row every `eval_every` rounds and after the last.
pub fn run_experiment(cfg: &FederationConfig, data: &FederatedData) -> Result<Vec<RoundMetrics>> {
    Ok(run_experiment_with_counters(cfg, data)?.0)
}

pub fn run_experiment_with_counters(
    cfg: &FederationConfig,
    data: &FederatedData,
) -> Result<(Vec<RoundMetrics>, SimCounters)> {
    let mut sim = Simulation::new(cfg.clone(), data)?;
    let mut rows = Vec::new();
    if cfg.rounds == 0 {
        rows.push(sim.metrics()?);
    }
    for t in 1..=cfg.rounds {
        sim.run_round()?;
        if t % cfg.eval_every == 0 || t == cfg.rounds {
            rows.push(sim.metrics()?);
        }
    }
    Ok((rows, sim.counters()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dirichlet_partition, separable_two_class};

    fn data(n_clients: usize) -> FederatedData {
        let train = separable_two_class(400, 4, 0.5, 1).unwrap();
        FederatedData {
            clients: dirichlet_partition(&train, n_clients, 1.0, 2).unwrap(),
            test: separable_two_class(200, 4, 0.5, 3).unwrap(),
        }
    }

    fn cfg(mechanism: &str) -> FederationConfig {
        FederationConfig {
            n_clients: 8,
            per_round: 3,
            rounds: 6,
            sampling: SamplingMode::WithReplacement,
            local_epochs: 1,
            batch_size: 16,
            learning_rate: 0.5,
            model: ModelKind::LogisticRegression,
            mechanism: mechanism.into(),
            rec: RecSettings {
                sigma: 0.05,
                clip_mult: 1.0,
                bits: 4,
                max_group_len: None,
            },
            noise_mult: 0.5,
            fedavg_clip: 1.0,
            delta: Some(1e-3),
            max_order: 32,
            eval_every: 2,
            master_seed: 11,
            verify_replay: true,
        }
    }

    #[test]
    fn zero_rounds_gives_initial_row() {
        let mut c = cfg("dp-rec");
        c.rounds = 0;
        let rows = run_experiment(&c, &data(8)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(
            (rows[0].round, rows[0].uplink_bits, rows[0].downlink_bits),
            (0, 0, 0)
        );
        assert!((rows[0].eps_central - 1e3f64.ln() / 32.0).abs() < 1e-12);
    }

    #[test]
    fn rows_at_eval_points_and_end() {
        let mut c = cfg("none");
        c.rounds = 5;
        let rounds: Vec<_> = run_experiment(&c, &data(8))
            .unwrap()
            .iter()
            .map(|r| r.round)
            .collect();
        assert_eq!(rounds, vec![2, 4, 5]);
    }

    #[test]
    fn dprec_uplink_identity_and_replay() {
        let c = cfg("dp-rec");
        let (rows, counters) = run_experiment_with_counters(&c, &data(8)).unwrap();
        assert_eq!(rows.last().unwrap().uplink_bits, 6 * 3 * (64 + 2 * 4));
        assert!(counters.replay_checks > 0);
    }

    #[test]
    fn unknown_mechanism_is_rejected() {
        assert!(matches!(
            Simulation::new(cfg("signsgd"), &data(8)),
            Err(Error::UnknownMechanism(_))
        ));
    }

    #[test]
    fn chunked_groups() {
        let layout = GroupPartition::from_sizes([("w", 5), ("b", 2)]).unwrap();
        let s = RecSettings {
            sigma: 1.0,
            clip_mult: 1.0,
            bits: 2,
            max_group_len: Some(2),
        };
        assert_eq!(
            s.to_config(&layout).unwrap().partition.lengths(),
            vec![2, 2, 1, 2]
        );
    }

    #[test]
    fn default_delta_matches_formula() {
        assert!((default_delta(100) - 100f64.powf(-1.1)).abs() < 1e-18);
    }
}
