//! Uplink mechanisms: how a client update travels to the server and what
//! privacy it costs.
//!
//! Every variant implements [`UplinkMechanism`] and is registered by name in a
//! [`MechanismRegistry`]; the simulator picks one at runtime from its
//! configuration.
//!
//! | name           | client sends                         | privacy accounting            |
//! |----------------|--------------------------------------|-------------------------------|
//! | `dp-rec`       | seed + one index per group           | DP-REC accountant             |
//! | `dp-rec-exact` | exact sample of `N(clip(δ), σ²I)`    | same, without IS overhead     |
//! | `dp-fedavg`    | `clip(δ)`, server adds Gaussian noise| subsampled Gaussian RDP       |
//! | `none`         | raw `δ`                              | none                          |

use std::collections::BTreeMap;

use crate::accountant::{gauss_baseline_epsilon, AccountantState, EpsilonReport, OrderGrid};
use crate::codec::{self, clip, RecConfig, RecMessage};
use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::{derive_seed, standard_normal_at, Purpose, StreamKey};

use super::sampling::SamplingMode;

/// Bits per transmitted real in dense uploads.
pub const DENSE_BITS_PER_PARAM: u64 = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Upload {
    Rec(RecMessage),
    Dense(ParamVector),
}

/// Client-side randomness and identity for one execution.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext {
    pub round: u32,
    pub client: usize,
    /// Position of this execution among the client's draws in the round.
    pub draw: u32,
    /// Seed of the client-private stream for this execution.
    pub private_seed: u64,
}

impl ClientContext {
    pub fn categorical_key(&self) -> StreamKey {
        StreamKey::for_purpose(self.private_seed, Purpose::Categorical, self.round, 0)
    }

    /// The shared seed the client picks for its message.
    pub fn message_seed(&self) -> u64 {
        derive_seed(self.private_seed, Purpose::MessageSeed, self.round, 0, 0)
    }
}

/// Everything a mechanism may need to be built.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismParams {
    pub rec: RecConfig,
    /// DP-FedAvg noise multiplier `z`.
    pub noise_mult: f64,
    /// DP-FedAvg clip threshold.
    pub fedavg_clip: f64,
    pub n_clients: usize,
    pub per_round: usize,
    pub sampling: SamplingMode,
    pub delta: f64,
    pub orders: OrderGrid,
    pub master_seed: u64,
}

pub trait UplinkMechanism: Send + Sync {
    fn name(&self) -> &'static str;

    /// Privatises and compresses one client update.
    fn encode(&self, delta: &ParamVector, ctx: &ClientContext) -> Result<Upload>;

    /// Server-side reconstruction of one upload.
    fn decode(&self, upload: &Upload) -> Result<ParamVector>;

    /// Post-processing of the averaged update before it is applied.
    fn finalize(&self, _mean: &mut ParamVector, _round: u32, _uploads: usize) -> Result<()> {
        Ok(())
    }

    fn upload_bits(&self, upload: &Upload) -> u64;

    /// Whether uploads are index messages a client can replay on the downlink.
    fn supports_history(&self) -> bool {
        false
    }

    fn new_tracker(&self) -> Box<dyn PrivacyTracker>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyReport {
    pub eps_central: f64,
    pub eps_local: f64,
}

pub trait PrivacyTracker: Send {
    /// Records one round; `participants` may repeat ids.
    fn record_round(&mut self, participants: &[usize]) -> Result<()>;

    fn report(&self) -> Result<PrivacyReport>;

    /// Accountant mini-steps taken so far.
    fn steps(&self) -> u64;
}

type Factory = fn(&MechanismParams) -> Result<Box<dyn UplinkMechanism>>;

/// Name → constructor table for uplink mechanisms.
pub struct MechanismRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl MechanismRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("dp-rec", |p| Ok(Box::new(DpRec::new(p.clone(), false)?)));
        r.register("dp-rec-exact", |p| {
            Ok(Box::new(DpRec::new(p.clone(), true)?))
        });
        r.register("dp-fedavg", |p| Ok(Box::new(DpFedAvg::new(p.clone())?)));
        r.register("none", |p| Ok(Box::new(PlainFedAvg { params: p.clone() })));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, params: &MechanismParams) -> Result<Box<dyn UplinkMechanism>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownMechanism(name.to_string()))?;
        factory(params)
    }
}

impl Default for MechanismRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

fn dense_bits(v: &ParamVector) -> u64 {
    DENSE_BITS_PER_PARAM * v.len() as u64
}

/// Relative entropy coding of the clipped update; `exact` swaps the coding
/// step for a direct sample of the target Gaussian.
pub struct DpRec {
    params: MechanismParams,
    exact: bool,
}

impl DpRec {
    pub fn new(params: MechanismParams, exact: bool) -> Result<Self> {
        params.rec.validate()?;
        Ok(Self { params, exact })
    }
}

impl UplinkMechanism for DpRec {
    fn name(&self) -> &'static str {
        if self.exact {
            "dp-rec-exact"
        } else {
            "dp-rec"
        }
    }

    fn encode(&self, delta: &ParamVector, ctx: &ClientContext) -> Result<Upload> {
        let rec = &self.params.rec;
        if !self.exact {
            let delta = delta.clone().with_partition(rec.partition.clone())?;
            return Ok(Upload::Rec(codec::encode(
                &delta,
                rec,
                ctx.message_seed(),
                ctx.categorical_key(),
            )?));
        }
        let key = StreamKey::for_purpose(ctx.private_seed, Purpose::ExactSample, ctx.round, 0);
        let values = clip(delta.values(), rec.clip_threshold())
            .into_iter()
            .enumerate()
            .map(|(j, m)| m + rec.sigma * standard_normal_at(key, j as u64))
            .collect();
        Ok(Upload::Dense(ParamVector::new(
            values,
            delta.partition().clone(),
        )?))
    }

    fn decode(&self, upload: &Upload) -> Result<ParamVector> {
        match upload {
            Upload::Rec(msg) => codec::decode(msg, &self.params.rec),
            Upload::Dense(v) => Ok(v.clone()),
        }
    }

    fn upload_bits(&self, upload: &Upload) -> u64 {
        match upload {
            Upload::Rec(msg) => codec::message_size_bits(msg, &self.params.rec),
            Upload::Dense(v) => dense_bits(v),
        }
    }

    fn supports_history(&self) -> bool {
        !self.exact
    }

    fn new_tracker(&self) -> Box<dyn PrivacyTracker> {
        Box::new(DpRecTracker::new(&self.params, self.exact))
    }
}

/// Central and worst-case local DP-REC guarantees.
///
/// Central: with replacement each round is `B` mini-steps at rate `1/N`,
/// without replacement one step at rate `B/N`. Local: the most frequently
/// sampled client's participations, unamplified.
struct DpRecTracker {
    central: AccountantState,
    participations: Vec<u64>,
    index_bits: u64,
    bits_per_message: u64,
    clip: f64,
    sigma: f64,
    n_clients: usize,
    sampling: SamplingMode,
    delta: f64,
    exact: bool,
}

impl DpRecTracker {
    fn new(p: &MechanismParams, exact: bool) -> Self {
        Self {
            central: AccountantState::new(p.orders.clone()),
            participations: vec![0; p.n_clients],
            index_bits: 0,
            bits_per_message: p.rec.partition.num_groups() as u64 * u64::from(p.rec.bits),
            clip: p.rec.clip_threshold(),
            sigma: p.rec.sigma,
            n_clients: p.n_clients,
            sampling: p.sampling,
            delta: p.delta,
            exact,
        }
    }

    fn overhead_bits(&self, bits: u64) -> u64 {
        // Exact sampling has no importance-sampling failure mass.
        if self.exact {
            u64::MAX
        } else {
            bits
        }
    }
}

/// No finite guarantee while the overhead term is not below δ.
fn epsilon_or_inf(report: Result<EpsilonReport>) -> Result<f64> {
    match report {
        Ok(r) => Ok(r.epsilon),
        Err(Error::OverheadExceedsDelta { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

impl PrivacyTracker for DpRecTracker {
    fn record_round(&mut self, participants: &[usize]) -> Result<()> {
        let n = self.n_clients as f64;
        let b = participants.len() as u64;
        self.central = match self.sampling {
            SamplingMode::WithReplacement => {
                self.central.step_n(self.clip, self.sigma, 1.0 / n, b)?
            }
            SamplingMode::WithoutReplacement => {
                self.central.step(self.clip, self.sigma, b as f64 / n)?
            }
        };
        for &c in participants {
            self.participations[c] += 1;
        }
        self.index_bits += b * self.bits_per_message;
        Ok(())
    }

    fn report(&self) -> Result<PrivacyReport> {
        let eps_central = epsilon_or_inf(
            self.central
                .epsilon_of_delta(self.delta, self.overhead_bits(self.index_bits)),
        )?;
        let worst = self.participations.iter().copied().max().unwrap_or(0);
        let local = AccountantState::new(self.central.lambdas().clone())
            .step_n(self.clip, self.sigma, 1.0, worst)?;
        let eps_local = epsilon_or_inf(local.local_epsilon_of_delta(
            self.delta,
            self.overhead_bits(worst * self.bits_per_message),
        ))?;
        Ok(PrivacyReport {
            eps_central,
            eps_local,
        })
    }

    fn steps(&self) -> u64 {
        self.central.steps()
    }
}

/// Clipped dense updates with server-side Gaussian noise `N(0, (zC/B)²I)`.
pub struct DpFedAvg {
    params: MechanismParams,
}

impl DpFedAvg {
    pub fn new(params: MechanismParams) -> Result<Self> {
        if params.fedavg_clip.is_nan()
            || params.fedavg_clip <= 0.0
            || params.noise_mult.is_nan()
            || params.noise_mult < 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "DP-FedAvg needs a positive clip and non-negative noise multiplier, got {} and {}",
                params.fedavg_clip, params.noise_mult
            )));
        }
        Ok(Self { params })
    }
}

impl UplinkMechanism for DpFedAvg {
    fn name(&self) -> &'static str {
        "dp-fedavg"
    }

    fn encode(&self, delta: &ParamVector, _ctx: &ClientContext) -> Result<Upload> {
        let clipped = clip(delta.values(), self.params.fedavg_clip);
        Ok(Upload::Dense(ParamVector::new(
            clipped,
            delta.partition().clone(),
        )?))
    }

    fn decode(&self, upload: &Upload) -> Result<ParamVector> {
        match upload {
            Upload::Dense(v) => Ok(v.clone()),
            Upload::Rec(_) => Err(Error::InvalidConfig(
                "DP-FedAvg received an index message".into(),
            )),
        }
    }

    fn finalize(&self, mean: &mut ParamVector, round: u32, uploads: usize) -> Result<()> {
        if uploads == 0 {
            return Ok(());
        }
        let std = self.params.noise_mult * self.params.fedavg_clip / uploads as f64;
        let key = StreamKey::for_purpose(self.params.master_seed, Purpose::ServerNoise, round, 0);
        for (j, v) in mean.values_mut().iter_mut().enumerate() {
            *v += std * standard_normal_at(key, j as u64);
        }
        Ok(())
    }

    fn upload_bits(&self, upload: &Upload) -> u64 {
        match upload {
            Upload::Dense(v) => dense_bits(v),
            Upload::Rec(m) => codec::message_size_bits(m, &self.params.rec),
        }
    }

    fn new_tracker(&self) -> Box<dyn PrivacyTracker> {
        Box::new(GaussTracker {
            rounds: 0,
            rate: self.params.per_round as f64 / self.params.n_clients as f64,
            noise_mult: self.params.noise_mult,
            delta: self.params.delta,
            orders: self.params.orders.clone(),
        })
    }
}

struct GaussTracker {
    rounds: u64,
    rate: f64,
    noise_mult: f64,
    delta: f64,
    orders: OrderGrid,
}

impl PrivacyTracker for GaussTracker {
    fn record_round(&mut self, _participants: &[usize]) -> Result<()> {
        self.rounds += 1;
        Ok(())
    }

    fn report(&self) -> Result<PrivacyReport> {
        let eps_central = if self.noise_mult > 0.0 {
            gauss_baseline_epsilon(
                self.rounds,
                self.rate.min(1.0),
                self.noise_mult,
                self.delta,
                &self.orders,
            )?
        } else {
            f64::INFINITY
        };
        Ok(PrivacyReport {
            eps_central,
            eps_local: f64::INFINITY,
        })
    }

    fn steps(&self) -> u64 {
        self.rounds
    }
}

/// Unprivatised federated averaging.
pub struct PlainFedAvg {
    params: MechanismParams,
}

impl UplinkMechanism for PlainFedAvg {
    fn name(&self) -> &'static str {
        "none"
    }

    fn encode(&self, delta: &ParamVector, _ctx: &ClientContext) -> Result<Upload> {
        Ok(Upload::Dense(delta.clone()))
    }

    fn decode(&self, upload: &Upload) -> Result<ParamVector> {
        match upload {
            Upload::Dense(v) => Ok(v.clone()),
            Upload::Rec(m) => codec::decode(m, &self.params.rec),
        }
    }

    fn upload_bits(&self, upload: &Upload) -> u64 {
        match upload {
            Upload::Dense(v) => dense_bits(v),
            Upload::Rec(m) => codec::message_size_bits(m, &self.params.rec),
        }
    }

    fn new_tracker(&self) -> Box<dyn PrivacyTracker> {
        Box::new(NoPrivacy { rounds: 0 })
    }
}

struct NoPrivacy {
    rounds: u64,
}

impl PrivacyTracker for NoPrivacy {
    fn record_round(&mut self, _participants: &[usize]) -> Result<()> {
        self.rounds += 1;
        Ok(())
    }

    fn report(&self) -> Result<PrivacyReport> {
        Ok(PrivacyReport {
            eps_central: f64::INFINITY,
            eps_local: f64::INFINITY,
        })
    }

    fn steps(&self) -> u64 {
        0
    }
}
