//! Subcommand bodies, callable without going through argument parsing.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use dprec_core::accountant::{
    calibrate_clip, gauss_baseline_epsilon, AccountantState, EpsilonReport, OrderGrid,
    PrivacyTarget,
};
use dprec_core::codec::{self, wire, RecConfig};
use dprec_core::param::{GroupPartition, ParamVector};
use dprec_core::rng::{Purpose, StreamKey};
use dprec_core::sim::{
    default_delta, mean_estimation, run_experiment_with_counters, write_metrics_csv,
    FederationConfig, MeanEstimate, MeanEstimationConfig, RoundMetrics, SamplingMode, SimCounters,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::summary::SummaryTable;

/// Renders `key=value` lines in the given order.
pub fn record(fields: &[(&str, String)]) -> String {
    fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub config: FederationConfig,
    pub rows: Vec<RoundMetrics>,
    pub counters: SimCounters,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

impl SimulateOutcome {
    pub fn summary_record(&self) -> String {
        let last = self.rows.last().expect("at least one metrics row");
        record(&[
            ("csv", self.csv_path.display().to_string()),
            ("manifest", self.manifest_path.display().to_string()),
            ("rounds", last.round.to_string()),
            ("accuracy", last.accuracy.to_string()),
            ("eps_central", last.eps_central.to_string()),
            ("eps_local", last.eps_local.to_string()),
            ("uplink_bits", last.uplink_bits.to_string()),
            ("downlink_bits", last.downlink_bits.to_string()),
            ("clip_mult", self.config.rec.clip_mult.to_string()),
            ("noise_mult", self.config.noise_mult.to_string()),
        ])
    }
}

/// Runs a configuration in memory; `target_epsilon` is enforced on the final row.
pub fn run_config(
    cfg: &RunConfig,
) -> CliResult<(FederationConfig, Vec<RoundMetrics>, SimCounters)> {
    let data = cfg.load_data()?;
    let fed = cfg.calibrated(&data)?;
    let (rows, counters) = run_experiment_with_counters(&fed, &data)?;
    if let (Some(target), Some(last)) = (cfg.mechanism.target_epsilon, rows.last()) {
        if last.eps_central.is_nan() || last.eps_central > target {
            return Err(CliError::PrivacyInfeasible(format!(
                "final central epsilon {} exceeds the target {target}",
                last.eps_central
            )));
        }
    }
    Ok((fed, rows, counters))
}

/// Runs a configuration and writes `<name>.csv` and `<name>.manifest.json` to `out_dir`.
pub fn simulate(
    cfg: &RunConfig,
    out_dir: &Path,
    preset: Option<&str>,
) -> CliResult<SimulateOutcome> {
    let (fed, rows, counters) = run_config(cfg)?;
    fs::create_dir_all(out_dir)?;
    let csv_path = cfg.csv_path(out_dir);
    let mut bytes = Vec::new();
    write_metrics_csv(&mut bytes, &rows)?;
    fs::write(&csv_path, bytes)?;

    let manifest = json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "preset": preset,
        "master_seed": fed.master_seed,
        "config": cfg,
        "resolved": {
            "delta": fed.delta(),
            "clip_mult": fed.rec.clip_mult,
            "noise_mult": fed.noise_mult,
        },
        "counters": {
            "uplink_bits": counters.uplink_bits,
            "downlink_bits": counters.downlink_bits,
            "messages": counters.messages,
            "history_downlinks": counters.history_downlinks,
            "full_model_downlinks": counters.full_model_downlinks,
            "replay_checks": counters.replay_checks,
        },
        "csv": csv_path.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    let manifest_path = cfg.manifest_path(out_dir);
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&manifest_path, text + "\n")?;
    Ok(SimulateOutcome {
        config: fed,
        rows,
        counters,
        csv_path,
        manifest_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountQuery {
    pub rounds: u64,
    pub per_round: u64,
    pub n_clients: u64,
    pub sigma: f64,
    pub clip_mult: f64,
    pub bits_per_group: u64,
    pub groups: u64,
    /// `None` means `1 / N^1.1`.
    pub delta: Option<f64>,
    pub orders: OrderGrid,
    pub sampling: SamplingMode,
    /// Solves for the clip multiplier instead of using `clip_mult`.
    pub target_epsilon: Option<f64>,
    /// Also reports the subsampled-Gaussian baseline at this noise multiplier.
    pub baseline_noise_mult: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountReport {
    pub delta: f64,
    pub clip_mult: f64,
    pub bits_total: u64,
    pub central: EpsilonReport,
    /// Worst case of one client taking part in every round.
    pub local: EpsilonReport,
    pub baseline_epsilon: Option<f64>,
}

impl AccountQuery {
    pub fn delta(&self) -> f64 {
        self.delta
            .unwrap_or_else(|| default_delta(self.n_clients as usize))
    }

    fn central_state(&self, clip: f64) -> CliResult<AccountantState> {
        let state = AccountantState::new(self.orders.clone());
        let n = self.n_clients as f64;
        Ok(match self.sampling {
            SamplingMode::WithReplacement => {
                state.step_n(clip, self.sigma, 1.0 / n, self.rounds * self.per_round)?
            }
            SamplingMode::WithoutReplacement => state.step_n(
                clip,
                self.sigma,
                (self.per_round as f64 / n).min(1.0),
                self.rounds,
            )?,
        })
    }

    pub fn run(&self) -> CliResult<AccountReport> {
        if self.n_clients == 0 {
            return Err(CliError::Usage("--clients must be at least 1".into()));
        }
        let delta = self.delta();
        let bits_total = self.rounds * self.per_round * self.groups * self.bits_per_group;
        let clip_mult = match self.target_epsilon {
            None => self.clip_mult,
            Some(eps) => {
                if self.sampling != SamplingMode::WithReplacement {
                    return Err(CliError::Usage(
                        "clip calibration assumes sampling with replacement".into(),
                    ));
                }
                let target = PrivacyTarget::new(eps, delta)?;
                let c = calibrate_clip(
                    self.rounds,
                    self.per_round,
                    self.n_clients,
                    self.sigma,
                    bits_total,
                    target,
                    &self.orders,
                )?;
                c / self.sigma
            }
        };
        let clip = clip_mult * self.sigma;
        let central = self
            .central_state(clip)?
            .epsilon_of_delta(delta, bits_total)?;
        let local = AccountantState::new(self.orders.clone())
            .step_n(clip, self.sigma, 1.0, self.rounds)?
            .local_epsilon_of_delta(delta, self.rounds * self.groups * self.bits_per_group)?;
        let q = (self.per_round as f64 / self.n_clients as f64).min(1.0);
        let baseline_epsilon = self
            .baseline_noise_mult
            .map(|z| gauss_baseline_epsilon(self.rounds, q, z, delta, &self.orders))
            .transpose()?;
        Ok(AccountReport {
            delta,
            clip_mult,
            bits_total,
            central,
            local,
            baseline_epsilon,
        })
    }
}

impl AccountReport {
    pub fn to_record(&self) -> String {
        let mut fields = vec![
            ("delta", self.delta.to_string()),
            ("clip_mult", self.clip_mult.to_string()),
            ("bits_total", self.bits_total.to_string()),
            ("eps_central", self.central.epsilon.to_string()),
            ("lambda_central", self.central.lambda.to_string()),
            ("overhead", format!("{:e}", self.central.overhead)),
            ("eps_local", self.local.epsilon.to_string()),
            ("lambda_local", self.local.lambda.to_string()),
            ("overhead_local", format!("{:e}", self.local.overhead)),
        ];
        if let Some(e) = self.baseline_epsilon {
            fields.push(("eps_baseline", e.to_string()));
        }
        record(&fields)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub sigma: f64,
    pub clip_mult: f64,
    pub bits: u32,
    pub groups: Vec<usize>,
}

impl CodecParams {
    pub fn rec_config(&self) -> CliResult<RecConfig> {
        let partition = GroupPartition::from_lengths(&self.groups)?;
        Ok(RecConfig::new(
            self.sigma,
            self.clip_mult,
            self.bits,
            partition,
        )?)
    }
}

pub fn read_vector(path: &Path) -> CliResult<Vec<f64>> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::Usage(format!(
            "{}: {} bytes is not a whole number of little-endian f64 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_vector(path: &Path, values: &[f64]) -> CliResult<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

/// The categorical draw uses stream `(private_seed, Categorical, 0, 0)`.
pub fn codec_encode(
    params: &CodecParams,
    vector: &[f64],
    seed: u64,
    private_seed: u64,
) -> CliResult<Vec<u8>> {
    let cfg = params.rec_config()?;
    let delta = ParamVector::new(vector.to_vec(), cfg.partition.clone())?;
    let key = StreamKey::for_purpose(private_seed, Purpose::Categorical, 0, 0);
    let msg = codec::encode(&delta, &cfg, seed, key)?;
    Ok(wire::to_bytes(&msg, cfg.bits)?)
}

pub fn codec_decode(params: &CodecParams, bytes: &[u8]) -> CliResult<Vec<f64>> {
    let cfg = params.rec_config()?;
    let msg = wire::from_bytes(bytes, cfg.bits)?;
    if msg.indices.len() != cfg.partition.num_groups() {
        return Err(CliError::Usage(format!(
            "message carries {} groups but --groups lists {}",
            msg.indices.len(),
            cfg.partition.num_groups()
        )));
    }
    Ok(codec::decode(&msg, &cfg)?.values().to_vec())
}

pub fn mean_estimate(cfg: &MeanEstimationConfig) -> CliResult<MeanEstimate> {
    Ok(mean_estimation(cfg)?)
}

pub fn mean_estimate_record(cfg: &MeanEstimationConfig, est: &MeanEstimate) -> String {
    record(&[
        ("dim", cfg.dim.to_string()),
        ("samples", cfg.n_samples.to_string()),
        ("bits", cfg.bits.to_string()),
        ("mse", est.mse.to_string()),
        ("exact_mse", est.exact_mse.to_string()),
        ("bits_per_sample", est.bits_per_sample.to_string()),
    ])
}

/// Builds the table, writes `summary.csv` into `out_dir` and returns the text form.
pub fn summarize(
    paths: &[PathBuf],
    baseline: usize,
    out_dir: Option<&Path>,
) -> CliResult<(SummaryTable, String)> {
    let table = SummaryTable::from_csvs(paths, baseline)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        table.write_csv(fs::File::create(dir.join("summary.csv"))?)?;
    }
    let text = table.to_text();
    Ok((table, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query() -> AccountQuery {
        AccountQuery {
            rounds: 0,
            per_round: 10,
            n_clients: 100,
            sigma: 1.0,
            clip_mult: 1.0,
            bits_per_group: 7,
            groups: 2,
            delta: Some(0.25),
            orders: OrderGrid::new(vec![2]).unwrap(),
            sampling: SamplingMode::WithReplacement,
            target_epsilon: None,
            baseline_noise_mult: None,
        }
    }

    #[test]
    fn zero_rounds_give_half_log_inverse_delta() {
        let r = query().run().unwrap();
        assert!((r.central.epsilon - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.central.lambda, 2);
        assert_eq!(r.central.overhead, 0.0);
        assert!(r.to_record().contains("overhead=0e0\n"));
    }

    #[test]
    fn baseline_matches_the_library_call() {
        let mut q = query();
        q.rounds = 50;
        q.baseline_noise_mult = Some(1.1);
        q.delta = Some(1e-5);
        q.orders = OrderGrid::default();
        let want = gauss_baseline_epsilon(50, 0.1, 1.1, 1e-5, &OrderGrid::default()).unwrap();
        assert_eq!(q.run().unwrap().baseline_epsilon, Some(want));
    }

    #[test]
    fn record_keeps_field_order() {
        assert_eq!(
            record(&[("b", "1".into()), ("a", "2".into())]),
            "b=1\na=2\n"
        );
    }
}
