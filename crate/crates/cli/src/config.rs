//! TOML run configuration.
//!
//! Every section and key is optional and falls back to the default documented
//! on its field. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dprec_core::data::{dirichlet_partition, LocalDataset, SyntheticSpec};
use dprec_core::model::{Model, ModelKind};
use dprec_core::sim::{FederatedData, FederationConfig, RecSettings, SamplingMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub federation: FederationSection,
    pub mechanism: MechanismSection,
    pub rec: RecSection,
    pub accountant: AccountantSection,
    pub data: DataSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    /// Default 100.
    pub n_clients: usize,
    /// Clients sampled per round. Default 10.
    pub per_round: usize,
    /// Default 300.
    pub rounds: usize,
    /// Default `with-replacement`.
    pub sampling: SamplingMode,
    /// Default 1.
    pub local_epochs: usize,
    /// Default 16.
    pub batch_size: usize,
    /// Default 0.1.
    pub learning_rate: f64,
    /// Default `{ kind = "logistic-regression" }`.
    pub model: ModelKind,
    /// Rounds between metric rows; the last round is always reported. Default 1.
    pub eval_every: usize,
    /// Default 42.
    pub master_seed: u64,
    /// Replays every history-served client against the server. Default false.
    pub verify_replay: bool,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            n_clients: 100,
            per_round: 10,
            rounds: 300,
            sampling: SamplingMode::WithReplacement,
            local_epochs: 1,
            batch_size: 16,
            learning_rate: 0.1,
            model: ModelKind::LogisticRegression,
            eval_every: 1,
            master_seed: 42,
            verify_replay: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismSection {
    /// Registry name: `dp-rec`, `dp-rec-exact`, `dp-fedavg` or `none`.
    /// Default `dp-rec`.
    pub name: String,
    /// When set, `rec.clip_mult` (DP-REC) or `noise_mult` (DP-FedAvg) is
    /// calibrated to reach this ε after all rounds. Default unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_epsilon: Option<f64>,
    /// DP-FedAvg noise multiplier. Default 1.0.
    pub noise_mult: f64,
    /// DP-FedAvg clip threshold. Default 0.1.
    pub fedavg_clip: f64,
}

impl Default for MechanismSection {
    fn default() -> Self {
        Self {
            name: "dp-rec".into(),
            target_epsilon: None,
            noise_mult: 1.0,
            fedavg_clip: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecSection {
    /// Prior standard deviation. Default 0.05.
    pub sigma: f64,
    /// Clip threshold as a multiple of `sigma`. Default 1.35.
    pub clip_mult: f64,
    /// Index bits per group. Default 7.
    pub bits: u32,
    /// Splits tensors into groups of at most this many parameters. Default unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_group_len: Option<usize>,
}

impl Default for RecSection {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            clip_mult: 1.35,
            bits: 7,
            max_group_len: None,
        }
    }
}

impl From<&RecSection> for RecSettings {
    fn from(r: &RecSection) -> Self {
        RecSettings {
            sigma: r.sigma,
            clip_mult: r.clip_mult,
            bits: r.bits,
            max_group_len: r.max_group_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccountantSection {
    /// Default `1 / n_clients^1.1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Rényi orders `2..=max_order`. Default 64.
    pub max_order: u32,
}

impl Default for AccountantSection {
    fn default() -> Self {
        Self {
            delta: None,
            max_order: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Training examples before partitioning. Default 6000.
    pub n_train: usize,
    /// Default 2000.
    pub n_test: usize,
    /// Default 32.
    pub feature_dim: usize,
    /// Default 10.
    pub num_classes: usize,
    /// Scale of the class centres. Default 0.6.
    pub separation: f64,
    /// Per-feature noise around each centre. Default 1.0.
    pub noise: f64,
    /// Seed of the class centres. Default 7.
    pub task_seed: u64,
    /// Dirichlet label-skew concentration. Default 1.0.
    pub dirichlet_alpha: f64,
    /// Default 3.
    pub partition_seed: u64,
    /// Reads training examples from a CSV instead of synthesising them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_csv: Option<PathBuf>,
    /// Required together with `train_csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_train: 6000,
            n_test: 2000,
            feature_dim: 32,
            num_classes: 10,
            separation: 0.6,
            noise: 1.0,
            task_seed: 7,
            dirichlet_alpha: 1.0,
            partition_seed: 3,
            train_csv: None,
            test_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for the metrics CSV and manifest; `DPREC_OUTPUT_DIR`
    /// overrides it. Default `out`.
    pub dir: PathBuf,
    /// File stem of the outputs. Default `run`.
    pub name: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            name: "run".into(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Federation settings before any calibration.
    pub fn federation_config(&self) -> FederationConfig {
        let f = &self.federation;
        FederationConfig {
            n_clients: f.n_clients,
            per_round: f.per_round,
            rounds: f.rounds,
            sampling: f.sampling,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            model: f.model,
            mechanism: self.mechanism.name.clone(),
            rec: (&self.rec).into(),
            noise_mult: self.mechanism.noise_mult,
            fedavg_clip: self.mechanism.fedavg_clip,
            delta: self.accountant.delta,
            max_order: self.accountant.max_order,
            eval_every: f.eval_every,
            master_seed: f.master_seed,
            verify_replay: f.verify_replay,
        }
    }

    /// Federation settings with `target_epsilon` applied.
    pub fn calibrated(&self, data: &FederatedData) -> CliResult<FederationConfig> {
        let mut cfg = self.federation_config();
        cfg.validate()?;
        if let Some(eps) = self.mechanism.target_epsilon {
            match cfg.mechanism.as_str() {
                "dp-rec" | "dp-rec-exact" => {
                    let layout =
                        Model::partition(cfg.model, data.feature_dim(), data.num_classes())?;
                    cfg.calibrate_dprec(eps, &layout)?;
                }
                "dp-fedavg" => {
                    cfg.calibrate_fedavg(eps)?;
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "mechanism `{other}` has no privacy parameter to calibrate"
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn load_data(&self) -> CliResult<FederatedData> {
        let d = &self.data;
        let (train, test) = match (&d.train_csv, &d.test_csv) {
            (Some(train), Some(test)) => {
                let train = LocalDataset::read_csv(train, Some(d.num_classes))?;
                let test = LocalDataset::read_csv(test, Some(d.num_classes))?;
                (train, test)
            }
            (None, None) => {
                let spec = SyntheticSpec {
                    n_examples: d.n_train,
                    feature_dim: d.feature_dim,
                    num_classes: d.num_classes,
                    separation: d.separation,
                    noise: d.noise,
                    seed: d.task_seed,
                };
                let test = SyntheticSpec {
                    n_examples: d.n_test,
                    ..spec.clone()
                }
                .generate(2)?;
                (spec.generate(1)?, test)
            }
            _ => {
                return Err(CliError::Usage(
                    "data.train_csv and data.test_csv must be given together".into(),
                ))
            }
        };
        let clients = dirichlet_partition(
            &train,
            self.federation.n_clients,
            d.dirichlet_alpha,
            d.partition_seed,
        )?;
        Ok(FederatedData { clients, test })
    }

    pub fn csv_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.csv", self.output.name))
    }

    pub fn manifest_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.manifest.json", self.output.name))
    }
}
