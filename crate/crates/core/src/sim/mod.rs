//! Round-based federation simulator.

pub mod federation;
pub mod history;
pub mod mean_estimation;
pub mod mechanism;
pub mod sampling;

pub use federation::{
    default_delta, run_experiment, run_experiment_with_counters, write_metrics_csv, FederatedData,
    FederationConfig, RecSettings, RoundMetrics, SimCounters, Simulation, METRICS_HEADER,
};
pub use history::{
    client_reconstruct, downlink_payload, ClientHistory, ClientSnapshot, Downlink, HistoryEntry,
};
pub use mean_estimation::{mean_estimation, MeanEstimate, MeanEstimationConfig, PriorMean};
pub use mechanism::{MechanismRegistry, PrivacyReport, PrivacyTracker, UplinkMechanism, Upload};
pub use sampling::{sample_clients, SamplingMode};
