//! Private mean estimation of unit vectors with one DP-REC message each.
//!
//! Samples are `x_i = normalise(u + spread · g_i / √d)` with `u = 1/√d · 1`
//! and `g_i ~ N(0, I)`. Each sample sends `x_i - m` through a single-group
//! codec with prior `N(0, σ²I)` and a fresh client-chosen seed; the server
//! decodes `m + candidate` and averages. No clipping is applied.

use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode_group, RecConfig, RecMessage};
use crate::error::{Error, Result};
use crate::param::{l2_norm, GroupPartition};
use crate::rng::{derive_seed, standard_normal_at, Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMean {
    Zero,
    /// The population direction `1/√d · 1`.
    Informed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanEstimationConfig {
    pub dim: usize,
    pub n_samples: usize,
    pub bits: u32,
    pub prior: PriorMean,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "half")]
    pub spread: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    /// `‖decoded mean - sample mean‖²`.
    pub mse: f64,
    /// Same error when each sample sends an exact draw from `N(x_i, σ²I)`.
    pub exact_mse: f64,
    pub bits_per_sample: u64,
}

impl MeanEstimationConfig {
    pub fn sample(&self, i: usize) -> Vec<f64> {
        let key = StreamKey::for_purpose(self.seed, Purpose::Data, 0, i as u32);
        let d = self.dim as f64;
        let mut x: Vec<f64> = (0..self.dim)
            .map(|j| (1.0 + self.spread * standard_normal_at(key, j as u64)) / d.sqrt())
            .collect();
        let norm = l2_norm(&x);
        x.iter_mut().for_each(|v| *v /= norm);
        x
    }

    pub fn prior_mean(&self) -> Vec<f64> {
        match self.prior {
            PriorMean::Zero => vec![0.0; self.dim],
            PriorMean::Informed => vec![1.0 / (self.dim as f64).sqrt(); self.dim],
        }
    }
}

pub fn mean_estimation(cfg: &MeanEstimationConfig) -> Result<MeanEstimate> {
    if cfg.dim == 0 || cfg.n_samples == 0 || cfg.bits == 0 {
        return Err(Error::InvalidConfig(
            "dim, n_samples and bits must all be at least 1".into(),
        ));
    }
    if !(cfg.spread >= 0.0 && cfg.spread.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "spread {} must be finite and non-negative",
            cfg.spread
        )));
    }
    let rec = RecConfig::new(cfg.sigma, 1.0, cfg.bits, GroupPartition::single(cfg.dim)?)?;
    let m = cfg.prior_mean();
    let mut truth = vec![0.0; cfg.dim];
    let mut decoded_sum = vec![0.0; cfg.dim];
    let mut exact_sum = vec![0.0; cfg.dim];
    for i in 0..cfg.n_samples {
        let x = cfg.sample(i);
        let phi: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a - b).collect();
        let private_seed = derive_seed(cfg.seed, Purpose::ClientSeed, 0, i as u32, 0);
        let seed = derive_seed(private_seed, Purpose::MessageSeed, 0, 0, 0);
        let private_key = StreamKey::for_purpose(private_seed, Purpose::Categorical, 0, 0);
        let index = encode_group(&phi, &rec, seed, 0, private_key)?;
        let candidate = decode(
            &RecMessage {
                seed,
                indices: vec![index],
            },
            &rec,
        )?;
        let exact_key = StreamKey::for_purpose(private_seed, Purpose::ExactSample, 0, 0);
        for j in 0..cfg.dim {
            truth[j] += x[j];
            decoded_sum[j] += m[j] + candidate.values()[j];
            exact_sum[j] += x[j] + cfg.sigma * standard_normal_at(exact_key, j as u64);
        }
    }
    let n = cfg.n_samples as f64;
    let sq = |est: &[f64]| {
        est.iter()
            .zip(&truth)
            .map(|(e, t)| ((e - t) / n).powi(2))
            .sum::<f64>()
    };
    Ok(MeanEstimate {
        mse: sq(&decoded_sum),
        exact_mse: sq(&exact_sum),
        bits_per_sample: crate::codec::SEED_BITS + u64::from(cfg.bits),
    })
}
