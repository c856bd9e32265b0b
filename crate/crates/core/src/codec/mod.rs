//! Relative entropy coding of clipped model updates.
//!
//! The client clips its update `phi` to norm `C`, regenerates `K = 2^bits`
//! candidates from the shared prior `N(0, sigma^2 I)` under a seed it picks
//! itself, and samples one candidate index with probability proportional to
//! `N(candidate | phi_hat, sigma^2 I) / N(candidate | 0, sigma^2 I)`. The
//! categorical draw uses a client-private stream that never touches the
//! shared seed. The server regenerates the chosen candidate from
//! `(seed, group, index)`.
//!
//! Each group of the partition is compressed independently with its own
//! candidate stream, so a message carries one index per group.

pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::log_sum_exp;
use crate::param::{dot, l2_norm, GroupPartition, ParamVector};
use crate::rng::{fill_gaussian_candidate, gaussian_candidate, Purpose, StreamKey};

pub const MAX_BITS: u32 = 32;
pub const SEED_BITS: u64 = 64;
/// Default ceiling on `K * dim` standard-normal draws per group encode.
pub const DEFAULT_COMPUTE_BUDGET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecConfig {
    /// Prior standard deviation.
    pub sigma: f64,
    /// Clip threshold as a multiple of `sigma`.
    pub clip_mult: f64,
    /// Index width per group; `K = 2^bits`.
    pub bits: u32,
    pub partition: GroupPartition,
    pub compute_budget: u64,
}

impl RecConfig {
    pub fn new(sigma: f64, clip_mult: f64, bits: u32, partition: GroupPartition) -> Result<Self> {
        let cfg = Self {
            sigma,
            clip_mult,
            bits,
            partition,
            compute_budget: DEFAULT_COMPUTE_BUDGET,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.clip_mult > 0.0 && self.clip_mult.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "clip multiplier must be positive, got {}",
                self.clip_mult
            )));
        }
        if self.bits > MAX_BITS {
            return Err(Error::InvalidConfig(format!(
                "bits {} exceeds {MAX_BITS}",
                self.bits
            )));
        }
        Ok(())
    }

    pub fn clip_threshold(&self) -> f64 {
        self.clip_mult * self.sigma
    }

    pub fn num_candidates(&self) -> u64 {
        1u64 << self.bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecMessage {
    pub seed: u64,
    pub indices: Vec<u32>,
}

/// Log importance weights and their normalised probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub log_alpha: Vec<f64>,
    pub pi: Vec<f64>,
}

impl ImportanceWeights {
    pub fn from_log_alpha(log_alpha: Vec<f64>) -> Self {
        let lse = log_sum_exp(&log_alpha);
        let pi = log_alpha.iter().map(|l| (l - lse).exp()).collect();
        Self { log_alpha, pi }
    }
}

/// Scales `phi` down to norm `c` when it is longer; identity otherwise.
pub fn clip(phi: &[f64], c: f64) -> Vec<f64> {
    let norm = l2_norm(phi);
    if norm <= c || norm == 0.0 {
        return phi.to_vec();
    }
    let s = c / norm;
    phi.iter().map(|x| x * s).collect()
}

/// `ln N(candidate | phi_hat, s²I) - ln N(candidate | 0, s²I)` in closed form.
pub fn log_weight(phi_hat: &[f64], candidate: &[f64], sigma: f64) -> f64 {
    let sq = dot(phi_hat, phi_hat);
    if sq == 0.0 {
        return 0.0;
    }
    (dot(phi_hat, candidate) - 0.5 * sq) / (sigma * sigma)
}

/// Candidate stream for one group under a message seed.
pub fn candidate_key(seed: u64, group: usize) -> StreamKey {
    StreamKey::for_purpose(seed, Purpose::Candidates, 0, group as u32)
}

fn check_budget(cfg: &RecConfig, dim: usize) -> Result<()> {
    let k = cfg.num_candidates();
    if k.checked_mul(dim as u64)
        .is_none_or(|n| n > cfg.compute_budget)
    {
        return Err(Error::BudgetExceeded {
            candidates: k,
            dim,
            budget: cfg.compute_budget,
        });
    }
    Ok(())
}

/// Log weights of every candidate of `group` (one streaming pass).
pub fn group_log_weights(
    phi_hat: &[f64],
    cfg: &RecConfig,
    seed: u64,
    group: usize,
) -> Result<Vec<f64>> {
    check_budget(cfg, phi_hat.len())?;
    let key = candidate_key(seed, group);
    let mut buf = vec![0.0; phi_hat.len()];
    Ok((0..cfg.num_candidates())
        .map(|k| {
            fill_gaussian_candidate(key, k, cfg.sigma, &mut buf);
            log_weight(phi_hat, &buf, cfg.sigma)
        })
        .collect())
}

pub fn importance_weights(
    phi_hat: &[f64],
    cfg: &RecConfig,
    seed: u64,
    group: usize,
) -> Result<ImportanceWeights> {
    Ok(ImportanceWeights::from_log_alpha(group_log_weights(
        phi_hat, cfg, seed, group,
    )?))
}

/// Inverse-CDF draw from `softmax(log_alpha)` with a uniform `u` in (0, 1).
pub fn sample_index(log_alpha: &[f64], u: f64) -> usize {
    let lse = log_sum_exp(log_alpha);
    let mut cdf = 0.0;
    let mut last_positive = 0;
    for (k, l) in log_alpha.iter().enumerate() {
        let p = (l - lse).exp();
        if p > 0.0 {
            last_positive = k;
        }
        cdf += p;
        if cdf > u {
            return k;
        }
    }
    // Rounding left the total just below u.
    last_positive
}

/// Picks the candidate index for one (already clipped) group.
///
/// Pass one regenerates the candidates and records their log weights; pass
/// two walks the normalised CDF against one uniform taken from
/// `private_key` at position `group`. Candidates are never held in memory
/// together.
pub fn encode_group(
    phi: &[f64],
    cfg: &RecConfig,
    seed: u64,
    group: usize,
    private_key: StreamKey,
) -> Result<u32> {
    check_budget(cfg, phi.len())?;
    if cfg.bits == 0 {
        return Ok(0);
    }
    let log_alpha = group_log_weights(phi, cfg, seed, group)?;
    let u = private_key.uniform_at(group as u64);
    Ok(sample_index(&log_alpha, u) as u32)
}

/// Clips `delta` globally to `C` and encodes every group independently.
pub fn encode(
    delta: &ParamVector,
    cfg: &RecConfig,
    seed: u64,
    private_key: StreamKey,
) -> Result<RecMessage> {
    cfg.validate()?;
    if *delta.partition() != cfg.partition {
        return Err(Error::Shape(
            "update partition differs from the codec partition".into(),
        ));
    }
    let clipped = ParamVector::new(
        clip(delta.values(), cfg.clip_threshold()),
        cfg.partition.clone(),
    )?;
    let indices = (0..cfg.partition.num_groups())
        .map(|g| encode_group(clipped.group(g), cfg, seed, g, private_key))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecMessage { seed, indices })
}

/// Regenerates the selected candidate of every group.
pub fn decode(msg: &RecMessage, cfg: &RecConfig) -> Result<ParamVector> {
    let groups = cfg.partition.groups();
    if msg.indices.len() != groups.len() {
        return Err(Error::MalformedMessage {
            offset: wire::HEADER_BYTES,
            reason: format!("{} indices for {} groups", msg.indices.len(), groups.len()),
        });
    }
    let k = cfg.num_candidates();
    let mut out = Vec::with_capacity(cfg.partition.total_len());
    for (g, (&index, group)) in msg.indices.iter().zip(groups).enumerate() {
        if u64::from(index) >= k {
            return Err(Error::MalformedMessage {
                offset: wire::HEADER_BYTES + (g * cfg.bits as usize) / 8,
                reason: format!(
                    "index {index} of group {g} does not fit in {} bits",
                    cfg.bits
                ),
            });
        }
        out.extend(gaussian_candidate(
            candidate_key(msg.seed, g),
            u64::from(index),
            group.len,
            cfg.sigma,
        ));
    }
    ParamVector::new(out, cfg.partition.clone())
}

/// Seed plus one `bits`-wide index per group.
pub fn message_size_bits(msg: &RecMessage, cfg: &RecConfig) -> u64 {
    SEED_BITS + msg.indices.len() as u64 * u64::from(cfg.bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bits: u32, lens: &[usize]) -> RecConfig {
        RecConfig::new(1.0, 1.0, bits, GroupPartition::from_lengths(lens).unwrap()).unwrap()
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip(&[2.0, 0.0], 1.0), vec![1.0, 0.0]);
        assert_eq!(clip(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        let c = clip(&[3.0, 4.0], 2.5);
        assert!((l2_norm(&c) - 2.5).abs() < 1e-15);
        assert!((c[0] / c[1] - 0.75).abs() < 1e-15);
    }

    fn log_normal_pdf(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
        x.iter()
            .zip(mean)
            .map(|(xi, mi)| {
                -0.5 * ((xi - mi) / sigma).powi(2)
                    - sigma.ln()
                    - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()
    }

    #[test]
    fn log_weight_matches_density_ratio() {
        assert_eq!(log_weight(&[0.0, 0.0], &[1.0, -2.0], 0.3), 0.0);
        for (phi, cand, want) in [(1.0, 1.0, 0.5), (1.0, 0.5, 0.0)] {
            let oracle =
                log_normal_pdf(&[cand], &[phi], 1.0) - log_normal_pdf(&[cand], &[0.0], 1.0);
            assert!((oracle - want).abs() < 1e-12);
            assert!((log_weight(&[phi], &[cand], 1.0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let base = vec![0.3, -1.2, 2.0, 0.0];
        let w0 = ImportanceWeights::from_log_alpha(base.clone());
        for off in [1e4, -1e4] {
            let w = ImportanceWeights::from_log_alpha(base.iter().map(|x| x + off).collect());
            for (a, b) in w.pi.iter().zip(&w0.pi) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!((w0.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_bits_always_picks_zero() {
        let c = cfg(0, &[3]);
        for s in 0..20 {
            assert_eq!(
                encode_group(&[0.5, -0.2, 0.1], &c, s, 0, StreamKey::new(s, 1)).unwrap(),
                0
            );
        }
    }

    #[test]
    fn budget_is_enforced() {
        let mut c = cfg(10, &[100]);
        c.compute_budget = 1000;
        assert!(matches!(
            encode_group(&[0.0; 100], &c, 0, 0, StreamKey::new(0, 0)),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn message_size_arithmetic() {
        let msg = |m: usize| RecMessage {
            seed: 0,
            indices: vec![0; m],
        };
        assert_eq!(message_size_bits(&msg(5), &cfg(7, &[1; 5])), 99);
        assert_eq!(message_size_bits(&msg(1), &cfg(0, &[1])), 64);
        assert_eq!(message_size_bits(&msg(6), &cfg(5, &[1; 6])), 94);
    }

    #[test]
    fn decode_rejects_out_of_range_index() {
        let c = cfg(2, &[2]);
        let msg = RecMessage {
            seed: 1,
            indices: vec![4],
        };
        assert!(matches!(
            decode(&msg, &c),
            Err(Error::MalformedMessage { .. })
        ));
    }

    #[test]
    fn zero_sigma_decodes_to_zero() {
        let mut c = cfg(3, &[4, 2]);
        c.sigma = 0.0;
        let v = decode(
            &RecMessage {
                seed: 9,
                indices: vec![5, 7],
            },
            &c,
        )
        .unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_bits_decodes_candidate_zero() {
        let c = cfg(0, &[3, 2]);
        let v = decode(
            &RecMessage {
                seed: 4,
                indices: vec![0, 0],
            },
            &c,
        )
        .unwrap();
        assert_eq!(
            v.group(0),
            gaussian_candidate(candidate_key(4, 0), 0, 3, 1.0).as_slice()
        );
        assert_eq!(
            v.group(1),
            gaussian_candidate(candidate_key(4, 1), 0, 2, 1.0).as_slice()
        );
    }

    #[test]
    fn sample_index_walks_cdf() {
        let la = [0.0f64.ln(), 0.5f64.ln(), 0.5f64.ln()];
        assert_eq!(sample_index(&la, 0.1), 1);
        assert_eq!(sample_index(&la, 0.6), 2);
        assert_eq!(sample_index(&la, 1.0 - 1e-17), 2);
    }
}
