//! Importance-sampling bias of the decoded output on a bounded test function.

use dprec_core::codec::{candidate_key, encode_group, RecConfig};
use dprec_core::param::GroupPartition;
use dprec_core::rng::{derive_seed, gaussian_candidate, Purpose, StreamKey};

/// `E[tanh(X)]` for `X ~ N(mu, 1)` by composite Simpson on `mu ± 12`.
pub fn exact_tanh_mean(mu: f64) -> f64 {
    let n = 200_000;
    let h = 24.0 / n as f64;
    let sum: f64 = (0..=n)
        .map(|i| {
            let z = -12.0 + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * (mu + z).tanh() * (-0.5 * z * z).exp()
        })
        .sum();
    sum * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// `|mean tanh(decoded) - E_q[tanh]|` for a 1-D target `q = N(√d2, 1)`
/// against the prior `N(0, 1)`, so that `D_2(q ‖ p) = d2`. Every trial uses
/// a fresh shared seed and a fresh private stream.
pub fn measured_bias(d2: f64, bits: u32, trials: u64) -> f64 {
    let mu = d2.sqrt();
    let cfg = RecConfig::new(1.0, 1e6, bits, GroupPartition::single(1).unwrap()).unwrap();
    let mut sum = 0.0;
    for i in 0..trials {
        let seed = derive_seed(11, Purpose::MessageSeed, 0, 0, i);
        let private = StreamKey::for_purpose(
            derive_seed(12, Purpose::ClientSeed, 0, 0, i),
            Purpose::Categorical,
            0,
            0,
        );
        let k = encode_group(&[mu], &cfg, seed, 0, private).unwrap();
        sum += gaussian_candidate(candidate_key(seed, 0), u64::from(k), 1, 1.0)[0].tanh();
    }
    (sum / trials as f64 - exact_tanh_mean(mu)).abs()
}

/// `(12 / K) · e^{d2}`.
pub fn bias_bound(d2: f64, bits: u32) -> f64 {
    12.0 / (1u64 << bits) as f64 * d2.exp()
}
