//! Rényi-divergence privacy accounting.
//!
//! Per mini-step the mechanism's output distribution is `N(phi_hat, s²I)`
//! against the prior `N(0, s²I)` with `‖phi_hat‖ ≤ C`, so every order-λ
//! divergence is bounded by `λC²/(2s²)`. With client sampling at rate `α`
//! the per-step term becomes the binomial mixture bound
//! `1/(λ-1) · ln E_{k~Bin(λ,α)} exp((k²-k)C²/(2s²))` (integer λ only).
//!
//! [`AccountantState`] accumulates, per order λ, the λ and λ+1 terms (`k_hat`,
//! `m_hat`) plus `rho = Σ exp(D_2)`, the importance-sampling failure mass.
//! The final guarantee is
//!
//! ```text
//! ε(δ) = min_λ  (λ-1)/λ · k_hat[λ] + m_hat[λ] - ln(δ - 12·rho/2^bits) / λ
//! ```
//!
//! Natural logarithms throughout; `bits` counts all communicated index bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::log_sum_exp;

/// Sorted set of integer Rényi orders, all ≥ 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderGrid(Vec<u32>);

impl OrderGrid {
    pub fn new(lambdas: Vec<u32>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidConfig("order grid is empty".into()));
        }
        if lambdas[0] < 2 || lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "orders {lambdas:?} must be strictly increasing and >= 2"
            )));
        }
        Ok(Self(lambdas))
    }

    /// Orders `2..=max`.
    pub fn up_to(max: u32) -> Result<Self> {
        Self::new((2..=max).collect())
    }

    pub fn lambdas(&self) -> &[u32] {
        &self.0
    }
}

impl Default for OrderGrid {
    fn default() -> Self {
        Self((2..=64).collect())
    }
}

fn check_scale(c: f64, sigma: f64) -> Result<()> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "clip threshold {c} must be non-negative"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma {sigma} must be positive"
        )));
    }
    Ok(())
}

/// `D_λ(N(φ,s²I) ‖ N(0,s²I))` at `‖φ‖ = C`: `λC²/(2s²)`. Symmetric in the
/// two arguments for equal variances.
pub fn renyi_gauss(lambda: f64, c: f64, sigma: f64) -> Result<f64> {
    if !(lambda > 1.0 && lambda.is_finite()) {
        return Err(Error::InvalidOrder(lambda));
    }
    check_scale(c, sigma)?;
    Ok(lambda * c * c / (2.0 * sigma * sigma))
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| (f64::from(n - i) / f64::from(i + 1)).ln())
        .sum()
}

/// Upper bound on `D_λ((1-α)p + αq ‖ p)` for the Gaussian pair, integer λ ≥ 2.
pub fn renyi_subsampled(lambda: f64, c: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(lambda >= 2.0 && lambda.fract() == 0.0 && lambda <= f64::from(u32::MAX)) {
        return Err(Error::InvalidOrder(lambda));
    }
    check_scale(c, sigma)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "sampling rate {alpha} outside [0, 1]"
        )));
    }
    if c == 0.0 || alpha == 0.0 {
        return Ok(0.0);
    }
    let lam = lambda as u32;
    let ratio = c * c / (2.0 * sigma * sigma);
    let terms: Vec<f64> = (0..=lam)
        .filter_map(|k| {
            let kf = f64::from(k);
            let rest = f64::from(lam - k);
            let ln_a = if k == 0 { 0.0 } else { kf * alpha.ln() };
            let ln_b = if k == lam {
                0.0
            } else {
                rest * (1.0 - alpha).ln()
            };
            let t = ln_binomial(lam, k) + ln_a + ln_b + (kf * kf - kf) * ratio;
            t.is_finite().then_some(t)
        })
        .collect();
    Ok((log_sum_exp(&terms) / (lambda - 1.0)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonReport {
    pub epsilon: f64,
    /// Minimising order.
    pub lambda: u32,
    /// `12 · rho / 2^bits`.
    pub overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    lambdas: OrderGrid,
    rho: f64,
    k_hat: Vec<f64>,
    m_hat: Vec<f64>,
    steps: u64,
    /// Every step so far used `α = 1`.
    unamplified: bool,
}

impl AccountantState {
    pub fn new(lambdas: OrderGrid) -> Self {
        let n = lambdas.lambdas().len();
        Self {
            lambdas,
            rho: 0.0,
            k_hat: vec![0.0; n],
            m_hat: vec![0.0; n],
            steps: 0,
            unamplified: true,
        }
    }

    pub fn lambdas(&self) -> &OrderGrid {
        &self.lambdas
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn k_hat(&self) -> &[f64] {
        &self.k_hat
    }

    pub fn m_hat(&self) -> &[f64] {
        &self.m_hat
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_unamplified(&self) -> bool {
        self.unamplified
    }

    /// One mini-step at clip `c`, prior scale `sigma`, sampling rate `alpha`.
    pub fn step(&self, c: f64, sigma: f64, alpha: f64) -> Result<Self> {
        self.step_n(c, sigma, alpha, 1)
    }

    /// `n` identical mini-steps, added as `n` times the per-step terms.
    pub fn step_n(&self, c: f64, sigma: f64, alpha: f64, n: u64) -> Result<Self> {
        let mut next = self.clone();
        let nf = n as f64;
        next.rho += nf * renyi_gauss(2.0, c, sigma)?.exp();
        for (i, &lam) in self.lambdas.lambdas().iter().enumerate() {
            next.k_hat[i] += nf * renyi_subsampled(f64::from(lam), c, sigma, alpha)?;
            next.m_hat[i] += nf * renyi_subsampled(f64::from(lam) + 1.0, c, sigma, alpha)?;
        }
        next.steps += n;
        next.unamplified &= alpha == 1.0 || n == 0;
        Ok(next)
    }

    pub fn overhead(&self, bits_total: u64) -> f64 {
        12.0 * self.rho * (-(bits_total as f64)).exp2()
    }

    /// Central ε for target `delta` given the total communicated index bits.
    pub fn epsilon_of_delta(&self, delta: f64, bits_total: u64) -> Result<EpsilonReport> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta {delta} outside (0, 1)"
            )));
        }
        let overhead = self.overhead(bits_total);
        if delta <= overhead {
            return Err(Error::OverheadExceedsDelta { delta, overhead });
        }
        let ln_slack = (delta - overhead).ln();
        let (epsilon, lambda) = self
            .lambdas
            .lambdas()
            .iter()
            .zip(self.k_hat.iter().zip(&self.m_hat))
            .map(|(&lam, (k, m))| {
                let l = f64::from(lam);
                ((l - 1.0) / l * k + m - ln_slack / l, lam)
            })
            .fold(
                (f64::INFINITY, 0),
                |best, cur| if cur.0 < best.0 { cur } else { best },
            );
        Ok(EpsilonReport {
            epsilon,
            lambda,
            overhead,
        })
    }

    /// Local guarantee: the state must have been accumulated with `α = 1`.
    pub fn local_epsilon_of_delta(&self, delta: f64, bits_total: u64) -> Result<EpsilonReport> {
        if !self.unamplified {
            return Err(Error::InvalidConfig(
                "local guarantee needs a state accumulated without subsampling (alpha = 1)".into(),
            ));
        }
        self.epsilon_of_delta(delta, bits_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyTarget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyTarget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 || !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "bad privacy target ({epsilon}, {delta})"
            )));
        }
        Ok(Self { epsilon, delta })
    }
}

/// Inputs of the sufficient-bitrate bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitrateQuery {
    /// Target bias.
    pub xi: f64,
    /// Bound on `|ζ|`.
    pub g: f64,
    /// `D_2(q ‖ p)` in nats.
    pub d2: f64,
}

impl BitrateQuery {
    /// `log2(12) + d2/ln 2 - log2(xi/G)` without the `xi ≤ G` check.
    pub fn raw_bits(&self) -> f64 {
        12f64.log2() + self.d2 / std::f64::consts::LN_2 - (self.xi / self.g).log2()
    }
}

/// Bits per group sufficient for average bias `xi` on a test function bounded by `G`.
pub fn bitrate_bound(q: BitrateQuery) -> Result<f64> {
    if !(q.xi > 0.0 && q.g > 0.0 && q.d2 >= 0.0) {
        return Err(Error::InvalidConfig(format!("bad bitrate query {q:?}")));
    }
    if q.xi > q.g {
        return Err(Error::VacuousBound { xi: q.xi, g: q.g });
    }
    Ok(q.raw_bits())
}

fn epsilon_or_inf(state: Result<AccountantState>, delta: f64, bits_total: u64) -> Result<f64> {
    match state?.epsilon_of_delta(delta, bits_total) {
        Ok(r) => Ok(r.epsilon),
        Err(Error::OverheadExceedsDelta { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Largest clip threshold whose central ε after `rounds·per_round` mini-steps
/// at rate `1/n_clients` stays within `target`.
pub fn calibrate_clip(
    rounds: u64,
    per_round: u64,
    n_clients: u64,
    sigma: f64,
    bits_total: u64,
    target: PrivacyTarget,
    lambdas: &OrderGrid,
) -> Result<f64> {
    if n_clients == 0 {
        return Err(Error::InvalidConfig("n_clients must be at least 1".into()));
    }
    let steps = rounds * per_round;
    let alpha = 1.0 / n_clients as f64;
    let eps = |c: f64| {
        epsilon_or_inf(
            AccountantState::new(lambdas.clone()).step_n(c, sigma, alpha, steps),
            target.delta,
            bits_total,
        )
    };
    let at_zero = eps(0.0)?;
    if at_zero > target.epsilon {
        return Err(Error::Infeasible(format!(
            "epsilon {at_zero} at zero clip already exceeds target {}",
            target.epsilon
        )));
    }
    let mut lo = 0.0;
    let mut hi = 10.0 * sigma;
    let mut widenings = 0;
    while eps(hi)? <= target.epsilon {
        lo = hi;
        hi *= 2.0;
        widenings += 1;
        if widenings > 64 {
            return Err(Error::Infeasible(
                "epsilon does not grow with the clip threshold".into(),
            ));
        }
    }
    while hi - lo > 1e-7 * hi {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? <= target.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Rényi-DP ε of the subsampled Gaussian mechanism used by DP-FedAvg.
pub fn gauss_baseline_epsilon(
    rounds: u64,
    q_rate: f64,
    noise_mult: f64,
    delta: f64,
    lambdas: &OrderGrid,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "delta {delta} outside (0, 1)"
        )));
    }
    lambdas
        .lambdas()
        .iter()
        .try_fold(f64::INFINITY, |best, &lam| {
            let l = f64::from(lam);
            let rdp = if rounds == 0 {
                0.0
            } else {
                rounds as f64 * renyi_subsampled(l, 1.0, noise_mult, q_rate)?
            };
            Ok(best.min(rdp + (1.0 / delta).ln() / (l - 1.0)))
        })
}

/// Smallest noise multiplier meeting `target` for the DP-FedAvg baseline.
pub fn calibrate_noise_mult(
    rounds: u64,
    q_rate: f64,
    target: PrivacyTarget,
    lambdas: &OrderGrid,
) -> Result<f64> {
    let eps = |z: f64| gauss_baseline_epsilon(rounds, q_rate, z, target.delta, lambdas);
    let floor = eps(1e6)?;
    if floor > target.epsilon {
        return Err(Error::Infeasible(format!(
            "epsilon {floor} even without signal exceeds {}",
            target.epsilon
        )));
    }
    let mut hi = 1.0;
    while eps(hi)? > target.epsilon {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-7 * hi {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? > target.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
