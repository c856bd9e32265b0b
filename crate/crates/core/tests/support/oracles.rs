//! Numerical oracles shared by the accountant tests and the acceptance suite.

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln ∫ exp(l(x)) dx` by composite Simpson on `[lo, hi]`, in log space.
pub fn log_integral(l: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| l(lo + i as f64 * h)).collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = vals
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * (v - m).exp()
        })
        .sum();
    m + (sum * h / 3.0).ln()
}

pub fn ln_normal(x: f64, mu: f64, s: f64) -> f64 {
    -0.5 * ((x - mu) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Numerical `D_λ(N(c, σ²) ‖ N(0, σ²))` and the reverse direction.
pub fn numeric_gauss(lambda: f64, c: f64, sigma: f64) -> (f64, f64) {
    let (lo, hi) = (-40.0 * sigma, 40.0 * sigma + lambda * c);
    let pq = log_integral(
        |x| lambda * ln_normal(x, c, sigma) + (1.0 - lambda) * ln_normal(x, 0.0, sigma),
        lo,
        hi,
        200_000,
    );
    let qp = log_integral(
        |x| lambda * ln_normal(x, 0.0, sigma) + (1.0 - lambda) * ln_normal(x, c, sigma),
        lo - lambda * c,
        hi,
        200_000,
    );
    (pq / (lambda - 1.0), qp / (lambda - 1.0))
}

/// `ln((1-α) p(x) + α q(x)) - ln p(x)` for `p = N(0, 1)`, `q = N(c, 1)`.
pub fn ln_mixture_ratio(x: f64, c: f64, alpha: f64) -> f64 {
    let ln_keep = if alpha < 1.0 {
        (1.0 - alpha).ln()
    } else {
        f64::NEG_INFINITY
    };
    log_add_exp(ln_keep, alpha.ln() + c * x - 0.5 * c * c)
}

/// Numerical `D_λ(mixture ‖ p)` and `D_λ(p ‖ mixture)` for unit variance.
pub fn numeric_mixture(lambda: f64, c: f64, alpha: f64) -> (f64, f64) {
    let (lo, hi, n) = (-40.0, 40.0 + lambda * c, 200_000);
    let fwd = log_integral(
        |x| ln_normal(x, 0.0, 1.0) + lambda * ln_mixture_ratio(x, c, alpha),
        lo,
        hi,
        n,
    );
    let rev = log_integral(
        |x| ln_normal(x, 0.0, 1.0) + (1.0 - lambda) * ln_mixture_ratio(x, c, alpha),
        lo,
        hi,
        n,
    );
    (fwd / (lambda - 1.0), rev / (lambda - 1.0))
}

// (C, sigma, alpha, steps, delta, bits_total, epsilon) from a separate
// scripted implementation of the accounting recursion over orders 2..=64.
pub const INDEPENDENT: [(f64, f64, f64, u64, f64, u64, f64); 20] = [
    (0.5, 1.0, 0.01, 1000, 1e-05, 56000, 1.1770699254642691),
    (
        0.02385162906218289,
        0.05,
        0.1,
        86,
        0.0008313013025373283,
        516,
        2.6246989323687107,
    ),
    (
        0.012590770249723349,
        0.01,
        0.5,
        3462,
        0.0021191100910100424,
        58854,
        6067.146266133375,
    ),
    (
        0.08002258306702525,
        0.05,
        0.1,
        476,
        0.00856982257670539,
        4760,
        327.12711610324965,
    ),
    (
        0.019824956905165995,
        0.01,
        0.05,
        548,
        1.2815182673152767e-06,
        6576,
        828.8415733017497,
    ),
    (
        0.38263606744097234,
        0.3,
        0.01,
        193,
        1.8740145300986005e-08,
        965,
        4.946573645627434,
    ),
    (
        2.3380665277669173,
        2.5,
        0.01,
        105,
        7.512733003781481e-05,
        1995,
        1.2414445413060948,
    ),
    (
        0.2092360527609044,
        1.0,
        1.0,
        568,
        0.0014202445454951785,
        3408,
        53.01223158388849,
    ),
    (
        1.1608251286477953,
        1.0,
        0.01,
        3878,
        1.2889274859014773e-08,
        38780,
        9.711697731429968,
    ),
    (
        1.542783635712799,
        2.5,
        0.01,
        3112,
        6.33380200671191e-08,
        28008,
        3.1695728547559927,
    ),
    (
        0.006798156668342015,
        0.01,
        0.001,
        3158,
        1.2155950361111955e-05,
        50528,
        0.4575192908703359,
    ),
    (
        0.044247521744544216,
        0.05,
        1.0,
        3725,
        6.2425279178321e-06,
        18625,
        5840.364740662351,
    ),
    (
        0.1475343802000438,
        0.3,
        1.0,
        4770,
        6.452649284408272e-07,
        57240,
        2314.364496578531,
    ),
    (
        1.2917408527656469,
        1.0,
        0.1,
        4171,
        0.001132194087743797,
        54223,
        580.7080532960622,
    ),
    (
        0.014476038811471907,
        0.01,
        0.1,
        4942,
        0.005271501374676565,
        84014,
        1525.6011627058174,
    ),
    (
        1.157239461774954,
        1.0,
        0.01,
        924,
        2.562272143209732e-06,
        14784,
        4.413221449903474,
    ),
    (
        0.40169178751947093,
        0.3,
        0.001,
        706,
        2.8753823628535105e-05,
        4942,
        1.768849779907337,
    ),
    (
        0.00445634261305581,
        0.01,
        0.5,
        1450,
        6.069598004760699e-07,
        21750,
        168.4838600119657,
    ),
    (
        0.017637125846425572,
        0.01,
        0.01,
        2412,
        0.00010639124412555941,
        19296,
        28.268511419304055,
    ),
    (
        4.9301571786828555,
        2.5,
        0.1,
        414,
        2.902145025512586e-07,
        6624,
        1077.6975918578592,
    ),
];
