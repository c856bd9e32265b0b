//! Counter-based, stream-addressable randomness.
//!
//! Encoder and decoder must regenerate the same Gaussian candidates from a
//! `(seed, stream, index)` triple alone, on any platform, so nothing here
//! depends on a library-default generator.
//!
//! # Generator
//!
//! Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3",
//! SC'11). For a [`StreamKey`] `{ seed, stream_id }` and variate index `n`:
//!
//! ```text
//! key     = [seed as u32, (seed >> 32) as u32]
//! counter = [n as u32, (n >> 32) as u32, stream_id as u32, (stream_id >> 32) as u32]
//! out     = philox4x32_10(counter, key)
//! bits(n) = out[0] as u64 | (out[1] as u64) << 32
//! ```
//!
//! `out[2]` and `out[3]` are discarded so each variate owns a full counter
//! block and the n-th variate never depends on its neighbours.
//!
//! # Uniform and Gaussian transforms
//!
//! `uniform(n) = ((bits(n) >> 12) + 0.5) * 2^-52`, strictly inside (0, 1).
//! `standard_normal(n) = Φ⁻¹(uniform(n))` with Φ⁻¹ computed by Wichura's
//! AS 241 (PPND16) rational approximation, coefficients below. Polynomials are
//! evaluated by plain Horner steps without fused multiply-add. Only the tails
//! (`p < 0.075` or `p > 0.925`) call `ln`, whose last-bit rounding is libm
//! dependent; `testdata/normal_vectors.txt` pins the expected bit patterns.
//!
//! # Stream layout
//!
//! ```text
//! bits 63..56  purpose tag (0 = prior candidates)
//! bits 55..32  round number (24 bits)
//! bits 31..0   group index / sub-stream
//! ```
//!
//! For candidate streams the id is therefore `round << 32 | group`.

use serde::{Deserialize, Serialize};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[inline]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
    let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// The Philox4x32 block function with 10 rounds.
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    ctr = philox_round(ctr, key);
    for _ in 1..10 {
        key[0] = key[0].wrapping_add(PHILOX_W0);
        key[1] = key[1].wrapping_add(PHILOX_W1);
        ctr = philox_round(ctr, key);
    }
    ctr
}

/// What a stream is used for. Tags keep streams of different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    Candidates = 0,
    Categorical = 1,
    Shuffle = 2,
    MessageSeed = 3,
    ServerNoise = 4,
    ModelInit = 5,
    ExactSample = 6,
    ClientSampling = 7,
    ClientSeed = 8,
    Data = 9,
}

pub const MAX_ROUND: u32 = (1 << 24) - 1;

/// Packs a purpose tag, round number (24 bits) and sub-stream index.
pub fn stream_id(purpose: Purpose, round: u32, sub: u32) -> u64 {
    debug_assert!(round <= MAX_ROUND, "round {round} does not fit in 24 bits");
    (u64::from(purpose as u8) << 56) | (u64::from(round & MAX_ROUND) << 32) | u64::from(sub)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream_id: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn for_purpose(seed: u64, purpose: Purpose, round: u32, sub: u32) -> Self {
        Self::new(seed, stream_id(purpose, round, sub))
    }

    /// Raw 64 random bits at position `index`.
    pub fn bits_at(&self, index: u64) -> u64 {
        let ctr = [
            index as u32,
            (index >> 32) as u32,
            self.stream_id as u32,
            (self.stream_id >> 32) as u32,
        ];
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        let out = philox4x32_10(ctr, key);
        u64::from(out[0]) | (u64::from(out[1]) << 32)
    }

    pub fn uniform_at(&self, index: u64) -> f64 {
        bits_to_open_uniform(self.bits_at(index))
    }

    /// Integer in `[0, n)` by multiply-shift; bias is below `n / 2^64`.
    pub fn below_at(&self, index: u64, n: u64) -> u64 {
        ((u128::from(self.bits_at(index)) * u128::from(n)) >> 64) as u64
    }

    pub fn stream(&self) -> GaussianStream {
        GaussianStream {
            key: *self,
            cursor: 0,
        }
    }
}

pub fn bits_to_open_uniform(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard-normal variate at `index` of the stream `key`.
pub fn standard_normal_at(key: StreamKey, index: u64) -> f64 {
    inverse_normal_cdf(key.uniform_at(index))
}

/// The `k`-th prior candidate `sigma * z[k*dim .. (k+1)*dim]`.
pub fn gaussian_candidate(key: StreamKey, k: u64, dim: usize, sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_gaussian_candidate(key, k, sigma, &mut out);
    out
}

/// As [`gaussian_candidate`], writing into `out` (its length is the dimension).
pub fn fill_gaussian_candidate(key: StreamKey, k: u64, sigma: f64, out: &mut [f64]) {
    let base = k * out.len() as u64;
    for (j, o) in out.iter_mut().enumerate() {
        *o = sigma * standard_normal_at(key, base + j as u64);
    }
}

/// Sequential view over a stream; the n-th item equals `standard_normal_at(key, n)`.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    pub key: StreamKey,
    pub cursor: u64,
}

impl Iterator for GaussianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let z = standard_normal_at(self.key, self.cursor);
        self.cursor += 1;
        Some(z)
    }
}

/// Deterministic 64-bit seed derived from a parent seed and a path of ids.
pub fn derive_seed(parent: u64, purpose: Purpose, round: u32, sub: u32, index: u64) -> u64 {
    StreamKey::for_purpose(parent, purpose, round, sub).bits_at(index)
}

// AS 241 PPND16 coefficients, kept exactly as published.
#[allow(clippy::excessive_precision)]
const A: [f64; 8] = [
    3.387_132_872_796_366_608_0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083_0e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061_0e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561_0e3,
];
#[allow(clippy::excessive_precision)]
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_90,
    5.769_497_221_460_691_405_50,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_70e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_40e-4,
];
#[allow(clippy::excessive_precision)]
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_40,
    6.897_673_349_851_000_045_50e-1,
    1.481_039_764_274_800_745_90e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946_00e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const E: [f64; 8] = [
    6.657_904_643_501_103_777_20,
    5.463_784_911_164_114_369_90,
    1.784_826_539_917_291_335_80,
    2.965_605_718_285_048_912_30e-1,
    2.653_218_952_657_612_309_30e-2,
    1.242_660_947_388_078_438_60e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_90e-1,
    1.369_298_809_227_358_053_10e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591_00e-4,
    1.846_318_317_510_054_681_80e-5,
    1.421_511_758_316_445_888_70e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn horner(c: &[f64; 8], x: f64) -> f64 {
    let mut acc = c[7];
    for &ci in c[..7].iter().rev() {
        acc = acc * x + ci;
    }
    acc
}

/// Φ⁻¹(p) for `p` in (0, 1), relative accuracy about 1e-16.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        let r = r - 5.0;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
