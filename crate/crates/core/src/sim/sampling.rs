use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    WithReplacement,
    WithoutReplacement,
}

/// Draws `b` client ids out of `n`, returned in ascending order.
///
/// With replacement the ids are i.i.d. uniform and may repeat. Without
/// replacement a partial Fisher-Yates shuffle picks `b` distinct ids.
pub fn sample_clients(
    n: usize,
    b: usize,
    mode: SamplingMode,
    round_key: StreamKey,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidConfig("federation has no clients".into()));
    }
    let mut ids = match mode {
        SamplingMode::WithReplacement => (0..b)
            .map(|i| round_key.below_at(i as u64, n as u64) as usize)
            .collect(),
        SamplingMode::WithoutReplacement => {
            if b > n {
                return Err(Error::InvalidConfig(format!(
                    "cannot sample {b} of {n} clients without replacement"
                )));
            }
            let mut pool: Vec<usize> = (0..n).collect();
            for i in 0..b {
                let j = i + round_key.below_at(i as u64, (n - i) as u64) as usize;
                pool.swap(i, j);
            }
            pool.truncate(b);
            pool
        }
    };
    ids.sort_unstable();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_without_replacement() {
        let ids =
            sample_clients(7, 7, SamplingMode::WithoutReplacement, StreamKey::new(1, 2)).unwrap();
        assert_eq!(ids, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_without_replacement() {
        assert!(
            sample_clients(3, 4, SamplingMode::WithoutReplacement, StreamKey::new(0, 0)).is_err()
        );
    }

    #[test]
    fn distinct_without_replacement() {
        for r in 0..50 {
            let ids = sample_clients(
                20,
                10,
                SamplingMode::WithoutReplacement,
                StreamKey::new(3, r),
            )
            .unwrap();
            assert!(ids.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn deterministic() {
        let k = StreamKey::new(9, 9);
        assert_eq!(
            sample_clients(100, 10, SamplingMode::WithReplacement, k).unwrap(),
            sample_clients(100, 10, SamplingMode::WithReplacement, k).unwrap()
        );
    }

    #[test]
    fn with_replacement_is_balanced() {
        let ids = sample_clients(
            2,
            100_000,
            SamplingMode::WithReplacement,
            StreamKey::new(5, 0),
        )
        .unwrap();
        let ones = ids.iter().filter(|&&i| i == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 0.01, "{ones}");
    }
}
