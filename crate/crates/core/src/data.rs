//! Datasets, a seeded synthetic generator and non-i.i.d. client partitioning.
//!
//! # CSV format
//!
//! [`LocalDataset::read_csv`] reads headerless rows `label,x_1,...,x_F`
//! where `label` is a non-negative integer class and the features are
//! decimal reals. Every row must have the same width.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl LocalDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig("dataset is empty".into()));
        }
        if feature_dim == 0 || features.len() != labels.len() * feature_dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} examples of dimension {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.feature_dim, self.num_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Loads `label,x_1,...,x_F` rows. `num_classes` defaults to `max label + 1`.
    pub fn read_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::InvalidConfig(format!(
                    "row {} has no features",
                    line + 1
                )));
            }
            if *width.get_or_insert(record.len()) != record.len() {
                return Err(Error::Shape(format!(
                    "row {} has {} columns",
                    line + 1,
                    record.len()
                )));
            }
            let parse_err =
                |what: &str| Error::InvalidConfig(format!("row {}: bad {what}", line + 1));
            labels.push(record[0].parse::<usize>().map_err(|_| parse_err("label"))?);
            for field in record.iter().skip(1) {
                features.push(field.parse::<f64>().map_err(|_| parse_err("feature"))?);
            }
        }
        let dim = width.map_or(0, |w| w - 1);
        let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Self::new(features, labels, dim, classes)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        for i in 0..self.len() {
            let mut row = vec![self.labels[i].to_string()];
            row.extend(self.row(i).iter().map(|v| format!("{v:?}")));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Gaussian class clusters around random centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Scale of the class centres; larger is easier.
    pub separation: f64,
    /// Per-feature standard deviation around each centre.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Draws a class-balanced dataset. Centres depend only on `seed`, so a
    /// train and a test set generated with the same seed and different
    /// `sample_seed` share the same task.
    pub fn generate(&self, sample_seed: u64) -> Result<LocalDataset> {
        if self.num_classes < 2 || self.feature_dim == 0 || self.n_examples < self.num_classes {
            return Err(Error::InvalidConfig(format!(
                "degenerate synthetic dataset {self:?}"
            )));
        }
        let mut centre_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centres: Vec<f64> = (0..self.num_classes * self.feature_dim)
            .map(|_| self.separation * centre_rng.sample::<f64, _>(StandardNormal))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let mut labels: Vec<usize> = (0..self.n_examples).map(|i| i % self.num_classes).collect();
        labels.shuffle(&mut rng);
        let mut features = Vec::with_capacity(self.n_examples * self.feature_dim);
        for &l in &labels {
            let centre = &centres[l * self.feature_dim..(l + 1) * self.feature_dim];
            features.extend(
                centre
                    .iter()
                    .map(|c| c + self.noise * rng.sample::<f64, _>(StandardNormal)),
            );
        }
        LocalDataset::new(features, labels, self.feature_dim, self.num_classes)
    }
}

/// Two classes split by the hyperplane `x_0 = 0` with a margin.
pub fn separable_two_class(n: usize, dim: usize, margin: f64, seed: u64) -> Result<LocalDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        features.push(sign * (margin + rng.random::<f64>()));
        features.extend((1..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0));
        labels.push(label);
    }
    LocalDataset::new(features, labels, dim, 2)
}

/// Splits `dataset` over `n_clients` with Dirichlet(`concentration`) label skew.
///
/// Each client draws label proportions from a symmetric Dirichlet. Every
/// class is then shuffled and handed out to clients in proportion to the
/// clients' weights for that class; fractional remainders go to the largest
/// residual quotas (ties to the lower client index). A client left empty takes
/// one example from the currently largest client.
pub fn dirichlet_partition(
    dataset: &LocalDataset,
    n_clients: usize,
    concentration: f64,
    seed: u64,
) -> Result<Vec<LocalDataset>> {
    if n_clients == 0 {
        return Err(Error::InvalidConfig("need at least one client".into()));
    }
    if n_clients > dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_clients} clients but only {} examples",
            dataset.len()
        )));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "concentration {concentration} must be positive"
        )));
    }
    let num_classes = dataset.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let proportions: Vec<Vec<f64>> = (0..n_clients)
        .map(|_| {
            let mut p: Vec<f64> = (0..num_classes).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = p.iter().sum();
            if total > 0.0 && total.is_finite() {
                p.iter_mut().for_each(|x| *x /= total);
            } else {
                p.iter_mut().for_each(|x| *x = 0.0);
                p[rng.random_range(0..num_classes)] = 1.0;
            }
            p
        })
        .collect();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }

    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let weights: Vec<f64> = proportions.iter().map(|p| p[class]).collect();
        let total_w: f64 = weights.iter().sum();
        let quotas: Vec<f64> = if total_w > 0.0 {
            weights
                .iter()
                .map(|w| members.len() as f64 * w / total_w)
                .collect()
        } else {
            vec![members.len() as f64 / n_clients as f64; n_clients]
        };
        let counts = apportion(&quotas, members.len());
        let mut cursor = 0;
        for (client, &c) in counts.iter().enumerate() {
            assignment[client].extend_from_slice(&members[cursor..cursor + c]);
            cursor += c;
        }
    }

    while let Some(empty) = assignment.iter().position(|a| a.is_empty()) {
        let donor = (0..n_clients)
            .max_by_key(|&i| (assignment[i].len(), std::cmp::Reverse(i)))
            .unwrap();
        let moved = assignment[donor].pop().expect("donor is non-empty");
        assignment[empty].push(moved);
    }

    assignment.iter().map(|idx| dataset.subset(idx)).collect()
}

/// Integer counts summing to `total`: floors of `quotas`, then one extra to
/// each of the largest fractional residuals (lower index wins ties).
fn apportion(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: usize, classes: usize) -> LocalDataset {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
        LocalDataset::new(features, labels, 1, classes).unwrap()
    }

    #[test]
    fn single_client_gets_everything() {
        let d = balanced(100, 4);
        let parts = dirichlet_partition(&d, 1, 0.3, 7).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 100);
    }

    #[test]
    fn too_many_clients_is_invalid() {
        let d = balanced(5, 2);
        assert!(matches!(
            dirichlet_partition(&d, 6, 1.0, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn partition_is_a_bijection_on_examples() {
        let d = balanced(1000, 10);
        for alpha in [0.05, 1.0, 100.0] {
            let parts = dirichlet_partition(&d, 37, alpha, 3).unwrap();
            let mut seen: Vec<usize> = parts
                .iter()
                .flat_map(|p| {
                    (0..p.len())
                        .map(|i| p.row(i)[0] as usize)
                        .collect::<Vec<_>>()
                })
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..1000).collect::<Vec<_>>());
            assert!(parts.iter().all(|p| !p.is_empty()));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let d = balanced(300, 3);
        assert_eq!(
            dirichlet_partition(&d, 10, 0.5, 11).unwrap(),
            dirichlet_partition(&d, 10, 0.5, 11).unwrap()
        );
    }

    #[test]
    fn unit_concentration_is_non_iid() {
        let d = balanced(5000, 10);
        let parts = dirichlet_partition(&d, 100, 1.0, 1).unwrap();
        let max_share = parts
            .iter()
            .map(|p| *p.class_counts().iter().max().unwrap() as f64 / p.len() as f64)
            .fold(0.0, f64::max);
        assert!(
            max_share > 0.4,
            "label histograms look i.i.d.: max share {max_share}"
        );
    }

    #[test]
    fn huge_concentration_is_near_uniform() {
        let d = balanced(10_000, 10);
        let mut ok = 0;
        for seed in 0..100 {
            let parts = dirichlet_partition(&d, 10, 1e6, seed).unwrap();
            let good = parts.iter().all(|p| {
                let share = *p.class_counts().iter().max().unwrap() as f64 / p.len() as f64;
                (share - 0.1).abs() <= 0.05
            });
            ok += usize::from(good);
        }
        assert!(ok >= 99, "{ok}/100 seeds near-uniform");
    }

    #[test]
    fn apportion_sums_and_breaks_ties_low() {
        assert_eq!(apportion(&[1.5, 1.5, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(apportion(&[0.2, 0.7, 0.1], 1), vec![0, 1, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("dprec-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        let d = SyntheticSpec {
            n_examples: 20,
            feature_dim: 3,
            num_classes: 4,
            separation: 1.0,
            noise: 0.5,
            seed: 1,
        }
        .generate(2)
        .unwrap();
        d.write_csv(&path).unwrap();
        assert_eq!(LocalDataset::read_csv(&path, Some(4)).unwrap(), d);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn rejects_out_of_range_labels() {
        assert!(LocalDataset::new(vec![0.0], vec![3], 1, 3).is_err());
    }
}
