//! Flat parameter vectors with a canonical group partition.
//!
//! Every model weight vector, client update and decoded update is a
//! [`ParamVector`]: one contiguous `Vec<f64>` plus a [`GroupPartition`] naming
//! the tensors it is made of. The codec compresses each group independently,
//! so the partition order is part of the wire contract.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous, non-overlapping cover of `[0, total_len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Group>,
}

impl GroupPartition {
    /// Builds a partition from `(name, len)` pairs in declaration order.
    pub fn from_sizes<S: Into<String>>(
        sizes: impl IntoIterator<Item = (S, usize)>,
    ) -> Result<Self> {
        let mut groups = Vec::new();
        let mut offset = 0;
        for (name, len) in sizes {
            let name = name.into();
            if len == 0 {
                return Err(Error::InvalidConfig(format!("group `{name}` is empty")));
            }
            if groups.iter().any(|g: &Group| g.name == name) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate group name `{name}`"
                )));
            }
            groups.push(Group { name, offset, len });
            offset += len;
        }
        if groups.is_empty() {
            return Err(Error::InvalidConfig(
                "partition needs at least one group".into(),
            ));
        }
        Ok(Self { groups })
    }

    pub fn single(len: usize) -> Result<Self> {
        Self::from_sizes([("all", len)])
    }

    /// Unnamed groups of the given sizes (`g0`, `g1`, ...).
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        Self::from_sizes(
            lengths
                .iter()
                .enumerate()
                .map(|(i, &l)| (format!("g{i}"), l)),
        )
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn total_len(&self) -> usize {
        self.groups.last().map_or(0, |g| g.offset + g.len)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len).collect()
    }

    /// Same groups re-laid out in `order` (a permutation of group indices).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.groups.len())?;
        Self::from_sizes(
            order
                .iter()
                .map(|&i| (self.groups[i].name.clone(), self.groups[i].len)),
        )
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::Shape(format!(
            "permutation of length {} for {n} groups",
            order.len()
        )));
    }
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Shape(format!(
                "{order:?} is not a permutation of 0..{n}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    partition: GroupPartition,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, partition: GroupPartition) -> Result<Self> {
        if values.len() != partition.total_len() {
            return Err(Error::Shape(format!(
                "{} values for a partition covering {}",
                values.len(),
                partition.total_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { values, partition })
    }

    pub fn zeros(partition: GroupPartition) -> Self {
        Self {
            values: vec![0.0; partition.total_len()],
            partition,
        }
    }

    /// Concatenates per-group slices in canonical order.
    pub fn from_groups(parts: &[Vec<f64>], partition: GroupPartition) -> Result<Self> {
        if parts.len() != partition.num_groups() {
            return Err(Error::Shape(format!(
                "{} group slices for {} groups",
                parts.len(),
                partition.num_groups()
            )));
        }
        for (p, g) in parts.iter().zip(partition.groups()) {
            if p.len() != g.len {
                return Err(Error::Shape(format!(
                    "group `{}` expects {} values, got {}",
                    g.name,
                    g.len,
                    p.len()
                )));
            }
        }
        Self::new(parts.concat(), partition)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group(&self, i: usize) -> &[f64] {
        let g = &self.partition.groups[i];
        &self.values[g.offset..g.offset + g.len]
    }

    pub fn group_mut(&mut self, i: usize) -> &mut [f64] {
        let g = &self.partition.groups[i];
        &mut self.values[g.offset..g.offset + g.len]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.partition != other.partition {
            return Err(Error::Shape(
                "parameter vectors have different partitions".into(),
            ));
        }
        Ok(())
    }

    /// Same values viewed through another partition of equal total length.
    pub fn with_partition(self, partition: GroupPartition) -> Result<Self> {
        if partition.total_len() != self.values.len() {
            return Err(Error::Shape(format!(
                "partition covers {} values, vector has {}",
                partition.total_len(),
                self.values.len()
            )));
        }
        Ok(Self {
            values: self.values,
            partition,
        })
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            values,
            partition: self.partition.clone(),
        })
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Reorders groups (and their values) according to `order`.
    pub fn permute_groups(&self, order: &[usize]) -> Result<Self> {
        let partition = self.partition.permuted(order)?;
        let parts: Vec<Vec<f64>> = order.iter().map(|&i| self.group(i).to_vec()).collect();
        Self::from_groups(&parts, partition)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_covers_range() {
        let p = GroupPartition::from_sizes([("w", 6), ("b", 2)]).unwrap();
        assert_eq!(p.total_len(), 8);
        assert_eq!(p.groups()[1].offset, 6);
    }

    #[test]
    fn rejects_empty_and_duplicate_groups() {
        assert!(GroupPartition::from_sizes([("w", 0)]).is_err());
        assert!(GroupPartition::from_sizes([("w", 1), ("w", 2)]).is_err());
        assert!(GroupPartition::from_sizes(Vec::<(String, usize)>::new()).is_err());
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        let p = GroupPartition::single(2).unwrap();
        assert!(ParamVector::new(vec![1.0, f64::NAN], p.clone()).is_err());
        assert!(ParamVector::new(vec![1.0], p).is_err());
    }

    #[test]
    fn sub_requires_same_partition() {
        let a = ParamVector::zeros(GroupPartition::single(3).unwrap());
        let b = ParamVector::zeros(GroupPartition::from_lengths(&[1, 2]).unwrap());
        assert!(matches!(a.sub(&b), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn group_split_then_concat_is_identity(
            lens in proptest::collection::vec(1usize..6, 1..5),
            seed in any::<u64>(),
        ) {
            let p = GroupPartition::from_lengths(&lens).unwrap();
            let values: Vec<f64> = (0..p.total_len()).map(|i| ((seed ^ i as u64) % 1000) as f64 / 7.0).collect();
            let v = ParamVector::new(values, p.clone()).unwrap();
            let parts: Vec<Vec<f64>> = (0..p.num_groups()).map(|i| v.group(i).to_vec()).collect();
            prop_assert_eq!(ParamVector::from_groups(&parts, p).unwrap(), v);
        }

        #[test]
        fn permute_then_inverse_is_identity(lens in proptest::collection::vec(1usize..5, 1..6)) {
            let p = GroupPartition::from_lengths(&lens).unwrap();
            let v = ParamVector::new((0..p.total_len()).map(|i| i as f64).collect(), p).unwrap();
            let n = lens.len();
            let order: Vec<usize> = (0..n).rev().collect();
            let back = v.permute_groups(&order).unwrap().permute_groups(&order).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
