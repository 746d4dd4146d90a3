use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition `{other}` (train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    /// Partition of each example, by example index.
    pub labels: Vec<Partition>,
    pub seed: u64,
}

impl SplitAssignment {
    /// Example indices in `p`, ascending.
    pub fn indices(&self, p: Partition) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == p)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, p: Partition) -> usize {
        self.labels.iter().filter(|&&l| l == p).count()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("split counts {train}+{val}+{test} do not sum to {n}")]
pub struct SplitError {
    pub n: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Seeded uniform permutation of `0..n`, cut into train, val and test in
/// that order.
pub fn split(n: usize, counts: SplitCounts, seed: u64) -> Result<SplitAssignment, SplitError> {
    if counts.total() != n {
        return Err(SplitError {
            n,
            train: counts.train,
            val: counts.val,
            test: counts.test,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::seeded(seed));
    let mut labels = vec![Partition::Train; n];
    for &i in &perm[counts.train..counts.train + counts.val] {
        labels[i] = Partition::Val;
    }
    for &i in &perm[counts.train + counts.val..] {
        labels[i] = Partition::Test;
    }
    Ok(SplitAssignment { labels, seed })
}
