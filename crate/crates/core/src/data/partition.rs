use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Disjoint index shards, one per client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    /// One shard holding `0..n` in order.
    pub fn whole(n: usize) -> Self {
        Partition {
            shards: vec![(0..n).collect()],
        }
    }

    /// Checks disjointness, non-emptiness and the index bound.
    pub fn from_shards(shards: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (s, shard) in shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::Config(format!("shard {s} is empty")));
            }
            for &i in shard {
                if i >= n {
                    return Err(Error::Config(format!(
                        "shard {s} holds index {i} of a {n}-sample set"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config(format!(
                        "index {i} appears in more than one shard"
                    )));
                }
            }
        }
        Ok(Partition { shards })
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn shard(&self, i: usize) -> &[usize] {
        &self.shards[i]
    }

    pub fn k(&self) -> usize {
        self.shards.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }
}

/// Slices a seeded permutation of `0..n` into `k` shards. Without `sizes`
/// the whole set is split evenly with the remainder going to the first
/// shards; with `sizes`, shard `i` takes `sizes[i]` samples and any rest is
/// left unused.
pub fn partition_iid(n: usize, k: usize, sizes: Option<&[usize]>, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    let sizes: Vec<usize> = match sizes {
        Some(s) => {
            if s.len() != k {
                return Err(Error::Config(format!(
                    "{} shard sizes given for {k} clients",
                    s.len()
                )));
            }
            if let Some(i) = s.iter().position(|&v| v == 0) {
                return Err(Error::Config(format!("client {i} has shard size 0")));
            }
            let total: usize = s.iter().sum();
            if total > n {
                return Err(Error::Config(format!(
                    "shard sizes sum to {total} but only {n} samples exist"
                )));
            }
            s.to_vec()
        }
        None => {
            if k > n {
                return Err(Error::Config(format!(
                    "cannot split {n} samples over {k} clients"
                )));
            }
            (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
        }
    };
    let perm = SeededRng::new(seed).derive("partition").permutation(n);
    let mut shards = Vec::with_capacity(k);
    let mut at = 0;
    for s in sizes {
        shards.push(perm[at..at + s].to_vec());
        at += s;
    }
    Ok(Partition { shards })
}
