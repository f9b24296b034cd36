//! Multi-source batch scheduling: every iteration draws one batch from each
//! task set and concatenates them, and one epoch exhausts every set.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplerError {
    #[error("total batch {total} cannot give one slot to each of {sets} nonempty sets")]
    Infeasible { total: usize, sets: usize },
    #[error("id {0} appears in more than one set")]
    Overlap(usize),
    #[error("set {set} is nonempty but has batch size 0")]
    ZeroBatch { set: usize },
    #[error("{sets} sets but {sizes} batch sizes")]
    LengthMismatch { sets: usize, sizes: usize },
}

/// Split `total_batch` across sets in proportion to their sizes by
/// largest-remainder rounding, giving every nonempty set at least one slot.
/// Empty sets get zero.
pub fn aligned_batch_sizes(set_sizes: &[usize], total_batch: usize) -> Result<Vec<usize>, SamplerError> {
    let nonempty = set_sizes.iter().filter(|&&n| n > 0).count();
    if nonempty == 0 || total_batch < nonempty {
        return Err(SamplerError::Infeasible {
            total: total_batch,
            sets: nonempty,
        });
    }
    let n: u128 = set_sizes.iter().map(|&s| s as u128).sum();
    let t = total_batch as u128;
    let mut out: Vec<usize> = set_sizes.iter().map(|&s| (t * s as u128 / n) as usize).collect();
    let rem: Vec<u128> = set_sizes.iter().map(|&s| t * s as u128 % n).collect();
    let mut order: Vec<usize> = (0..set_sizes.len()).collect();
    // stable: equal remainders go to the earlier set
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]));
    let short = total_batch - out.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        out[k] += 1;
    }
    while let Some(k) = (0..out.len()).find(|&k| set_sizes[k] > 0 && out[k] == 0) {
        let donor = (0..out.len()).max_by_key(|&j| (out[j], std::cmp::Reverse(j))).unwrap();
        out[donor] -= 1;
        out[k] = 1;
    }
    Ok(out)
}

/// Disjoint id sets with one batch size each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPartition {
    sets: Vec<Vec<usize>>,
    batch_sizes: Vec<usize>,
}

impl TaskPartition {
    pub fn new(sets: Vec<Vec<usize>>, batch_sizes: Vec<usize>) -> Result<Self, SamplerError> {
        if sets.len() != batch_sizes.len() {
            return Err(SamplerError::LengthMismatch {
                sets: sets.len(),
                sizes: batch_sizes.len(),
            });
        }
        let mut seen = HashSet::new();
        for (k, set) in sets.iter().enumerate() {
            if !set.is_empty() && batch_sizes[k] == 0 {
                return Err(SamplerError::ZeroBatch { set: k });
            }
            for &id in set {
                if !seen.insert(id) {
                    return Err(SamplerError::Overlap(id));
                }
            }
        }
        Ok(Self { sets, batch_sizes })
    }

    /// Batch sizes from [`aligned_batch_sizes`].
    pub fn aligned(sets: Vec<Vec<usize>>, total_batch: usize) -> Result<Self, SamplerError> {
        let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
        let batch = aligned_batch_sizes(&sizes, total_batch)?;
        Self::new(sets, batch)
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn batch_sizes(&self) -> &[usize] {
        &self.batch_sizes
    }

    /// Iterations per epoch: the largest `ceil(n_k / b_k)`.
    pub fn epoch_length(&self) -> usize {
        self.sets
            .iter()
            .zip(&self.batch_sizes)
            .filter(|(s, _)| !s.is_empty())
            .map(|(s, &b)| s.len().div_ceil(b))
            .max()
            .unwrap_or(0)
    }

    /// The batches of one epoch; `batches[i][k]` holds set `k`'s ids for
    /// iteration `i`. Each set is spread evenly over the epoch, so every id
    /// appears exactly once and no chunk exceeds its batch size.
    pub fn epoch(&self, seed: u64, epoch: u64, shuffle: bool) -> Vec<Vec<Vec<usize>>> {
        let len = self.epoch_length();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let orders: Vec<Vec<usize>> = self
            .sets
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if shuffle {
                    s.shuffle(&mut rng);
                }
                s
            })
            .collect();
        (0..len)
            .map(|i| {
                orders
                    .iter()
                    .map(|ids| {
                        let n = ids.len();
                        ids[i * n / len..(i + 1) * n / len].to_vec()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn iter(&self, seed: u64, shuffle: bool) -> EpochIterator<'_> {
        EpochIterator {
            partition: self,
            seed,
            shuffle,
            epoch: 0,
            pending: Vec::new().into_iter().enumerate(),
        }
    }
}

/// One concatenated batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub epoch: u64,
    pub iteration: usize,
    /// Ids drawn from each set, in set order.
    pub per_set: Vec<Vec<usize>>,
}

impl Batch {
    pub fn ids(&self) -> Vec<usize> {
        self.per_set.concat()
    }
}

/// Endless stream of batches, epoch after epoch.
#[derive(Debug)]
pub struct EpochIterator<'a> {
    partition: &'a TaskPartition,
    seed: u64,
    shuffle: bool,
    epoch: u64,
    pending: std::iter::Enumerate<std::vec::IntoIter<Vec<Vec<usize>>>>,
}

impl Iterator for EpochIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.partition.epoch_length() == 0 {
            return None;
        }
        loop {
            if let Some((iteration, per_set)) = self.pending.next() {
                return Some(Batch {
                    epoch: self.epoch - 1,
                    iteration,
                    per_set,
                });
            }
            self.pending = self
                .partition
                .epoch(self.seed, self.epoch, self.shuffle)
                .into_iter()
                .enumerate();
            self.epoch += 1;
        }
    }
}
