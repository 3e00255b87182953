use deco_core::SeededRng;

use crate::error::{DataError, Result};

/// One mini-batch. `pairing[i]` is the in-batch position of the partner
/// whose domain statistics sample `i` borrows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub pairing: Vec<usize>,
}

/// Seeded epoch shuffling with cross-domain partner selection. A trailing
/// remainder of fewer than two samples is dropped, since it cannot be paired.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    items: Vec<(usize, usize)>,
    batch_size: usize,
    rng: SeededRng,
}

impl BatchIterator {
    /// `items` are `(record index, domain)` pairs.
    pub fn new(items: Vec<(usize, usize)>, batch_size: usize, rng: SeededRng) -> Result<Self> {
        if batch_size < 2 {
            return Err(DataError::Config(format!("batch size must be at least 2, got {batch_size}")));
        }
        if batch_size > items.len() {
            return Err(DataError::BatchTooLarge {
                batch: batch_size,
                len: items.len(),
            });
        }
        Ok(Self { items, batch_size, rng })
    }

    pub fn batches_per_epoch(&self) -> usize {
        let full = self.items.len() / self.batch_size;
        full + usize::from(self.items.len() % self.batch_size >= 2)
    }

    /// Reshuffles and returns the next epoch.
    pub fn epoch(&mut self) -> Vec<Batch> {
        let mut order = self.items.clone();
        self.rng.shuffle(&mut order);
        order
            .chunks(self.batch_size)
            .filter(|c| c.len() >= 2)
            .map(|chunk| {
                let domains: Vec<usize> = chunk.iter().map(|&(_, d)| d).collect();
                Batch {
                    indices: chunk.iter().map(|&(i, _)| i).collect(),
                    pairing: pair_partners(&domains, &mut self.rng),
                }
            })
            .collect()
    }
}

/// For each position a uniformly random partner from another domain, or
/// any other position when the batch holds a single domain.
pub fn pair_partners(domains: &[usize], rng: &mut SeededRng) -> Vec<usize> {
    let n = domains.len();
    (0..n)
        .map(|i| {
            let cross: Vec<usize> = (0..n).filter(|&j| domains[j] != domains[i]).collect();
            if cross.is_empty() {
                let k = rng.below(n - 1);
                if k >= i {
                    k + 1
                } else {
                    k
                }
            } else {
                cross[rng.below(cross.len())]
            }
        })
        .collect()
}
