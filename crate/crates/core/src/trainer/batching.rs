use crate::rng::{Purpose, Stream};

/// A batch: record indices plus the padded frame count they share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub indices: Vec<usize>,
    pub max_frames: usize,
}

impl BatchPlan {
    /// Padding frames added to bring every item up to `max_frames`.
    pub fn padding_waste(&self, lengths: &[usize]) -> usize {
        self.indices.iter().map(|&i| self.max_frames - lengths[i]).sum()
    }
}

/// Groups records into batches for one epoch.
///
/// With `sort_by_length` the records are ordered by frame count, longest
/// first (ties by index), otherwise they are shuffled with a per-epoch
/// stream. Consecutive runs of `batch_size` form the batches, and the batch
/// order is then shuffled with another per-epoch stream.
pub fn make_batches(lengths: &[usize], batch_size: usize, sort_by_length: bool, seed: u64, epoch: usize) -> Vec<BatchPlan> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    if sort_by_length {
        order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]).then(a.cmp(&b)));
    } else {
        Stream::new(seed, Purpose::Shuffle, &[epoch as u64, 0]).shuffle(&mut order);
    }
    let mut batches: Vec<BatchPlan> = order
        .chunks(batch_size)
        .map(|c| BatchPlan {
            indices: c.to_vec(),
            max_frames: c.iter().map(|&i| lengths[i]).max().unwrap_or(0),
        })
        .collect();
    Stream::new(seed, Purpose::Shuffle, &[epoch as u64, 1]).shuffle(&mut batches);
    batches
}
