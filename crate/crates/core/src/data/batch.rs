use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// A seeded permutation of `0..n` cut into batches of `batch_size`. A final
/// chunk of one sample is merged into the previous batch.
pub fn epoch_batches(domain_id: usize, n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::InvalidConfig(format!("batch size must be at least 2, got {batch_size}")));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("domain {domain_id} has {n} samples, need at least 2")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream_rng(epoch_seed, Stream::Shuffle, domain_id as u64, 0));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    Ok(batches)
}
