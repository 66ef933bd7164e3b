use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffled index batches for one epoch over `n` rows.
///
/// The order depends only on `(shuffle_seed, epoch)`. A final batch with
/// fewer than two rows is dropped, since batch covariances need two samples.
pub fn batch_iter(n: usize, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size must be >= 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_division() {
        let b = batch_iter(64, 32, 1, 0).unwrap();
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_tail_dropped() {
        let b = batch_iter(65, 32, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 32]);
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        assert_eq!(batch_iter(100, 8, 5, 3).unwrap(), batch_iter(100, 8, 5, 3).unwrap());
        assert_ne!(batch_iter(100, 8, 5, 3).unwrap(), batch_iter(100, 8, 5, 4).unwrap());
    }

    #[test]
    fn tiny_batch_rejected() {
        assert!(matches!(batch_iter(10, 1, 0, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn epoch_is_a_permutation(n in 0usize..300, bs in 2usize..40, seed in any::<u64>(), epoch in 0u64..50) {
            let batches = batch_iter(n, bs, seed, epoch).unwrap();
            let mut seen: Vec<usize> = batches.concat();
            let dropped = if n % bs == 1 { 1 } else { 0 };
            prop_assert_eq!(seen.len(), n - dropped);
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n - dropped);
        }
    }
}
