//! Seeded uniform sampling without replacement.
//!
//! Generator: PCG-XSH-RR 64/32 (`rand_pcg::Pcg32`, 64-bit state) seeded as
//! `Pcg32::new(seed, 0xa02bdbf7bb3c0a7)`. Sampling: the first `n` steps of a
//! Fisher–Yates shuffle over `0..len`, each bounded draw by Lemire's
//! multiply-and-reject on 32-bit outputs. The chosen indices are then sorted
//! so the sample keeps corpus order. Nothing here depends on `rand`'s own
//! range or shuffle algorithms, which are free to change between releases.

use rand::RngCore;
use rand_pcg::Pcg32;

const STREAM: u64 = 0xa02b_dbf7_bb3c_0a7;

/// Unbiased draw from `0..bound` (`bound > 0`).
fn bounded(rng: &mut Pcg32, bound: u32) -> u32 {
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = rng.next_u32() as u64 * bound as u64;
        if (m as u32) >= threshold {
            return (m >> 32) as u32;
        }
    }
}

/// Sorted indices of an `n`-subset of `0..len`. Requires `n <= len <= u32::MAX`.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    assert!(n <= len && len <= u32::MAX as usize);
    let mut rng = Pcg32::new(seed, STREAM);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + bounded(&mut rng, (len - i) as u32) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx.sort_unstable();
    idx
}
