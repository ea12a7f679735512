//! Keyed random streams.
//!
//! Every random draw in the engine comes from a ChaCha8 stream whose key is
//! derived from `(seed, step, phase)` and whose stream number is the cell (or
//! other work item) index. Work items can therefore run in any order, on any
//! number of threads, and still consume exactly the same numbers.

use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, Distribution};
use rand_chacha::ChaCha8Rng;

/// Which part of the algorithm a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Balance = 1,
    Kick = 2,
    Init = 3,
    InitVelocity = 4,
    Bootstrap = 5,
    Calibration = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StreamKey {
    pub seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey { seed }
    }

    /// Generator for one `(step, phase, item)` triple.
    pub fn stream(&self, step: u64, phase: Phase, item: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = splitmix64(self.seed) ^ splitmix64(step.wrapping_mul(0x2545_f491_4f6c_dd1d));
        state ^= (phase as u64).wrapping_mul(0xd6e8_feb8_6659_fd93);
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(item);
        rng
    }
}

/// Round `x ≥ 0` up with probability equal to its fractional part.
#[inline]
pub fn stochastic_round<R: Rng + ?Sized>(x: f64, rng: &mut R) -> u64 {
    debug_assert!(x >= 0.0 && x.is_finite());
    let base = x.floor();
    let frac = x - base;
    let up = frac > 0.0 && rng.random::<f64>() < frac;
    base as u64 + up as u64
}

/// Multinomial counts of `n` draws over `probs` (which should sum to 1) by
/// sequential conditional binomials. Mass lost to rounding goes to the most
/// likely cell.
pub fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass_left = 1.0f64;
    for (c, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if c + 1 == probs.len() || p >= mass_left {
            counts[c] = left;
            left = 0;
            break;
        }
        let q = (p / mass_left).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        counts[c] = k;
        left -= k;
        mass_left -= p;
    }
    if left > 0 {
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |b, (i, p)| if *p > probs[b] { i } else { b });
        counts[best] += left;
    }
    counts
}
