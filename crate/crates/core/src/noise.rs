//! Counter-based randomness.
//!
//! Every random draw is a pure function of `(run seed, stream, node, iteration, index)`,
//! so a node's sample at iteration `t` does not depend on the order in which nodes or
//! runs are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Purpose tag separating independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Mini-batch draw `r` used to initialize the gradient estimators.
    Init(u64),
    /// The single fresh sample a node draws for the transition into iteration `t`.
    Fresh,
    /// Uniform choice of the output cell.
    Selection,
    /// Random initial points.
    Start,
    /// Problem-data generation.
    Problem,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init(r) => 0x1000_0000_0000_0000 ^ r,
            Stream::Fresh => 0x2000_0000_0000_0000,
            Stream::Selection => 0x3000_0000_0000_0000,
            Stream::Start => 0x4000_0000_0000_0000,
            Stream::Problem => 0x5000_0000_0000_0000,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from the full coordinate of a draw.
pub fn key(seed: u64, stream: Stream, node: usize, t: usize) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ stream.tag());
    h = splitmix64(h ^ node as u64);
    splitmix64(h ^ t as u64)
}

/// A generator positioned at the given coordinate.
pub fn rng(seed: u64, stream: Stream, node: usize, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, stream, node, t))
}

/// `dim` independent standard normal variates for the given coordinate.
pub fn standard_normals(seed: u64, stream: Stream, node: usize, t: usize, dim: usize) -> Vec<f64> {
    let mut rng = rng(seed, stream, node, t);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}
