//! Helpers for network-stacked vectors stored as one block per node.

use nalgebra::DVector;

/// Network average `(1/n) sum_i b_i`.
pub fn mean(blocks: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(blocks[0].len());
    for b in blocks {
        acc += b;
    }
    acc / blocks.len() as f64
}

/// `||b - 1 (x) mean(b)||^2`, the squared distance from the consensus subspace.
pub fn deviation_sq(blocks: &[DVector<f64>]) -> f64 {
    let m = mean(blocks);
    blocks.iter().map(|b| (b - &m).norm_squared()).sum()
}

/// Squared norm of the stacked vector.
pub fn norm_sq(blocks: &[DVector<f64>]) -> f64 {
    blocks.iter().map(|b| b.norm_squared()).sum()
}

/// Squared norm of the blockwise difference `a - b`.
pub fn diff_norm_sq(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

pub fn flatten(blocks: &[DVector<f64>]) -> Vec<f64> {
    blocks.iter().flat_map(|b| b.iter().copied()).collect()
}
