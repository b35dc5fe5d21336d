//! Erasure-probability recursion over the prefix tree.
//!
//! A single transform step turns a BEC with erasure probability `z` into a
//! degraded channel with `z⁻ = 2z − z²` and an upgraded one with `z⁺ = z²`.
//! Starting from `Z₀ = ε` and applying [`z_step`] level by level yields the
//! erasure probability `Z_k` of every prefix channel; [`ZTree`] stores all
//! of them because the correlation recursion consumes every intermediate
//! level, not just the last one.
//!
//! The tree also carries the complements `Z̄_k = 1 − Z_k`, advanced by the
//! mirrored recursion `z̄⁻ = z̄²`, `z̄⁺ = 2z̄ − z̄²`. Near the polarized
//! extremes one of `Z`, `Z̄` is tiny; tracking both keeps full relative
//! precision where `1 − Z` would cancel catastrophically.

use crate::index::SignSequence;
use crate::numeric::compensated_sum;
use crate::{check_unit_range, Error, Result};

/// Deepest tree this module will build; a depth-24 tree already holds
/// `2^26` floats across both arrays.
pub const MAX_TREE_DEPTH: usize = 24;

/// The root binary erasure channel, defined by its erasure probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParam {
    epsilon: f64,
}

impl ChannelParam {
    pub fn new(epsilon: f64) -> Result<ChannelParam> {
        check_unit_range("epsilon", epsilon, 0.0, 1.0)?;
        Ok(ChannelParam { epsilon })
    }

    pub fn epsilon(self) -> f64 {
        self.epsilon
    }

    /// The channel with erasure probability `1 − ε`.
    pub fn complement(self) -> ChannelParam {
        ChannelParam {
            epsilon: 1.0 - self.epsilon,
        }
    }
}

/// One recursion step: `z ↦ (2z − z², z²)`.
///
/// Both outputs stay in `[0, 1]` and satisfy `z⁺ ≤ z ≤ z⁻`; they are
/// clamped to absorb 1-ulp excursions of the arithmetic.
pub fn z_step(z: f64) -> Result<(f64, f64)> {
    check_unit_range("z", z, 0.0, 1.0)?;
    let minus = (2.0 * z - z * z).clamp(0.0, 1.0);
    let plus = (z * z).clamp(0.0, 1.0);
    Ok((minus, plus))
}

/// Erasure probabilities `Z_k` (and complements `Z̄_k`) for every prefix of
/// every length `k ≤ depth`, in [`SignSequence`](crate::index::SignSequence)
/// index order within each level.
#[derive(Debug, Clone)]
pub struct ZTree {
    depth: usize,
    z: Vec<Vec<f64>>,
    zbar: Vec<Vec<f64>>,
}

impl ZTree {
    /// Builds the full prefix tree of depth `depth` for the given channel.
    pub fn build(param: &ChannelParam, depth: usize) -> Result<ZTree> {
        if depth > MAX_TREE_DEPTH {
            return Err(Error::Capacity {
                what: "tree depth",
                requested: depth,
                limit: MAX_TREE_DEPTH,
            });
        }
        let eps = param.epsilon();
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
        let mut zbar: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
        z.push(vec![eps]);
        zbar.push(vec![1.0 - eps]);
        for k in 1..=depth {
            let prev_z = &z[k - 1];
            let prev_b = &zbar[k - 1];
            let mut cur_z = Vec::with_capacity(1 << k);
            let mut cur_b = Vec::with_capacity(1 << k);
            for (&zv, &bv) in prev_z.iter().zip(prev_b) {
                // '-' child first (bit 0), '+' child second (bit 1).
                cur_z.push((2.0 * zv - zv * zv).clamp(0.0, 1.0));
                cur_z.push((zv * zv).clamp(0.0, 1.0));
                cur_b.push((bv * bv).clamp(0.0, 1.0));
                cur_b.push((2.0 * bv - bv * bv).clamp(0.0, 1.0));
            }
            z.push(cur_z);
            zbar.push(cur_b);
        }
        Ok(ZTree { depth, z, zbar })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn epsilon(&self) -> f64 {
        self.z[0][0]
    }

    /// Level `k`: the `2^k` values `Z_k` in index order.
    pub fn level(&self, k: usize) -> &[f64] {
        &self.z[k]
    }

    /// Complements `Z̄_k`, advanced by their own recursion (not `1 − Z`).
    pub fn zbar_level(&self, k: usize) -> &[f64] {
        &self.zbar[k]
    }

    /// `Z` for the given prefix (any length up to the tree depth).
    pub fn z(&self, prefix: SignSequence) -> f64 {
        self.z[prefix.len()][prefix.to_index()]
    }

    pub fn zbar(&self, prefix: SignSequence) -> f64 {
        self.zbar[prefix.len()][prefix.to_index()]
    }

    /// Compensated mean of level `k`; equals ε exactly in real arithmetic
    /// since each step preserves `(z⁻ + z⁺)/2 = z`.
    pub fn level_mean(&self, k: usize) -> f64 {
        compensated_sum(&self.z[k]) / self.z[k].len() as f64
    }
}
