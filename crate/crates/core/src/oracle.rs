//! Ground-truth engines used to validate every recursion and bound.
//!
//! For a BEC, the whole family of synthesized erasure indicators is a
//! deterministic min/max network of the base indicators: a `-` output
//! erases iff either input copy erases (`max`, bitwise OR) and a `+`
//! output erases iff both do (`min`, bitwise AND). That gives two oracles:
//!
//! * [`exact_stats`] enumerates all `2^(2^n)` base patterns (feasible for
//!   `n ≤ 4`) and accumulates exact means, covariances, and block error
//!   probabilities;
//! * [`monte_carlo`] samples base patterns with a seeded generator, 64
//!   trials per machine word, and reports estimates with standard errors.
//!
//! Both fix the same pairing convention: the two independent copies feeding
//! a combine step are the first and second halves of the base array. Any
//! fixed convention yields identically distributed statistics; fixing one
//! makes [`synthesize`] deterministic and testable.

use rand::distributions::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::CodeSpec;
use crate::polarize::{ChannelParam, MAX_TREE_DEPTH};
use crate::{Error, Result};

/// Depth cap for exhaustive enumeration: `2^(2^4) = 65536` patterns.
pub const MAX_EXACT_DEPTH: usize = 4;

/// Version of the Monte Carlo engine; reproducibility is promised per
/// `(seed, trials, version)`.
pub const MC_VERSION: u32 = 1;

/// One round of combining: within each aligned block, the first half is one
/// independent copy and the second half the other; output `2p` is the OR
/// (degraded) and `2p+1` the AND (upgraded). Works on `{0,1}` bytes and on
/// bit-packed words alike.
fn combine_level<T>(cur: &[T], scratch: &mut [T], block: usize)
where
    T: Copy + std::ops::BitAnd<Output = T> + std::ops::BitOr<Output = T>,
{
    let half = block / 2;
    for base in (0..cur.len()).step_by(block) {
        for p in 0..half {
            let l = cur[base + p];
            let r = cur[base + half + p];
            scratch[base + 2 * p] = l | r;
            scratch[base + 2 * p + 1] = l & r;
        }
    }
}

fn combine_all<T>(cur: &mut Vec<T>, scratch: &mut Vec<T>)
where
    T: Copy + std::ops::BitAnd<Output = T> + std::ops::BitOr<Output = T>,
{
    let mut block = 2;
    while block <= cur.len() {
        combine_level(cur, scratch, block);
        std::mem::swap(cur, scratch);
        block <<= 1;
    }
}

/// Erasure indicators of all `2^n` synthesized channels for one realization
/// of the base indicators, in index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasureVector {
    depth: usize,
    indicators: Vec<u8>,
}

impl ErasureVector {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn indicators(&self) -> &[u8] {
        &self.indicators
    }

    pub fn get(&self, index: usize) -> u8 {
        self.indicators[index]
    }
}

/// Runs the min/max combining network on one base pattern.
pub fn synthesize(base: &[u8]) -> Result<ErasureVector> {
    if !base.len().is_power_of_two() {
        return Err(Error::Invalid(format!(
            "base length {} is not a power of two",
            base.len()
        )));
    }
    if let Some(&bad) = base.iter().find(|&&b| b > 1) {
        return Err(Error::Invalid(format!(
            "base indicators must be 0 or 1, found {bad}"
        )));
    }
    let mut cur = base.to_vec();
    let mut scratch = vec![0u8; base.len()];
    combine_all(&mut cur, &mut scratch);
    Ok(ErasureVector {
        depth: base.len().trailing_zeros() as usize,
        indicators: cur,
    })
}

/// The full weighted enumeration of base erasure patterns for one channel
/// and depth: pattern `p` erases base copy `i` iff bit `i` of `p` is set,
/// and carries probability `ε^w(p) · (1−ε)^(2^n − w(p))`.
pub struct PatternEnumeration {
    depth: usize,
    epsilon: f64,
    weights: Vec<f64>,
    /// Bit `u` of `masks[p]`: does channel `u` erase under pattern `p`?
    masks: Vec<u32>,
}

impl PatternEnumeration {
    pub fn new(param: &ChannelParam, depth: usize) -> Result<PatternEnumeration> {
        if depth > MAX_EXACT_DEPTH {
            return Err(Error::Capacity {
                what: "exact-enumeration depth",
                requested: depth,
                limit: MAX_EXACT_DEPTH,
            });
        }
        let eps = param.epsilon();
        let base_bits = 1usize << depth;
        let patterns = 1usize << base_bits;
        let mut eps_pow = vec![1.0f64; base_bits + 1];
        let mut bar_pow = vec![1.0f64; base_bits + 1];
        for w in 1..=base_bits {
            eps_pow[w] = eps_pow[w - 1] * eps;
            bar_pow[w] = bar_pow[w - 1] * (1.0 - eps);
        }
        let mut weights = Vec::with_capacity(patterns);
        let mut masks = Vec::with_capacity(patterns);
        let mut cur = vec![0u8; base_bits];
        let mut scratch = vec![0u8; base_bits];
        for pat in 0..patterns {
            let erased = (pat as u32).count_ones() as usize;
            weights.push(eps_pow[erased] * bar_pow[base_bits - erased]);
            for (i, slot) in cur.iter_mut().enumerate() {
                *slot = ((pat >> i) & 1) as u8;
            }
            combine_all(&mut cur, &mut scratch);
            let mut mask = 0u32;
            for (u, &e) in cur.iter().enumerate() {
                mask |= (e as u32) << u;
            }
            masks.push(mask);
        }
        Ok(PatternEnumeration {
            depth,
            epsilon: eps,
            weights,
            masks,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Exact first- and second-order statistics of the indicator vector.
    ///
    /// `Z̄` is accumulated directly (not as `1 − Z`) and the covariance is
    /// accumulated centered, `Σ w·(e_s − Z_s)(e_t − Z_t)`; both choices keep
    /// full precision when a channel is nearly deterministic.
    pub fn stats(&self) -> ExactStats {
        let channels = 1usize << self.depth;
        let mut z = vec![0.0f64; channels];
        let mut zbar = vec![0.0f64; channels];
        for (&w, &mask) in self.weights.iter().zip(&self.masks) {
            for u in 0..channels {
                if (mask >> u) & 1 == 1 {
                    z[u] += w;
                } else {
                    zbar[u] += w;
                }
            }
        }
        let mut cov = vec![0.0f64; channels * channels];
        let mut centered = vec![0.0f64; channels];
        for (&w, &mask) in self.weights.iter().zip(&self.masks) {
            for (u, c) in centered.iter_mut().enumerate() {
                *c = ((mask >> u) & 1) as f64 - z[u];
            }
            for u in 0..channels {
                let wu = w * centered[u];
                for v in u..channels {
                    cov[u * channels + v] += wu * centered[v];
                }
            }
        }
        for u in 0..channels {
            for v in 0..u {
                cov[u * channels + v] = cov[v * channels + u];
            }
        }
        ExactStats {
            depth: self.depth,
            epsilon: self.epsilon,
            z,
            zbar,
            cov,
            block_error: None,
        }
    }

    /// Exact probability that at least one information channel erases.
    pub fn block_error(&self, spec: &CodeSpec) -> Result<f64> {
        if spec.depth() != self.depth || spec.epsilon() != self.epsilon {
            return Err(Error::Invalid(format!(
                "code (eps={}, n={}) does not match enumeration (eps={}, n={})",
                spec.epsilon(),
                spec.depth(),
                self.epsilon,
                self.depth
            )));
        }
        let mut amask = 0u32;
        for &i in spec.info_set() {
            amask |= 1 << i;
        }
        let mut total = 0.0;
        for (&w, &mask) in self.weights.iter().zip(&self.masks) {
            if mask & amask != 0 {
                total += w;
            }
        }
        Ok(total)
    }
}

/// Exact statistics from exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct ExactStats {
    depth: usize,
    epsilon: f64,
    z: Vec<f64>,
    zbar: Vec<f64>,
    cov: Vec<f64>,
    pub block_error: Option<f64>,
}

impl ExactStats {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn zbar(&self) -> &[f64] {
        &self.zbar
    }

    pub fn cov(&self, u: usize, v: usize) -> f64 {
        self.cov[u * (1 << self.depth) + v]
    }

    pub fn var(&self, u: usize) -> f64 {
        self.z[u] * self.zbar[u]
    }

    /// Joint moment `E[e_s e_t]`.
    pub fn joint(&self, u: usize, v: usize) -> f64 {
        self.cov(u, v) + self.z[u] * self.z[v]
    }

    /// Correlation coefficient; undefined (`None`) when either variance
    /// vanishes.
    pub fn rho(&self, u: usize, v: usize) -> Option<f64> {
        let vu = self.var(u);
        let vv = self.var(v);
        if vu <= 0.0 || vv <= 0.0 {
            None
        } else {
            Some(self.cov(u, v) / (vu * vv).sqrt())
        }
    }
}

/// Enumerates every base pattern and returns exact statistics, plus the
/// exact block error probability when an information set is given.
pub fn exact_stats(
    param: &ChannelParam,
    depth: usize,
    spec: Option<&CodeSpec>,
) -> Result<ExactStats> {
    let enumeration = PatternEnumeration::new(param, depth)?;
    let mut stats = enumeration.stats();
    if let Some(spec) = spec {
        stats.block_error = Some(enumeration.block_error(spec)?);
    }
    Ok(stats)
}

/// A Monte Carlo run: i.i.d. Bernoulli(ε) base patterns, deterministic per
/// `(seed, trials, MC_VERSION)` regardless of thread count.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub param: ChannelParam,
    pub depth: usize,
    pub trials: u64,
    pub seed: u64,
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Empirical correlation for one requested channel pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairEstimate {
    pub s: usize,
    pub t: usize,
    pub both_count: u64,
    /// `None` when a sample variance vanishes and the coefficient is
    /// undefined.
    pub rho: Option<Estimate>,
}

/// Everything a Monte Carlo run produces. All estimates derive from integer
/// event counts, so results are bit-identical across worker counts.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub version: u32,
    pub epsilon: f64,
    pub depth: usize,
    pub trials: u64,
    pub seed: u64,
    pub erase_counts: Vec<u64>,
    pub z: Vec<Estimate>,
    pub pairs: Vec<PairEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_error: Option<Estimate>,
}

/// Trials per shard; each shard draws from its own derived RNG stream, so
/// the sample depends only on `(seed, trials)`, never on scheduling.
const SHARD_TRIALS: u64 = 1 << 16;

fn shard_rng(seed: u64, shard: u64) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[..16].copy_from_slice(b"polarbec-mc-v001");
    bytes[16..24].copy_from_slice(&seed.to_le_bytes());
    bytes[24..32].copy_from_slice(&shard.to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}

struct ShardAccum {
    ones: Vec<u64>,
    both: Vec<u64>,
    block: u64,
}

fn run_shard(
    cfg: &McConfig,
    shard: u64,
    trials: u64,
    pairs: &[(usize, usize)],
    block_set: Option<&[usize]>,
) -> ShardAccum {
    let channels = 1usize << cfg.depth;
    let mut rng = shard_rng(cfg.seed, shard);
    let dist = Bernoulli::new(cfg.param.epsilon()).expect("validated epsilon");
    let mut cur = vec![0u64; channels];
    let mut scratch = vec![0u64; channels];
    let mut ones = vec![0u64; channels];
    let mut both = vec![0u64; pairs.len()];
    let mut block = 0u64;

    let mut remaining = trials;
    while remaining > 0 {
        let lanes = remaining.min(64) as u32;
        for word in cur.iter_mut() {
            let mut w = 0u64;
            for lane in 0..lanes {
                if dist.sample(&mut rng) {
                    w |= 1u64 << lane;
                }
            }
            *word = w;
        }
        // Unused lanes are zero, i.e. erase nowhere; they add nothing to
        // any count below.
        combine_all(&mut cur, &mut scratch);
        for (acc, &word) in ones.iter_mut().zip(cur.iter()) {
            *acc += word.count_ones() as u64;
        }
        for (acc, &(s, t)) in both.iter_mut().zip(pairs) {
            *acc += (cur[s] & cur[t]).count_ones() as u64;
        }
        if let Some(set) = block_set {
            let union = set.iter().fold(0u64, |acc, &i| acc | cur[i]);
            block += union.count_ones() as u64;
        }
        remaining -= lanes as u64;
    }
    ShardAccum { ones, both, block }
}

/// Standard error of a Bernoulli proportion estimated from `trials` draws.
pub fn proportion_std_error(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Correlation of two indicator variables from their joint and marginal
/// probabilities, with a delta-method standard error (the estimator is a
/// smooth function of the three multinomial cell frequencies).
///
/// `None` when either marginal is degenerate. Usable both with empirical
/// frequencies (plug-in error) and with exact reference probabilities (the
/// sampling error a consistency test should allow).
pub fn bernoulli_rho_estimate(p11: f64, p_s: f64, p_t: f64, trials: u64) -> Option<Estimate> {
    let vs = p_s * (1.0 - p_s);
    let vt = p_t * (1.0 - p_t);
    if vs <= 0.0 || vt <= 0.0 {
        return None;
    }
    let denom = (vs * vt).sqrt();
    let rho = (p11 - p_s * p_t) / denom;
    let dx = 1.0 / denom;
    let dy = -p_t / denom - rho * (1.0 - 2.0 * p_s) / (2.0 * vs);
    let dz = -p_s / denom - rho * (1.0 - 2.0 * p_t) / (2.0 * vt);
    let c11 = p11 * (1.0 - p11);
    let c1s = p11 * (1.0 - p_s);
    let c1t = p11 * (1.0 - p_t);
    let cst = p11 - p_s * p_t;
    let var = dx * dx * c11
        + dy * dy * vs
        + dz * dz * vt
        + 2.0 * (dx * dy * c1s + dx * dz * c1t + dy * dz * cst);
    Some(Estimate {
        value: rho,
        std_error: (var.max(0.0) / trials as f64).sqrt(),
    })
}

/// Runs the simulation. Pair correlations are estimated for the requested
/// index pairs; block error for the given information set, if any.
pub fn monte_carlo(
    cfg: &McConfig,
    pairs: &[(usize, usize)],
    spec: Option<&CodeSpec>,
) -> Result<McReport> {
    if cfg.trials == 0 {
        return Err(Error::Invalid("trials must be at least 1".into()));
    }
    if cfg.depth > MAX_TREE_DEPTH {
        return Err(Error::Capacity {
            what: "simulation depth",
            requested: cfg.depth,
            limit: MAX_TREE_DEPTH,
        });
    }
    let channels = 1usize << cfg.depth;
    for &(s, t) in pairs {
        if s >= channels || t >= channels {
            return Err(Error::Invalid(format!(
                "pair ({s}, {t}) out of range for {channels} channels"
            )));
        }
    }
    if let Some(spec) = spec {
        if spec.depth() != cfg.depth || spec.epsilon() != cfg.param.epsilon() {
            return Err(Error::Invalid(
                "information set does not match the simulated channel".into(),
            ));
        }
    }

    let shards = cfg.trials.div_ceil(SHARD_TRIALS);
    let accums: Vec<ShardAccum> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let trials = if shard == shards - 1 {
                cfg.trials - shard * SHARD_TRIALS
            } else {
                SHARD_TRIALS
            };
            run_shard(cfg, shard, trials, pairs, spec.map(CodeSpec::info_set))
        })
        .collect();

    let mut ones = vec![0u64; channels];
    let mut both = vec![0u64; pairs.len()];
    let mut block = 0u64;
    for acc in accums {
        for (total, part) in ones.iter_mut().zip(acc.ones) {
            *total += part;
        }
        for (total, part) in both.iter_mut().zip(acc.both) {
            *total += part;
        }
        block += acc.block;
    }

    let t = cfg.trials as f64;
    let z: Vec<Estimate> = ones
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            Estimate {
                value: p,
                std_error: proportion_std_error(p, cfg.trials),
            }
        })
        .collect();
    let pair_estimates: Vec<PairEstimate> = pairs
        .iter()
        .zip(&both)
        .map(|(&(s, t_idx), &c)| PairEstimate {
            s,
            t: t_idx,
            both_count: c,
            rho: bernoulli_rho_estimate(
                c as f64 / t,
                z[s].value,
                z[t_idx].value,
                cfg.trials,
            ),
        })
        .collect();
    let (block_count, block_error) = if spec.is_some() {
        let p = block as f64 / t;
        (
            Some(block),
            Some(Estimate {
                value: p,
                std_error: proportion_std_error(p, cfg.trials),
            }),
        )
    } else {
        (None, None)
    };

    Ok(McReport {
        version: MC_VERSION,
        epsilon: cfg.param.epsilon(),
        depth: cfg.depth,
        trials: cfg.trials,
        seed: cfg.seed,
        erase_counts: ones,
        z,
        pairs: pair_estimates,
        block_count,
        block_error,
    })
}
