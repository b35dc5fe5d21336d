//! Covariance and correlation recursions for erasure indicators.
//!
//! For channels `s`, `t` of depth `n` the covariance `C_n(s,t)` and the
//! correlation coefficient `ρ_n(s,t)` of their erasure indicators obey
//! four-case single-step recursions in the last signs of `s` and `t`,
//! driven by the previous-level `Z` values. Writing `f(x) = √(x/(1+x))`
//! and `g(x) = √((1−x)/(1+x))`, and picking `x = Z` for a `+` step and
//! `x = Z̄` for a `−` step, every case collapses to
//!
//! ```text
//! ρ_n = 2·f(x_s)·f(x_t)·ρ_{n−1}  ±  g(x_s)·g(x_t)·ρ_{n−1}²
//! ```
//!
//! with `+` when the two new signs agree and `−` when they differ. The
//! covariance step is `C_n = 2·w_s·w_t·C_{n−1} ± C_{n−1}²` with the same
//! sign rule and `w = Z` (`+`) or `Z̄` (`−`).
//!
//! `ρ` here is *defined* by this recursion rather than by the covariance
//! quotient: the quotient is 0/0 once a channel polarizes fully, while the
//! `f`/`g` forms (denominators `1 + x ≥ 1`) stay finite everywhere. Where
//! both variances are healthy the two definitions agree, which the test
//! suite checks against exhaustive enumeration.

use rayon::prelude::*;
use serde::Serialize;

use crate::index::{common_prefix_of_indices, Sign, SignSequence};
use crate::numeric::CompensatedSum;
use crate::polarize::ZTree;
use crate::{check_unit_range, Error, Result};

/// Full-matrix depth guard: the upper triangle at depth 14 is ~1.1 GB.
/// Deeper runs must use the pairwise evaluator.
pub const MAX_MATRIX_DEPTH: usize = 14;

/// Absolute tolerance used by the averaged and bound-style property checks.
pub const PROPERTY_TOL: f64 = 1e-12;

/// A recursion child may exceed its parent only by float noise; an excess
/// beyond this guard is a bug and aborts instead of being clamped away.
pub const MONOTONE_GUARD: f64 = 1e-9;

/// `[f(z), g(z), f(z̄), g(z̄)]` for one tree node.
///
/// The denominators `1 + x` never cancel, so these are accurate for any
/// `z`, including fully polarized nodes where `z·z̄` underflows.
#[inline]
fn node_coeffs(z: f64, zbar: f64) -> [f64; 4] {
    let dp = 1.0 + z;
    let dm = 1.0 + zbar;
    [
        (z / dp).sqrt(),
        (zbar / dp).sqrt(),
        (zbar / dm).sqrt(),
        (z / dm).sqrt(),
    ]
}

/// `(f, g)` for extending a node by the given sign bit (`1` = `+`).
#[inline]
fn pick(coeffs: &[f64; 4], bit: usize) -> (f64, f64) {
    if bit == 1 {
        (coeffs[0], coeffs[1])
    } else {
        (coeffs[2], coeffs[3])
    }
}

/// One recursion step given preselected coefficients.
///
/// Clamps to `[0, 1]` and to the parent value: the recursion guarantees the
/// child never exceeds the parent, so any excess is rounding noise (absorbed)
/// or a bug (aborted via [`MONOTONE_GUARD`]).
#[inline]
fn rho_child(r: f64, fs: f64, gs: f64, ft: f64, gt: f64, same_sign: bool) -> f64 {
    let lead = 2.0 * (fs * ft) * r;
    let quad = (gs * gt) * (r * r);
    let raw = if same_sign { lead + quad } else { lead - quad };
    let v = raw.clamp(0.0, 1.0);
    assert!(
        v <= r + MONOTONE_GUARD,
        "correlation child {v} exceeds parent {r}"
    );
    v.min(r)
}

/// Extends `ρ_{n−1}(s,t)` by one transform step with new signs
/// `(sign_s, sign_t)`, given the previous-level `Z` values of `s` and `t`.
pub fn rho_step(rho_prev: f64, z_s: f64, z_t: f64, sign_s: Sign, sign_t: Sign) -> Result<f64> {
    check_unit_range("rho_prev", rho_prev, 0.0, 1.0)?;
    check_unit_range("z_s", z_s, 0.0, 1.0)?;
    check_unit_range("z_t", z_t, 0.0, 1.0)?;
    let cs = node_coeffs(z_s, 1.0 - z_s);
    let ct = node_coeffs(z_t, 1.0 - z_t);
    let (fs, gs) = pick(&cs, sign_s.bit());
    let (ft, gt) = pick(&ct, sign_t.bit());
    Ok(rho_child(rho_prev, fs, gs, ft, gt, sign_s == sign_t))
}

/// Extends `C_{n−1}(s,t)` by one transform step.
///
/// `C_n = 2·w_s·w_t·C_{n−1} + C_{n−1}²` for equal new signs and
/// `2·w_s·w_t·C_{n−1} − C_{n−1}²` otherwise, where `w = Z` for `+` and
/// `Z̄` for `−`. On the diagonal (`s = t`, equal signs) this reproduces
/// `Var = Z·Z̄` at every level.
pub fn cov_step(cov_prev: f64, z_s: f64, z_t: f64, sign_s: Sign, sign_t: Sign) -> Result<f64> {
    // A covariance of {0,1} indicators can never exceed 1/4.
    check_unit_range("cov_prev", cov_prev, 0.0, 0.25)?;
    check_unit_range("z_s", z_s, 0.0, 1.0)?;
    check_unit_range("z_t", z_t, 0.0, 1.0)?;
    let ws = match sign_s {
        Sign::Plus => z_s,
        Sign::Minus => 1.0 - z_s,
    };
    let wt = match sign_t {
        Sign::Plus => z_t,
        Sign::Minus => 1.0 - z_t,
    };
    let quad = cov_prev * cov_prev;
    let v = if sign_s == sign_t {
        2.0 * ws * wt * cov_prev + quad
    } else {
        2.0 * ws * wt * cov_prev - quad
    };
    Ok(v.max(0.0))
}

fn check_pair_shape(tree: &ZTree, s: SignSequence, t: SignSequence) -> Result<usize> {
    if s.len() != t.len() {
        return Err(Error::LengthMismatch {
            left: s.len(),
            right: t.len(),
        });
    }
    if s.len() > tree.depth() {
        return Err(Error::Invalid(format!(
            "sequence length {} exceeds tree depth {}",
            s.len(),
            tree.depth()
        )));
    }
    Ok(s.len())
}

/// `ρ_n(s,t)` by walking the prefix chain: `ρ = 1` on the common prefix,
/// then one [`rho_step`] per remaining level. `O(n)` time, `O(1)` space.
pub fn rho_pair(tree: &ZTree, s: SignSequence, t: SignSequence) -> Result<f64> {
    let n = check_pair_shape(tree, s, t)?;
    Ok(rho_pair_by_index(tree, n, s.to_index(), t.to_index()))
}

pub(crate) fn rho_pair_by_index(tree: &ZTree, n: usize, u: usize, v: usize) -> f64 {
    if u == v {
        return 1.0;
    }
    let start = common_prefix_of_indices(n, u, v);
    let mut r = 1.0;
    for k in (start + 1)..=n {
        let pu = u >> (n - k + 1);
        let pv = v >> (n - k + 1);
        let bu = (u >> (n - k)) & 1;
        let bv = (v >> (n - k)) & 1;
        let cs = node_coeffs(tree.level(k - 1)[pu], tree.zbar_level(k - 1)[pu]);
        let ct = node_coeffs(tree.level(k - 1)[pv], tree.zbar_level(k - 1)[pv]);
        let (fs, gs) = pick(&cs, bu);
        let (ft, gt) = pick(&ct, bv);
        r = rho_child(r, fs, gs, ft, gt, bu == bv);
    }
    r
}

/// `C_n(s,t)` by the same walk, starting from `C₀ = ε·ε̄`.
pub fn cov_pair(tree: &ZTree, s: SignSequence, t: SignSequence) -> Result<f64> {
    let n = check_pair_shape(tree, s, t)?;
    let (u, v) = (s.to_index(), t.to_index());
    let mut c = tree.level(0)[0] * tree.zbar_level(0)[0];
    for k in 1..=n {
        let pu = u >> (n - k + 1);
        let pv = v >> (n - k + 1);
        let bu = (u >> (n - k)) & 1;
        let bv = (v >> (n - k)) & 1;
        let ws = if bu == 1 {
            tree.level(k - 1)[pu]
        } else {
            tree.zbar_level(k - 1)[pu]
        };
        let wt = if bv == 1 {
            tree.level(k - 1)[pv]
        } else {
            tree.zbar_level(k - 1)[pv]
        };
        let quad = c * c;
        c = if bu == bv {
            2.0 * ws * wt * c + quad
        } else {
            2.0 * ws * wt * c - quad
        };
        c = c.max(0.0);
    }
    Ok(c)
}

/// Reusable pairwise evaluator with per-node step coefficients cached, so
/// each step of a pair walk is a handful of multiplications instead of four
/// square roots. Produces bit-identical values to [`rho_pair`].
pub struct RhoEvaluator {
    depth: usize,
    levels: Vec<Vec<[f64; 4]>>,
}

impl RhoEvaluator {
    pub fn new(tree: &ZTree) -> RhoEvaluator {
        let levels = (0..tree.depth().max(1))
            .map(|k| {
                tree.level(k)
                    .iter()
                    .zip(tree.zbar_level(k))
                    .map(|(&z, &b)| node_coeffs(z, b))
                    .collect()
            })
            .collect();
        RhoEvaluator {
            depth: tree.depth(),
            levels,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `ρ_n` for channels given by index at depth `n ≤ self.depth()`.
    pub fn pair_indices(&self, n: usize, u: usize, v: usize) -> Result<f64> {
        if n > self.depth {
            return Err(Error::Invalid(format!(
                "depth {n} exceeds evaluator depth {}",
                self.depth
            )));
        }
        let channels = 1usize << n;
        if u >= channels || v >= channels {
            return Err(Error::Invalid(format!(
                "pair ({u}, {v}) out of range for {channels} channels"
            )));
        }
        Ok(self.pair_unchecked(n, u, v))
    }

    pub fn pair(&self, s: SignSequence, t: SignSequence) -> Result<f64> {
        if s.len() != t.len() {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: t.len(),
            });
        }
        self.pair_indices(s.len(), s.to_index(), t.to_index())
    }

    #[inline]
    pub(crate) fn pair_unchecked(&self, n: usize, u: usize, v: usize) -> f64 {
        if u == v {
            return 1.0;
        }
        let start = common_prefix_of_indices(n, u, v);
        let mut r = 1.0;
        for k in (start + 1)..=n {
            let pu = u >> (n - k + 1);
            let pv = v >> (n - k + 1);
            let bu = (u >> (n - k)) & 1;
            let bv = (v >> (n - k)) & 1;
            let (fs, gs) = pick(&self.levels[k - 1][pu], bu);
            let (ft, gt) = pick(&self.levels[k - 1][pv], bv);
            r = rho_child(r, fs, gs, ft, gt, bu == bv);
        }
        r
    }
}

#[inline]
fn tri_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Index of `(u, v)` with `u ≤ v` in a row-major upper triangle.
#[inline]
fn tri_index(dim: usize, u: usize, v: usize) -> usize {
    debug_assert!(u <= v && v < dim);
    u * dim - (u * u - u) / 2 + (v - u)
}

/// The full matrix `ρ_n(s,t)`, stored as its upper triangle (the recursion
/// is symmetric in `s` and `t`).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    depth: usize,
    epsilon: f64,
    dim: usize,
    tri: Vec<f64>,
}

/// Magic bytes opening the binary matrix format.
pub const MATRIX_MAGIC: [u8; 4] = *b"PRHO";
/// Version of the binary matrix format.
pub const MATRIX_FORMAT_VERSION: u32 = 1;

impl CorrelationMatrix {
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of channels per side (`2^depth`).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        let (a, b) = if u <= v { (u, v) } else { (v, u) };
        self.tri[tri_index(self.dim, a, b)]
    }

    /// Row-major upper triangle, diagonal included.
    pub fn triangle(&self) -> &[f64] {
        &self.tri
    }

    /// Binary layout: `b"PRHO"`, format version (u32), depth (u32),
    /// epsilon (f64), then the upper triangle row-major — all little-endian.
    pub fn write_to<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MATRIX_MAGIC)?;
        w.write_all(&MATRIX_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.depth as u32).to_le_bytes())?;
        w.write_all(&self.epsilon.to_le_bytes())?;
        for &x in &self.tri {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(mut r: R) -> Result<CorrelationMatrix> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MATRIX_MAGIC {
            return Err(Error::Parse(format!(
                "bad matrix magic {magic:?}; expected {MATRIX_MAGIC:?}"
            )));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != MATRIX_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported matrix format version {version}"
            )));
        }
        r.read_exact(&mut word)?;
        let depth = u32::from_le_bytes(word) as usize;
        if depth > MAX_MATRIX_DEPTH {
            return Err(Error::Capacity {
                what: "matrix depth",
                requested: depth,
                limit: MAX_MATRIX_DEPTH,
            });
        }
        let mut dword = [0u8; 8];
        r.read_exact(&mut dword)?;
        let epsilon = f64::from_le_bytes(dword);
        let dim = 1usize << depth;
        let mut tri = Vec::with_capacity(tri_len(dim));
        for _ in 0..tri_len(dim) {
            r.read_exact(&mut dword)?;
            tri.push(f64::from_le_bytes(dword));
        }
        Ok(CorrelationMatrix {
            depth,
            epsilon,
            dim,
            tri,
        })
    }
}

/// Builds each level's triangle from its parent and hands both to `visit`.
/// The work per level is proportional to that level's pair count, so the
/// whole run is `O(4^depth)` rather than `O(depth · 4^depth)`.
fn build_levels<F>(tree: &ZTree, depth: usize, mut visit: F) -> Vec<f64>
where
    F: FnMut(usize, &[f64], &[f64]),
{
    let mut cur = vec![1.0f64];
    for k in 1..=depth {
        let parent_dim = 1usize << (k - 1);
        let dim = 1usize << k;
        let coeffs: Vec<[f64; 4]> = tree
            .level(k - 1)
            .iter()
            .zip(tree.zbar_level(k - 1))
            .map(|(&z, &b)| node_coeffs(z, b))
            .collect();
        let mut next = vec![0.0f64; tri_len(dim)];
        let mut rows: Vec<(usize, &mut [f64])> = Vec::with_capacity(dim);
        let mut rest = next.as_mut_slice();
        for u in 0..dim {
            let (row, tail) = rest.split_at_mut(dim - u);
            rows.push((u, row));
            rest = tail;
        }
        let parent = &cur;
        let coeffs = &coeffs;
        let fill_row = move |(u, row): (usize, &mut [f64])| {
            let pu = u >> 1;
            let bu = u & 1;
            let (fs, gs) = pick(&coeffs[pu], bu);
            for (j, slot) in row.iter_mut().enumerate() {
                let v = u + j;
                if v == u {
                    *slot = 1.0;
                    continue;
                }
                let pv = v >> 1;
                let bv = v & 1;
                let r = parent[tri_index(parent_dim, pu, pv)];
                let (ft, gt) = pick(&coeffs[pv], bv);
                *slot = rho_child(r, fs, gs, ft, gt, bu == bv);
            }
        };
        if dim >= 512 {
            rows.into_par_iter().for_each(fill_row);
        } else {
            rows.into_iter().for_each(fill_row);
        }
        visit(k, parent, &next);
        cur = next;
    }
    cur
}

/// Builds the full `ρ` matrix at the tree's depth (guarded at
/// [`MAX_MATRIX_DEPTH`]).
pub fn build_rho_matrix(tree: &ZTree) -> Result<CorrelationMatrix> {
    let depth = tree.depth();
    if depth > MAX_MATRIX_DEPTH {
        return Err(Error::Capacity {
            what: "matrix depth",
            requested: depth,
            limit: MAX_MATRIX_DEPTH,
        });
    }
    let tri = build_levels(tree, depth, |_, _, _| {});
    Ok(CorrelationMatrix {
        depth,
        epsilon: tree.epsilon(),
        dim: 1usize << depth,
        tri,
    })
}

/// Outcome of one property check: `worst_slack` is the smallest observed
/// margin to the bound (negative = violation beyond tolerance).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Check {
    pub pass: bool,
    pub worst_slack: f64,
    pub checked: u64,
}

impl Check {
    fn from_slack(worst_slack: f64, checked: u64, tol: f64) -> Check {
        Check {
            pass: worst_slack >= -tol,
            worst_slack,
            checked,
        }
    }
}

/// Pass/fail report for the algebraic properties of the correlation
/// coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub depth: usize,
    pub epsilon: f64,
    /// `ρ(s,t) = ρ(t,s)`, exactly.
    pub symmetry: Check,
    /// `ρ(s,s) = 1`, exactly.
    pub unit_diagonal: Check,
    /// `ρ ≥ 0`.
    pub nonnegative: Check,
    /// `ρ(s,t) ≤ min{√(Z̄ₛZₜ/(ZₛZ̄ₜ)), √(ZₛZ̄ₜ/(Z̄ₛZₜ))}` where defined.
    pub z_ratio_bound: Check,
    /// `ρ(s,t) ≤ 1/3` off the diagonal.
    pub off_diagonal_third: Check,
    /// Every extension decreases `ρ`: child ≤ parent at every level.
    pub monotone: Check,
    /// Mean of the four children ≤ (2/3) · parent, per parent, every level.
    pub child_average: Check,
    /// Mean of the whole level-`depth` matrix ≤ (2/3)^depth (full mode only).
    pub grand_mean: Option<Check>,
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.symmetry.pass
            && self.unit_diagonal.pass
            && self.nonnegative.pass
            && self.z_ratio_bound.pass
            && self.off_diagonal_third.pass
            && self.monotone.pass
            && self.child_average.pass
            && self.grand_mean.is_none_or(|c| c.pass)
    }
}

#[derive(Debug, Clone, Copy)]
struct SlackAcc {
    worst: f64,
    count: u64,
}

impl SlackAcc {
    fn new() -> SlackAcc {
        SlackAcc {
            worst: f64::INFINITY,
            count: 0,
        }
    }

    #[inline]
    fn note(&mut self, slack: f64) {
        self.worst = self.worst.min(slack);
        self.count += 1;
    }

    fn merge(mut self, other: SlackAcc) -> SlackAcc {
        self.worst = self.worst.min(other.worst);
        self.count += other.count;
        self
    }

    fn check(&self, tol: f64) -> Check {
        let worst = if self.count == 0 { 0.0 } else { self.worst };
        Check::from_slack(worst, self.count, tol)
    }
}

/// Builds every level up to `depth` and checks all properties along the
/// way: parent/child monotonicity and child averaging at every transition,
/// plus bound, range, and mean checks on the final level.
pub fn check_properties(tree: &ZTree, depth: usize) -> Result<PropertyReport> {
    if depth > tree.depth() {
        return Err(Error::Invalid(format!(
            "check depth {depth} exceeds tree depth {}",
            tree.depth()
        )));
    }
    if depth > MAX_MATRIX_DEPTH {
        return Err(Error::Capacity {
            what: "property-check depth",
            requested: depth,
            limit: MAX_MATRIX_DEPTH,
        });
    }

    let mut monotone = SlackAcc::new();
    let mut child_avg = SlackAcc::new();

    let tri = build_levels(tree, depth, |k, parent, child| {
        let parent_dim = 1usize << (k - 1);
        let child_dim = 1usize << k;
        let get_child = |u: usize, v: usize| {
            let (a, b) = if u <= v { (u, v) } else { (v, u) };
            child[tri_index(child_dim, a, b)]
        };
        let level_result = (0..parent_dim)
            .into_par_iter()
            .map(|pu| {
                let mut mono = SlackAcc::new();
                let mut avg = SlackAcc::new();
                for pv in pu..parent_dim {
                    let r = parent[tri_index(parent_dim, pu, pv)];
                    let mut sum = 0.0;
                    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let c = get_child(2 * pu + a, 2 * pv + b);
                        mono.note(r - c);
                        sum += c;
                    }
                    avg.note(2.0 / 3.0 * r - sum / 4.0);
                }
                (mono, avg)
            })
            .reduce(
                || (SlackAcc::new(), SlackAcc::new()),
                |(m1, a1), (m2, a2)| (m1.merge(m2), a1.merge(a2)),
            );
        monotone = monotone.merge(level_result.0);
        child_avg = child_avg.merge(level_result.1);
    });

    // Final-level sweeps.
    let dim = 1usize << depth;
    let z = tree.level(depth);
    let zbar = tree.zbar_level(depth);
    let (diag, nonneg, third, ratio, offdiag_sum) = (0..dim)
        .into_par_iter()
        .map(|u| {
            let mut diag = SlackAcc::new();
            let mut nonneg = SlackAcc::new();
            let mut third = SlackAcc::new();
            let mut ratio = SlackAcc::new();
            let mut sum = CompensatedSum::default();
            for v in u..dim {
                let r = tri[tri_index(dim, u, v)];
                if v == u {
                    diag.note(-(r - 1.0).abs());
                    continue;
                }
                sum.add(r);
                nonneg.note(r);
                third.note(1.0 / 3.0 - r);
                let num = zbar[u] * z[v];
                let den = z[u] * zbar[v];
                if num > 0.0 && den > 0.0 {
                    let bound = (num / den).sqrt().min((den / num).sqrt());
                    ratio.note(bound - r);
                }
            }
            (diag, nonneg, third, ratio, sum)
        })
        .reduce(
            || {
                (
                    SlackAcc::new(),
                    SlackAcc::new(),
                    SlackAcc::new(),
                    SlackAcc::new(),
                    CompensatedSum::default(),
                )
            },
            |(d1, n1, t1, r1, mut s1), (d2, n2, t2, r2, s2)| {
                s1.merge(s2);
                (d1.merge(d2), n1.merge(n2), t1.merge(t2), r1.merge(r2), s1)
            },
        );

    // Ordered-pair grand mean: each off-diagonal triangle entry appears
    // twice, the diagonal is exactly `dim` ones.
    let total = 2.0 * offdiag_sum.value() + dim as f64;
    let mean = total / (dim as f64 * dim as f64);
    let mut grand_mean = SlackAcc::new();
    grand_mean.note((2.0f64 / 3.0).powi(depth as i32) - mean);

    // Symmetry of the recursion itself, on a strided sample of pairs.
    let mut symmetry = SlackAcc::new();
    let stride = (dim / 64).max(1);
    for u in (0..dim).step_by(stride) {
        for v in (u..dim).step_by(stride) {
            let a = rho_pair_by_index(tree, depth, u, v);
            let b = rho_pair_by_index(tree, depth, v, u);
            symmetry.note(-(a - b).abs());
        }
    }

    Ok(PropertyReport {
        depth,
        epsilon: tree.epsilon(),
        symmetry: symmetry.check(0.0),
        unit_diagonal: diag.check(0.0),
        nonnegative: nonneg.check(0.0),
        z_ratio_bound: ratio.check(PROPERTY_TOL),
        off_diagonal_third: third.check(PROPERTY_TOL),
        monotone: monotone.check(0.0),
        child_average: child_avg.check(PROPERTY_TOL),
        grand_mean: Some(grand_mean.check(PROPERTY_TOL)),
    })
}

/// Property checks on an explicit set of same-length pairs, for depths
/// where the full matrix is out of reach. The grand-mean check needs the
/// whole matrix and is reported as `None`.
pub fn check_properties_sampled(
    tree: &ZTree,
    pairs: &[(SignSequence, SignSequence)],
) -> Result<PropertyReport> {
    let mut symmetry = SlackAcc::new();
    let mut diag = SlackAcc::new();
    let mut nonneg = SlackAcc::new();
    let mut ratio = SlackAcc::new();
    let mut third = SlackAcc::new();
    let mut monotone = SlackAcc::new();
    let mut child_avg = SlackAcc::new();

    for &(s, t) in pairs {
        let n = check_pair_shape(tree, s, t)?;
        let r = rho_pair(tree, s, t)?;
        symmetry.note(-(r - rho_pair(tree, t, s)?).abs());
        diag.note(-(rho_pair(tree, s, s)? - 1.0).abs());
        nonneg.note(r);
        if s != t {
            third.note(1.0 / 3.0 - r);
        }
        let (u, v) = (s.to_index(), t.to_index());
        let num = tree.zbar_level(n)[u] * tree.level(n)[v];
        let den = tree.level(n)[u] * tree.zbar_level(n)[v];
        if num > 0.0 && den > 0.0 {
            let bound = (num / den).sqrt().min((den / num).sqrt());
            ratio.note(bound - r);
        }
        if n > 0 {
            // One step down: the sampled pair's parent and its four children.
            let (ps, pt) = (s.prefix(n - 1), t.prefix(n - 1));
            let parent = rho_pair(tree, ps, pt)?;
            let cs = node_coeffs(tree.z(ps), tree.zbar(ps));
            let ct = node_coeffs(tree.z(pt), tree.zbar(pt));
            let mut sum = 0.0;
            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let c = if ps == pt && a == b {
                    1.0
                } else {
                    let (fs, gs) = pick(&cs, a);
                    let (ft, gt) = pick(&ct, b);
                    rho_child(parent, fs, gs, ft, gt, a == b)
                };
                monotone.note(parent - c);
                sum += c;
            }
            child_avg.note(2.0 / 3.0 * parent - sum / 4.0);
        }
    }

    Ok(PropertyReport {
        depth: pairs.first().map_or(0, |(s, _)| s.len()),
        epsilon: tree.epsilon(),
        symmetry: symmetry.check(0.0),
        unit_diagonal: diag.check(0.0),
        nonnegative: nonneg.check(0.0),
        z_ratio_bound: ratio.check(PROPERTY_TOL),
        off_diagonal_third: third.check(PROPERTY_TOL),
        monotone: monotone.check(0.0),
        child_average: child_avg.check(PROPERTY_TOL),
        grand_mean: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarize::ChannelParam;
    use proptest::prelude::*;

    fn tree(eps: f64, depth: usize) -> ZTree {
        ZTree::build(&ChannelParam::new(eps).unwrap(), depth).unwrap()
    }

    fn seq(s: &str) -> SignSequence {
        s.parse().unwrap()
    }

    #[test]
    fn rho_step_preserves_diagonal() {
        for &a in &[0.0, 0.1, 0.3, 0.5, 0.77, 1.0] {
            for sign in [Sign::Minus, Sign::Plus] {
                let r = rho_step(1.0, a, a, sign, sign).unwrap();
                assert!((r - 1.0).abs() <= 1e-15, "a={a}: {r}");
            }
        }
    }

    #[test]
    fn rho_step_one_third_anchor() {
        let r = rho_step(1.0, 0.5, 0.5, Sign::Minus, Sign::Plus).unwrap();
        assert!((r - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn rho_step_annihilates_zero() {
        for &z in &[0.0, 0.25, 1.0] {
            assert_eq!(rho_step(0.0, z, 0.3, Sign::Plus, Sign::Minus).unwrap(), 0.0);
            assert_eq!(rho_step(0.0, z, 0.3, Sign::Minus, Sign::Minus).unwrap(), 0.0);
        }
    }

    #[test]
    fn rho_step_domain_errors() {
        assert!(rho_step(1.5, 0.5, 0.5, Sign::Plus, Sign::Plus).is_err());
        assert!(rho_step(0.5, -0.1, 0.5, Sign::Plus, Sign::Plus).is_err());
        assert!(rho_step(0.5, 0.5, f64::NAN, Sign::Plus, Sign::Plus).is_err());
    }

    #[test]
    fn cov_step_examples() {
        // Enumerating two fair indicators: Cov(E⁻, E⁺) = 1/4 − 3/16 = 1/16.
        let c = cov_step(0.25, 0.5, 0.5, Sign::Minus, Sign::Plus).unwrap();
        assert_eq!(c, 0.0625);
        // Same-sign step from the root variance reproduces Var(E⁺) = Z⁺·Z̄⁺.
        let c = cov_step(0.25, 0.5, 0.5, Sign::Plus, Sign::Plus).unwrap();
        assert_eq!(c, 0.1875);
        assert_eq!(c, 0.25 * 0.75);
        assert_eq!(
            cov_step(0.0, 0.3, 0.8, Sign::Minus, Sign::Plus).unwrap(),
            0.0
        );
        assert!(cov_step(0.3, 0.5, 0.5, Sign::Plus, Sign::Plus).is_err());
    }

    #[test]
    fn rho_pair_examples() {
        let t2 = tree(0.5, 2);
        assert_eq!(rho_pair(&t2, seq("-+"), seq("-+")).unwrap(), 1.0);
        let t1 = tree(0.5, 1);
        let r = rho_pair(&t1, seq("-"), seq("+")).unwrap();
        assert!((r - 1.0 / 3.0).abs() <= 1e-15);
        // Pinned by exhaustive enumeration of the four base indicators.
        let r = rho_pair(&t2, seq("-+"), seq("+-")).unwrap();
        assert!((r - 0.26984126984126977).abs() <= 1e-15);
        let r = rho_pair(&t2, seq("--"), seq("-+")).unwrap();
        assert!((r - 0.2927700218845599).abs() <= 1e-15);
        let t2b = tree(0.3, 2);
        let r = rho_pair(&t2b, seq("-+"), seq("+-")).unwrap();
        assert!((r - 0.23556130933163685).abs() <= 1e-15);
    }

    #[test]
    fn rho_pair_rejects_shape_errors() {
        let t = tree(0.5, 2);
        assert!(matches!(
            rho_pair(&t, seq("-"), seq("-+")),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(rho_pair(&t, seq("-+-"), seq("+-+")).is_err());
    }

    #[test]
    fn cov_pair_frozen_values() {
        let t = tree(0.5, 2);
        // All dyadic at ε = 1/2, hence exact in binary floating point.
        assert_eq!(cov_pair(&t, seq("-+"), seq("+-")).unwrap(), 0.06640625);
        assert_eq!(cov_pair(&t, seq("--"), seq("-+")).unwrap(), 0.03515625);
        assert_eq!(cov_pair(&t, seq("--"), seq("++")).unwrap(), 0.00390625);
        // Diagonal reproduces Var = Z·Z̄.
        assert_eq!(
            cov_pair(&t, seq("++"), seq("++")).unwrap(),
            0.0625 * 0.9375
        );
    }

    #[test]
    fn evaluator_matches_rho_pair() {
        for &eps in &[0.1, 0.5, 0.9] {
            let t = tree(eps, 6);
            let eval = RhoEvaluator::new(&t);
            for u in 0..64 {
                for v in u..64 {
                    let a = rho_pair_by_index(&t, 6, u, v);
                    let b = eval.pair_indices(6, u, v).unwrap();
                    assert_eq!(a, b, "eps={eps} ({u},{v})");
                }
            }
        }
    }

    #[test]
    fn matrix_small_cases() {
        let t0 = tree(0.5, 0);
        let m0 = build_rho_matrix(&t0).unwrap();
        assert_eq!(m0.dim(), 1);
        assert_eq!(m0.get(0, 0), 1.0);

        let t1 = tree(0.5, 1);
        let m1 = build_rho_matrix(&t1).unwrap();
        assert_eq!(m1.get(0, 0), 1.0);
        assert_eq!(m1.get(1, 1), 1.0);
        assert!((m1.get(0, 1) - 1.0 / 3.0).abs() <= 1e-15);
        assert_eq!(m1.get(0, 1), m1.get(1, 0));
    }

    #[test]
    fn matrix_matches_pairwise_path() {
        for &eps in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let t = tree(eps, 5);
            let m = build_rho_matrix(&t).unwrap();
            for u in 0..m.dim() {
                for v in 0..m.dim() {
                    let direct = rho_pair_by_index(&t, 5, u, v);
                    assert!(
                        (m.get(u, v) - direct).abs() <= 1e-12,
                        "eps={eps} ({u},{v})"
                    );
                }
            }
        }
    }

    #[test]
    fn matrix_depth_guard() {
        let t = tree(0.5, 15);
        assert!(matches!(
            build_rho_matrix(&t),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn matrix_binary_round_trip() {
        let t = tree(0.37, 4);
        let m = build_rho_matrix(&t).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PRHO");
        let back = CorrelationMatrix::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn matrix_read_rejects_garbage() {
        let err = CorrelationMatrix::read_from(&b"NOPE"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn property_report_small() {
        let t = tree(0.5, 1);
        let report = check_properties(&t, 1).unwrap();
        assert!(report.all_pass(), "{report:?}");
        // Mean of [1, 1/3; 1/3, 1] is exactly the 2/3 bound at depth 1.
        let gm = report.grand_mean.unwrap();
        assert!(gm.worst_slack.abs() <= 1e-12);
    }

    #[test]
    fn property_report_degenerate_channel() {
        let t = tree(0.0, 4);
        let m = build_rho_matrix(&t).unwrap();
        for u in 0..m.dim() {
            for v in (u + 1)..m.dim() {
                assert_eq!(m.get(u, v), 0.0);
            }
        }
        assert!(check_properties(&t, 4).unwrap().all_pass());
    }

    #[test]
    fn property_report_sampled_matches_full() {
        let t = tree(0.4, 6);
        let mut pairs = Vec::new();
        for u in 0..16 {
            for v in u..16 {
                pairs.push((
                    SignSequence::from_index(u * 4, 6).unwrap(),
                    SignSequence::from_index(v * 4 + 1, 6).unwrap(),
                ));
            }
        }
        let report = check_properties_sampled(&t, &pairs).unwrap();
        assert!(report.all_pass(), "{report:?}");
        assert!(report.grand_mean.is_none());
    }

    proptest! {
        #[test]
        fn rho_pair_symmetric_and_bounded(
            eps in 0.0f64..=1.0,
            n in 1usize..=6,
            a in any::<u32>(),
            b in any::<u32>(),
        ) {
            let t = tree(eps, n);
            let mask = (1u32 << n) - 1;
            let s = SignSequence::from_index((a & mask) as usize, n).unwrap();
            let q = SignSequence::from_index((b & mask) as usize, n).unwrap();
            let st = rho_pair(&t, s, q).unwrap();
            let ts = rho_pair(&t, q, s).unwrap();
            prop_assert_eq!(st, ts);
            prop_assert!((0.0..=1.0).contains(&st));
            if s != q {
                prop_assert!(st <= 1.0 / 3.0 + 1e-12);
            } else {
                prop_assert_eq!(st, 1.0);
            }
        }

        #[test]
        fn cov_routes_agree(
            eps in 0.01f64..=0.99,
            n in 1usize..=6,
            a in any::<u32>(),
            b in any::<u32>(),
        ) {
            let t = tree(eps, n);
            let mask = (1u32 << n) - 1;
            let s = SignSequence::from_index((a & mask) as usize, n).unwrap();
            let q = SignSequence::from_index((b & mask) as usize, n).unwrap();
            let var_s = t.z(s) * t.zbar(s);
            let var_t = t.z(q) * t.zbar(q);
            prop_assume!(var_s > 1e-12 && var_t > 1e-12);
            let via_rho = rho_pair(&t, s, q).unwrap() * (var_s * var_t).sqrt();
            let via_cov = cov_pair(&t, s, q).unwrap();
            prop_assert!((via_rho - via_cov).abs() <= 1e-10,
                "cov routes disagree: {} vs {}", via_rho, via_cov);
        }

        #[test]
        fn cov_pair_respects_bound(
            eps in 0.0f64..=1.0,
            n in 1usize..=6,
            a in any::<u32>(),
            b in any::<u32>(),
        ) {
            let t = tree(eps, n);
            let mask = (1u32 << n) - 1;
            let s = SignSequence::from_index((a & mask) as usize, n).unwrap();
            let q = SignSequence::from_index((b & mask) as usize, n).unwrap();
            let c = cov_pair(&t, s, q).unwrap();
            let bound = (t.zbar(s) * t.z(q)).min(t.z(s) * t.zbar(q));
            prop_assert!(c >= 0.0);
            prop_assert!(c <= bound + 1e-12, "cov {} above bound {}", c, bound);
        }
    }
}
