//! Polar-code construction and block-error-probability bounds.
//!
//! A code is an information set `A` of synthesized channels; under the
//! pessimistic erasure-equals-error model the block error event is the
//! union of the per-channel erasure events, so
//!
//! * union upper bound: `Σ_{s∈A} Z(s)`,
//! * trivial lower bound: `max_{s∈A} Z(s)`,
//! * inclusion–exclusion lower bound: the union sum minus all pairwise
//!   joint probabilities `Z_s·Z_t + ρ(s,t)·√(Z_s Z̄_s)·√(Z_t Z̄_t)`.
//!
//! The pair sum needs the correlation coefficients, evaluated pairwise in
//! `O(n)` each so the whole bound costs `O(n·|A|²)` without materializing
//! the `4^n` matrix.

use rayon::prelude::*;
use serde::Serialize;

use crate::correlation::{CorrelationMatrix, RhoEvaluator};
use crate::index::SignSequence;
use crate::polarize::ZTree;
use crate::{Error, Result};

/// A polar code instance: the channel, the depth, and the information set.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSpec {
    epsilon: f64,
    depth: usize,
    info: Vec<usize>,
}

impl CodeSpec {
    /// Validates and normalizes an information set (sorted, no duplicates,
    /// nonempty, all indices in range).
    pub fn new(epsilon: f64, depth: usize, mut info: Vec<usize>) -> Result<CodeSpec> {
        crate::check_unit_range("epsilon", epsilon, 0.0, 1.0)?;
        if info.is_empty() {
            return Err(Error::Invalid("information set is empty".into()));
        }
        let channels = 1usize
            .checked_shl(depth as u32)
            .filter(|_| depth <= crate::index::MAX_DEPTH)
            .ok_or(Error::Capacity {
                what: "code depth",
                requested: depth,
                limit: crate::index::MAX_DEPTH,
            })?;
        info.sort_unstable();
        for pair in info.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::Invalid(format!(
                    "duplicate channel index {}",
                    pair[0]
                )));
            }
        }
        if let Some(&last) = info.last() {
            if last >= channels {
                return Err(Error::Invalid(format!(
                    "channel index {last} out of range for {channels} channels"
                )));
            }
        }
        Ok(CodeSpec {
            epsilon,
            depth,
            info,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Information-set indices, ascending.
    pub fn info_set(&self) -> &[usize] {
        &self.info
    }

    pub fn k(&self) -> usize {
        self.info.len()
    }

    pub fn rate(&self) -> f64 {
        self.info.len() as f64 / (1u64 << self.depth) as f64
    }

    pub fn sequences(&self) -> impl Iterator<Item = SignSequence> + '_ {
        self.info
            .iter()
            .map(|&i| SignSequence::from_index(i, self.depth).expect("validated index"))
    }

    fn check_tree(&self, tree: &ZTree) -> Result<()> {
        if self.depth > tree.depth() || self.epsilon != tree.epsilon() {
            return Err(Error::Invalid(format!(
                "code (eps={}, n={}) does not match tree (eps={}, depth={})",
                self.epsilon,
                self.depth,
                tree.epsilon(),
                tree.depth()
            )));
        }
        Ok(())
    }
}

/// The `k` channels with smallest `Z`, ties broken by ascending index so
/// construction is deterministic.
pub fn construct_info_set(tree: &ZTree, k: usize) -> Result<CodeSpec> {
    let channels = 1usize << tree.depth();
    if k == 0 || k > channels {
        return Err(Error::Invalid(format!(
            "info-set size {k} out of range 1..={channels}"
        )));
    }
    let z = tree.level(tree.depth());
    let mut order: Vec<usize> = (0..channels).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    order.truncate(k);
    CodeSpec::new(tree.epsilon(), tree.depth(), order)
}

/// Number of information channels at rate `R`: `⌈N·R⌉`.
pub fn info_set_size(depth: usize, rate: f64) -> Result<usize> {
    if !(rate.is_finite() && 0.0 < rate && rate <= 1.0) {
        return Err(Error::domain("rate", rate, 0.0, 1.0));
    }
    let n = (1u64 << depth) as f64;
    Ok(((n * rate).ceil() as usize).clamp(1, 1 << depth))
}

/// `Σ_{s∈A} Z(s)`, summed in ascending index order. The raw sum may exceed
/// one; clamping is the caller's choice.
pub fn union_bound(spec: &CodeSpec, tree: &ZTree) -> Result<f64> {
    spec.check_tree(tree)?;
    let z = tree.level(spec.depth());
    Ok(spec.info.iter().map(|&i| z[i]).sum())
}

/// `max_{s∈A} Z(s)`.
pub fn trivial_lower(spec: &CodeSpec, tree: &ZTree) -> Result<f64> {
    spec.check_tree(tree)?;
    let z = tree.level(spec.depth());
    Ok(spec.info.iter().map(|&i| z[i]).fold(0.0, f64::max))
}

/// Inclusion–exclusion lower bound on the block error probability:
///
/// ```text
/// Σ_{s∈A} Z_s − Σ_{s<t∈A} [ Z_s·Z_t + ρ(s,t)·√(Z_s Z̄_s)·√(Z_t Z̄_t) ]
/// ```
///
/// For `|A| = 2` two-event inclusion–exclusion is an identity, so the bound
/// equals the exact union probability.
pub fn ie_lower(spec: &CodeSpec, tree: &ZTree, rho: &RhoEvaluator) -> Result<f64> {
    if rho.depth() < spec.depth() {
        return Err(Error::Invalid(format!(
            "evaluator depth {} is shallower than code depth {}",
            rho.depth(),
            spec.depth()
        )));
    }
    ie_lower_impl(spec, tree, |n, u, v| rho.pair_unchecked(n, u, v))
}

/// Same bound through a prebuilt matrix, as a cross-check path.
pub fn ie_lower_with_matrix(
    spec: &CodeSpec,
    tree: &ZTree,
    matrix: &CorrelationMatrix,
) -> Result<f64> {
    if matrix.depth() != spec.depth() || matrix.epsilon() != spec.epsilon() {
        return Err(Error::Invalid(format!(
            "matrix (eps={}, n={}) does not match code (eps={}, n={})",
            matrix.epsilon(),
            matrix.depth(),
            spec.epsilon(),
            spec.depth()
        )));
    }
    ie_lower_impl(spec, tree, |_, u, v| matrix.get(u, v))
}

fn ie_lower_impl<F>(spec: &CodeSpec, tree: &ZTree, rho_of: F) -> Result<f64>
where
    F: Fn(usize, usize, usize) -> f64 + Sync,
{
    spec.check_tree(tree)?;
    let n = spec.depth();
    let z = tree.level(n);
    let zbar = tree.zbar_level(n);
    let members = &spec.info;
    let zs: Vec<f64> = members.iter().map(|&i| z[i]).collect();
    let sd: Vec<f64> = members.iter().map(|&i| (z[i] * zbar[i]).sqrt()).collect();

    // One partial sum per member row, combined in fixed order afterwards so
    // the result does not depend on the worker count.
    let partials: Vec<f64> = (0..members.len())
        .into_par_iter()
        .map(|a| {
            let u = members[a];
            let mut acc = 0.0;
            for b in (a + 1)..members.len() {
                let v = members[b];
                acc += zs[a] * zs[b] + rho_of(n, u, v) * sd[a] * sd[b];
            }
            acc
        })
        .collect();

    let union: f64 = zs.iter().sum();
    Ok(union - partials.iter().sum::<f64>())
}

/// `P(N, R, ε)`: the sum of the `⌈N·R⌉` smallest entries of `Z_n`, i.e. the
/// union bound of the code constructed at rate `R`.
pub fn p_n_r_eps(tree: &ZTree, rate: f64) -> Result<f64> {
    let spec = construct_info_set(tree, info_set_size(tree.depth(), rate)?)?;
    union_bound(&spec, tree)
}

/// The asymptotic sandwich `(1−δ)·P(N,(1−δ)R,ε) ≤ P_e ≤ P(N,R,ε)`,
/// reported for context; it is an asymptotic statement, not a per-instance
/// bound.
pub fn theorem3_sandwich(tree: &ZTree, rate: f64, delta: f64) -> Result<(f64, f64)> {
    crate::check_unit_range("delta", delta, 0.0, 1.0)?;
    let upper = p_n_r_eps(tree, rate)?;
    let shrunk = ((1.0 - delta) * rate).max(f64::MIN_POSITIVE);
    let lower = (1.0 - delta) * p_n_r_eps(tree, shrunk)?;
    Ok((lower, upper))
}

/// All bounds for one code instance, plus the exact probability when an
/// oracle provided one. Raw sums are reported as-is; the `_clamped` fields
/// give the `[0, 1]` view.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub epsilon: f64,
    pub n: usize,
    pub rate: f64,
    pub k: usize,
    pub union_upper: f64,
    pub trivial_lower: f64,
    pub ie_lower: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
    pub union_upper_clamped: f64,
    pub ie_lower_clamped: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem3_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem3_upper: Option<f64>,
}

pub fn bounds_report(
    spec: &CodeSpec,
    tree: &ZTree,
    rho: &RhoEvaluator,
    exact: Option<f64>,
) -> Result<BoundsReport> {
    let union = union_bound(spec, tree)?;
    let trivial = trivial_lower(spec, tree)?;
    let ie = ie_lower(spec, tree, rho)?;
    Ok(BoundsReport {
        epsilon: spec.epsilon(),
        n: spec.depth(),
        rate: spec.rate(),
        k: spec.k(),
        union_upper: union,
        trivial_lower: trivial,
        ie_lower: ie,
        exact,
        union_upper_clamped: union.min(1.0),
        ie_lower_clamped: ie.clamp(0.0, 1.0),
        theorem3_lower: None,
        theorem3_upper: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarize::ChannelParam;

    fn tree(eps: f64, depth: usize) -> ZTree {
        ZTree::build(&ChannelParam::new(eps).unwrap(), depth).unwrap()
    }

    #[test]
    fn construct_examples() {
        let t1 = tree(0.5, 1);
        assert_eq!(construct_info_set(&t1, 1).unwrap().info_set(), &[1]);
        assert_eq!(construct_info_set(&t1, 2).unwrap().info_set(), &[0, 1]);
        let t2 = tree(0.5, 2);
        // Z = [0.9375, 0.5625, 0.4375, 0.0625]: two smallest are ++ and +-.
        assert_eq!(construct_info_set(&t2, 2).unwrap().info_set(), &[2, 3]);
        assert!(construct_info_set(&t2, 0).is_err());
        assert!(construct_info_set(&t2, 5).is_err());
    }

    #[test]
    fn construction_tie_break_is_by_index() {
        // ε = 0 gives an all-zero Z level: selection must be the lowest indices.
        let t = tree(0.0, 3);
        assert_eq!(construct_info_set(&t, 3).unwrap().info_set(), &[0, 1, 2]);
    }

    #[test]
    fn union_and_trivial_examples() {
        let t1 = tree(0.5, 1);
        let plus = CodeSpec::new(0.5, 1, vec![1]).unwrap();
        let both = CodeSpec::new(0.5, 1, vec![0, 1]).unwrap();
        assert_eq!(union_bound(&plus, &t1).unwrap(), 0.25);
        assert_eq!(union_bound(&both, &t1).unwrap(), 1.0);
        assert_eq!(trivial_lower(&both, &t1).unwrap(), 0.75);
        assert_eq!(trivial_lower(&plus, &t1).unwrap(), 0.25);

        let t0 = tree(0.0, 1);
        let spec0 = CodeSpec::new(0.0, 1, vec![0, 1]).unwrap();
        assert_eq!(union_bound(&spec0, &t0).unwrap(), 0.0);

        let t2 = tree(0.5, 2);
        let spec2 = CodeSpec::new(0.5, 2, vec![2, 3]).unwrap();
        assert_eq!(trivial_lower(&spec2, &t2).unwrap(), 0.4375);
    }

    #[test]
    fn code_spec_validation() {
        assert!(CodeSpec::new(0.5, 2, vec![]).is_err());
        assert!(CodeSpec::new(0.5, 2, vec![1, 1]).is_err());
        assert!(CodeSpec::new(0.5, 2, vec![4]).is_err());
        assert!(CodeSpec::new(1.5, 2, vec![0]).is_err());
        let spec = CodeSpec::new(0.5, 2, vec![3, 0]).unwrap();
        assert_eq!(spec.info_set(), &[0, 3]);
        // Mismatched tree is rejected.
        let other = tree(0.4, 2);
        assert!(union_bound(&spec, &other).is_err());
    }

    #[test]
    fn ie_lower_two_event_exactness_n1() {
        // E⁺ ⊆ E⁻, so the union probability is exactly Z⁻ = 0.75 and
        // two-event inclusion–exclusion reproduces it.
        let t = tree(0.5, 1);
        let rho = RhoEvaluator::new(&t);
        let spec = CodeSpec::new(0.5, 1, vec![0, 1]).unwrap();
        let ie = ie_lower(&spec, &t, &rho).unwrap();
        assert!((ie - 0.75).abs() <= 1e-15);
    }

    #[test]
    fn ie_lower_singleton_is_z() {
        let t = tree(0.3, 3);
        let rho = RhoEvaluator::new(&t);
        let spec = CodeSpec::new(0.3, 3, vec![5]).unwrap();
        assert_eq!(ie_lower(&spec, &t, &rho).unwrap(), t.level(3)[5]);
    }

    #[test]
    fn ie_lower_matrix_route_agrees() {
        for &eps in &[0.2, 0.5, 0.8] {
            let t = tree(eps, 6);
            let rho = RhoEvaluator::new(&t);
            let matrix = crate::correlation::build_rho_matrix(&t).unwrap();
            let spec = construct_info_set(&t, 16).unwrap();
            let a = ie_lower(&spec, &t, &rho).unwrap();
            let b = ie_lower_with_matrix(&spec, &t, &matrix).unwrap();
            assert_eq!(a, b, "eps={eps}");
        }
    }

    #[test]
    fn p_n_r_eps_examples() {
        let t1 = tree(0.5, 1);
        assert_eq!(p_n_r_eps(&t1, 0.5).unwrap(), 0.25);
        let t2 = tree(0.5, 2);
        assert_eq!(p_n_r_eps(&t2, 0.5).unwrap(), 0.0625 + 0.4375);
        // R = 1 sums the whole level: N·ε by conservation.
        let full = p_n_r_eps(&t2, 1.0).unwrap();
        assert!((full - 4.0 * 0.5).abs() <= 1e-12);
        assert!(p_n_r_eps(&t2, 0.0).is_err());
        assert!(p_n_r_eps(&t2, 1.1).is_err());
    }

    #[test]
    fn union_equals_p_n_r_eps_bitwise() {
        for &eps in &[0.1, 0.5, 0.9] {
            let t = tree(eps, 8);
            for &rate in &[0.1, 0.25, 0.4, 0.9] {
                let k = info_set_size(8, rate).unwrap();
                let spec = construct_info_set(&t, k).unwrap();
                assert_eq!(
                    union_bound(&spec, &t).unwrap(),
                    p_n_r_eps(&t, rate).unwrap()
                );
            }
        }
    }

    #[test]
    fn sandwich_orders_properly() {
        let t = tree(0.5, 8);
        let (lo, hi) = theorem3_sandwich(&t, 0.25, 0.1).unwrap();
        assert!(lo <= hi);
        assert!(lo >= 0.0);
    }

    #[test]
    fn report_fields_consistent() {
        let t = tree(0.5, 6);
        let rho = RhoEvaluator::new(&t);
        let spec = construct_info_set(&t, 16).unwrap();
        let report = bounds_report(&spec, &t, &rho, None).unwrap();
        assert_eq!(report.k, 16);
        assert_eq!(report.rate, 0.25);
        assert!(report.trivial_lower <= report.ie_lower);
        assert!(report.ie_lower <= report.union_upper);
        assert!(report.union_upper_clamped <= 1.0);
        assert!(report.ie_lower_clamped >= 0.0);
    }
}
