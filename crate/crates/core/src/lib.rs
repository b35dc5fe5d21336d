//! Exact second-order statistics of polarized binary erasure channels.
//!
//! Applying the polar transform `n` times to a BEC(ε) synthesizes `2^n`
//! erasure channels. This crate computes, exactly (up to f64 rounding):
//!
//! * the erasure probability `Z` of every synthesized channel, via the
//!   single-step recursion `z⁻ = 2z − z²`, `z⁺ = z²` ([`polarize`]);
//! * the covariance and correlation coefficient of every pair of erasure
//!   indicators, via four-case single-step recursions ([`correlation`]);
//! * union upper bounds and inclusion–exclusion lower bounds on the block
//!   error probability of polar codes built on those channels ([`bounds`]).
//!
//! Everything is cross-checked against ground truth: exhaustive enumeration
//! of base erasure patterns for small depths and seeded Monte Carlo for
//! larger ones ([`oracle`]).
//!
//! The `polarbec` binary exposes all of this as a command-line tool; see
//! the [`cli`] module and the guide under [`guide`].
//!
//! ```
//! use polar_bec::polarize::{ChannelParam, ZTree};
//! use polar_bec::correlation::rho_pair;
//! use polar_bec::index::SignSequence;
//!
//! let tree = ZTree::build(&ChannelParam::new(0.5)?, 2)?;
//! assert_eq!(tree.level(2), &[0.9375, 0.5625, 0.4375, 0.0625]);
//!
//! let s: SignSequence = "-+".parse()?;
//! let t: SignSequence = "+-".parse()?;
//! let rho = rho_pair(&tree, s, t)?;
//! assert!((rho - 0.26984126984126977).abs() < 1e-15);
//! # Ok::<(), polar_bec::Error>(())
//! ```

pub mod bounds;
pub mod cli;
pub mod correlation;
pub mod guide;
pub mod index;
pub mod oracle;
pub mod polarize;

mod numeric;

/// Errors shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A real-valued argument fell outside its mathematical domain.
    #[error("{name} = {value} is outside [{min}, {max}]")]
    Domain {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    /// Two sign sequences were required to have equal length.
    #[error("sign sequences have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    /// The request exceeds a capacity guard.
    #[error("{what} {requested} exceeds the supported limit {limit}")]
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    /// Malformed textual input (sign strings, numbers, config files).
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally invalid argument (empty info set, duplicate index, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, min: f64, max: f64) -> Self {
        Error::Domain {
            name,
            value,
            min,
            max,
        }
    }
}

/// Checks that `value` is a finite real in `[min, max]`.
pub(crate) fn check_unit_range(name: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_finite() && (min..=max).contains(&value) {
        Ok(())
    } else {
        Err(Error::domain(name, value, min, max))
    }
}
