//! Sign-sequence indexing of synthesized channels.
//!
//! Each of the `2^n` channels produced by `n` transform steps is named by a
//! word over `{-, +}`: the first sign says whether the first step kept the
//! worse (`-`) or the better (`+`) half, and so on. This module fixes the
//! canonical mapping between those words and integer indices and computes
//! common prefixes.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Maximum supported sequence length (sequences are packed into a `u32`).
pub const MAX_DEPTH: usize = 30;

/// One application of the polar transform: keep the degraded (`Minus`) or
/// the upgraded (`Plus`) synthesized channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn as_char(self) -> char {
        match self {
            Sign::Minus => '-',
            Sign::Plus => '+',
        }
    }

    /// `'+' -> 1`, `'-' -> 0`; the bit the sign contributes to an index.
    pub fn bit(self) -> usize {
        match self {
            Sign::Minus => 0,
            Sign::Plus => 1,
        }
    }

    pub fn from_bit(bit: usize) -> Sign {
        if bit & 1 == 1 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A word over `{-, +}` of length up to [`MAX_DEPTH`], the first sign
/// applied first.
///
/// Packed into a bit word: sign `i` (1-based) sits at bit `n - i` with
/// `'+' -> 1`, so the first sign is the most significant bit and the
/// all-plus word maps to the largest index of its length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignSequence {
    len: u8,
    bits: u32,
}

impl SignSequence {
    /// The empty sequence (the root channel).
    pub const EMPTY: SignSequence = SignSequence { len: 0, bits: 0 };

    fn check_len(len: usize) -> Result<()> {
        if len > MAX_DEPTH {
            return Err(Error::Capacity {
                what: "sign sequence length",
                requested: len,
                limit: MAX_DEPTH,
            });
        }
        Ok(())
    }

    pub fn from_signs(signs: &[Sign]) -> Result<SignSequence> {
        Self::check_len(signs.len())?;
        let mut bits = 0u32;
        for &s in signs {
            bits = (bits << 1) | s.bit() as u32;
        }
        Ok(SignSequence {
            len: signs.len() as u8,
            bits,
        })
    }

    /// Inverse of [`SignSequence::to_index`] for sequences of length `n`.
    pub fn from_index(index: usize, n: usize) -> Result<SignSequence> {
        Self::check_len(n)?;
        if index >= (1usize << n) {
            return Err(Error::Invalid(format!(
                "index {index} out of range for {} channels of depth {n}",
                1usize << n
            )));
        }
        Ok(SignSequence {
            len: n as u8,
            bits: index as u32,
        })
    }

    /// The integer index of this sequence: sign `i` contributes bit `n - i`
    /// (first sign most significant), `'+' -> 1`. A bijection onto
    /// `{0, ..., 2^n - 1}` for each length `n`.
    pub fn to_index(self) -> usize {
        self.bits as usize
    }

    pub fn len(self) -> usize {
        self.len as usize
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    /// Sign at 0-based position `i` (position 0 is applied first).
    pub fn sign(self, i: usize) -> Sign {
        assert!(i < self.len(), "sign position {i} out of range");
        Sign::from_bit((self.bits >> (self.len() - 1 - i)) as usize)
    }

    pub fn signs(self) -> impl Iterator<Item = Sign> {
        (0..self.len()).map(move |i| self.sign(i))
    }

    /// This sequence extended by one more transform step.
    pub fn child(self, sign: Sign) -> Result<SignSequence> {
        Self::check_len(self.len() + 1)?;
        Ok(SignSequence {
            len: self.len + 1,
            bits: (self.bits << 1) | sign.bit() as u32,
        })
    }

    /// The prefix of length `k`.
    pub fn prefix(self, k: usize) -> SignSequence {
        assert!(k <= self.len(), "prefix length {k} out of range");
        SignSequence {
            len: k as u8,
            bits: self.bits >> (self.len() - k),
        }
    }

    /// The sequence with every sign negated.
    pub fn negated(self) -> SignSequence {
        let mask = if self.len == 0 {
            0
        } else {
            u32::MAX >> (32 - self.len() as u32)
        };
        SignSequence {
            len: self.len,
            bits: !self.bits & mask,
        }
    }

    /// Length of the longest common prefix of `self` and `other`.
    ///
    /// Both sequences must have the same length; equals that length iff the
    /// sequences are identical.
    pub fn common_prefix_len(self, other: SignSequence) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(common_prefix_of_indices(
            self.len(),
            self.to_index(),
            other.to_index(),
        ))
    }
}

/// Common-prefix length of two same-depth channels given by index.
pub(crate) fn common_prefix_of_indices(n: usize, u: usize, v: usize) -> usize {
    let diff = (u ^ v) as u64;
    if diff == 0 {
        n
    } else {
        // Highest differing bit b corresponds to sign position n - b.
        n - 1 - (63 - diff.leading_zeros() as usize)
    }
}

impl fmt::Display for SignSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.signs() {
            write!(f, "{}", s.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for SignSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<SignSequence> {
        Self::check_len(s.len())?;
        let mut bits = 0u32;
        let mut len = 0u8;
        for c in s.chars() {
            let bit = match c {
                '-' => 0,
                '+' => 1,
                other => {
                    return Err(Error::Parse(format!(
                        "invalid sign character {other:?}; expected '-' or '+'"
                    )))
                }
            };
            bits = (bits << 1) | bit;
            len += 1;
        }
        Ok(SignSequence { len, bits })
    }
}
