//! The user guide, one module per chapter.
//!
//! The chapter sources live in `book/src` and are rendered with mdbook
//! (`mdbook build book`). Including them here puts the whole guide on
//! docs.rs and, more importantly, makes `cargo test --doc` compile and
//! run every code sample in the book, so the prose can never drift from
//! the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/indexing.md")]
pub mod indexing {}

#[doc = include_str!("../../../book/src/polarization.md")]
pub mod polarization {}

#[doc = include_str!("../../../book/src/correlation.md")]
pub mod correlation {}

#[doc = include_str!("../../../book/src/bounds.md")]
pub mod bounds {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
