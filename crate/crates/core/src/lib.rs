//! Privacy-preserving feature extraction over a simulated leveled CKKS
//! scheme, with client-resolved comparisons.

// `!(a > b)` deliberately rejects NaN; stencils index several grids in step.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::redundant_guards,
    clippy::should_implement_trait
)]

pub mod error;
pub mod graph;
pub mod image;
pub mod kernels;
pub mod pipeline;
pub mod protocol;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
