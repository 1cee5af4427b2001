//! Disagreement discrepancy: surrogate losses, their pointwise consistency
//! theory, trainable critics, an unlabeled-target error bound and its stress
//! tests, and disagreement-based shift detection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod bound;
pub mod consistency_lab;
pub mod critic;
pub mod data;
pub mod detect;
pub mod discrepancy;
pub mod error;
pub mod losses;
pub mod numeric;

pub use data::{Dataset, Origin};
pub use discrepancy::{FiniteShiftInstance, InstancePoint, LabelPair, Side, SurrogateKind};
pub use error::{Error, Result};
pub use losses::{LossKind, ProbVector};
