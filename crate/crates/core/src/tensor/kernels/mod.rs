//! Forward and adjoint kernels on raw slices.
//!
//! These are the numeric cores behind the tape operations. They never
//! allocate more than their outputs and parallelize over disjoint output
//! blocks only.

pub mod conv;
pub mod norm;
pub mod reduce;
pub mod sample;
