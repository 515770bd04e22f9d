// NaN-aware comparisons read `!(r <= tol)` on purpose; tests spell out index arithmetic.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::erasing_op, clippy::identity_op))]

pub mod algebra;
pub mod algebroid;
pub mod cartan;
pub mod catalog;
pub mod development;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod jet;
pub mod models;
pub mod ode;
pub mod report;
pub mod sampling;
pub mod scenario;
pub mod transport;

pub use error::{Error, Result};
