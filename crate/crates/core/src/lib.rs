//! Variational solver for the discrete Orlicz-Minkowski problem
//! `lambda phi(h_K) dS_K = f dH^{n-1}` in dimensions 2 and 3.

// `!(x > 0.0)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod center;
pub mod continuation;
pub mod error;
pub mod extremal;
pub mod geometry;
pub mod hull;
pub mod kernel;
pub mod quadrature;
pub mod sphere_grid;
pub mod verification;

pub use error::{Error, Result};
