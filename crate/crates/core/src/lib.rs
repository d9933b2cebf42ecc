//! Random Jacobi matrices, their characteristic polynomials, and the extremes
//! of the centered log-modulus field on the bulk of the spectrum.
//!
//! The Jacobi matrix `J_n` carries the diagonal `b_1..b_n` and the
//! off-diagonal `a_1..a_{n-1}`. Minors are indexed so that `q_k` is the
//! determinant built from `b_1..b_k` and `a_1..a_{k-1}`:
//!
//! ```text
//! q_k(z) = (z sqrt(n) - b_k) q_{k-1}(z) - a_{k-1}^2 q_{k-2}(z),   q_0 = 1, q_{-1} = 0
//! ```
//!
//! so that `q_n(z) = n^{n/2} p_n(z)` with `p_n(z) = det(z - J_n / sqrt(n))`.

// `!(x > 0.0)` rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod extremes;
pub mod numerics;
pub mod oracle;
pub mod recursion;
pub mod regimes;
pub mod seed;
pub mod variance;

pub use ensemble::{EnsembleKind, EnsembleSpec, GenericFamily, JacobiCoefficients};
pub use error::{Error, Result};
pub use seed::SeedSpec;
