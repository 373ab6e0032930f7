//! Numerical laboratory for the `σ_2`-type geodesic operators `F_k` on
//! extended symmetric matrices and the associated conformal geodesic equation.
//!
//! * [`symfun`]: `σ_k`, Newton transformations, Gårding cones.
//! * [`gsop`]: the operators `F_k`, their gradient and the quotient `H_k`.
//! * [`certify`]: sampled concavity/convexity certification and identity checks.
//! * [`grid`]: space-time lattice on `[0,1] × T^d`, jets, conformal quantities.
//! * [`solver`]: damped-Newton continuity method for `F(u_tt, A_u, ∇u_t) = s·f`.
//! * [`functional`]: the conformal `𝓕` functional, its first variation and
//!   its second derivative along approximate geodesics.

pub mod certify;
pub mod error;
pub mod functional;
pub mod grid;
pub mod gsop;
pub mod solver;
pub mod symfun;

pub use error::{Error, Result};
