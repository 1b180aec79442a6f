//! Stochastic momentum ADMM for nonconvex, nonsmooth, linearly constrained
//! composite problems
//!
//! ```text
//! min_{x,y}  E[f(x, xi)] + h(y)   s.t.  A x + B y = c,
//! ```
//!
//! where the smooth term is reachable only through a stochastic first-order
//! oracle. The solver is single loop: a proximal y-update, a linearized (or
//! exact) x-update, a dual ascent step and a momentum gradient estimator
//! that recycles one sample pair per iteration. Constant and dynamic
//! parameter schedules are provided, together with stationarity diagnostics,
//! classic stochastic ADMM baselines sharing the same update code, benchmark
//! problem constructors, and a plug-and-play variant that swaps the proximal
//! operator for a gradient-step denoiser.

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod kkt;
pub mod linalg;
pub mod linops;
pub mod oracle;
pub mod pnp;
pub mod problems;
pub mod prox;
pub mod schedules;
pub mod solver;

pub use error::{Error, Result};
