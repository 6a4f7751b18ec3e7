//! Estimation of the wave-propagation velocity of a 1D medium from a single
//! noisy displacement snapshot.
//!
//! The forward problem (the 1D wave equation with a sinusoidal initial
//! displacement and fixed ends) is solved by a physics-informed neural
//! network: a small dense network `u(x,t)` trained with L-BFGS so that its
//! PDE residual, initial-condition and boundary-condition mean squared
//! errors vanish. The inverse problem (recovering the wave speed `c`) is
//! solved by Bayesian optimization: a Gaussian-process surrogate over the
//! misfit between the model snapshot and the observation, queried through
//! an upper-confidence-bound acquisition rule.
//!
//! Module map:
//! - [`wave`] — analytical ground truth, snapshot synthesis, noise injection
//! - [`field`] — the dense surrogate field with exact second derivatives
//!   (forward 2-jets) and exact parameter gradients (reverse accumulation)
//! - [`lbfgs`] — limited-memory BFGS with a strong-Wolfe line search
//! - [`pinn`] — collocation sampling, the composite loss, training
//! - [`gp`] — Gaussian-process regression with an RBF kernel
//! - [`bo`] — the sequential Bayesian-optimization loop and target function

pub mod bo;
pub mod error;
pub mod field;
pub mod gp;
pub mod lbfgs;
pub mod pinn;
pub mod seed;
pub mod wave;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
