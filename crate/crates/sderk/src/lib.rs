//! Adaptive high-order Runge-Kutta integration of Ito stochastic
//! differential equations with strong solutions.
//!
//! Solutions of `dX = a dt + sum_k b_k dW^k` that are pointwise functions
//! of `(t, W)` admit a Taylor expansion in the time and Wiener increments.
//! Replacing the stage evaluations of any explicit Runge-Kutta method with
//! the effective increment
//!
//! ```text
//! f(x, t) = (dX/dt)(x, t) dt + sum_k b_k(x, t) dW^k
//! ```
//!
//! turns an ODE scheme of order `q` into an SDE scheme of strong order
//! `q/2`. Embedded pairs estimate the local error; rejected steps are
//! halved through a binary tree of Wiener increments whose conditional
//! mid-point sampling keeps the realized path intact, so the step size
//! adapts without biasing the solution.
//!
//! The crate provides the system abstraction and effective increment
//! ([`system`]), tableau handling with shipped 5(4), 8(7) and 9(8) pairs
//! ([`tableau`]), the Brownian tree ([`brownian`]), the adaptive stepper
//! ([`stepper`]), reproducible parallel ensembles ([`ensemble`]), two
//! quantum state diffusion examples with Lindblad master-equation oracles
//! ([`quantum`]), and an empirical strong-convergence harness
//! ([`convergence`]).

pub mod brownian;
pub mod convergence;
pub mod ensemble;
pub mod error;
pub mod quantum;
pub mod stepper;
pub mod system;
pub mod tableau;

pub use error::{Error, Result};

pub use brownian::{BrownianStack, GridScale, IncrementNode, RngStream};
pub use ensemble::{run_ensemble, EnsembleResult, Observable};
pub use stepper::{integrate_path, SolutionPath, StepController};
pub use system::{CoefficientForm, SdeSystem, StateVector};
pub use tableau::ButcherTableau;
