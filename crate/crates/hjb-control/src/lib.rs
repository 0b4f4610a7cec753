//! Continuous-time optimal feedback control learned from the
//! Hamilton-Jacobi-Bellman equation.
//!
//! The crate fits a differential value network to the HJB equality for
//! control-affine systems under strictly convex action costs. The convex
//! conjugate of the action cost removes the inner minimization from the HJB
//! and yields the optimal policy in closed form, `u* = grad g*(-B^T V_x)`;
//! barrier-shaped costs make that policy respect actuator limits by
//! construction. Training anneals the discounting from short- to far-sighted
//! to track the physical HJB solution branch.
//!
//! Modules:
//! - [`diffnet`]: value network with joint value/Jacobian forward and exact
//!   parameter gradients.
//! - [`action_cost`]: catalog of strictly convex action costs, their
//!   conjugates and closed-form policies, plus scale/shift combinators.
//! - [`dynamics`]: benchmark systems and the fixed-step RK4 integrator.
//! - [`trainer`]: HJB residual loss, penalties and the discount curriculum.
//! - [`controller`]: closed-form feedback policy, rollouts and evaluation.
//! - [`baselines`]: analytic 1D solutions, Riccati/LQR and a grid
//!   value-iteration oracle.
//! - [`config`] / [`experiment`]: experiment configuration and bundles
//!   behind the `hjbctl` CLI.

pub mod action_cost;
pub mod baselines;
pub mod config;
pub mod controller;
pub mod diffnet;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod seeds;
pub mod trainer;
pub mod value;

pub use error::{Error, Result};
