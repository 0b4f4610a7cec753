//! Independent ground truth: the analytic 1D quadratic solution, a
//! continuous-time Riccati/LQR solver, and a grid value-iteration oracle.
//!
//! Convention bridge: these solvers take the running cost as
//! `c = x^T Q x + u^T R u` (the form used by the 1D derivation), while the
//! catalog's Linear action cost is `1/2 u^T R_t u`. The same controller comes
//! out of both with `R_t = 2 R`; `tests::convention_bridge` pins this down.

mod grid;
mod riccati;

pub use grid::{uniform_action_grid, value_iteration, GridPolicy, ValueGrid, ValueIterationOptions};
pub use riccati::{analytic_theta_1d, care_solve, lqr_policy, RiccatiSolution};
