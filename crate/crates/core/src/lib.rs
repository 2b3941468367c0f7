//! Policy iteration and Newton solvers for second-order mean field games on
//! the periodic unit torus, in finite-horizon and ergodic form.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod coupling;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod linalg;
pub mod linear_pde;
pub mod newton;
pub mod plot;
pub mod policy_iteration;
pub mod rates;
pub mod system;

pub use error::{MfgError, Result};
