//! Reachability-constrained linear MPC for MAV navigation among humans.
//!
//! The controller constrains only the first control input: for every step of
//! the horizon the MAV's exact zonotope reachable set, conditioned on `u0`,
//! must not be contained in a conservative over-approximation of the human
//! body's reachable set. The constraint is linear in `u0`, so each control
//! step is a single convex QP.

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod humans;
pub mod qp;
pub mod reach;
pub mod safety;

pub use error::{Error, Result};
