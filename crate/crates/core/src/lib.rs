//! Shrinking-horizon predictive control with move blocking and terminal
//! constraint relaxation.
//!
//! The pieces, in pipeline order:
//!
//! * [`dynamics`]: plant models (train, double integrator) and terminal sets.
//! * [`blocking`]: grouping the remaining moves into blocks.
//! * [`ocp`]: the per-step finite-horizon problem and its solvers.
//! * [`controller`]: nominal, relaxed and multi-objective closed loops.
//! * [`bounds`]: the terminal-error bound under bounded input disturbances.
//! * [`scenario`] and [`cli`]: scenario files and the `sbpc` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocking;
pub mod bounds;
pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod ocp;
pub mod scenario;
mod error;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/blocking.md")]
    mod blocking {}
    #[doc = include_str!("../../../book/src/ocp.md")]
    mod ocp {}
    #[doc = include_str!("../../../book/src/relaxation.md")]
    mod relaxation {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
