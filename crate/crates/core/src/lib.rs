//! Internal-model MPC: offset-free tracking and rejection of disturbances generated by a known
//! exosystem, without estimating the disturbance.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod config;
pub mod design;
pub mod error;
pub mod internal_model;
pub mod linalg;
pub mod lyapunov;
pub mod mpc;
pub mod model;
pub mod qp;
pub mod regulation;
pub mod sim;
pub mod verify;

pub use error::{ImmpcError, Result};
