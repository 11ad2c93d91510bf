#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod optimize;
pub mod propagation;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
