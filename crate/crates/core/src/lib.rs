#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod signal_io;
pub mod training;

pub use error::{Error, Result};
