#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod chain;
pub mod error;
pub mod harness;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod stability;
pub mod vecops;

pub use error::{Error, Result};
