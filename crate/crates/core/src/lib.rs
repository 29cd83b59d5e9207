#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod synthdata;
pub mod trainer;
pub mod uq;

pub use error::{Error, Result};
pub use mask::Mask;
