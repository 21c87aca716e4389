#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod express;
pub mod lie;
pub mod linop;
pub mod model;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
