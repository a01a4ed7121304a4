#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classical;
pub mod data;
pub mod embed;
pub mod encoders;
pub mod error;
pub mod explain;
pub mod pipeline;
pub mod simulate;
pub mod survival;
pub mod tensor;

pub use error::{Error, Result};
