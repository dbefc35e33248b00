// `!(x > 0.0)` is used on purpose throughout so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod export;
pub mod filter;
pub mod metrics;
pub mod model;
pub mod observer;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
