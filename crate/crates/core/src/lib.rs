// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod apc;
pub mod calibration;
pub mod channel;
pub mod error;
pub mod exec;
pub mod polmath;
pub mod scenario;
pub mod scheduler;
pub mod source;

pub use error::{Error, Result};
