#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod cli;
pub mod dataset;
pub mod direction;
pub mod gllim;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod posterior;
pub mod seed;
pub mod simroom;
pub mod spectro;

pub use direction::{Direction, DirectionVector};
pub use error::{Error, Result};
