//! Near-field ISAC transmit design: symbol-level precoding with a
//! Cramér-Rao bound objective, a block-level precoding baseline, and a
//! 2D MUSIC sensing simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod ci;
pub mod conic;
pub mod designer;
pub mod error;
pub mod fisher;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod sensing;

pub use error::{Error, Result};
