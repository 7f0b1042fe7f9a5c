//! Compression lab: a tiny decoder-only transformer, composable compression
//! passes, a distillation trainer, a time/energy meter and the
//! resource-performance scorer that ties them together.

pub mod bench;
pub mod compress;
pub mod distill;
pub mod error;
#[doc(hidden)]
pub mod fixtures;
pub mod meter;
pub mod model;
pub mod score;
pub mod tokenizer;

pub use error::{LabError, Result};
