//! Measuring and mitigating group performance gaps in singing voice
//! transcription with note-conditioned adversarial representation learning.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod notelab;
pub mod svtmodel;
pub mod tensornet;
pub mod trainer;

pub use error::{Error, Result};
