//! Bi-tuning: fine-tuning with a classifier head trained by cross-entropy
//! plus contrastive cross-entropy, and a projector head trained by a
//! categorical contrastive loss, on a small dense autodiff engine.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod keypool;
pub mod losses;
pub mod model;
pub mod ndgrad;
pub mod trainer;

pub use error::{Error, Result};
