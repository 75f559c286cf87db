//! Model-driven face stylization.
//!
//! Stage 1 trains an encoder, decoder and noise remapper on a style dataset
//! and ships them as a [`persist::StyleModelPackage`]. Stage 2 clones the
//! encoder and adapts it to a source domain with the decoder and remapper
//! frozen, in offline, online or test-time mode.

pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod latent;
pub mod losses;
pub mod model;
pub mod nets;
pub mod optim;
pub mod persist;
pub mod rng;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
