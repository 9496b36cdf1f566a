//! Articulated volumetric signed distance body model.
//!
//! A posed body is split into rigid parts. Each part's canonical point cloud
//! is encoded into a latent code; a tiny per-part decoder, whose weights are
//! blended from a shared base and a bank of shape matrices, predicts the
//! signed distance inside the part's padded box. Queries outside every box
//! fall back to a cheap box distance. Negative values are inside the body.

pub mod body;
pub mod cli;
pub mod encoder;
mod error;
pub mod interact;
pub mod numerics;
pub mod oracle;
pub mod training;
pub mod volsdf;

pub use error::{Error, Result};
