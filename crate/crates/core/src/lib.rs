//! Contact-geometry estimation for marker-based soft tactile sensors.
//!
//! Contacts are encoded as depth-weighted Gaussian heatmaps, a U-Net learns to
//! predict those heatmaps from marker images, and peaks are decoded back into
//! contact positions and depths.

pub mod codec;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod format;
pub mod par;
pub mod sim;
pub mod train;

pub use error::{Error, FormatError, Result};
