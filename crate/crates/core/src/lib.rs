//! Semantic filtering of microscopy images: synthesize layered training pairs
//! from crop exemplars, train a small encoder-decoder to keep (or remove) one
//! object class, and evaluate the filtered output.

pub mod compositor;
pub mod config;
pub mod error;
pub mod eval;
pub mod harvest;
pub mod image;
pub mod imageio;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod separate;

pub use error::{Error, Result};
pub use image::{BBox, BinaryMask, Connectivity, Image};
