//! Instance separation by minimizing information gain between the two sides
//! of a split, using a pixel inpainting model.
//!
//! The pipeline is: fit or load an [`model::InpaintModel`], run the
//! sliding-window [`affinity::sweep`] of hierarchical splits, then cluster
//! the resulting affinities with the Mutex Watershed in [`mws`].

pub mod affinity;
pub mod config;
pub mod error;
pub mod grid;
pub mod igm;
pub mod metrics;
pub mod model;
pub mod mws;
pub mod numeric;
pub mod pgm;
pub mod splitter;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Image, LabelMap, Offset, PixelMask, Rect};
