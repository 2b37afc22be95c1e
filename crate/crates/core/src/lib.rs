//! Turns sparse per-node class labels on an image-derived graph into dense
//! labels by fitting a small graph convolutional network to each image,
//! with a random-walk propagation baseline for comparison.
//!
//! The flow for one image is
//! [`dataset::SceneData`] → [`trainer::train_image`] →
//! [`refine::complete_labels`] → [`eval::miou`].

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod image;
pub mod io;
pub mod losses;
pub mod numeric;
pub mod pipeline;
pub mod refine;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
