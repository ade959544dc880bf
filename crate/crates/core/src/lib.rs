//! Multi-class segmentation from complementary, partially annotated datasets.
//!
//! Frames from several subsets annotate different classes. A positive pixel
//! for one class is taken as a negative for every other class, and pixels
//! about which nothing is known are masked out of the loss. One network is
//! trained for all classes instead of one network per subset.

pub mod bench;
pub mod cli;
pub mod data_fusion;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod grid;
pub mod label_algebra;
pub mod loss;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
