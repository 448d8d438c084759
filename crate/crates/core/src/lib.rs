//! Interpretable ECG classification: a semi-orthogonal 1-D CNN, its
//! deconvolutional inverse, chi-squared saliency maps, K-shape presence
//! features and a ridge logistic regression on top.

pub mod convnet;
pub mod error;
pub mod evalmetrics;
pub mod glm;
pub mod inversion;
pub mod pipeline;
pub mod resample;
pub mod saliency;
pub mod shapefeat;
pub mod signal;

pub use error::{Error, Result};
