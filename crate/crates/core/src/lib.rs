//! EMG gesture recognition with a hyperdimensional (HD) classifier.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`dsp`] turns 64-channel raw EMG into normalized 10 Hz feature frames
//!    (notch, band-pass, rectify + moving average, per-channel scaling,
//!    decimation).
//! 2. [`encoder`] maps each frame to a spatial HD vector (thresholded sum of
//!    electrode vectors weighted by the feature values) and each window of
//!    `n` spatial vectors to a spatiotemporal vector (product of
//!    progressively rotated spatial vectors).
//! 3. [`classifier`] bundles spatiotemporal vectors into one prototype per
//!    gesture and classifies queries by cosine similarity, with optional
//!    sliding majority voting.
//! 4. [`eval`] drives training/testing conditions and trial-count sweeps and
//!    writes reports.
//!
//! [`dataset`] holds the recording model, its on-disk format and a synthetic
//! EMG generator used as a test oracle. [`hdvec`] is the bipolar vector
//! algebra everything else is built on.

pub mod classifier;
pub mod dataset;
pub mod dsp;
pub mod encoder;
mod error;
pub mod eval;
pub mod hdvec;

pub use error::{Error, Result};
