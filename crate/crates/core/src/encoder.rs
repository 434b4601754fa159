//! Spatial and temporal HD encoding of feature frames.
//!
//! A frame `v` becomes the spatial vector `S = σ(Σ_i E_i · v_i)` where `E_i`
//! is the item-memory vector of electrode `i`. A window of `n` spatial
//! vectors, oldest first, becomes `G = Π_t ρ^(t-1) S^t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureFrame;
use crate::hdvec::{Accumulator, HdVector, ItemMemory, DEFAULT_DIMENSION};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dimension: usize,
    pub channels: usize,
    pub ngram_n: usize,
    pub im_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            channels: 64,
            ngram_n: 5,
            im_seed: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 || !self.dimension.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "dimension must be even and positive, got {}",
                self.dimension
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if self.ngram_n == 0 {
            return Err(Error::Config("ngram_n must be >= 1".into()));
        }
        Ok(())
    }

    pub fn item_memory(&self) -> Result<ItemMemory> {
        self.validate()?;
        ItemMemory::new(self.dimension, self.channels, self.im_seed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpatialVector {
    pub vector: HdVector,
    pub time_index: usize,
}

/// Tagged with the time index of its newest frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpatiotemporalVector {
    pub vector: HdVector,
    pub time_index: usize,
}

pub fn encode_spatial(frame: &FeatureFrame, im: &ItemMemory) -> Result<SpatialVector> {
    if frame.values.len() != im.channels() {
        return Err(Error::DimensionMismatch {
            expected: im.channels(),
            actual: frame.values.len(),
        });
    }
    let mut acc = Accumulator::new(im.dim());
    for (channel, &v) in frame.values.iter().enumerate() {
        // zero weights leave the sums untouched
        if v != 0.0 {
            acc.accumulate(im.entry(channel), v)?;
        }
    }
    Ok(SpatialVector {
        vector: acc.threshold(),
        time_index: frame.time_index,
    })
}

/// Binds a window of spatial vectors, ordered oldest to newest, each rotated
/// by its position in the window.
pub fn encode_temporal(
    window: &[SpatialVector],
    config: &EncoderConfig,
) -> Result<SpatiotemporalVector> {
    if window.len() != config.ngram_n {
        return Err(Error::InvalidInput(format!(
            "temporal window holds {} spatial vectors, expected {}",
            window.len(),
            config.ngram_n
        )));
    }
    let dim = window[0].vector.dim();
    if let Some(bad) = window.iter().find(|s| s.vector.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.vector.dim(),
        });
    }
    let mut g = window[0].vector.clone();
    for (k, s) in window.iter().enumerate().skip(1) {
        g.bind_permuted_assign(&s.vector, k);
    }
    Ok(SpatiotemporalVector {
        vector: g,
        time_index: window[window.len() - 1].time_index,
    })
}

/// Encodes every window of `ngram_n` consecutive frames with stride one.
/// Spatial vectors are computed once per frame and shared between the
/// overlapping windows. Fewer than `ngram_n` frames yields no output.
pub fn stream_encode(
    frames: &[FeatureFrame],
    im: &ItemMemory,
    config: &EncoderConfig,
) -> Result<Vec<SpatiotemporalVector>> {
    config.validate()?;
    if frames.len() < config.ngram_n {
        log::warn!(
            "{} frames are fewer than the temporal window of {}; nothing encoded",
            frames.len(),
            config.ngram_n
        );
        return Ok(Vec::new());
    }
    let spatial: Vec<SpatialVector> = frames
        .par_iter()
        .map(|f| encode_spatial(f, im))
        .collect::<Result<_>>()?;
    spatial
        .windows(config.ngram_n)
        .map(|w| encode_temporal(w, config))
        .collect()
}
