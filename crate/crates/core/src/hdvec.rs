//! Bipolar hyperdimensional vectors and their algebra.
//!
//! Every vector holds exactly `D` elements, each `+1` or `-1`. Binding is the
//! element-wise product, bundling is element-wise addition into an
//! [`Accumulator`] followed by [`Accumulator::threshold`], and sequences are
//! encoded with cyclic rotation ([`HdVector::permute`]).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 10_000;

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// A bipolar vector. Elements are stored as `i8` holding `+1` or `-1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HdVector {
    elements: Vec<i8>,
}

impl HdVector {
    /// Draws a vector with exactly `dim / 2` elements of each sign.
    ///
    /// A half/half array is shuffled with the generator, so the placement
    /// depends only on the generator state.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "HD dimension must be even and positive, got {dim}"
            )));
        }
        let mut elements = vec![1i8; dim];
        elements[dim / 2..].fill(-1);
        elements.shuffle(rng);
        Ok(Self { elements })
    }

    /// Wraps an existing `±1` sequence.
    pub fn from_bipolar(elements: Vec<i8>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidInput("empty HD vector".into()));
        }
        if let Some(pos) = elements.iter().position(|&e| e != 1 && e != -1) {
            return Err(Error::InvalidInput(format!(
                "element {pos} is {}, expected +1 or -1",
                elements[pos]
            )));
        }
        Ok(Self { elements })
    }

    pub fn ones(dim: usize) -> Self {
        Self {
            elements: vec![1; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.elements
    }

    pub fn count_positive(&self) -> usize {
        self.elements.iter().filter(|&&e| e > 0).count()
    }

    pub fn negate(&self) -> Self {
        Self {
            elements: self.elements.iter().map(|&e| -e).collect(),
        }
    }

    /// Element-wise product. The result is dissimilar to both operands and
    /// binding with the same vector twice undoes it.
    pub fn bind(&self, other: &HdVector) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        let mut out = self.clone();
        out.bind_assign(other);
        Ok(out)
    }

    /// In-place bind; dimensions must already agree.
    pub(crate) fn bind_assign(&mut self, other: &HdVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, &b) in self.elements.iter_mut().zip(&other.elements) {
            *a *= b;
        }
    }

    /// `self = self * permute(other, k)` without materializing the rotation.
    pub(crate) fn bind_permuted_assign(&mut self, other: &HdVector, k: usize) {
        debug_assert_eq!(self.dim(), other.dim());
        let d = self.dim();
        let k = k % d;
        let (head, tail) = self.elements.split_at_mut(k);
        for (a, &b) in head.iter_mut().zip(&other.elements[d - k..]) {
            *a *= b;
        }
        for (a, &b) in tail.iter_mut().zip(&other.elements[..d - k]) {
            *a *= b;
        }
    }

    /// Cyclic rotation: the element at index `i` moves to `(i + k) mod D`.
    pub fn permute(&self, k: usize) -> Self {
        let mut elements = self.elements.clone();
        elements.rotate_right(k % self.dim());
        Self { elements }
    }

    pub fn dot(&self, other: &HdVector) -> Result<i64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot_i8(&self.elements, &other.elements))
    }

    pub fn hamming(&self, other: &HdVector) -> Result<usize> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .elements
            .iter()
            .zip(&other.elements)
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Cosine similarity; for two bipolar vectors this is `dot / D`.
    pub fn cosine(&self, other: &HdVector) -> Result<f64> {
        Ok(self.dot(other)? as f64 / self.dim() as f64)
    }
}

fn dot_i8(a: &[i8], b: &[i8]) -> i64 {
    // i32 partial sums vectorize well; chunking keeps them from overflowing.
    a.chunks(1 << 16)
        .zip(b.chunks(1 << 16))
        .map(|(ca, cb)| {
            ca.iter()
                .zip(cb)
                .map(|(&x, &y)| (x as i32) * (y as i32))
                .sum::<i32>() as i64
        })
        .sum()
}

/// Real-valued running sum of weighted bipolar vectors (the pre-threshold
/// bundle).
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    sums: Vec<f64>,
    count: usize,
}

impl Accumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sums: vec![0.0; dim],
            count: 0,
        }
    }

    /// Rebuilds an accumulator from persisted state.
    pub fn from_parts(sums: Vec<f64>, count: usize) -> Result<Self> {
        if sums.is_empty() {
            return Err(Error::InvalidInput("empty accumulator".into()));
        }
        if sums.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite accumulator sum".into()));
        }
        Ok(Self { sums, count })
    }

    pub fn dim(&self) -> usize {
        self.sums.len()
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// Number of vectors accumulated so far.
    pub fn count(&self) -> usize {
        self.count
    }

    /// `sums += weight * v`.
    pub fn accumulate(&mut self, v: &HdVector, weight: f64) -> Result<()> {
        check_dims(self.dim(), v.dim())?;
        if !weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "accumulation weight must be finite, got {weight}"
            )));
        }
        for (s, &e) in self.sums.iter_mut().zip(&v.elements) {
            *s += weight * e as f64;
        }
        self.count += 1;
        Ok(())
    }

    /// Unit-weight bundling.
    pub fn add(&mut self, v: &HdVector) -> Result<()> {
        self.accumulate(v, 1.0)
    }

    /// Bipolar thresholder: positive sums map to `+1`, negative to `-1`, and
    /// exact zeros to `+1`. The tie rule biases zero-sum elements towards
    /// `+1`, which only matters when sums cancel exactly.
    pub fn threshold(&self) -> HdVector {
        HdVector {
            elements: self
                .sums
                .iter()
                .map(|&s| if s >= 0.0 { 1 } else { -1 })
                .collect(),
        }
    }

    /// Cosine similarity between the raw sums and a bipolar vector.
    pub fn cosine(&self, other: &HdVector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        let norm = self.sums.iter().map(|s| s * s).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let dot: f64 = self
            .sums
            .iter()
            .zip(&other.elements)
            .map(|(&s, &e)| s * e as f64)
            .sum();
        Ok(dot / (norm * (other.dim() as f64).sqrt()))
    }
}

/// Fixed symbol table with one quasi-orthogonal vector per electrode.
///
/// Entries are drawn in channel order from a ChaCha8 stream seeded with
/// `seed`. A candidate whose `|cos|` with an earlier entry exceeds `5/sqrt(D)`
/// is discarded and redrawn from the same stream, so the table is still a
/// pure function of `(seed, dimension, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemMemory {
    entries: Vec<HdVector>,
    seed: u64,
}

const MAX_REDRAWS: usize = 1000;

impl ItemMemory {
    pub fn new(dim: usize, channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config(
                "item memory needs at least one channel".into(),
            ));
        }
        let bound = 5.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries: Vec<HdVector> = Vec::with_capacity(channels);
        while entries.len() < channels {
            let mut redraws = 0;
            loop {
                let candidate = HdVector::random(dim, &mut rng)?;
                let orthogonal = entries.iter().all(|e| {
                    (dot_i8(&e.elements, &candidate.elements) as f64 / dim as f64).abs() <= bound
                });
                if orthogonal {
                    entries.push(candidate);
                    break;
                }
                redraws += 1;
                if redraws > MAX_REDRAWS {
                    return Err(Error::Config(format!(
                        "could not draw {channels} quasi-orthogonal vectors at D={dim}"
                    )));
                }
            }
        }
        Ok(Self { entries, seed })
    }

    pub fn entries(&self) -> &[HdVector] {
        &self.entries
    }

    pub fn entry(&self, channel: usize) -> &HdVector {
        &self.entries[channel]
    }

    pub fn channels(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].dim()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Text manifest from which [`ItemMemory::from_manifest`] regenerates the
    /// entries bit-exactly.
    pub fn manifest(&self) -> String {
        let m = ItemMemoryManifest {
            format: ITEM_MEMORY_FORMAT.to_string(),
            version: 1,
            seed: self.seed,
            dimension: self.dim(),
            channels: self.channels(),
        };
        toml::to_string(&m).expect("manifest serializes")
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let m: ItemMemoryManifest = toml::from_str(text)
            .map_err(|e| Error::format("<item memory manifest>", e.to_string()))?;
        if m.format != ITEM_MEMORY_FORMAT || m.version != 1 {
            return Err(Error::format(
                "<item memory manifest>",
                format!("unsupported format {} v{}", m.format, m.version),
            ));
        }
        Self::new(m.dimension, m.channels, m.seed)
    }
}

const ITEM_MEMORY_FORMAT: &str = "hdemg-item-memory";

#[derive(Serialize, Deserialize)]
struct ItemMemoryManifest {
    format: String,
    version: u32,
    seed: u64,
    dimension: usize,
    channels: usize,
}
