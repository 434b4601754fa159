//! Associative memory: per-gesture prototypes, nearest-prototype
//! classification and sliding majority voting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{ChannelNormalization, FilterSpec};
use crate::encoder::{EncoderConfig, SpatiotemporalVector};
use crate::hdvec::{Accumulator, HdVector};
use crate::{Error, Result};

/// The five gestures. Ids are stable and double as the argmax tie-break
/// order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GestureLabel {
    Fist = 0,
    Raise = 1,
    Lower = 2,
    Open = 3,
    Rest = 4,
}

impl GestureLabel {
    pub const ALL: [GestureLabel; 5] = [
        GestureLabel::Fist,
        GestureLabel::Raise,
        GestureLabel::Lower,
        GestureLabel::Open,
        GestureLabel::Rest,
    ];

    /// Gestures held during a trial; rest brackets them.
    pub const HARD: [GestureLabel; 4] = [
        GestureLabel::Fist,
        GestureLabel::Raise,
        GestureLabel::Lower,
        GestureLabel::Open,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureLabel::Fist => "fist",
            GestureLabel::Raise => "raise",
            GestureLabel::Lower => "lower",
            GestureLabel::Open => "open",
            GestureLabel::Rest => "rest",
        }
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GestureLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationResult {
    pub predicted: GestureLabel,
    /// Cosine similarity to each stored prototype, in label-id order.
    pub similarities: Vec<(GestureLabel, f64)>,
    pub time_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    sums: Accumulator,
    prototype: HdVector,
}

/// One bundled prototype per gesture. Raw sums are kept next to the
/// thresholded prototypes so training can resume.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociativeMemory {
    dim: usize,
    entries: BTreeMap<GestureLabel, Entry>,
}

impl AssociativeMemory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> impl Iterator<Item = GestureLabel> + '_ {
        self.entries.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prototype(&self, label: GestureLabel) -> Option<&HdVector> {
        self.entries.get(&label).map(|e| &e.prototype)
    }

    pub fn accumulator(&self, label: GestureLabel) -> Option<&Accumulator> {
        self.entries.get(&label).map(|e| &e.sums)
    }

    /// Adds every vector with unit weight to `label`'s sums and re-thresholds
    /// its prototype.
    pub fn train(&mut self, vectors: &[SpatiotemporalVector], label: GestureLabel) -> Result<()> {
        if vectors.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no training vectors for `{label}`"
            )));
        }
        if let Some(bad) = vectors.iter().find(|v| v.vector.dim() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: bad.vector.dim(),
            });
        }
        let dim = self.dim;
        let entry = self.entries.entry(label).or_insert_with(|| Entry {
            sums: Accumulator::new(dim),
            prototype: HdVector::ones(dim),
        });
        for v in vectors {
            entry.sums.add(&v.vector)?;
        }
        entry.prototype = entry.sums.threshold();
        Ok(())
    }

    /// Restores a label from persisted sums.
    pub fn insert_sums(&mut self, label: GestureLabel, sums: Accumulator) -> Result<()> {
        if sums.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: sums.dim(),
            });
        }
        if sums.count() == 0 {
            return Err(Error::InvalidInput(format!(
                "`{label}` has no accumulated vectors"
            )));
        }
        let prototype = sums.threshold();
        self.entries.insert(label, Entry { sums, prototype });
        Ok(())
    }

    /// Nearest prototype by cosine similarity; exact ties go to the lowest
    /// label id.
    pub fn classify(&self, g: &SpatiotemporalVector) -> Result<ClassificationResult> {
        if self.entries.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let similarities = self
            .entries
            .iter()
            .map(|(&label, e)| Ok((label, g.vector.cosine(&e.prototype)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassificationResult {
            predicted: argmax(&similarities),
            similarities,
            time_index: g.time_index,
        })
    }
}

/// First label (lowest id) attaining the maximum.
fn argmax(similarities: &[(GestureLabel, f64)]) -> GestureLabel {
    let mut best = similarities[0];
    for &(label, s) in &similarities[1..] {
        if s > best.1 {
            best = (label, s);
        }
    }
    best.0
}

/// Majority vote over the trailing `window` predictions (or all of them if
/// fewer). Ties go to whichever tied label occurred most recently. `None` for
/// an empty slice.
pub fn vote(results: &[GestureLabel], window: usize) -> Option<GestureLabel> {
    let start = results.len().saturating_sub(window.max(1));
    let recent = &results[start..];
    let mut counts = [0usize; GestureLabel::ALL.len()];
    for l in recent {
        counts[l.id()] += 1;
    }
    let max = *counts.iter().max()?;
    recent.iter().rev().copied().find(|l| counts[l.id()] == max)
}

/// Voted label at every position of a prediction stream, using only the
/// results available up to that position.
pub fn vote_stream(results: &[GestureLabel], window: usize) -> Vec<GestureLabel> {
    (1..=results.len())
        .map(|end| vote(&results[..end], window).expect("non-empty prefix"))
        .collect()
}

const MODEL_MAGIC: &str = "HDEMG-MODEL 1";

/// Everything needed to classify a new recording: preprocessing and encoder
/// settings, the fitted normalization and the trained memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub filter: FilterSpec,
    pub encoder: EncoderConfig,
    pub normalization: ChannelNormalization,
    pub memory: AssociativeMemory,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    filter: FilterSpec,
    encoder: EncoderConfig,
    normalization: ChannelNormalization,
    labels: Vec<LabelHeader>,
}

#[derive(Serialize, Deserialize)]
struct LabelHeader {
    label: GestureLabel,
    count: usize,
}

impl Model {
    /// Container layout: a magic line, one JSON header line, then each
    /// label's sums as little-endian `f64`, in header order.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = ModelHeader {
            filter: self.filter.clone(),
            encoder: self.encoder.clone(),
            normalization: self.normalization.clone(),
            labels: self
                .memory
                .entries
                .iter()
                .map(|(&label, e)| LabelHeader {
                    label,
                    count: e.sums.count(),
                })
                .collect(),
        };
        writeln!(w, "{MODEL_MAGIC}")?;
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for e in self.memory.entries.values() {
            for s in e.sums.sums() {
                w.write_all(&s.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read, origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(origin, m);
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(origin, e))?;
        if line.trim_end() != MODEL_MAGIC {
            return Err(bad(format!("expected `{MODEL_MAGIC}` header")));
        }
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(origin, e))?;
        let header: ModelHeader = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        header.encoder.validate()?;
        header.normalization.validate()?;
        let dim = header.encoder.dimension;
        let mut memory = AssociativeMemory::new(dim);
        let mut buf = vec![0u8; dim * 8];
        for l in &header.labels {
            r.read_exact(&mut buf).map_err(|_| {
                Error::Shape(format!(
                    "{}: truncated sums for `{}`",
                    origin.display(),
                    l.label
                ))
            })?;
            let sums = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            memory.insert_sums(l.label, Accumulator::from_parts(sums, l.count)?)?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(origin, e))?;
        if !rest.is_empty() {
            return Err(Error::Shape(format!(
                "{}: {} trailing bytes after sums",
                origin.display(),
                rest.len()
            )));
        }
        Ok(Model {
            filter: header.filter,
            encoder: header.encoder,
            normalization: header.normalization,
            memory,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdvec::DEFAULT_DIMENSION;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use GestureLabel::*;

    fn st(v: HdVector, t: usize) -> SpatiotemporalVector {
        SpatiotemporalVector {
            vector: v,
            time_index: t,
        }
    }

    fn random(seed: u64) -> HdVector {
        HdVector::random(DEFAULT_DIMENSION, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn labels_parse_and_order() {
        assert_eq!("Fist".parse::<GestureLabel>().unwrap(), Fist);
        assert!(matches!(
            "wave".parse::<GestureLabel>(),
            Err(Error::UnknownLabel(_))
        ));
        let ids: Vec<_> = GestureLabel::ALL.iter().map(|l| l.id()).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(GestureLabel::from_id(4), Some(Rest));
    }

    #[test]
    fn single_vector_prototype() {
        let mut am = AssociativeMemory::new(DEFAULT_DIMENSION);
        let v = random(1);
        am.train(&[st(v.clone(), 0)], Open).unwrap();
        assert_eq!(am.prototype(Open), Some(&v));
        let w = random(2);
        let mut am = AssociativeMemory::new(DEFAULT_DIMENSION);
        am.train(&[st(v.clone(), 0), st(v.clone(), 1), st(w, 2)], Open)
            .unwrap();
        assert_eq!(am.prototype(Open), Some(&v));
        assert!(am.train(&[], Open).is_err());
    }

    #[test]
    fn incremental_equals_batch() {
        let vs: Vec<_> = (0..7).map(|s| st(random(s), s as usize)).collect();
        let mut batch = AssociativeMemory::new(DEFAULT_DIMENSION);
        batch.train(&vs, Fist).unwrap();
        let mut inc = AssociativeMemory::new(DEFAULT_DIMENSION);
        inc.train(&vs[..3], Fist).unwrap();
        inc.train(&vs[3..], Fist).unwrap();
        assert_eq!(batch, inc);
    }

    #[test]
    fn classify_examples() {
        let mut am = AssociativeMemory::new(DEFAULT_DIMENSION);
        assert!(matches!(
            am.classify(&st(random(0), 0)),
            Err(Error::EmptyMemory)
        ));
        let protos: Vec<_> = GestureLabel::ALL
            .iter()
            .map(|l| (*l, random(10 + l.id() as u64)))
            .collect();
        for (l, v) in &protos {
            am.train(&[st(v.clone(), 0)], *l).unwrap();
        }
        let r = am.classify(&st(protos[2].1.clone(), 9)).unwrap();
        assert_eq!(r.predicted, Lower);
        assert_eq!(r.time_index, 9);
        assert_eq!(r.similarities[2], (Lower, 1.0));

        let r = am.classify(&st(random(99), 0)).unwrap();
        assert!(r.similarities.iter().all(|(_, s)| s.abs() <= 0.05));

        let mut tie = AssociativeMemory::new(DEFAULT_DIMENSION);
        tie.train(&[st(random(5), 0)], Open).unwrap();
        tie.train(&[st(random(5), 0)], Raise).unwrap();
        assert_eq!(tie.classify(&st(random(5), 0)).unwrap().predicted, Raise);
    }

    #[test]
    fn vote_examples() {
        let mut r = vec![Open; 5];
        r.extend(vec![Fist; 6]);
        assert_eq!(vote(&r, 11), Some(Fist));
        assert_eq!(vote(&[Rest, Fist, Fist], 11), Some(Fist));
        let mut r = vec![Open; 5];
        r.extend(vec![Rest; 6]);
        assert_eq!(vote(&r, 11), Some(Rest));
        // tie: most recent among tied labels wins
        assert_eq!(vote(&[Fist, Open, Open, Fist], 11), Some(Fist));
        assert_eq!(vote(&[Fist, Open], 11), Some(Open));
        assert_eq!(vote(&[], 11), None);
        // only the trailing window counts
        let mut r = vec![Fist; 20];
        r.extend(vec![Open; 6]);
        assert_eq!(vote(&r, 11), Some(Open));
    }

    #[test]
    fn voting_repairs_isolated_errors() {
        let truth = vec![Fist; 30];
        let mut pred = truth.clone();
        for i in [8, 20, 27] {
            pred[i] = Rest;
        }
        pred[14] = Open;
        assert_eq!(vote_stream(&pred, 11), truth);
    }

    #[test]
    fn model_round_trip() {
        let mut am = AssociativeMemory::new(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l in [Fist, Rest] {
            let vs: Vec<_> = (0..3)
                .map(|t| st(HdVector::random(64, &mut rng).unwrap(), t))
                .collect();
            am.train(&vs, l).unwrap();
        }
        let model = Model {
            filter: FilterSpec::default(),
            encoder: EncoderConfig {
                dimension: 64,
                ..Default::default()
            },
            normalization: ChannelNormalization::from_maxima(&[0.1 + 1e-17, 1.0 / 3.0]).unwrap(),
            memory: am,
        };
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let back = Model::read_from(&bytes[..], Path::new("mem")).unwrap();
        assert_eq!(back, model);

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Model::read_from(truncated, Path::new("mem")),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Model::read_from(&b"junk\n"[..], Path::new("mem")),
            Err(Error::Format { .. })
        ));
    }

    fn label() -> impl Strategy<Value = GestureLabel> {
        (0usize..5).prop_map(|i| GestureLabel::ALL[i])
    }

    proptest! {
        #[test]
        fn vote_returns_a_modal_label(r in prop::collection::vec(label(), 1..30), w in 1usize..15) {
            let v = vote(&r, w).unwrap();
            let recent = &r[r.len().saturating_sub(w)..];
            let count = |l: GestureLabel| recent.iter().filter(|&&x| x == l).count();
            prop_assert!(GestureLabel::ALL.iter().all(|&l| count(l) <= count(v)));
        }

        #[test]
        fn training_order_does_not_matter(seeds in prop::collection::vec(0u64..1000, 1..8), rot in 0usize..8) {
            let vs: Vec<_> = seeds.iter().map(|&s| st(HdVector::random(128, &mut ChaCha8Rng::seed_from_u64(s)).unwrap(), 0)).collect();
            let mut rotated = vs.clone();
            rotated.rotate_left(rot % vs.len());
            let mut a = AssociativeMemory::new(128);
            a.train(&vs, Fist).unwrap();
            let mut b = AssociativeMemory::new(128);
            b.train(&rotated, Fist).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
