//! Recordings, their on-disk format, session bookkeeping, synthetic EMG and
//! activity heat maps.
//!
//! # File format
//!
//! A recording is stored as two files side by side:
//!
//! * a TOML manifest (`format = "hdemg-recording"`, `version = 1`) with the
//!   channel count, samples per channel, sample rate, scale, subject and
//!   session ids, the payload file name, the payload's SHA-256 and the label
//!   table (`[[segments]]` with `label`, `start`, `end`, `trial`);
//! * the payload: little-endian `f32`, channels-major (all samples of
//!   channel 0, then channel 1, ...).
//!
//! Electrodes sit on a 16 × 4 grid. Channel `c` is at row `c / 16`, column
//! `c % 16`; a row runs around the forearm circumference.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::GestureLabel;
use crate::dsp::{butterworth_bandpass, FeatureFrame};
use crate::{Error, Result};

pub const GRID_COLUMNS: usize = 16;
pub const GRID_ROWS: usize = 4;

/// `(row, column)` of a channel on the electrode grid.
pub fn grid_position(channel: usize) -> (usize, usize) {
    (channel / GRID_COLUMNS, channel % GRID_COLUMNS)
}

pub fn grid_channel(row: usize, column: usize) -> usize {
    row * GRID_COLUMNS + column
}

/// Multichannel raw EMG. Samples are stored channels-major as `f32`;
/// `scale` converts stored values to physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    samples: Vec<f32>,
    channels: usize,
    sample_rate: f64,
    scale: f64,
    pub subject_id: String,
    pub session_id: String,
}

impl Recording {
    pub fn from_channels(
        channels: Vec<Vec<f32>>,
        sample_rate: f64,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if let Some((c, ch)) = channels.iter().enumerate().find(|(_, ch)| ch.len() != len) {
            return Err(Error::Shape(format!(
                "channel {c} has {} samples, channel 0 has {len}",
                ch.len()
            )));
        }
        let n = channels.len();
        Self::from_flat(
            channels.concat(),
            n,
            sample_rate,
            1.0,
            subject_id,
            session_id,
        )
    }

    pub fn from_flat(
        samples: Vec<f32>,
        channels: usize,
        sample_rate: f64,
        scale: f64,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("recording has no channels".into()));
        }
        if !samples.len().is_multiple_of(channels) {
            return Err(Error::Shape(format!(
                "{} samples do not split into {channels} channels",
                samples.len()
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let len = samples.len() / channels;
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                channel: i / len,
                index: i % len,
            });
        }
        Ok(Self {
            samples,
            channels,
            sample_rate,
            scale,
            subject_id: subject_id.into(),
            session_id: session_id.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let len = self.len();
        &self.samples[c * len..(c + 1) * len]
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    /// First `len` samples of every channel.
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.len());
        let samples = (0..self.channels)
            .flat_map(|c| self.channel(c)[..len].iter().copied())
            .collect();
        Self {
            samples,
            ..self.clone()
        }
    }
}

/// Labeled sample span `[start, end)` belonging to trial `trial`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub label: GestureLabel,
    pub start: usize,
    pub end: usize,
    pub trial: usize,
}

impl LabeledSegment {
    /// Indices of decimated frames whose last raw sample lies in the segment.
    pub fn frame_range(&self, decim_factor: usize) -> Range<usize> {
        self.start / decim_factor..self.end / decim_factor
    }
}

/// Checks bounds and that no two segments overlap.
pub fn validate_segments(segments: &[LabeledSegment], len: usize) -> Result<()> {
    for s in segments {
        if s.start >= s.end || s.end > len {
            return Err(Error::Shape(format!(
                "segment [{}, {}) outside recording of {len} samples",
                s.start, s.end
            )));
        }
    }
    let mut sorted: Vec<_> = segments.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::OverlappingSegments {
                first_start: w[0].start,
                first_end: w[0].end,
                second_start: w[1].start,
                second_end: w[1].end,
            });
        }
    }
    Ok(())
}

const RECORDING_FORMAT: &str = "hdemg-recording";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    channels: usize,
    samples: usize,
    sample_rate: f64,
    scale: f64,
    subject: String,
    session: String,
    payload: String,
    sha256: String,
    #[serde(default)]
    segments: Vec<ManifestSegment>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSegment {
    label: String,
    start: usize,
    end: usize,
    trial: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Payload path for a manifest path: same stem, `.f32` extension.
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

/// Writes the manifest at `manifest` and the payload next to it.
pub fn save(manifest: &Path, recording: &Recording, segments: &[LabeledSegment]) -> Result<()> {
    validate_segments(segments, recording.len())?;
    let payload: Vec<u8> = recording
        .samples
        .iter()
        .flat_map(|x| x.to_le_bytes())
        .collect();
    let payload_file = payload_path(manifest);
    let m = Manifest {
        format: RECORDING_FORMAT.into(),
        version: 1,
        channels: recording.channels,
        samples: recording.len(),
        sample_rate: recording.sample_rate,
        scale: recording.scale,
        subject: recording.subject_id.clone(),
        session: recording.session_id.clone(),
        payload: payload_file
            .file_name()
            .expect("payload has a file name")
            .to_string_lossy()
            .into_owned(),
        sha256: sha256_hex(&payload),
        segments: segments
            .iter()
            .map(|s| ManifestSegment {
                label: s.label.name().into(),
                start: s.start,
                end: s.end,
                trial: s.trial,
            })
            .collect(),
    };
    let text = toml::to_string(&m).map_err(|e| Error::format(manifest, e.to_string()))?;
    std::fs::write(&payload_file, payload).map_err(|e| Error::io(&payload_file, e))?;
    std::fs::write(manifest, text).map_err(|e| Error::io(manifest, e))
}

/// Reads a manifest and its payload, validating shape, checksum and labels.
pub fn load(manifest: &Path) -> Result<(Recording, Vec<LabeledSegment>)> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(manifest, e.to_string()))?;
    if m.format != RECORDING_FORMAT || m.version != 1 {
        return Err(Error::format(
            manifest,
            format!("unsupported format `{}` version {}", m.format, m.version),
        ));
    }
    let payload_file = manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&m.payload);
    let payload = std::fs::read(&payload_file).map_err(|e| Error::io(&payload_file, e))?;
    let expected = m.channels * m.samples * 4;
    if payload.len() != expected {
        return Err(Error::Shape(format!(
            "{}: payload has {} bytes, manifest declares {} channels x {} samples ({expected} bytes)",
            payload_file.display(),
            payload.len(),
            m.channels,
            m.samples
        )));
    }
    let actual = sha256_hex(&payload);
    if actual != m.sha256 {
        return Err(Error::Checksum {
            path: payload_file,
            expected: m.sha256,
            actual,
        });
    }
    let samples = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let recording = Recording::from_flat(
        samples,
        m.channels,
        m.sample_rate,
        m.scale,
        m.subject,
        m.session,
    )?;
    let segments = m
        .segments
        .iter()
        .map(|s| {
            Ok(LabeledSegment {
                label: s.label.parse()?,
                start: s.start,
                end: s.end,
                trial: s.trial,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    validate_segments(&segments, recording.len())?;
    Ok((recording, segments))
}

/// Recording protocol: `trials` sequences of held gestures. With
/// `rest_bracketing` every sequence starts and ends with a rest hold. The
/// labeled span is the centered `labeled_s` of each `hold_s` hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionPlan {
    pub trials: usize,
    pub gestures: Vec<GestureLabel>,
    pub hold_s: f64,
    pub labeled_s: f64,
    pub rest_bracketing: bool,
    /// Shuffle the gesture order independently in every trial.
    pub shuffle: bool,
}

impl Default for SessionPlan {
    fn default() -> Self {
        Self {
            trials: 10,
            gestures: GestureLabel::HARD.to_vec(),
            hold_s: 5.0,
            labeled_s: 3.0,
            rest_bracketing: true,
            shuffle: true,
        }
    }
}

impl SessionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.gestures.is_empty() {
            return Err(Error::Config(
                "session plan needs trials and gestures".into(),
            ));
        }
        if !(self.labeled_s > 0.0 && self.labeled_s <= self.hold_s) {
            return Err(Error::Config(format!(
                "labeled duration {} must be in (0, hold duration {}]",
                self.labeled_s, self.hold_s
            )));
        }
        Ok(())
    }

    /// Holds in recording order as `(trial, label)`.
    pub fn schedule(&self, rng: &mut impl Rng) -> Vec<(usize, GestureLabel)> {
        let mut out = Vec::new();
        for trial in 0..self.trials {
            let mut order = self.gestures.clone();
            if self.shuffle {
                order.shuffle(rng);
            }
            if self.rest_bracketing {
                out.push((trial, GestureLabel::Rest));
            }
            out.extend(order.into_iter().map(|g| (trial, g)));
            if self.rest_bracketing {
                out.push((trial, GestureLabel::Rest));
            }
        }
        out
    }
}

/// Per-gesture, per-channel activation intensity.
pub type GestureProfiles = BTreeMap<GestureLabel, Vec<f64>>;

fn circular_distance(a: usize, b: usize) -> f64 {
    let d = a.abs_diff(b) % GRID_COLUMNS;
    d.min(GRID_COLUMNS - d) as f64
}

/// Five spatial patterns on the 16 × 4 grid. Each hard gesture is a blob
/// around the circumference with its own centre column and row weighting;
/// rest is a faint low-level tonic pattern.
pub fn default_profiles() -> GestureProfiles {
    let blob = |centre: usize, rows: [f64; GRID_ROWS], width: f64, peak: f64| -> Vec<f64> {
        (0..GRID_ROWS * GRID_COLUMNS)
            .map(|c| {
                let (r, col) = grid_position(c);
                let d = circular_distance(col, centre);
                peak * rows[r] * (-d * d / (2.0 * width * width)).exp()
            })
            .collect()
    };
    let mut p = GestureProfiles::new();
    p.insert(GestureLabel::Fist, blob(2, [1.0, 0.8, 0.5, 0.3], 1.5, 1.0));
    p.insert(GestureLabel::Raise, blob(6, [0.3, 0.5, 0.8, 1.0], 1.5, 1.0));
    p.insert(
        GestureLabel::Lower,
        blob(10, [1.0, 0.8, 0.5, 0.3], 1.5, 1.0),
    );
    p.insert(GestureLabel::Open, blob(14, [0.3, 0.5, 0.8, 1.0], 1.5, 1.0));
    p.insert(GestureLabel::Rest, blob(0, [0.5, 1.0, 1.0, 0.5], 0.8, 0.05));
    p
}

/// A subject-specific variant: the whole pattern set rotated by a random
/// number of columns and every intensity jittered by up to ±`jitter`.
pub fn subject_profiles(base: &GestureProfiles, seed: u64, jitter: f64) -> GestureProfiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = rng.random_range(0..GRID_COLUMNS);
    base.iter()
        .map(|(&label, p)| {
            let rotated = rotate_columns(p, shift as isize);
            let jittered = rotated
                .into_iter()
                .map(|v| v * (1.0 + jitter * rng.random_range(-1.0..=1.0)))
                .collect();
            (label, jittered)
        })
        .collect()
}

/// Rotates per-channel values around the circumference: the value at
/// `(r, c)` moves to `(r, c + shift mod 16)`.
fn rotate_columns<T: Copy>(values: &[T], shift: isize) -> Vec<T> {
    let cols = GRID_COLUMNS as isize;
    (0..values.len())
        .map(|c| {
            let (r, col) = grid_position(c);
            let src = (col as isize - shift).rem_euclid(cols) as usize;
            values[grid_channel(r, src)]
        })
        .collect()
}

/// Uncentered correlation (cosine) between two nonnegative profiles.
pub fn profile_correlation(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Signal model knobs for [`synthesize`]. Amplitudes are relative to a
/// fully active channel, whose carrier has unit RMS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub sample_rate: f64,
    pub channels: usize,
    /// RMS of white background noise on every channel.
    pub noise_level: f64,
    /// Amplitude of the power-line sinusoid.
    pub interference: f64,
    pub interference_freq: f64,
    /// Amplitude of electrode offset and slow baseline wander.
    pub drift: f64,
    /// Relative per-hold, per-channel spread of the activation intensity.
    pub trial_variability: f64,
    pub carrier_low: f64,
    pub carrier_high: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sample_rate: 1000.0,
            channels: 64,
            noise_level: 0.2,
            interference: 0.5,
            interference_freq: 60.0,
            drift: 0.5,
            trial_variability: 0.4,
            carrier_low: 20.0,
            carrier_high: 150.0,
        }
    }
}

fn channel_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Amplitude-modulated band-limited noise following `plan`.
///
/// Each channel carries unit-RMS noise band-limited to
/// `[carrier_low, carrier_high]`, scaled during every hold by the gesture's
/// intensity for that channel (jittered per hold), plus white background
/// noise, power-line interference and baseline drift. Fully determined by
/// `seed`; channels draw from independent ChaCha streams.
pub fn synthesize(
    plan: &SessionPlan,
    profiles: &GestureProfiles,
    params: &SynthParams,
    seed: u64,
) -> Result<(Recording, Vec<LabeledSegment>)> {
    plan.validate()?;
    let channels = params.channels;
    for (label, p) in profiles {
        if p.len() != channels || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "profile for `{label}` must hold {channels} nonnegative values"
            )));
        }
    }
    let fs = params.sample_rate;
    let mut plan_rng = channel_rng(seed, 0);
    let schedule = plan.schedule(&mut plan_rng);
    if let Some((_, l)) = schedule.iter().find(|(_, l)| !profiles.contains_key(l)) {
        return Err(Error::InvalidInput(format!("no profile for `{l}`")));
    }
    let hold = (plan.hold_s * fs).round() as usize;
    let labeled = (plan.labeled_s * fs).round() as usize;
    let offset = (hold - labeled) / 2;
    let len = hold * schedule.len();

    // intensity[h][c]
    let intensities: Vec<Vec<f64>> = schedule
        .iter()
        .map(|(_, label)| {
            profiles[label]
                .iter()
                .map(|&p| p * (1.0 + params.trial_variability * normal(&mut plan_rng)).max(0.0))
                .collect()
        })
        .collect();

    let carrier_filter = butterworth_bandpass(fs, params.carrier_low, params.carrier_high, 4)?;
    let carrier_gain = {
        let mut impulse = vec![0.0; 1 << 14];
        impulse[0] = 1.0;
        let h = carrier_filter.for_channels(1).process(0, &impulse)?;
        h.iter().map(|v| v * v).sum::<f64>().sqrt()
    };

    let data: Vec<Vec<f32>> = (0..channels)
        .into_par_iter()
        .map(|c| {
            let mut rng = channel_rng(seed, c as u64 + 1);
            let phase = rng.random_range(0.0..2.0 * PI);
            let offset_dc: f64 = rng.random_range(-1.0..=1.0);
            let wander_phase = rng.random_range(0.0..2.0 * PI);
            let white: Vec<f64> = (0..len).map(|_| normal(&mut rng)).collect();
            let carrier = carrier_filter.for_channels(1).process(0, &white)?;
            let mut out = Vec::with_capacity(len);
            for (t, carrier) in carrier.into_iter().enumerate() {
                let time = t as f64 / fs;
                let activation = intensities[t / hold][c] * carrier / carrier_gain;
                let background = params.noise_level * normal(&mut rng);
                let hum = params.interference
                    * (2.0 * PI * params.interference_freq * time + phase).sin();
                let wander =
                    params.drift * (offset_dc + (2.0 * PI * 0.05 * time + wander_phase).sin());
                out.push((activation + background + hum + wander) as f32);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let segments = schedule
        .iter()
        .enumerate()
        .map(|(h, &(trial, label))| LabeledSegment {
            label,
            start: h * hold + offset,
            end: h * hold + offset + labeled,
            trial,
        })
        .collect();
    let mut recording = Recording::from_channels(data, fs, "synthetic", format!("seed-{seed}"))?;
    recording.subject_id = "synthetic".into();
    Ok((recording, segments))
}

/// Session-to-session variability: per-channel gain, additive white noise of
/// RMS `extra_noise`, then rotation of every grid row by `channel_shift`
/// columns (the signal at `(r, c)` moves to `(r, c + shift mod 16)`).
pub fn perturb(
    recording: &Recording,
    gains: &[f64],
    extra_noise: f64,
    channel_shift: isize,
    seed: u64,
) -> Result<Recording> {
    let channels = recording.channels();
    if gains.len() != channels {
        return Err(Error::DimensionMismatch {
            expected: channels,
            actual: gains.len(),
        });
    }
    if channel_shift.unsigned_abs() >= channels {
        return Err(Error::InvalidInput(format!(
            "|channel_shift| must be below {channels}, got {channel_shift}"
        )));
    }
    if channel_shift != 0 && !channels.is_multiple_of(GRID_COLUMNS) {
        return Err(Error::InvalidInput(format!(
            "rotation needs whole grid rows of {GRID_COLUMNS}, recording has {channels} channels"
        )));
    }
    let scaled: Vec<Vec<f32>> = (0..channels)
        .into_par_iter()
        .map(|c| {
            let mut rng = channel_rng(seed, c as u64 + 1);
            recording
                .channel(c)
                .iter()
                .map(|&x| {
                    let mut y = x as f64 * gains[c];
                    if extra_noise != 0.0 {
                        y += extra_noise * normal(&mut rng);
                    }
                    y as f32
                })
                .collect()
        })
        .collect();
    let rotated = if channel_shift == 0 {
        scaled
    } else {
        rotate_columns(&(0..channels).collect::<Vec<_>>(), channel_shift)
            .into_iter()
            .map(|src| scaled[src].clone())
            .collect()
    };
    let mut out = Recording::from_channels(
        rotated,
        recording.sample_rate(),
        recording.subject_id.clone(),
        recording.session_id.clone(),
    )?;
    out.scale = recording.scale;
    Ok(out)
}

/// Mean normalized activity per electrode for one gesture, laid out on the
/// grid (`values[row][column]`) and rescaled so the brightest cell is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityMap {
    pub values: Vec<Vec<f64>>,
}

impl ActivityMap {
    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn columns(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn at_channel(&self, channel: usize) -> f64 {
        let (r, c) = grid_position(channel);
        self.values[r][c]
    }

    /// Binary portable graymap (P5), one pixel per electrode.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.columns(), self.rows()).into_bytes();
        for row in &self.values {
            out.extend(
                row.iter()
                    .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
        }
        out
    }
}

/// Averages frames per gesture over the given frame spans. Maps are rescaled
/// by their maximum; an all-zero map stays zero.
pub fn activity_maps(
    frames: &[FeatureFrame],
    segments: &[(GestureLabel, Range<usize>)],
) -> Result<BTreeMap<GestureLabel, ActivityMap>> {
    let channels = frames.first().map_or(0, |f| f.values.len());
    if channels == 0 || !channels.is_multiple_of(GRID_COLUMNS) {
        return Err(Error::InvalidInput(format!(
            "activity maps need whole grid rows of {GRID_COLUMNS} channels, got {channels}"
        )));
    }
    let mut sums: BTreeMap<GestureLabel, (Vec<f64>, usize)> = BTreeMap::new();
    for (label, range) in segments {
        if range.is_empty() || range.end > frames.len() {
            return Err(Error::InvalidInput(format!(
                "segment {range:?} for `{label}` holds no frames"
            )));
        }
        let (sum, n) = sums
            .entry(*label)
            .or_insert_with(|| (vec![0.0; channels], 0));
        for f in &frames[range.clone()] {
            for (s, v) in sum.iter_mut().zip(&f.values) {
                *s += v;
            }
            *n += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(label, (sum, n))| {
            let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            let max = mean.iter().copied().fold(0.0, f64::max);
            let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
            let values = mean
                .chunks(GRID_COLUMNS)
                .map(|row| row.iter().map(|v| v * scale).collect())
                .collect();
            (label, ActivityMap { values })
        })
        .collect())
}

/// Maps an external CSV recording onto the native model.
///
/// Every row is one time sample. `channel_columns[i]` names the CSV column
/// holding electrode `i` (in grid order). When `label_column` is set, runs
/// of rows with the same mapped label become segments; values missing from
/// `label_map` are unlabeled. The k-th run of a gesture is its trial k, and
/// `labeled_s` trims each run to its centred span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportDescriptor {
    pub format: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub header: bool,
    pub sample_rate: f64,
    #[serde(default = "one")]
    pub scale: f64,
    pub channel_columns: Vec<usize>,
    pub label_column: Option<usize>,
    #[serde(default)]
    pub label_map: BTreeMap<String, GestureLabel>,
    pub labeled_s: Option<f64>,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub session: String,
}

fn default_delimiter() -> char {
    ','
}

fn one() -> f64 {
    1.0
}

pub fn import_csv(
    desc: &ImportDescriptor,
    input: impl std::io::Read,
) -> Result<(Recording, Vec<LabeledSegment>)> {
    if desc.format != "csv" {
        return Err(Error::Import(format!(
            "unsupported import format `{}` (only `csv`)",
            desc.format
        )));
    }
    if desc.channel_columns.is_empty() {
        return Err(Error::Import("descriptor maps no channels".into()));
    }
    let delimiter = u8::try_from(desc.delimiter)
        .map_err(|_| Error::Import(format!("delimiter `{}` is not ASCII", desc.delimiter)))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(desc.header)
        .trim(csv::Trim::All)
        .from_reader(input);
    let channels = desc.channel_columns.len();
    let mut data = vec![Vec::new(); channels];
    let mut labels: Vec<Option<GestureLabel>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Import(format!("row {row}: {e}")))?;
        let field = |col: usize| {
            record.get(col).ok_or_else(|| {
                Error::Import(format!(
                    "row {row} has {} columns, needs column {col}",
                    record.len()
                ))
            })
        };
        for (ch, &col) in desc.channel_columns.iter().enumerate() {
            let v: f32 = field(col)?
                .parse()
                .map_err(|_| Error::Import(format!("row {row} column {col}: not a number")))?;
            data[ch].push(v);
        }
        if let Some(col) = desc.label_column {
            labels.push(desc.label_map.get(field(col)?).copied());
        }
    }
    let mut recording = Recording::from_channels(
        data,
        desc.sample_rate,
        desc.subject.clone(),
        desc.session.clone(),
    )?;
    recording.scale = desc.scale;

    let mut segments = Vec::new();
    let mut occurrences: BTreeMap<GestureLabel, usize> = BTreeMap::new();
    let mut start = 0;
    while start < labels.len() {
        let mut end = start + 1;
        while end < labels.len() && labels[end] == labels[start] {
            end += 1;
        }
        if let Some(label) = labels[start] {
            let trial = occurrences.entry(label).or_insert(0);
            let (mut s, mut e) = (start, end);
            if let Some(keep) = desc.labeled_s {
                let keep = ((keep * desc.sample_rate).round() as usize).min(end - start);
                s = start + (end - start - keep) / 2;
                e = s + keep;
            }
            if s < e {
                segments.push(LabeledSegment {
                    label,
                    start: s,
                    end: e,
                    trial: *trial,
                });
            }
            *trial += 1;
        }
        start = end;
    }
    Ok((recording, segments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{preprocess, FilterSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn small_plan(trials: usize) -> SessionPlan {
        SessionPlan {
            trials,
            ..Default::default()
        }
    }

    #[test]
    fn grid_mapping_is_bijective() {
        let mut seen = vec![false; 64];
        for r in 0..GRID_ROWS {
            for c in 0..GRID_COLUMNS {
                let ch = grid_channel(r, c);
                assert_eq!(grid_position(ch), (r, c));
                seen[ch] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn segments_validation() {
        let s = |start, end| LabeledSegment {
            label: GestureLabel::Fist,
            start,
            end,
            trial: 0,
        };
        assert!(validate_segments(&[s(0, 10), s(10, 20)], 20).is_ok());
        assert!(matches!(
            validate_segments(&[s(0, 10), s(5, 15)], 20),
            Err(Error::OverlappingSegments { .. })
        ));
        assert!(validate_segments(&[s(0, 21)], 20).is_err());
        assert!(validate_segments(&[s(5, 5)], 20).is_err());
    }

    #[test]
    fn default_profiles_are_distinct() {
        let p = default_profiles();
        assert_eq!(p.len(), 5);
        let labels: Vec<_> = p.keys().copied().collect();
        for (i, a) in labels.iter().enumerate() {
            for b in &labels[..i] {
                let r = profile_correlation(&p[a], &p[b]);
                assert!(r <= 0.5, "{a} vs {b}: {r}");
            }
        }
        assert!(p[&GestureLabel::Rest].iter().all(|&v| v <= 0.05));
    }

    #[test]
    fn synthesized_labels_are_centred() {
        let plan = small_plan(2);
        let (rec, segs) =
            synthesize(&plan, &default_profiles(), &SynthParams::default(), 3).unwrap();
        assert_eq!(rec.len(), 2 * 6 * 5000);
        assert_eq!(segs.len(), 12);
        for (h, s) in segs.iter().enumerate() {
            assert_eq!(s.end - s.start, 3000);
            assert_eq!(s.start, h * 5000 + 1000);
        }
        assert_eq!(segs[0].label, GestureLabel::Rest);
        assert_eq!(segs[5].label, GestureLabel::Rest);
        assert_eq!(segs[6].trial, 1);
        let hard: std::collections::BTreeSet<_> = segs[1..5].iter().map(|s| s.label).collect();
        assert_eq!(hard.len(), 4);
    }

    #[test]
    fn silent_rest_is_exactly_zero() {
        let params = SynthParams {
            noise_level: 0.0,
            interference: 0.0,
            drift: 0.0,
            ..Default::default()
        };
        let mut profiles = default_profiles();
        profiles.insert(GestureLabel::Rest, vec![0.0; 64]);
        let (rec, segs) = synthesize(&small_plan(1), &profiles, &params, 9).unwrap();
        for s in segs.iter().filter(|s| s.label == GestureLabel::Rest) {
            for c in 0..64 {
                assert!(rec.channel(c)[s.start..s.end].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synthesize(
            &small_plan(1),
            &default_profiles(),
            &SynthParams::default(),
            5,
        )
        .unwrap();
        let b = synthesize(
            &small_plan(1),
            &default_profiles(),
            &SynthParams::default(),
            5,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = synthesize(
            &small_plan(1),
            &default_profiles(),
            &SynthParams::default(),
            6,
        )
        .unwrap();
        assert_ne!(a.0, c.0);
    }

    /// Gesture driving channels 0..8 only: after preprocessing, the eight
    /// strongest channels in its labeled frames are exactly 0..8, and the
    /// activity map's brightest cells sit at their grid positions.
    #[test]
    fn localized_gesture_survives_preprocessing() {
        let mut profiles = GestureProfiles::new();
        let mut a = vec![0.0; 64];
        a[..8].fill(1.0);
        profiles.insert(GestureLabel::Fist, a);
        profiles.insert(GestureLabel::Rest, vec![0.0; 64]);
        let plan = SessionPlan {
            trials: 2,
            gestures: vec![GestureLabel::Fist],
            ..Default::default()
        };
        let (rec, segs) = synthesize(&plan, &profiles, &SynthParams::default(), 1).unwrap();
        let (frames, _) = preprocess(&rec, &FilterSpec::default(), None).unwrap();
        let spans: Vec<_> = segs.iter().map(|s| (s.label, s.frame_range(100))).collect();
        let fist: Vec<_> = spans
            .iter()
            .filter(|(l, _)| *l == GestureLabel::Fist)
            .cloned()
            .collect();
        let mut mean = vec![0.0; 64];
        let mut n = 0;
        for (_, r) in &fist {
            for f in &frames[r.clone()] {
                for (m, v) in mean.iter_mut().zip(&f.values) {
                    *m += v;
                }
                n += 1;
            }
        }
        assert!(n > 0);
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
        let mut top: Vec<_> = order[..8].to_vec();
        top.sort();
        assert_eq!(top, (0..8).collect::<Vec<_>>());

        let maps = activity_maps(&frames, &spans).unwrap();
        let map = &maps[&GestureLabel::Fist];
        assert_eq!((map.rows(), map.columns()), (4, 16));
        let mut cells: Vec<usize> = (0..64).collect();
        cells.sort_by(|&a, &b| map.at_channel(b).total_cmp(&map.at_channel(a)));
        let mut bright = cells[..8].to_vec();
        bright.sort();
        assert_eq!(bright, (0..8).collect::<Vec<_>>());
    }

    fn small_recording(channels: usize, len: usize, seed: u64) -> Recording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        Recording::from_channels(data, 1000.0, "s", "t").unwrap()
    }

    #[test]
    fn perturb_identity_and_rotation() {
        let rec = small_recording(64, 50, 2);
        assert_eq!(perturb(&rec, &[1.0; 64], 0.0, 0, 0).unwrap(), rec);
        assert_eq!(perturb(&rec, &[1.0; 64], 0.0, 16, 0).unwrap(), rec);
        let shifted = perturb(&rec, &[1.0; 64], 0.0, 1, 0).unwrap();
        for r in 0..4 {
            for c in 0..16 {
                let from = grid_channel(r, (c + 15) % 16);
                assert_eq!(shifted.channel(grid_channel(r, c)), rec.channel(from));
            }
        }
        let back = perturb(&shifted, &[1.0; 64], 0.0, -1, 0).unwrap();
        assert_eq!(back, rec);
        assert!(perturb(&rec, &[1.0; 64], 0.0, 64, 0).is_err());
        assert!(perturb(&rec, &[1.0; 63], 0.0, 0, 0).is_err());
    }

    #[test]
    fn perturb_inverse_gains() {
        let rec = small_recording(64, 100, 3);
        let gains: Vec<f64> = (0..64).map(|c| 0.8 + 0.4 * c as f64 / 63.0).collect();
        let inverse: Vec<f64> = gains.iter().map(|g| 1.0 / g).collect();
        let round = perturb(
            &perturb(&rec, &gains, 0.0, 0, 1).unwrap(),
            &inverse,
            0.0,
            0,
            1,
        )
        .unwrap();
        for (a, b) in round.samples().iter().zip(rec.samples()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn activity_map_rules() {
        let frame = |v: Vec<f64>| FeatureFrame {
            values: v,
            time_index: 0,
        };
        let v: Vec<f64> = (0..64).map(|c| c as f64 / 126.0).collect();
        let maps = activity_maps(&[frame(v.clone())], &[(GestureLabel::Open, 0..1)]).unwrap();
        let m = &maps[&GestureLabel::Open];
        for c in 0..64 {
            assert!((m.at_channel(c) - v[c] / v[63]).abs() < 1e-12);
        }
        let maps = activity_maps(
            &[frame(vec![0.3; 64]), frame(vec![0.0; 64])],
            &[(GestureLabel::Fist, 0..1), (GestureLabel::Rest, 1..2)],
        )
        .unwrap();
        assert!(maps[&GestureLabel::Fist]
            .values
            .iter()
            .flatten()
            .all(|&x| x == 1.0));
        assert!(maps[&GestureLabel::Rest]
            .values
            .iter()
            .flatten()
            .all(|&x| x == 0.0));
        assert!(activity_maps(&[frame(vec![0.0; 64])], &[(GestureLabel::Fist, 0..0)]).is_err());

        let pgm = maps[&GestureLabel::Fist].to_pgm();
        assert!(pgm.starts_with(b"P5\n16 4\n255\n"));
        assert_eq!(pgm.len(), b"P5\n16 4\n255\n".len() + 64);
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.toml");
        let rec = small_recording(64, 300, 4);
        let segs = vec![
            LabeledSegment {
                label: GestureLabel::Rest,
                start: 0,
                end: 100,
                trial: 0,
            },
            LabeledSegment {
                label: GestureLabel::Open,
                start: 150,
                end: 300,
                trial: 0,
            },
        ];
        save(&path, &rec, &segs).unwrap();
        assert_eq!(load(&path).unwrap(), (rec.clone(), segs.clone()));

        // truncated payload
        let payload = payload_path(&path);
        let bytes = std::fs::read(&payload).unwrap();
        std::fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load(&path), Err(Error::Shape(_))));
        // 63 rows where the manifest says 64
        std::fs::write(&payload, &bytes[..bytes.len() - 300 * 4]).unwrap();
        assert!(matches!(load(&path), Err(Error::Shape(_))));
        // corrupted payload of the right size
        let mut bad = bytes.clone();
        bad[17] ^= 1;
        std::fs::write(&payload, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Checksum { .. })));
        std::fs::write(&payload, &bytes).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"open\"", "\"wave\"")).unwrap();
        assert!(matches!(load(&path), Err(Error::UnknownLabel(_))));
        std::fs::write(&path, text.replace("start = 150", "start = 50")).unwrap();
        assert!(matches!(
            load(&path),
            Err(Error::OverlappingSegments { .. })
        ));
    }

    #[test]
    fn csv_import() {
        let desc = ImportDescriptor {
            format: "csv".into(),
            delimiter: ',',
            header: true,
            sample_rate: 1000.0,
            scale: 1.0,
            channel_columns: vec![2, 1],
            label_column: Some(0),
            label_map: [
                ("1".to_string(), GestureLabel::Fist),
                ("0".to_string(), GestureLabel::Rest),
            ]
            .into(),
            labeled_s: Some(0.002),
            subject: "x".into(),
            session: "y".into(),
        };
        let text =
            "label,a,b\n0,1,2\n0,3,4\n0,5,6\n9,0,0\n1,7,8\n1,9,10\n1,11,12\n1,13,14\n0,0,0\n";
        let (rec, segs) = import_csv(&desc, text.as_bytes()).unwrap();
        assert_eq!(rec.channels(), 2);
        assert_eq!(
            rec.channel(0),
            &[2.0, 4.0, 6.0, 0.0, 8.0, 10.0, 12.0, 14.0, 0.0]
        );
        assert_eq!(
            segs,
            vec![
                LabeledSegment {
                    label: GestureLabel::Rest,
                    start: 0,
                    end: 2,
                    trial: 0
                },
                LabeledSegment {
                    label: GestureLabel::Fist,
                    start: 5,
                    end: 7,
                    trial: 0
                },
                LabeledSegment {
                    label: GestureLabel::Rest,
                    start: 8,
                    end: 9,
                    trial: 1
                },
            ]
        );
        let bad = ImportDescriptor {
            format: "mat".into(),
            ..desc
        };
        assert!(matches!(
            import_csv(&bad, text.as_bytes()),
            Err(Error::Import(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn format_round_trip(
            channels in 1usize..6,
            len in 1usize..200,
            seed in any::<u64>(),
            scale in 0.001f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f32> = (0..channels * len).map(|_| f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)).collect();
            let rec = Recording::from_flat(samples, channels, 977.5, scale, "subj", "sess").unwrap();
            let segs = vec![LabeledSegment { label: GestureLabel::Lower, start: 0, end: len, trial: 3 }];
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.toml");
            save(&path, &rec, &segs).unwrap();
            let (back, back_segs) = load(&path).unwrap();
            prop_assert_eq!(back.samples().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            rec.samples().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, rec);
            prop_assert_eq!(back_segs, segs);
        }

        #[test]
        fn activity_maps_ignore_frame_order(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut frames: Vec<FeatureFrame> = (0..n)
                .map(|t| FeatureFrame { values: (0..64).map(|_| rng.random::<f64>()).collect(), time_index: t })
                .collect();
            let a = activity_maps(&frames, &[(GestureLabel::Raise, 0..n)]).unwrap();
            frames.shuffle(&mut rng);
            let b = activity_maps(&frames, &[(GestureLabel::Raise, 0..n)]).unwrap();
            for (x, y) in a[&GestureLabel::Raise].values.iter().flatten().zip(b[&GestureLabel::Raise].values.iter().flatten()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
