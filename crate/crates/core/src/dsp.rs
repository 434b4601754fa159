//! Preprocessing chain: notch → band-pass → rectify + moving average →
//! per-channel normalization → decimation.
//!
//! Filters are realized as cascades of second-order sections evaluated in
//! direct form II transposed, one causal pass per channel.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Recording;
use crate::{Error, Result};

/// Preprocessing parameters. Defaults: 1 kS/s input, 60 Hz notch with
/// Q = 50, 8th-order 1–200 Hz band-pass, 100-sample moving average and
/// decimation by 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub sample_rate: f64,
    pub notch_freq: f64,
    pub notch_q: f64,
    pub bp_low: f64,
    pub bp_high: f64,
    pub bp_order: usize,
    pub ma_window: usize,
    pub decim_factor: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            sample_rate: 1000.0,
            notch_freq: 60.0,
            notch_q: 50.0,
            bp_low: 1.0,
            bp_high: 200.0,
            bp_order: 8,
            ma_window: 100,
            decim_factor: 100,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return fail(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            ));
        }
        if !(self.bp_low > 0.0 && self.bp_low < self.bp_high && self.bp_high < nyquist) {
            return fail(format!(
                "band-pass edges must satisfy 0 < {} < {} < {nyquist}",
                self.bp_low, self.bp_high
            ));
        }
        if !(self.notch_freq > 0.0 && self.notch_freq < nyquist) {
            return fail(format!(
                "notch_freq {} outside (0, {nyquist})",
                self.notch_freq
            ));
        }
        if !(self.notch_q.is_finite() && self.notch_q > 0.0) {
            return fail(format!("notch_q must be positive, got {}", self.notch_q));
        }
        if self.bp_order < 2 || !self.bp_order.is_multiple_of(2) {
            return fail(format!(
                "bp_order must be even and >= 2, got {}",
                self.bp_order
            ));
        }
        if self.ma_window == 0 {
            return fail("ma_window must be >= 1".into());
        }
        if self.decim_factor == 0 {
            return fail("decim_factor must be >= 1".into());
        }
        Ok(())
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / sample_rate);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    fn scaled(self, gain: f64) -> Self {
        Biquad {
            b0: self.b0 * gain,
            b1: self.b1 * gain,
            b2: self.b2 * gain,
            ..self
        }
    }
}

/// Cascade of sections with two delay values per section per channel.
#[derive(Clone, Debug)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
    channels: usize,
    state: Vec<[f64; 2]>,
}

impl BiquadCascade {
    /// A cascade with state allocated for one channel.
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self::with_channels(sections, 1)
    }

    pub fn with_channels(sections: Vec<Biquad>, channels: usize) -> Self {
        let state = vec![[0.0; 2]; sections.len() * channels];
        Self {
            sections,
            channels,
            state,
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Same coefficients, fresh zeroed state for `channels` channels.
    pub fn for_channels(&self, channels: usize) -> Self {
        Self::with_channels(self.sections.clone(), channels)
    }

    /// Appends the sections of `next` after this cascade's.
    pub fn then(&self, next: &BiquadCascade) -> Self {
        let mut sections = self.sections.clone();
        sections.extend_from_slice(&next.sections);
        Self::with_channels(sections, self.channels)
    }

    pub fn reset(&mut self) {
        self.state.fill([0.0; 2]);
    }

    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(freq, sample_rate))
            .product()
    }

    pub fn magnitude(&self, freq: f64, sample_rate: f64) -> f64 {
        self.response(freq, sample_rate).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Filters one channel's block, continuing from its current state.
    pub fn process(&mut self, channel: usize, input: &[f64]) -> Result<Vec<f64>> {
        if channel >= self.channels {
            return Err(Error::DimensionMismatch {
                expected: self.channels,
                actual: channel + 1,
            });
        }
        if let Some(index) = input.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { channel, index });
        }
        let mut buf = input.to_vec();
        let n = self.sections.len();
        for (section, state) in self
            .sections
            .iter()
            .zip(&mut self.state[channel * n..(channel + 1) * n])
        {
            run_section(section, state, &mut buf);
        }
        Ok(buf)
    }

    /// Filters every channel; `input.len()` must match the state allocation.
    pub fn apply(&mut self, input: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.channels {
            return Err(Error::DimensionMismatch {
                expected: self.channels,
                actual: input.len(),
            });
        }
        input
            .iter()
            .enumerate()
            .map(|(c, x)| self.process(c, x))
            .collect()
    }
}

#[inline]
fn run_section(s: &Biquad, state: &mut [f64; 2], buf: &mut [f64]) {
    let [mut s1, mut s2] = *state;
    for x in buf.iter_mut() {
        let xin = *x;
        let y = s.b0 * xin + s1;
        s1 = s.b1 * xin - s.a1 * y + s2;
        s2 = s.b2 * xin - s.a2 * y;
        *x = y;
    }
    *state = [s1, s2];
}

/// Second-order notch (RBJ cookbook construction). Unity gain at DC and
/// Nyquist, a zero pair on the unit circle at `notch_freq`.
pub fn design_notch(spec: &FilterSpec) -> Result<BiquadCascade> {
    spec.validate()?;
    Ok(BiquadCascade::new(vec![notch_section(
        spec.notch_freq,
        spec.notch_q,
        spec.sample_rate,
    )]))
}

fn notch_section(freq: f64, q: f64, sample_rate: f64) -> Biquad {
    let w0 = 2.0 * PI * freq / sample_rate;
    let alpha = w0.sin() / (2.0 * q);
    let cos = w0.cos();
    let a0 = 1.0 + alpha;
    Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * cos / a0,
        b2: 1.0 / a0,
        a1: -2.0 * cos / a0,
        a2: (1.0 - alpha) / a0,
    }
}

/// Butterworth band-pass from the spec's edges and order.
pub fn design_bandpass(spec: &FilterSpec) -> Result<BiquadCascade> {
    spec.validate()?;
    butterworth_bandpass(spec.sample_rate, spec.bp_low, spec.bp_high, spec.bp_order)
}

/// Butterworth band-pass of total order `order` (`order / 2` sections).
///
/// The analog low-pass prototype of order `order / 2` is shifted to a
/// band-pass around the prewarped edges, every pole pair is mapped through
/// the bilinear transform, and each section is scaled to unit gain at the
/// geometric centre frequency, where the ideal response is exactly 1.
pub fn butterworth_bandpass(
    sample_rate: f64,
    low: f64,
    high: f64,
    order: usize,
) -> Result<BiquadCascade> {
    let nyquist = sample_rate / 2.0;
    if !(low > 0.0 && low < high && high < nyquist) {
        return Err(Error::Config(format!(
            "band-pass edges must satisfy 0 < {low} < {high} < {nyquist}"
        )));
    }
    if order < 2 || !order.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "band-pass order must be even and >= 2, got {order}"
        )));
    }
    let proto_order = order / 2;
    let fs2 = 2.0 * sample_rate;
    let wl = fs2 * (PI * low / sample_rate).tan();
    let wh = fs2 * (PI * high / sample_rate).tan();
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;
    // Digital frequency that the analog centre maps to.
    let centre_hz = sample_rate / PI * (w0 / fs2).atan();

    // Left-half-plane prototype poles, each split into two band-pass poles.
    let analog: Vec<Complex64> = (0..proto_order)
        .flat_map(|k| {
            let theta = PI * (2 * k + proto_order + 1) as f64 / (2 * proto_order) as f64;
            let pb = Complex64::from_polar(1.0, theta) * bw / 2.0;
            let root = (pb * pb - w0 * w0).sqrt();
            [pb + root, pb - root]
        })
        .collect();
    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
    // Zeros at z = 1 and z = -1 in every section.
    let section = |a1: f64, a2: f64| Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: -1.0,
        a1,
        a2,
    };
    let is_real = |s: &Complex64| s.im.abs() <= 1e-9 * s.norm();
    let mut sections: Vec<Biquad> = analog
        .iter()
        .filter(|s| !is_real(s) && s.im > 0.0)
        .map(|&s| {
            let z = bilinear(s);
            section(-2.0 * z.re, z.norm_sqr())
        })
        .collect();
    // A real prototype pole (odd prototype order) over a wide band gives two
    // real band-pass poles; they share one section.
    let real: Vec<f64> = analog
        .iter()
        .filter(|s| is_real(s))
        .map(|&s| bilinear(s).re)
        .collect();
    for pair in real.chunks(2) {
        let (z1, z2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push(section(-(z1 + z2), z1 * z2));
    }
    debug_assert_eq!(sections.len(), proto_order);
    let sections = sections
        .into_iter()
        .map(|s| {
            let g = s.response(centre_hz, sample_rate).norm();
            s.scaled(1.0 / g)
        })
        .collect();
    Ok(BiquadCascade::new(sections))
}

/// Rectified moving average: `y[t]` is the mean of `|x|` over the last
/// `window` samples, or over the available prefix for `t < window - 1`.
pub fn envelope(samples: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(samples.len());
    let mut sum = 0.0;
    for (t, x) in samples.iter().enumerate() {
        sum += x.abs();
        if t >= window {
            sum -= samples[t - window].abs();
        }
        let n = (t + 1).min(window);
        out.push((sum / n as f64).max(0.0));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMethod {
    /// Per-channel maximum of the envelope over the fit recording.
    MaxEnvelope,
}

/// Per-channel scale fitted on training data and reused unchanged on test
/// data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNormalization {
    pub method: NormalizationMethod,
    pub scales: Vec<f64>,
}

impl ChannelNormalization {
    /// Builds scales from per-channel maxima; dead channels (max 0) get 1.
    pub fn from_maxima(maxima: &[f64]) -> Result<Self> {
        if maxima.is_empty() {
            return Err(Error::InvalidInput("no channels to normalize".into()));
        }
        let scales = maxima
            .iter()
            .map(|&m| if m > 0.0 && m.is_finite() { m } else { 1.0 })
            .collect();
        Ok(Self {
            method: NormalizationMethod::MaxEnvelope,
            scales,
        })
    }

    pub fn channels(&self) -> usize {
        self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput(
                "normalization scales must be finite and positive".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, channel: usize, value: f64) -> f64 {
        (value / self.scales[channel]).clamp(0.0, 1.0)
    }
}

pub fn fit_normalization(training: &[Vec<f64>]) -> Result<ChannelNormalization> {
    if training.is_empty() || training.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput(
            "normalization needs at least one sample per channel".into(),
        ));
    }
    let maxima: Vec<f64> = training
        .iter()
        .map(|ch| ch.iter().copied().fold(0.0, f64::max))
        .collect();
    ChannelNormalization::from_maxima(&maxima)
}

/// One preprocessed sample: one value in `[0, 1]` per channel, at the
/// decimated rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub values: Vec<f64>,
    pub time_index: usize,
}

/// Index of the last raw sample folded into frame `time_index`.
pub fn frame_end_sample(time_index: usize, decim_factor: usize) -> usize {
    (time_index + 1) * decim_factor - 1
}

/// Divides by the fitted scales, clamps to `[0, 1]` and keeps the last
/// sample of every `decim_factor` block.
pub fn normalize_decimate(
    streams: &[Vec<f64>],
    norm: &ChannelNormalization,
    decim_factor: usize,
) -> Result<Vec<FeatureFrame>> {
    if streams.len() != norm.channels() {
        return Err(Error::DimensionMismatch {
            expected: norm.channels(),
            actual: streams.len(),
        });
    }
    if decim_factor == 0 {
        return Err(Error::Config("decim_factor must be >= 1".into()));
    }
    let len = streams.iter().map(Vec::len).min().unwrap_or(0);
    let decimated: Vec<Vec<f64>> = streams
        .iter()
        .map(|ch| decimate(&ch[..len], decim_factor))
        .collect();
    Ok(assemble_frames(&decimated, norm))
}

fn decimate(x: &[f64], factor: usize) -> Vec<f64> {
    x.iter().skip(factor - 1).step_by(factor).copied().collect()
}

fn assemble_frames(decimated: &[Vec<f64>], norm: &ChannelNormalization) -> Vec<FeatureFrame> {
    let frames = decimated.first().map_or(0, Vec::len);
    (0..frames)
        .map(|t| FeatureFrame {
            values: decimated
                .iter()
                .enumerate()
                .map(|(c, ch)| norm.apply(c, ch[t]))
                .collect(),
            time_index: t,
        })
        .collect()
}

struct ChannelFeatures {
    max: f64,
    decimated: Vec<f64>,
}

/// Full chain on one recording. When `norm` is `None` the normalization is
/// fitted on this recording; otherwise the given one is reused. Returns the
/// frames and the normalization in effect.
pub fn preprocess(
    recording: &Recording,
    spec: &FilterSpec,
    norm: Option<&ChannelNormalization>,
) -> Result<(Vec<FeatureFrame>, ChannelNormalization)> {
    spec.validate()?;
    if recording.sample_rate() != spec.sample_rate {
        return Err(Error::Config(format!(
            "recording sample rate {} differs from filter sample rate {}",
            recording.sample_rate(),
            spec.sample_rate
        )));
    }
    if let Some(n) = norm {
        n.validate()?;
        if n.channels() != recording.channels() {
            return Err(Error::DimensionMismatch {
                expected: recording.channels(),
                actual: n.channels(),
            });
        }
    }
    let chain = design_notch(spec)?.then(&design_bandpass(spec)?);
    let scale = recording.scale();
    let per_channel: Vec<ChannelFeatures> = (0..recording.channels())
        .into_par_iter()
        .map(|c| {
            let raw: Vec<f64> = recording
                .channel(c)
                .iter()
                .map(|&x| x as f64 * scale)
                .collect();
            let mut filter = chain.for_channels(c + 1);
            let filtered = filter.process(c, &raw)?;
            let env = envelope(&filtered, spec.ma_window);
            Ok(ChannelFeatures {
                max: env.iter().copied().fold(0.0, f64::max),
                decimated: decimate(&env, spec.decim_factor),
            })
        })
        .collect::<Result<_>>()?;
    let norm = match norm {
        Some(n) => n.clone(),
        None => {
            let maxima: Vec<f64> = per_channel.iter().map(|c| c.max).collect();
            if recording.is_empty() {
                return Err(Error::InvalidInput(
                    "cannot fit normalization on an empty recording".into(),
                ));
            }
            ChannelNormalization::from_maxima(&maxima)?
        }
    };
    let decimated: Vec<Vec<f64>> = per_channel.into_iter().map(|c| c.decimated).collect();
    Ok((assemble_frames(&decimated, &norm), norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    /// Amplitude of the steady-state response to a unit sinusoid, measured by
    /// correlating the last `measure_s` seconds with sin/cos.
    fn measured_gain(cascade: &BiquadCascade, freq: f64, fs: f64, settle_s: f64) -> f64 {
        let measure_s = 2.0;
        let n_settle = (settle_s * fs) as usize;
        let n_measure = (measure_s * fs) as usize;
        let x: Vec<f64> = (0..n_settle + n_measure)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect();
        let mut c = cascade.for_channels(1);
        let y = c.process(0, &x).unwrap();
        let (mut si, mut co) = (0.0, 0.0);
        for (i, v) in y.iter().enumerate().skip(n_settle) {
            let ph = 2.0 * PI * freq * i as f64 / fs;
            si += v * ph.sin();
            co += v * ph.cos();
        }
        2.0 * (si * si + co * co).sqrt() / n_measure as f64
    }

    /// Analog Butterworth band-pass magnitude at the prewarped frequency.
    fn analog_bandpass(freq: f64, spec: &FilterSpec) -> f64 {
        let fs = spec.sample_rate;
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh, w) = (warp(spec.bp_low), warp(spec.bp_high), warp(freq));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(spec.bp_order as i32)).sqrt()
    }

    #[test]
    fn spec_validation() {
        assert!(FilterSpec::default().validate().is_ok());
        let bad = [
            FilterSpec {
                bp_high: 600.0,
                ..Default::default()
            },
            FilterSpec {
                bp_low: 0.0,
                ..Default::default()
            },
            FilterSpec {
                bp_order: 7,
                ..Default::default()
            },
            FilterSpec {
                ma_window: 0,
                ..Default::default()
            },
            FilterSpec {
                decim_factor: 0,
                ..Default::default()
            },
            FilterSpec {
                notch_freq: 500.0,
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(
                matches!(design_notch(&spec), Err(Error::Config(_))),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn notch_response() {
        let spec = FilterSpec::default();
        let notch = design_notch(&spec).unwrap();
        assert!(notch.is_stable());
        assert!(db(notch.magnitude(0.0, 1000.0)).abs() < 0.1);
        assert!(db(notch.magnitude(500.0, 1000.0)).abs() < 0.1);
        assert!(notch.magnitude(60.0, 1000.0) < 1e-9);
        assert!(db(measured_gain(&notch, 60.0, 1000.0, 5.0)) <= -20.0);
        assert!(db(measured_gain(&notch, 10.0, 1000.0, 5.0)).abs() <= 0.5);

        let dc = vec![0.7; 3000];
        let y = notch.for_channels(1).process(0, &dc).unwrap();
        assert!((y[2999] - 0.7).abs() < 0.007);
    }

    #[test]
    fn bandpass_matches_analog_prototype() {
        let spec = FilterSpec::default();
        let bp = design_bandpass(&spec).unwrap();
        assert_eq!(bp.sections().len(), 4);
        assert!(bp.is_stable());
        for f in [0.5, 1.0, 2.0, 10.0, 50.0, 100.0, 200.0, 300.0, 400.0, 490.0] {
            let got = bp.magnitude(f, spec.sample_rate);
            let want = analog_bandpass(f, &spec);
            assert!((got - want).abs() < 1e-9, "{f} Hz: {got} vs {want}");
        }
        // -3 dB edges
        assert!((db(bp.magnitude(1.0, 1000.0)) + 3.0103).abs() < 0.01);
        assert!((db(bp.magnitude(200.0, 1000.0)) + 3.0103).abs() < 0.01);
        assert!(db(bp.magnitude(50.0, 1000.0)).abs() < 1.0);
        assert!(db(bp.magnitude(400.0, 1000.0)) <= -40.0);
    }

    #[test]
    fn bandpass_odd_prototype_order() {
        let bp = butterworth_bandpass(1000.0, 20.0, 150.0, 6).unwrap();
        assert_eq!(bp.sections().len(), 3);
        assert!(bp.is_stable());
        let spec = FilterSpec {
            bp_low: 20.0,
            bp_high: 150.0,
            bp_order: 6,
            ..Default::default()
        };
        for f in [5.0, 20.0, 60.0, 150.0, 300.0] {
            assert!((bp.magnitude(f, 1000.0) - analog_bandpass(f, &spec)).abs() < 1e-9);
        }
    }

    #[test]
    fn bandpass_blocks_dc() {
        let bp = design_bandpass(&FilterSpec::default()).unwrap();
        let y = bp.for_channels(1).process(0, &vec![1.0; 10_000]).unwrap();
        assert!(y[9999].abs() < 0.01);
    }

    #[test]
    fn measured_matches_analytic() {
        let spec = FilterSpec::default();
        let chain = design_notch(&spec)
            .unwrap()
            .then(&design_bandpass(&spec).unwrap());
        for f in [3.0, 7.0, 15.0, 30.0, 45.0, 75.0, 120.0, 180.0, 250.0, 400.0] {
            let m = measured_gain(&chain, f, 1000.0, 10.0);
            let a = chain.magnitude(f, 1000.0);
            assert!((db(m) - db(a)).abs() < 0.5, "{f} Hz: {m} vs {a}");
        }
    }

    #[test]
    fn impulse_decays() {
        let spec = FilterSpec::default();
        let mut chain = design_notch(&spec)
            .unwrap()
            .then(&design_bandpass(&spec).unwrap());
        let mut x = vec![0.0; 11_000];
        x[0] = 1.0;
        let y = chain.process(0, &x).unwrap();
        assert!(y[10_000..].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn apply_trivial_cases() {
        let mut c = BiquadCascade::with_channels(vec![Biquad::IDENTITY], 2);
        let out = c.apply(&[vec![0.0; 5], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(out[0], vec![0.0; 5]);
        assert_eq!(out[1], vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            c.apply(&[vec![0.0]]),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
        let err = c.apply(&[vec![0.0], vec![0.0, f64::NAN]]).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFinite {
                channel: 1,
                index: 1
            }
        ));
    }

    #[test]
    fn notch_impulse_matches_difference_equation() {
        let spec = FilterSpec::default();
        let notch = design_notch(&spec).unwrap();
        let s = notch.sections()[0];
        let n = 2000;
        let mut x = vec![0.0; n];
        x[0] = 1.0;
        let got = notch.for_channels(1).process(0, &x).unwrap();
        // y[t] = b0 x[t] + b1 x[t-1] + b2 x[t-2] - a1 y[t-1] - a2 y[t-2]
        let mut y = vec![0.0; n];
        for t in 0..n {
            let xm = |k: usize| if t >= k { x[t - k] } else { 0.0 };
            let ym = |y: &[f64], k: usize| if t >= k { y[t - k] } else { 0.0 };
            y[t] = s.b0 * x[t] + s.b1 * xm(1) + s.b2 * xm(2) - s.a1 * ym(&y, 1) - s.a2 * ym(&y, 2);
        }
        for t in 0..n {
            assert!((got[t] - y[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn state_carries_across_blocks() {
        let spec = FilterSpec::default();
        let bp = design_bandpass(&spec).unwrap();
        let x: Vec<f64> = (0..1000)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0)
            .collect();
        let whole = bp.for_channels(1).process(0, &x).unwrap();
        let mut c = bp.for_channels(1);
        let mut split = c.process(0, &x[..333]).unwrap();
        split.extend(c.process(0, &x[333..]).unwrap());
        assert_eq!(whole, split);
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(envelope(&[2.0; 10], 4), vec![2.0; 10]);
        let alt: Vec<f64> = (0..20)
            .map(|i| if i % 2 == 0 { 3.0 } else { -3.0 })
            .collect();
        assert!(envelope(&alt, 4).iter().all(|&y| y == 3.0));

        let mut x = vec![0.0; 300];
        x[0] = 1.0;
        let y = envelope(&x, 100);
        for t in 0..300usize {
            // direct windowed mean
            let lo = t.saturating_sub(99);
            let want = x[lo..=t].iter().map(|v: &f64| v.abs()).sum::<f64>() / (t - lo + 1) as f64;
            assert!((y[t] - want).abs() < 1e-12);
        }
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!((y[99] - 0.01).abs() < 1e-15);
        assert!(y[100..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_rules() {
        let n = fit_normalization(&[vec![0.2, 0.5, 0.1], vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(n.scales, vec![0.5, 1.0]);
        assert!(fit_normalization(&[]).is_err());
        assert!(fit_normalization(&[vec![]]).is_err());

        let train = vec![vec![0.1, 0.4, 0.3], vec![2.0, 1.0, 0.5]];
        let n = fit_normalization(&train).unwrap();
        for (c, ch) in train.iter().enumerate() {
            let max = ch.iter().map(|&v| n.apply(c, v)).fold(0.0, f64::max);
            assert_eq!(max, 1.0);
        }
        assert_eq!(n.apply(0, 0.8), 1.0);
    }

    #[test]
    fn normalize_decimate_examples() {
        let norm = ChannelNormalization::from_maxima(&[1.0]).unwrap();
        let frames = normalize_decimate(&[vec![0.5; 1000]], &norm, 100).unwrap();
        assert_eq!(frames.len(), 10);
        assert!(frames.iter().all(|f| f.values == vec![0.5]));
        assert_eq!(frames[3].time_index, 3);

        let frames = normalize_decimate(
            &[vec![1.0; 1050]],
            &ChannelNormalization::from_maxima(&[0.5]).unwrap(),
            100,
        )
        .unwrap();
        assert_eq!(frames.len(), 10);
        assert_eq!(frames[0].values[0], 1.0);

        // last sample of each block is kept
        let ramp: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let frames = normalize_decimate(&[ramp], &norm, 5).unwrap();
        assert_eq!(frames[0].values[0], 0.4);
        assert_eq!(frames[1].values[0], 0.9);
        assert_eq!(frame_end_sample(1, 5), 9);
    }
}
