//! Experiment harness: training/testing conditions, accuracy with and
//! without voting, training-trial sweeps and report rendering.
//!
//! Accuracy counts every window classified inside a labeled test segment,
//! including the voting warm-up at the start of each segment. Voting restarts
//! at every segment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{vote, AssociativeMemory, ClassificationResult, GestureLabel, Model};
use crate::dataset::{
    self, activity_maps, default_profiles, perturb, subject_profiles, synthesize, ActivityMap,
    LabeledSegment, Recording, SessionPlan, SynthParams,
};
use crate::dsp::{frame_end_sample, preprocess, FeatureFrame, FilterSpec};
use crate::encoder::{stream_encode, EncoderConfig, SpatiotemporalVector};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SameSession,
    AcrossSessions,
    Rotated,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::SameSession,
        Condition::AcrossSessions,
        Condition::Rotated,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Condition::SameSession => "same_session",
            Condition::AcrossSessions => "across_sessions",
            Condition::Rotated => "rotated",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Condition::SameSession => "Same Session",
            Condition::AcrossSessions => "Across Sessions",
            Condition::Rotated => "Same Session Rotated",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSelection {
    /// Training trials in recording order.
    #[default]
    First,
    /// A seeded random order of trials.
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSplit {
    /// Test on the trials of the training recording not used for training.
    #[default]
    HeldOut,
    /// Test on a second recording synthesized for the same subject.
    Separate,
}

/// Synthetic subjects. Each subject gets its own rotated and jittered copy
/// of the default gesture profiles. The across-session and rotated
/// conditions perturb the test recording with per-channel gains drawn from
/// `1 ± gain_drift`, white noise of RMS `session_noise` and, for `rotated`,
/// a shift of `rotation` grid columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub plan: SessionPlan,
    pub signal: SynthParams,
    pub subject_jitter: f64,
    pub test_split: TestSplit,
    pub gain_drift: f64,
    pub session_noise: f64,
    pub rotation: isize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subjects: 3,
            plan: SessionPlan::default(),
            signal: SynthParams::default(),
            subject_jitter: 0.2,
            test_split: TestSplit::HeldOut,
            gain_drift: 0.2,
            session_noise: 0.1,
            rotation: 1,
        }
    }
}

/// Recorded sessions of one subject. Without `test`, the held-out trials of
/// `train` are the test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingPair {
    pub name: String,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
}

/// Everything one experiment needs. With `recordings` empty, data is
/// synthesized per `synthetic`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub condition: Condition,
    pub train_trials: usize,
    pub trial_selection: TrialSelection,
    pub vote_window: usize,
    pub filter: FilterSpec,
    pub encoder: EncoderConfig,
    pub synthetic: SyntheticConfig,
    pub recordings: Vec<RecordingPair>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            condition: Condition::SameSession,
            train_trials: 3,
            trial_selection: TrialSelection::First,
            vote_window: 11,
            filter: FilterSpec::default(),
            encoder: EncoderConfig::default(),
            synthetic: SyntheticConfig::default(),
            recordings: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML config. Relative recording paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for r in &mut config.recordings {
            r.train = base.join(&r.train);
            if let Some(t) = &mut r.test {
                *t = base.join(&*t);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.encoder.validate()?;
        if self.vote_window == 0 || self.vote_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "vote_window must be odd and >= 1, got {}",
                self.vote_window
            )));
        }
        if self.train_trials == 0 {
            return Err(Error::Config("train_trials must be >= 1".into()));
        }
        if self.recordings.is_empty() {
            let s = &self.synthetic;
            s.plan.validate()?;
            if s.subjects == 0 {
                return Err(Error::Config("synthetic.subjects must be >= 1".into()));
            }
            if s.signal.channels != self.encoder.channels
                || s.signal.sample_rate != self.filter.sample_rate
            {
                return Err(Error::Config(
                    "synthetic signal channels and sample rate must match encoder and filter"
                        .into(),
                ));
            }
            if !(0.0..1.0).contains(&s.gain_drift) || s.session_noise < 0.0 {
                return Err(Error::Config(
                    "gain_drift must be in [0, 1) and session_noise >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Matched and total window counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub matched: u64,
    pub total: u64,
}

impl Score {
    /// Percentage in `[0, 100]`; zero when nothing was evaluated.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.matched as f64 / self.total as f64
        }
    }
}

/// `counts[true][predicted]`, indexed by label id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    fn new() -> Self {
        let n = GestureLabel::ALL.len();
        Self {
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn row_total(&self, truth: GestureLabel) -> u64 {
        self.counts[truth.id()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn score(&self) -> Score {
        Score {
            matched: (0..self.counts.len()).map(|i| self.counts[i][i]).sum(),
            total: self.total(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: String,
    pub no_vote: Score,
    pub vote: Score,
    pub confusion: Confusion,
    pub vote_confusion: Confusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub trials: usize,
    pub subjects: Vec<(Score, Score)>,
    pub average_no_vote: f64,
    pub average_vote: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeeds {
    pub subject: String,
    pub profile: u64,
    pub train: u64,
    pub test: u64,
    pub perturbation: u64,
    pub trial_order: u64,
    pub train_order: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SubjectSeeds>,
    pub normalization: String,
    pub voting: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub train_trials: usize,
    pub vote_window: usize,
    pub subjects: Vec<SubjectResult>,
    /// Unweighted means over subjects.
    pub average_no_vote: f64,
    pub average_vote: f64,
    pub curve: Vec<CurvePoint>,
    pub activity_maps: BTreeMap<String, BTreeMap<GestureLabel, ActivityMap>>,
    pub provenance: Provenance,
}

impl EvalReport {
    /// Canonical serialized form; identical inputs give identical bytes.
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("report: {e}")))
    }
}

fn derive_seed(seed: u64, subject: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64 * 16 + purpose);
    rng.next_u64()
}

struct SubjectData {
    name: String,
    train: (Recording, Vec<LabeledSegment>),
    /// `None`: test on held-out trials of the (possibly perturbed) training
    /// recording given in `held_out_test`.
    test: Option<(Recording, Vec<LabeledSegment>)>,
    held_out_test: Option<Recording>,
    seeds: SubjectSeeds,
}

fn synthetic_subject(config: &ExperimentConfig, index: usize) -> Result<SubjectData> {
    let s = &config.synthetic;
    let seeds = SubjectSeeds {
        subject: format!("S{}", index + 1),
        profile: derive_seed(config.seed, index, 1),
        train: derive_seed(config.seed, index, 2),
        test: derive_seed(config.seed, index, 3),
        perturbation: derive_seed(config.seed, index, 4),
        trial_order: derive_seed(config.seed, index, 5),
        train_order: Vec::new(),
    };
    let profiles = subject_profiles(&default_profiles(), seeds.profile, s.subject_jitter);
    let mut train = synthesize(&s.plan, &profiles, &s.signal, seeds.train)?;
    train.0.subject_id = seeds.subject.clone();
    train.0.session_id = "train".into();
    let condition_perturb = |rec: &Recording| -> Result<Recording> {
        let shift = match config.condition {
            Condition::SameSession => return Ok(rec.clone()),
            Condition::AcrossSessions => 0,
            Condition::Rotated => s.rotation,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seeds.perturbation);
        let gains: Vec<f64> = (0..rec.channels())
            .map(|_| 1.0 + rng.random_range(-s.gain_drift..=s.gain_drift))
            .collect();
        let mut out = perturb(rec, &gains, s.session_noise, shift, rng.next_u64())?;
        out.session_id = config.condition.key().into();
        Ok(out)
    };
    let (test, held_out_test) = match s.test_split {
        TestSplit::HeldOut => {
            let perturbed = match config.condition {
                Condition::SameSession => None,
                _ => Some(condition_perturb(&train.0)?),
            };
            (None, perturbed)
        }
        TestSplit::Separate => {
            let (rec, segs) = synthesize(&s.plan, &profiles, &s.signal, seeds.test)?;
            let mut rec = condition_perturb(&rec)?;
            rec.subject_id = seeds.subject.clone();
            (Some((rec, segs)), None)
        }
    };
    Ok(SubjectData {
        name: seeds.subject.clone(),
        train,
        test,
        held_out_test,
        seeds,
    })
}

/// Sessions of one synthetic subject as the harness would generate them.
/// `test` is the separately synthesized test session, or the perturbed copy
/// of the training session for held-out testing under a cross-session
/// condition; `None` for held-out same-session testing.
pub struct SubjectSessions {
    pub name: String,
    pub train: (Recording, Vec<LabeledSegment>),
    pub test: Option<(Recording, Vec<LabeledSegment>)>,
}

pub fn synthesize_subjects(config: &ExperimentConfig) -> Result<Vec<SubjectSessions>> {
    config.validate()?;
    (0..config.synthetic.subjects)
        .into_par_iter()
        .map(|i| {
            let d = synthetic_subject(config, i)?;
            let held_out = d.held_out_test.map(|r| (r, d.train.1.clone()));
            Ok(SubjectSessions {
                name: d.name,
                test: d.test.or(held_out),
                train: d.train,
            })
        })
        .collect()
}

fn file_subject(
    config: &ExperimentConfig,
    index: usize,
    pair: &RecordingPair,
) -> Result<SubjectData> {
    let train = dataset::load(&pair.train)?;
    let test = pair.test.as_deref().map(dataset::load).transpose()?;
    Ok(SubjectData {
        name: pair.name.clone(),
        train,
        test,
        held_out_test: None,
        seeds: SubjectSeeds {
            subject: pair.name.clone(),
            profile: 0,
            train: 0,
            test: 0,
            perturbation: 0,
            trial_order: derive_seed(config.seed, index, 5),
            train_order: Vec::new(),
        },
    })
}

/// Encoded windows of one labeled segment.
struct SegmentStream {
    label: GestureLabel,
    trial: usize,
    windows: Vec<SpatiotemporalVector>,
}

fn encode_segments(
    frames: &[FeatureFrame],
    segments: &[LabeledSegment],
    filter: &FilterSpec,
    encoder: &EncoderConfig,
    im: &crate::hdvec::ItemMemory,
) -> Result<Vec<SegmentStream>> {
    segments
        .iter()
        .map(|s| {
            let r = s.frame_range(filter.decim_factor);
            let r = r.start.min(frames.len())..r.end.min(frames.len());
            Ok(SegmentStream {
                label: s.label,
                trial: s.trial,
                windows: stream_encode(&frames[r], im, encoder)?,
            })
        })
        .collect()
}

fn score_streams(
    memory: &AssociativeMemory,
    streams: &[&SegmentStream],
    vote_window: usize,
) -> Result<(Confusion, Confusion)> {
    let mut plain = Confusion::new();
    let mut voted = Confusion::new();
    for s in streams {
        let mut history = Vec::with_capacity(s.windows.len());
        for w in &s.windows {
            let predicted = memory.classify(w)?.predicted;
            history.push(predicted);
            let v = vote(&history, vote_window).expect("history is nonempty");
            plain.counts[s.label.id()][predicted.id()] += 1;
            voted.counts[s.label.id()][v.id()] += 1;
        }
    }
    Ok((plain, voted))
}

/// Trial ids of the training recording in training order.
fn trial_order(segments: &[LabeledSegment], selection: TrialSelection, seed: u64) -> Vec<usize> {
    let mut trials: Vec<usize> = segments
        .iter()
        .map(|s| s.trial)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if selection == TrialSelection::Random {
        trials.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    trials
}

struct SubjectOutcome {
    result: SubjectResult,
    curve: Vec<(Score, Score)>,
    maps: BTreeMap<GestureLabel, ActivityMap>,
    seeds: SubjectSeeds,
}

fn evaluate_subject(
    config: &ExperimentConfig,
    data: SubjectData,
    counts: &[usize],
) -> Result<SubjectOutcome> {
    let SubjectData {
        name,
        train: (train_rec, train_segs),
        test,
        held_out_test,
        mut seeds,
    } = data;
    let order = trial_order(&train_segs, config.trial_selection, seeds.trial_order);
    let held_out = test.is_none();
    let pool_size = config.train_trials;
    let largest = counts.iter().copied().max().unwrap_or(0).max(pool_size);
    if largest > order.len() || (held_out && pool_size >= order.len()) {
        return Err(Error::Config(format!(
            "{name}: {} training trials requested but the recording has {} trials{}",
            largest,
            order.len(),
            if held_out {
                " and held-out testing needs at least one left over"
            } else {
                ""
            }
        )));
    }
    if held_out && counts.iter().any(|&k| k > pool_size) {
        return Err(Error::Config(format!(
            "{name}: with held-out testing, sweep counts cannot exceed train_trials ({pool_size})"
        )));
    }
    let pool: Vec<usize> = order[..if held_out { pool_size } else { largest }].to_vec();
    seeds.train_order = pool.clone();

    let im = config.encoder.item_memory()?;
    let (train_frames, norm) = preprocess(&train_rec, &config.filter, None)?;
    let in_pool = |s: &&LabeledSegment| pool.contains(&s.trial);
    let pool_segs: Vec<LabeledSegment> = train_segs.iter().filter(in_pool).copied().collect();
    let train_streams = encode_segments(
        &train_frames,
        &pool_segs,
        &config.filter,
        &config.encoder,
        &im,
    )?;

    let trained_labels: BTreeSet<GestureLabel> = train_streams
        .iter()
        .filter(|s| pool[..pool_size].contains(&s.trial) && !s.windows.is_empty())
        .map(|s| s.label)
        .collect();
    let missing: Vec<String> = GestureLabel::ALL
        .iter()
        .filter(|l| !trained_labels.contains(l))
        .map(|l| l.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }

    let test_streams = match (&test, held_out_test) {
        (Some((rec, segs)), _) => {
            let (frames, _) = preprocess(rec, &config.filter, Some(&norm))?;
            encode_segments(&frames, segs, &config.filter, &config.encoder, &im)?
        }
        (None, perturbed) => {
            let segs: Vec<LabeledSegment> = train_segs
                .iter()
                .filter(|s| !pool.contains(&s.trial))
                .copied()
                .collect();
            match perturbed {
                Some(rec) => {
                    let (frames, _) = preprocess(&rec, &config.filter, Some(&norm))?;
                    encode_segments(&frames, &segs, &config.filter, &config.encoder, &im)?
                }
                None => {
                    encode_segments(&train_frames, &segs, &config.filter, &config.encoder, &im)?
                }
            }
        }
    };
    let test_refs: Vec<&SegmentStream> = test_streams.iter().collect();

    let mut checkpoints: BTreeSet<usize> = counts.iter().copied().collect();
    checkpoints.insert(pool_size);
    let mut memory = AssociativeMemory::new(config.encoder.dimension);
    let mut trained = 0;
    let mut at_checkpoint = BTreeMap::new();
    for &k in &checkpoints {
        for &trial in &pool[trained..k] {
            for s in train_streams
                .iter()
                .filter(|s| s.trial == trial && !s.windows.is_empty())
            {
                memory.train(&s.windows, s.label)?;
            }
        }
        trained = k;
        at_checkpoint.insert(k, score_streams(&memory, &test_refs, config.vote_window)?);
    }
    let (confusion, vote_confusion) = at_checkpoint[&pool_size].clone();
    let curve = counts
        .iter()
        .map(|k| {
            let (p, v) = &at_checkpoint[k];
            (p.score(), v.score())
        })
        .collect();

    let spans: Vec<_> = pool_segs
        .iter()
        .filter(|s| pool[..pool_size].contains(&s.trial))
        .map(|s| {
            let r = s.frame_range(config.filter.decim_factor);
            (
                s.label,
                r.start.min(train_frames.len())..r.end.min(train_frames.len()),
            )
        })
        .filter(|(_, r)| !r.is_empty())
        .collect();
    let maps = if train_rec.channels() % dataset::GRID_COLUMNS == 0 {
        activity_maps(&train_frames, &spans)?
    } else {
        BTreeMap::new()
    };

    Ok(SubjectOutcome {
        result: SubjectResult {
            subject: name,
            no_vote: confusion.score(),
            vote: vote_confusion.score(),
            confusion,
            vote_confusion,
        },
        curve,
        maps,
        seeds,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn run(config: &ExperimentConfig, counts: &[usize]) -> Result<EvalReport> {
    config.validate()?;
    if counts.contains(&0) {
        return Err(Error::Config("sweep counts must be >= 1".into()));
    }
    let n = if config.recordings.is_empty() {
        config.synthetic.subjects
    } else {
        config.recordings.len()
    };
    let outcomes: Vec<SubjectOutcome> = (0..n)
        .into_par_iter()
        .map(|i| {
            let data = match config.recordings.get(i) {
                Some(pair) => file_subject(config, i, pair)?,
                None => synthetic_subject(config, i)?,
            };
            evaluate_subject(config, data, counts)
        })
        .collect::<Result<_>>()?;

    let curve = counts
        .iter()
        .enumerate()
        .map(|(j, &trials)| {
            let subjects: Vec<(Score, Score)> = outcomes.iter().map(|o| o.curve[j]).collect();
            CurvePoint {
                trials,
                average_no_vote: mean(subjects.iter().map(|s| s.0.accuracy())),
                average_vote: mean(subjects.iter().map(|s| s.1.accuracy())),
                subjects,
            }
        })
        .collect();
    let mut maps = BTreeMap::new();
    let mut seeds = Vec::new();
    let mut subjects = Vec::new();
    for o in outcomes {
        maps.insert(o.result.subject.clone(), o.maps);
        seeds.push(o.seeds);
        subjects.push(o.result);
    }
    Ok(EvalReport {
        condition: config.condition,
        train_trials: config.train_trials,
        vote_window: config.vote_window,
        average_no_vote: mean(subjects.iter().map(|s| s.no_vote.accuracy())),
        average_vote: mean(subjects.iter().map(|s| s.vote.accuracy())),
        subjects,
        curve,
        activity_maps: maps,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            seeds,
            normalization: "per-channel maximum envelope of the whole training recording".into(),
            voting: "per test segment; warm-up windows included".into(),
        },
    })
}

/// Trains on `train_trials` trials and tests per the configured condition.
pub fn run_condition(config: &ExperimentConfig) -> Result<EvalReport> {
    run(config, &[])
}

/// Like [`run_condition`], plus accuracy after training on the first `k`
/// trials of the training order for every `k` in `counts`. The memory is
/// trained incrementally; the test set is the same for every point.
pub fn sweep_trials(config: &ExperimentConfig, counts: &[usize]) -> Result<EvalReport> {
    run(config, counts)
}

/// Trains a model on the given trials (all trials when `trials` is `None`).
/// Normalization is fitted on the whole recording.
pub fn train_model(
    recording: &Recording,
    segments: &[LabeledSegment],
    filter: &FilterSpec,
    encoder: &EncoderConfig,
    trials: Option<&[usize]>,
) -> Result<Model> {
    let im = encoder.item_memory()?;
    let (frames, normalization) = preprocess(recording, filter, None)?;
    let selected: Vec<LabeledSegment> = segments
        .iter()
        .filter(|s| trials.is_none_or(|t| t.contains(&s.trial)))
        .copied()
        .collect();
    let mut memory = AssociativeMemory::new(encoder.dimension);
    for s in encode_segments(&frames, &selected, filter, encoder, &im)? {
        if !s.windows.is_empty() {
            memory.train(&s.windows, s.label)?;
        }
    }
    let missing: Vec<String> = GestureLabel::ALL
        .iter()
        .filter(|l| memory.prototype(**l).is_none())
        .map(|l| l.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    Ok(Model {
        filter: filter.clone(),
        encoder: encoder.clone(),
        normalization,
        memory,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowResult {
    pub result: ClassificationResult,
    pub voted: GestureLabel,
    /// Label of the segment holding the window's newest frame.
    pub truth: Option<GestureLabel>,
}

/// Classifies every window of a whole recording as one continuous stream.
pub fn classify_recording(
    model: &Model,
    recording: &Recording,
    segments: &[LabeledSegment],
    vote_window: usize,
) -> Result<Vec<WindowResult>> {
    let im = model.encoder.item_memory()?;
    let (frames, _) = preprocess(recording, &model.filter, Some(&model.normalization))?;
    let windows = stream_encode(&frames, &im, &model.encoder)?;
    let mut history = Vec::with_capacity(windows.len());
    windows
        .iter()
        .map(|w| {
            let result = model.memory.classify(w)?;
            history.push(result.predicted);
            let end = frame_end_sample(w.time_index, model.filter.decim_factor);
            Ok(WindowResult {
                voted: vote(&history, vote_window).expect("history is nonempty"),
                truth: segments
                    .iter()
                    .find(|s| (s.start..s.end).contains(&end))
                    .map(|s| s.label),
                result,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Heatmaps,
}

/// Accuracy table with one column pair per report (condition), one row per
/// subject plus the average, followed by window counts, confusion matrices
/// and any trial-sweep curves.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let subjects: Vec<&str> = reports
        .first()
        .map(|r| r.subjects.iter().map(|s| s.subject.as_str()).collect())
        .unwrap_or_default();
    let _ = writeln!(out, "Classification accuracy (%)");
    let _ = write!(out, "{:<10}", "");
    for r in reports {
        let _ = write!(out, " | {:^22}", r.condition.title());
    }
    let _ = write!(out, "\n{:<10}", "Subject");
    for _ in reports {
        let _ = write!(out, " | {:>10} {:>11}", "No Vote", "Vote");
    }
    out.push('\n');
    for name in &subjects {
        let _ = write!(out, "{name:<10}");
        for r in reports {
            match r.subjects.iter().find(|s| s.subject == *name) {
                Some(s) => {
                    let _ = write!(
                        out,
                        " | {:>10.2} {:>11.2}",
                        s.no_vote.accuracy(),
                        s.vote.accuracy()
                    );
                }
                None => {
                    let _ = write!(out, " | {:>10} {:>11}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<10}", "Avg.");
    for r in reports {
        let _ = write!(
            out,
            " | {:>10.2} {:>11.2}",
            r.average_no_vote, r.average_vote
        );
    }
    out.push('\n');

    let _ = writeln!(out, "\nEvaluated windows per true label");
    for r in reports {
        for s in &r.subjects {
            let counts: Vec<String> = GestureLabel::ALL
                .iter()
                .map(|l| format!("{} {}", l.name(), s.confusion.row_total(*l)))
                .collect();
            let _ = writeln!(
                out,
                "  {} {}: {}, total {}",
                r.condition.key(),
                s.subject,
                counts.join(", "),
                s.no_vote.total
            );
        }
    }

    for r in reports {
        for s in &r.subjects {
            let _ = writeln!(
                out,
                "\nConfusion {} {} (rows: true label, columns: predicted, no vote)",
                r.condition.key(),
                s.subject
            );
            let _ = write!(out, "{:<7}", "");
            for l in GestureLabel::ALL {
                let _ = write!(out, " {:>7}", l.name());
            }
            let _ = writeln!(out, " | {:>7}", "total");
            for l in GestureLabel::ALL {
                let _ = write!(out, "{:<7}", l.name());
                for c in &s.confusion.counts[l.id()] {
                    let _ = write!(out, " {c:>7}");
                }
                let _ = writeln!(out, " | {:>7}", s.confusion.row_total(l));
            }
        }
    }

    for r in reports.iter().filter(|r| !r.curve.is_empty()) {
        let _ = writeln!(
            out,
            "\nAccuracy by training trials ({}, mean over subjects)",
            r.condition.key()
        );
        let _ = writeln!(out, "{:>7} {:>10} {:>10}", "trials", "no_vote", "vote");
        for p in &r.curve {
            let _ = writeln!(
                out,
                "{:>7} {:>10.2} {:>10.2}",
                p.trials, p.average_no_vote, p.average_vote
            );
        }
    }
    let _ = writeln!(
        out,
        "\nVoting window {}; voting restarts per segment and warm-up windows are counted.",
        reports.first().map_or(0, |r| r.vote_window)
    );
    out
}

/// One row per (condition, subject, trial count) with matched/total counts
/// and accuracy, with and without voting. `trials` is the configured
/// training size for the main rows and the sweep point for curve rows.
pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("kind,condition,subject,trials,no_vote_matched,no_vote_total,no_vote_pct,vote_matched,vote_total,vote_pct\n");
    let mut row =
        |kind: &str, cond: Condition, subject: &str, trials: usize, p: &Score, v: &Score| {
            let _ = writeln!(
                out,
                "{kind},{},{subject},{trials},{},{},{:.4},{},{},{:.4}",
                cond.key(),
                p.matched,
                p.total,
                p.accuracy(),
                v.matched,
                v.total,
                v.accuracy()
            );
        };
    for r in reports {
        for s in &r.subjects {
            row(
                "accuracy",
                r.condition,
                &s.subject,
                r.train_trials,
                &s.no_vote,
                &s.vote,
            );
        }
        for p in &r.curve {
            for (s, (pn, pv)) in r.subjects.iter().zip(&p.subjects) {
                row("curve", r.condition, &s.subject, p.trials, pn, pv);
            }
        }
    }
    out
}

/// Writes `reports` in the given format. `Text` and `Csv` write the file at
/// `out`; `Heatmaps` writes `<subject>_<gesture>.pgm` files into the
/// directory `out` from the first report's activity maps.
pub fn emit_report(
    reports: &[EvalReport],
    format: ReportFormat,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let write =
        |path: &Path, bytes: &[u8]| std::fs::write(path, bytes).map_err(|e| Error::io(path, e));
    match format {
        ReportFormat::Text => {
            write(out, render_table(reports).as_bytes())?;
            Ok(vec![out.to_path_buf()])
        }
        ReportFormat::Csv => {
            write(out, render_csv(reports).as_bytes())?;
            Ok(vec![out.to_path_buf()])
        }
        ReportFormat::Heatmaps => {
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let mut written = Vec::new();
            if let Some(r) = reports.first() {
                for (subject, maps) in &r.activity_maps {
                    for (label, map) in maps {
                        let path = out.join(format!("{subject}_{}.pgm", label.name()));
                        write(&path, &map.to_pgm())?;
                        written.push(path);
                    }
                }
            }
            Ok(written)
        }
    }
}
