//! `hdemg` command-line driver.
//!
//! Failures print `error[<category>]: <message>` on stderr and exit with the
//! category's status code (see [`exit_code`]).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdemg::classifier::{GestureLabel, Model};
use hdemg::dataset::{self, activity_maps, ImportDescriptor};
use hdemg::dsp::preprocess;
use hdemg::eval::{
    classify_recording, emit_report, run_condition, sweep_trials, synthesize_subjects, train_model,
    Condition, EvalReport, ExperimentConfig, ReportFormat,
};
use hdemg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hdemg",
    version,
    about = "EMG gesture recognition with hyperdimensional computing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML). Omitted: built-in defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic recordings for every configured subject
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write the feature frames of a recording as CSV
    Preprocess {
        #[command(flatten)]
        config: ConfigArg,
        /// Recording manifest
        recording: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train a model on a recording
    Train {
        #[command(flatten)]
        config: ConfigArg,
        recording: PathBuf,
        /// Train on the first N trials (default: all)
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Classify every window of a recording with a trained model
    Classify {
        model: PathBuf,
        recording: PathBuf,
        #[arg(long, default_value_t = 11)]
        vote_window: usize,
        /// Per-window CSV output (default: stdout)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run one or more conditions and write reports
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Conditions to run (default: the config's)
        #[arg(long = "condition", value_parser = parse_condition)]
        conditions: Vec<Condition>,
        /// Run all three conditions
        #[arg(long, conflicts_with = "conditions")]
        all: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Accuracy as a function of the number of training trials
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated training trial counts
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        counts: Vec<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write per-gesture activity heat maps (PGM) of a recording
    Heatmap {
        #[command(flatten)]
        config: ConfigArg,
        recording: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Convert an external CSV recording to the native format
    Import {
        /// Format descriptor (TOML) mapping columns to channels and labels
        #[arg(long)]
        descriptor: Option<PathBuf>,
        input: PathBuf,
        /// Manifest to write
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn parse_condition(s: &str) -> std::result::Result<Condition, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "input" => 4,
        "model" => 5,
        "data" => 6,
        "checksum" => 7,
        "shape" => 8,
        "label" => 9,
        "segments" => 10,
        "format" => 11,
        "import" => 12,
        "io" => 13,
        _ => 1,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn synth(config: &ExperimentConfig, out: &Path) -> Result<()> {
    if !config.recordings.is_empty() {
        return Err(Error::Config(
            "synth needs a synthetic config, not [[recordings]]".into(),
        ));
    }
    create_dir(out)?;
    let mut listing = ExperimentConfig {
        recordings: Vec::new(),
        ..config.clone()
    };
    for s in synthesize_subjects(config)? {
        let train = PathBuf::from(format!("{}_train.toml", s.name));
        dataset::save(&out.join(&train), &s.train.0, &s.train.1)?;
        let test = match &s.test {
            Some((rec, segs)) => {
                let p = PathBuf::from(format!("{}_{}.toml", s.name, config.condition.key()));
                dataset::save(&out.join(&p), rec, segs)?;
                Some(p)
            }
            None => None,
        };
        println!(
            "{}: {}{}",
            s.name,
            train.display(),
            test.as_ref()
                .map(|p| format!(", {}", p.display()))
                .unwrap_or_default()
        );
        listing.recordings.push(hdemg::eval::RecordingPair {
            name: s.name,
            train,
            test,
        });
    }
    write(&out.join("experiment.toml"), listing.to_toml()?.as_bytes())
}

fn preprocess_cmd(config: &ExperimentConfig, recording: &Path, out: &Path) -> Result<()> {
    let (rec, _) = dataset::load(recording)?;
    let (frames, _) = preprocess(&rec, &config.filter, None)?;
    let mut csv = String::from("time_index");
    for c in 0..rec.channels() {
        let _ = write!(csv, ",ch{c}");
    }
    csv.push('\n');
    for f in &frames {
        let _ = write!(csv, "{}", f.time_index);
        for v in &f.values {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write(out, csv.as_bytes())
}

fn train(
    config: &ExperimentConfig,
    recording: &Path,
    trials: Option<usize>,
    out: &Path,
) -> Result<()> {
    let (rec, segs) = dataset::load(recording)?;
    let selected: Option<Vec<usize>> = trials.map(|k| {
        let mut ids: Vec<usize> = segs.iter().map(|s| s.trial).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.truncate(k);
        ids
    });
    let model = train_model(
        &rec,
        &segs,
        &config.filter,
        &config.encoder,
        selected.as_deref(),
    )?;
    model.save(out)
}

fn classify(model: &Path, recording: &Path, vote_window: usize, out: Option<&Path>) -> Result<()> {
    if vote_window == 0 || vote_window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "vote window must be odd and >= 1, got {vote_window}"
        )));
    }
    let model = Model::load(model)?;
    let (rec, segs) = dataset::load(recording)?;
    let results = classify_recording(&model, &rec, &segs, vote_window)?;
    let mut csv = String::from("time_index,truth,predicted,voted");
    for l in GestureLabel::ALL {
        let _ = write!(csv, ",sim_{}", l.name());
    }
    csv.push('\n');
    let (mut labeled, mut matched, mut matched_vote) = (0, 0, 0);
    for w in &results {
        let truth = w.truth.map_or("", |l| l.name());
        let _ = write!(
            csv,
            "{},{truth},{},{}",
            w.result.time_index, w.result.predicted, w.voted
        );
        for l in GestureLabel::ALL {
            match w.result.similarities.iter().find(|(k, _)| *k == l) {
                Some((_, s)) => {
                    let _ = write!(csv, ",{s}");
                }
                None => csv.push(','),
            }
        }
        csv.push('\n');
        if let Some(t) = w.truth {
            labeled += 1;
            matched += usize::from(t == w.result.predicted);
            matched_vote += usize::from(t == w.voted);
        }
    }
    match out {
        Some(p) => write(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if labeled > 0 {
        eprintln!(
            "{labeled} labeled windows: {:.2}% without voting, {:.2}% with voting",
            100.0 * matched as f64 / labeled as f64,
            100.0 * matched_vote as f64 / labeled as f64
        );
    }
    Ok(())
}

fn write_reports(reports: &[EvalReport], out: &Path) -> Result<()> {
    create_dir(out)?;
    for r in reports {
        write(
            &out.join(format!("report_{}.json", r.condition.key())),
            &r.to_json(),
        )?;
    }
    emit_report(reports, ReportFormat::Text, &out.join("table.txt"))?;
    emit_report(reports, ReportFormat::Csv, &out.join("accuracy.csv"))?;
    emit_report(reports, ReportFormat::Heatmaps, &out.join("heatmaps"))?;
    print!("{}", hdemg::eval::render_table(reports));
    Ok(())
}

fn eval(config: &ExperimentConfig, conditions: &[Condition], all: bool, out: &Path) -> Result<()> {
    let conditions = if all {
        Condition::ALL.to_vec()
    } else if conditions.is_empty() {
        vec![config.condition]
    } else {
        conditions.to_vec()
    };
    if !config.recordings.is_empty() && conditions.len() > 1 {
        eprintln!("note: with [[recordings]] the test sessions come from the files; the condition only labels each report");
    }
    let reports = conditions
        .iter()
        .map(|&condition| {
            run_condition(&ExperimentConfig {
                condition,
                ..config.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_reports(&reports, out)
}

fn heatmap(config: &ExperimentConfig, recording: &Path, out: &Path) -> Result<()> {
    let (rec, segs) = dataset::load(recording)?;
    let (frames, _) = preprocess(&rec, &config.filter, None)?;
    let spans: Vec<_> = segs
        .iter()
        .map(|s| {
            let r = s.frame_range(config.filter.decim_factor);
            (s.label, r.start.min(frames.len())..r.end.min(frames.len()))
        })
        .filter(|(_, r)| !r.is_empty())
        .collect();
    create_dir(out)?;
    for (label, map) in activity_maps(&frames, &spans)? {
        let path = out.join(format!("{}.pgm", label.name()));
        write(&path, &map.to_pgm())?;
        println!("{}", path.display());
    }
    Ok(())
}

const IMPORT_HELP: &str = "needs --descriptor <file.toml>: the layout of external recordings \
(column order, label coding, sample rate) is not fixed, so it must be described explicitly. \
See the README section \"Importing recordings\" for the descriptor schema.";

fn import(descriptor: Option<&Path>, input: &Path, out: &Path) -> Result<()> {
    let descriptor = descriptor.ok_or_else(|| Error::Import(IMPORT_HELP.into()))?;
    let text = std::fs::read_to_string(descriptor).map_err(|source| Error::Io {
        path: descriptor.to_path_buf(),
        source,
    })?;
    let desc: ImportDescriptor = toml::from_str(&text)
        .map_err(|e| Error::Import(format!("{}: {e}", descriptor.display())))?;
    let file = std::fs::File::open(input).map_err(|source| Error::Io {
        path: input.to_path_buf(),
        source,
    })?;
    let (rec, segs) = dataset::import_csv(&desc, std::io::BufReader::new(file))?;
    dataset::save(out, &rec, &segs)?;
    println!(
        "{} channels x {} samples, {} labeled segments -> {}",
        rec.channels(),
        rec.len(),
        segs.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => synth(&config.load()?, &out),
        Command::Preprocess {
            config,
            recording,
            out,
        } => preprocess_cmd(&config.load()?, &recording, &out),
        Command::Train {
            config,
            recording,
            trials,
            out,
        } => train(&config.load()?, &recording, trials, &out),
        Command::Classify {
            model,
            recording,
            vote_window,
            out,
        } => classify(&model, &recording, vote_window, out.as_deref()),
        Command::Eval {
            config,
            conditions,
            all,
            out,
        } => eval(&config.load()?, &conditions, all, &out),
        Command::Sweep {
            config,
            counts,
            out,
        } => {
            let report = sweep_trials(&config.load()?, &counts)?;
            write_reports(std::slice::from_ref(&report), &out)
        }
        Command::Heatmap {
            config,
            recording,
            out,
        } => heatmap(&config.load()?, &recording, &out),
        Command::Import {
            descriptor,
            input,
            out,
        } => import(descriptor.as_deref(), &input, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
