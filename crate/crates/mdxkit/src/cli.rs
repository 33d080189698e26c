//! The `mdxkit` command line.
//!
//! Exit codes: 0 on success, 1 on runtime errors (reported as one JSON
//! object on stderr), 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mdxkit_core::corruptor::{
    bleed_song, effective_corruption_fraction, relabel_song, BleedConfig, CorruptionLog, CorruptionRecord,
    LabelNoiseConfig,
};
use mdxkit_core::dataset::Song;
use mdxkit_core::evaluator::{
    sdr_dataset, sdr_sisec_median, sdr_song, segment_sdrs, EvalPolicy, Leaderboard, Phase, SdrReport, SISEC_SEGMENT_LEN,
};
use mdxkit_core::rating::{
    assessor_stats, rank, rate_records, render_ranking, sdr_agreement, AgreementPoint, ComparisonRecord, SegmentConfig,
    TrueSkillParams,
};
use mdxkit_core::robust::{
    energy_clean, refine, toy_confusion, toy_raw_songs, train_toy_mask_model, OracleBank, RefineMethod, SongSeparators,
    ToyLoss, ToyTrainConfig, TruncationAxis, TruncationPolicy,
};
use mdxkit_core::separation::{passthrough, SeparationError, Separator, Silence};
use mdxkit_core::{SourceClass, Stems};

use crate::external::ExternalSeparator;
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::manifest::{load_estimates, save_estimates, write_dataset, write_raw_dataset, Manifest, ManifestProvenance};
use crate::provenance::Provenance;
use crate::service::{prepare_stimuli, ListeningTest, SessionRecord, StimulusIndex, TestConfig};

#[derive(Debug, Parser)]
#[command(name = "mdxkit", version, about = "Music demixing dataset, evaluation and listening-test toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-song work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Input dataset manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory (or file, for single-file commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file overriding the command's module configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a corrupted copy of a dataset.
    Corrupt(CorruptArgs),
    /// Score separator estimates against reference stems.
    Evaluate(EvaluateArgs),
    /// Rebuild a dataset from a separator's estimates.
    Refine(RefineArgs),
    /// Flag stems that do not separate cleanly into their own class.
    Clean(CleanArgs),
    /// Train the toy mask model on synthetic data.
    ToyTrain(ToyTrainArgs),
    /// TrueSkill standings from a comparison log.
    Rate(LogArgs),
    /// Assessor statistics from a comparison log.
    Stats(StatsArgs),
    /// Run the listening-test HTTP service.
    Serve(ServeArgs),
    /// Choose listening-test excerpts for every song.
    Segments(SegmentArgs),
    /// Render listening-test clips from separator estimates.
    Stimuli(StimuliArgs),
    /// Leaderboard tables and the SDR-versus-preference comparison.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptKind {
    LabelNoise,
    Bleeding,
}

#[derive(Debug, Args, Serialize)]
pub struct CorruptArgs {
    #[arg(long, value_enum)]
    pub kind: CorruptKind,
    /// Per-stem relabel probability (label noise only).
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SeparatorArgs {
    /// oracle, silence, mixture:<class> or external.
    #[arg(long, default_value = "oracle")]
    pub separator: String,
    /// Clean dataset the oracle is built from (default: --manifest).
    #[arg(long)]
    pub oracle_manifest: Option<PathBuf>,
    /// External command; `{input}` and `{output}` are substituted.
    #[arg(long)]
    pub command: Option<String>,
    /// Scratch directory for external separators.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Directory of `<song_id>/<class>.wav` estimates; if absent the
    /// separator runs on each mixture.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    #[command(flatten)]
    pub separator: SeparatorArgs,
    /// Also write the estimates used.
    #[arg(long)]
    pub save_estimates: Option<PathBuf>,
    /// Name recorded in the report.
    #[arg(long, default_value = "submission")]
    pub name: String,
}

#[derive(Debug, Args, Serialize)]
pub struct RefineArgs {
    #[arg(long, value_enum, default_value = "filtered")]
    pub method: MethodArg,
    #[command(flatten)]
    pub separator: SeparatorArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Filtered,
    Redistributed,
}

#[derive(Debug, Args, Serialize)]
pub struct CleanArgs {
    #[arg(long, default_value_t = 20.0)]
    pub threshold_db: f64,
    #[command(flatten)]
    pub separator: SeparatorArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyTrainArgs {
    #[arg(long, default_value_t = 40)]
    pub songs: usize,
    #[arg(long, default_value_t = 10)]
    pub validation_songs: usize,
    /// Samples per song.
    #[arg(long, default_value_t = 16384)]
    pub length: usize,
    #[arg(long, default_value_t = 150)]
    pub steps: usize,
    /// Raw relabel rate applied to the training songs.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    /// Keep this quantile of losses (no truncation when absent).
    #[arg(long)]
    pub truncate: Option<f64>,
    #[arg(long, value_enum, default_value = "batch")]
    pub axis: AxisArg,
    #[arg(long, value_enum, default_value = "l1")]
    pub loss: LossArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisArg {
    Batch,
    Time,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    L1,
    L2,
}

#[derive(Debug, Args, Serialize)]
pub struct LogArgs {
    /// Comparison log (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Session log giving each assessor's category.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// Directory written by `stimuli`.
    #[arg(long)]
    pub stimuli: PathBuf,
    /// Directory for the session and comparison logs.
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Comparisons per (model pair, class, stimulus) cell.
    #[arg(long, default_value_t = 3)]
    pub per_cell: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub segment_seconds: Option<f64>,
    #[arg(long)]
    pub min_gap_seconds: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct StimuliArgs {
    /// `name=DIR` estimate trees, one per model.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[command(flatten)]
    pub segments: SegmentArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// `name=PATH` evaluation reports written by `evaluate`.
    #[arg(long = "report", required = true)]
    pub reports: Vec<String>,
    /// Comparison log for the agreement table.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{kind}: {message}")]
    Runtime { kind: &'static str, message: String },
}

impl CliError {
    fn runtime(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Runtime { kind, message: e.to_string() }
    }
}

macro_rules! runtime_from {
    ($($t:ty => $kind:literal),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::runtime($kind, e)
            }
        })*
    };
}

runtime_from! {
    std::io::Error => "io_error",
    serde_json::Error => "json_error",
    crate::manifest::ManifestError => "manifest_error",
    crate::jsonl::JsonlError => "log_error",
    crate::wav::WavError => "wav_error",
    crate::service::ServiceError => "service_error",
    mdxkit_core::corruptor::CorruptError => "corrupt_error",
    mdxkit_core::evaluator::EvalError => "eval_error",
    mdxkit_core::rating::RatingError => "rating_error",
    mdxkit_core::robust::RobustError => "robust_error",
    mdxkit_core::audio::AudioError => "audio_error",
    SeparationError => "separation_error",
    rayon::ThreadPoolBuildError => "thread_pool_error",
}

#[derive(Debug, Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: &'a str,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (kind, message, code) = match &e {
                CliError::Usage(m) => ("usage", m.as_str(), 2),
                CliError::Runtime { kind, message } => (*kind, message.as_str(), 1),
            };
            let body = serde_json::to_string(&ErrorJson { error: kind, message }).unwrap_or_default();
            let _ = writeln!(std::io::stderr(), "{body}");
            code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    let g = &cli.global;
    pool.install(|| match &cli.command {
        Command::Corrupt(a) => corrupt(g, a),
        Command::Evaluate(a) => evaluate(g, a),
        Command::Refine(a) => refine_cmd(g, a),
        Command::Clean(a) => clean(g, a),
        Command::ToyTrain(a) => toy_train(g, a),
        Command::Rate(a) => rate(g, a),
        Command::Stats(a) => stats(g, a),
        Command::Serve(a) => serve(g, a),
        Command::Segments(a) => segments(g, a),
        Command::Stimuli(a) => stimuli(g, a),
        Command::Report(a) => report(g, a),
    })
}

fn out_dir(g: &Global) -> Result<&Path, CliError> {
    g.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn manifest(g: &Global) -> Result<Manifest, CliError> {
    let path = g.manifest.as_deref().ok_or_else(|| CliError::Usage("--manifest is required".into()))?;
    Ok(Manifest::load(path)?)
}

/// Overlays the `--config` JSON object onto `defaults`.
fn configured<T: Serialize + DeserializeOwned>(g: &Global, defaults: T) -> Result<T, CliError> {
    let Some(path) = &g.config else { return Ok(defaults) };
    let text = std::fs::read_to_string(path)?;
    let overrides: serde_json::Value = serde_json::from_str(&text)?;
    let mut value = serde_json::to_value(defaults)?;
    match (&mut value, overrides) {
        (serde_json::Value::Object(base), serde_json::Value::Object(over)) => base.extend(over),
        _ => return Err(CliError::Usage("--config must hold a JSON object".into())),
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid --config: {e}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes to `--out` when given, else prints.
fn emit(g: &Global, value: &impl Serialize) -> Result<(), CliError> {
    match &g.out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn stamp(dir: &Path, command: &str, g: &Global, config: &impl Serialize) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Stamped<'a, C> {
        manifest: Option<&'a Path>,
        options: &'a C,
    }
    let p = Provenance::new(command, g.seed, &Stamped { manifest: g.manifest.as_deref(), options: config })?;
    p.write(dir)?;
    Ok(())
}

fn load_songs(m: &Manifest) -> Result<Vec<Song>, CliError> {
    Ok(m.songs().par_iter().map(|e| m.load_song(e)).collect::<Result<Vec<_>, _>>()?)
}

#[derive(Debug, Serialize)]
struct CorruptSummary {
    kind: CorruptKind,
    songs: usize,
    records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    effective_fraction: Option<f64>,
}

fn corrupt(g: &Global, a: &CorruptArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let m = manifest(g)?;
    let parent = g.manifest.as_ref().map(|p| p.display().to_string());
    let provenance =
        ManifestProvenance { generator: "mdxkit corrupt".into(), seed: Some(g.seed), parent_manifest: parent };
    let log_path = out.join("corruption_log.jsonl");
    match a.kind {
        CorruptKind::LabelNoise => {
            let mut config = configured(g, LabelNoiseConfig::new(a.rate.unwrap_or(0.2), g.seed))?;
            config.seed = g.seed;
            if let Some(r) = a.rate {
                config.rate = r;
            }
            let raw = m.songs().par_iter().map(|e| m.load_raw_song(e)).collect::<Result<Vec<_>, _>>()?;
            let results = raw
                .par_iter()
                .enumerate()
                .map(|(i, s)| relabel_song(s, i as u64, &config))
                .collect::<Result<Vec<_>, _>>()?;
            let (songs, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            let log = CorruptionLog { records: records.into_iter().flatten().collect() };
            write_raw_dataset(out, &songs, m.file.taxonomy.clone(), provenance)?;
            write_jsonl(&log_path, &log.records)?;
            let effective = effective_corruption_fraction(&log, &raw, &m.taxonomy)?;
            let summary = CorruptSummary {
                kind: a.kind,
                songs: songs.len(),
                records: log.len(),
                effective_fraction: Some(effective),
            };
            write_json(&out.join("summary.json"), &summary)?;
            stamp(out, "corrupt", g, &(a, &config))
        }
        CorruptKind::Bleeding => {
            if a.rate.is_some() {
                return Err(CliError::Usage("--rate applies to label noise only".into()));
            }
            let mut config = configured(g, BleedConfig::new(g.seed))?;
            config.seed = g.seed;
            config.validate()?;
            let songs = load_songs(&m)?;
            let results = songs
                .par_iter()
                .enumerate()
                .map(|(i, s)| bleed_song(s, i as u64, &config))
                .collect::<Result<Vec<_>, _>>()?;
            let (songs, records): (Vec<Song>, Vec<Vec<CorruptionRecord>>) = results.into_iter().unzip();
            let records: Vec<CorruptionRecord> = records.into_iter().flatten().collect();
            write_dataset(out, &songs, provenance)?;
            write_jsonl(&log_path, &records)?;
            let summary =
                CorruptSummary { kind: a.kind, songs: songs.len(), records: records.len(), effective_fraction: None };
            write_json(&out.join("summary.json"), &summary)?;
            stamp(out, "corrupt", g, &(a, &config))
        }
    }
}

/// A separator for every song: one oracle per song, or one shared model.
enum Bank {
    Oracle(OracleBank),
    Shared(Box<dyn Separator>),
}

impl SongSeparators for Bank {
    fn for_song(&self, song_id: &str) -> Result<&dyn Separator, SeparationError> {
        match self {
            Self::Oracle(b) => b.for_song(song_id),
            Self::Shared(s) => Ok(s.as_ref()),
        }
    }
}

fn bank(g: &Global, a: &SeparatorArgs, songs: &[Song]) -> Result<Bank, CliError> {
    let spec = a.separator.as_str();
    if let Some(class) = spec.strip_prefix("mixture:") {
        let class: SourceClass = class.parse().map_err(|_| CliError::Usage(format!("unknown class in {spec:?}")))?;
        return Ok(Bank::Shared(Box::new(passthrough(class))));
    }
    match spec {
        "oracle" => {
            let clean = match &a.oracle_manifest {
                Some(path) => load_songs(&Manifest::load(path)?)?,
                None => songs.to_vec(),
            };
            Ok(Bank::Oracle(OracleBank::from_clean(&clean)?))
        }
        "silence" => Ok(Bank::Shared(Box::new(Silence))),
        "external" => {
            let command = a.command.as_deref().ok_or_else(|| CliError::Usage("--command is required".into()))?;
            let template: Vec<String> = command.split_whitespace().map(str::to_string).collect();
            let workdir = match (&a.workdir, &g.out) {
                (Some(w), _) => w.clone(),
                (None, Some(out)) => out.join("work"),
                (None, None) => std::env::temp_dir().join("mdxkit-work"),
            };
            Ok(Bank::Shared(Box::new(ExternalSeparator::new(&template, workdir)?)))
        }
        other => Err(CliError::Usage(format!("unknown separator {other:?}"))),
    }
}

fn finite_only<S: serde::Serializer>(m: &BTreeMap<SourceClass, f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(None)?;
    for (k, v) in m.iter().filter(|(_, v)| v.is_finite()) {
        map.serialize_entry(k, v)?;
    }
    map.end()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub submission: String,
    pub per_song: BTreeMap<String, SdrReport>,
    pub overall: SdrReport,
    /// Median over songs of the median one-second SDR.
    #[serde(serialize_with = "finite_only")]
    pub sisec_median: BTreeMap<SourceClass, f64>,
    pub policy: EvalPolicy,
}

fn evaluate(g: &Global, a: &EvaluateArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let m = manifest(g)?;
    let policy = configured(g, EvalPolicy::default())?;
    let songs = load_songs(&m)?;
    let separators = match &a.estimates {
        Some(_) => None,
        None => Some(bank(g, &a.separator, &songs)?),
    };
    let scored = songs
        .par_iter()
        .map(|song| -> Result<_, CliError> {
            let est = match (&a.estimates, &separators) {
                (Some(dir), _) => load_estimates(dir, &song.id)?,
                (None, Some(b)) => b.for_song(&song.id)?.separate(&song.mixture())?,
                (None, None) => unreachable!("either estimates or a separator"),
            };
            est.buffers()[0].expect_len(song.stems.len())?;
            if let Some(dir) = &a.save_estimates {
                save_estimates(dir, &song.id, &est)?;
            }
            let report = sdr_song(&song.stems, &est, policy.silent_target)?;
            let segments: Vec<Vec<f64>> = SourceClass::ALL
                .iter()
                .map(|&c| segment_sdrs(&song.stems[c], &est[c], SISEC_SEGMENT_LEN))
                .collect::<Result<_, _>>()?;
            Ok((song.id.clone(), report, segments))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<SdrReport> = scored.iter().map(|(_, r, _)| r.clone()).collect();
    let overall = sdr_dataset(&reports, policy.infinity)?;
    let mut sisec_median = BTreeMap::new();
    for class in SourceClass::ALL {
        let per_song: Vec<Vec<f64>> =
            scored.iter().map(|(_, _, s)| s[class.index()].clone()).filter(|s| !s.is_empty()).collect();
        if let Ok(v) = sdr_sisec_median(&per_song) {
            sisec_median.insert(class, v);
        }
    }
    let report = EvaluationReport {
        submission: a.name.clone(),
        per_song: scored.into_iter().map(|(id, r, _)| (id, r)).collect(),
        overall,
        sisec_median,
        policy,
    };
    write_json(&out.join("report.json"), &report)?;
    stamp(out, "evaluate", g, &(a, policy))
}

fn refine_cmd(g: &Global, a: &RefineArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let m = manifest(g)?;
    let songs = load_songs(&m)?;
    let b = bank(g, &a.separator, &songs)?;
    let method = match a.method {
        MethodArg::Filtered => RefineMethod::Filtered,
        MethodArg::Redistributed => RefineMethod::Redistributed,
    };
    let outcome = refine(&b, &songs, method);
    let provenance = ManifestProvenance {
        generator: "mdxkit refine".into(),
        seed: Some(g.seed),
        parent_manifest: g.manifest.as_ref().map(|p| p.display().to_string()),
    };
    write_dataset(out, &outcome.songs, provenance)?;
    let failures: BTreeMap<String, String> =
        outcome.failures.iter().map(|(id, e)| (id.clone(), e.to_string())).collect();
    write_json(&out.join("failures.json"), &failures)?;
    stamp(out, "refine", g, a)
}

fn clean(g: &Global, a: &CleanArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let m = manifest(g)?;
    let songs = load_songs(&m)?;
    let b = bank(g, &a.separator, &songs)?;
    let decisions = songs
        .par_chunks(1)
        .map(|one| energy_clean(&b, one, a.threshold_db))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    write_json(&out.join("decisions.json"), &decisions)?;
    stamp(out, "clean", g, a)
}

#[derive(Debug, Serialize)]
struct ToyReport {
    effective_corruption: f64,
    train_loss: Vec<(usize, f64)>,
    validation_loss: Vec<(usize, f64)>,
    final_validation_loss: Option<f64>,
}

fn toy_train(g: &Global, a: &ToyTrainArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let mut config = configured(g, ToyTrainConfig::new(a.steps, g.seed))?;
    config.seed = g.seed;
    config.loss = match a.loss {
        LossArg::L1 => ToyLoss::L1,
        LossArg::L2 => ToyLoss::L2,
    };
    if let Some(q) = a.truncate {
        let axis = match a.axis {
            AxisArg::Batch => TruncationAxis::Batch,
            AxisArg::Time => TruncationAxis::Time,
            AxisArg::Both => TruncationAxis::Both,
        };
        config = config.with_truncation(TruncationPolicy::new(q, axis));
    }
    let taxonomy = mdxkit_core::dataset::Taxonomy::default();
    let raw = toy_raw_songs(a.songs, a.length, g.seed)?;
    let noise = LabelNoiseConfig { rate: a.label_noise, confusion: toy_confusion(), seed: g.seed };
    let (noisy, log) = mdxkit_core::corruptor::corrupt_label_noise(&raw, &noise)?;
    let effective = effective_corruption_fraction(&log, &raw, &taxonomy)?;
    let group = |songs: &[mdxkit_core::dataset::RawSong]| -> Result<Vec<Song>, CliError> {
        songs.iter().map(|s| s.group(&taxonomy).map_err(|e| CliError::runtime("dataset_error", e))).collect()
    };
    let train = group(&noisy)?;
    let validation = group(&toy_raw_songs(a.validation_songs, a.length, g.seed.wrapping_add(1000))?)?;
    let result = train_toy_mask_model(&train, &validation, &config)?;
    let report = ToyReport {
        effective_corruption: effective,
        final_validation_loss: result.final_validation_loss(),
        train_loss: result.train_loss,
        validation_loss: result.validation_loss,
    };
    write_json(&out.join("toy.json"), &report)?;
    stamp(out, "toy-train", g, &(a, &config))
}

#[derive(Debug, Serialize)]
struct RateOutput {
    comparisons: usize,
    params: TrueSkillParams,
    ranking: Vec<mdxkit_core::rating::RankedModel>,
}

fn rate(g: &Global, a: &LogArgs) -> Result<(), CliError> {
    let params = configured(g, TrueSkillParams::default())?;
    let records: Vec<ComparisonRecord> = read_jsonl(&a.log)?;
    let ranking = rank(&rate_records(&records, &params)?)?;
    if g.out.is_some() {
        eprint!("{}", render_ranking(&ranking));
    }
    emit(g, &RateOutput { comparisons: records.len(), params, ranking })
}

fn stats(g: &Global, a: &StatsArgs) -> Result<(), CliError> {
    let records: Vec<ComparisonRecord> = read_jsonl(&a.log)?;
    let categories = match &a.sessions {
        Some(path) => read_jsonl::<SessionRecord>(path)?
            .into_iter()
            .map(|s| (s.assessor, s.category.name().to_string()))
            .collect(),
        None => BTreeMap::new(),
    };
    emit(g, &assessor_stats(&records, &categories)?)
}

fn serve(g: &Global, a: &ServeArgs) -> Result<(), CliError> {
    let mut config = TestConfig::new(g.seed);
    config.params = configured(g, config.params)?;
    config.schedule.per_cell = a.per_cell;
    let index = StimulusIndex::load(&a.stimuli)?;
    let test = ListeningTest::open(config, index, &a.logs)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{}", a.addr);
    runtime.block_on(crate::service::http::serve(test, a.addr))?;
    Ok(())
}

fn segment_config(g: &Global, a: &SegmentArgs) -> Result<SegmentConfig, CliError> {
    let mut c = configured(g, SegmentConfig::default())?;
    if let Some(v) = a.count {
        c.count = v;
    }
    if let Some(v) = a.segment_seconds {
        c.segment_seconds = v;
    }
    if let Some(v) = a.min_gap_seconds {
        c.min_gap_seconds = v;
    }
    if !(c.segment_seconds > 0.0 && c.min_gap_seconds >= 0.0 && c.hop_seconds > 0.0) {
        return Err(CliError::Usage("segment durations must be positive".into()));
    }
    Ok(c)
}

fn segments(g: &Global, a: &SegmentArgs) -> Result<(), CliError> {
    let config = segment_config(g, a)?;
    let m = manifest(g)?;
    let windows = m
        .songs()
        .par_iter()
        .map(|e| -> Result<_, CliError> {
            let song = m.load_song(e)?;
            Ok((e.id.clone(), mdxkit_core::rating::select_segments(&song.mixture(), &config)?))
        })
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    emit(g, &windows)
}

fn split_named(s: &str) -> Result<(&str, &str), CliError> {
    s.split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .ok_or_else(|| CliError::Usage(format!("expected name=path, got {s:?}")))
}

fn stimuli(g: &Global, a: &StimuliArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let config = segment_config(g, &a.segments)?;
    let m = manifest(g)?;
    let songs = load_songs(&m)?;
    let mut models = Vec::new();
    for spec in &a.models {
        let (name, dir) = split_named(spec)?;
        let est: Vec<Stems> =
            songs.par_iter().map(|s| load_estimates(Path::new(dir), &s.id)).collect::<Result<_, _>>()?;
        models.push((name.to_string(), est));
    }
    let index = prepare_stimuli(&models, &songs, &config, out, g.seed)?;
    eprintln!("{} clips for {} excerpts", index.stimuli.len(), index.segments.len());
    stamp(out, "stimuli", g, &(a, config))
}

fn report(g: &Global, a: &ReportArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let mut board = Leaderboard::new(Phase::All);
    let mut per_song = BTreeMap::new();
    for spec in &a.reports {
        let (name, path) = split_named(spec)?;
        let r: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for (song, rep) in &r.per_song {
            per_song.insert((name.to_string(), song.clone()), rep.clone());
        }
        board.insert(name, r.overall);
    }
    write_json(&out.join("leaderboard.json"), &board)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("leaderboard.txt"), board.render())?;
    if let Some(log) = &a.log {
        let records: Vec<ComparisonRecord> = read_jsonl(log)?;
        let points = sdr_agreement(&records, &per_song);
        std::fs::write(out.join("agreement.csv"), agreement_csv(&points))?;
        std::fs::write(out.join("agreement.svg"), agreement_svg(&points))?;
    }
    stamp(out, "report", g, a)
}

pub fn agreement_csv(points: &[AgreementPoint]) -> String {
    let mut s = String::from("higher,lower,song_id,class,stimulus,sdr_gap,agreement,judgments\n");
    for p in points {
        let stimulus =
            serde_json::to_value(p.stimulus).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        s += &format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&p.higher),
            csv_field(&p.lower),
            csv_field(&p.song_id),
            p.class,
            stimulus,
            p.sdr_gap,
            p.agreement,
            p.judgments
        );
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Scatter plot of agreement against SDR gap.
pub fn agreement_svg(points: &[AgreementPoint]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let max_gap = points.iter().map(|p| p.sdr_gap).fold(1.0f64, f64::max);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s += &format!(
        "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y}\" stroke=\"black\"/>\n",
        y = h - pad,
        x = w - pad
    );
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">SDR difference (dB, 0 to {max_gap:.2})</text>\n",
        w / 2.0,
        h - 8.0
    );
    s += &format!(
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">agreement</text>\n",
        h / 2.0,
        h / 2.0
    );
    for p in points {
        let x = pad + p.sdr_gap / max_gap * (w - 2.0 * pad);
        let y = h - pad - p.agreement * (h - 2.0 * pad);
        s += &format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill-opacity=\"0.5\"/>\n");
    }
    s + "</svg>\n"
}
