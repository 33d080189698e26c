//! Simulated training-data errors: label noise and bleeding.
//!
//! Both corruptions are pure functions of the input songs and the config.
//! Song `i` draws from sub-stream `i` of the master seed, so songs can be
//! processed in any order or in parallel with identical results.
//!
//! Draw order, per song:
//!
//! * label noise, for each raw stem in order: one uniform for the relabel
//!   decision, then (only if relabeled) one uniform for the destination label;
//! * bleeding, for each source class in leaderboard order and each other
//!   destination class in the same order: gain, filter kind, order, then the
//!   cutoff(s) from low to high.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{apply_filter, apply_gain_db, design_filter, AudioBuffer, AudioError, FilterSpec, NYQUIST_HZ};
use crate::dataset::{normalize_label, DatasetError, RawSong, Song, SourceClass, Stems, Taxonomy, DEFAULT_INSTRUMENTS};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorruptError {
    #[error("label {0:?} is missing from the confusion matrix")]
    LabelNotInConfusion(String),
    #[error("invalid confusion matrix: {0}")]
    InvalidConfusion(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("log does not match the dataset: {0}")]
    LogMismatch(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Row-stochastic relabeling distribution over instrument labels.
///
/// Row `i` is the distribution of the new label given that a stem with true
/// label `labels[i]` is relabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

/// Synthetic stand-in statistics for the ten-instrument taxonomy, labels in
/// [`DEFAULT_INSTRUMENTS`] order. Only the guitar-to-bass entry (0.32) is a
/// published figure; every other entry is an invented but plausible value.
/// The diagonal is zero: a relabeling always changes the label.
#[rustfmt::skip]
const DEFAULT_ROWS: [[f64; 10]; 10] = [
    //  voc   bass  drums guitar piano keys strings winds perc  fx
    [0.00, 0.02, 0.02, 0.14, 0.06, 0.16, 0.10, 0.20, 0.05, 0.25], // vocals
    [0.02, 0.00, 0.06, 0.38, 0.08, 0.24, 0.06, 0.04, 0.04, 0.08], // bass
    [0.02, 0.06, 0.00, 0.04, 0.02, 0.04, 0.02, 0.02, 0.58, 0.20], // drums
    [0.04, 0.32, 0.03, 0.00, 0.12, 0.22, 0.09, 0.04, 0.04, 0.10], // guitar
    [0.02, 0.06, 0.02, 0.15, 0.00, 0.55, 0.08, 0.03, 0.02, 0.07], // piano
    [0.04, 0.12, 0.02, 0.20, 0.35, 0.00, 0.10, 0.05, 0.02, 0.10], // keys
    [0.05, 0.08, 0.01, 0.14, 0.12, 0.30, 0.00, 0.20, 0.02, 0.08], // strings
    [0.12, 0.04, 0.01, 0.10, 0.06, 0.25, 0.30, 0.00, 0.02, 0.10], // winds
    [0.02, 0.03, 0.70, 0.03, 0.02, 0.03, 0.01, 0.01, 0.00, 0.15], // percussion
    [0.15, 0.05, 0.20, 0.10, 0.05, 0.20, 0.05, 0.05, 0.15, 0.00], // fx
];

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self::new(
            DEFAULT_INSTRUMENTS.iter().map(|s| s.to_string()).collect(),
            DEFAULT_ROWS.iter().map(|r| r.to_vec()).collect(),
        )
        .expect("shipped confusion matrix is valid")
    }
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, CorruptError> {
        let labels: Vec<String> = labels.iter().map(|l| normalize_label(l)).collect();
        let m = Self { labels, rows };
        m.validate()?;
        Ok(m)
    }

    /// Every label maps to itself.
    pub fn identity(labels: &[&str]) -> Self {
        let n = labels.len();
        let rows = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self::new(labels.iter().map(|s| s.to_string()).collect(), rows).expect("identity is valid")
    }

    pub fn validate(&self) -> Result<(), CorruptError> {
        let n = self.labels.len();
        if n == 0 {
            return Err(CorruptError::InvalidConfusion("no labels"));
        }
        if self.rows.len() != n || self.rows.iter().any(|r| r.len() != n) {
            return Err(CorruptError::InvalidConfusion("matrix must be square over the labels"));
        }
        for row in &self.rows {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(CorruptError::InvalidConfusion("entries must be finite and non-negative"));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(CorruptError::InvalidConfusion("rows must sum to 1"));
            }
        }
        let mut seen = self.labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != n {
            return Err(CorruptError::InvalidConfusion("duplicate labels"));
        }
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn position(&self, label: &str) -> Result<usize, CorruptError> {
        let key = normalize_label(label);
        self.labels.iter().position(|l| *l == key).ok_or_else(|| CorruptError::LabelNotInConfusion(label.to_string()))
    }

    /// Probability that a relabeled `from` stem becomes `to`.
    pub fn probability(&self, from: &str, to: &str) -> Result<f64, CorruptError> {
        Ok(self.rows[self.position(from)?][self.position(to)?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNoiseConfig {
    /// Probability that any one raw stem is relabeled.
    pub rate: f64,
    pub confusion: ConfusionMatrix,
    pub seed: u64,
}

impl LabelNoiseConfig {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self { rate, confusion: ConfusionMatrix::default(), seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleedConfig {
    pub gain_db_range: Range,
    /// Inclusive integer order bounds.
    pub order_range: (u32, u32),
    pub lowpass_cutoff_range: Range,
    pub bandpass_low_range: Range,
    pub bandpass_high_range: Range,
    /// Chance of a low-pass (otherwise band-pass) filter per stem pair.
    pub lowpass_probability: f64,
    pub seed: u64,
}

impl BleedConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            gain_db_range: Range::new(-12.0, -7.0),
            order_range: (3, 9),
            lowpass_cutoff_range: Range::new(900.0, 9000.0),
            bandpass_low_range: Range::new(200.0, 600.0),
            bandpass_high_range: Range::new(8000.0, 10_000.0),
            lowpass_probability: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorruptError> {
        let g = self.gain_db_range;
        if !(g.low < g.high) || !g.low.is_finite() || !g.high.is_finite() {
            return Err(CorruptError::InvalidConfig("gain range must be non-degenerate"));
        }
        let (lo, hi) = self.order_range;
        if lo > hi || lo < crate::audio::filter::MIN_ORDER || hi > crate::audio::filter::MAX_ORDER {
            return Err(CorruptError::InvalidConfig("order range must lie in 3..=9"));
        }
        for r in [self.lowpass_cutoff_range, self.bandpass_low_range, self.bandpass_high_range] {
            if !(r.low < r.high && r.low > 0.0 && r.high < NYQUIST_HZ) {
                return Err(CorruptError::InvalidConfig("cutoff ranges must be non-degenerate within (0, 22050) Hz"));
            }
        }
        if self.bandpass_low_range.high >= self.bandpass_high_range.low {
            return Err(CorruptError::InvalidConfig("band-pass low range must sit below the high range"));
        }
        if !(0.0..=1.0).contains(&self.lowpass_probability) {
            return Err(CorruptError::InvalidConfig("lowpass probability must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One affected stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorruptionRecord {
    /// Raw stem `stem` (index within the song) changed label.
    Relabel { song_id: String, stem: usize, from: String, to: String },
    /// `source` was attenuated, filtered and added into `stem`.
    Bleed { song_id: String, stem: SourceClass, source: SourceClass, gain_db: f64, filter: FilterSpec },
}

impl CorruptionRecord {
    pub fn song_id(&self) -> &str {
        match self {
            Self::Relabel { song_id, .. } | Self::Bleed { song_id, .. } => song_id,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorruptionLog {
    pub records: Vec<CorruptionRecord>,
}

impl CorruptionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Relabels the raw stems of one song; audio is untouched.
pub fn relabel_song(
    song: &RawSong,
    song_index: u64,
    config: &LabelNoiseConfig,
) -> Result<(RawSong, Vec<CorruptionRecord>), CorruptError> {
    if !(0.0..=1.0).contains(&config.rate) {
        return Err(CorruptError::InvalidConfig("rate must be in [0, 1]"));
    }
    let positions = song.stems.iter().map(|s| config.confusion.position(&s.label)).collect::<Result<Vec<_>, _>>()?;
    let mut rng = Rng::substream(config.seed, song_index);
    let mut out = song.clone();
    let mut records = Vec::new();
    for (i, (stem, &row)) in out.stems.iter_mut().zip(&positions).enumerate() {
        if rng.unit() >= config.rate {
            continue;
        }
        let dest = rng.categorical(&config.confusion.rows[row]);
        if dest == row {
            continue;
        }
        let to = config.confusion.labels[dest].clone();
        records.push(CorruptionRecord::Relabel {
            song_id: song.id.clone(),
            stem: i,
            from: stem.label.clone(),
            to: to.clone(),
        });
        stem.label = to;
    }
    Ok((out, records))
}

/// Label noise over a whole raw dataset. Grouping into four classes is left
/// to the caller ([`RawSong::group`]), after relabeling.
pub fn corrupt_label_noise(
    songs: &[RawSong],
    config: &LabelNoiseConfig,
) -> Result<(Vec<RawSong>, CorruptionLog), CorruptError> {
    config.confusion.validate()?;
    let mut out = Vec::with_capacity(songs.len());
    let mut log = CorruptionLog::default();
    for (i, song) in songs.iter().enumerate() {
        let (s, records) = relabel_song(song, i as u64, config)?;
        out.push(s);
        log.records.extend(records);
    }
    Ok((out, log))
}

fn draw_filter(rng: &mut Rng, config: &BleedConfig) -> FilterSpec {
    let lowpass = rng.unit() < config.lowpass_probability;
    let order = rng.int_inclusive(config.order_range.0, config.order_range.1);
    if lowpass {
        let r = config.lowpass_cutoff_range;
        FilterSpec::lowpass(order, rng.uniform(r.low, r.high))
    } else {
        let (lo, hi) = (config.bandpass_low_range, config.bandpass_high_range);
        let low = rng.uniform(lo.low, lo.high);
        let high = rng.uniform(hi.low, hi.high);
        FilterSpec::bandpass(order, low, high)
    }
}

/// The signal a bleed record injects, given the clean source stem.
pub fn bleed_component(source: &AudioBuffer, gain_db: f64, filter: &FilterSpec) -> Result<AudioBuffer, CorruptError> {
    let coeffs = design_filter(filter)?;
    Ok(apply_filter(&apply_gain_db(source, gain_db), &coeffs))
}

/// Every stem of one song bleeds into every other stem.
///
/// Sources are always the clean stems. The returned song keeps the clean
/// mixture as its stored mixture, so the stem sum no longer matches it.
pub fn bleed_song(
    song: &Song,
    song_index: u64,
    config: &BleedConfig,
) -> Result<(Song, Vec<CorruptionRecord>), CorruptError> {
    config.validate()?;
    let mut rng = Rng::substream(config.seed, song_index);
    let mut stems = song.stems.clone();
    let mut records = Vec::with_capacity(12);
    for source in SourceClass::ALL {
        for dest in SourceClass::ALL {
            if dest == source {
                continue;
            }
            let r = config.gain_db_range;
            let gain_db = rng.uniform(r.low, r.high);
            let filter = draw_filter(&mut rng, config);
            let component = bleed_component(&song.stems[source], gain_db, &filter)?;
            stems[dest].add_assign(&component)?;
            records.push(CorruptionRecord::Bleed { song_id: song.id.clone(), stem: dest, source, gain_db, filter });
        }
    }
    let out = Song { id: song.id.clone(), stems, mixture: Some(song.mixture()) };
    Ok((out, records))
}

pub fn corrupt_bleeding(songs: &[Song], config: &BleedConfig) -> Result<(Vec<Song>, CorruptionLog), CorruptError> {
    let mut out = Vec::with_capacity(songs.len());
    let mut log = CorruptionLog::default();
    for (i, song) in songs.iter().enumerate() {
        let (s, records) = bleed_song(song, i as u64, config)?;
        out.push(s);
        log.records.extend(records);
    }
    Ok((out, log))
}

/// Rebuilds bled stems from the clean song and its bleed records.
pub fn reconstruct_bleeding(clean: &Song, records: &[CorruptionRecord]) -> Result<Stems, CorruptError> {
    let mut stems = clean.stems.clone();
    for record in records {
        match record {
            CorruptionRecord::Bleed { song_id, stem, source, gain_db, filter } if *song_id == clean.id => {
                stems[*stem].add_assign(&bleed_component(&clean.stems[*source], *gain_db, filter)?)?;
            }
            CorruptionRecord::Bleed { .. } => {}
            CorruptionRecord::Relabel { .. } => {
                return Err(CorruptError::LogMismatch("relabel record in a bleeding log".into()));
            }
        }
    }
    Ok(stems)
}

/// Per-song class of each raw stem after replaying the relabels in `log`,
/// alongside the class of its original label.
fn replay_relabels(
    log: &CorruptionLog,
    songs: &[RawSong],
    taxonomy: &Taxonomy,
) -> Result<Vec<Vec<(SourceClass, SourceClass)>>, CorruptError> {
    let index: BTreeMap<&str, usize> = songs.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut labels: Vec<Vec<String>> =
        songs.iter().map(|s| s.stems.iter().map(|st| normalize_label(&st.label)).collect()).collect();
    for record in &log.records {
        let CorruptionRecord::Relabel { song_id, stem, from, to } = record else {
            return Err(CorruptError::LogMismatch("bleed record in a label-noise log".into()));
        };
        let &song = index
            .get(song_id.as_str())
            .ok_or_else(|| CorruptError::LogMismatch(alloc::format!("unknown song {song_id:?}")))?;
        let current = labels[song]
            .get_mut(*stem)
            .ok_or_else(|| CorruptError::LogMismatch(alloc::format!("song {song_id:?} has no stem {stem}")))?;
        if *current != normalize_label(from) {
            return Err(CorruptError::LogMismatch(alloc::format!(
                "song {song_id:?} stem {stem} is labeled {current:?}, log says {from:?}"
            )));
        }
        *current = normalize_label(to);
    }
    songs
        .iter()
        .zip(labels)
        .map(|(song, new_labels)| {
            song.stems
                .iter()
                .zip(new_labels)
                .map(|(st, new)| Ok((taxonomy.resolve(&st.label)?, taxonomy.resolve(&new)?)))
                .collect()
        })
        .collect()
}

/// Fraction of four-class stems whose set of member raw stems changed.
///
/// A relabel that moves a stem between classes affects both the class it
/// left and the class it joined; relabels within a class affect nothing.
pub fn effective_corruption_fraction(
    log: &CorruptionLog,
    clean: &[RawSong],
    taxonomy: &Taxonomy,
) -> Result<f64, CorruptError> {
    if clean.is_empty() {
        return Ok(0.0);
    }
    let affected: usize =
        affected_classes(log, clean, taxonomy)?.iter().map(|flags| flags.iter().filter(|&&f| f).count()).sum();
    Ok(affected as f64 / (4 * clean.len()) as f64)
}

/// Per song, which classes had their membership changed by the log.
pub fn affected_classes(
    log: &CorruptionLog,
    clean: &[RawSong],
    taxonomy: &Taxonomy,
) -> Result<Vec<[bool; 4]>, CorruptError> {
    Ok(replay_relabels(log, clean, taxonomy)?
        .into_iter()
        .map(|stems| {
            let mut flags = [false; 4];
            for (before, after) in stems {
                if before != after {
                    flags[before.index()] = true;
                    flags[after.index()] = true;
                }
            }
            flags
        })
        .collect())
}

/// Per song, which classes received content whose true class differs from
/// the class label (the stems a cleaner should reject).
pub fn foreign_content(
    log: &CorruptionLog,
    clean: &[RawSong],
    taxonomy: &Taxonomy,
) -> Result<Vec<[bool; 4]>, CorruptError> {
    Ok(replay_relabels(log, clean, taxonomy)?
        .into_iter()
        .map(|stems| {
            let mut flags = [false; 4];
            for (truth, assigned) in stems {
                if truth != assigned {
                    flags[assigned.index()] = true;
                }
            }
            flags
        })
        .collect())
}

/// Number of relabel records grouped by (from, to).
pub fn relabel_counts(log: &CorruptionLog) -> BTreeMap<(String, String), usize> {
    let mut counts = BTreeMap::new();
    for r in &log.records {
        if let CorruptionRecord::Relabel { from, to, .. } = r {
            *counts.entry((normalize_label(from), normalize_label(to))).or_insert(0) += 1;
        }
    }
    counts
}
