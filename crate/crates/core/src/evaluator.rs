//! Global SDR scoring, the median-of-medians variant, phased test subsets
//! and leaderboards.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError, SAMPLE_RATE};
use crate::dataset::{SourceClass, Stems};
use crate::rng::Rng;

/// Value infinite SDRs are clamped to under [`InfinityPolicy::Saturate`].
pub const SATURATION_DB: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("target is silent")]
    SilentTarget,
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("need at least {needed} songs, found {found}")]
    TooFewSongs { needed: usize, found: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// How perfect reconstructions (+inf dB) enter dataset averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfinityPolicy {
    /// Clamp to [`SATURATION_DB`].
    #[default]
    Saturate,
    /// Leave the value out of the average.
    Skip,
}

/// What to do with a source whose target is all zeros.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SilentTargetPolicy {
    /// Drop that source for that song.
    #[default]
    Skip,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPolicy {
    pub infinity: InfinityPolicy,
    pub silent_target: SilentTargetPolicy,
}

/// `10 log10(sum |s|^2 / sum |s - s_hat|^2)` over time and both channels.
///
/// No regularizing epsilon: a perfect estimate scores `f64::INFINITY`.
pub fn sdr_source(target: &AudioBuffer, estimate: &AudioBuffer) -> Result<f64, EvalError> {
    estimate.expect_len(target.len())?;
    let signal = target.energy();
    if signal == 0.0 {
        return Err(EvalError::SilentTarget);
    }
    // per-channel sums added last, so swapping channels is exact
    let [d_left, d_right] = [0, 1]
        .map(|ch| target.channel(ch).iter().zip(estimate.channel(ch)).map(|(&s, &e)| (s - e) * (s - e)).sum::<f64>());
    let distortion = d_left + d_right;
    if distortion == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / distortion).log10())
}

/// SDR values keyed by source plus their mean.
///
/// Non-finite values serialize as the strings `"inf"` / `"-inf"` so the
/// distinction from a large finite score survives JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    #[serde(with = "db_map")]
    pub per_source: BTreeMap<SourceClass, f64>,
    #[serde(with = "db")]
    pub mean: f64,
}

impl SdrReport {
    /// Builds a report whose mean is the plain average of `per_source`.
    pub fn from_sources(per_source: BTreeMap<SourceClass, f64>) -> Result<Self, EvalError> {
        let values: Vec<f64> = per_source.values().copied().collect();
        let mean = stable_mean(&values).ok_or(EvalError::EmptyInput)?;
        Ok(Self { per_source, mean })
    }

    pub fn get(&self, class: SourceClass) -> Option<f64> {
        self.per_source.get(&class).copied()
    }
}

/// Arithmetic mean computed as `x0 + mean(x - x0)`, which is exact for
/// constant inputs.
fn stable_mean(values: &[f64]) -> Option<f64> {
    let (&first, rest) = values.split_first()?;
    if !first.is_finite() || rest.iter().any(|v| !v.is_finite()) {
        return Some(values.iter().sum::<f64>() / values.len() as f64);
    }
    let dev: f64 = rest.iter().map(|v| v - first).sum();
    Some(first + dev / values.len() as f64)
}

/// Per-source SDR of one song and their average (the global song score).
pub fn sdr_song(targets: &Stems, estimates: &Stems, policy: SilentTargetPolicy) -> Result<SdrReport, EvalError> {
    let mut per_source = BTreeMap::new();
    for class in SourceClass::ALL {
        match sdr_source(&targets[class], &estimates[class]) {
            Ok(v) => {
                per_source.insert(class, v);
            }
            Err(EvalError::SilentTarget) if policy == SilentTargetPolicy::Skip => {}
            Err(e) => return Err(e),
        }
    }
    SdrReport::from_sources(per_source)
}

fn apply_infinity(value: f64, policy: InfinityPolicy) -> Option<f64> {
    match policy {
        InfinityPolicy::Saturate => Some(value.min(SATURATION_DB)),
        InfinityPolicy::Skip => value.is_finite().then_some(value),
    }
}

/// Averages song reports: per source over the songs that scored it, and the
/// overall mean over per-song means, after applying `policy` to infinities.
pub fn sdr_dataset(reports: &[SdrReport], policy: InfinityPolicy) -> Result<SdrReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut per_source = BTreeMap::new();
    for class in SourceClass::ALL {
        let values: Vec<f64> =
            reports.iter().filter_map(|r| r.get(class)).filter_map(|v| apply_infinity(v, policy)).collect();
        if let Some(m) = stable_mean(&values) {
            per_source.insert(class, m);
        }
    }
    let song_means: Vec<f64> = reports
        .iter()
        .filter_map(|r| {
            let vals: Vec<f64> = r.per_source.values().filter_map(|&v| apply_infinity(v, policy)).collect();
            stable_mean(&vals)
        })
        .collect();
    let mean = stable_mean(&song_means).ok_or(EvalError::EmptyInput)?;
    Ok(SdrReport { per_source, mean })
}

/// SDR of consecutive non-overlapping segments; the trailing partial
/// segment and segments with a silent target are dropped.
pub fn segment_sdrs(target: &AudioBuffer, estimate: &AudioBuffer, segment_len: usize) -> Result<Vec<f64>, EvalError> {
    estimate.expect_len(target.len())?;
    assert!(segment_len > 0);
    let mut out = Vec::new();
    let mut start = 0;
    while start + segment_len <= target.len() {
        let end = start + segment_len;
        match sdr_source(&target.slice(start, end), &estimate.slice(start, end)) {
            Ok(v) => out.push(v),
            Err(EvalError::SilentTarget) => {}
            Err(e) => return Err(e),
        }
        start = end;
    }
    Ok(out)
}

/// One-second segment length used by the median variant.
pub const SISEC_SEGMENT_LEN: usize = SAMPLE_RATE as usize;

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Median over songs of the median over each song's segment scores.
pub fn sdr_sisec_median(per_song_segments: &[Vec<f64>]) -> Result<f64, EvalError> {
    let mut song_medians = per_song_segments
        .iter()
        .map(|segments| median(&mut segments.clone()).ok_or(EvalError::EmptyInput))
        .collect::<Result<Vec<_>, _>>()?;
    median(&mut song_medians).ok_or(EvalError::EmptyInput)
}

/// Evaluation phase; each challenge phase nests inside the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Phase1,
    Phase2,
    Final,
    All,
}

impl Phase {
    pub fn size(self) -> Option<usize> {
        match self {
            Phase::Phase1 => Some(9),
            Phase::Phase2 => Some(18),
            Phase::Final => Some(27),
            Phase::All => None,
        }
    }
}

/// Deterministic nested random subsets: the ids are sorted, shuffled with
/// `seed`, and each phase takes a prefix. Results come back sorted.
pub fn phase_subset(song_ids: &[String], phase: Phase, seed: u64) -> Result<Vec<String>, EvalError> {
    let mut ids = song_ids.to_vec();
    ids.sort();
    ids.dedup();
    let Some(size) = phase.size() else {
        return Ok(ids);
    };
    let needed = Phase::Final.size().unwrap_or(27);
    if ids.len() < needed {
        return Err(EvalError::TooFewSongs { needed, found: ids.len() });
    }
    Rng::new(seed).shuffle(&mut ids);
    ids.truncate(size);
    ids.sort();
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub submission: String,
    pub report: SdrReport,
}

/// Submissions ordered by mean SDR (descending), ties by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub phase: Phase,
    rows: Vec<LeaderboardRow>,
}

fn row_order(a: &LeaderboardRow, b: &LeaderboardRow) -> Ordering {
    b.report.mean.total_cmp(&a.report.mean).then_with(|| a.submission.cmp(&b.submission))
}

impl Leaderboard {
    pub fn new(phase: Phase) -> Self {
        Self { phase, rows: Vec::new() }
    }

    pub fn insert(&mut self, submission: impl Into<String>, report: SdrReport) {
        let row = LeaderboardRow { submission: submission.into(), report };
        let at = self.rows.partition_point(|r| row_order(r, &row) == Ordering::Less);
        self.rows.insert(at, row);
    }

    pub fn rows(&self) -> &[LeaderboardRow] {
        &self.rows
    }

    /// Plain-text table: rank, submission, then Mean, Bass, Drums, Other,
    /// Vocals in dB with two decimals.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.submission.len()).max().unwrap_or(0).max(10);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}",
            "#", "Submission", "Mean", "Bass", "Drums", "Other", "Vocals"
        );
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{:>4}  {:<width$}  {:>7}", i + 1, row.submission, fmt_db(row.report.mean));
            for class in SourceClass::ALL {
                let cell = row.report.get(class).map(fmt_db).unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {cell:>7}");
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        alloc::format!("{v:.2}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub(crate) mod db {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    struct DbVisitor;

    impl Visitor<'_> for DbVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
            f.write_str("a number or \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::custom("expected inf, -inf or nan")),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(DbVisitor)
    }
}

pub(crate) mod db_map {
    use alloc::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::dataset::SourceClass;

    #[derive(Serialize, Deserialize)]
    struct Db(#[serde(with = "super::db")] f64);

    pub fn serialize<S: Serializer>(m: &BTreeMap<SourceClass, f64>, s: S) -> Result<S::Ok, S::Error> {
        let wrapped: BTreeMap<SourceClass, Db> = m.iter().map(|(k, v)| (*k, Db(*v))).collect();
        wrapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<SourceClass, f64>, D::Error> {
        let wrapped = BTreeMap::<SourceClass, Db>::deserialize(d)?;
        Ok(wrapped.into_iter().map(|(k, v)| (k, v.0)).collect())
    }
}
