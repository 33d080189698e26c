//! Two-player TrueSkill, listening-test scheduling, segment selection and
//! assessor statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::dataset::SourceClass;
use crate::rng::Rng;

pub const INITIAL_MU: f64 = 25.0;
pub const INITIAL_SIGMA: f64 = 25.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RatingError {
    #[error("invalid rating (mu {mu}, sigma {sigma})")]
    InvalidRating { mu: f64, sigma: f64 },
    #[error("invalid rating parameters: {0}")]
    InvalidParams(&'static str),
    #[error("rating update produced a non-finite value")]
    Numerical,
    #[error("need at least two models, got {0}")]
    TooFewModels(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("song of {found} samples is too short for the requested segments ({needed} samples)")]
    SongTooShort { needed: usize, found: usize },
    #[error("invalid comparison record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for Rating {
    fn default() -> Self {
        Self { mu: INITIAL_MU, sigma: INITIAL_SIGMA }
    }
}

impl Rating {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    pub fn validate(&self) -> Result<(), RatingError> {
        if self.mu.is_finite() && self.sigma.is_finite() && self.sigma > 0.0 {
            Ok(())
        } else {
            Err(RatingError::InvalidRating { mu: self.mu, sigma: self.sigma })
        }
    }
}

/// TrueSkill model parameters. Only the initial mean and deviation are
/// published; the rest are the usual defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueSkillParams {
    pub mu: f64,
    pub sigma: f64,
    /// Performance noise.
    pub beta: f64,
    /// Skill drift added before each update.
    pub tau: f64,
    /// Prior probability of a draw between equal players; sets the draw margin.
    pub draw_probability: f64,
}

impl Default for TrueSkillParams {
    fn default() -> Self {
        Self {
            mu: INITIAL_MU,
            sigma: INITIAL_SIGMA,
            beta: INITIAL_SIGMA / 2.0,
            tau: INITIAL_SIGMA / 100.0,
            draw_probability: 0.10,
        }
    }
}

impl TrueSkillParams {
    pub fn validate(&self) -> Result<(), RatingError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(RatingError::InvalidParams("beta must be positive"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(RatingError::InvalidParams("tau must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.draw_probability) {
            return Err(RatingError::InvalidParams("draw probability must be in [0, 1)"));
        }
        Rating::new(self.mu, self.sigma).validate()
    }

    pub fn initial_rating(&self) -> Rating {
        Rating::new(self.mu, self.sigma)
    }

    /// Half-width of the performance-difference interval that counts as a
    /// draw.
    pub fn draw_margin(&self) -> f64 {
        normal_quantile((self.draw_probability + 1.0) / 2.0) * core::f64::consts::SQRT_2 * self.beta
    }
}

fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * core::f64::consts::PI).sqrt()
}

fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF (Acklam's approximation refined by
/// one Halley step).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let low = 0.02425;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = cdf(x) - p;
    let u = e * (2.0 * core::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Mean and variance corrections for a decisive outcome.
fn win_corrections(t: f64, eps: f64) -> (f64, f64) {
    let x = t - eps;
    let denom = cdf(x);
    let v = if denom > 1e-300 { pdf(x) / denom } else { -x };
    (v, v * (v + x))
}

/// Mean and variance corrections for a draw.
fn draw_corrections(t: f64, eps: f64) -> (f64, f64) {
    let t = t.abs();
    let denom = cdf(eps - t) - cdf(-eps - t);
    if denom < 1e-300 {
        // far tail: the draw interval sits entirely on one side
        return (-t + eps, 1.0);
    }
    let v = (pdf(-eps - t) - pdf(eps - t)) / denom;
    let w = v * v + ((eps - t) * pdf(eps - t) + (eps + t) * pdf(eps + t)) / denom;
    (v, w)
}

/// One two-player TrueSkill update. With `draw` false the first rating is
/// the winner.
pub fn trueskill_update(
    winner: Rating,
    loser: Rating,
    draw: bool,
    params: &TrueSkillParams,
) -> Result<(Rating, Rating), RatingError> {
    params.validate()?;
    winner.validate()?;
    loser.validate()?;
    let var_w = winner.sigma * winner.sigma + params.tau * params.tau;
    let var_l = loser.sigma * loser.sigma + params.tau * params.tau;
    let c2 = 2.0 * params.beta * params.beta + var_w + var_l;
    let c = c2.sqrt();
    let diff = winner.mu - loser.mu;
    let t = diff / c;
    let eps = params.draw_margin() / c;
    let (v, w) = if draw {
        let (v, w) = draw_corrections(t, eps);
        // the draw correction pulls the leader down
        (if diff < 0.0 { -v } else { v }, w)
    } else {
        win_corrections(t, eps)
    };
    let update = |mu: f64, var: f64, sign: f64| {
        let mu = mu + sign * var / c * v;
        let sigma = (var * (1.0 - var / c2 * w).max(0.0)).sqrt();
        Rating::new(mu, sigma)
    };
    let (a, b) = (update(winner.mu, var_w, 1.0), update(loser.mu, var_l, -1.0));
    for r in [a, b] {
        if !(r.mu.is_finite() && r.sigma.is_finite() && r.sigma > 0.0) {
            return Err(RatingError::Numerical);
        }
    }
    Ok((a, b))
}

fn performance_variance(r1: &Rating, r2: &Rating, params: &TrueSkillParams) -> f64 {
    2.0 * params.beta * params.beta + r1.sigma * r1.sigma + r2.sigma * r2.sigma
}

/// TrueSkill's draw probability for a pairing (the "match quality"):
/// `sqrt(2 beta^2 / c^2) * exp(-(mu1 - mu2)^2 / (2 c^2))` with
/// `c^2 = 2 beta^2 + sigma1^2 + sigma2^2`.
pub fn draw_probability(r1: &Rating, r2: &Rating, params: &TrueSkillParams) -> f64 {
    let c2 = performance_variance(r1, r2, params);
    let d = r1.mu - r2.mu;
    (2.0 * params.beta * params.beta / c2).sqrt() * (-d * d / (2.0 * c2)).exp()
}

/// Probability that the performance difference lands inside the draw
/// margin.
pub fn draw_margin_mass(r1: &Rating, r2: &Rating, params: &TrueSkillParams) -> f64 {
    let c = performance_variance(r1, r2, params).sqrt();
    let eps = params.draw_margin();
    let d = r1.mu - r2.mu;
    cdf((eps - d) / c) - cdf((-eps - d) / c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub rank: usize,
    pub model: String,
    pub mu: f64,
    pub sigma: f64,
}

/// Models by descending mean, ties broken by name.
pub fn rank(ratings: &BTreeMap<String, Rating>) -> Result<Vec<RankedModel>, RatingError> {
    if ratings.is_empty() {
        return Err(RatingError::EmptyInput);
    }
    let mut rows: Vec<(&String, &Rating)> = ratings.iter().collect();
    rows.sort_by(|a, b| b.1.mu.total_cmp(&a.1.mu).then_with(|| a.0.cmp(b.0)));
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (m, r))| RankedModel { rank: i + 1, model: m.clone(), mu: r.mu, sigma: r.sigma })
        .collect())
}

/// Fixed-width text table of a ranking.
pub fn render_ranking(rows: &[RankedModel]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:>3}  {:<width$}  {:>7}  {:>6}\n", "#", "Model", "mu", "sigma");
    for r in rows {
        let _ = writeln!(out, "{:>3}  {:<width$}  {:>7.3}  {:>6.3}", r.rank, r.model, r.mu, r.sigma);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stimulus {
    /// The separated stem.
    Extraction,
    /// The mixture minus the separated stem.
    Residual,
}

impl Stimulus {
    pub const ALL: [Stimulus; 2] = [Stimulus::Extraction, Stimulus::Residual];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
}

/// One judgment in a listening test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub assessor: String,
    pub model_a: String,
    pub model_b: String,
    pub song_id: String,
    pub segment_id: usize,
    pub class: SourceClass,
    pub stimulus: Stimulus,
    pub choice: Choice,
    pub elapsed_seconds: f64,
    pub switch_count: u32,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl ComparisonRecord {
    pub fn validate(&self) -> Result<(), RatingError> {
        if self.model_a == self.model_b {
            return Err(RatingError::InvalidRecord(format!("{} compared with itself", self.model_a)));
        }
        if !(self.elapsed_seconds >= 0.0 && self.elapsed_seconds.is_finite()) {
            return Err(RatingError::InvalidRecord("elapsed time must be non-negative".into()));
        }
        Ok(())
    }

    pub fn winner(&self) -> &str {
        match self.choice {
            Choice::A => &self.model_a,
            Choice::B => &self.model_b,
        }
    }

    pub fn loser(&self) -> &str {
        match self.choice {
            Choice::A => &self.model_b,
            Choice::B => &self.model_a,
        }
    }
}

/// Replays records in order, starting every model at the initial rating.
pub fn rate_records(
    records: &[ComparisonRecord],
    params: &TrueSkillParams,
) -> Result<BTreeMap<String, Rating>, RatingError> {
    let mut ratings = BTreeMap::new();
    for r in records {
        apply_record(&mut ratings, r, params)?;
    }
    Ok(ratings)
}

/// Applies one record to a rating table.
pub fn apply_record(
    ratings: &mut BTreeMap<String, Rating>,
    record: &ComparisonRecord,
    params: &TrueSkillParams,
) -> Result<(), RatingError> {
    record.validate()?;
    let get = |m: &str| ratings.get(m).copied().unwrap_or_else(|| params.initial_rating());
    let (w, l) = trueskill_update(get(record.winner()), get(record.loser()), false, params)?;
    ratings.insert(record.winner().into(), w);
    ratings.insert(record.loser().into(), l);
    Ok(())
}

/// An unordered model pair (by position in the model list), a class and a
/// stimulus type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub pair: (usize, usize),
    pub class: SourceClass,
    pub stimulus: Stimulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedComparison {
    pub model_a: String,
    pub model_b: String,
    pub class: SourceClass,
    pub stimulus: Stimulus,
    /// Index into the list of test segments.
    pub segment: usize,
    pub cell: ComparisonCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub assessor: u64,
    pub comparisons: Vec<PlannedComparison>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Comparisons per (pair, class, stimulus) cell.
    pub per_cell: usize,
    /// Number of test segments to spread the comparisons over.
    pub segments: usize,
    pub seed: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { per_cell: 3, segments: 4, seed: 0 }
    }
}

/// Builds one assessor's comparison plan.
///
/// Every cell appears `per_cell` times; the order is shuffled with the
/// assessor's own random stream. Each model pair gets a shuffled, even split
/// of A/B side orders, and segments are assigned round-robin over the
/// shuffled order.
pub fn schedule_comparisons(
    models: &[String],
    config: &ScheduleConfig,
    assessor: u64,
) -> Result<SchedulePlan, RatingError> {
    if models.len() < 2 {
        return Err(RatingError::TooFewModels(models.len()));
    }
    if config.segments == 0 {
        return Err(RatingError::EmptyInput);
    }
    let mut cells = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            for class in SourceClass::ALL {
                for stimulus in Stimulus::ALL {
                    for _ in 0..config.per_cell {
                        cells.push(ComparisonCell { pair: (i, j), class, stimulus });
                    }
                }
            }
        }
    }
    let mut rng = Rng::substream(config.seed, assessor);
    rng.shuffle(&mut cells);
    // per pair, a shuffled deck with equal numbers of each side order
    let per_pair = SourceClass::ALL.len() * Stimulus::ALL.len() * config.per_cell;
    let mut decks: BTreeMap<(usize, usize), Vec<bool>> = BTreeMap::new();
    for cell in &cells {
        decks.entry(cell.pair).or_insert_with(|| {
            let mut deck: Vec<bool> = (0..per_pair).map(|k| k < per_pair / 2).collect();
            rng.shuffle(&mut deck);
            deck
        });
    }
    let comparisons = cells
        .into_iter()
        .enumerate()
        .map(|(k, cell)| {
            let (i, j) = cell.pair;
            let keep = decks.get_mut(&cell.pair).and_then(Vec::pop).expect("one side per comparison");
            let (a, b) = if keep { (i, j) } else { (j, i) };
            PlannedComparison {
                model_a: models[a].clone(),
                model_b: models[b].clone(),
                class: cell.class,
                stimulus: cell.stimulus,
                segment: k % config.segments,
                cell,
            }
        })
        .collect();
    Ok(SchedulePlan { assessor, comparisons })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub count: usize,
    pub segment_seconds: f64,
    pub min_gap_seconds: f64,
    /// Spacing of candidate start positions.
    pub hop_seconds: f64,
}

impl Default for SegmentConfig {
    /// Four 7 s segments (about three bars at 103 bpm).
    fn default() -> Self {
        Self { count: 4, segment_seconds: 7.0, min_gap_seconds: 1.0, hop_seconds: 0.5 }
    }
}

fn seconds_to_samples(s: f64) -> usize {
    (s * SAMPLE_RATE as f64).round() as usize
}

/// Picks the `count` loudest non-overlapping windows (by energy over both
/// channels), greedily, with at least `min_gap` between windows. Among
/// candidates within 1e-9 (relative) of the loudest, the earliest wins.
/// Returned sorted by start, as `(start, end)` sample ranges.
pub fn select_segments(song: &AudioBuffer, config: &SegmentConfig) -> Result<Vec<(usize, usize)>, RatingError> {
    let seg = seconds_to_samples(config.segment_seconds);
    let gap = seconds_to_samples(config.min_gap_seconds);
    let hop = seconds_to_samples(config.hop_seconds).max(1);
    select_segments_samples(song, config.count, seg, gap, hop)
}

/// [`select_segments`] with all lengths in samples.
pub fn select_segments_samples(
    song: &AudioBuffer,
    count: usize,
    segment_len: usize,
    min_gap: usize,
    hop: usize,
) -> Result<Vec<(usize, usize)>, RatingError> {
    let len = song.len();
    let needed = count * segment_len;
    if segment_len == 0 || hop == 0 || len < needed || len < segment_len {
        return Err(RatingError::SongTooShort { needed: needed.max(segment_len), found: len });
    }
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for n in 0..len {
        acc += song.left()[n] * song.left()[n] + song.right()[n] * song.right()[n];
        prefix.push(acc);
    }
    let starts: Vec<usize> = (0..=(len - segment_len)).step_by(hop).collect();
    let energy: Vec<f64> = starts.iter().map(|&s| prefix[s + segment_len] - prefix[s]).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let spacing = segment_len + min_gap;
    for _ in 0..count {
        let admissible = |s: usize| chosen.iter().all(|&c: &usize| s.abs_diff(c) >= spacing);
        let best = starts
            .iter()
            .zip(&energy)
            .filter(|(s, _)| admissible(**s))
            .map(|(_, e)| *e)
            .fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return Err(RatingError::SongTooShort { needed: count * spacing - min_gap, found: len });
        }
        let tol = best.abs() * 1e-9;
        let pick = starts
            .iter()
            .zip(&energy)
            .find(|(s, e)| admissible(**s) && **e >= best - tol)
            .map(|(s, _)| *s)
            .expect("the maximum is admissible");
        chosen.push(pick);
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|s| (s, s + segment_len)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

/// Pairwise win counts: `wins[i][j]` is how often model `i` beat model `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinMatrix {
    pub models: Vec<String>,
    pub wins: Vec<Vec<u32>>,
}

impl WinMatrix {
    pub fn from_records<'a>(models: &[String], records: impl IntoIterator<Item = &'a ComparisonRecord>) -> Self {
        let index: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
        let mut wins = vec![vec![0u32; models.len()]; models.len()];
        for r in records {
            if let (Some(&w), Some(&l)) = (index.get(r.winner()), index.get(r.loser())) {
                wins[w][l] += 1;
            }
        }
        Self { models: models.to_vec(), wins }
    }

    /// Each row divided by its total; rows without wins stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.wins
            .iter()
            .map(|row| {
                let total: u32 = row.iter().sum();
                row.iter().map(|&w| if total == 0 { 0.0 } else { f64::from(w) / f64::from(total) }).collect()
            })
            .collect()
    }

    /// Each entry divided by the number of matches between that pair.
    pub fn pair_normalized(&self) -> Vec<Vec<f64>> {
        let n = self.models.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let total = self.wins[i][j] + self.wins[j][i];
                        if total == 0 {
                            0.0
                        } else {
                            f64::from(self.wins[i][j]) / f64::from(total)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub comparisons: usize,
    pub elapsed: MeanStd,
    pub switches: MeanStd,
    pub wins: WinMatrix,
    pub row_normalized: Vec<Vec<f64>>,
    pub pair_normalized: Vec<Vec<f64>>,
}

impl GroupStats {
    fn of(models: &[String], records: &[&ComparisonRecord]) -> Option<Self> {
        let elapsed: Vec<f64> = records.iter().map(|r| r.elapsed_seconds).collect();
        let switches: Vec<f64> = records.iter().map(|r| f64::from(r.switch_count)).collect();
        let wins = WinMatrix::from_records(models, records.iter().copied());
        Some(Self {
            comparisons: records.len(),
            elapsed: MeanStd::of(&elapsed)?,
            switches: MeanStd::of(&switches)?,
            row_normalized: wins.row_normalized(),
            pair_normalized: wins.pair_normalized(),
            wins,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessorStats {
    pub overall: GroupStats,
    /// Keyed by assessor category; assessors without one fall under
    /// "unknown".
    pub by_category: BTreeMap<String, GroupStats>,
}

/// Time, switch and win statistics over a comparison log. Models are listed
/// in name order.
pub fn assessor_stats(
    records: &[ComparisonRecord],
    categories: &BTreeMap<String, String>,
) -> Result<AssessorStats, RatingError> {
    if records.is_empty() {
        return Err(RatingError::EmptyInput);
    }
    let mut models: Vec<String> = records.iter().flat_map(|r| [r.model_a.clone(), r.model_b.clone()]).collect();
    models.sort();
    models.dedup();
    let all: Vec<&ComparisonRecord> = records.iter().collect();
    let mut grouped: BTreeMap<String, Vec<&ComparisonRecord>> = BTreeMap::new();
    for r in records {
        let cat = categories.get(&r.assessor).cloned().unwrap_or_else(|| "unknown".into());
        grouped.entry(cat).or_default().push(r);
    }
    let overall = GroupStats::of(&models, &all).ok_or(RatingError::EmptyInput)?;
    let by_category =
        grouped.into_iter().filter_map(|(cat, recs)| GroupStats::of(&models, &recs).map(|s| (cat, s))).collect();
    Ok(AssessorStats { overall, by_category })
}

/// One point of the SDR-versus-preference comparison: all judgments for a
/// model pair on one song, class and stimulus type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementPoint {
    /// The model with the higher SDR.
    pub higher: String,
    pub lower: String,
    pub song_id: String,
    pub class: SourceClass,
    pub stimulus: Stimulus,
    /// Non-negative SDR difference in dB.
    pub sdr_gap: f64,
    /// Fraction of judgments that picked the higher-SDR model.
    pub agreement: f64,
    pub judgments: usize,
}

/// Groups judgments by (pair, song, class, stimulus) and compares them with
/// per-song SDR, looked up as `sdr[(model, song)]`. Groups with a missing or
/// non-finite score, or with equal scores, are left out.
pub fn sdr_agreement(
    records: &[ComparisonRecord],
    sdr: &BTreeMap<(String, String), crate::evaluator::SdrReport>,
) -> Vec<AgreementPoint> {
    type Key = (String, String, String, SourceClass, Stimulus);
    let mut groups: BTreeMap<Key, (usize, usize)> = BTreeMap::new();
    for r in records {
        let score = |m: &str| {
            sdr.get(&(m.into(), r.song_id.clone())).and_then(|rep| rep.get(r.class)).filter(|v| v.is_finite())
        };
        let (Some(a), Some(b)) = (score(&r.model_a), score(&r.model_b)) else { continue };
        if a == b {
            continue;
        }
        let (hi, lo) = if a > b { (&r.model_a, &r.model_b) } else { (&r.model_b, &r.model_a) };
        let entry = groups.entry((hi.clone(), lo.clone(), r.song_id.clone(), r.class, r.stimulus)).or_default();
        entry.1 += 1;
        if r.winner() == hi.as_str() {
            entry.0 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((higher, lower, song_id, class, stimulus), (agree, n))| {
            let gap = sdr[&(higher.clone(), song_id.clone())].get(class).unwrap_or(0.0)
                - sdr[&(lower.clone(), song_id.clone())].get(class).unwrap_or(0.0);
            AgreementPoint {
                higher,
                lower,
                song_id,
                class,
                stimulus,
                sdr_gap: gap,
                agreement: agree as f64 / n as f64,
                judgments: n,
            }
        })
        .collect()
}
