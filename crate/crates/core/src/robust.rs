//! Robust-training baselines: dataset refinement, loss truncation, energy
//! cleaning and a small trainable mask model.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{istft, stft, AudioBuffer, AudioError, FrameSpec};
use crate::dataset::{RawSong, RawStem, Song, SourceClass, Stems};
use crate::rng::Rng;
use crate::separation::{check_outputs, OracleIrm, SeparationError, Separator};

/// Margin reported when competing estimates are silent.
pub const MARGIN_SATURATION_DB: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid truncation policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("non-finite loss value")]
    NonFiniteLoss,
    #[error("invalid training setup: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Looks up the separator to use for a given song.
///
/// Every [`Separator`] serves all songs; [`OracleBank`] holds one oracle per
/// song.
pub trait SongSeparators: Send + Sync {
    fn for_song(&self, song_id: &str) -> Result<&dyn Separator, SeparationError>;
}

impl<S: Separator> SongSeparators for S {
    fn for_song(&self, _song_id: &str) -> Result<&dyn Separator, SeparationError> {
        Ok(self)
    }
}

/// Oracle IRM separators keyed by song id.
#[derive(Debug, Clone, Default)]
pub struct OracleBank {
    by_song: BTreeMap<String, OracleIrm>,
}

impl OracleBank {
    pub fn from_clean(songs: &[Song]) -> Result<Self, SeparationError> {
        let mut by_song = BTreeMap::new();
        for s in songs {
            by_song.insert(s.id.clone(), OracleIrm::new(s.stems.clone())?);
        }
        Ok(Self { by_song })
    }

    pub fn with_frames(songs: &[Song], frames: FrameSpec) -> Result<Self, SeparationError> {
        let mut by_song = BTreeMap::new();
        for s in songs {
            by_song.insert(s.id.clone(), OracleIrm::with_frames(s.stems.clone(), frames)?);
        }
        Ok(Self { by_song })
    }
}

impl SongSeparators for OracleBank {
    fn for_song(&self, song_id: &str) -> Result<&dyn Separator, SeparationError> {
        self.by_song
            .get(song_id)
            .map(|s| s as &dyn Separator)
            .ok_or_else(|| SeparationError::UnknownSong(song_id.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMethod {
    /// Each new stem is the separator's matching estimate of the old stem.
    Filtered,
    /// Each new stem collects its class estimate from every old stem.
    Redistributed,
}

/// Refines one song. The refined song carries no stored mixture.
pub fn refine_song<B: SongSeparators + ?Sized>(
    bank: &B,
    song: &Song,
    method: RefineMethod,
) -> Result<Song, SeparationError> {
    let sep = bank.for_song(&song.id)?;
    let len = song.stems.len();
    let mut out = Stems::silence(len);
    for (class, stem) in song.stems.iter() {
        let est = sep.separate(stem)?;
        check_outputs(&est, len)?;
        match method {
            RefineMethod::Filtered => out[class] = est[class].clone(),
            RefineMethod::Redistributed => {
                for target in SourceClass::ALL {
                    out[target].add_assign(&est[target])?;
                }
            }
        }
    }
    Ok(Song::new(song.id.clone(), out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub songs: Vec<Song>,
    /// Songs left out because their separation failed.
    pub failures: Vec<(String, SeparationError)>,
}

/// Refines every song; failing songs are dropped and reported.
pub fn refine<B: SongSeparators + ?Sized>(bank: &B, songs: &[Song], method: RefineMethod) -> RefineOutcome {
    let mut out = RefineOutcome { songs: Vec::with_capacity(songs.len()), failures: Vec::new() };
    for song in songs {
        match refine_song(bank, song, method) {
            Ok(s) => out.songs.push(s),
            Err(e) => out.failures.push((song.id.clone(), e)),
        }
    }
    out
}

pub fn refine_filtered<B: SongSeparators + ?Sized>(bank: &B, songs: &[Song]) -> RefineOutcome {
    refine(bank, songs, RefineMethod::Filtered)
}

pub fn refine_redistributed<B: SongSeparators + ?Sized>(bank: &B, songs: &[Song]) -> RefineOutcome {
    refine(bank, songs, RefineMethod::Redistributed)
}

/// What a trainer hands back at each refinement iteration.
pub struct Trained {
    pub separator: Box<dyn SongSeparators>,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub songs: usize,
    pub failed: Vec<String>,
    /// Loss of the model trained on this iteration's dataset, when the
    /// trainer reports one.
    pub validation_loss: Option<f64>,
}

impl core::fmt::Debug for Trained {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Trained").field("validation_loss", &self.validation_loss).finish_non_exhaustive()
    }
}

pub struct RefinementState {
    pub iteration: usize,
    pub dataset: Vec<Song>,
    /// The model trained on the previous dataset.
    pub model: Option<Box<dyn SongSeparators>>,
    pub history: Vec<IterationRecord>,
}

impl core::fmt::Debug for RefinementState {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RefinementState")
            .field("iteration", &self.iteration)
            .field("dataset", &self.dataset.len())
            .field("history", &self.history)
            .finish_non_exhaustive()
    }
}

/// Alternates training and refinement `iterations` times, starting from the
/// corrupted dataset. Each iteration trains a fresh model.
pub fn iterate_refinement(
    train: &mut dyn FnMut(&[Song], usize) -> Result<Trained, RobustError>,
    dataset: Vec<Song>,
    iterations: usize,
    method: RefineMethod,
) -> Result<RefinementState, RobustError> {
    if iterations == 0 {
        return Err(RobustError::InvalidConfig("need at least one iteration"));
    }
    let mut state = RefinementState { iteration: 0, dataset, model: None, history: Vec::new() };
    while state.iteration < iterations {
        let trained = train(&state.dataset, state.iteration)?;
        let outcome = refine(trained.separator.as_ref(), &state.dataset, method);
        state.history.push(IterationRecord {
            iteration: state.iteration,
            songs: state.dataset.len(),
            failed: outcome.failures.into_iter().map(|(id, _)| id).collect(),
            validation_loss: trained.validation_loss,
        });
        state.dataset = outcome.songs;
        state.model = Some(trained.separator);
        state.iteration += 1;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationAxis {
    Batch,
    Time,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub quantile: f64,
    pub axis: TruncationAxis,
    /// Steps trained on every loss before truncation starts.
    #[serde(default)]
    pub warmup_steps: usize,
}

impl TruncationPolicy {
    pub fn new(quantile: f64, axis: TruncationAxis) -> Self {
        Self { quantile, axis, warmup_steps: 0 }
    }

    pub fn validate(&self) -> Result<(), RobustError> {
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(RobustError::InvalidPolicy("quantile must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Nearest-rank quantile: the `ceil(q * n)`-th smallest value.
///
/// A tolerance of 1e-9 on the rank keeps products such as `0.7 * 10` from
/// rounding up to the next rank.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Result<f64, RobustError> {
    if values.is_empty() {
        return Err(RobustError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RobustError::NonFiniteLoss);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

fn keep_below(values: &[f64], q: f64) -> Result<Vec<bool>, RobustError> {
    let threshold = nearest_rank_quantile(values, q)?;
    Ok(values.iter().map(|v| *v <= threshold).collect())
}

/// Loss values indexed by sample, then frame. Samples may differ in length.
pub type LossTensor = Vec<Vec<f64>>;

/// Which loss entries survive truncation, shaped like the input.
pub type KeepMask = Vec<Vec<bool>>;

/// Masks out losses above the policy quantile; ties at the threshold stay.
///
/// The batch axis ranks samples by their mean frame loss and drops whole
/// samples. The time axis ranks frames within each sample. `Both` applies
/// the batch mask first, then the time mask inside surviving samples.
pub fn truncate_losses(losses: &[Vec<f64>], policy: &TruncationPolicy) -> Result<KeepMask, RobustError> {
    policy.validate()?;
    if losses.is_empty() || losses.iter().any(|s| s.is_empty()) {
        return Err(RobustError::EmptyInput);
    }
    let mut keep: KeepMask = losses.iter().map(|s| vec![true; s.len()]).collect();
    if matches!(policy.axis, TruncationAxis::Batch | TruncationAxis::Both) {
        let means: Vec<f64> = losses.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
        for (row, k) in keep.iter_mut().zip(keep_below(&means, policy.quantile)?) {
            if !k {
                row.iter_mut().for_each(|x| *x = false);
            }
        }
    }
    if matches!(policy.axis, TruncationAxis::Time | TruncationAxis::Both) {
        for (row, sample) in keep.iter_mut().zip(losses) {
            if row[0] || policy.axis == TruncationAxis::Time {
                *row = keep_below(sample, policy.quantile)?;
            }
        }
    }
    Ok(keep)
}

/// As [`truncate_losses`], keeping everything during warmup.
pub fn truncate_losses_at(
    losses: &[Vec<f64>],
    policy: &TruncationPolicy,
    step: usize,
) -> Result<KeepMask, RobustError> {
    if step < policy.warmup_steps {
        policy.validate()?;
        if losses.is_empty() || losses.iter().any(|s| s.is_empty()) {
            return Err(RobustError::EmptyInput);
        }
        return Ok(losses.iter().map(|s| vec![true; s.len()]).collect());
    }
    truncate_losses(losses, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemDecision {
    pub song_id: String,
    pub class: SourceClass,
    pub clean: bool,
    /// Energy of the matching estimate over each other estimate, in dB,
    /// clamped to +-100.
    pub margins: BTreeMap<SourceClass, f64>,
}

fn energy_margin(own: f64, other: f64) -> f64 {
    if other == 0.0 {
        return MARGIN_SATURATION_DB;
    }
    if own == 0.0 {
        return -MARGIN_SATURATION_DB;
    }
    (10.0 * (own / other).log10()).clamp(-MARGIN_SATURATION_DB, MARGIN_SATURATION_DB)
}

/// Decides whether one stem is clean by separating it as a mixture.
pub fn energy_clean_stem(
    sep: &dyn Separator,
    song_id: &str,
    class: SourceClass,
    stem: &AudioBuffer,
    threshold_db: f64,
) -> Result<StemDecision, SeparationError> {
    let est = sep.separate(stem)?;
    check_outputs(&est, stem.len())?;
    let own = est[class].energy();
    let margins: BTreeMap<SourceClass, f64> = SourceClass::ALL
        .into_iter()
        .filter(|c| *c != class)
        .map(|c| (c, energy_margin(own, est[c].energy())))
        .collect();
    Ok(StemDecision { song_id: song_id.into(), class, clean: margins.values().all(|m| *m >= threshold_db), margins })
}

/// Energy-based stem cleaning over a dataset, in song then class order.
pub fn energy_clean<B: SongSeparators + ?Sized>(
    bank: &B,
    songs: &[Song],
    threshold_db: f64,
) -> Result<Vec<StemDecision>, SeparationError> {
    let mut out = Vec::with_capacity(songs.len() * 4);
    for song in songs {
        let sep = bank.for_song(&song.id)?;
        for (class, stem) in song.stems.iter() {
            out.push(energy_clean_stem(sep, &song.id, class, stem, threshold_db)?);
        }
    }
    Ok(out)
}

/// Per-source spectral masks applied to every frame of the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMaskModel {
    pub masks: [Vec<f64>; 4],
    pub frames: FrameSpec,
    pub learning_rate: f64,
    pub seed: u64,
}

impl ToyMaskModel {
    /// Masks drawn uniformly from [0.4, 0.6].
    pub fn initial(frames: FrameSpec, learning_rate: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let bins = frames.bins();
        let masks = core::array::from_fn(|_| (0..bins).map(|_| rng.uniform(0.4, 0.6)).collect());
        Self { masks, frames, learning_rate, seed }
    }

    pub fn bins(&self) -> usize {
        self.masks[0].len()
    }
}

impl Separator for ToyMaskModel {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        let spec = stft(mixture, &self.frames)?;
        let frames = spec.frames();
        let out = Stems::try_from_fn(|class| {
            let m = &self.masks[class.index()];
            let full: Vec<f64> = (0..frames).flat_map(|_| m.iter().copied()).collect();
            istft(&spec.masked(&[full.clone(), full]))
        })?;
        Ok(out)
    }
}

/// Magnitude spectra of one song, channels stacked as extra frames and
/// scaled to unit mean mixture magnitude.
#[derive(Debug, Clone)]
pub struct ToyExample {
    rows: usize,
    bins: usize,
    mixture: Vec<f64>,
    targets: [Vec<f64>; 4],
}

impl ToyExample {
    pub fn from_song(song: &Song, frames: &FrameSpec) -> Result<Self, AudioError> {
        let magnitudes = |b: &AudioBuffer| -> Result<Vec<f64>, AudioError> {
            let s = stft(b, frames)?;
            Ok([0, 1].iter().flat_map(|&ch| s.channel(ch).iter().map(|z| z.norm())).collect())
        };
        let mut mixture = magnitudes(&song.mixture())?;
        let [b, d, o, v] = song.stems.buffers();
        let mut targets = [magnitudes(b)?, magnitudes(d)?, magnitudes(o)?, magnitudes(v)?];
        // loudness normalization, so losses compare across songs
        let level = mixture.iter().sum::<f64>() / mixture.len().max(1) as f64;
        if level > 0.0 {
            for x in mixture.iter_mut().chain(targets.iter_mut().flatten()) {
                *x /= level;
            }
        }
        let bins = frames.bins();
        Ok(Self { rows: mixture.len() / bins, bins, mixture, targets })
    }

    /// Per-frame losses of `model` for one class.
    pub fn frame_losses(&self, model: &ToyMaskModel, class: SourceClass, loss: ToyLoss) -> Vec<f64> {
        self.row_losses(&model.masks[class.index()], class.index(), loss)
    }

    fn row_losses(&self, mask: &[f64], class: usize, loss: ToyLoss) -> Vec<f64> {
        let target = &self.targets[class];
        (0..self.rows)
            .map(|r| {
                let span = r * self.bins..(r + 1) * self.bins;
                let s: f64 = mask
                    .iter()
                    .zip(&self.mixture[span.clone()])
                    .zip(&target[span])
                    .map(|((m, x), t)| loss.eval(m * x - t))
                    .sum();
                s / self.bins as f64
            })
            .collect()
    }
}

/// Per-bin magnitude error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyLoss {
    #[default]
    L1,
    L2,
}

impl ToyLoss {
    fn eval(self, d: f64) -> f64 {
        match self {
            ToyLoss::L1 => d.abs(),
            ToyLoss::L2 => d * d,
        }
    }
}

/// Mean magnitude error over every source, frame and bin.
pub fn toy_loss(model: &ToyMaskModel, examples: &[ToyExample], loss: ToyLoss) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        for c in 0..4 {
            total += ex.row_losses(&model.masks[c], c, loss).iter().sum::<f64>();
            count += ex.rows;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / (count * 4) as f64 * 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Steps over which the learning rate halves (1 / (1 + t / decay)).
    pub lr_decay_steps: f64,
    pub frames: FrameSpec,
    /// Validation loss is recorded every this many steps.
    pub eval_every: usize,
    pub truncation: Option<TruncationPolicy>,
    #[serde(default)]
    pub loss: ToyLoss,
    pub seed: u64,
}

impl ToyTrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size: 8,
            learning_rate: 0.05,
            lr_decay_steps: 100.0,
            frames: FrameSpec::hann(TOY_FRAME_LEN, TOY_FRAME_LEN / 2),
            eval_every: 25,
            truncation: None,
            loss: ToyLoss::L1,
            seed,
        }
    }

    pub fn with_truncation(mut self, policy: TruncationPolicy) -> Self {
        self.truncation = Some(policy);
        self
    }
}

/// Upper bound on training steps.
pub const MAX_TOY_STEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainOutput {
    pub model: ToyMaskModel,
    /// (step, mean batch loss over the preceding interval)
    pub train_loss: Vec<(usize, f64)>,
    /// (step, loss on the validation songs)
    pub validation_loss: Vec<(usize, f64)>,
}

impl ToyTrainOutput {
    pub fn final_validation_loss(&self) -> Option<f64> {
        self.validation_loss.last().map(|(_, l)| *l)
    }
}

/// Fits per-source masks by projected gradient descent on the magnitude
/// loss, optionally truncating the per-(sample, source) and per-frame losses
/// before each step.
///
/// Each bin's step is normalized by the batch's mixture magnitude in that
/// bin (L1) or its square (L2), so the learning rate is scale-free.
pub fn train_toy_mask_model(
    train: &[Song],
    validation: &[Song],
    config: &ToyTrainConfig,
) -> Result<ToyTrainOutput, RobustError> {
    if config.steps > MAX_TOY_STEPS {
        return Err(RobustError::InvalidConfig("too many steps"));
    }
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(RobustError::InvalidConfig("batch size and eval interval must be positive"));
    }
    if let Some(p) = &config.truncation {
        p.validate()?;
    }
    config.frames.validate()?;
    if train.is_empty() {
        return Err(RobustError::EmptyInput);
    }
    let examples = train.iter().map(|s| ToyExample::from_song(s, &config.frames)).collect::<Result<Vec<_>, _>>()?;
    let held_out =
        validation.iter().map(|s| ToyExample::from_song(s, &config.frames)).collect::<Result<Vec<_>, _>>()?;
    if examples.iter().any(|e| e.rows == 0) {
        return Err(RobustError::EmptyInput);
    }

    let mut model = ToyMaskModel::initial(config.frames, config.learning_rate, config.seed);
    let mut rng = Rng::substream(config.seed, 1);
    let bins = model.bins();
    let mut out = ToyTrainOutput { model: model.clone(), train_loss: Vec::new(), validation_loss: Vec::new() };
    if !held_out.is_empty() {
        out.validation_loss.push((0, toy_loss(&model, &held_out, config.loss)));
    }
    let mut interval_loss = 0.0;
    let mut interval_steps = 0usize;

    for step in 0..config.steps {
        let batch: Vec<&ToyExample> = (0..config.batch_size).map(|_| &examples[rng.index(examples.len())]).collect();
        let lr = config.learning_rate / (1.0 + step as f64 / config.lr_decay_steps);
        let mut step_loss = 0.0;
        let mut step_count = 0usize;
        for c in 0..4 {
            let losses: LossTensor = batch.iter().map(|ex| ex.row_losses(&model.masks[c], c, config.loss)).collect();
            for l in &losses {
                step_loss += l.iter().sum::<f64>();
                step_count += l.len();
            }
            if !step_loss.is_finite() {
                return Err(RobustError::Diverged { step });
            }
            let keep = match &config.truncation {
                Some(p) => truncate_losses_at(&losses, p, step)?,
                None => losses.iter().map(|l| vec![true; l.len()]).collect(),
            };
            let mask = &model.masks[c];
            let mut num = vec![0.0; bins];
            let mut den = vec![0.0; bins];
            for (ex, kept) in batch.iter().zip(&keep) {
                for (r, _) in kept.iter().enumerate().filter(|(_, k)| **k) {
                    let span = r * bins..(r + 1) * bins;
                    let x = &ex.mixture[span.clone()];
                    let t = &ex.targets[c][span];
                    for f in 0..bins {
                        let d = mask[f] * x[f] - t[f];
                        match config.loss {
                            ToyLoss::L1 => {
                                num[f] += x[f] * d.signum() * f64::from(u8::from(d != 0.0));
                                den[f] += x[f];
                            }
                            ToyLoss::L2 => {
                                num[f] += x[f] * d;
                                den[f] += x[f] * x[f];
                            }
                        }
                    }
                }
            }
            let mask = &mut model.masks[c];
            for f in 0..bins {
                if den[f] > 0.0 {
                    mask[f] = (mask[f] - lr * num[f] / den[f]).clamp(0.0, 1.0);
                }
            }
        }
        interval_loss += step_loss / step_count as f64;
        interval_steps += 1;
        if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
            out.train_loss.push((step + 1, interval_loss / interval_steps as f64));
            interval_loss = 0.0;
            interval_steps = 0;
            if !held_out.is_empty() {
                let v = toy_loss(&model, &held_out, config.loss);
                if !v.is_finite() {
                    return Err(RobustError::Diverged { step });
                }
                out.validation_loss.push((step + 1, v));
            }
        }
    }
    out.model = model;
    Ok(out)
}

/// Labels used by [`toy_raw_songs`].
pub const TOY_LABELS: [&str; 4] = ["bass", "drums", "other", "vocals"];

/// Label confusion for the toy songs: a relabeled stem moves to any of the
/// other three labels with equal probability.
pub fn toy_confusion() -> crate::corruptor::ConfusionMatrix {
    let rows = (0..4).map(|i| (0..4).map(|j| if i == j { 0.0 } else { 1.0 / 3.0 }).collect()).collect();
    crate::corruptor::ConfusionMatrix::new(TOY_LABELS.iter().map(|s| String::from(*s)).collect(), rows)
        .expect("toy confusion rows are stochastic")
}

/// Frame length the toy songs are tuned to; their partials sit on its bins.
pub const TOY_FRAME_LEN: usize = 256;

/// Bin ranges (inclusive) occupied by each class in the toy songs.
/// Neighbouring classes share a few bins.
pub const TOY_BANDS: [(usize, usize); 4] = [(1, 6), (25, 64), (10, 35), (4, 20)];

/// Synthetic four-instrument songs: stationary partials on the bins of a
/// [`TOY_FRAME_LEN`]-point frame, one band per class, with random per-song
/// gains and phases.
pub fn toy_raw_songs(count: usize, len: usize, seed: u64) -> Result<Vec<RawSong>, AudioError> {
    let bin_hz = crate::audio::SAMPLE_RATE as f64 / TOY_FRAME_LEN as f64;
    let mut songs = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = Rng::substream(seed, i as u64);
        let mut stems = Vec::with_capacity(4);
        for (label, &(lo, hi)) in TOY_LABELS.iter().zip(&TOY_BANDS) {
            let gain = rng.uniform(0.3, 1.0);
            let partials: Vec<(f64, [f64; 2])> = (lo..=hi)
                .map(|k| {
                    let w = core::f64::consts::TAU * k as f64 * bin_hz / crate::audio::SAMPLE_RATE as f64;
                    (w, [rng.uniform(0.0, core::f64::consts::TAU), rng.uniform(0.0, core::f64::consts::TAU)])
                })
                .collect();
            let scale = gain / (partials.len() as f64).sqrt();
            let audio = AudioBuffer::from_fn(len, |ch, n| {
                scale * partials.iter().map(|(w, ph)| (w * n as f64 + ph[ch]).sin()).sum::<f64>()
            });
            stems.push(RawStem::new(*label, audio));
        }
        songs.push(RawSong { id: alloc::format!("toy{i:03}"), stems });
    }
    Ok(songs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruptor::{corrupt_label_noise, LabelNoiseConfig};
    use crate::dataset::Taxonomy;
    use crate::evaluator::sdr_source;
    use crate::separation::passthrough;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = Rng::new(seed);
        AudioBuffer::from_fn(len, |_, _| rng.uniform(-0.5, 0.5))
    }

    fn clean_song(id: &str, len: usize, seed: u64) -> Song {
        Song::new(id, Stems::try_from_fn(|c| Ok(noise(len, seed * 10 + c.index() as u64))).unwrap())
    }

    #[test]
    fn filtered_on_clean_is_identity() {
        let songs = vec![clean_song("a", 6000, 1), clean_song("b", 6000, 2)];
        let bank = OracleBank::from_clean(&songs).unwrap();
        let out = refine_filtered(&bank, &songs);
        assert!(out.failures.is_empty());
        for (a, b) in out.songs.iter().zip(&songs) {
            for c in SourceClass::ALL {
                // each stem passes only its own mask
                let own = a.stems[c].energy();
                assert!(own <= b.stems[c].energy() + 1e-6);
            }
        }
    }

    #[test]
    fn filtered_with_passthrough() {
        let songs = vec![clean_song("a", 500, 3)];
        let out = refine_filtered(&passthrough(SourceClass::Vocals), &songs);
        let s = &out.songs[0];
        assert_eq!(s.stems[SourceClass::Vocals], songs[0].stems[SourceClass::Vocals]);
        for c in [SourceClass::Bass, SourceClass::Drums, SourceClass::Other] {
            assert!(s.stems[c].is_silent());
        }
    }

    #[test]
    fn redistributed_conserves_sums() {
        let songs = vec![clean_song("a", 5000, 4)];
        let bank = OracleBank::from_clean(&songs).unwrap();
        let out = refine_redistributed(&bank, &songs);
        let diff = out.songs[0].stems.mixture().max_abs_diff(&songs[0].stems.mixture()).unwrap();
        assert!(diff <= 1e-6);
        let silent = vec![Song::new("z", Stems::silence(3000))];
        let out = refine_redistributed(&OracleBank::from_clean(&silent).unwrap(), &silent);
        assert!(out.songs[0].stems.mixture().is_silent());
    }

    fn swapped(clean: &Song) -> Song {
        // whole vocals stem mislabeled as other
        let mut stems = clean.stems.clone();
        stems[SourceClass::Other] = stems[SourceClass::Other].add(&stems[SourceClass::Vocals]).unwrap();
        stems[SourceClass::Vocals] = AudioBuffer::silence(stems.len());
        Song::new(clean.id.clone(), stems)
    }

    fn band_song(id: &str, len: usize) -> Song {
        use crate::audio::{apply_filter, design_filter, FilterSpec};
        let bands = [(40.0, 100.0), (6000.0, 12000.0), (1500.0, 3000.0), (400.0, 800.0)];
        let stems = Stems::try_from_fn(|c| {
            let (lo, hi) = bands[c.index()];
            let f = design_filter(&FilterSpec::bandpass(8, lo, hi)).unwrap();
            let band = apply_filter(&noise(len, 40 + c.index() as u64), &f);
            let rms = (band.energy() / (2 * len) as f64).sqrt();
            Ok(band.scaled(0.1 / rms))
        })
        .unwrap();
        Song::new(id, stems)
    }

    #[test]
    fn redistributed_recovers_swapped_stem() {
        let clean = band_song("s", 44100);
        let bank = OracleBank::from_clean(core::slice::from_ref(&clean)).unwrap();
        let out = refine_redistributed(&bank, &[swapped(&clean)]);
        for c in SourceClass::ALL {
            let s = sdr_source(&clean.stems[c], &out.songs[0].stems[c]).unwrap();
            assert!(s >= 40.0, "{c} {s}");
        }
    }

    #[test]
    fn filtered_removes_misplaced_content() {
        let clean = band_song("s", 44100);
        let bank = OracleBank::from_clean(core::slice::from_ref(&clean)).unwrap();
        let out = refine_filtered(&bank, &[swapped(&clean)]);
        let other = &out.songs[0].stems[SourceClass::Other];
        let misplaced = other.sub(&clean.stems[SourceClass::Other]).unwrap().energy();
        let injected = clean.stems[SourceClass::Vocals].energy();
        assert!(10.0 * (injected / misplaced).log10() >= 20.0);
        assert!(out.songs[0].stems[SourceClass::Vocals].is_silent());
    }

    #[test]
    fn refine_reports_failures() {
        let songs = vec![clean_song("known", 400, 5), clean_song("unknown", 400, 6)];
        let bank = OracleBank::from_clean(&songs[..1]).unwrap();
        let out = refine_filtered(&bank, &songs);
        assert_eq!(out.songs.len(), 1);
        assert_eq!(out.failures[0].0, "unknown");
    }

    #[test]
    fn one_iteration_equals_one_refine() {
        let clean = band_song("s", 8000);
        let noisy = vec![swapped(&clean)];
        let bank = OracleBank::from_clean(core::slice::from_ref(&clean)).unwrap();
        let mut train = |_: &[Song], _: usize| {
            Ok(Trained { separator: Box::new(bank.clone()) as Box<dyn SongSeparators>, validation_loss: None })
        };
        let state = iterate_refinement(&mut train, noisy.clone(), 1, RefineMethod::Redistributed).unwrap();
        assert_eq!(state.dataset, refine_redistributed(&bank, &noisy).songs);
        assert_eq!(state.iteration, 1);
        assert_eq!(state.history.len(), 1);
        let state = iterate_refinement(&mut train, noisy, 2, RefineMethod::Filtered).unwrap();
        assert_eq!(state.history.len(), 2);
    }

    #[test]
    fn truncation_examples() {
        let p = TruncationPolicy::new(0.75, TruncationAxis::Batch);
        let keep = truncate_losses(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]], &p).unwrap();
        assert_eq!(keep, vec![vec![true], vec![true], vec![true], vec![false]]);
        let all = truncate_losses(&[vec![1.0, 9.0], vec![3.0, 2.0]], &TruncationPolicy::new(1.0, TruncationAxis::Both))
            .unwrap();
        assert!(all.iter().flatten().all(|k| *k));
        let t = TruncationPolicy::new(0.75, TruncationAxis::Time);
        let keep = truncate_losses(&[vec![1.0, 1.1, 9.0, 1.2], vec![5.0, 0.1, 0.2, 0.3]], &t).unwrap();
        assert_eq!(keep, vec![vec![true, true, false, true], vec![false, true, true, true]]);
        let ties = truncate_losses(
            &[vec![1.0], vec![2.0], vec![2.0], vec![3.0]],
            &TruncationPolicy::new(0.5, TruncationAxis::Batch),
        )
        .unwrap();
        assert_eq!(ties, vec![vec![true], vec![true], vec![true], vec![false]]);
        assert_eq!(truncate_losses(&[], &p), Err(RobustError::EmptyInput));
        assert!(truncate_losses(&[vec![1.0]], &TruncationPolicy::new(0.0, TruncationAxis::Batch)).is_err());
    }

    #[test]
    fn truncation_both_axes_and_warmup() {
        let p = TruncationPolicy { quantile: 0.5, axis: TruncationAxis::Both, warmup_steps: 3 };
        let losses = vec![vec![1.0, 2.0], vec![10.0, 20.0]];
        assert_eq!(truncate_losses_at(&losses, &p, 2).unwrap(), vec![vec![true; 2]; 2]);
        assert_eq!(truncate_losses_at(&losses, &p, 3).unwrap(), vec![vec![true, false], vec![false, false]]);
    }

    #[test]
    fn quantile_rank_is_not_rounded_up() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank_quantile(&v, 0.7).unwrap(), 7.0);
        assert_eq!(nearest_rank_quantile(&v, 0.71).unwrap(), 8.0);
    }

    #[test]
    fn energy_clean_cases() {
        let clean = band_song("s", 20000);
        let bank = OracleBank::from_clean(core::slice::from_ref(&clean)).unwrap();
        let mut probe = clean.clone();
        probe.stems[SourceClass::Bass] = AudioBuffer::silence(20000);
        let decisions = energy_clean(&bank, &[probe], 20.0).unwrap();
        let vocals = decisions.iter().find(|d| d.class == SourceClass::Vocals).unwrap();
        assert!(vocals.clean);
        let bass = decisions.iter().find(|d| d.class == SourceClass::Bass).unwrap();
        assert!(bass.clean);
        assert!(bass.margins.values().all(|m| *m == MARGIN_SATURATION_DB));

        let mut wrong = clean.clone();
        wrong.stems[SourceClass::Vocals] = clean.stems[SourceClass::Drums].clone();
        let d = energy_clean(&bank, &[wrong], 20.0).unwrap();
        let v = d.iter().find(|d| d.class == SourceClass::Vocals).unwrap();
        assert!(!v.clean);
        assert!(v.margins[&SourceClass::Drums] < 0.0);
    }

    #[test]
    fn energy_clean_gain_invariant() {
        let clean = band_song("s", 20000);
        let bank = OracleBank::from_clean(core::slice::from_ref(&clean)).unwrap();
        let mut mixed = clean.clone();
        mixed.stems[SourceClass::Other] =
            clean.stems[SourceClass::Other].add(&clean.stems[SourceClass::Vocals].scaled(0.05)).unwrap();
        let base = energy_clean(&bank, &[mixed.clone()], 20.0).unwrap();
        for alpha in [0.1, 10.0] {
            let scaled = Song::new("s", mixed.stems.scaled(alpha));
            let d = energy_clean(&bank, &[scaled], 20.0).unwrap();
            for (a, b) in d.iter().zip(&base) {
                assert_eq!(a.clean, b.clean);
                for (x, y) in a.margins.values().zip(b.margins.values()) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> Vec<Song> {
        toy_raw_songs(n, 8192, seed).unwrap().iter().map(|s| s.group(&Taxonomy::default()).unwrap()).collect()
    }

    #[test]
    fn toy_zero_steps_returns_initial() {
        let songs = toy_dataset(2, 1);
        let cfg = ToyTrainConfig::new(0, 7);
        let out = train_toy_mask_model(&songs, &[], &cfg).unwrap();
        assert_eq!(out.model, ToyMaskModel::initial(cfg.frames, cfg.learning_rate, 7));
        assert!(out.train_loss.is_empty());
    }

    #[test]
    fn toy_training_is_deterministic_and_improves() {
        let train = toy_dataset(12, 2);
        let val = toy_dataset(4, 3);
        let cfg = ToyTrainConfig::new(150, 5);
        let a = train_toy_mask_model(&train, &val, &cfg).unwrap();
        let b = train_toy_mask_model(&train, &val, &cfg).unwrap();
        assert_eq!(a, b);
        let curve: Vec<f64> = a.validation_loss.iter().map(|(_, l)| *l).collect();
        assert!(curve.last().unwrap() < &curve[0]);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] * 1.05);
        }
        let est = a.model.separate(&val[0].mixture()).unwrap();
        assert_eq!(est.len(), val[0].stems.len());
    }

    #[test]
    fn toy_rejects_bad_config() {
        let songs = toy_dataset(1, 1);
        let mut cfg = ToyTrainConfig::new(MAX_TOY_STEPS + 1, 0);
        assert!(train_toy_mask_model(&songs, &[], &cfg).is_err());
        cfg.steps = 1;
        assert_eq!(train_toy_mask_model(&[], &[], &cfg), Err(RobustError::EmptyInput));
    }

    #[test]
    fn toy_songs_with_label_noise() {
        let raw = toy_raw_songs(5, 1000, 9).unwrap();
        let cfg = LabelNoiseConfig { rate: 0.3, confusion: toy_confusion(), seed: 1 };
        let (noisy, _) = corrupt_label_noise(&raw, &cfg).unwrap();
        assert_eq!(noisy.len(), 5);
    }
}
