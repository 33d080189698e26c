//! Separator interface, test separators and inference-time ensembling.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{istft, stft, AudioBuffer, AudioError, FrameSpec, Spectrogram};
use crate::dataset::{SourceClass, Stems};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeparationError {
    #[error("separator process failed ({status}): {stderr}")]
    ProcessFailed { status: String, stderr: String },
    #[error("separator produced no {0} output")]
    MissingOutput(SourceClass),
    #[error("window of {0} samples is too short")]
    WindowTooShort(usize),
    #[error("blend weights do not match the estimates: {0}")]
    WeightMismatch(String),
    #[error("invalid inference settings: {0}")]
    InvalidAugmentation(&'static str),
    #[error("no separator for song {0:?}")]
    UnknownSong(String),
    #[error("separator failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Splits a stereo mixture into the four classes.
///
/// Implementations must return four buffers of the input length. Separators
/// that cannot be called concurrently say so through
/// [`Separator::is_serial`]; callers that fan out across threads check it.
pub trait Separator: Send + Sync {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError>;

    /// Separates a window that starts `offset` samples into a longer signal
    /// (negative offsets mean leading padding). Position-independent
    /// separators ignore the offset.
    fn separate_window(&self, mixture: &AudioBuffer, offset: isize) -> Result<Stems, SeparationError> {
        let _ = offset;
        self.separate(mixture)
    }

    fn is_serial(&self) -> bool {
        false
    }
}

impl<S: Separator + ?Sized> Separator for &S {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        (**self).separate(mixture)
    }

    fn separate_window(&self, mixture: &AudioBuffer, offset: isize) -> Result<Stems, SeparationError> {
        (**self).separate_window(mixture, offset)
    }

    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
}

impl<S: Separator + ?Sized> Separator for Box<S> {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        (**self).separate(mixture)
    }

    fn separate_window(&self, mixture: &AudioBuffer, offset: isize) -> Result<Stems, SeparationError> {
        (**self).separate_window(mixture, offset)
    }

    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
}

impl<S: Separator + ?Sized> Separator for Arc<S> {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        (**self).separate(mixture)
    }

    fn separate_window(&self, mixture: &AudioBuffer, offset: isize) -> Result<Stems, SeparationError> {
        (**self).separate_window(mixture, offset)
    }

    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
}

/// Checks the separator contract on an output set.
pub fn check_outputs(stems: &Stems, len: usize) -> Result<(), SeparationError> {
    for (_, b) in stems.iter() {
        b.expect_len(len)?;
        b.check_finite()?;
    }
    Ok(())
}

/// Routes the whole mixture to one class and silence to the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Passthrough(pub SourceClass);

pub fn passthrough(class: SourceClass) -> Passthrough {
    Passthrough(class)
}

impl Separator for Passthrough {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        let mut out = Stems::silence(mixture.len());
        out[self.0] = mixture.clone();
        Ok(out)
    }
}

/// Always returns silence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Silence;

impl Separator for Silence {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        Ok(Stems::silence(mixture.len()))
    }
}

/// Default analysis frames for mask-based separators.
pub const DEFAULT_MASK_FRAMES: FrameSpec = FrameSpec::hann(2048, 512);

/// Ideal ratio mask separator built from one song's clean stems.
///
/// Masks are `|S_c| / sum_k |S_k|` per channel and time-frequency bin (an
/// even split where all stems are zero), so the four estimates always sum
/// to the input. The masks depend on the clean stems only, which makes the
/// separator linear in its input.
#[derive(Debug, Clone)]
pub struct OracleIrm {
    clean: Stems,
    frames: FrameSpec,
    masks: Arc<[[Vec<f64>; 2]; 4]>,
}

fn ratio_masks(specs: &[Spectrogram; 4]) -> [[Vec<f64>; 2]; 4] {
    let len = specs[0].channel(0).len();
    let mut masks: [[Vec<f64>; 2]; 4] = core::array::from_fn(|_| [vec![0.0; len], vec![0.0; len]]);
    for ch in 0..2 {
        for i in 0..len {
            let mags: [f64; 4] = core::array::from_fn(|c| specs[c].channel(ch)[i].norm());
            let total: f64 = mags.iter().sum();
            for c in 0..4 {
                masks[c][ch][i] = if total > 0.0 { mags[c] / total } else { 0.25 };
            }
        }
    }
    masks
}

fn apply_masks(input: &Spectrogram, masks: &[[Vec<f64>; 2]; 4]) -> Result<Stems, SeparationError> {
    let [b, d, o, v] = masks;
    Ok(Stems::new([
        istft(&input.masked(b))?,
        istft(&input.masked(d))?,
        istft(&input.masked(o))?,
        istft(&input.masked(v))?,
    ])?)
}

impl OracleIrm {
    pub fn new(clean: Stems) -> Result<Self, SeparationError> {
        Self::with_frames(clean, DEFAULT_MASK_FRAMES)
    }

    pub fn with_frames(clean: Stems, frames: FrameSpec) -> Result<Self, SeparationError> {
        let specs = Self::spectrograms(&clean, &frames)?;
        Ok(Self { masks: Arc::new(ratio_masks(&specs)), clean, frames })
    }

    fn spectrograms(clean: &Stems, frames: &FrameSpec) -> Result<[Spectrogram; 4], SeparationError> {
        let [b, d, o, v] = clean.buffers();
        Ok([stft(b, frames)?, stft(d, frames)?, stft(o, frames)?, stft(v, frames)?])
    }

    pub fn clean(&self) -> &Stems {
        &self.clean
    }
}

impl Separator for OracleIrm {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        if mixture.len() != self.clean.len() {
            return self.separate_window(mixture, 0);
        }
        let input = stft(mixture, &self.frames)?;
        apply_masks(&input, &self.masks)
    }

    /// Masks come from the clean stems over the same span (zero outside the
    /// song).
    fn separate_window(&self, mixture: &AudioBuffer, offset: isize) -> Result<Stems, SeparationError> {
        if offset == 0 && mixture.len() == self.clean.len() {
            return self.separate(mixture);
        }
        let window = self.clean.map(|_, b| b.window(offset, mixture.len()))?;
        let masks = ratio_masks(&Self::spectrograms(&window, &self.frames)?);
        apply_masks(&stft(mixture, &self.frames)?, &masks)
    }
}

pub fn oracle_irm(clean: Stems) -> Result<OracleIrm, SeparationError> {
    OracleIrm::new(clean)
}

/// Sample-wise `mixture - estimate`.
pub fn residual(mixture: &AudioBuffer, estimate: &AudioBuffer) -> Result<AudioBuffer, SeparationError> {
    Ok(mixture.sub(estimate)?)
}

fn triangular_weights(len: usize) -> Vec<f64> {
    (0..len).map(|i| (i + 1).min(len - i) as f64).collect()
}

/// Windowed inference with triangular cross-fades.
///
/// Windows of `window_len` samples start every
/// `round(window_len * (1 - overlap_ratio))` samples; the last one is
/// zero-padded past the end of the mixture. Each output sample is the
/// weighted average of the windows covering it, with weights rising linearly
/// from the window edges to its centre.
pub fn infer_overlapped(
    sep: &dyn Separator,
    mixture: &AudioBuffer,
    window_len: usize,
    overlap_ratio: f64,
) -> Result<Stems, SeparationError> {
    if !(0.0..1.0).contains(&overlap_ratio) {
        return Err(SeparationError::InvalidAugmentation("overlap ratio must be in [0, 1)"));
    }
    if window_len < 2 {
        return Err(SeparationError::WindowTooShort(window_len));
    }
    let len = mixture.len();
    let hop = ((window_len as f64 * (1.0 - overlap_ratio)).round() as usize).max(1);
    let starts: Vec<usize> = (0..).map(|k| k * hop).take_while(|&s| s < len.max(1)).collect();
    let weights = triangular_weights(window_len);
    let mut total = vec![0.0; len];
    for &start in &starts {
        for (i, w) in weights.iter().enumerate().take(len.saturating_sub(start)) {
            total[start + i] += w;
        }
    }
    let mut acc: [[Vec<f64>; 2]; 4] = core::array::from_fn(|_| [vec![0.0; len], vec![0.0; len]]);
    for &start in &starts {
        let chunk = mixture.window(start as isize, window_len);
        let est = sep.separate_window(&chunk, start as isize)?;
        check_outputs(&est, window_len)?;
        let valid = window_len.min(len - start);
        for (c, buf) in est.buffers().iter().enumerate() {
            for ch in 0..2 {
                let src = buf.channel(ch);
                let dst = &mut acc[c][ch][start..start + valid];
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += src[i] * (weights[i] / total[start + i]);
                }
            }
        }
    }
    let [b, d, o, v] = acc.map(|[l, r]| AudioBuffer::new(l, r));
    Ok(Stems::new([b?, d?, o?, v?])?)
}

/// Averages separations of randomly delayed copies of the mixture.
///
/// Each pass delays the input by a shift drawn uniformly from
/// `0..=max_shift` samples (zero padding), separates, and removes the delay
/// again.
pub fn infer_shifted(
    sep: &dyn Separator,
    mixture: &AudioBuffer,
    n_shifts: usize,
    max_shift: usize,
    seed: u64,
) -> Result<Stems, SeparationError> {
    if n_shifts == 0 {
        return Err(SeparationError::InvalidAugmentation("need at least one shift"));
    }
    let len = mixture.len();
    let mut rng = Rng::new(seed);
    let mut acc = Stems::silence(len);
    for _ in 0..n_shifts {
        let shift = rng.int_inclusive(0, max_shift as u32) as usize;
        let shifted = mixture.window(-(shift as isize), len + max_shift);
        let est = sep.separate_window(&shifted, -(shift as isize))?;
        check_outputs(&est, shifted.len())?;
        for class in SourceClass::ALL {
            acc[class].add_assign(&est[class].window(shift as isize, len))?;
        }
    }
    Ok(acc.scaled(1.0 / n_shifts as f64))
}

/// Averages `sep(x)` with `-sep(-x)`.
pub fn infer_phase_inverted(sep: &dyn Separator, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
    let direct = sep.separate(mixture)?;
    let inverted = sep.separate(&mixture.negated())?;
    check_outputs(&direct, mixture.len())?;
    check_outputs(&inverted, mixture.len())?;
    Ok(Stems::try_from_fn(|c| {
        let mut out = direct[c].clone();
        out.add_scaled(&inverted[c], -1.0)?;
        Ok(out.scaled(0.5))
    })?)
}

/// Inference-time augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceAugmentation {
    pub n_shifts: usize,
    pub max_shift: usize,
    pub overlap_ratio: f64,
    pub phase_invert: bool,
}

impl Default for InferenceAugmentation {
    fn default() -> Self {
        Self {
            n_shifts: 1,
            max_shift: crate::audio::SAMPLE_RATE as usize / 2,
            overlap_ratio: 0.25,
            phase_invert: false,
        }
    }
}

impl InferenceAugmentation {
    pub fn validate(&self) -> Result<(), SeparationError> {
        if self.n_shifts == 0 {
            return Err(SeparationError::InvalidAugmentation("n_shifts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(SeparationError::InvalidAugmentation("overlap ratio must be in [0, 1)"));
        }
        Ok(())
    }
}

struct Overlapped<'a> {
    inner: &'a dyn Separator,
    window_len: usize,
    overlap_ratio: f64,
}

impl Separator for Overlapped<'_> {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        self.separate_window(mixture, 0)
    }

    fn separate_window(&self, mixture: &AudioBuffer, offset: isize) -> Result<Stems, SeparationError> {
        let shifted = OffsetSeparator { inner: self.inner, offset };
        infer_overlapped(&shifted, mixture, self.window_len, self.overlap_ratio)
    }

    fn is_serial(&self) -> bool {
        self.inner.is_serial()
    }
}

struct OffsetSeparator<'a> {
    inner: &'a dyn Separator,
    offset: isize,
}

impl Separator for OffsetSeparator<'_> {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        self.inner.separate_window(mixture, self.offset)
    }

    fn separate_window(&self, mixture: &AudioBuffer, offset: isize) -> Result<Stems, SeparationError> {
        self.inner.separate_window(mixture, self.offset + offset)
    }
}

/// Shifts, overlapped windows and (optionally) phase inversion combined:
/// every shifted pass runs windowed inference, and phase inversion wraps
/// the whole procedure.
pub fn infer_augmented(
    sep: &dyn Separator,
    mixture: &AudioBuffer,
    window_len: usize,
    aug: &InferenceAugmentation,
    seed: u64,
) -> Result<Stems, SeparationError> {
    aug.validate()?;
    let windowed = Overlapped { inner: sep, window_len, overlap_ratio: aug.overlap_ratio };
    let shifted = Shifted { inner: &windowed, n_shifts: aug.n_shifts, max_shift: aug.max_shift, seed };
    if aug.phase_invert {
        infer_phase_inverted(&shifted, mixture)
    } else {
        shifted.separate(mixture)
    }
}

struct Shifted<'a> {
    inner: &'a dyn Separator,
    n_shifts: usize,
    max_shift: usize,
    seed: u64,
}

impl Separator for Shifted<'_> {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        infer_shifted(self.inner, mixture, self.n_shifts, self.max_shift, self.seed)
    }
}

/// Per-source blending weights keyed by model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub per_source: BTreeMap<SourceClass, Vec<(String, f64)>>,
}

impl BlendWeights {
    /// The same weights for every source.
    pub fn uniform_across_sources(weights: &[(&str, f64)]) -> Self {
        let list: Vec<(String, f64)> = weights.iter().map(|(id, w)| ((*id).into(), *w)).collect();
        Self { per_source: SourceClass::ALL.iter().map(|c| (*c, list.clone())).collect() }
    }

    pub fn validate(&self) -> Result<(), SeparationError> {
        for class in SourceClass::ALL {
            let list = self
                .per_source
                .get(&class)
                .ok_or_else(|| SeparationError::WeightMismatch(alloc::format!("no weights for {class}")))?;
            if list.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
                return Err(SeparationError::WeightMismatch(alloc::format!("negative weight for {class}")));
            }
            let sum: f64 = list.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SeparationError::WeightMismatch(alloc::format!("{class} weights sum to {sum}")));
            }
        }
        Ok(())
    }
}

/// Per-source weighted sum of estimate sets, looked up by model id.
pub fn blend(estimates: &[(String, Stems)], weights: &BlendWeights) -> Result<Stems, SeparationError> {
    weights.validate()?;
    let (_, first) = estimates.first().ok_or_else(|| SeparationError::WeightMismatch("no estimate sets".into()))?;
    let len = first.len();
    let by_id: BTreeMap<&str, &Stems> = estimates.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let mut out = Stems::silence(len);
    for class in SourceClass::ALL {
        for (id, w) in &weights.per_source[&class] {
            let set = by_id
                .get(id.as_str())
                .ok_or_else(|| SeparationError::WeightMismatch(alloc::format!("no estimates for model {id:?}")))?;
            set[class].expect_len(len)?;
            out[class].add_scaled(&set[class], *w)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageOutput {
    pub estimates: Stems,
    /// `mixture - vocals`, the input handed to the second stage.
    pub instrumental: AudioBuffer,
}

/// Vocals from the first separator; bass, drums and other from the second
/// separator applied to the instrumental residual.
pub fn two_stage_instrumental(
    vocal_sep: &dyn Separator,
    rest_sep: &dyn Separator,
    mixture: &AudioBuffer,
) -> Result<TwoStageOutput, SeparationError> {
    let first = vocal_sep.separate(mixture)?;
    check_outputs(&first, mixture.len())?;
    let vocals = first[SourceClass::Vocals].clone();
    let instrumental = residual(mixture, &vocals)?;
    let rest = rest_sep.separate(&instrumental)?;
    check_outputs(&rest, mixture.len())?;
    let mut estimates = rest;
    estimates[SourceClass::Vocals] = vocals;
    Ok(TwoStageOutput { estimates, instrumental })
}
