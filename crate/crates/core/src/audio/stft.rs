//! Short-time Fourier transform with exact overlap-add resynthesis.
//!
//! The signal is front-padded by `frame_len - hop_len` zeros and back-padded
//! until the last sample is covered by a full set of frames, so every input
//! sample is reconstructed by [`istft`] without edge trimming.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::fft::Fft;
use super::{AudioBuffer, AudioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop_len: usize,
    pub window: Window,
}

impl FrameSpec {
    pub const fn hann(frame_len: usize, hop_len: usize) -> Self {
        Self { frame_len, hop_len, window: Window::Hann }
    }

    /// Checks the shape constraints and the constant-overlap-add condition,
    /// returning the overlap-add constant of the window.
    pub fn validate(&self) -> Result<f64, AudioError> {
        if self.frame_len < 2 || !self.frame_len.is_power_of_two() {
            return Err(AudioError::InvalidFrameSpec("frame length must be a power of two >= 2"));
        }
        if self.hop_len == 0 || self.hop_len > self.frame_len {
            return Err(AudioError::InvalidFrameSpec("hop must be in 1..=frame_len"));
        }
        let w = self.window.coefficients(self.frame_len);
        let sums: Vec<f64> = (0..self.hop_len).map(|n| w.iter().skip(n).step_by(self.hop_len).sum()).collect();
        let reference = sums[0];
        if reference <= 0.0 || sums.iter().any(|s| (s - reference).abs() > 1e-9 * reference) {
            return Err(AudioError::NonColaSpec);
        }
        Ok(reference)
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    fn front_pad(&self) -> usize {
        self.frame_len - self.hop_len
    }

    /// Number of frames needed to cover `len` samples completely.
    pub fn frame_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            (self.front_pad() + len - 1) / self.hop_len + 1
        }
    }
}

/// Half-spectrum STFT of a stereo buffer, stored frame-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    spec: FrameSpec,
    signal_len: usize,
    frames: usize,
    data: [Vec<Complex64>; 2],
}

impl Spectrogram {
    pub fn frame_spec(&self) -> FrameSpec {
        self.spec
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.spec.bins()
    }

    pub fn channel(&self, ch: usize) -> &[Complex64] {
        &self.data[ch]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [Complex64] {
        &mut self.data[ch]
    }

    pub fn frame(&self, ch: usize, t: usize) -> &[Complex64] {
        let b = self.bins();
        &self.data[ch][t * b..(t + 1) * b]
    }

    /// Multiplies every bin by the matching entry of `mask`
    /// (same layout as [`Spectrogram::channel`]).
    pub fn masked(&self, masks: &[Vec<f64>; 2]) -> Self {
        let mut out = self.clone();
        for ch in 0..2 {
            for (v, &m) in out.data[ch].iter_mut().zip(&masks[ch]) {
                *v *= m;
            }
        }
        out
    }

    /// Total energy, frame-summed, in the time-domain scale of the windowed
    /// frames: `sum_t sum_n (w[n] x_t[n])^2`.
    pub fn energy(&self) -> f64 {
        let n = self.spec.frame_len;
        let b = self.bins();
        let mut total = 0.0;
        for ch in 0..2 {
            for frame in self.data[ch].chunks(b) {
                for (k, v) in frame.iter().enumerate() {
                    let weight = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                    total += weight * v.norm_sqr();
                }
            }
        }
        total / n as f64
    }
}

/// Windowed frames of one channel, padded as described in the module docs.
pub(crate) fn padded_channel(spec: &FrameSpec, x: &[f64]) -> Vec<f64> {
    let frames = spec.frame_count(x.len());
    let total = if frames == 0 { 0 } else { (frames - 1) * spec.hop_len + spec.frame_len };
    let mut padded = vec![0.0; total];
    let pad = spec.front_pad();
    if frames > 0 {
        padded[pad..pad + x.len()].copy_from_slice(x);
    }
    padded
}

pub fn stft(buffer: &AudioBuffer, spec: &FrameSpec) -> Result<Spectrogram, AudioError> {
    spec.validate()?;
    let fft = Fft::new(spec.frame_len);
    let window = spec.window.coefficients(spec.frame_len);
    let frames = spec.frame_count(buffer.len());
    let bins = spec.bins();
    let mut data: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
    let mut frame = vec![0.0; spec.frame_len];
    let mut scratch = Vec::with_capacity(spec.frame_len);
    for (ch, out) in data.iter_mut().enumerate() {
        let padded = padded_channel(spec, buffer.channel(ch));
        *out = vec![Complex64::new(0.0, 0.0); frames * bins];
        for t in 0..frames {
            let start = t * spec.hop_len;
            for (i, f) in frame.iter_mut().enumerate() {
                *f = padded[start + i] * window[i];
            }
            fft.forward_real(&frame, &mut out[t * bins..(t + 1) * bins], &mut scratch);
        }
    }
    Ok(Spectrogram { spec: *spec, signal_len: buffer.len(), frames, data })
}

/// Overlap-add resynthesis; inverts [`stft`] for COLA frame specs.
pub fn istft(spectrogram: &Spectrogram) -> Result<AudioBuffer, AudioError> {
    let spec = spectrogram.spec;
    let cola = spec.validate()?;
    let fft = Fft::new(spec.frame_len);
    debug_assert_eq!(fft.len(), spec.frame_len);
    let frames = spectrogram.frames;
    let bins = spec.bins();
    let total = if frames == 0 { 0 } else { (frames - 1) * spec.hop_len + spec.frame_len };
    let pad = spec.front_pad();
    let mut frame = vec![0.0; spec.frame_len];
    let mut scratch = Vec::with_capacity(spec.frame_len);
    let mut channels: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (ch, out) in channels.iter_mut().enumerate() {
        let mut acc = vec![0.0; total];
        for t in 0..frames {
            let half = &spectrogram.data[ch][t * bins..(t + 1) * bins];
            fft.inverse_real(half, &mut frame, &mut scratch);
            let start = t * spec.hop_len;
            for (a, &v) in acc[start..start + spec.frame_len].iter_mut().zip(&frame) {
                *a += v;
            }
        }
        *out = if frames == 0 {
            Vec::new()
        } else {
            acc[pad..pad + spectrogram.signal_len].iter().map(|v| v / cola).collect()
        };
    }
    let [left, right] = channels;
    AudioBuffer::new(left, right)
}
