use alloc::vec;
use alloc::vec::Vec;

use super::{AudioError, SAMPLE_RATE};

/// A stereo block of samples at 44.1 kHz.
///
/// Both channels always have the same length and every sample is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: [Vec<f64>; 2],
}

impl AudioBuffer {
    pub fn new(left: Vec<f64>, right: Vec<f64>) -> Result<Self, AudioError> {
        if left.len() != right.len() {
            return Err(AudioError::LengthMismatch { expected: left.len(), found: right.len() });
        }
        let buffer = Self { channels: [left, right] };
        buffer.check_finite()?;
        Ok(buffer)
    }

    /// Duplicates a mono signal into both channels.
    pub fn from_mono(samples: Vec<f64>) -> Result<Self, AudioError> {
        Self::new(samples.clone(), samples)
    }

    pub fn silence(len: usize) -> Self {
        Self { channels: [vec![0.0; len], vec![0.0; len]] }
    }

    /// Builds a buffer from `f(channel, index)`.
    ///
    /// # Panics
    ///
    /// Panics if `f` produces a non-finite value.
    pub fn from_fn(len: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut left = Vec::with_capacity(len);
        let mut right = Vec::with_capacity(len);
        for n in 0..len {
            left.push(f(0, n));
            right.push(f(1, n));
        }
        Self::new(left, right).expect("from_fn produced a non-finite sample")
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / f64::from(SAMPLE_RATE)
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn left(&self) -> &[f64] {
        &self.channels[0]
    }

    pub fn right(&self) -> &[f64] {
        &self.channels[1]
    }

    pub fn channels(&self) -> &[Vec<f64>; 2] {
        &self.channels
    }

    pub fn into_channels(self) -> [Vec<f64>; 2] {
        self.channels
    }

    /// Applies `f` to every sample. Non-finite results are rejected.
    pub fn try_map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self, AudioError> {
        let [l, r] = &self.channels;
        Self::new(l.iter().map(|&x| f(x)).collect(), r.iter().map(|&x| f(x)).collect())
    }

    /// Builds a buffer by transforming each channel as a whole.
    pub fn try_map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self, AudioError> {
        let left = f(&self.channels[0]);
        let right = f(&self.channels[1]);
        Self::new(left, right)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let [l, r] = &self.channels;
        let out = Self { channels: [l.iter().map(|&x| x * factor).collect(), r.iter().map(|&x| x * factor).collect()] };
        debug_assert!(out.check_finite().is_ok());
        out
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, AudioError> {
        self.expect_len(other.len())?;
        let mut channels: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (ch, out) in channels.iter_mut().enumerate() {
            *out = self.channels[ch].iter().zip(&other.channels[ch]).map(|(&a, &b)| f(a, b)).collect();
        }
        let out = Self { channels };
        out.check_finite()?;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, AudioError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, AudioError> {
        self.zip_with(other, |a, b| a - b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), AudioError> {
        self.expect_len(other.len())?;
        for ch in 0..2 {
            for (a, &b) in self.channels[ch].iter_mut().zip(&other.channels[ch]) {
                *a += b;
            }
        }
        self.check_finite()
    }

    /// In-place `self += weight * other`.
    pub fn add_scaled(&mut self, other: &Self, weight: f64) -> Result<(), AudioError> {
        self.expect_len(other.len())?;
        for ch in 0..2 {
            for (a, &b) in self.channels[ch].iter_mut().zip(&other.channels[ch]) {
                *a += weight * b;
            }
        }
        self.check_finite()
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Sum of squared samples over time and both channels.
    pub fn energy(&self) -> f64 {
        let [l, r] = &self.channels;
        l.iter().map(|&x| x * x).sum::<f64>() + r.iter().map(|&x| x * x).sum::<f64>()
    }

    pub fn is_silent(&self) -> bool {
        self.channels.iter().flatten().all(|&x| x == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, AudioError> {
        self.expect_len(other.len())?;
        Ok(self
            .channels
            .iter()
            .zip(&other.channels)
            .flat_map(|(a, b)| a.iter().zip(b))
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Copy of `[start, start + len)`, zero-filled wherever the range falls
    /// outside the buffer. `start` may be negative.
    pub fn window(&self, start: isize, len: usize) -> Self {
        let mut out = Self::silence(len);
        for ch in 0..2 {
            for (i, dst) in out.channels[ch].iter_mut().enumerate() {
                let src = start + i as isize;
                if src >= 0 && (src as usize) < self.len() {
                    *dst = self.channels[ch][src as usize];
                }
            }
        }
        out
    }

    /// Copy of `[start, end)`; the range must lie inside the buffer.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { channels: [self.channels[0][start..end].to_vec(), self.channels[1][start..end].to_vec()] }
    }

    /// Left and right swapped.
    pub fn swapped_channels(&self) -> Self {
        Self { channels: [self.channels[1].clone(), self.channels[0].clone()] }
    }

    pub fn expect_len(&self, len: usize) -> Result<(), AudioError> {
        if self.len() == len {
            Ok(())
        } else {
            Err(AudioError::LengthMismatch { expected: len, found: self.len() })
        }
    }

    pub fn check_finite(&self) -> Result<(), AudioError> {
        for (channel, samples) in self.channels.iter().enumerate() {
            if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
                return Err(AudioError::NonFinite { channel, index });
            }
        }
        Ok(())
    }
}
