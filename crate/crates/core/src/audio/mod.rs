//! Sample-accurate audio primitives.
//!
//! Everything here is a pure function of its inputs. Buffers are always
//! stereo at [`SAMPLE_RATE`] and are held in 64-bit floats while processing.

mod buffer;
mod fft;
pub mod filter;
pub mod stft;

pub use buffer::AudioBuffer;
pub use filter::{apply_filter, design_filter, Biquad, FilterCoefficients, FilterKind, FilterSpec};
pub use stft::{istft, stft, FrameSpec, Spectrogram, Window};

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

/// The only sample rate the toolkit handles.
pub const SAMPLE_RATE: u32 = 44_100;

/// Nyquist frequency for [`SAMPLE_RATE`].
pub const NYQUIST_HZ: f64 = SAMPLE_RATE as f64 / 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AudioError {
    #[error("length mismatch: expected {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("buffer contains a non-finite sample (channel {channel}, index {index})")]
    NonFinite { channel: usize, index: usize },
    #[error("invalid filter spec: {0}")]
    InvalidFilter(&'static str),
    #[error("invalid frame spec: {0}")]
    InvalidFrameSpec(&'static str),
    #[error("frame spec does not satisfy constant overlap-add")]
    NonColaSpec,
}

/// Linear amplitude factor for a gain in decibels.
pub fn db_to_amplitude(gain_db: f64) -> f64 {
    10f64.powf(gain_db / 20.0)
}

/// Multiplies every sample by `10^(gain_db / 20)`.
pub fn apply_gain_db(buffer: &AudioBuffer, gain_db: f64) -> AudioBuffer {
    debug_assert!(gain_db.is_finite());
    buffer.scaled(db_to_amplitude(gain_db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = Rng::new(seed);
        AudioBuffer::from_fn(len, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn zero_db_is_identity() {
        let x = noise(500, 1);
        assert_eq!(apply_gain_db(&x, 0.0), x);
    }

    #[test]
    fn minus_six_db_halves() {
        let x = noise(500, 2);
        let y = apply_gain_db(&x, -6.0206);
        let half = x.scaled(0.5);
        assert!(y.max_abs_diff(&half).unwrap() < 1e-5);
        // exact 20*log10(0.5)
        let y = apply_gain_db(&x, 20.0 * 0.5f64.log10());
        assert!(y.max_abs_diff(&half).unwrap() < 1e-9);
    }

    #[test]
    fn gain_inverse() {
        let x = noise(500, 3);
        let y = apply_gain_db(&apply_gain_db(&x, -12.0), 12.0);
        assert!(y.max_abs_diff(&x).unwrap() < 1e-9);
    }
}
