//! Butterworth low-pass and band-pass filters as cascaded biquads.
//!
//! Designs go through the analog prototype, the bilinear transform with
//! frequency pre-warping, and pole pairing into second-order sections. The
//! pre-warp places the -3 dB points exactly on the requested cutoffs.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{AudioBuffer, AudioError, NYQUIST_HZ, SAMPLE_RATE};

pub const MIN_ORDER: u32 = 3;
pub const MAX_ORDER: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

/// Parameters of one Butterworth filter.
///
/// `cutoff_low_hz` is ignored for low-pass filters. For band-pass filters
/// `order` is the prototype order, so the cascade has `2 * order` poles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: u32,
    pub cutoff_low_hz: f64,
    pub cutoff_high_hz: f64,
}

impl FilterSpec {
    pub fn lowpass(order: u32, cutoff_hz: f64) -> Self {
        Self { kind: FilterKind::Lowpass, order, cutoff_low_hz: 0.0, cutoff_high_hz: cutoff_hz }
    }

    pub fn bandpass(order: u32, low_hz: f64, high_hz: f64) -> Self {
        Self { kind: FilterKind::Bandpass, order, cutoff_low_hz: low_hz, cutoff_high_hz: high_hz }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if !(MIN_ORDER..=MAX_ORDER).contains(&self.order) {
            return Err(AudioError::InvalidFilter("order must be in 3..=9"));
        }
        let in_band = |f: f64| f.is_finite() && f > 0.0 && f < NYQUIST_HZ;
        if !in_band(self.cutoff_high_hz) {
            return Err(AudioError::InvalidFilter("cutoff outside (0, 22050) Hz"));
        }
        if self.kind == FilterKind::Bandpass {
            if !in_band(self.cutoff_low_hz) {
                return Err(AudioError::InvalidFilter("cutoff outside (0, 22050) Hz"));
            }
            if self.cutoff_low_hz >= self.cutoff_high_hz {
                return Err(AudioError::InvalidFilter("band-pass needs low < high"));
            }
        }
        Ok(())
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + z_inv * self.b1 + z2 * self.b2) / (1.0 + z_inv * self.a1 + z2 * self.a2)
    }

    fn scale_numerator(&mut self, g: f64) {
        self.b0 *= g;
        self.b1 *= g;
        self.b2 *= g;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
}

impl FilterCoefficients {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * freq_hz / f64::from(SAMPLE_RATE);
        let z_inv = Complex64::from_polar(1.0, -omega);
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }
}

fn prewarp(freq_hz: f64) -> f64 {
    let fs = f64::from(SAMPLE_RATE);
    2.0 * fs * (PI * freq_hz / fs).tan()
}

fn bilinear(s: Complex64) -> Complex64 {
    let k = 2.0 * f64::from(SAMPLE_RATE);
    (k + s) / (k - s)
}

/// Left-half-plane poles of the normalized Butterworth prototype.
fn prototype_poles(order: u32) -> Vec<Complex64> {
    let n = f64::from(order);
    (0..order)
        .map(|k| {
            let theta = PI * (2.0 * f64::from(k) + n + 1.0) / (2.0 * n);
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// Groups digital poles into denominators: conjugate pairs first, then the
/// remaining real poles two at a time (a lone real pole gets a first-order
/// denominator).
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64)> {
    const IMAG_EPS: f64 = 1e-12;
    let mut denominators = Vec::new();
    let mut reals = Vec::new();
    for p in poles {
        if p.im > IMAG_EPS {
            denominators.push((-2.0 * p.re, p.norm_sqr()));
        } else if p.im.abs() <= IMAG_EPS {
            reals.push(p.re);
        }
    }
    reals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    for chunk in reals.chunks(2) {
        match *chunk {
            [r1, r2] => denominators.push((-(r1 + r2), r1 * r2)),
            [r] => denominators.push((-r, 0.0)),
            _ => unreachable!(),
        }
    }
    denominators
}

fn design_lowpass(order: u32, cutoff_hz: f64) -> FilterCoefficients {
    let wc = prewarp(cutoff_hz);
    let poles: Vec<Complex64> = prototype_poles(order).into_iter().map(|p| bilinear(p * wc)).collect();
    let sections = pair_poles(&poles)
        .into_iter()
        .map(|(a1, a2)| {
            if a2 == 0.0 {
                // first order: zero at z = -1, unity gain at DC
                let g = (1.0 + a1) / 2.0;
                Biquad { b0: g, b1: g, b2: 0.0, a1, a2 }
            } else {
                // double zero at z = -1, unity gain at DC
                let g = (1.0 + a1 + a2) / 4.0;
                Biquad { b0: g, b1: 2.0 * g, b2: g, a1, a2 }
            }
        })
        .collect();
    FilterCoefficients { sections }
}

fn design_bandpass(order: u32, low_hz: f64, high_hz: f64) -> FilterCoefficients {
    let w1 = prewarp(low_hz);
    let w2 = prewarp(high_hz);
    let bw = w2 - w1;
    let w0_sq = w1 * w2;
    let mut poles = Vec::with_capacity(2 * order as usize);
    for p in prototype_poles(order) {
        // roots of s^2 - p*bw*s + w0^2 = 0
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        poles.push(bilinear((pb + disc) / 2.0));
        poles.push(bilinear((pb - disc) / 2.0));
    }
    let mut coeffs = FilterCoefficients {
        sections: pair_poles(&poles)
            .into_iter()
            // zeros at z = 1 and z = -1
            .map(|(a1, a2)| Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 })
            .collect(),
    };
    let fs = f64::from(SAMPLE_RATE);
    let center_hz = fs / PI * (w0_sq.sqrt() / (2.0 * fs)).atan();
    let peak = coeffs.response(center_hz).norm();
    let per_section = (1.0 / peak).powf(1.0 / coeffs.sections.len() as f64);
    for s in &mut coeffs.sections {
        s.scale_numerator(per_section);
    }
    coeffs
}

/// Designs the Butterworth cascade for `spec`.
pub fn design_filter(spec: &FilterSpec) -> Result<FilterCoefficients, AudioError> {
    spec.validate()?;
    Ok(match spec.kind {
        FilterKind::Lowpass => design_lowpass(spec.order, spec.cutoff_high_hz),
        FilterKind::Bandpass => design_bandpass(spec.order, spec.cutoff_low_hz, spec.cutoff_high_hz),
    })
}

fn filter_channel(coeffs: &FilterCoefficients, input: &[f64]) -> Vec<f64> {
    let mut signal = input.to_vec();
    for s in &coeffs.sections {
        // transposed direct form II, zero initial state
        let (mut z1, mut z2) = (0.0, 0.0);
        for x in signal.iter_mut() {
            let input = *x;
            let y = s.b0 * input + z1;
            z1 = s.b1 * input - s.a1 * y + z2;
            z2 = s.b2 * input - s.a2 * y;
            *x = y;
        }
    }
    signal
}

/// Filters each channel through the cascade; output length equals input.
pub fn apply_filter(buffer: &AudioBuffer, coeffs: &FilterCoefficients) -> AudioBuffer {
    buffer
        .try_map_channels(|c| filter_channel(coeffs, c))
        .expect("stable Butterworth cascade produced a non-finite sample")
}
