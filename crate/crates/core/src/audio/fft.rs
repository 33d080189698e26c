//! In-place radix-2 FFT for power-of-two lengths.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

/// Precomputed twiddles and bit-reversal table for one transform length.
#[derive(Debug, Clone)]
pub(crate) struct Fft {
    len: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub(crate) fn new(len: usize) -> Self {
        assert!(len.is_power_of_two(), "FFT length must be a power of two");
        let bits = len.trailing_zeros();
        let bitrev = (0..len).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
        let twiddles = (0..len / 2).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64)).collect();
        Self { len, twiddles, bitrev }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(data.len(), self.len);
        for i in 0..self.len {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.len {
            let half = size / 2;
            let step = self.len / size;
            for start in (0..self.len).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let t = data[start + k + half] * w;
                    let u = data[start + k];
                    data[start + k] = u + t;
                    data[start + k + half] = u - t;
                }
            }
            size *= 2;
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Unnormalized inverse transform.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// First `len / 2 + 1` bins of the transform of a real frame.
    pub(crate) fn forward_real(&self, frame: &[f64], out: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        scratch.clear();
        scratch.extend(frame.iter().map(|&x| Complex64::new(x, 0.0)));
        self.forward(scratch);
        out.copy_from_slice(&scratch[..self.len / 2 + 1]);
    }

    /// Real signal from a half spectrum; normalized so it inverts
    /// [`Fft::forward_real`].
    pub(crate) fn inverse_real(&self, half: &[Complex64], out: &mut [f64], scratch: &mut Vec<Complex64>) {
        let n = self.len;
        scratch.clear();
        scratch.extend_from_slice(half);
        for k in (1..n - n / 2).rev() {
            scratch.push(half[k].conj());
        }
        if n == 1 {
            scratch.truncate(1);
        }
        self.inverse(scratch);
        let scale = 1.0 / n as f64;
        for (o, c) in out.iter_mut().zip(scratch.iter()) {
            *o = c.re * scale;
        }
    }
}
