//! Sampled signals, the transmit pulse model and the two transforms the
//! decomposition methods work in: short-time Fourier and IQ baseband.

mod iq;
mod pulse;
mod stft;

pub use iq::{iq_demodulate, iq_remodulate, lowpass_taps, BasebandSignal, IQ_FILTER_TAPS};
pub use pulse::{accumulate_pulse, render_pulse, PulseModel};
pub use stft::{istft, stft, Stft, TfGrid, DEFAULT_HOP, DEFAULT_WINDOW_LEN};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform sampling grid: sample `n` sits at `t0_s + n / fs_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub len: usize,
    pub fs_hz: f64,
    pub t0_s: f64,
}

impl TimeGrid {
    pub fn new(len: usize, fs_hz: f64, t0_s: f64) -> Result<Self> {
        if len == 0 {
            return invalid("time grid needs at least one sample");
        }
        if !(fs_hz > 0.0) || !fs_hz.is_finite() {
            return invalid(format!("sampling rate must be positive, got {fs_hz}"));
        }
        Ok(Self { len, fs_hz, t0_s })
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        self.t0_s + n as f64 / self.fs_hz
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        1.0 / self.fs_hz
    }
}

/// A real, uniformly sampled signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    pub samples: Vec<f64>,
    pub fs_hz: f64,
    pub t0_s: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, fs_hz: f64, t0_s: f64) -> Result<Self> {
        TimeGrid::new(samples.len(), fs_hz, t0_s)?;
        Ok(Self { samples, fs_hz, t0_s })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            samples: vec![0.0; grid.len],
            fs_hz: grid.fs_hz,
            t0_s: grid.t0_s,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            len: self.samples.len(),
            fs_hz: self.fs_hz,
            t0_s: self.t0_s,
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0_s + n as f64 / self.fs_hz
    }

    /// Fractional sample position of time `t`.
    pub fn position(&self, t: f64) -> f64 {
        (t - self.t0_s) * self.fs_hz
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.samples)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * alpha).collect(),
            ..*self
        }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Magnitude of the analytic signal, computed with an FFT Hilbert transform.
pub fn analytic_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= gain;
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|v| v.norm() * scale).collect()
}
