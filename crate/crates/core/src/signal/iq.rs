use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SampledSignal;
use crate::error::{invalid, Result};

pub const IQ_FILTER_TAPS: usize = 63;
/// Low-pass cutoff as a fraction of the carrier.
const CUTOFF_FRACTION: f64 = 0.6;

/// Complex baseband `I + jQ` of an RF signal demodulated at `carrier_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasebandSignal {
    pub i_samples: Vec<f64>,
    pub q_samples: Vec<f64>,
    pub fs_hz: f64,
    pub carrier_hz: f64,
    pub t0_s: f64,
}

impl BasebandSignal {
    pub fn new(i_samples: Vec<f64>, q_samples: Vec<f64>, fs_hz: f64, carrier_hz: f64, t0_s: f64) -> Result<Self> {
        let b = Self {
            i_samples,
            q_samples,
            fs_hz,
            carrier_hz,
            t0_s,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_samples.len() != self.q_samples.len() {
            return invalid(format!(
                "I/Q length mismatch: {} vs {}",
                self.i_samples.len(),
                self.q_samples.len()
            ));
        }
        if !(self.carrier_hz > 0.0) {
            return invalid("carrier must be positive");
        }
        if !(self.fs_hz > 0.0) {
            return invalid("sampling rate must be positive");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.i_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_samples.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0_s + n as f64 / self.fs_hz
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.i_samples
            .iter()
            .zip(&self.q_samples)
            .map(|(i, q)| i.hypot(*q))
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            i_samples: vec![0.0; self.len()],
            q_samples: vec![0.0; self.len()],
            ..*self
        }
    }
}

/// Hamming-windowed sinc, unit DC gain, cutoff `cutoff_hz`.
pub fn lowpass_taps(cutoff_hz: f64, fs_hz: f64, taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / fs_hz;
    let mid = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|j| {
            let x = j as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let win = 0.54 - 0.46 * (2.0 * PI * j as f64 / (taps - 1) as f64).cos();
            sinc * win
        })
        .collect();
    let dc: f64 = h.iter().sum();
    for v in &mut h {
        *v /= dc;
    }
    h
}

/// Zero-phase application of an odd-length linear-phase FIR: the group delay
/// is removed so output sample `n` stays aligned with input sample `n`.
fn filter_centered(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, &h) in taps.iter().enumerate() {
                let k = i + j as isize - half;
                if k >= 0 && k < n {
                    acc += h * x[k as usize];
                }
            }
            acc
        })
        .collect()
}

/// Mix down to baseband and low-pass, so that
/// `x(t) ≈ I(t) cos(ω0 t) − Q(t) sin(ω0 t)` with `t` absolute time.
pub fn iq_demodulate(x: &SampledSignal, carrier_hz: f64) -> Result<BasebandSignal> {
    if !(carrier_hz > 0.0) {
        return invalid(format!("carrier must be positive, got {carrier_hz}"));
    }
    if carrier_hz >= x.fs_hz / 2.0 {
        return invalid(format!(
            "carrier {carrier_hz} Hz is not below Nyquist ({} Hz)",
            x.fs_hz / 2.0
        ));
    }
    let w0 = 2.0 * PI * carrier_hz;
    let mut i_mix = Vec::with_capacity(x.len());
    let mut q_mix = Vec::with_capacity(x.len());
    for (n, &v) in x.samples.iter().enumerate() {
        let (s, c) = (w0 * x.time(n)).sin_cos();
        i_mix.push(2.0 * v * c);
        q_mix.push(-2.0 * v * s);
    }
    let taps = lowpass_taps(CUTOFF_FRACTION * carrier_hz, x.fs_hz, IQ_FILTER_TAPS);
    Ok(BasebandSignal {
        i_samples: filter_centered(&i_mix, &taps),
        q_samples: filter_centered(&q_mix, &taps),
        fs_hz: x.fs_hz,
        carrier_hz,
        t0_s: x.t0_s,
    })
}

pub fn iq_remodulate(b: &BasebandSignal) -> Result<SampledSignal> {
    b.validate()?;
    let w0 = 2.0 * PI * b.carrier_hz;
    let samples = b
        .i_samples
        .iter()
        .zip(&b.q_samples)
        .enumerate()
        .map(|(n, (i, q))| {
            let (s, c) = (w0 * b.time(n)).sin_cos();
            i * c - q * s
        })
        .collect();
    SampledSignal::new(samples, b.fs_hz, b.t0_s)
}
