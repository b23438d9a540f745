use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{SampledSignal, TimeGrid};
use crate::error::{invalid, Result};

/// Known transmit pulse: a carrier at `carrier_hz` under a Gaussian envelope
/// of standard deviation `envelope_sigma_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseModel {
    pub carrier_hz: f64,
    pub envelope_sigma_s: f64,
    pub phase_rad: f64,
    pub amplitude: f64,
}

impl PulseModel {
    pub fn new(carrier_hz: f64, envelope_sigma_s: f64, phase_rad: f64) -> Result<Self> {
        let model = Self {
            carrier_hz,
            envelope_sigma_s,
            phase_rad,
            amplitude: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Pulse whose -6 dB amplitude bandwidth is `fractional_bw * carrier_hz`.
    pub fn from_fractional_bandwidth(carrier_hz: f64, fractional_bw: f64, phase_rad: f64) -> Result<Self> {
        if !(fractional_bw > 0.0) {
            return invalid(format!("fractional bandwidth must be positive, got {fractional_bw}"));
        }
        // Spectrum is exp(-(2 pi sigma f)^2 / 2); its half-amplitude width is
        // 2 sqrt(2 ln 2) / (2 pi sigma).
        let sigma = (2.0 * (2.0 * 2f64.ln()).sqrt()) / (2.0 * PI * fractional_bw * carrier_hz);
        Self::new(carrier_hz, sigma, phase_rad)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0) || !self.carrier_hz.is_finite() {
            return invalid(format!("carrier must be positive, got {}", self.carrier_hz));
        }
        if !(self.envelope_sigma_s > 0.0) || !self.envelope_sigma_s.is_finite() {
            return invalid(format!("envelope sigma must be positive, got {}", self.envelope_sigma_s));
        }
        Ok(())
    }

    /// -6 dB bandwidth over carrier.
    pub fn fractional_bandwidth(&self) -> f64 {
        (2.0 * (2.0 * 2f64.ln()).sqrt()) / (2.0 * PI * self.envelope_sigma_s * self.carrier_hz)
    }

    /// Same pulse with its carrier shifted and an extra carrier/envelope phase.
    pub fn corrupted(&self, freq_shift_hz: f64, phase_shift_rad: f64) -> Self {
        Self {
            carrier_hz: self.carrier_hz + freq_shift_hz,
            phase_rad: self.phase_rad + phase_shift_rad,
            ..*self
        }
    }

    #[inline]
    pub fn envelope(&self, t: f64) -> f64 {
        let s = self.envelope_sigma_s;
        (-(t * t) / (2.0 * s * s)).exp()
    }

    /// Pulse value at time `t` relative to its centre, unit amplitude scale.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * self.envelope(t) * (2.0 * PI * self.carrier_hz * t + self.phase_rad).cos()
    }

    /// Half-width of the support used when pulses are accumulated into buffers.
    pub fn support_s(&self, sigmas: f64) -> f64 {
        sigmas * self.envelope_sigma_s
    }
}

/// Render `amplitude * h(t - delay_s)` on `grid`, evaluated at every sample.
pub fn render_pulse(model: &PulseModel, delay_s: f64, amplitude: f64, grid: TimeGrid) -> Result<SampledSignal> {
    model.validate()?;
    let grid = TimeGrid::new(grid.len, grid.fs_hz, grid.t0_s)?;
    let samples = (0..grid.len)
        .map(|n| amplitude * model.value(grid.time(n) - delay_s))
        .collect();
    Ok(SampledSignal {
        samples,
        fs_hz: grid.fs_hz,
        t0_s: grid.t0_s,
    })
}

/// Add `amplitude * h(t - delay_s)` into `out`, limited to `delay_s ± sigmas·σ`.
///
/// Envelope and carrier are advanced by multiplicative recurrences, so the
/// inner loop has no transcendental calls. Used by the simulator and the
/// decomposition templates where millions of pulses are accumulated.
pub fn accumulate_pulse(
    out: &mut [f64],
    fs_hz: f64,
    t0_s: f64,
    model: &PulseModel,
    delay_s: f64,
    amplitude: f64,
    sigmas: f64,
) {
    if out.is_empty() || amplitude == 0.0 {
        return;
    }
    let half = model.support_s(sigmas);
    let first = ((delay_s - half - t0_s) * fs_hz).ceil().max(0.0);
    let last = ((delay_s + half - t0_s) * fs_hz).floor();
    if last < 0.0 || first > (out.len() - 1) as f64 {
        return;
    }
    let first = first as usize;
    let last = (last as usize).min(out.len() - 1);
    if first > last {
        return;
    }

    let dt = 1.0 / fs_hz;
    let s2 = model.envelope_sigma_s * model.envelope_sigma_s;
    let x0 = t0_s + first as f64 * dt - delay_s;
    let mut env = (-(x0 * x0) / (2.0 * s2)).exp();
    let mut ratio = (-(2.0 * x0 * dt + dt * dt) / (2.0 * s2)).exp();
    let ratio_step = (-(dt * dt) / s2).exp();

    let w = 2.0 * PI * model.carrier_hz;
    let (mut sn, mut cs) = (w * x0 + model.phase_rad).sin_cos();
    let (dsn, dcs) = (w * dt).sin_cos();

    let scale = amplitude * model.amplitude;
    for v in &mut out[first..=last] {
        *v += scale * env * cs;
        env *= ratio;
        ratio *= ratio_step;
        let c = cs * dcs - sn * dsn;
        sn = sn * dcs + cs * dsn;
        cs = c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PulseModel {
        PulseModel::new(3.5e6, 0.3e-6, 0.0).unwrap()
    }

    #[test]
    fn zero_amplitude_renders_zero() {
        let g = TimeGrid::new(128, 16e6, 0.0).unwrap();
        let s = render_pulse(&model(), 4e-6, 0.0, g).unwrap();
        assert!(s.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn peak_value_equals_amplitude_on_sample() {
        let g = TimeGrid::new(128, 16e6, 0.0).unwrap();
        let delay = 64.0 / 16e6;
        let s = render_pulse(&model(), delay, 2.5, g).unwrap();
        assert!((s.samples[64] - 2.5).abs() < 1e-15);
        let argmax = s
            .samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 64);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PulseModel::new(3.5e6, 0.0, 0.0).is_err());
        assert!(PulseModel::new(0.0, 1e-7, 0.0).is_err());
        let bad = PulseModel {
            envelope_sigma_s: -1.0,
            ..model()
        };
        let g = TimeGrid::new(8, 16e6, 0.0).unwrap();
        assert!(render_pulse(&bad, 0.0, 1.0, g).is_err());
        let g_bad = TimeGrid { len: 8, fs_hz: 0.0, t0_s: 0.0 };
        assert!(render_pulse(&model(), 0.0, 1.0, g_bad).is_err());
    }

    #[test]
    fn fractional_bandwidth_round_trip() {
        let p = PulseModel::from_fractional_bandwidth(3.5e6, 0.4, 0.0).unwrap();
        assert!((p.fractional_bandwidth() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn recurrence_matches_direct_formula() {
        let m = PulseModel::new(3.7e6, 0.27e-6, 0.6).unwrap();
        let fs = 16e6;
        let delay = 3.123e-6;
        let mut acc = vec![0.0; 100];
        accumulate_pulse(&mut acc, fs, 0.0, &m, delay, 1.7, 8.0);
        let g = TimeGrid::new(100, fs, 0.0).unwrap();
        let direct = render_pulse(&m, delay, 1.7, g).unwrap();
        for (a, b) in acc.iter().zip(&direct.samples) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn accumulate_clips_to_buffer() {
        let m = model();
        let mut buf = vec![0.0; 10];
        accumulate_pulse(&mut buf, 16e6, 0.0, &m, -5e-6, 1.0, 6.0);
        assert!(buf.iter().all(|&v| v == 0.0));
        accumulate_pulse(&mut buf, 16e6, 0.0, &m, 0.0, 1.0, 6.0);
        assert!((buf[0] - 1.0).abs() < 1e-15);
    }
}
