use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ArrayGeometry, Phantom};
use crate::error::{invalid, Result};
use crate::signal::{accumulate_pulse, PulseModel, SampledSignal};

/// Pulses are accumulated over ±6σ; the envelope is below 2e-8 beyond.
const PULSE_SUPPORT_SIGMAS: f64 = 6.0;

/// Per-line, per-element sampled channel data, `channels[line][element][sample]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub geometry: ArrayGeometry,
    pub line_angles: Vec<f64>,
    pub n_samples: usize,
    pub channels: Vec<f64>,
}

impl RawFrame {
    pub fn zeros(geometry: ArrayGeometry, line_angles: Vec<f64>, n_samples: usize) -> Self {
        let len = line_angles.len() * geometry.n_elements() * n_samples;
        Self {
            geometry,
            line_angles,
            n_samples,
            channels: vec![0.0; len],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.n_samples == 0 {
            return invalid("frame has no samples");
        }
        let expect = self.line_angles.len() * self.geometry.n_elements() * self.n_samples;
        if self.channels.len() != expect {
            return invalid(format!(
                "channel tensor has {} values, geometry implies {expect}",
                self.channels.len()
            ));
        }
        Ok(())
    }

    pub fn n_lines(&self) -> usize {
        self.line_angles.len()
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.n_elements()
    }

    fn offset(&self, line: usize, element: usize) -> usize {
        (line * self.n_elements() + element) * self.n_samples
    }

    pub fn channel(&self, line: usize, element: usize) -> &[f64] {
        let o = self.offset(line, element);
        &self.channels[o..o + self.n_samples]
    }

    pub fn channel_mut(&mut self, line: usize, element: usize) -> &mut [f64] {
        let o = self.offset(line, element);
        let n = self.n_samples;
        &mut self.channels[o..o + n]
    }

    /// All `M × N` samples of one line.
    pub fn line(&self, line: usize) -> &[f64] {
        let o = self.offset(line, 0);
        &self.channels[o..o + self.n_elements() * self.n_samples]
    }

    /// Sub-frame keeping elements `range` of every line (e.g. the centre
    /// channels of a wider transmit aperture).
    pub fn select_elements(&self, range: std::ops::Range<usize>) -> Result<RawFrame> {
        if range.is_empty() || range.end > self.n_elements() {
            return invalid(format!("element range {range:?} outside 0..{}", self.n_elements()));
        }
        let geometry = ArrayGeometry {
            element_x_m: self.geometry.element_x_m[range.clone()].to_vec(),
            ..self.geometry.clone()
        };
        let mut out = RawFrame::zeros(geometry, self.line_angles.clone(), self.n_samples);
        for l in 0..self.n_lines() {
            for (k, m) in range.clone().enumerate() {
                out.channel_mut(l, k).copy_from_slice(self.channel(l, m));
            }
        }
        Ok(out)
    }

    pub fn channel_signal(&self, line: usize, element: usize) -> SampledSignal {
        SampledSignal {
            samples: self.channel(line, element).to_vec(),
            fs_hz: self.geometry.fs_hz,
            t0_s: 0.0,
        }
    }
}

/// Far-field transmit amplitude `|sinc(π A sin ψ / λ)|` at angle `psi` off the beam axis.
pub fn beam_profile(psi: f64, aperture_m: f64, wavelength_m: f64) -> f64 {
    let u = PI * aperture_m * psi.sin() / wavelength_m;
    if u.abs() < 1e-12 {
        1.0
    } else {
        (u.sin() / u).abs()
    }
}

/// Echo synthesis by linear superposition.
///
/// A scatterer at `p` seen on line θ contributes to element m a pulse at
/// `(|p| + |p − e_m|) / c` with amplitude `a · w(ψ) / |p|`, ψ being its angle
/// off the line axis in the x–z plane. Echoes beyond the record are truncated.
pub fn simulate_rx(
    phantom: &Phantom,
    geometry: &ArrayGeometry,
    line_angles: &[f64],
    pulse: &PulseModel,
    n_samples: usize,
) -> Result<RawFrame> {
    phantom.validate()?;
    geometry.validate()?;
    pulse.validate()?;
    if n_samples == 0 {
        return invalid("n_samples must be positive");
    }
    let m_count = geometry.n_elements();
    let aperture = geometry.aperture_width();
    let lambda = geometry.wavelength();
    let c = geometry.c_mps;
    let fs = geometry.fs_hz;

    // Per-line transmit weight of every scatterer.
    let weights: Vec<Vec<f64>> = line_angles
        .iter()
        .map(|&theta| {
            phantom
                .scatterers
                .iter()
                .map(|s| s.amplitude * beam_profile(s.angle() - theta, aperture, lambda) / s.range())
                .collect()
        })
        .collect();
    let models: Vec<PulseModel> = phantom
        .scatterers
        .iter()
        .map(|s| match s.corruption {
            Some(cor) => pulse.corrupted(cor.freq_shift_hz, cor.phase_rad),
            None => *pulse,
        })
        .collect();

    let mut frame = RawFrame::zeros(geometry.clone(), line_angles.to_vec(), n_samples);
    frame
        .channels
        .par_chunks_mut(n_samples)
        .enumerate()
        .for_each(|(idx, out)| {
            let (line, m) = (idx / m_count, idx % m_count);
            let ex = geometry.element_x_m[m];
            for ((s, &amp), model) in phantom.scatterers.iter().zip(&weights[line]).zip(&models) {
                if amp == 0.0 {
                    continue;
                }
                let rx = ((s.x_m - ex).powi(2) + s.y_m * s.y_m + s.z_m * s.z_m).sqrt();
                let t = (s.range() + rx) / c;
                accumulate_pulse(out, fs, 0.0, model, t, amp, PULSE_SUPPORT_SIGMAS);
            }
        });
    Ok(frame)
}
