use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DecompositionConfig, DecompositionResult, IqWork, Method, ReflectorPulse, StftContext, StftWork};
use crate::error::{invalid, Result};
use crate::phantom::RawFrame;
use crate::signal::{iq_demodulate, PulseModel, Stft};

/// Per-channel results of a frame decomposition, line-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecomposition {
    pub n_lines: usize,
    pub n_elements: usize,
    pub results: Vec<DecompositionResult>,
    pub diagnostics: Vec<PropagationDiagnostic>,
}

impl FrameDecomposition {
    pub fn get(&self, line: usize, element: usize) -> &DecompositionResult {
        &self.results[line * self.n_elements + element]
    }

    pub fn total_reflectors(&self) -> usize {
        self.results.iter().map(|r| r.reflectors.len()).sum()
    }
}

/// A detected pulse that could not be propagated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationDiagnostic {
    pub line: usize,
    pub element: usize,
    pub delay_s: f64,
    pub reason: String,
}

/// Range along a line at angle `theta_rad` of a reflector whose echo reaches
/// the element at lateral position `element_x_m` after `t_s` (transmit from
/// the origin). `None` when the geometry is degenerate.
pub fn range_from_arrival(t_s: f64, element_x_m: f64, theta_rad: f64, c_mps: f64) -> Option<f64> {
    let ct = c_mps * t_s;
    let denom = ct - element_x_m * theta_rad.sin();
    if !(denom > 0.0) {
        return None;
    }
    let r = (ct * ct - element_x_m * element_x_m) / (2.0 * denom);
    (r > 0.0 && r.is_finite()).then_some(r)
}

/// Two-way travel time for a reflector at range `r_m` on the line at
/// `theta_rad`, received at `element_x_m`.
pub fn expected_arrival(r_m: f64, theta_rad: f64, element_x_m: f64, c_mps: f64) -> f64 {
    let (s, c) = theta_rad.sin_cos();
    let back = ((r_m * c).powi(2) + (r_m * s - element_x_m).powi(2)).sqrt();
    (r_m + back) / c_mps
}

enum Work<'a> {
    Stft(StftWork<'a>),
    Iq(IqWork),
}

impl Work<'_> {
    fn run_base(&mut self, max: usize) -> Vec<ReflectorPulse> {
        match self {
            Work::Stft(w) => w.run_base(max),
            Work::Iq(w) => w.run_base(max),
        }
    }

    fn envelope(&self) -> Vec<f64> {
        match self {
            Work::Stft(w) => w.envelope(),
            Work::Iq(w) => w.envelope(),
        }
    }

    fn reflectors(&self) -> &[ReflectorPulse] {
        match self {
            Work::Stft(w) => w.reflectors(),
            Work::Iq(w) => w.reflectors(),
        }
    }

    fn time_base(&self) -> (f64, f64) {
        match self {
            Work::Stft(w) => (w.fs(), w.t0()),
            Work::Iq(w) => (w.fs(), w.t0()),
        }
    }

    fn subtract_at(&mut self, n: usize, freq_shift_hz: f64) -> Option<ReflectorPulse> {
        match self {
            Work::Stft(w) => w.subtract_at(n, freq_shift_hz),
            Work::Iq(w) => w.subtract_at(n),
        }
    }

    fn finish(self) -> Result<DecompositionResult> {
        match self {
            Work::Stft(w) => w.finish(),
            Work::Iq(w) => Ok(w.finish()),
        }
    }
}

/// Decomposition that shares detections across channels.
///
/// Lines are processed in order. On each line every sensor first runs the
/// base loop; each pulse it finds is converted to a range on that line and
/// predicted on every sensor of the line and its two neighbours. Where the
/// residual envelope of a target has a local maximum within
/// `local_max_window` samples of the prediction, a pulse is fitted there
/// with the detecting pulse's frequency shift and subtracted. Targets that
/// already hold a pulse within that window are left alone.
pub fn modified_decompose(frame: &RawFrame, pulse: &PulseModel, cfg: &DecompositionConfig) -> Result<FrameDecomposition> {
    cfg.validate()?;
    frame.validate()?;
    pulse.validate()?;
    let (lines, m) = (frame.n_lines(), frame.n_elements());
    if lines == 0 || m == 0 || frame.n_samples < 3 {
        return invalid("frame has no channels to decompose");
    }
    let geometry = &frame.geometry;
    let c = geometry.c_mps;
    let ctx = match cfg.method {
        Method::Stft => Some(StftContext::new(Stft::default(), pulse)?),
        Method::Iq => None,
    };
    let mut works = (0..lines * m)
        .into_par_iter()
        .map(|idx| {
            let y = frame.channel_signal(idx / m, idx % m);
            Ok(match &ctx {
                Some(ctx) => Work::Stft(StftWork::new(ctx, &y, cfg)),
                None => Work::Iq(IqWork::new(iq_demodulate(&y, pulse.carrier_hz)?, pulse, cfg)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut envelopes: Vec<Option<Vec<f64>>> = vec![None; lines * m];
    let mut diagnostics = Vec::new();
    let window = cfg.local_max_window as i64;

    for l in 0..lines {
        let found: Vec<Vec<ReflectorPulse>> = works[l * m..(l + 1) * m]
            .par_iter_mut()
            .map(|w| w.run_base(cfg.max_pulses))
            .collect();
        for (k, f) in found.iter().enumerate() {
            if !f.is_empty() {
                envelopes[l * m + k] = None;
            }
        }
        let theta = frame.line_angles[l];
        for (src, pulses) in found.iter().enumerate() {
            for p in pulses {
                let Some(r) = range_from_arrival(p.delay_s, geometry.element_x_m[src], theta, c) else {
                    diagnostics.push(PropagationDiagnostic {
                        line: l,
                        element: src,
                        delay_s: p.delay_s,
                        reason: "range inversion is degenerate for this arrival".into(),
                    });
                    continue;
                };
                for q in l.saturating_sub(1)..=(l + 1).min(lines - 1) {
                    for s in 0..m {
                        if q == l && s == src {
                            continue;
                        }
                        let t_s = expected_arrival(r, theta, geometry.element_x_m[s], c);
                        let idx = q * m + s;
                        let (fs, t0) = works[idx].time_base();
                        let centre = ((t_s - t0) * fs).round() as i64;
                        if centre < 0 || centre >= frame.n_samples as i64 {
                            continue;
                        }
                        let tol = window as f64 / fs;
                        if works[idx].reflectors().iter().any(|r| (r.delay_s - t_s).abs() <= tol) {
                            continue;
                        }
                        let env = envelopes[idx].get_or_insert_with(|| works[idx].envelope());
                        let Some(n) = local_max(env, centre, window) else {
                            continue;
                        };
                        if works[idx].subtract_at(n, p.freq_shift_hz).is_some() {
                            envelopes[idx] = None;
                        }
                    }
                }
            }
        }
    }

    let results = works.into_iter().map(Work::finish).collect::<Result<Vec<_>>>()?;
    Ok(FrameDecomposition {
        n_lines: lines,
        n_elements: m,
        results,
        diagnostics,
    })
}

/// Largest local maximum of `env` within `centre ± window`.
fn local_max(env: &[f64], centre: i64, window: i64) -> Option<usize> {
    let lo = (centre - window).max(1);
    let hi = (centre + window).min(env.len() as i64 - 2);
    let mut best: Option<usize> = None;
    for n in lo..=hi {
        let n = n as usize;
        if env[n] >= env[n - 1] && env[n] >= env[n + 1] && env[n] > 0.0 && best.map_or(true, |b| env[n] > env[b]) {
            best = Some(n);
        }
    }
    best
}
