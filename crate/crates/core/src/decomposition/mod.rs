//! Greedy separation of a raw channel signal into a strong-reflector
//! component and a speckle background.
//!
//! Two base methods share one loop shape: locate the strongest residual
//! peak, fit the known pulse there, subtract it, repeat until the residual
//! peak falls below the threshold or `max_pulses` pulses were taken. The
//! STFT method works on the time–frequency grid and also estimates a
//! per-pulse frequency shift; the IQ method fits a Gaussian envelope to the
//! I and Q components. [`modified_decompose`] additionally propagates every
//! detected pulse to all sensors of the current and adjacent scan lines.

mod iq_path;
mod modified;
mod stft_path;

pub use modified::{expected_arrival, range_from_arrival, FrameDecomposition, PropagationDiagnostic};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::phantom::RawFrame;
use crate::signal::{accumulate_pulse, iq_demodulate, BasebandSignal, PulseModel, SampledSignal, Stft};

pub(crate) use iq_path::IqWork;
pub(crate) use stft_path::{StftContext, StftWork};

/// Pulses are rendered over ±6σ of their envelope.
pub(crate) const RENDER_SIGMAS: f64 = 6.0;
/// Default threshold in units of the median residual envelope.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stft,
    Iq,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Stft => "stft",
            Method::Iq => "iq",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stft" => Ok(Method::Stft),
            "iq" => Ok(Method::Iq),
            other => invalid(format!("unknown decomposition method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompositionConfig {
    /// Maximum number of pulses taken per signal by the base loop.
    pub max_pulses: usize,
    /// Stop once the residual peak drops below this. On the STFT path the
    /// peak is a grid magnitude, on the IQ path an envelope value. `None`
    /// derives it from the input, see `threshold_factor`.
    pub amp_threshold: Option<f64>,
    /// With no explicit threshold: this many times the median of the input's
    /// envelope (over its non-silent part). The STFT path converts it to grid
    /// units with the grid peak of a unit-amplitude pulse, so one factor
    /// means the same echo amplitude for both methods.
    pub threshold_factor: f64,
    pub method: Method,
    pub modified: bool,
    /// Half-width, in samples, of the search for a local maximum around a
    /// propagated arrival time.
    pub local_max_window: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            max_pulses: 20,
            amp_threshold: None,
            threshold_factor: DEFAULT_THRESHOLD_FACTOR,
            method: Method::Stft,
            modified: false,
            local_max_window: 3,
        }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.amp_threshold {
            if !(t > 0.0) || !t.is_finite() {
                return invalid(format!("amplitude threshold must be positive, got {t}"));
            }
        }
        if !(self.threshold_factor > 0.0) || !self.threshold_factor.is_finite() {
            return invalid(format!("threshold factor must be positive, got {}", self.threshold_factor));
        }
        Ok(())
    }
}

/// One detected strong reflection.
///
/// `amplitude` is complex: on the STFT path the pulse is
/// `Re{a · h_a(t − t_k)}` where `h_a` is the analytic pulse at carrier
/// `f0 + freq_shift_hz`; on the IQ path it is `a_I + j a_Q`, the baseband
/// amplitudes of the Gaussian envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectorPulse {
    pub amplitude: Complex64,
    pub delay_s: f64,
    pub freq_shift_hz: f64,
    /// Subtracted because a pulse on another sensor or line predicted it.
    #[serde(default)]
    pub propagated: bool,
}

impl ReflectorPulse {
    /// RF rendering of this pulse, accumulated into `out`.
    ///
    /// STFT path: `Re{a · h_a(t − t_k)}` at carrier `f0 + freq_shift_hz`.
    /// IQ path: `Re{a · g(t − t_k) · exp(2πi f0 t)}`, the remodulation of the
    /// baseband pulse (carrier phase referenced to absolute time).
    pub fn accumulate_rf(&self, out: &mut [f64], fs_hz: f64, t0_s: f64, method: Method, pulse: &PulseModel) {
        let model = match method {
            Method::Stft => pulse.corrupted(self.freq_shift_hz, self.amplitude.arg()),
            Method::Iq => PulseModel {
                carrier_hz: pulse.carrier_hz,
                envelope_sigma_s: pulse.envelope_sigma_s,
                phase_rad: self.amplitude.arg() + 2.0 * std::f64::consts::PI * pulse.carrier_hz * self.delay_s,
                amplitude: 1.0,
            },
        };
        accumulate_pulse(out, fs_hz, t0_s, &model, self.delay_s, self.amplitude.norm(), RENDER_SIGMAS);
    }

    /// Baseband rendering `a · g(t − t_k)` (IQ path), accumulated into `i`, `q`.
    pub fn accumulate_baseband(&self, i: &mut [f64], q: &mut [f64], fs_hz: f64, t0_s: f64, pulse: &PulseModel) {
        let sigma = pulse.envelope_sigma_s;
        let half = sigma * RENDER_SIGMAS;
        let n = i.len().min(q.len());
        if n == 0 {
            return;
        }
        let lo = ((self.delay_s - half - t0_s) * fs_hz).ceil().max(0.0) as usize;
        let hi = ((self.delay_s + half - t0_s) * fs_hz).floor();
        if hi < 0.0 {
            return;
        }
        let hi = (hi as usize).min(n - 1);
        for k in lo..=hi {
            let x = t0_s + k as f64 / fs_hz - self.delay_s;
            let g = (-(x * x) / (2.0 * sigma * sigma)).exp();
            i[k] += self.amplitude.re * g;
            q[k] += self.amplitude.im * g;
        }
    }
}

/// Render `reflectors` in the domain of `like` (same length, rate and origin).
pub fn reconstruct(reflectors: &[ReflectorPulse], method: Method, pulse: &PulseModel, like: &ComponentSignal) -> ComponentSignal {
    match like {
        ComponentSignal::Rf(s) => {
            let mut out = vec![0.0; s.len()];
            for r in reflectors {
                r.accumulate_rf(&mut out, s.fs_hz, s.t0_s, method, pulse);
            }
            ComponentSignal::Rf(SampledSignal {
                samples: out,
                ..s.clone()
            })
        }
        ComponentSignal::Baseband(b) => {
            let mut out = b.zeros_like();
            for r in reflectors {
                r.accumulate_baseband(&mut out.i_samples, &mut out.q_samples, b.fs_hz, b.t0_s, pulse);
            }
            ComponentSignal::Baseband(out)
        }
    }
}

/// A component in the domain the decomposition ran in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComponentSignal {
    Rf(SampledSignal),
    Baseband(BasebandSignal),
}

impl ComponentSignal {
    pub fn len(&self) -> usize {
        match self {
            ComponentSignal::Rf(s) => s.len(),
            ComponentSignal::Baseband(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real-valued view: RF samples, or I followed by Q.
    pub fn flat(&self) -> Vec<f64> {
        match self {
            ComponentSignal::Rf(s) => s.samples.clone(),
            ComponentSignal::Baseband(b) => b.i_samples.iter().chain(&b.q_samples).copied().collect(),
        }
    }

    /// Back to RF: identity for RF, IQ remodulation for baseband.
    pub fn to_rf(&self) -> Result<SampledSignal> {
        match self {
            ComponentSignal::Rf(s) => Ok(s.clone()),
            ComponentSignal::Baseband(b) => crate::signal::iq_remodulate(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub reflectors: Vec<ReflectorPulse>,
    pub strong: ComponentSignal,
    pub background: ComponentSignal,
    /// Base-loop iterations; propagated subtractions are not counted.
    pub iterations_used: usize,
    pub threshold: f64,
}

impl DecompositionResult {
    pub fn own_reflectors(&self) -> impl Iterator<Item = &ReflectorPulse> {
        self.reflectors.iter().filter(|r| !r.propagated)
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `factor ×` median of the envelope over its support (values above 1e-9 of
/// its peak). Leading and trailing silence would otherwise pull the median
/// to zero.
pub(crate) fn default_threshold(envelope: &[f64], factor: f64) -> f64 {
    let peak = envelope.iter().fold(0.0_f64, |m, v| m.max(*v));
    let support: Vec<f64> = envelope.iter().copied().filter(|v| *v > 1e-9 * peak).collect();
    let t = factor * median(support);
    if t > 0.0 {
        t
    } else {
        f64::MIN_POSITIVE
    }
}

/// Algorithm-1 style decomposition on the short-time Fourier grid.
pub fn stft_decompose(y: &SampledSignal, pulse: &PulseModel, cfg: &DecompositionConfig) -> Result<DecompositionResult> {
    cfg.validate()?;
    if cfg.method != Method::Stft {
        return invalid("stft_decompose called with a non-STFT configuration");
    }
    let ctx = StftContext::new(Stft::default(), pulse)?;
    let mut work = StftWork::new(&ctx, y, cfg);
    work.run_base(cfg.max_pulses);
    work.finish()
}

/// Envelope-fitting decomposition of a baseband signal.
pub fn iq_decompose(y: &BasebandSignal, pulse: &PulseModel, cfg: &DecompositionConfig) -> Result<DecompositionResult> {
    cfg.validate()?;
    if cfg.method != Method::Iq {
        return invalid("iq_decompose called with a non-IQ configuration");
    }
    y.validate()?;
    pulse.validate()?;
    let mut work = IqWork::new(y.clone(), pulse, cfg);
    work.run_base(cfg.max_pulses);
    Ok(work.finish())
}

/// Decompose an RF signal with the configured method (IQ demodulates first).
pub fn decompose_rf(y: &SampledSignal, pulse: &PulseModel, cfg: &DecompositionConfig) -> Result<DecompositionResult> {
    match cfg.method {
        Method::Stft => stft_decompose(y, pulse, cfg),
        Method::Iq => iq_decompose(&iq_demodulate(y, pulse.carrier_hz)?, pulse, cfg),
    }
}

/// Decompose every channel of a frame; dispatches to the modified variant
/// when `cfg.modified` is set.
pub fn decompose_frame(frame: &RawFrame, pulse: &PulseModel, cfg: &DecompositionConfig) -> Result<FrameDecomposition> {
    frame.validate()?;
    if cfg.modified {
        return modified_decompose(frame, pulse, cfg);
    }
    let (lines, m) = (frame.n_lines(), frame.n_elements());
    let results = (0..lines * m)
        .into_par_iter()
        .map(|idx| decompose_rf(&frame.channel_signal(idx / m, idx % m), pulse, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameDecomposition {
        n_lines: lines,
        n_elements: m,
        results,
        diagnostics: Vec::new(),
    })
}

pub use modified::modified_decompose;
