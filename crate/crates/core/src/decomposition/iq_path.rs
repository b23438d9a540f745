use num_complex::Complex64;

use super::{default_threshold, ComponentSignal, DecompositionConfig, DecompositionResult, ReflectorPulse};
use crate::signal::{BasebandSignal, PulseModel};

/// The envelope fit uses samples within ±3σ of the candidate delay.
const FIT_SIGMAS: f64 = 3.0;
const POLISH_LEVELS: usize = 10;
const BACKOFF: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

pub(crate) struct IqWork {
    residual: BasebandSignal,
    strong: BasebandSignal,
    pulse: PulseModel,
    reflectors: Vec<ReflectorPulse>,
    threshold: f64,
    iterations: usize,
    stopped: bool,
}

#[derive(Debug, Clone, Copy)]
struct Fit {
    amplitude: Complex64,
    delay_s: f64,
    gain: f64,
}

impl IqWork {
    pub(crate) fn new(y: BasebandSignal, pulse: &PulseModel, cfg: &DecompositionConfig) -> Self {
        let threshold = cfg
            .amp_threshold
            .unwrap_or_else(|| default_threshold(&y.envelope(), cfg.threshold_factor));
        Self {
            strong: y.zeros_like(),
            residual: y,
            pulse: *pulse,
            reflectors: Vec::new(),
            threshold,
            iterations: 0,
            stopped: false,
        }
    }

    pub(crate) fn reflectors(&self) -> &[ReflectorPulse] {
        &self.reflectors
    }

    pub(crate) fn fs(&self) -> f64 {
        self.residual.fs_hz
    }

    pub(crate) fn t0(&self) -> f64 {
        self.residual.t0_s
    }

    pub(crate) fn envelope(&self) -> Vec<f64> {
        self.residual.envelope()
    }

    pub(crate) fn run_base(&mut self, max_pulses: usize) -> Vec<ReflectorPulse> {
        let first_new = self.reflectors.len();
        while !self.stopped && self.iterations < max_pulses {
            let env = self.residual.envelope();
            let (n, peak) = env
                .iter()
                .enumerate()
                .fold((0, -1.0), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
            if peak < self.threshold {
                self.stopped = true;
                break;
            }
            self.iterations += 1;
            let fit = self.search(n, 1.0, 16);
            match fit.and_then(|f| self.subtract(f, peak, false)) {
                Some(r) => self.reflectors.push(r),
                None => self.stopped = true,
            }
        }
        self.reflectors[first_new..].to_vec()
    }

    pub(crate) fn subtract_at(&mut self, n: usize) -> Option<ReflectorPulse> {
        let fit = self.search(n, 0.5, 8)?;
        let peak = self.residual.envelope().iter().fold(0.0_f64, |m, v| m.max(*v));
        let r = self.subtract(fit, peak, true)?;
        self.reflectors.push(r);
        Some(r)
    }

    pub(crate) fn finish(self) -> DecompositionResult {
        DecompositionResult {
            reflectors: self.reflectors,
            strong: ComponentSignal::Baseband(self.strong),
            background: ComponentSignal::Baseband(self.residual),
            iterations_used: self.iterations,
            threshold: self.threshold,
        }
    }

    /// Best delay in `n ± reach` samples, `steps` candidates per sample.
    fn search(&self, n: usize, reach: f64, steps: usize) -> Option<Fit> {
        let b = &self.residual;
        let dt = 1.0 / b.fs_hz;
        let span_end = b.time(b.len() - 1);
        let k = (reach * steps as f64).round() as i64;
        let mut best: Option<Fit> = None;
        for i in -k..=k {
            let t = b.time(n) + i as f64 * dt / steps as f64;
            if t < b.t0_s || t > span_end {
                continue;
            }
            best = better(best, self.fit(t));
        }
        let mut step = dt / steps as f64 / 2.0;
        for _ in 0..POLISH_LEVELS {
            let centre = best?;
            for sign in [-1.0, 1.0] {
                let t = centre.delay_s + sign * step;
                if t >= b.t0_s && t <= span_end {
                    best = better(best, self.fit(t));
                }
            }
            step /= 2.0;
        }
        best
    }

    /// Least-squares `(a_I, a_Q)` of a Gaussian envelope at `delay_s`.
    fn fit(&self, delay_s: f64) -> Option<Fit> {
        let b = &self.residual;
        let sigma = self.pulse.envelope_sigma_s;
        let (lo, hi) = sample_range(b, delay_s, FIT_SIGMAS * sigma)?;
        let (mut gg, mut ig, mut qg) = (0.0, 0.0, 0.0);
        for k in lo..=hi {
            let x = b.time(k) - delay_s;
            let g = (-(x * x) / (2.0 * sigma * sigma)).exp();
            gg += g * g;
            ig += b.i_samples[k] * g;
            qg += b.q_samples[k] * g;
        }
        if gg <= 0.0 {
            return None;
        }
        Some(Fit {
            amplitude: Complex64::new(ig / gg, qg / gg),
            delay_s,
            gain: (ig * ig + qg * qg) / gg,
        })
    }

    fn subtract(&mut self, fit: Fit, peak: f64, propagated: bool) -> Option<ReflectorPulse> {
        let unit = ReflectorPulse {
            amplitude: fit.amplitude,
            delay_s: fit.delay_s,
            freq_shift_hz: 0.0,
            propagated,
        };
        let b = &self.residual;
        let n = b.len();
        let mut di = vec![0.0; n];
        let mut dq = vec![0.0; n];
        unit.accumulate_baseband(&mut di, &mut dq, b.fs_hz, b.t0_s, &self.pulse);
        for alpha in BACKOFF {
            let new_peak = (0..n).fold(0.0_f64, |m, k| {
                m.max((b.i_samples[k] - alpha * di[k]).hypot(b.q_samples[k] - alpha * dq[k]))
            });
            if new_peak <= peak {
                let (r, s) = (&mut self.residual, &mut self.strong);
                for k in 0..n {
                    if di[k] != 0.0 || dq[k] != 0.0 {
                        r.i_samples[k] -= alpha * di[k];
                        r.q_samples[k] -= alpha * dq[k];
                        s.i_samples[k] += alpha * di[k];
                        s.q_samples[k] += alpha * dq[k];
                    }
                }
                return Some(ReflectorPulse {
                    amplitude: fit.amplitude * alpha,
                    ..unit
                });
            }
        }
        None
    }
}

fn sample_range(b: &BasebandSignal, centre_s: f64, half_s: f64) -> Option<(usize, usize)> {
    let lo = ((centre_s - half_s - b.t0_s) * b.fs_hz).ceil().max(0.0);
    let hi = ((centre_s + half_s - b.t0_s) * b.fs_hz).floor().min((b.len() - 1) as f64);
    if hi < lo {
        return None;
    }
    Some((lo as usize, hi as usize))
}

fn better(best: Option<Fit>, cand: Option<Fit>) -> Option<Fit> {
    match (best, cand) {
        (Some(b), Some(c)) if c.gain > b.gain => Some(c),
        (None, c) => c,
        (b, _) => b,
    }
}
