use std::f64::consts::PI;

use num_complex::Complex64;

use super::{default_threshold, ComponentSignal, DecompositionConfig, DecompositionResult, ReflectorPulse, RENDER_SIGMAS};
use crate::error::{invalid, Result};
use crate::signal::{analytic_envelope, PulseModel, SampledSignal, Stft, TfGrid};

/// Half-size of the time-frequency neighbourhood a pulse is fitted on. It
/// spans the frames a pulse overlaps and most of its band; a 3×3 patch
/// leaves the delay poorly determined once speckle is present.
const PATCH_FRAMES: usize = 2;
const PATCH_BINS: usize = 5;
const POLISH_LEVELS: usize = 12;
/// Amplitude back-off tried when a subtraction would raise the residual peak.
const BACKOFF: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

pub(crate) struct StftContext {
    pub(crate) eng: Stft,
    /// `twiddle[k * W + j] = exp(-2πi k j / W)` for the non-negative bins.
    twiddle: Vec<Complex64>,
    pub(crate) pulse: PulseModel,
}

impl StftContext {
    pub(crate) fn new(eng: Stft, pulse: &PulseModel) -> Result<Self> {
        pulse.validate()?;
        if pulse.amplitude == 0.0 || !pulse.amplitude.is_finite() {
            return invalid("pulse signature is all zero");
        }
        let w = eng.window_len();
        let mut twiddle = Vec::with_capacity(eng.bins() * w);
        for k in 0..eng.bins() {
            for j in 0..w {
                twiddle.push(Complex64::from_polar(1.0, -2.0 * PI * ((k * j) % w) as f64 / w as f64));
            }
        }
        Ok(Self {
            eng,
            twiddle,
            pulse: *pulse,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Fit {
    amplitude: Complex64,
    delay_s: f64,
    freq_shift_hz: f64,
    misfit: f64,
}

/// Cells of the grid a fit is evaluated on: up to 3 frames × 3 bins.
#[derive(Debug, Clone, Copy)]
struct Patch {
    frames: (usize, usize),
    bins: (usize, usize),
}

pub(crate) struct StftWork<'a> {
    ctx: &'a StftContext,
    residual: TfGrid,
    strong: TfGrid,
    reflectors: Vec<ReflectorPulse>,
    threshold: f64,
    iterations: usize,
    stopped: bool,
}

impl<'a> StftWork<'a> {
    pub(crate) fn new(ctx: &'a StftContext, y: &SampledSignal, cfg: &DecompositionConfig) -> Self {
        let residual = ctx.eng.analyze(y);
        let threshold = cfg.amp_threshold.unwrap_or_else(|| {
            default_threshold(&analytic_envelope(&y.samples), cfg.threshold_factor) * unit_peak(ctx, y.fs_hz)
        });
        let strong = residual.zeros_like();
        Self {
            ctx,
            residual,
            strong,
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

    /// Runs the greedy loop until the threshold or `max_pulses` iterations;
    /// returns the pulses found by this call.
    pub(crate) fn run_base(&mut self, max_pulses: usize) -> Vec<ReflectorPulse> {
        let first_new = self.reflectors.len();
        while !self.stopped && self.iterations < max_pulses {
            let (frame, bin, peak) = self.argmax();
            if peak < self.threshold {
                self.stopped = true;
                break;
            }
            self.iterations += 1;
            let patch = self.patch(frame, bin);
            let fit = match self.search(frame, bin, patch) {
                Some(f) => f,
                None => {
                    self.stopped = true;
                    break;
                }
            };
            match self.subtract(fit, peak, false) {
                Some(r) => self.reflectors.push(r),
                None => self.stopped = true,
            }
        }
        self.reflectors[first_new..].to_vec()
    }

    /// Envelope of the time-domain residual.
    pub(crate) fn envelope(&self) -> Vec<f64> {
        let r = self.ctx.eng.synthesize(&self.residual).expect("grid built by this engine");
        analytic_envelope(&r.samples)
    }

    /// Fit and subtract one pulse near sample `n` with a known frequency shift.
    pub(crate) fn subtract_at(&mut self, n: usize, freq_shift_hz: f64) -> Option<ReflectorPulse> {
        let g = &self.residual;
        let (w, hop) = (g.window_len as f64, g.hop as f64);
        let frame = (((n as f64 + w / 2.0) / hop).round().max(0.0) as usize).min(g.frames - 1);
        let carrier = self.ctx.pulse.carrier_hz + freq_shift_hz;
        let bin = ((carrier * w / g.fs_hz).round().max(0.0) as usize).min(g.bins - 1);
        let patch = self.patch(frame, bin);
        let t_n = g.t0_s + n as f64 / g.fs_hz;
        let dt = 1.0 / g.fs_hz;
        let mut best: Option<Fit> = None;
        for i in -4..=4 {
            let t = t_n + i as f64 * dt / 8.0;
            best = better(best, self.fit(patch, t, freq_shift_hz));
        }
        let fit = self.polish_delay(patch, best, dt / 16.0)?;
        let peak = self.residual.max_abs();
        let mut r = self.subtract(fit, peak, true)?;
        r.propagated = true;
        self.reflectors.push(r);
        Some(r)
    }

    pub(crate) fn finish(self) -> Result<DecompositionResult> {
        let strong = self.ctx.eng.synthesize(&self.strong)?;
        let background = self.ctx.eng.synthesize(&self.residual)?;
        Ok(DecompositionResult {
            reflectors: self.reflectors,
            strong: ComponentSignal::Rf(strong),
            background: ComponentSignal::Rf(background),
            iterations_used: self.iterations,
            threshold: self.threshold,
        })
    }

    fn argmax(&self) -> (usize, usize, f64) {
        let g = &self.residual;
        let mut best = (0, 0, -1.0);
        for (idx, v) in g.values.iter().enumerate() {
            let m = v.norm();
            if m > best.2 {
                best = (idx / g.bins, idx % g.bins, m);
            }
        }
        best
    }

    fn patch(&self, frame: usize, bin: usize) -> Patch {
        let g = &self.residual;
        Patch {
            frames: (frame.saturating_sub(PATCH_FRAMES), (frame + PATCH_FRAMES).min(g.frames - 1)),
            bins: (bin.saturating_sub(PATCH_BINS), (bin + PATCH_BINS).min(g.bins - 1)),
        }
    }

    /// Coarse delay scan, then frequency scan, then a joint fine scan.
    fn search(&self, frame: usize, bin: usize, patch: Patch) -> Option<Fit> {
        let g = &self.residual;
        let dt = 1.0 / g.fs_hz;
        let bin_hz = g.fs_hz / g.window_len as f64;
        let f0 = self.ctx.pulse.carrier_hz;
        let centre = g.frame_time(frame);
        let df0 = g.bin_freq(bin) - f0;
        let hop = g.hop as i64;

        let mut best: Option<Fit> = None;
        for d in -hop..=hop {
            best = better(best, self.fit(patch, centre + d as f64 * dt, df0));
        }
        let t1 = best?.delay_s;
        for i in -4..=4 {
            best = better(best, self.fit(patch, t1, df0 + i as f64 * bin_hz / 4.0));
        }
        let (t2, df2) = (best?.delay_s, best?.freq_shift_hz);
        for i in -3..=3 {
            for j in -2..=2 {
                let t = t2 + i as f64 * dt / 4.0;
                let df = df2 + j as f64 * bin_hz / 16.0;
                best = better(best, self.fit(patch, t, df));
            }
        }
        self.polish(patch, best, dt / 8.0, bin_hz / 32.0)
    }

    fn polish_delay(&self, patch: Patch, mut best: Option<Fit>, mut step_t: f64) -> Option<Fit> {
        for _ in 0..POLISH_LEVELS {
            let centre = best?;
            for i in [-1.0, 1.0] {
                best = better(best, self.fit(patch, centre.delay_s + i * step_t, centre.freq_shift_hz));
            }
            step_t /= 2.0;
        }
        best
    }

    /// Compass search with halving steps; an exact pulse is fitted to
    /// round-off rather than to the grid spacing.
    fn polish(&self, patch: Patch, mut best: Option<Fit>, mut step_t: f64, mut step_f: f64) -> Option<Fit> {
        for _ in 0..POLISH_LEVELS {
            let centre = best?;
            for (i, j) in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
                let t = centre.delay_s + i as f64 * step_t;
                let df = centre.freq_shift_hz + j as f64 * step_f;
                best = better(best, self.fit(patch, t, df));
            }
            step_t /= 2.0;
            step_f /= 2.0;
        }
        best
    }

    /// Least-squares complex amplitude of the pulse at (`delay_s`, shift)
    /// against the residual cells of `patch`.
    fn fit(&self, patch: Patch, delay_s: f64, freq_shift_hz: f64) -> Option<Fit> {
        let g = &self.residual;
        let pulse = &self.ctx.pulse;
        let carrier = pulse.carrier_hz + freq_shift_hz;
        let span_end = g.t0_s + (g.signal_len as f64 - 1.0) / g.fs_hz;
        if carrier <= 0.0 || delay_s < g.t0_s || delay_s > span_end {
            return None;
        }
        let w = g.window_len;
        let pad = g.pad() as i64;
        let start = (patch.frames.0 * g.hop) as i64 - pad;
        let end = (patch.frames.1 * g.hop) as i64 - pad + w as i64;
        let half = pulse.support_s(RENDER_SIGMAS);
        let s2 = pulse.envelope_sigma_s * pulse.envelope_sigma_s;
        let q: Vec<Complex64> = (start..end)
            .map(|n| {
                if n < 0 || n >= g.signal_len as i64 {
                    return Complex64::new(0.0, 0.0);
                }
                let x = g.t0_s + n as f64 / g.fs_hz - delay_s;
                if x.abs() > half {
                    return Complex64::new(0.0, 0.0);
                }
                let env = pulse.amplitude * (-(x * x) / (2.0 * s2)).exp();
                Complex64::from_polar(env, 2.0 * PI * carrier * x + pulse.phase_rad)
            })
            .collect();

        // Model cells: a_r * C1 - a_i * C2 with C1 = STFT(Re q), C2 = STFT(Im q).
        let window = self.ctx.eng.window();
        let (mut uu, mut uv, mut vv, mut ur, mut vr, mut rr) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for f in patch.frames.0..=patch.frames.1 {
            let off = (f - patch.frames.0) * g.hop;
            for k in patch.bins.0..=patch.bins.1 {
                let tw = &self.ctx.twiddle[k * w..(k + 1) * w];
                let (mut c1, mut c2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                for j in 0..w {
                    let v = q[off + j] * window[j];
                    c1 += tw[j] * v.re;
                    c2 += tw[j] * v.im;
                }
                let u = c1;
                let v = -c2;
                let r = g.get(f, k);
                uu += u.norm_sqr();
                vv += v.norm_sqr();
                uv += (u * v.conj()).re;
                ur += (r * u.conj()).re;
                vr += (r * v.conj()).re;
                rr += r.norm_sqr();
            }
        }
        let det = uu * vv - uv * uv;
        if !(det > 1e-12 * uu * vv) {
            return None;
        }
        let ar = (vv * ur - uv * vr) / det;
        let ai = (uu * vr - uv * ur) / det;
        Some(Fit {
            amplitude: Complex64::new(ar, ai),
            delay_s,
            freq_shift_hz,
            misfit: rr - (ar * ur + ai * vr),
        })
    }

    /// Subtract the fitted pulse, backing its amplitude off if the full
    /// subtraction would raise the residual peak above `peak`.
    fn subtract(&mut self, fit: Fit, peak: f64, propagated: bool) -> Option<ReflectorPulse> {
        let pulse = &self.ctx.pulse;
        let g = &self.residual;
        let half = pulse.support_s(RENDER_SIGMAS);
        let lo = (((fit.delay_s - half - g.t0_s) * g.fs_hz).floor() as i64).max(0);
        let hi = ((((fit.delay_s + half - g.t0_s) * g.fs_hz).ceil() as i64) + 1).min(g.signal_len as i64);
        if hi <= lo {
            return None;
        }
        let unit = ReflectorPulse {
            amplitude: fit.amplitude,
            delay_s: fit.delay_s,
            freq_shift_hz: fit.freq_shift_hz,
            propagated,
        };
        let mut local = vec![0.0; (hi - lo) as usize];
        let t_lo = g.t0_s + lo as f64 / g.fs_hz;
        unit.accumulate_rf(&mut local, g.fs_hz, t_lo, super::Method::Stft, pulse);
        let frames = g.frames_touching(lo as isize, hi as isize);
        let cells = self.ctx.eng.analyze_frames(g, frames.clone(), &local, lo as isize);

        let bins = g.bins;
        let rows = frames.start * bins..frames.end * bins;
        let rest = g.values[..rows.start]
            .iter()
            .chain(&g.values[rows.end..])
            .fold(0.0_f64, |m, v| m.max(v.norm()));
        if rest > peak {
            return None;
        }
        for alpha in BACKOFF {
            let touched = g.values[rows.clone()]
                .iter()
                .zip(&cells)
                .fold(0.0_f64, |m, (r, c)| m.max((r - c * alpha).norm()));
            if touched <= peak {
                for ((r, s), c) in self.residual.values[rows.clone()]
                    .iter_mut()
                    .zip(&mut self.strong.values[rows.clone()])
                    .zip(&cells)
                {
                    *r -= c * alpha;
                    *s += c * alpha;
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

fn better(best: Option<Fit>, cand: Option<Fit>) -> Option<Fit> {
    match (best, cand) {
        (Some(b), Some(c)) if c.misfit < b.misfit => Some(c),
        (None, c) => c,
        (b, _) => b,
    }
}

/// Largest grid magnitude of a unit-amplitude pulse (model amplitude
/// included) sampled at `fs_hz`.
fn unit_peak(ctx: &StftContext, fs_hz: f64) -> f64 {
    let half = ctx.pulse.support_s(RENDER_SIGMAS);
    let n = (2.0 * half * fs_hz).ceil() as usize + 1;
    let mut samples = vec![0.0; n];
    let unit = ReflectorPulse {
        amplitude: Complex64::new(1.0, 0.0),
        delay_s: half,
        freq_shift_hz: 0.0,
        propagated: false,
    };
    unit.accumulate_rf(&mut samples, fs_hz, 0.0, super::Method::Stft, &ctx.pulse);
    ctx.eng.analyze(&SampledSignal { samples, fs_hz, t0_s: 0.0 }).max_abs()
}
