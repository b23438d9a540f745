//! Receive delay geometry, time-domain delay-and-sum, beamforming straight
//! from sparse patch codes, and strong-reflector localization/injection.

mod localize;
mod operator;

pub use localize::{inject_reflectors, localize_line, localize_reflector, place_reflectors, LocalizedReflector};
pub use operator::{build_rep_operator, rep_beamform, OperatorCache, RepOperator};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::phantom::{ArrayGeometry, RawFrame};
use crate::signal::SampledSignal;

/// Per-element receive weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Apodization {
    #[default]
    Uniform,
    Hann,
}

impl Apodization {
    pub fn weights(&self, n_elements: usize) -> Vec<f64> {
        match self {
            Apodization::Uniform => vec![1.0; n_elements],
            // symmetric Hann without the zero end points
            Apodization::Hann => (0..n_elements)
                .map(|m| {
                    let x = (m as f64 + 1.0) / (n_elements as f64 + 1.0);
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * x).cos()
                })
                .collect(),
        }
    }
}

/// Sample index `τ` and interpolation fraction `α` of the echo of the point
/// on line θ at round-trip time `nT`, per element.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    pub theta_rad: f64,
    pub n_samples: usize,
    pub n_elements: usize,
    index: Vec<usize>,
    frac: Vec<f64>,
}

impl DelayTable {
    #[inline]
    pub fn index(&self, element: usize, n: usize) -> usize {
        self.index[element * self.n_samples + n]
    }

    #[inline]
    pub fn frac(&self, element: usize, n: usize) -> f64 {
        self.frac[element * self.n_samples + n]
    }

    /// The two interpolation taps `(sample, weight)` of `(element, n)`;
    /// taps beyond the record are dropped.
    #[inline]
    pub fn taps(&self, element: usize, n: usize) -> [Option<(usize, f64)>; 2] {
        let i = self.index(element, n);
        let a = self.frac(element, n);
        let n_max = self.n_samples;
        [
            (i < n_max).then_some((i, 1.0 - a)),
            (i + 1 < n_max).then_some((i + 1, a)),
        ]
    }
}

/// Echo delay, in samples, at element offset `d` (samples of propagation
/// time) for round-trip time `n` samples on a line at angle `theta`.
#[inline]
pub fn delay_samples(n: f64, d: f64, theta: f64) -> f64 {
    0.5 * n + 0.5 * (n * n + 4.0 * d * d - 4.0 * d * n * theta.sin()).max(0.0).sqrt()
}

pub fn delay_table(geometry: &ArrayGeometry, theta_rad: f64, n_samples: usize) -> Result<DelayTable> {
    geometry.validate()?;
    if n_samples == 0 {
        return invalid("delay table needs at least one sample");
    }
    let m_count = geometry.n_elements();
    let mut index = Vec::with_capacity(m_count * n_samples);
    let mut frac = Vec::with_capacity(m_count * n_samples);
    for &x in &geometry.element_x_m {
        let d = x / geometry.c_mps * geometry.fs_hz;
        for n in 0..n_samples {
            let u = delay_samples(n as f64, d, theta_rad);
            let i = u.floor();
            index.push(i as usize);
            frac.push(u - i);
        }
    }
    Ok(DelayTable {
        theta_rad,
        n_samples,
        n_elements: m_count,
        index,
        frac,
    })
}

fn check_weights(weights: &[f64], m: usize) -> Result<()> {
    if weights.len() != m {
        return invalid(format!("{} apodization weights for {m} elements", weights.len()));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return invalid("apodization weights must be finite");
    }
    Ok(())
}

/// Delay-and-sum of the `M` channels of one line:
/// `Φ[n] = (1/M) Σ_m w_m [(1−α) φ_m[τ] + α φ_m[τ+1]]`.
pub fn das_beamform(
    channels: &[&[f64]],
    geometry: &ArrayGeometry,
    theta_rad: f64,
    weights: &[f64],
) -> Result<SampledSignal> {
    let m_count = geometry.n_elements();
    if channels.len() != m_count {
        return invalid(format!("{} channels for {m_count} elements", channels.len()));
    }
    let n = channels[0].len();
    if channels.iter().any(|c| c.len() != n) {
        return invalid("channels differ in length");
    }
    check_weights(weights, m_count)?;
    let table = delay_table(geometry, theta_rad, n)?;
    Ok(das_with_table(channels, &table, weights, geometry.fs_hz))
}

pub(crate) fn das_with_table(channels: &[&[f64]], table: &DelayTable, weights: &[f64], fs_hz: f64) -> SampledSignal {
    let n = table.n_samples;
    let scale = 1.0 / channels.len() as f64;
    let mut out = vec![0.0; n];
    for (m, ch) in channels.iter().enumerate() {
        let w = weights[m] * scale;
        for (k, o) in out.iter_mut().enumerate() {
            for (s, a) in table.taps(m, k).into_iter().flatten() {
                *o += w * a * ch[s];
            }
        }
    }
    SampledSignal {
        samples: out,
        fs_hz,
        t0_s: 0.0,
    }
}

/// Delay-and-sum of every line of a frame.
pub fn das_frame(frame: &RawFrame, weights: &[f64]) -> Result<Vec<SampledSignal>> {
    frame.validate()?;
    check_weights(weights, frame.n_elements())?;
    frame
        .line_angles
        .par_iter()
        .enumerate()
        .map(|(l, &theta)| {
            let table = delay_table(&frame.geometry, theta, frame.n_samples)?;
            let channels: Vec<&[f64]> = (0..frame.n_elements()).map(|m| frame.channel(l, m)).collect();
            Ok(das_with_table(&channels, &table, weights, frame.geometry.fs_hz))
        })
        .collect()
}
