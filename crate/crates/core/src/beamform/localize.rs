use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::decomposition::{range_from_arrival, Method, ReflectorPulse};
use crate::error::{invalid, Error, Result};
use crate::phantom::ArrayGeometry;
use crate::signal::{accumulate_pulse, PulseModel, SampledSignal};

const MAX_ITERS: usize = 100;
const RENDER_SIGMAS: f64 = 6.0;

/// A strong reflector placed in the image plane, with the pulse parameters
/// needed to render it into a beamformed line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizedReflector {
    pub x_m: f64,
    pub z_m: f64,
    pub amplitude: f64,
    /// Carrier phase relative to the pulse centre.
    pub phase_rad: f64,
    pub freq_shift_hz: f64,
    /// RMS path-length mismatch of the fit, in metres.
    pub residual_of_fit_m: f64,
    pub n_arrivals: usize,
}

impl LocalizedReflector {
    pub fn range(&self) -> f64 {
        self.x_m.hypot(self.z_m)
    }
}

/// Least-squares position from per-element arrival times: minimizes
/// `Σ (|p| + |p − e_m| − c t_m)²` by damped Gauss–Newton started on the line
/// axis. Pulse fields are left at zero.
pub fn localize_reflector(arrivals: &[(usize, f64)], geometry: &ArrayGeometry, theta_rad: f64) -> Result<LocalizedReflector> {
    if arrivals.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} arrival(s); localization needs at least 2",
            arrivals.len()
        )));
    }
    let c = geometry.c_mps;
    let mut obs = Vec::with_capacity(arrivals.len());
    for &(m, t) in arrivals {
        if m >= geometry.n_elements() {
            return invalid(format!("element {m} out of range"));
        }
        if !(t > 0.0) || !t.is_finite() {
            return invalid(format!("arrival time {t} must be positive"));
        }
        obs.push((geometry.element_x_m[m], c * t));
    }
    let mut paths: Vec<f64> = obs.iter().map(|o| o.1).collect();
    paths.sort_by(f64::total_cmp);
    let r0 = paths[paths.len() / 2] / 2.0;
    let mut p = [r0 * theta_rad.sin(), r0 * theta_rad.cos()];

    let cost = |p: &[f64; 2]| -> f64 { obs.iter().map(|&(x, l)| residual(p, x, l).powi(2)).sum() };
    let mut current = cost(&p);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERS {
        // normal equations J^T J δ = -J^T r
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, l) in &obs {
            let r = residual(&p, x, l);
            let d0 = p[0].hypot(p[1]).max(1e-12);
            let d1 = (p[0] - x).hypot(p[1]).max(1e-12);
            let j = [p[0] / d0 + (p[0] - x) / d1, p[1] / d0 + p[1] / d1];
            a11 += j[0] * j[0];
            a12 += j[0] * j[1];
            a22 += j[1] * j[1];
            b1 -= j[0] * r;
            b2 -= j[1] * r;
        }
        let mut improved = false;
        for _ in 0..20 {
            let (m11, m22) = (a11 * (1.0 + lambda), a22 * (1.0 + lambda));
            let det = m11 * m22 - a12 * a12;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let step = [(m22 * b1 - a12 * b2) / det, (m11 * b2 - a12 * b1) / det];
            let trial = [p[0] + step[0], p[1] + step[1]];
            let c_trial = cost(&trial);
            if c_trial <= current {
                let small = step[0].hypot(step[1]) < 1e-13;
                p = trial;
                current = c_trial;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    // The mirror image below the array fits equally well.
    let z = p[1].abs();
    if z == 0.0 {
        return invalid("localized position lies on the array");
    }
    Ok(LocalizedReflector {
        x_m: p[0],
        z_m: z,
        amplitude: 0.0,
        phase_rad: 0.0,
        freq_shift_hz: 0.0,
        residual_of_fit_m: (current / obs.len() as f64).sqrt(),
        n_arrivals: obs.len(),
    })
}

fn residual(p: &[f64; 2], x: f64, path: f64) -> f64 {
    p[0].hypot(p[1]) + (p[0] - x).hypot(p[1]) - path
}

/// Group the reflector pulses found on the elements of one line into
/// physical reflectors and localize each group.
///
/// Every pulse is mapped to the range it implies on the line axis; pulses
/// whose implied ranges chain together within `tolerance_m` form one group,
/// keeping at most one pulse per element. Pulse amplitude, phase and
/// frequency shift are taken from the group member nearest the array centre.
/// A group seen on a single element is kept at its on-axis range.
pub fn localize_line(
    pulses: &[Vec<ReflectorPulse>],
    geometry: &ArrayGeometry,
    theta_rad: f64,
    method: Method,
    pulse: &PulseModel,
    tolerance_m: f64,
) -> Result<Vec<LocalizedReflector>> {
    if pulses.len() != geometry.n_elements() {
        return invalid(format!(
            "{} pulse lists for {} elements",
            pulses.len(),
            geometry.n_elements()
        ));
    }
    let c = geometry.c_mps;
    // (implied range, element, pulse index)
    let mut found: Vec<(f64, usize, usize)> = Vec::new();
    for (m, list) in pulses.iter().enumerate() {
        for (i, p) in list.iter().enumerate() {
            if let Some(r) = range_from_arrival(p.delay_s, geometry.element_x_m[m], theta_rad, c) {
                found.push((r, m, i));
            }
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut out = Vec::new();
    let mut start = 0;
    while start < found.len() {
        let mut end = start + 1;
        while end < found.len() && found[end].0 - found[end - 1].0 <= tolerance_m {
            end += 1;
        }
        let group = &found[start..end];
        start = end;

        let mut ranges: Vec<f64> = group.iter().map(|g| g.0).collect();
        ranges.sort_by(f64::total_cmp);
        let centre = ranges[ranges.len() / 2];
        let mut per_element: Vec<(usize, usize, f64)> = Vec::new();
        for &(r, m, i) in group {
            match per_element.iter_mut().find(|e| e.0 == m) {
                Some(e) if (r - centre).abs() < (e.2 - centre).abs() => *e = (m, i, r),
                Some(_) => {}
                None => per_element.push((m, i, r)),
            }
        }
        let reference = per_element
            .iter()
            .min_by(|a, b| geometry.element_x_m[a.0].abs().total_cmp(&geometry.element_x_m[b.0].abs()))
            .copied()
            .expect("groups are non-empty");
        let rp = &pulses[reference.0][reference.1];

        let mut loc = if per_element.len() >= 2 {
            let arrivals: Vec<(usize, f64)> = per_element
                .iter()
                .map(|&(m, i, _)| (m, pulses[m][i].delay_s))
                .collect();
            localize_reflector(&arrivals, geometry, theta_rad)?
        } else {
            LocalizedReflector {
                x_m: reference.2 * theta_rad.sin(),
                z_m: reference.2 * theta_rad.cos(),
                amplitude: 0.0,
                phase_rad: 0.0,
                freq_shift_hz: 0.0,
                residual_of_fit_m: 0.0,
                n_arrivals: 1,
            }
        };
        loc.amplitude = rp.amplitude.norm();
        match method {
            Method::Stft => {
                loc.phase_rad = rp.amplitude.arg();
                loc.freq_shift_hz = rp.freq_shift_hz;
            }
            Method::Iq => {
                // baseband phase is referenced to absolute time
                loc.phase_rad = rp.amplitude.arg() + 2.0 * PI * pulse.carrier_hz * rp.delay_s;
            }
        }
        out.push(loc);
    }
    Ok(out)
}

/// Assigns reflectors localized on every line of a sector to the line nearest
/// their direction. A reflector seen through side lobes is localized by
/// several lines; estimates closer than `merge_tolerance_m` are merged,
/// keeping the one from the line pointing closest to it.
pub fn place_reflectors(
    per_line: &[Vec<LocalizedReflector>],
    angles_rad: &[f64],
    merge_tolerance_m: f64,
) -> Result<Vec<Vec<LocalizedReflector>>> {
    if per_line.len() != angles_rad.len() {
        return invalid(format!("{} reflector lists for {} lines", per_line.len(), angles_rad.len()));
    }
    if !(merge_tolerance_m >= 0.0) {
        return invalid("merge tolerance must be non-negative");
    }
    let nearest = |dir: f64| -> usize {
        (0..angles_rad.len())
            .min_by(|&a, &b| (angles_rad[a] - dir).abs().total_cmp(&(angles_rad[b] - dir).abs()))
            .expect("at least one line")
    };
    // (off-axis angle of the estimate on its own line, target line, reflector)
    let mut all: Vec<(f64, usize, LocalizedReflector)> = Vec::new();
    for (l, list) in per_line.iter().enumerate() {
        for r in list {
            let dir = r.x_m.atan2(r.z_m);
            all.push(((dir - angles_rad[l]).abs(), nearest(dir), *r));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut kept: Vec<(usize, LocalizedReflector)> = Vec::new();
    for (_, line, r) in all {
        let dup = kept
            .iter()
            .any(|(_, k)| (k.x_m - r.x_m).hypot(k.z_m - r.z_m) <= merge_tolerance_m);
        if !dup {
            kept.push((line, r));
        }
    }
    let mut out = vec![Vec::new(); angles_rad.len()];
    for (line, r) in kept {
        out[line].push(r);
    }
    Ok(out)
}

/// Adds `a · h(t − 2r/c)` per reflector, `r` being its range.
pub fn inject_reflectors(line: &SampledSignal, reflectors: &[LocalizedReflector], pulse: &PulseModel, c_mps: f64) -> SampledSignal {
    let mut out = line.clone();
    for r in reflectors {
        let model = pulse.corrupted(r.freq_shift_hz, r.phase_rad);
        let delay = 2.0 * r.range() / c_mps;
        accumulate_pulse(&mut out.samples, line.fs_hz, line.t0_s, &model, delay, r.amplitude, RENDER_SIGMAS);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x_m: f64, z_m: f64, amplitude: f64) -> LocalizedReflector {
        LocalizedReflector {
            x_m,
            z_m,
            amplitude,
            phase_rad: 0.0,
            freq_shift_hz: 0.0,
            residual_of_fit_m: 0.0,
            n_arrivals: 4,
        }
    }

    #[test]
    fn side_lobe_estimates_merge_onto_the_nearest_line() {
        let angles = [-0.1, 0.0, 0.1];
        let (x, z) = (0.1_f64.sin() * 0.05, 0.1_f64.cos() * 0.05);
        // seen weakly from the centre line, strongly from its own line
        let per_line = vec![vec![], vec![at(x + 2e-4, z, 3.0)], vec![at(x, z, 50.0), at(0.0, 0.03, 1.0)]];
        let placed = place_reflectors(&per_line, &angles, 1e-3).unwrap();
        assert!(placed[0].is_empty());
        assert_eq!(placed[1], vec![at(0.0, 0.03, 1.0)]);
        assert_eq!(placed[2], vec![at(x, z, 50.0)]);
        let unmerged = place_reflectors(&per_line, &angles, 0.0).unwrap();
        assert_eq!(unmerged[2].len(), 2);
        assert_eq!(unmerged[1].len(), 1);
    }

    #[test]
    fn two_arrivals_are_required() {
        let g = ArrayGeometry::standard(4);
        assert!(matches!(
            localize_reflector(&[(0, 1e-5)], &g, 0.0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn exact_arrivals_are_inverted() {
        let g = ArrayGeometry::standard(16);
        let p = [0.004_f64, 0.05];
        let arr: Vec<(usize, f64)> = g
            .element_x_m
            .iter()
            .enumerate()
            .map(|(m, &x)| (m, (p[0].hypot(p[1]) + (p[0] - x).hypot(p[1])) / g.c_mps))
            .collect();
        let loc = localize_reflector(&arr, &g, 0.05).unwrap();
        assert!((loc.x_m - p[0]).abs() < 1e-7);
        assert!((loc.z_m - p[1]).abs() < 1e-7);
        assert!(loc.residual_of_fit_m < 1e-9);
    }
}
