use std::sync::Arc;

use echosplit::beamform::*;
use echosplit::decomposition::{decompose_frame, DecompositionConfig, Method};
use echosplit::phantom::{simulate_rx, ArrayGeometry, Phantom, RawFrame, Scatterer};
use echosplit::signal::{analytic_envelope, PulseModel, SampledSignal};
use echosplit::sparse::{decode_frame, Dictionary, SparseCode, SparseVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pulse() -> PulseModel {
    PulseModel::new(3.5e6, 0.3e-6, 0.0).unwrap()
}

/// Echo time of the point on line θ at round-trip time `t`, seen by the
/// element at `x`, from the geometry directly.
fn oracle_delay(t: f64, x: f64, theta: f64, c: f64) -> f64 {
    let r = c * t / 2.0;
    let p = (r * theta.sin(), r * theta.cos());
    (r + (p.0 - x).hypot(p.1)) / c
}

/// Time-domain delay-and-sum written out independently of the library.
fn oracle_das(channels: &[Vec<f64>], xs: &[f64], theta: f64, w: &[f64], fs: f64, c: f64) -> Vec<f64> {
    let n = channels[0].len();
    let m_count = channels.len() as f64;
    (0..n)
        .map(|k| {
            let mut acc = 0.0;
            for (m, ch) in channels.iter().enumerate() {
                let u = oracle_delay(k as f64 / fs, xs[m], theta, c) * fs;
                let i = u.floor() as usize;
                let a = u - u.floor();
                let v0 = if i < n { ch[i] } else { 0.0 };
                let v1 = if i + 1 < n { ch[i + 1] } else { 0.0 };
                acc += w[m] * ((1.0 - a) * v0 + a * v1);
            }
            acc / m_count
        })
        .collect()
}

struct Draw {
    geom: ArrayGeometry,
    theta: f64,
    dict: Arc<Dictionary>,
    weights: Vec<f64>,
    code: SparseCode,
}

fn draw(seed: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=8);
    let p = rng.random_range(1..=4);
    let q = rng.random_range(1..=16);
    let k = rng.random_range(1..=32);
    let pitch = rng.random_range(0.1e-3..1.0e-3);
    let geom = ArrayGeometry::linear(m, pitch, pitch * 0.8, 1540.0, 16e6, 3.5e6).unwrap();
    let theta = rng.random_range(-0.8..0.8);
    let dict = Arc::new(Dictionary::random(q, k, rng.random()).unwrap());
    let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.5)).collect();
    let n = p * q;
    let mut patches = Vec::new();
    for _ in 0..m * p {
        let nnz = rng.random_range(0..=k.min(4));
        let mut entries: Vec<(usize, f64)> = Vec::new();
        while entries.len() < nnz {
            let i = rng.random_range(0..k);
            if entries.iter().all(|e| e.0 != i) {
                entries.push((i, rng.random_range(-2.0..2.0)));
            }
        }
        patches.push(SparseVector { entries });
    }
    let code = SparseCode {
        n_lines: 1,
        n_elements: m,
        n_patches: p,
        patch_len: q,
        n_atoms: k,
        n_samples: n,
        patches,
    };
    Draw {
        geom,
        theta,
        dict,
        weights,
        code,
    }
}

fn channels_of(d: &Draw) -> Vec<Vec<f64>> {
    let frame = RawFrame::zeros(d.geom.clone(), vec![d.theta], d.code.n_samples);
    let rec = decode_frame(&d.code, &d.dict, &frame).unwrap();
    (0..d.geom.n_elements()).map(|m| rec.channel(0, m).to_vec()).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn representation_domain_matches_time_domain(seed in any::<u64>()) {
        let d = draw(seed);
        let op = build_rep_operator(&d.geom, d.theta, Arc::clone(&d.dict), &d.weights, d.code.n_samples).unwrap();
        let phi = rep_beamform(&op, &d.code, 0).unwrap();
        let ch = channels_of(&d);
        let oracle = oracle_das(&ch, &d.geom.element_x_m, d.theta, &d.weights, d.geom.fs_hz, d.geom.c_mps);
        let scale = max_abs(&oracle).max(max_abs(&ch.concat())).max(1e-300);
        let err = phi.samples.iter().zip(&oracle).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err <= 1e-9 * scale, "err {} scale {}", err, scale);

        let refs: Vec<&[f64]> = ch.iter().map(Vec::as_slice).collect();
        let das = das_beamform(&refs, &d.geom, d.theta, &d.weights).unwrap();
        let err = das.samples.iter().zip(&oracle).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err <= 1e-9 * scale);
    }

    #[test]
    fn operator_is_linear_in_the_codes(seed in any::<u64>()) {
        let a = draw(seed);
        let mut b_code = draw(seed).code;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for p in &mut b_code.patches {
            for e in &mut p.entries {
                e.1 = rng.random_range(-1.0..1.0);
            }
        }
        let mut sum = a.code.clone();
        for (s, b) in sum.patches.iter_mut().zip(&b_code.patches) {
            for (x, y) in s.entries.iter_mut().zip(&b.entries) {
                x.1 += y.1;
            }
        }
        let op = build_rep_operator(&a.geom, a.theta, Arc::clone(&a.dict), &a.weights, a.code.n_samples).unwrap();
        let pa = rep_beamform(&op, &a.code, 0).unwrap();
        let pb = rep_beamform(&op, &b_code, 0).unwrap();
        let ps = rep_beamform(&op, &sum, 0).unwrap();
        let scale = max_abs(&ps.samples).max(1.0);
        for i in 0..ps.len() {
            prop_assert!((ps.samples[i] - pa.samples[i] - pb.samples[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn delay_index_is_non_decreasing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = ArrayGeometry::standard(rng.random_range(1..64));
        let theta = rng.random_range(-1.5..1.5);
        let t = delay_table(&geom, theta, 800).unwrap();
        for m in 0..geom.n_elements() {
            for n in 1..800 {
                prop_assert!(t.index(m, n) >= t.index(m, n - 1));
            }
        }
    }
}

#[test]
fn row_nonzeros_are_bounded() {
    for seed in 0..20 {
        let d = draw(seed);
        let op = build_rep_operator(&d.geom, d.theta, Arc::clone(&d.dict), &d.weights, d.code.n_samples).unwrap();
        let bound = 2 * d.geom.n_elements() * d.dict.n_atoms();
        for n in 0..d.code.n_samples {
            assert!(op.row_nnz(n) <= bound);
        }
    }
}

#[test]
fn rebuilding_is_deterministic() {
    let d = draw(3);
    let a = build_rep_operator(&d.geom, d.theta, Arc::clone(&d.dict), &d.weights, d.code.n_samples).unwrap();
    let b = build_rep_operator(&d.geom, d.theta, Arc::clone(&d.dict), &d.weights, d.code.n_samples).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.to_dense(), b.to_dense());
}

#[test]
fn single_coefficient_is_an_interpolated_atom() {
    let geom = ArrayGeometry::linear(3, 0.5e-3, 0.4e-3, 1540.0, 16e6, 3.5e6).unwrap();
    let dict = Arc::new(Dictionary::random(8, 12, 5).unwrap());
    let (m, p, k, z) = (2, 1, 5, 1.7);
    let mut patches = vec![SparseVector::default(); 3 * 3];
    patches[m * 3 + p] = SparseVector { entries: vec![(k, z)] };
    let code = SparseCode {
        n_lines: 1,
        n_elements: 3,
        n_patches: 3,
        patch_len: 8,
        n_atoms: 12,
        n_samples: 24,
        patches,
    };
    let w = [0.5, 1.0, 2.0];
    let op = build_rep_operator(&geom, 0.3, Arc::clone(&dict), &w, 24).unwrap();
    let phi = rep_beamform(&op, &code, 0).unwrap();
    // element timeline: atom k scaled by z in samples 8..16
    let mut timeline = vec![0.0; 24];
    for (r, a) in dict.atom(k).iter().enumerate() {
        timeline[8 + r] = z * a;
    }
    for n in 0..24 {
        let u = oracle_delay(n as f64 / 16e6, geom.element_x_m[m], 0.3, 1540.0) * 16e6;
        let i = u.floor() as usize;
        let a = u - u.floor();
        let v0 = timeline.get(i).copied().unwrap_or(0.0);
        let v1 = timeline.get(i + 1).copied().unwrap_or(0.0);
        let expect = w[m] / 3.0 * ((1.0 - a) * v0 + a * v1);
        assert!((phi.samples[n] - expect).abs() < 1e-12, "n {n}");
    }
}

#[test]
fn mismatched_layouts_are_rejected() {
    let d = draw(11);
    let op = build_rep_operator(&d.geom, d.theta, Arc::clone(&d.dict), &d.weights, d.code.n_samples).unwrap();
    let mut short = d.code.clone();
    short.n_elements += 1;
    assert!(rep_beamform(&op, &short, 0).is_err());
    assert!(rep_beamform(&op, &d.code, 1).is_err());
    let a = [0.0; 4];
    let b = [0.0; 5];
    let g = ArrayGeometry::standard(2);
    assert!(das_beamform(&[&a, &b], &g, 0.0, &[1.0, 1.0]).is_err());
}

#[test]
fn zero_codes_give_zero_line() {
    let mut d = draw(4);
    d.code.patches.iter_mut().for_each(|p| p.entries.clear());
    let op = build_rep_operator(&d.geom, d.theta, Arc::clone(&d.dict), &d.weights, d.code.n_samples).unwrap();
    assert!(rep_beamform(&op, &d.code, 0).unwrap().samples.iter().all(|v| *v == 0.0));
}

#[test]
fn das_trivial_cases() {
    let g = ArrayGeometry::new(vec![0.0], 1e-4, 1540.0, 16e6, 3.5e6).unwrap();
    let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
    let y = das_beamform(&[&x], &g, 0.4, &[1.0]).unwrap();
    assert_eq!(y.samples, x);

    // elements all at the origin would not be a valid array; place them at
    // offsets too small to move any tap
    let g = ArrayGeometry::new(vec![-1e-16, 0.0, 1e-16], 1e-4, 1540.0, 16e6, 3.5e6).unwrap();
    let y = das_beamform(&[&x, &x, &x], &g, 0.0, &[1.0; 3]).unwrap();
    for (i, (a, b)) in y.samples.iter().zip(&x).enumerate() {
        assert!((a - b).abs() < 1e-9, "{i}: {a} {b}");
    }
}

#[test]
fn delay_closed_form_at_one_megahertz() {
    // T = 1 us: n = 20 samples is t = 20 us; element at c * 10 us
    let c = 1540.0;
    let g = ArrayGeometry::new(vec![0.0, c * 10e-6], 1e-4, c, 1e6, 0.3e6).unwrap();
    let t = delay_table(&g, 0.0, 30).unwrap();
    let tau = 10.0 + 0.5 * (400.0_f64 + 400.0).sqrt();
    assert!((tau - 24.142).abs() < 1e-3);
    assert_eq!(t.index(1, 20), 24);
    assert!(((t.index(1, 20) as f64 + t.frac(1, 20)) - tau).abs() <= 1e-12 * tau);
}

fn on_axis_frame(r: f64, m: usize) -> RawFrame {
    let phantom = Phantom {
        scatterers: vec![Scatterer {
            x_m: 0.0,
            y_m: 0.0,
            z_m: r,
            amplitude: 1.0,
            corruption: None,
            strong: true,
        }],
    };
    simulate_rx(&phantom, &ArrayGeometry::standard(m), &[0.0], &pulse(), 1400).unwrap()
}

#[test]
fn on_axis_scatterer_focuses_at_round_trip_time() {
    let r = 0.04;
    let frame = on_axis_frame(r, 32);
    let line = &das_frame(&frame, &vec![1.0; 32]).unwrap()[0];
    let env = analytic_envelope(&line.samples);
    let peak = env.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let expect = 2.0 * r / 1540.0 * 16e6;
    assert!((peak as f64 - expect).abs() <= 2.0, "{peak} vs {expect}");
    // Coherent gain: the average of the aligned channels is as strong as the
    // aligned channels themselves, i.e. their phases agree after alignment.
    let aligned: Vec<f64> = (0..32)
        .map(|m| {
            let g = ArrayGeometry::new(vec![frame.geometry.element_x_m[m]], 1e-4, 1540.0, 16e6, 3.5e6).unwrap();
            let a = das_beamform(&[frame.channel(0, m)], &g, 0.0, &[1.0]).unwrap();
            max_abs(&analytic_envelope(&a.samples))
        })
        .collect();
    let mean = aligned.iter().sum::<f64>() / 32.0;
    let focused = max_abs(&env);
    assert!(focused >= 0.98 * mean, "{focused} vs {mean}");
    // the same data steered away from the scatterer does not focus
    let off = &das_frame(&RawFrame { line_angles: vec![0.3], ..frame.clone() }, &vec![1.0; 32]).unwrap()[0];
    assert!(max_abs(&analytic_envelope(&off.samples)) < 0.5 * focused);
}

#[test]
fn simulated_scatterer_is_localized_within_half_wavelength() {
    let geom = ArrayGeometry::standard(64);
    for &(x, z) in &[(0.0, 0.03), (0.004, 0.05), (-0.006, 0.045)] {
        let phantom = Phantom {
            scatterers: vec![Scatterer {
                x_m: x,
                y_m: 0.0,
                z_m: z,
                amplitude: 1.0,
                corruption: None,
                strong: true,
            }],
        };
        let theta = f64::atan2(x, z);
        let frame = simulate_rx(&phantom, &geom, &[theta], &pulse(), 1600).unwrap();
        let cfg = DecompositionConfig {
            method: Method::Iq,
            max_pulses: 2,
            ..DecompositionConfig::default()
        };
        let dec = decompose_frame(&frame, &pulse(), &cfg).unwrap();
        let results: Vec<_> = (0..64).map(|m| dec.get(0, m).reflectors.clone()).collect();
        let locs = localize_line(&results, &geom, theta, Method::Iq, &pulse(), 1e-3).unwrap();
        assert_eq!(locs.len(), 1, "{locs:?}");
        let err = (locs[0].x_m - x).hypot(locs[0].z_m - z);
        assert!(err <= 0.22e-3, "position error {err}");
        assert!(locs[0].n_arrivals >= 60);
    }
}

#[test]
fn symmetric_pair_localizes_on_axis() {
    let geom = ArrayGeometry::standard(8);
    let t = 5e-5;
    let loc = localize_reflector(&[(0, t), (7, t)], &geom, 0.0).unwrap();
    assert!(loc.x_m.abs() < 1e-9);
    assert!(loc.z_m > 0.0);
}

#[test]
fn inconsistent_arrivals_leave_a_residual() {
    let geom = ArrayGeometry::standard(8);
    let arr: Vec<(usize, f64)> = (0..8).map(|m| (m, 5e-5 + if m % 2 == 0 { 2e-7 } else { -2e-7 })).collect();
    let loc = localize_reflector(&arr, &geom, 0.0).unwrap();
    assert!(loc.residual_of_fit_m > 1e-5);
}

fn reflector(r: f64, a: f64) -> LocalizedReflector {
    LocalizedReflector {
        x_m: 0.0,
        z_m: r,
        amplitude: a,
        phase_rad: 0.0,
        freq_shift_hz: 0.0,
        residual_of_fit_m: 0.0,
        n_arrivals: 2,
    }
}

#[test]
fn injection_places_pulse_at_round_trip_sample() {
    let line = SampledSignal::new((0..2000).map(|i| 0.01 * (i as f64).sin()).collect(), 16e6, 0.0).unwrap();
    assert_eq!(inject_reflectors(&line, &[], &pulse(), 1540.0), line);
    let r = 0.0413;
    let out = inject_reflectors(&line, &[reflector(r, 2.0)], &pulse(), 1540.0);
    let diff: Vec<f64> = out.samples.iter().zip(&line.samples).map(|(a, b)| a - b).collect();
    let peak = diff.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(peak, (2.0 * r / 1540.0 * 16e6).round() as usize);

    let p = reflector(0.02, 1.0);
    let q = reflector(0.05, -0.5);
    let both = inject_reflectors(&line, &[p, q], &pulse(), 1540.0);
    let seq = inject_reflectors(&inject_reflectors(&line, &[p], &pulse(), 1540.0), &[q], &pulse(), 1540.0);
    for (a, b) in both.samples.iter().zip(&seq.samples) {
        assert!((a - b).abs() < 1e-12);
    }
}
