use echosplit::phantom::*;
use echosplit::signal::{analytic_envelope, PulseModel};
use proptest::prelude::*;

fn pulse() -> PulseModel {
    PulseModel::new(3.5e6, 0.3e-6, 0.0).unwrap()
}

fn point(x: f64, z: f64, a: f64) -> Scatterer {
    Scatterer {
        x_m: x,
        y_m: 0.0,
        z_m: z,
        amplitude: a,
        corruption: None,
        strong: false,
    }
}

fn small_speckle(seed: u64, count: usize) -> Phantom {
    let cfg = PointPhantomConfig {
        speckle: SpeckleConfig {
            count,
            region: RegionBox {
                x_half_m: 5e-3,
                y_half_m: 1e-3,
                z_center_m: 30e-3,
                z_half_m: 5e-3,
            },
            amplitude_std: 1.0,
        },
        reflectors_m: vec![],
        gain: 50.0,
        seed,
    };
    make_point_phantom(&cfg).unwrap()
}

#[test]
fn on_axis_peaks_follow_arrival_time() {
    let geom = ArrayGeometry::standard(32);
    let r = 0.035;
    let phantom = Phantom {
        scatterers: vec![point(0.0, r, 1.0)],
    };
    let frame = simulate_rx(&phantom, &geom, &[0.0], &pulse(), 1200).unwrap();
    for m in 0..32 {
        let x = geom.element_x_m[m];
        let expect = (16e6 * (r / 1540.0 + (r * r + x * x).sqrt() / 1540.0)).round() as i64;
        let env = analytic_envelope(frame.channel(0, m));
        let peak = env.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 as i64;
        assert!((peak - expect).abs() <= 1, "element {m}: {peak} vs {expect}");
    }
}

#[test]
fn superposition_of_phantoms() {
    let geom = ArrayGeometry::standard(8);
    let a = small_speckle(1, 300);
    let b = small_speckle(2, 200);
    let angles = [-0.05, 0.0, 0.08];
    let fa = simulate_rx(&a, &geom, &angles, &pulse(), 900).unwrap();
    let fb = simulate_rx(&b, &geom, &angles, &pulse(), 900).unwrap();
    let fab = simulate_rx(&a.union(&b), &geom, &angles, &pulse(), 900).unwrap();
    let scale = fab.channels.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for i in 0..fab.channels.len() {
        assert!((fab.channels[i] - fa.channels[i] - fb.channels[i]).abs() <= 1e-12 * scale);
    }
}

#[test]
fn mirrored_phantom_mirrors_channels() {
    let geom = ArrayGeometry::standard(16);
    let p = small_speckle(5, 150);
    let mirrored = Phantom {
        scatterers: p.scatterers.iter().map(|s| Scatterer { x_m: -s.x_m, ..*s }).collect(),
    };
    let angles = [-0.1, 0.03];
    let back = [0.1, -0.03];
    let f = simulate_rx(&p, &geom, &angles, &pulse(), 800).unwrap();
    let g = simulate_rx(&mirrored, &geom, &back, &pulse(), 800).unwrap();
    let scale = f.channels.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for l in 0..2 {
        for m in 0..16 {
            for (a, b) in f.channel(l, m).iter().zip(g.channel(l, 15 - m)) {
                assert!((a - b).abs() <= 1e-9 * scale);
            }
        }
    }
}

#[test]
fn off_axis_reflector_leaks_into_other_lines() {
    let geom = ArrayGeometry::standard(64);
    let theta = 7f64.to_radians();
    let r = 0.0705;
    let phantom = Phantom {
        scatterers: vec![point(r * theta.sin(), r * theta.cos(), 100.0)],
    };
    let frame = simulate_rx(&phantom, &geom, &[0.0, 2f64.to_radians(), theta], &pulse(), 1600).unwrap();
    let energy = |l: usize| frame.line(l).iter().map(|v| v * v).sum::<f64>();
    assert!(energy(0) > 0.0);
    assert!(energy(1) > 0.0);
    assert!(energy(2) > energy(1));
}

#[test]
fn empty_phantom_is_silent() {
    let frame = simulate_rx(&Phantom::default(), &ArrayGeometry::standard(4), &[0.0, 0.1], &pulse(), 100).unwrap();
    assert!(frame.channels.iter().all(|v| *v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scaling_amplitudes_scales_channels(seed in any::<u64>(), k in -4.0f64..4.0) {
        let geom = ArrayGeometry::standard(4);
        let p = small_speckle(seed, 40);
        let q = Phantom {
            scatterers: p.scatterers.iter().map(|s| Scatterer { amplitude: k * s.amplitude, ..*s }).collect(),
        };
        let f = simulate_rx(&p, &geom, &[0.02], &pulse(), 700).unwrap();
        let g = simulate_rx(&q, &geom, &[0.02], &pulse(), 700).unwrap();
        let scale = f.channels.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * k.abs().max(1.0);
        for (a, b) in f.channels.iter().zip(&g.channels) {
            prop_assert!((k * a - b).abs() <= 1e-12 * scale.max(1e-300));
        }
    }
}
