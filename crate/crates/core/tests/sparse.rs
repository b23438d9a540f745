use echosplit::phantom::{ArrayGeometry, RawFrame};
use echosplit::sparse::{
    decode_frame, encode_frame, ksvd_train, omp_encode, patchify, reconstruct_patch, reconstruct_patches, unpatchify,
    Dictionary, KsvdConfig, OmpConfig, SparseCode, SparseVector, TrainingSet,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn orthonormal(q: usize) -> Dictionary {
    // DCT-II basis
    let mut atoms = Vec::with_capacity(q * q);
    for k in 0..q {
        for n in 0..q {
            atoms.push((std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / q as f64).cos());
        }
    }
    Dictionary::normalized(atoms, q, q).unwrap()
}

/// Identity followed by a DCT basis: mutual coherence sqrt(2/q).
fn two_bases(q: usize) -> Dictionary {
    let mut atoms = vec![0.0; q * q];
    for i in 0..q {
        atoms[i * q + i] = 1.0;
    }
    atoms.extend_from_slice(orthonormal(q).atoms());
    Dictionary::normalized(atoms, q, 2 * q).unwrap()
}

fn sparse_combinations(gen: &Dictionary, n: usize, t0: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = gen.patch_len();
    let mut patches = Vec::with_capacity(n * q);
    for _ in 0..n {
        let mut idx: Vec<usize> = Vec::new();
        while idx.len() < t0 {
            let k = rng.random_range(0..gen.n_atoms());
            if !idx.contains(&k) {
                idx.push(k);
            }
        }
        let code = SparseVector {
            entries: idx
                .into_iter()
                .map(|k| (k, rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }))
                .collect(),
        };
        patches.extend(reconstruct_patch(&code, gen).unwrap());
    }
    TrainingSet { patch_len: q, patches }
}

#[test]
fn orthonormal_dictionary_gives_exact_two_term_code() {
    let d = orthonormal(16);
    let patch: Vec<f64> = d.atom(1).iter().zip(d.atom(4)).map(|(a, b)| 2.0 * a - b).collect();
    let mut code = omp_encode(&patch, &d, &OmpConfig::new(1e-12, None)).unwrap();
    code.entries.sort_by_key(|e| e.0);
    assert_eq!(code.nnz(), 2);
    assert_eq!(code.entries[0].0, 1);
    assert_eq!(code.entries[1].0, 4);
    assert!((code.entries[0].1 - 2.0).abs() < 1e-12);
    assert!((code.entries[1].1 + 1.0).abs() < 1e-12);
}

#[test]
fn least_squares_refit_matches_normal_equations() {
    // two-atom code on a random dictionary: coefficients solve the 2x2 normal equations
    let d = Dictionary::random(24, 60, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let patch: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let code = omp_encode(&patch, &d, &OmpConfig::sparsity(2)).unwrap();
    let (i, j) = (code.entries[0].0, code.entries[1].0);
    let (a, b) = (d.atom(i), d.atom(j));
    let dotp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (g11, g12, g22) = (dotp(a, a), dotp(a, b), dotp(b, b));
    let (r1, r2) = (dotp(a, &patch), dotp(b, &patch));
    let det = g11 * g22 - g12 * g12;
    let z1 = (g22 * r1 - g12 * r2) / det;
    let z2 = (g11 * r2 - g12 * r1) / det;
    assert!((code.entries[0].1 - z1).abs() < 1e-10);
    assert!((code.entries[1].1 - z2).abs() < 1e-10);
}

#[test]
fn tolerance_contract_holds() {
    let d = Dictionary::random(32, 96, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let patch: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tol = 0.3 * norm(&patch);
        let cfg = OmpConfig::new(tol, None);
        let code = omp_encode(&patch, &d, &cfg).unwrap();
        let rec = reconstruct_patch(&code, &d).unwrap();
        let err: Vec<f64> = patch.iter().zip(&rec).map(|(a, b)| a - b).collect();
        assert!(norm(&err) <= tol || code.nnz() == cfg.cap(32));
    }
}

#[test]
fn generator_dictionary_is_learned() {
    let gen = Dictionary::random(100, 400, 77).unwrap();
    let train = sparse_combinations(&gen, 4000, 3, 5);
    let cfg = KsvdConfig {
        n_atoms: 400,
        sparsity: Some(3),
        tol: None,
        n_iters: 10,
        seed: 11,
    };
    let r = ksvd_train(&train, &cfg).unwrap();
    assert_eq!(r.errors.len(), 11);
    for w in r.errors.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{:?}", r.errors);
    }
    let last = *r.errors.last().unwrap();
    assert!(last <= 0.1 * r.errors[0], "{:?}", r.errors);
    for k in 0..400 {
        assert!((norm(r.dictionary.atom(k)) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn unused_atoms_are_reseeded() {
    // Far more atoms than the data needs: many go unused in the first pass.
    let gen = orthonormal(8);
    let train = sparse_combinations(&gen, 64, 1, 3);
    let cfg = KsvdConfig {
        n_atoms: 64,
        sparsity: Some(1),
        tol: None,
        n_iters: 2,
        seed: 4,
    };
    let r = ksvd_train(&train, &cfg).unwrap();
    assert!(r.replaced_atoms.iter().sum::<usize>() > 0);
    for k in 0..64 {
        assert!((norm(r.dictionary.atom(k)) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn frame_codes_round_trip_through_reconstruction() {
    let geom = ArrayGeometry::standard(3);
    let mut frame = RawFrame::zeros(geom, vec![0.0, 0.1], 250);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    frame.channels.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let d = Dictionary::random(50, 120, 1).unwrap();
    let tol = 1e-3;
    let code = encode_frame(&frame, &d, &OmpConfig::new(tol, Some(50))).unwrap();
    assert_eq!(code.n_patches, 5);
    code.validate().unwrap();
    let back = decode_frame(&code, &d, &frame).unwrap();
    for c in 0..6 {
        let a = &frame.channels[c * 250..(c + 1) * 250];
        let b = &back.channels[c * 250..(c + 1) * 250];
        for p in 0..5 {
            let e: Vec<f64> = a[p * 50..(p + 1) * 50].iter().zip(&b[p * 50..(p + 1) * 50]).map(|(x, y)| x - y).collect();
            assert!(norm(&e) <= tol + 1e-12);
        }
    }
}

#[test]
fn out_of_range_code_is_rejected() {
    let d = Dictionary::random(4, 8, 0).unwrap();
    let code = SparseCode {
        n_lines: 1,
        n_elements: 1,
        n_patches: 1,
        patch_len: 4,
        n_atoms: 8,
        n_samples: 4,
        patches: vec![SparseVector { entries: vec![(8, 1.0)] }],
    };
    assert!(reconstruct_patches(&code, &d).is_err());
}

#[test]
fn training_set_drops_silent_patches() {
    let mut line = vec![0.0; 300];
    line[150] = 1.0;
    let t = TrainingSet::from_lines([line.as_slice()], 100).unwrap();
    assert_eq!(t.n_examples(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patch_round_trip(x in prop::collection::vec(-1e3f64..1e3, 0..500), q in 1usize..130) {
        let p = patchify(&x, q).unwrap();
        prop_assert_eq!(p.len(), x.len().div_ceil(q));
        prop_assert_eq!(unpatchify(&p, x.len()), x);
    }

    #[test]
    fn omp_residual_strictly_decreases_and_nnz_is_bounded(
        seed in any::<u64>(), cap in 1usize..40,
    ) {
        let d = Dictionary::random(16, 48, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let patch: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let code = omp_encode(&patch, &d, &OmpConfig::new(0.0, Some(cap))).unwrap();
        prop_assert!(code.nnz() <= cap.min(16));
        // each prefix of the greedy order, refit by OMP itself, has a smaller residual
        let mut prev = norm(&patch);
        for s in 1..=code.nnz() {
            let c = omp_encode(&patch, &d, &OmpConfig::new(0.0, Some(s))).unwrap();
            prop_assert_eq!(c.nnz(), s);
            let rec = reconstruct_patch(&c, &d).unwrap();
            let r: Vec<f64> = patch.iter().zip(&rec).map(|(a, b)| a - b).collect();
            let rn = norm(&r);
            prop_assert!(rn < prev, "step {} residual {} after {}", s, rn, prev);
            prev = rn;
        }
    }

    #[test]
    fn recoding_a_reconstruction_is_idempotent(seed in any::<u64>()) {
        let d = two_bases(32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patch: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = OmpConfig::new(0.0, Some(2));
        let mut code = omp_encode(&patch, &d, &cfg).unwrap();
        let model = reconstruct_patch(&code, &d).unwrap();
        let mut again = omp_encode(&model, &d, &OmpConfig::new(1e-12 * norm(&model), Some(2))).unwrap();
        code.entries.sort_by_key(|e| e.0);
        again.entries.sort_by_key(|e| e.0);
        prop_assert_eq!(code.nnz(), again.nnz());
        for (a, b) in code.entries.iter().zip(&again.entries) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!((a.1 - b.1).abs() <= 1e-9);
        }
    }

    #[test]
    fn reconstruction_is_linear(seed in any::<u64>(), alpha in -5.0f64..5.0) {
        let d = Dictionary::random(12, 30, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = SparseVector {
            entries: vec![(rng.random_range(0..10), 1.3), (rng.random_range(10..30), -0.4)],
        };
        let a = reconstruct_patch(&code.scaled(alpha), &d).unwrap();
        let b = reconstruct_patch(&code, &d).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - alpha * y).abs() <= 1e-12);
        }
    }
}
