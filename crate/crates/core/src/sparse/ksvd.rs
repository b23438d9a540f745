use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dot, norm, omp_encode, reconstruct_patch, Dictionary, OmpConfig, SparseVector, TrainingSet};
use crate::error::{invalid, Error, Result};

const POWER_ITERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsvdConfig {
    pub n_atoms: usize,
    /// Non-zeros per training example during coding.
    pub sparsity: Option<usize>,
    /// Residual tolerance during coding.
    pub tol: Option<f64>,
    pub n_iters: usize,
    pub seed: u64,
}

impl Default for KsvdConfig {
    fn default() -> Self {
        Self {
            n_atoms: 400,
            sparsity: None,
            tol: Some(0.0),
            n_iters: 10,
            seed: 0,
        }
    }
}

impl KsvdConfig {
    fn omp(&self, patch_len: usize) -> OmpConfig {
        OmpConfig {
            tol: self.tol.unwrap_or(0.0),
            max_nnz: Some(self.sparsity.unwrap_or(patch_len / 2)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KsvdReport {
    pub dictionary: Dictionary,
    /// Total squared representation error: entry 0 for the initial
    /// dictionary, then one per iteration.
    pub errors: Vec<f64>,
    /// Atoms re-seeded from the worst-represented example, per iteration.
    pub replaced_atoms: Vec<usize>,
}

/// Learn a dictionary by alternating OMP coding and per-atom rank-1 updates.
///
/// A new code for an example is only accepted when it does not increase the
/// example's error, and every rank-1 update starts from the current atom, so
/// the reported error sequence never increases.
pub fn ksvd_train(train: &TrainingSet, cfg: &KsvdConfig) -> Result<KsvdReport> {
    let q = train.patch_len;
    let n = train.n_examples();
    let k_atoms = cfg.n_atoms;
    if q == 0 || k_atoms == 0 {
        return invalid("patch length and atom count must be positive");
    }
    if cfg.sparsity.is_none() && cfg.tol.is_none() {
        return invalid("training needs a sparsity or a tolerance");
    }
    if cfg.sparsity == Some(0) {
        return invalid("training sparsity must be at least 1");
    }
    if n < k_atoms {
        return Err(Error::InsufficientData(format!(
            "{n} training examples for {k_atoms} atoms"
        )));
    }
    let omp = cfg.omp(q);
    omp.validate()?;

    let mut dict = Dictionary::random(q, k_atoms, cfg.seed)?;
    let mut codes: Vec<SparseVector> = (0..n)
        .into_par_iter()
        .map(|i| omp_encode(train.example(i), &dict, &omp))
        .collect::<Result<_>>()?;
    let mut residual = residuals(train, &dict, &codes)?;
    let mut errors = vec![total(&residual)];
    let mut replaced = Vec::with_capacity(cfg.n_iters);

    for iter in 0..cfg.n_iters {
        if iter > 0 {
            let updated: Vec<Option<(SparseVector, Vec<f64>)>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let y = train.example(i);
                    let code = omp_encode(y, &dict, &omp)?;
                    let rec = reconstruct_patch(&code, &dict)?;
                    let r: Vec<f64> = y.iter().zip(&rec).map(|(a, b)| a - b).collect();
                    let old = &residual[i * q..(i + 1) * q];
                    Ok((dot(&r, &r) <= dot(old, old)).then_some((code, r)))
                })
                .collect::<Result<_>>()?;
            for (i, u) in updated.into_iter().enumerate() {
                if let Some((code, r)) = u {
                    codes[i] = code;
                    residual[i * q..(i + 1) * q].copy_from_slice(&r);
                }
            }
        }

        // users[k] = (example, slot in its code)
        let mut users: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k_atoms];
        for (i, c) in codes.iter().enumerate() {
            for (s, &(k, _)) in c.entries.iter().enumerate() {
                users[k].push((i, s));
            }
        }

        let mut reseeded = 0;
        let mut taken = vec![false; n];
        for k in 0..k_atoms {
            if users[k].is_empty() {
                if let Some(i) = worst_example(&residual, q, &taken, train) {
                    taken[i] = true;
                    let y = train.example(i);
                    let s = norm(y);
                    let atom: Vec<f64> = y.iter().map(|v| v / s).collect();
                    dict.set_atom(k, &atom);
                    reseeded += 1;
                }
                continue;
            }
            update_atom(k, &users[k], &mut dict, &mut codes, &mut residual, q);
        }
        replaced.push(reseeded);
        errors.push(total(&residual));
    }

    Ok(KsvdReport {
        dictionary: Dictionary::new(dict.atoms().to_vec(), q, k_atoms)?,
        errors,
        replaced_atoms: replaced,
    })
}

fn residuals(train: &TrainingSet, dict: &Dictionary, codes: &[SparseVector]) -> Result<Vec<f64>> {
    let mut r = train.patches.clone();
    let q = train.patch_len;
    for (i, c) in codes.iter().enumerate() {
        let rec = reconstruct_patch(c, dict)?;
        for (a, b) in r[i * q..(i + 1) * q].iter_mut().zip(rec) {
            *a -= b;
        }
    }
    Ok(r)
}

fn total(residual: &[f64]) -> f64 {
    residual.iter().map(|v| v * v).sum()
}

fn worst_example(residual: &[f64], q: usize, taken: &[bool], train: &TrainingSet) -> Option<usize> {
    let mut best = None;
    let mut best_e = 0.0;
    for (i, r) in residual.chunks(q).enumerate() {
        if taken[i] || norm(train.example(i)) == 0.0 {
            continue;
        }
        let e = dot(r, r);
        if best.is_none() || e > best_e {
            best = Some(i);
            best_e = e;
        }
    }
    best
}

/// Best rank-1 fit `u gᵀ` of the restricted error matrix, by power iteration
/// started at the current atom.
fn update_atom(
    k: usize,
    users: &[(usize, usize)],
    dict: &mut Dictionary,
    codes: &mut [SparseVector],
    residual: &mut [f64],
    q: usize,
) {
    let m = users.len();
    let d = dict.atom(k).to_vec();
    // E columns: residual plus this atom's current contribution
    let mut e = vec![0.0; q * m];
    for (j, &(i, s)) in users.iter().enumerate() {
        let z = codes[i].entries[s].1;
        for r in 0..q {
            e[j * q + r] = residual[i * q + r] + d[r] * z;
        }
    }
    let col = |j: usize| &e[j * q..(j + 1) * q];

    let mut u = d;
    let mut g: Vec<f64> = (0..m).map(|j| dot(col(j), &u)).collect();
    let mut energy = dot(&g, &g);
    for _ in 0..POWER_ITERS {
        let mut v = vec![0.0; q];
        for (j, &gj) in g.iter().enumerate() {
            for (vr, er) in v.iter_mut().zip(col(j)) {
                *vr += gj * er;
            }
        }
        let nv = norm(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let g_new: Vec<f64> = (0..m).map(|j| dot(col(j), &v)).collect();
        let energy_new = dot(&g_new, &g_new);
        if energy_new < energy {
            break;
        }
        let converged = energy_new - energy <= 1e-13 * energy_new;
        u = v;
        g = g_new;
        energy = energy_new;
        if converged {
            break;
        }
    }

    dict.set_atom(k, &u);
    for (j, &(i, s)) in users.iter().enumerate() {
        codes[i].entries[s].1 = g[j];
        for r in 0..q {
            residual[i * q + r] = e[j * q + r] - u[r] * g[j];
        }
    }
}
