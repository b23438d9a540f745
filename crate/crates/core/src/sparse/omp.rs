use serde::{Deserialize, Serialize};

use super::{dot, norm, Dictionary, SparseVector};
use crate::error::{invalid, Result};

/// Stopping rule for OMP: residual L2 norm at most `tol`, or `max_nnz` atoms
/// (`None` means half the patch length).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmpConfig {
    pub tol: f64,
    pub max_nnz: Option<usize>,
}

impl OmpConfig {
    pub fn new(tol: f64, max_nnz: Option<usize>) -> Self {
        Self { tol, max_nnz }
    }

    pub fn sparsity(max_nnz: usize) -> Self {
        Self {
            tol: 0.0,
            max_nnz: Some(max_nnz),
        }
    }

    pub fn cap(&self, patch_len: usize) -> usize {
        self.max_nnz.unwrap_or(patch_len / 2).min(patch_len)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) || !self.tol.is_finite() {
            return invalid(format!("OMP tolerance must be finite and non-negative, got {}", self.tol));
        }
        Ok(())
    }
}

/// Orthogonal matching pursuit with an incrementally updated Cholesky factor
/// of the Gram matrix of the selected atoms.
pub fn omp_encode(patch: &[f64], dict: &Dictionary, cfg: &OmpConfig) -> Result<SparseVector> {
    cfg.validate()?;
    let q = dict.patch_len();
    if patch.len() != q {
        return invalid(format!("patch has {} samples, dictionary expects {q}", patch.len()));
    }
    if patch.iter().any(|v| !v.is_finite()) {
        return invalid("patch contains non-finite values");
    }
    let cap = cfg.cap(q);
    let mut residual = patch.to_vec();
    let mut res_norm = norm(patch);
    let scale = res_norm;

    let mut support: Vec<usize> = Vec::new();
    // lower-triangular, row-major, row i has i+1 entries
    let mut chol: Vec<f64> = Vec::new();
    let mut proj: Vec<f64> = Vec::new(); // D_S^T x
    let mut coefs: Vec<f64> = Vec::new();

    while res_norm > cfg.tol && support.len() < cap {
        let mut best = None;
        let mut best_c = 0.0;
        for k in 0..dict.n_atoms() {
            if support.contains(&k) {
                continue;
            }
            let c = dot(dict.atom(k), &residual).abs();
            if c > best_c {
                best_c = c;
                best = Some(k);
            }
        }
        let Some(k) = best else { break };
        if best_c <= 1e-14 * scale {
            break;
        }
        let atom = dict.atom(k);

        // Extend the factor with the new atom's Gram row.
        let v: Vec<f64> = support.iter().map(|&j| dot(dict.atom(j), atom)).collect();
        let w = forward_solve(&chol, &v);
        let d2 = 1.0 - w.iter().map(|x| x * x).sum::<f64>();
        if d2 <= 1e-12 {
            // numerically inside the span of the current support
            break;
        }
        let mut new_chol = chol.clone();
        new_chol.extend_from_slice(&w);
        new_chol.push(d2.sqrt());
        let mut new_support = support.clone();
        new_support.push(k);
        let mut new_proj = proj.clone();
        new_proj.push(dot(atom, patch));

        let y = forward_solve(&new_chol, &new_proj);
        let z = backward_solve(&new_chol, &y);
        let mut r = patch.to_vec();
        for (&j, &c) in new_support.iter().zip(&z) {
            for (ri, a) in r.iter_mut().zip(dict.atom(j)) {
                *ri -= c * a;
            }
        }
        let rn = norm(&r);
        if rn >= res_norm {
            break;
        }
        support = new_support;
        chol = new_chol;
        proj = new_proj;
        coefs = z;
        residual = r;
        res_norm = rn;
    }

    Ok(SparseVector {
        entries: support.into_iter().zip(coefs).collect(),
    })
}

#[inline]
fn row(i: usize) -> usize {
    i * (i + 1) / 2
}

fn forward_solve(l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(b.len());
    for i in 0..b.len() {
        let r = &l[row(i)..row(i) + i + 1];
        let s: f64 = r[..i].iter().zip(&y).map(|(a, b)| a * b).sum();
        y.push((b[i] - s) / r[i]);
    }
    y
}

fn backward_solve(l: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= l[row(j) + i] * x[j];
        }
        x[i] = s / l[row(i) + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_match_dense_system() {
        // A = L L^T with L = [[2,0],[1,3]]
        let l = vec![2.0, 1.0, 3.0];
        let b = [4.0, 5.0];
        let x = backward_solve(&l, &forward_solve(&l, &b));
        // A = [[4,2],[2,10]]
        assert!((4.0 * x[0] + 2.0 * x[1] - 4.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 10.0 * x[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn single_atom_patch() {
        let d = Dictionary::random(20, 50, 1).unwrap();
        let patch: Vec<f64> = d.atom(7).iter().map(|v| 3.5 * v).collect();
        let code = omp_encode(&patch, &d, &OmpConfig::new(1e-10, None)).unwrap();
        assert_eq!(code.entries.len(), 1);
        assert_eq!(code.entries[0].0, 7);
        assert!((code.entries[0].1 - 3.5).abs() < 1e-12);
    }

    #[test]
    fn zero_patch_gives_empty_code() {
        let d = Dictionary::random(8, 16, 0).unwrap();
        assert!(omp_encode(&[0.0; 8], &d, &OmpConfig::new(0.0, None)).unwrap().is_empty());
    }

    #[test]
    fn rejects_wrong_length_and_bad_tolerance() {
        let d = Dictionary::random(8, 16, 0).unwrap();
        assert!(omp_encode(&[1.0; 7], &d, &OmpConfig::new(0.1, None)).is_err());
        assert!(omp_encode(&[1.0; 8], &d, &OmpConfig::new(-1.0, None)).is_err());
        assert!(omp_encode(&[f64::NAN; 8], &d, &OmpConfig::new(0.1, None)).is_err());
    }
}
