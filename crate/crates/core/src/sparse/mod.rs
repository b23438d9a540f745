//! Patch-based sparse coding of background signals: non-overlapping patch
//! extraction, OMP coding over a learned dictionary, and K-SVD training.

mod ksvd;
mod omp;

pub use ksvd::{ksvd_train, KsvdConfig, KsvdReport};
pub use omp::{omp_encode, OmpConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hashing::Fingerprint;
use crate::phantom::RawFrame;
pub(crate) use crate::signal::l2 as norm;

/// Column norms must be within this of one.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Overcomplete dictionary, atoms stored column-major (`Q` values per atom).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    atoms: Vec<f64>,
    patch_len: usize,
    n_atoms: usize,
}

impl Dictionary {
    /// Atoms must already have unit norm.
    pub fn new(atoms: Vec<f64>, patch_len: usize, n_atoms: usize) -> Result<Self> {
        let d = Self::shape_checked(atoms, patch_len, n_atoms)?;
        for k in 0..n_atoms {
            let n = norm(d.atom(k));
            if n == 0.0 {
                return invalid(format!("dictionary column {k} has zero norm"));
            }
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return invalid(format!("dictionary column {k} has norm {n}, expected 1"));
            }
        }
        Ok(d)
    }

    /// Scales every atom to unit norm; zero columns are rejected.
    pub fn normalized(atoms: Vec<f64>, patch_len: usize, n_atoms: usize) -> Result<Self> {
        let mut d = Self::shape_checked(atoms, patch_len, n_atoms)?;
        for k in 0..n_atoms {
            let col = &mut d.atoms[k * patch_len..(k + 1) * patch_len];
            let n = norm(col);
            if n == 0.0 || !n.is_finite() {
                return invalid(format!("dictionary column {k} has zero norm"));
            }
            col.iter_mut().for_each(|v| *v /= n);
        }
        Ok(d)
    }

    /// Gaussian random atoms, normalized.
    pub fn random(patch_len: usize, n_atoms: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms = (0..patch_len * n_atoms).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self::normalized(atoms, patch_len, n_atoms)
    }

    fn shape_checked(atoms: Vec<f64>, patch_len: usize, n_atoms: usize) -> Result<Self> {
        if patch_len == 0 || n_atoms == 0 {
            return invalid("dictionary needs at least one atom of positive length");
        }
        if atoms.len() != patch_len * n_atoms {
            return invalid(format!(
                "dictionary has {} values, expected {patch_len} x {n_atoms}",
                atoms.len()
            ));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return invalid("dictionary contains non-finite values");
        }
        Ok(Self {
            atoms,
            patch_len,
            n_atoms,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    #[inline]
    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.patch_len..(k + 1) * self.patch_len]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub(crate) fn set_atom(&mut self, k: usize, values: &[f64]) {
        self.atoms[k * self.patch_len..(k + 1) * self.patch_len].copy_from_slice(values);
    }

    /// Content hash, used to tie codes and cached operators to a dictionary.
    pub fn fingerprint(&self) -> u64 {
        let mut f = Fingerprint::new("dictionary");
        f.u64(self.patch_len as u64);
        f.u64(self.n_atoms as u64);
        f.f64s(&self.atoms);
        f.finish()
    }
}

/// Sparse coefficient vector: `(atom index, coefficient)` pairs with
/// distinct indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|&(k, v)| (k, alpha * v)).collect(),
        }
    }

    fn check(&self, n_atoms: usize) -> Result<()> {
        for &(k, _) in &self.entries {
            if k >= n_atoms {
                return invalid(format!("atom index {k} out of range 0..{n_atoms}"));
            }
        }
        Ok(())
    }
}

/// Codes of every patch of every channel of a frame, `[line][element][patch]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub n_lines: usize,
    pub n_elements: usize,
    pub n_patches: usize,
    pub patch_len: usize,
    pub n_atoms: usize,
    /// Channel length before padding.
    pub n_samples: usize,
    pub patches: Vec<SparseVector>,
}

impl SparseCode {
    pub fn get(&self, line: usize, element: usize, patch: usize) -> &SparseVector {
        &self.patches[(line * self.n_elements + element) * self.n_patches + patch]
    }

    pub fn total_nnz(&self) -> usize {
        self.patches.iter().map(SparseVector::nnz).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches.len() != self.n_lines * self.n_elements * self.n_patches {
            return invalid("code layout does not match its patch count");
        }
        if self.n_patches != self.n_samples.div_ceil(self.patch_len.max(1)) {
            return invalid("patch count does not cover the channel length");
        }
        for p in &self.patches {
            p.check(self.n_atoms)?;
            let mut seen: Vec<usize> = p.entries.iter().map(|e| e.0).collect();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return invalid("repeated atom index within one patch");
            }
        }
        Ok(())
    }
}

/// Example patches for dictionary training, column-major `Q × n_examples`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub patch_len: usize,
    pub patches: Vec<f64>,
}

impl TrainingSet {
    pub fn n_examples(&self) -> usize {
        self.patches.len() / self.patch_len.max(1)
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.patches[i * self.patch_len..(i + 1) * self.patch_len]
    }

    /// All non-overlapping patches of the given lines. All-zero patches
    /// (silence before the first echo, padding) carry no information and are
    /// dropped.
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a [f64]>, patch_len: usize) -> Result<Self> {
        let mut patches = Vec::new();
        for line in lines {
            for p in patchify(line, patch_len)? {
                if p.iter().any(|v| *v != 0.0) {
                    patches.extend_from_slice(&p);
                }
            }
        }
        Ok(Self { patch_len, patches })
    }
}

/// Split into `ceil(N/Q)` patches; the last is zero-padded.
pub fn patchify(x: &[f64], patch_len: usize) -> Result<Vec<Vec<f64>>> {
    if patch_len == 0 {
        return invalid("patch length must be positive");
    }
    Ok(x.chunks(patch_len)
        .map(|c| {
            let mut p = c.to_vec();
            p.resize(patch_len, 0.0);
            p
        })
        .collect())
}

/// Concatenate patches and truncate to `n` samples.
pub fn unpatchify(patches: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out: Vec<f64> = patches.iter().flatten().copied().collect();
    out.resize(n, 0.0);
    out
}

/// `D z` for one code.
pub fn reconstruct_patch(code: &SparseVector, dict: &Dictionary) -> Result<Vec<f64>> {
    code.check(dict.n_atoms())?;
    let mut out = vec![0.0; dict.patch_len()];
    for &(k, v) in &code.entries {
        for (o, a) in out.iter_mut().zip(dict.atom(k)) {
            *o += v * a;
        }
    }
    Ok(out)
}

pub fn reconstruct_patches(code: &SparseCode, dict: &Dictionary) -> Result<Vec<Vec<f64>>> {
    if code.patch_len != dict.patch_len() || code.n_atoms != dict.n_atoms() {
        return invalid("code and dictionary shapes differ");
    }
    code.patches.iter().map(|p| reconstruct_patch(p, dict)).collect()
}

/// Code every channel of `frame` patch by patch.
pub fn encode_frame(frame: &RawFrame, dict: &Dictionary, cfg: &OmpConfig) -> Result<SparseCode> {
    frame.validate()?;
    let q = dict.patch_len();
    let n_patches = frame.n_samples.div_ceil(q);
    let channels = frame.n_lines() * frame.n_elements();
    let per_channel = (0..channels)
        .into_par_iter()
        .map(|c| {
            let x = &frame.channels[c * frame.n_samples..(c + 1) * frame.n_samples];
            patchify(x, q)?
                .iter()
                .map(|p| omp_encode(p, dict, cfg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseCode {
        n_lines: frame.n_lines(),
        n_elements: frame.n_elements(),
        n_patches,
        patch_len: q,
        n_atoms: dict.n_atoms(),
        n_samples: frame.n_samples,
        patches: per_channel.into_iter().flatten().collect(),
    })
}

/// Channels rebuilt from their codes, laid out like `like`.
pub fn decode_frame(code: &SparseCode, dict: &Dictionary, like: &RawFrame) -> Result<RawFrame> {
    code.validate()?;
    if like.n_lines() != code.n_lines || like.n_elements() != code.n_elements || like.n_samples != code.n_samples {
        return invalid("code layout does not match the frame");
    }
    let patches = reconstruct_patches(code, dict)?;
    let mut out = like.clone();
    for (c, chunk) in patches.chunks(code.n_patches).enumerate() {
        let samples = unpatchify(chunk, code.n_samples);
        out.channels[c * code.n_samples..(c + 1) * code.n_samples].copy_from_slice(&samples);
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
