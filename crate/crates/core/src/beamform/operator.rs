use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use super::{check_weights, delay_table};
use crate::error::{invalid, Result};
use crate::hashing::Fingerprint;
use crate::phantom::ArrayGeometry;
use crate::signal::SampledSignal;
use crate::sparse::{Dictionary, SparseCode};

/// One weighted dictionary row referenced by a row of `H`: row `row` of the
/// dictionary, applied to the code of patch `patch` of element `element`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    element: u32,
    patch: u32,
    row: u32,
    weight: f64,
}

/// Beamforming operator acting on sparse patch codes, `Φ = H Z`.
///
/// Row `n` of `H` is `(1/M) Σ_m w_m [(1−α) D̃[τ] + α D̃[τ+1]]` restricted to
/// element m's code block, with `D̃ = I_P ⊗ D`. Rows are stored as lists of
/// weighted dictionary-row references rather than expanded, since each
/// reference expands to `K` dense entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOperator {
    pub theta_rad: f64,
    pub n_samples: usize,
    pub n_elements: usize,
    pub n_patches: usize,
    pub fs_hz: f64,
    pub weights: Vec<f64>,
    pub geometry_hash: u64,
    pub dictionary_hash: u64,
    dictionary: Arc<Dictionary>,
    row_ptr: Vec<usize>,
    segments: Vec<Segment>,
}

pub fn build_rep_operator(
    geometry: &ArrayGeometry,
    theta_rad: f64,
    dict: Arc<Dictionary>,
    weights: &[f64],
    n_samples: usize,
) -> Result<RepOperator> {
    let m_count = geometry.n_elements();
    check_weights(weights, m_count)?;
    let q = dict.patch_len();
    if n_samples == 0 {
        return invalid("operator needs at least one output sample");
    }
    let table = delay_table(geometry, theta_rad, n_samples)?;
    let scale = 1.0 / m_count as f64;
    let mut row_ptr = Vec::with_capacity(n_samples + 1);
    let mut segments = Vec::with_capacity(2 * m_count * n_samples);
    row_ptr.push(0);
    for n in 0..n_samples {
        for m in 0..m_count {
            for (s, a) in table.taps(m, n).into_iter().flatten() {
                let weight = weights[m] * scale * a;
                if weight != 0.0 {
                    segments.push(Segment {
                        element: m as u32,
                        patch: (s / q) as u32,
                        row: (s % q) as u32,
                        weight,
                    });
                }
            }
        }
        row_ptr.push(segments.len());
    }
    Ok(RepOperator {
        theta_rad,
        n_samples,
        n_elements: m_count,
        n_patches: n_samples.div_ceil(q),
        fs_hz: geometry.fs_hz,
        weights: weights.to_vec(),
        geometry_hash: geometry.fingerprint(),
        dictionary_hash: dict.fingerprint(),
        dictionary: dict,
        row_ptr,
        segments,
    })
}

impl RepOperator {
    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn n_columns(&self) -> usize {
        self.n_elements * self.n_patches * self.dictionary.n_atoms()
    }

    fn column(&self, element: usize, patch: usize, atom: usize) -> usize {
        (element * self.n_patches + patch) * self.dictionary.n_atoms() + atom
    }

    fn row_entries(&self, n: usize) -> BTreeMap<usize, f64> {
        let d = &self.dictionary;
        let q = d.patch_len();
        let mut row = BTreeMap::new();
        for s in &self.segments[self.row_ptr[n]..self.row_ptr[n + 1]] {
            for k in 0..d.n_atoms() {
                let v = s.weight * d.atoms()[k * q + s.row as usize];
                *row.entry(self.column(s.element as usize, s.patch as usize, k)).or_insert(0.0) += v;
            }
        }
        row
    }

    /// Non-zero entries of row `n` of `H`.
    pub fn row_nnz(&self, n: usize) -> usize {
        self.row_entries(n).values().filter(|v| **v != 0.0).count()
    }

    /// `H` as a dense row-major `N × (M·P·K)` matrix; small problems only.
    pub fn to_dense(&self) -> Vec<f64> {
        let cols = self.n_columns();
        let mut out = vec![0.0; self.n_samples * cols];
        for n in 0..self.n_samples {
            for (c, v) in self.row_entries(n) {
                out[n * cols + c] = v;
            }
        }
        out
    }

    /// Hash of everything `H` depends on.
    pub fn key(&self) -> u64 {
        operator_key(self.geometry_hash, self.theta_rad, self.dictionary_hash, &self.weights, self.n_samples)
    }

    /// Content hash of the built operator, for determinism checks.
    pub fn fingerprint(&self) -> u64 {
        let mut f = Fingerprint::new("rep-operator");
        f.u64(self.key());
        for p in &self.row_ptr {
            f.u64(*p as u64);
        }
        for s in &self.segments {
            f.u64(((s.element as u64) << 32) | s.patch as u64);
            f.u64(s.row as u64);
            f.f64s(&[s.weight]);
        }
        f.finish()
    }
}

fn operator_key(geometry_hash: u64, theta: f64, dictionary_hash: u64, weights: &[f64], n: usize) -> u64 {
    let mut f = Fingerprint::new("rep-operator-key");
    f.u64(geometry_hash).f64s(&[theta]).u64(dictionary_hash).f64s(weights).u64(n as u64);
    f.finish()
}

/// `Φ = H Z` for line `line` of `code`, visiting only non-zero coefficients.
pub fn rep_beamform(op: &RepOperator, code: &SparseCode, line: usize) -> Result<SampledSignal> {
    let d = &op.dictionary;
    if code.n_elements != op.n_elements {
        return invalid(format!(
            "codes cover {} elements, operator expects {}",
            code.n_elements, op.n_elements
        ));
    }
    if code.patch_len != d.patch_len() || code.n_atoms != d.n_atoms() {
        return invalid("codes were produced with a different dictionary shape");
    }
    if code.n_patches != op.n_patches || code.n_samples != op.n_samples {
        return invalid(format!(
            "codes have {} patches of {} samples, operator expects {} for {} samples",
            code.n_patches, code.n_samples, op.n_patches, op.n_samples
        ));
    }
    if line >= code.n_lines {
        return invalid(format!("line {line} out of range 0..{}", code.n_lines));
    }
    let q = d.patch_len();
    let atoms = d.atoms();
    let mut out = vec![0.0; op.n_samples];
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for s in &op.segments[op.row_ptr[n]..op.row_ptr[n + 1]] {
            let z = code.get(line, s.element as usize, s.patch as usize);
            let mut v = 0.0;
            for &(k, c) in &z.entries {
                if k >= d.n_atoms() {
                    return invalid(format!("atom index {k} out of range"));
                }
                v += atoms[k * q + s.row as usize] * c;
            }
            acc += s.weight * v;
        }
        *o = acc;
    }
    Ok(SampledSignal {
        samples: out,
        fs_hz: op.fs_hz,
        t0_s: 0.0,
    })
}

/// Built operators keyed by (geometry, θ, dictionary, weights, N).
#[derive(Debug, Default)]
pub struct OperatorCache {
    entries: Mutex<HashMap<u64, Arc<RepOperator>>>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("operator cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_build(
        &self,
        geometry: &ArrayGeometry,
        theta_rad: f64,
        dict: &Arc<Dictionary>,
        weights: &[f64],
        n_samples: usize,
    ) -> Result<Arc<RepOperator>> {
        let key = operator_key(geometry.fingerprint(), theta_rad, dict.fingerprint(), weights, n_samples);
        if let Some(op) = self.entries.lock().expect("operator cache poisoned").get(&key) {
            return Ok(Arc::clone(op));
        }
        let op = Arc::new(build_rep_operator(geometry, theta_rad, Arc::clone(dict), weights, n_samples)?);
        let mut map = self.entries.lock().expect("operator cache poisoned");
        Ok(Arc::clone(map.entry(key).or_insert(op)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(q: usize) -> Arc<Dictionary> {
        let mut a = vec![0.0; q * q];
        for i in 0..q {
            a[i * q + i] = 1.0;
        }
        Arc::new(Dictionary::new(a, q, q).unwrap())
    }

    #[test]
    fn identity_dictionary_single_reference_element_gives_identity() {
        let g = ArrayGeometry::new(vec![0.0], 1e-4, 1540.0, 16e6, 3.5e6).unwrap();
        let op = build_rep_operator(&g, 0.2, identity(4), &[1.0], 12).unwrap();
        let h = op.to_dense();
        for r in 0..12 {
            for c in 0..12 {
                assert_eq!(h[r * 12 + c], if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn cache_returns_shared_operator() {
        let g = ArrayGeometry::standard(4);
        let cache = OperatorCache::new();
        let d = identity(8);
        let a = cache.get_or_build(&g, 0.1, &d, &[1.0; 4], 64).unwrap();
        let b = cache.get_or_build(&g, 0.1, &d, &[1.0; 4], 64).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        cache.get_or_build(&g, 0.2, &d, &[1.0; 4], 64).unwrap();
        assert_eq!(cache.len(), 2);
    }
}
