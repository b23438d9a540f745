use std::path::Path;

use anyhow::{bail, Context, Result};
use echosplit::beamform::Apodization;
use echosplit::decomposition::{DecompositionConfig, Method};
use echosplit::hashing::Fingerprint;
use echosplit::phantom::{sector_angles, ArrayGeometry, CystPhantomConfig, PointPhantomConfig};
use echosplit::signal::PulseModel;
use serde::{Deserialize, Serialize};

/// Everything a run depends on. Unknown keys are rejected; missing sections
/// take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub pulse: PulseConfig,
    pub scan: ScanConfig,
    pub phantom: PhantomConfig,
    pub decomposition: DecompositionConfig,
    pub dictionary: DictionaryConfig,
    pub beamform: BeamformConfig,
    pub imaging: ImagingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub n_elements: usize,
    pub pitch_m: f64,
    pub element_width_m: f64,
    pub c_mps: f64,
    pub fs_hz: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n_elements: 64,
            pitch_m: 0.275e-3,
            element_width_m: 0.22e-3,
            c_mps: 1540.0,
            fs_hz: 16e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    pub f0_hz: f64,
    pub envelope_sigma_s: f64,
    pub phase_rad: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            f0_hz: 3.5e6,
            envelope_sigma_s: 0.3e-6,
            phase_rad: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub n_lines: usize,
    pub sector_deg: f64,
    pub n_samples: usize,
    /// Keep only elements `[start, end)` of the simulated aperture as
    /// receive channels.
    pub receive_elements: Option<[usize; 2]>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n_lines: 48,
            sector_deg: 24.0,
            n_samples: 3328,
            receive_elements: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    #[default]
    Point,
    Cyst,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub point: PointPhantomConfig,
    pub cyst: CystPhantomConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionaryConfig {
    pub patch_len: usize,
    pub n_atoms: usize,
    pub n_iters: usize,
    /// Minimum number of beamformed lines drawn for training; more are
    /// drawn when these do not yield `n_atoms` non-silent patches.
    pub train_lines: usize,
    pub train_sparsity: Option<usize>,
    pub train_tol: Option<f64>,
    /// Per-patch coding tolerance as a fraction of the RMS patch norm of
    /// the raw frame.
    pub encode_tol_rel: f64,
    pub max_nnz: Option<usize>,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self {
            patch_len: 100,
            n_atoms: 400,
            n_iters: 10,
            train_lines: 10,
            train_sparsity: Some(8),
            train_tol: None,
            encode_tol_rel: 0.2,
            max_nnz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamformConfig {
    pub apodization: Apodization,
    /// Pulses on different elements whose implied ranges chain within this
    /// distance are treated as one reflector.
    pub group_tolerance_m: f64,
    /// Reflectors localized by different lines closer than this are one.
    pub merge_tolerance_m: f64,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            apodization: Apodization::Uniform,
            group_tolerance_m: 0.5e-3,
            merge_tolerance_m: 2e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    pub dynamic_range_db: f64,
    pub width_px: usize,
    pub height_px: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            dynamic_range_db: 50.0,
            width_px: 512,
            height_px: 512,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.array()?;
        self.pulse_model()?;
        self.decomposition.validate()?;
        if self.scan.n_lines == 0 || self.scan.n_samples == 0 {
            bail!("scan needs at least one line and one sample");
        }
        if let Some([a, b]) = self.scan.receive_elements {
            if a >= b || b > self.geometry.n_elements {
                bail!("receive_elements [{a}, {b}) outside 0..{}", self.geometry.n_elements);
            }
        }
        if !(self.beamform.group_tolerance_m >= 0.0 && self.beamform.merge_tolerance_m >= 0.0) {
            bail!("beamform tolerances must be non-negative");
        }
        let d = &self.dictionary;
        if d.patch_len == 0 || d.n_atoms == 0 {
            bail!("dictionary needs positive patch_len and n_atoms");
        }
        if !(d.encode_tol_rel >= 0.0) {
            bail!("encode_tol_rel must be non-negative");
        }
        if !(self.imaging.dynamic_range_db > 0.0) || self.imaging.width_px == 0 || self.imaging.height_px == 0 {
            bail!("imaging needs a positive dynamic range and image size");
        }
        Ok(())
    }

    pub fn array(&self) -> Result<ArrayGeometry> {
        let g = &self.geometry;
        Ok(ArrayGeometry::linear(
            g.n_elements,
            g.pitch_m,
            g.element_width_m,
            g.c_mps,
            g.fs_hz,
            self.pulse.f0_hz,
        )?)
    }

    pub fn pulse_model(&self) -> Result<PulseModel> {
        Ok(PulseModel::new(self.pulse.f0_hz, self.pulse.envelope_sigma_s, self.pulse.phase_rad)?)
    }

    pub fn line_angles(&self) -> Vec<f64> {
        if self.scan.n_lines == 1 {
            return vec![0.0];
        }
        sector_angles(self.scan.n_lines, self.scan.sector_deg.to_radians())
    }

    /// Hash of the settings a trained dictionary depends on.
    pub fn dictionary_hash(&self) -> u64 {
        let d = &self.dictionary;
        let mut f = Fingerprint::new("dictionary-config");
        f.u64(d.patch_len as u64)
            .u64(d.n_atoms as u64)
            .u64(d.n_iters as u64)
            .u64(d.train_lines as u64)
            .u64(d.train_sparsity.map_or(u64::MAX, |v| v as u64))
            .f64s(&[d.train_tol.unwrap_or(-1.0)])
            .u64(substream(self.seed, "dictionary"))
            .u64(substream(self.seed, "training-lines"));
        f.finish()
    }

    pub fn tag(&self) -> String {
        tag(self.decomposition.method, self.decomposition.modified)
    }
}

/// Artifact name suffix for a decomposition variant.
pub fn tag(method: Method, modified: bool) -> String {
    if modified {
        format!("{}-modified", method.as_str())
    } else {
        method.as_str().to_string()
    }
}

/// Independent seed for a named consumer of randomness.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut f = Fingerprint::new("substream");
    f.bytes(name.as_bytes()).u64(seed);
    f.finish()
}
