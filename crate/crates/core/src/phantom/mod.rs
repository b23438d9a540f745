//! Desk-scale stand-in for a full acoustic simulator: random scatterer
//! phantoms and linear-superposition synthesis of per-element echoes.

mod geometry;
mod simulate;

pub use geometry::{sector_angles, ArrayGeometry};
pub use simulate::{beam_profile, simulate_rx, RawFrame};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseCorruption {
    pub freq_shift_hz: f64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub corruption: Option<PulseCorruption>,
    /// Strong reflector, as opposed to a speckle scatterer.
    #[serde(default)]
    pub strong: bool,
}

impl Scatterer {
    pub fn range(&self) -> f64 {
        (self.x_m * self.x_m + self.y_m * self.y_m + self.z_m * self.z_m).sqrt()
    }

    /// Angle off the z axis in the x–z plane.
    pub fn angle(&self) -> f64 {
        self.x_m.atan2(self.z_m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
}

impl Phantom {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.scatterers.iter().enumerate() {
            if !(s.z_m > 0.0) {
                return invalid(format!("scatterer {i} lies at z = {} m, not in front of the array", s.z_m));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    pub fn speckle_only(&self) -> Phantom {
        Phantom {
            scatterers: self.scatterers.iter().filter(|s| !s.strong).copied().collect(),
        }
    }

    pub fn reflectors_only(&self) -> Phantom {
        Phantom {
            scatterers: self.scatterers.iter().filter(|s| s.strong).copied().collect(),
        }
    }

    pub fn union(&self, other: &Phantom) -> Phantom {
        let mut scatterers = self.scatterers.clone();
        scatterers.extend_from_slice(&other.scatterers);
        Phantom { scatterers }
    }
}

/// Axis-aligned speckle region `|x| ≤ x_half, |y| ≤ y_half, |z − z_center| ≤ z_half`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionBox {
    pub x_half_m: f64,
    pub y_half_m: f64,
    pub z_center_m: f64,
    pub z_half_m: f64,
}

impl Default for RegionBox {
    fn default() -> Self {
        Self {
            x_half_m: 9e-3,
            y_half_m: 5e-3,
            z_center_m: 70e-3,
            z_half_m: 14e-3,
        }
    }
}

impl RegionBox {
    fn validate(&self) -> Result<()> {
        if !(self.x_half_m > 0.0 && self.y_half_m >= 0.0 && self.z_half_m > 0.0) {
            return invalid("speckle region box is empty");
        }
        if !(self.z_center_m - self.z_half_m > 0.0) {
            return invalid("speckle region box must lie in front of the array (z > 0)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeckleConfig {
    pub count: usize,
    pub region: RegionBox,
    pub amplitude_std: f64,
}

impl Default for SpeckleConfig {
    fn default() -> Self {
        Self {
            count: 100_000,
            region: RegionBox::default(),
            amplitude_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointPhantomConfig {
    pub speckle: SpeckleConfig,
    /// Strong reflector positions `[x, y, z]` in meters.
    pub reflectors_m: Vec<[f64; 3]>,
    /// Reflector amplitude in units of the speckle amplitude std.
    pub gain: f64,
    pub seed: u64,
}

impl Default for PointPhantomConfig {
    fn default() -> Self {
        Self {
            speckle: SpeckleConfig::default(),
            reflectors_m: [65e-3, 70e-3, 75e-3, 80e-3].iter().map(|&z| [0.0, 0.0, z]).collect(),
            gain: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CystPhantomConfig {
    pub speckle: SpeckleConfig,
    pub cyst_center_m: [f64; 3],
    pub cyst_radius_m: f64,
    pub reflector_m: [f64; 3],
    pub gain: f64,
    pub seed: u64,
}

impl Default for CystPhantomConfig {
    fn default() -> Self {
        Self {
            speckle: SpeckleConfig::default(),
            cyst_center_m: [0.0, 0.0, 70e-3],
            cyst_radius_m: 8.5e-3,
            reflector_m: [8.6e-3, 0.0, 70e-3],
            gain: 100.0,
            seed: 0,
        }
    }
}

fn draw_speckle(cfg: &SpeckleConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Scatterer>> {
    cfg.region.validate()?;
    if !(cfg.amplitude_std >= 0.0) {
        return invalid("speckle amplitude std must be non-negative");
    }
    let normal = Normal::new(0.0, cfg.amplitude_std).map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
    let r = cfg.region;
    Ok((0..cfg.count)
        .map(|_| {
            let x = rng.random_range(-r.x_half_m..=r.x_half_m);
            let y = if r.y_half_m > 0.0 {
                rng.random_range(-r.y_half_m..=r.y_half_m)
            } else {
                0.0
            };
            let z = rng.random_range(r.z_center_m - r.z_half_m..=r.z_center_m + r.z_half_m);
            Scatterer {
                x_m: x,
                y_m: y,
                z_m: z,
                amplitude: normal.sample(rng),
                corruption: None,
                strong: false,
            }
        })
        .collect())
}

fn reflector(p: [f64; 3], amplitude: f64) -> Scatterer {
    Scatterer {
        x_m: p[0],
        y_m: p[1],
        z_m: p[2],
        amplitude,
        corruption: None,
        strong: true,
    }
}

/// Uniform speckle in a box plus strong reflectors of amplitude `gain × std`.
pub fn make_point_phantom(cfg: &PointPhantomConfig) -> Result<Phantom> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scatterers = draw_speckle(&cfg.speckle, &mut rng)?;
    let amp = cfg.gain * cfg.speckle.amplitude_std;
    scatterers.extend(cfg.reflectors_m.iter().map(|&p| reflector(p, amp)));
    let phantom = Phantom { scatterers };
    phantom.validate()?;
    Ok(phantom)
}

/// Speckle with an anechoic disc (x–z plane) and one strong reflector outside it.
pub fn make_cyst_phantom(cfg: &CystPhantomConfig) -> Result<Phantom> {
    if !(cfg.cyst_radius_m >= 0.0) {
        return invalid("cyst radius must be non-negative");
    }
    let [cx, _, cz] = cfg.cyst_center_m;
    let r2 = cfg.cyst_radius_m * cfg.cyst_radius_m;
    let inside = |x: f64, z: f64| (x - cx).powi(2) + (z - cz).powi(2) < r2;
    if inside(cfg.reflector_m[0], cfg.reflector_m[2]) {
        return invalid("strong reflector lies inside the cyst");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scatterers: Vec<Scatterer> = draw_speckle(&cfg.speckle, &mut rng)?
        .into_iter()
        .filter(|s| !inside(s.x_m, s.z_m))
        .collect();
    scatterers.push(reflector(cfg.reflector_m, cfg.gain * cfg.speckle.amplitude_std));
    let phantom = Phantom { scatterers };
    phantom.validate()?;
    Ok(phantom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_speckle(count: usize) -> SpeckleConfig {
        SpeckleConfig {
            count,
            ..Default::default()
        }
    }

    #[test]
    fn point_phantom_reflectors_have_gain_amplitude() {
        let cfg = PointPhantomConfig {
            speckle: small_speckle(500),
            seed: 3,
            ..Default::default()
        };
        let p = make_point_phantom(&cfg).unwrap();
        let strong: Vec<_> = p.scatterers.iter().filter(|s| s.strong).collect();
        assert_eq!(strong.len(), 4);
        for (s, z) in strong.iter().zip([65e-3, 70e-3, 75e-3, 80e-3]) {
            assert_eq!(s.amplitude, 50.0);
            assert_eq!((s.x_m, s.z_m), (0.0, z));
        }
        for s in p.speckle_only().scatterers {
            assert!(s.x_m.abs() <= 9e-3 && s.y_m.abs() <= 5e-3 && (s.z_m - 70e-3).abs() <= 14e-3);
        }
    }

    #[test]
    fn speckle_free_point_phantom() {
        let cfg = PointPhantomConfig {
            speckle: small_speckle(0),
            reflectors_m: vec![[0.0, 0.0, 0.05]],
            ..Default::default()
        };
        assert_eq!(make_point_phantom(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn phantoms_are_deterministic() {
        let cfg = PointPhantomConfig {
            speckle: small_speckle(200),
            seed: 11,
            ..Default::default()
        };
        assert_eq!(make_point_phantom(&cfg).unwrap(), make_point_phantom(&cfg).unwrap());
        let other = PointPhantomConfig { seed: 12, ..cfg.clone() };
        assert_ne!(make_point_phantom(&cfg).unwrap(), make_point_phantom(&other).unwrap());
    }

    #[test]
    fn empty_box_rejected() {
        let mut cfg = PointPhantomConfig::default();
        cfg.speckle.region.x_half_m = 0.0;
        assert!(make_point_phantom(&cfg).is_err());
    }

    #[test]
    fn cyst_is_empty_and_reflector_placed() {
        let cfg = CystPhantomConfig {
            speckle: small_speckle(5000),
            seed: 1,
            ..Default::default()
        };
        let p = make_cyst_phantom(&cfg).unwrap();
        let min_d = p
            .speckle_only()
            .scatterers
            .iter()
            .map(|s| (s.x_m.powi(2) + (s.z_m - 70e-3).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(min_d >= 8.5e-3);
        let refl = p.reflectors_only().scatterers[0];
        assert_eq!(refl.amplitude, 100.0);
        assert!((refl.range() - 70.527e-3).abs() < 1e-6);
        assert!((refl.angle().to_degrees() - 7.0).abs() < 0.01);
    }

    #[test]
    fn zero_radius_cyst_keeps_all_speckle() {
        let cfg = CystPhantomConfig {
            speckle: small_speckle(300),
            cyst_radius_m: 0.0,
            ..Default::default()
        };
        assert_eq!(make_cyst_phantom(&cfg).unwrap().len(), 301);
    }

    #[test]
    fn reflector_inside_cyst_rejected() {
        let cfg = CystPhantomConfig {
            speckle: small_speckle(10),
            reflector_m: [1e-3, 0.0, 70e-3],
            ..Default::default()
        };
        assert!(make_cyst_phantom(&cfg).is_err());
    }

    #[test]
    fn behind_array_rejected() {
        let p = Phantom {
            scatterers: vec![reflector([0.0, 0.0, -1e-3], 1.0)],
        };
        assert!(p.validate().is_err());
    }
}
