use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hashing::Fingerprint;

/// Linear array along x, centred on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub element_x_m: Vec<f64>,
    pub element_width_m: f64,
    pub c_mps: f64,
    pub fs_hz: f64,
    pub f0_hz: f64,
}

impl ArrayGeometry {
    pub fn new(element_x_m: Vec<f64>, element_width_m: f64, c_mps: f64, fs_hz: f64, f0_hz: f64) -> Result<Self> {
        let g = Self {
            element_x_m,
            element_width_m,
            c_mps,
            fs_hz,
            f0_hz,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n` elements at `pitch_m` spacing, symmetric about x = 0.
    pub fn linear(n: usize, pitch_m: f64, element_width_m: f64, c_mps: f64, fs_hz: f64, f0_hz: f64) -> Result<Self> {
        let mid = (n as f64 - 1.0) / 2.0;
        let xs = (0..n).map(|m| (m as f64 - mid) * pitch_m).collect();
        Self::new(xs, element_width_m, c_mps, fs_hz, f0_hz)
    }

    /// 0.22 mm elements, 0.055 mm kerf, c = 1540 m/s, f0 = 3.5 MHz, fs = 16 MHz.
    pub fn standard(n_elements: usize) -> Self {
        Self::linear(n_elements, 0.275e-3, 0.22e-3, 1540.0, 16e6, 3.5e6).expect("standard geometry is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_x_m.is_empty() {
            return invalid("array needs at least one element");
        }
        if self.element_x_m.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("element positions must be strictly increasing");
        }
        for (name, v) in [("c_mps", self.c_mps), ("fs_hz", self.fs_hz), ("f0_hz", self.f0_hz)] {
            if !(v > 0.0) || !v.is_finite() {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.element_width_m >= 0.0) {
            return invalid("element width must be non-negative");
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.element_x_m.len()
    }

    pub fn wavelength(&self) -> f64 {
        self.c_mps / self.f0_hz
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.fs_hz
    }

    /// Full active aperture: outer edge to outer edge.
    pub fn aperture_width(&self) -> f64 {
        let first = self.element_x_m[0];
        let last = *self.element_x_m.last().unwrap();
        last - first + self.element_width_m
    }

    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprint::new("array-geometry");
        fp.f64s(&self.element_x_m);
        fp.f64s(&[self.element_width_m, self.c_mps, self.fs_hz, self.f0_hz]);
        fp.finish()
    }
}

/// `n_lines` steering angles starting at `-sector/2` with spacing `sector/n_lines`.
pub fn sector_angles(n_lines: usize, sector_rad: f64) -> Vec<f64> {
    let step = sector_rad / n_lines as f64;
    (0..n_lines).map(|i| -sector_rad / 2.0 + i as f64 * step).collect()
}
