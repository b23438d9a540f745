//! B-mode image formation and image/compression quality measures.

mod ssim;

pub use ssim::ssim;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::ComponentSignal;
use crate::error::{invalid, Result};
use crate::signal::analytic_envelope;

pub const I_MAX: f64 = 255.0;
pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 50.0;
pub const DEFAULT_IMAGE_SIZE: usize = 512;

/// Magnitude of the analytic signal of an RF line, or `√(I² + Q²)` of a
/// baseband one.
pub fn envelope(line: &ComponentSignal) -> Vec<f64> {
    match line {
        ComponentSignal::Rf(s) => analytic_envelope(&s.samples),
        ComponentSignal::Baseband(b) => b.envelope(),
    }
}

/// Line-by-sample data on a fan of scan lines; sample `n` of every line lies
/// at range `r0_m + n · dr_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarImage {
    pub angles_rad: Vec<f64>,
    pub n_samples: usize,
    pub r0_m: f64,
    pub dr_m: f64,
    pub values: Vec<f64>,
}

impl PolarImage {
    /// Lines sampled at `fs_hz` in round-trip time starting at `t0_s`.
    pub fn from_lines(lines: Vec<Vec<f64>>, angles_rad: Vec<f64>, fs_hz: f64, c_mps: f64, t0_s: f64) -> Result<Self> {
        if lines.len() != angles_rad.len() {
            return invalid(format!("{} lines for {} angles", lines.len(), angles_rad.len()));
        }
        let n = lines.first().map_or(0, Vec::len);
        if lines.iter().any(|l| l.len() != n) {
            return invalid("lines differ in length");
        }
        let img = Self {
            angles_rad,
            n_samples: n,
            r0_m: c_mps * t0_s / 2.0,
            dr_m: c_mps / (2.0 * fs_hz),
            values: lines.concat(),
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.angles_rad.len() * self.n_samples {
            return invalid("polar image size does not match its layout");
        }
        if self.angles_rad.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("line angles must be strictly increasing");
        }
        if !(self.dr_m > 0.0) {
            return invalid("range step must be positive");
        }
        Ok(())
    }

    pub fn n_lines(&self) -> usize {
        self.angles_rad.len()
    }

    pub fn get(&self, line: usize, n: usize) -> f64 {
        self.values[line * self.n_samples + n]
    }

    pub fn r_max(&self) -> f64 {
        self.r0_m + (self.n_samples.max(1) - 1) as f64 * self.dr_m
    }

    /// Bilinear value at `(θ, r)`, `None` outside the sector.
    pub fn sample(&self, theta: f64, r: f64) -> Option<f64> {
        let a = &self.angles_rad;
        if a.len() < 2 || self.n_samples < 2 {
            return None;
        }
        if theta < a[0] || theta > a[a.len() - 1] {
            return None;
        }
        let last = (self.n_samples - 1) as f64;
        let mut u = (r - self.r0_m) / self.dr_m;
        // round-off at the sector edges
        if u < -1e-9 || u > last + 1e-9 {
            return None;
        }
        u = u.clamp(0.0, last);
        let l = a.partition_point(|&x| x <= theta).clamp(1, a.len() - 1) - 1;
        let fl = (theta - a[l]) / (a[l + 1] - a[l]);
        let n = (u.floor() as usize).min(self.n_samples - 2);
        let fn_ = u - n as f64;
        let v00 = self.get(l, n);
        let v01 = self.get(l, n + 1);
        let v10 = self.get(l + 1, n);
        let v11 = self.get(l + 1, n + 1);
        Some((1.0 - fl) * ((1.0 - fn_) * v00 + fn_ * v01) + fl * ((1.0 - fn_) * v10 + fn_ * v11))
    }
}

/// `255 · clip(1 + 20 log10(env / env_max) / DR, 0, 1)`, with `env_max` the
/// largest value of `env`.
pub fn log_compress(env: &[f64], dynamic_range_db: f64) -> Result<Vec<f64>> {
    let max = env.iter().fold(0.0_f64, |m, v| m.max(*v));
    log_compress_ref(env, dynamic_range_db, max)
}

/// As [`log_compress`] with an explicit reference level.
pub fn log_compress_ref(env: &[f64], dynamic_range_db: f64, reference: f64) -> Result<Vec<f64>> {
    if !(dynamic_range_db > 0.0) || !dynamic_range_db.is_finite() {
        return invalid(format!("dynamic range must be positive, got {dynamic_range_db}"));
    }
    if !(reference > 0.0) {
        return Ok(vec![0.0; env.len()]);
    }
    Ok(env
        .iter()
        .map(|&e| {
            if e <= 0.0 {
                0.0
            } else {
                I_MAX * (1.0 + 20.0 * (e / reference).log10() / dynamic_range_db).clamp(0.0, 1.0)
            }
        })
        .collect())
}

/// Grayscale image, row-major, row 0 at the shallowest depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BModeImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub x_min_m: f64,
    pub x_max_m: f64,
    pub z_min_m: f64,
    pub z_max_m: f64,
}

impl BModeImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return invalid(format!("{} pixels for a {width}x{height} image", pixels.len()));
        }
        Ok(Self {
            width,
            height,
            pixels,
            x_min_m: 0.0,
            x_max_m: width as f64,
            z_min_m: 0.0,
            z_max_m: height as f64,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Pixels rounded to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn same_shape(&self, other: &BModeImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return invalid(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            ));
        }
        Ok(())
    }
}

/// Bilinear resampling of a sector onto a `width × height` Cartesian grid
/// spanning the sector's bounding box; pixels outside the sector are 0.
pub fn scan_convert(polar: &PolarImage, width: usize, height: usize) -> Result<BModeImage> {
    polar.validate()?;
    if polar.n_lines() < 2 {
        return invalid("scan conversion needs at least two lines");
    }
    if width == 0 || height == 0 {
        return invalid("output image must have positive size");
    }
    let a = &polar.angles_rad;
    let (t_lo, t_hi) = (a[0], a[a.len() - 1]);
    let r_lo = polar.r0_m.max(0.0);
    let r_hi = polar.r_max();
    let mut xs = [r_lo * t_lo.sin(), r_hi * t_lo.sin(), r_lo * t_hi.sin(), r_hi * t_hi.sin()];
    xs.sort_by(f64::total_cmp);
    let (x_min, x_max) = (xs[0], xs[3]);
    let z_min = if t_lo <= 0.0 && t_hi >= 0.0 {
        r_lo * t_lo.abs().max(t_hi.abs()).cos()
    } else {
        r_lo * t_lo.cos().min(t_hi.cos())
    };
    let z_max = if t_lo <= 0.0 && t_hi >= 0.0 { r_hi } else { r_hi * t_lo.cos().max(t_hi.cos()) };

    let step = |lo: f64, hi: f64, n: usize| if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let dx = step(x_min, x_max, width);
    let dz = step(z_min, z_max, height);
    let pixels: Vec<f64> = (0..height)
        .into_par_iter()
        .flat_map_iter(|row| {
            let z = z_min + row as f64 * dz;
            (0..width).map(move |col| {
                let x = x_min + col as f64 * dx;
                polar.sample(x.atan2(z), x.hypot(z)).unwrap_or(0.0)
            })
        })
        .collect();
    Ok(BModeImage {
        width,
        height,
        pixels,
        x_min_m: x_min,
        x_max_m: x_max,
        z_min_m: z_min,
        z_max_m: z_max,
    })
}

/// Mean squared pixel difference and `10 log10(255² / MSE)`; identical
/// images give `f64::INFINITY`.
pub fn mse_psnr(a: &BModeImage, b: &BModeImage) -> Result<(f64, f64)> {
    a.same_shape(b)?;
    let n = a.pixels.len().max(1) as f64;
    let mse = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok((mse, psnr_from_mse(mse)))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (I_MAX * I_MAX / mse).log10()
    }
}

/// Coefficient accounting: everything kept to describe a frame, against the
/// number of raw samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub n_samples_total: u64,
    pub n_background_coeffs: u64,
    pub n_reflector_params: u64,
    pub percent_coeffs: f64,
    pub compression_factor: f64,
}

/// Numbers stored per strong reflector: `(a, t, ω)` for the STFT path,
/// `(a_I, a_Q, t)` for the IQ path.
pub const PARAMS_PER_REFLECTOR: u64 = 3;

pub fn compression_report(n_samples_total: u64, n_background_coeffs: u64, n_reflectors: u64) -> CompressionReport {
    CompressionReport::from_counts(n_samples_total, n_background_coeffs, PARAMS_PER_REFLECTOR * n_reflectors)
}

impl CompressionReport {
    pub fn from_counts(n_samples_total: u64, n_background_coeffs: u64, n_reflector_params: u64) -> Self {
        let kept = n_background_coeffs + n_reflector_params;
        let (factor, percent) = if kept == 0 {
            (f64::INFINITY, 0.0)
        } else {
            (
                n_samples_total as f64 / kept as f64,
                100.0 * kept as f64 / n_samples_total.max(1) as f64,
            )
        };
        Self {
            n_samples_total,
            n_background_coeffs,
            n_reflector_params,
            percent_coeffs: percent,
            compression_factor: factor,
        }
    }

    pub fn kept(&self) -> u64 {
        self.n_background_coeffs + self.n_reflector_params
    }
}
