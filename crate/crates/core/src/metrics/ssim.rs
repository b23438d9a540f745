use super::{BModeImage, I_MAX};
use crate::error::Result;

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5) and
/// the usual 8-bit constants. Near the border the window is truncated to the
/// image and renormalized, so every pixel contributes.
pub fn ssim(a: &BModeImage, b: &BModeImage) -> Result<f64> {
    a.same_shape(b)?;
    let (w, h) = (a.width, a.height);
    if w == 0 || h == 0 {
        return Ok(1.0);
    }
    let g: Vec<f64> = (0..=2 * RADIUS)
        .map(|i| {
            let d = i as f64 - RADIUS as f64;
            (-(d * d) / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();

    let x = &a.pixels;
    let y = &b.pixels;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let ones = vec![1.0; w * h];

    let norm = blur(&ones, w, h, &g);
    let mx = blur(x, w, h, &g);
    let my = blur(y, w, h, &g);
    let sxx = blur(&xx, w, h, &g);
    let syy = blur(&yy, w, h, &g);
    let sxy = blur(&xy, w, h, &g);

    let c1 = (K1 * I_MAX).powi(2);
    let c2 = (K2 * I_MAX).powi(2);
    let mut total = 0.0;
    for i in 0..w * h {
        let n = norm[i];
        let (ux, uy) = (mx[i] / n, my[i] / n);
        let vx = sxx[i] / n - ux * ux;
        let vy = syy[i] / n - uy * uy;
        let cxy = sxy[i] / n - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / (w * h) as f64)
}

/// Separable correlation with `g`, zero outside the image.
fn blur(v: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let r = g.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let lo = col.saturating_sub(r);
            let hi = (col + r).min(w - 1);
            tmp[row * w + col] = (lo..=hi).map(|c| g[c + r - col] * v[row * w + c]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        let lo = row.saturating_sub(r);
        let hi = (row + r).min(h - 1);
        for col in 0..w {
            out[row * w + col] = (lo..=hi).map(|k| g[k + r - row] * tmp[k * w + col]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_score_one() {
        let px: Vec<f64> = (0..400).map(|i| (i * 37 % 255) as f64).collect();
        let a = BModeImage::new(20, 20, px).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
