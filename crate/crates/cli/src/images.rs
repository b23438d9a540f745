//! 8-bit grayscale image files.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use echosplit::metrics::BModeImage;

use crate::formats::write_atomic;

/// Binary portable graymap.
pub fn encode_pgm(img: &BModeImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<BModeImage> {
    // header: magic, width, height, maxval separated by whitespace, comments skipped
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    ensure!(fields[0] == "P5", "not a binary PGM file");
    let w: usize = fields[1].parse()?;
    let h: usize = fields[2].parse()?;
    ensure!(fields[3] == "255", "only 8-bit PGM files are supported");
    let data = &bytes[pos + 1..];
    ensure!(data.len() == w * h, "PGM payload is {} bytes, expected {}", data.len(), w * h);
    Ok(BModeImage::new(w, h, data.iter().map(|&v| v as f64).collect())?)
}

pub fn write_pgm(path: &Path, img: &BModeImage) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}

pub fn read_pgm(path: &Path) -> Result<BModeImage> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_pgm(&bytes).with_context(|| format!("loading {}", path.display()))
}

pub fn write_png(path: &Path, img: &BModeImage) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.to_u8())
        .context("image buffer size mismatch")?;
    let mut bytes = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut bytes, image::ImageFormat::Png)?;
    write_atomic(path, bytes.get_ref())
}
