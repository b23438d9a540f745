//! Binary containers for frames, dictionaries and sparse codes, plus
//! atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use echosplit::hashing::Fingerprint;
use echosplit::phantom::{ArrayGeometry, RawFrame};
use echosplit::sparse::{Dictionary, SparseCode, SparseVector};

pub const FRAME_MAGIC: &[u8; 4] = b"USRF";
pub const DICTIONARY_MAGIC: &[u8; 4] = b"USDK";
pub const CODE_MAGIC: &[u8; 4] = b"USSC";
pub const VERSION: u16 = 1;

/// Write through a temporary file in the same directory and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut w = Self(magic.to_vec());
        w.u16(VERSION);
        w
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).context("value does not fit the file format")?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], magic: &[u8; 4], what: &'a str) -> Result<Self> {
        ensure!(buf.len() >= 6 && &buf[..4] == magic, "{what}: bad magic, expected {:?}", String::from_utf8_lossy(magic));
        let mut r = Self { buf, pos: 4, what };
        let version = r.u16()?;
        ensure!(version == VERSION, "{what}: unsupported version {version}");
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            bail!("{}: truncated file", self.what);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into()?))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into()?) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into()?))
    }
    fn finish(&self) -> Result<()> {
        ensure!(self.pos == self.buf.len(), "{}: {} trailing bytes", self.what, self.buf.len() - self.pos);
        Ok(())
    }
}

pub fn encode_frame_file(frame: &RawFrame) -> Result<Vec<u8>> {
    frame.validate()?;
    let mut w = Writer::new(FRAME_MAGIC);
    w.u16(0);
    w.u32(frame.n_lines())?;
    w.u32(frame.n_elements())?;
    w.u32(frame.n_samples)?;
    w.f32(frame.geometry.fs_hz);
    w.f32(frame.geometry.f0_hz);
    w.f32(frame.geometry.c_mps);
    for &x in &frame.geometry.element_x_m {
        w.f32(x);
    }
    for &a in &frame.line_angles {
        w.f32(a);
    }
    w.0.reserve(frame.channels.len() * 4);
    for &v in &frame.channels {
        w.f32(v);
    }
    Ok(w.0)
}

/// The file does not carry the element width; it is taken from the caller.
pub fn decode_frame_file(bytes: &[u8], element_width_m: f64) -> Result<RawFrame> {
    let mut r = Reader::open(bytes, FRAME_MAGIC, "frame file")?;
    let _flags = r.u16()?;
    let lines = r.u32()?;
    let m = r.u32()?;
    let n = r.u32()?;
    let fs = r.f32()?;
    let f0 = r.f32()?;
    let c = r.f32()?;
    let xs = (0..m).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let angles = (0..lines).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let count = lines
        .checked_mul(m)
        .and_then(|v| v.checked_mul(n))
        .context("frame file: size overflow")?;
    ensure!(
        bytes.len() - r.pos == count * 4,
        "frame file: payload is {} bytes, header implies {}",
        bytes.len() - r.pos,
        count * 4
    );
    let channels = (0..count).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let geometry = ArrayGeometry::new(xs, element_width_m, c, fs, f0)?;
    let frame = RawFrame {
        geometry,
        line_angles: angles,
        n_samples: n,
        channels,
    };
    frame.validate()?;
    Ok(frame)
}

pub fn write_frame(path: &Path, frame: &RawFrame) -> Result<()> {
    write_atomic(path, &encode_frame_file(frame)?)
}

pub fn read_frame(path: &Path, element_width_m: f64) -> Result<RawFrame> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_frame_file(&bytes, element_width_m).with_context(|| format!("loading {}", path.display()))
}

/// The frame as it reads back from a frame file.
pub fn quantize_frame(frame: &RawFrame) -> RawFrame {
    let mut q = frame.clone();
    q.channels.iter_mut().for_each(|v| *v = *v as f32 as f64);
    q.geometry.element_x_m.iter_mut().for_each(|v| *v = *v as f32 as f64);
    q.line_angles.iter_mut().for_each(|v| *v = *v as f32 as f64);
    q.geometry.fs_hz = q.geometry.fs_hz as f32 as f64;
    q.geometry.f0_hz = q.geometry.f0_hz as f32 as f64;
    q.geometry.c_mps = q.geometry.c_mps as f32 as f64;
    q
}

pub fn frame_hash(frame: &RawFrame) -> u64 {
    let mut f = Fingerprint::new("frame");
    f.u64(frame.geometry.fingerprint())
        .f64s(&frame.line_angles)
        .u64(frame.n_samples as u64)
        .f64s(&frame.channels);
    f.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryFile {
    pub dictionary: Dictionary,
    pub train_tol: f64,
    pub config_hash: u64,
}

pub fn write_dictionary(path: &Path, d: &DictionaryFile) -> Result<()> {
    let dict = &d.dictionary;
    let mut w = Writer::new(DICTIONARY_MAGIC);
    w.u32(dict.patch_len())?;
    w.u32(dict.n_atoms())?;
    w.f64(d.train_tol);
    w.u64(d.config_hash);
    for &v in dict.atoms() {
        w.f32(v);
    }
    write_atomic(path, &w.0)
}

/// Atoms are renormalized after the single-precision round trip.
pub fn read_dictionary(path: &Path) -> Result<DictionaryFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = Reader::open(&bytes, DICTIONARY_MAGIC, "dictionary file")?;
    let q = r.u32()?;
    let k = r.u32()?;
    let train_tol = r.f64()?;
    let config_hash = r.u64()?;
    ensure!(
        bytes.len() - r.pos == q * k * 4,
        "dictionary file: atom payload does not match {q} x {k}"
    );
    let atoms = (0..q * k).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(DictionaryFile {
        dictionary: Dictionary::normalized(atoms, q, k)?,
        train_tol,
        config_hash,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeFile {
    pub code: SparseCode,
    pub dictionary_hash: u64,
    /// Hash of the frame that was coded.
    pub source_hash: u64,
}

pub fn write_codes(path: &Path, c: &CodeFile) -> Result<()> {
    let code = &c.code;
    code.validate()?;
    let mut w = Writer::new(CODE_MAGIC);
    w.u32(code.n_lines)?;
    w.u32(code.n_elements)?;
    w.u32(code.n_patches)?;
    w.u32(code.n_atoms)?;
    w.u32(code.patch_len)?;
    w.u32(code.n_samples)?;
    w.u64(c.dictionary_hash);
    w.u64(c.source_hash);
    for p in &code.patches {
        let nnz = u16::try_from(p.nnz()).context("too many coefficients in one patch for the code file")?;
        w.u16(nnz);
        for &(k, v) in &p.entries {
            w.u32(k)?;
            w.f32(v);
        }
    }
    write_atomic(path, &w.0)
}

pub fn read_codes(path: &Path) -> Result<CodeFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = Reader::open(&bytes, CODE_MAGIC, "code file")?;
    let n_lines = r.u32()?;
    let n_elements = r.u32()?;
    let n_patches = r.u32()?;
    let n_atoms = r.u32()?;
    let patch_len = r.u32()?;
    let n_samples = r.u32()?;
    let dictionary_hash = r.u64()?;
    let source_hash = r.u64()?;
    let count = n_lines * n_elements * n_patches;
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let nnz = r.u16()? as usize;
        let entries = (0..nnz)
            .map(|_| Ok((r.u32()?, r.f32()?)))
            .collect::<Result<Vec<_>>>()?;
        patches.push(SparseVector { entries });
    }
    r.finish()?;
    let code = SparseCode {
        n_lines,
        n_elements,
        n_patches,
        patch_len,
        n_atoms,
        n_samples,
        patches,
    };
    code.validate().context("code file")?;
    Ok(CodeFile {
        code,
        dictionary_hash,
        source_hash,
    })
}

/// Code values as they read back from a code file.
pub fn quantize_code(code: &SparseCode) -> SparseCode {
    let mut q = code.clone();
    for p in &mut q.patches {
        p.entries.iter_mut().for_each(|e| e.1 = e.1 as f32 as f64);
    }
    q
}
