//! File formats: the `TSDQ` binary container, 16-bit PGM export and CSV.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TSDQ"
//! 4       2     format version (u16, currently 1)
//! 6       1     payload kind (u8)
//! 7       ...   kind-specific u32 dims, then row-major f64 values
//! ```
//!
//! | kind | payload     | dims                                                   |
//! |------|-------------|--------------------------------------------------------|
//! | 1    | image       | rows, cols                                             |
//! | 2    | sinogram    | n_angles, n_detectors                                  |
//! | 3    | measurement | n_angles, n_detectors, n_angles_total, angle indices.. |
//! | 4    | checkpoint  | see `denoiser::checkpoint`                            |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, TomoError};
use crate::geometry::{Image, Sinogram};
use crate::sampling::AngleMask;

pub const MAGIC: &[u8; 4] = b"TSDQ";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Image = 1,
    Sinogram = 2,
    Measurement = 3,
    Checkpoint = 4,
}

impl PayloadKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(PayloadKind::Image),
            2 => Some(PayloadKind::Sinogram),
            3 => Some(PayloadKind::Measurement),
            4 => Some(PayloadKind::Checkpoint),
            _ => None,
        }
    }
}

/// A masked sinogram together with the angles it was acquired at.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub mask: AngleMask,
    pub sinogram: Sinogram,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Image(Image),
    Sinogram(Sinogram),
    Measurement(Measurement),
}

/// Append-only little-endian encoder.
#[derive(Debug, Default)]
pub struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn with_header(kind: PayloadKind) -> Self {
        let mut e = Encoder::default();
        e.buf.extend_from_slice(MAGIC);
        e.buf.extend_from_slice(&VERSION.to_le_bytes());
        e.buf.push(kind as u8);
        e
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }
}

/// Cursor over a container body with truncation checks.
pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Decoder<'a> {
    /// Validates magic and version and returns the payload kind.
    pub fn open(bytes: &'a [u8], path: &'a Path) -> Result<(Self, PayloadKind)> {
        let mut d = Decoder { bytes, pos: 0, path };
        let magic = d.take(4)?;
        if magic != MAGIC {
            return Err(d.format(format!("bad magic bytes {magic:?}")));
        }
        let version = u16::from_le_bytes(d.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(d.format(format!("unsupported version {version}")));
        }
        let k = d.u8()?;
        let kind = PayloadKind::from_u8(k).ok_or_else(|| d.format(format!("unknown payload kind {k}")))?;
        Ok((d, kind))
    }

    pub fn format(&self, reason: impl Into<String>) -> TomoError {
        TomoError::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Fails with a truncation error unless `n` more bytes are available.
    pub fn require(&self, n: usize) -> Result<()> {
        if self.bytes.len() < self.pos + n {
            return Err(TomoError::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.require(n.checked_mul(8).ok_or_else(|| self.format("length overflow"))?)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode(payload: &Payload) -> Vec<u8> {
    match payload {
        Payload::Image(img) => {
            let mut e = Encoder::with_header(PayloadKind::Image);
            e.u32(img.side as u32);
            e.u32(img.side as u32);
            e.f64s(&img.data);
            e.buf
        }
        Payload::Sinogram(s) => {
            let mut e = Encoder::with_header(PayloadKind::Sinogram);
            e.u32(s.n_angles as u32);
            e.u32(s.n_detectors as u32);
            e.f64s(&s.data);
            e.buf
        }
        Payload::Measurement(m) => {
            let mut e = Encoder::with_header(PayloadKind::Measurement);
            e.u32(m.sinogram.n_angles as u32);
            e.u32(m.sinogram.n_detectors as u32);
            e.u32(m.mask.n_angles_total() as u32);
            for &a in m.mask.indices() {
                e.u32(a as u32);
            }
            e.f64s(&m.sinogram.data);
            e.buf
        }
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Payload> {
    let (mut d, kind) = Decoder::open(bytes, path)?;
    let payload = match kind {
        PayloadKind::Image => {
            let rows = d.u32()? as usize;
            let cols = d.u32()? as usize;
            if rows != cols {
                return Err(d.format(format!("image must be square, got {rows}x{cols}")));
            }
            Payload::Image(Image::from_vec(rows, d.f64s(rows * cols)?)?)
        }
        PayloadKind::Sinogram => {
            let na = d.u32()? as usize;
            let nd = d.u32()? as usize;
            Payload::Sinogram(Sinogram::from_vec(na, nd, d.f64s(na * nd)?)?)
        }
        PayloadKind::Measurement => {
            let na = d.u32()? as usize;
            let nd = d.u32()? as usize;
            let total = d.u32()? as usize;
            let idx = (0..na)
                .map(|_| d.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let mask = AngleMask::new(idx, total).map_err(|e| d.format(e.to_string()))?;
            let sinogram = Sinogram::from_vec(na, nd, d.f64s(na * nd)?)?;
            Payload::Measurement(Measurement { mask, sinogram })
        }
        PayloadKind::Checkpoint => {
            return Err(d.format("checkpoint payload; load it with denoiser::checkpoint"))
        }
    };
    d.finish()?;
    Ok(payload)
}

pub fn write_container(path: &Path, payload: &Payload) -> Result<()> {
    write_bytes(path, &encode(payload))
}

pub fn read_container(path: &Path) -> Result<Payload> {
    let bytes = fs::read(path).map_err(|e| TomoError::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    match read_container(path)? {
        Payload::Image(i) => Ok(i),
        _ => Err(TomoError::Format {
            path: path.to_path_buf(),
            reason: "expected an image payload".into(),
        }),
    }
}

pub fn read_measurement(path: &Path) -> Result<Measurement> {
    match read_container(path)? {
        Payload::Measurement(m) => Ok(m),
        _ => Err(TomoError::Format {
            path: path.to_path_buf(),
            reason: "expected a measurement payload".into(),
        }),
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| TomoError::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| TomoError::io(path, e))?;
    f.write_all(bytes).map_err(|e| TomoError::io(path, e))
}

/// Linear window to 16 bits with clamping; ties round half to even.
pub fn window_to_u16(v: f64, lo: f64, hi: f64) -> u16 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 65535.0;
    t.round_ties_even() as u16
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples).
pub fn export_pgm(x: &Image, path: &Path, lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) {
        return Err(TomoError::config(format!("pgm window needs lo < hi, got [{lo}, {hi}]")));
    }
    let mut buf = format!("P5\n{} {}\n65535\n", x.side, x.side).into_bytes();
    for &v in &x.data {
        buf.extend_from_slice(&window_to_u16(v, lo, hi).to_be_bytes());
    }
    write_bytes(path, &buf)
}

/// Write rows (header first) as RFC 4180 CSV.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| TomoError::io(parent, e))?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    w.flush().map_err(|e| TomoError::io(path, e))?;
    Ok(())
}

/// Shortest round-trip decimal representation, so CSV values are bit-exact.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}
