//! Portable grid files and grayscale dumps.
//!
//! Grid layout (all little-endian):
//!
//! ```text
//! magic      8 bytes  "MELGRID\0"
//! version    u32      1
//! rows       u32
//! cols       u32
//! rate       u32      sample rate, Hz
//! window     u32
//! hop        u32
//! n_mels     u32
//! fmin       f64
//! fmax       f64
//! log_floor  f64
//! has_floor  u8       1 if a blank-clip reference follows
//! floor      f64
//! bands      rows x (low, center, high) f64
//! values     rows x cols f32, row-major, row 0 = lowest frequency
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Grid, MelBand, MelSpectrogram, SpectrogramConfig};

const MAGIC: &[u8; 8] = b"MELGRID\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a grid file (bad magic)")]
    BadMagic,
    #[error("unsupported grid version {0}")]
    Version(u32),
    #[error("grid file truncated at `{0}`")]
    Truncated(&'static str),
}

pub fn encode_grid(spec: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::new();
    let c = &spec.config;
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        spec.n_rows() as u32,
        spec.n_frames() as u32,
        spec.sample_rate,
        c.window_len as u32,
        c.hop_len as u32,
        c.n_mels as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [c.fmin, c.fmax, c.log_floor] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(spec.blank_floor.is_some() as u8);
    out.extend_from_slice(&spec.blank_floor.unwrap_or(0.0).to_le_bytes());
    for b in &spec.bands {
        for v in [b.low_hz, b.center_hz, b.high_hz] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in spec.values.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], GridIoError> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(GridIoError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, what: &'static str) -> Result<u32, GridIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64, GridIoError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &'static str) -> Result<f32, GridIoError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_grid(bytes: &[u8]) -> Result<MelSpectrogram, GridIoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(GridIoError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(GridIoError::Version(version));
    }
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let sample_rate = r.u32("rate")?;
    let window_len = r.u32("window")? as usize;
    let hop_len = r.u32("hop")? as usize;
    let n_mels = r.u32("n_mels")? as usize;
    let config = SpectrogramConfig {
        window_len,
        hop_len,
        n_mels,
        fmin: r.f64("fmin")?,
        fmax: r.f64("fmax")?,
        log_floor: r.f64("log_floor")?,
    };
    let has_floor = r.take(1, "has_floor")?[0] != 0;
    let floor = r.f64("floor")?;
    let mut bands = Vec::with_capacity(rows);
    for _ in 0..rows {
        bands.push(MelBand {
            low_hz: r.f64("bands")?,
            center_hz: r.f64("bands")?,
            high_hz: r.f64("bands")?,
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f32("values")? as f64);
    }
    Ok(MelSpectrogram {
        values: Grid::from_vec(rows, cols, data),
        bands,
        config,
        sample_rate,
        blank_floor: has_floor.then_some(floor),
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> GridIoError + '_ {
    move |source| GridIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_grid(path: impl AsRef<Path>, spec: &MelSpectrogram) -> Result<(), GridIoError> {
    let path = path.as_ref();
    fs::write(path, encode_grid(spec)).map_err(io_err(path))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<MelSpectrogram, GridIoError> {
    let path = path.as_ref();
    decode_grid(&fs::read(path).map_err(io_err(path))?)
}

/// Binary PGM (P5) with the highest-frequency row at the top, linearly
/// scaled from the grid minimum (black) to maximum (white).
pub fn write_pgm(path: impl AsRef<Path>, spec: &MelSpectrogram) -> Result<(), GridIoError> {
    let path = path.as_ref();
    let g = &spec.values;
    let lo = g.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = g.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", g.cols(), g.rows()).into_bytes();
    for r in (0..g.rows()).rev() {
        out.extend(
            g.row(r)
                .iter()
                .map(|v| ((v - lo) / span * 255.0).round() as u8),
        );
    }
    fs::write(path, out).map_err(io_err(path))
}
