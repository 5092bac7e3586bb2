//! BSAC1 dataset containers, JSON checkpoints and experiment reports.
//!
//! # BSAC1 layout
//!
//! All fields little-endian.
//!
//! | field          | type      |
//! |----------------|-----------|
//! | magic          | `b"BSAC1"`|
//! | version        | `u16` (1) |
//! | height, width  | `u16` x 2 |
//! | fs (Hz)        | `f32`     |
//! | ied (mm)       | `f32`     |
//! | n_segments     | `u32`     |
//!
//! followed by `n_segments` records of `label: u16`, `n_samples: u32` and
//! `n_samples * height * width` `f32` values in time x row x column order.
//! Label `0xFFFF` marks a rest segment. The header does not record which axis
//! is circumferential; readers assume the width axis.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ContainerError, Error, ReportError, Result};
use crate::geometry::{Axis, GridSpec};
use crate::protocol::dataset::{Segment, SessionDataset};

pub const MAGIC: [u8; 5] = *b"BSAC1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 5 + 2 + 2 + 2 + 4 + 4 + 4;
const SEGMENT_HEADER_LEN: usize = 2 + 4;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| io_err(path, e))
}

/// Serializes a dataset into BSAC1 bytes.
pub fn encode_container(ds: &SessionDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let g = &ds.grid;
    let (h, w) = (u16::try_from(g.height), u16::try_from(g.width));
    let (Ok(h), Ok(w)) = (h, w) else {
        return Err(Error::InvalidParameter(format!("grid {}x{} exceeds u16", g.height, g.width)));
    };
    let n_segments = u32::try_from(ds.segments.len())
        .map_err(|_| Error::InvalidParameter("too many segments".into()))?;

    let payload: usize = ds.segments.iter().map(|s| SEGMENT_HEADER_LEN + 4 * s.samples.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&(ds.fs as f32).to_le_bytes());
    out.extend_from_slice(&(g.ied_mm as f32).to_le_bytes());
    out.extend_from_slice(&n_segments.to_le_bytes());
    for s in &ds.segments {
        let n = u32::try_from(s.samples.len() / g.len())
            .map_err(|_| Error::InvalidParameter("segment too long".into()))?;
        out.extend_from_slice(&s.label.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        for v in &s.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ContainerError> {
        if self.remaining() < n {
            return Err(ContainerError::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} available",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u16(&mut self, what: &str) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses BSAC1 bytes. Declared sizes are checked against the remaining
/// payload before anything is allocated.
pub fn decode_container(bytes: &[u8]) -> Result<SessionDataset, ContainerError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 5] = match c.take(5, "magic") {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 5];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(ContainerError::BadMagic(m));
        }
    };
    if magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(ContainerError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let height = c.u16("height")? as usize;
    let width = c.u16("width")? as usize;
    let fs = c.f32("fs")? as f64;
    let ied_mm = c.f32("ied_mm")? as f64;
    let n_segments = c.u32("segment count")? as usize;

    let grid = GridSpec {
        height,
        width,
        ied_mm,
        circumferential_axis: Axis::X,
    };
    grid.validate()
        .map_err(|e| ContainerError::InvalidHeader(e.to_string()))?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(ContainerError::InvalidHeader(format!("sampling rate {fs}")));
    }
    if n_segments.saturating_mul(SEGMENT_HEADER_LEN) > c.remaining() {
        return Err(ContainerError::Oversize(format!(
            "{n_segments} segments cannot fit in {} bytes",
            c.remaining()
        )));
    }

    let channels = grid.len();
    let mut segments = Vec::with_capacity(n_segments);
    for i in 0..n_segments {
        let label = c.u16("segment label")?;
        let n_samples = c.u32("segment length")? as usize;
        let n_bytes = n_samples.saturating_mul(channels).saturating_mul(4);
        if n_bytes > c.remaining() {
            return Err(ContainerError::Oversize(format!(
                "segment {i} declares {n_samples} samples ({n_bytes} bytes), {} bytes remain",
                c.remaining()
            )));
        }
        let raw = c.take(n_bytes, "segment payload")?;
        let samples = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        segments.push(Segment { label, samples });
    }
    if c.remaining() != 0 {
        return Err(ContainerError::TrailingBytes(c.remaining()));
    }
    Ok(SessionDataset { grid, fs, segments })
}

pub fn write_container(path: &Path, ds: &SessionDataset) -> Result<()> {
    write_atomic(path, &encode_container(ds)?)
}

pub fn read_container(path: &Path) -> Result<SessionDataset> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(decode_container(&bytes)?)
}

/// Pretty JSON with shortest round-trip float formatting.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidParameter(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, ReportError> {
    serde_json::from_str(text).map_err(|e| ReportError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    from_json(&text).map_err(|source| Error::Report {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an experiment report document.
pub fn write_report(path: &Path, report: &crate::protocol::ExperimentReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<crate::protocol::ExperimentReport> {
    read_json(path)
}
