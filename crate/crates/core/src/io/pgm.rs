//! 16-bit binary PGM previews with linear min-max scaling. The scaling is
//! written to a sidecar `<file>.txt` so pixel values can be mapped back.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::FieldMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgmScaling {
    /// Value mapped to 0.
    pub min: f64,
    /// Value mapped to 65535.
    pub max: f64,
}

impl PgmScaling {
    pub fn of(map: &FieldMap) -> Self {
        let (min, max) = map.min_max();
        Self { min, max }
    }

    fn to_level(self, v: f64) -> u16 {
        let span = self.max - self.min;
        if !(span > 0.0) {
            return 0;
        }
        (((v - self.min) / span).clamp(0.0, 1.0) * 65535.0).round() as u16
    }

    pub fn to_value(self, level: u16) -> f64 {
        self.min + (self.max - self.min) * f64::from(level) / 65535.0
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

pub fn encode_pgm16(map: &FieldMap, scaling: PgmScaling) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for &v in &map.data {
        out.extend_from_slice(&scaling.to_level(v).to_be_bytes());
    }
    out
}

fn sidecar_text(map: &FieldMap, scaling: PgmScaling) -> String {
    let mut s = String::new();
    writeln!(s, "format = pgm16").unwrap();
    writeln!(s, "scaling = linear").unwrap();
    writeln!(s, "min = {:e}", scaling.min).unwrap();
    writeln!(s, "max = {:e}", scaling.max).unwrap();
    writeln!(s, "width = {}", map.width).unwrap();
    writeln!(s, "height = {}", map.height).unwrap();
    writeln!(s, "pixel_pitch = {}", map.pitch).unwrap();
    s
}

/// Writes the PGM and its sidecar; returns the scaling used.
pub fn write_pgm16(path: &Path, map: &FieldMap) -> Result<PgmScaling> {
    let scaling = PgmScaling::of(map);
    std::fs::write(path, encode_pgm16(map, scaling))?;
    std::fs::write(sidecar_path(path), sidecar_text(map, scaling))?;
    Ok(scaling)
}

/// Parses a `P5` 16-bit PGM into raw levels: `(width, height, levels)`.
pub fn decode_pgm16(buf: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let err = |offset: usize, reason: &str| Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    };
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "truncated header"));
        }
        fields.push((start, std::str::from_utf8(&buf[start..pos]).unwrap_or("")));
    }
    if fields[0].1 != "P5" {
        return Err(err(0, "not a binary PGM"));
    }
    let num = |(off, s): (usize, &str)| s.parse::<usize>().map_err(|_| err(off, "bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 65535 {
        return Err(err(fields[3].0, "expected maxval 65535"));
    }
    pos += 1;
    let need = w * h * 2;
    if buf.len() < pos + need {
        return Err(err(buf.len(), "truncated payload"));
    }
    let levels = buf[pos..pos + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((w, h, levels))
}

pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    decode_pgm16(&std::fs::read(path)?)
}
