//! `QMAP`: magic, u16 version (1), u16 dtype (0 = f64 planes, 1 = complex
//! stored as a real plane then an imaginary plane), u32 width, u32 height,
//! u32 planes, f64 pixel pitch, then plane-major row-major f64 values.

use std::path::Path;

use rustfft::num_complex::Complex64;

use super::bytes::{format_err, push_f64s, Reader};
use crate::error::{contract, Result};
use crate::fft::Grid2;
use crate::field::FieldMap;

pub const QMAP_HEADER_LEN: usize = 28;
const VERSION: u16 = 1;
const MAX_VALUES: usize = 1 << 28;

fn encode(dtype: u16, width: usize, height: usize, pitch: f64, planes: &[&[f64]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(QMAP_HEADER_LEN + planes.len() * width * height * 8);
    out.extend_from_slice(b"QMAP");
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.to_le_bytes());
    for v in [width, height, planes.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&pitch.to_le_bytes());
    for p in planes {
        push_f64s(&mut out, p);
    }
    out
}

struct Decoded {
    dtype: u16,
    width: usize,
    height: usize,
    pitch: f64,
    planes: Vec<Vec<f64>>,
}

fn decode(buf: &[u8]) -> Result<Decoded> {
    let mut r = Reader::new(buf);
    r.magic(b"QMAP")?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dtype = r.u16("dtype")?;
    if dtype > 1 {
        return Err(format_err(6, format!("unsupported dtype {dtype}")));
    }
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let planes = r.u32("planes")? as usize;
    if width == 0 || height == 0 {
        return Err(format_err(8, "zero dimension"));
    }
    if planes == 0 || (dtype == 1 && planes != 2) {
        return Err(format_err(16, format!("{planes} planes invalid for dtype {dtype}")));
    }
    let pitch = r.f64("pitch")?;
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(format_err(20, format!("pixel pitch {pitch} must be positive")));
    }
    let n = width * height;
    let total = n
        .checked_mul(planes)
        .filter(|&t| t <= MAX_VALUES)
        .ok_or_else(|| format_err(8, "map size exceeds limit"))?;
    let values = r.f64_payload(total)?;
    Ok(Decoded {
        dtype,
        width,
        height,
        pitch,
        planes: values.chunks_exact(n).map(<[f64]>::to_vec).collect(),
    })
}

pub fn encode_qmap(maps: &[FieldMap]) -> Result<Vec<u8>> {
    let first = maps.first().ok_or_else(|| contract("no planes to write"))?;
    if maps.iter().any(|m| !m.same_shape(first) || m.pitch != first.pitch) {
        return Err(contract("planes differ in shape or pitch"));
    }
    let planes: Vec<&[f64]> = maps.iter().map(|m| m.data.as_slice()).collect();
    Ok(encode(0, first.width, first.height, first.pitch, &planes))
}

pub fn decode_qmap(buf: &[u8]) -> Result<Vec<FieldMap>> {
    let d = decode(buf)?;
    if d.dtype != 0 {
        return Err(format_err(6, "complex container read as real"));
    }
    d.planes
        .into_iter()
        .map(|p| FieldMap::new(d.width, d.height, d.pitch, p))
        .collect()
}

pub fn encode_qmap_complex(g: &Grid2, pitch: f64) -> Vec<u8> {
    let re: Vec<f64> = g.data.iter().map(|c| c.re).collect();
    let im: Vec<f64> = g.data.iter().map(|c| c.im).collect();
    encode(1, g.width, g.height, pitch, &[&re, &im])
}

/// Returns the complex grid and its pitch.
pub fn decode_qmap_complex(buf: &[u8]) -> Result<(Grid2, f64)> {
    let d = decode(buf)?;
    if d.dtype != 1 {
        return Err(format_err(6, "real container read as complex"));
    }
    let data = d.planes[0]
        .iter()
        .zip(&d.planes[1])
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    Ok((
        Grid2 {
            width: d.width,
            height: d.height,
            data,
        },
        d.pitch,
    ))
}

pub fn write_qmap(path: &Path, maps: &[FieldMap]) -> Result<()> {
    std::fs::write(path, encode_qmap(maps)?)?;
    Ok(())
}

pub fn read_qmap(path: &Path) -> Result<Vec<FieldMap>> {
    decode_qmap(&std::fs::read(path)?)
}

pub fn write_qmap_complex(path: &Path, g: &Grid2, pitch: f64) -> Result<()> {
    std::fs::write(path, encode_qmap_complex(g, pitch))?;
    Ok(())
}

pub fn read_qmap_complex(path: &Path) -> Result<(Grid2, f64)> {
    decode_qmap_complex(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn header_and_errors() {
        let m = FieldMap::from_fn(3, 2, 0.5, |x, y| x + 10.0 * y);
        let b = encode_qmap(&[m.clone()]).unwrap();
        assert_eq!(b.len(), QMAP_HEADER_LEN + 48);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), 0.5);
        assert_eq!(decode_qmap(&b).unwrap(), vec![m]);
        assert!(matches!(decode_qmap_complex(&b), Err(Error::Format { offset: 6, .. })));
        let mut bad = b.clone();
        bad[20..28].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(decode_qmap(&bad), Err(Error::Format { offset: 20, .. })));
        assert!(matches!(decode_qmap(&b[..40]), Err(Error::Format { offset: 40, .. })));
    }

    #[test]
    fn complex_round_trip() {
        let g = Grid2 {
            width: 3,
            height: 2,
            data: (0..6).map(|i| Complex64::new(i as f64, -(i as f64) * 0.25)).collect(),
        };
        let b = encode_qmap_complex(&g, 1.0 / 3.0);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        let (back, pitch) = decode_qmap_complex(&b).unwrap();
        assert_eq!(back, g);
        assert_eq!(pitch, 1.0 / 3.0);
    }

    proptest! {
        #[test]
        fn real_round_trip_is_bit_exact(
            w in 1usize..7, h in 1usize..7, planes in 1usize..4,
            vals in prop::collection::vec(-1e300f64..1e300, 150),
            pitch in 0.01f64..4.0,
        ) {
            let maps: Vec<FieldMap> = (0..planes)
                .map(|p| FieldMap::new(w, h, pitch, (0..w * h).map(|i| vals[(i + p * 7) % 150]).collect()).unwrap())
                .collect();
            let back = decode_qmap(&encode_qmap(&maps).unwrap()).unwrap();
            prop_assert_eq!(back, maps);
        }
    }
}
