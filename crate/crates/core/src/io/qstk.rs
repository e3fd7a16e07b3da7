//! `QSTK`: magic, u16 version (1), u16 dtype (0 = f64), u32 width,
//! u32 height, u32 n_frames, u32 reserved (0), then frame-major row-major
//! f64 values. Cumulant stacks reuse the container with `n_frames` holding
//! the number of orders.

use std::path::Path;

use super::bytes::{format_err, push_f64s, Reader};
use crate::error::Result;
use crate::estimator::CumulantStack;
use crate::field::FieldMap;
use crate::frame_sim::{FrameStack, MAX_STACK_VALUES};

pub const QSTK_HEADER_LEN: usize = 24;
const VERSION: u16 = 1;

fn encode(width: usize, height: usize, n: usize, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(QSTK_HEADER_LEN + values.len() * 8);
    out.extend_from_slice(b"QSTK");
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for v in [width, height, n, 0] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    push_f64s(&mut out, values);
    out
}

struct Decoded {
    width: usize,
    height: usize,
    n: usize,
    values: Vec<f64>,
}

fn decode(buf: &[u8]) -> Result<Decoded> {
    let mut r = Reader::new(buf);
    r.magic(b"QSTK")?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dtype = r.u16("dtype")?;
    if dtype != 0 {
        return Err(format_err(6, format!("unsupported dtype {dtype}")));
    }
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let n = r.u32("n_frames")? as usize;
    let reserved = r.u32("reserved")?;
    if width == 0 || height == 0 {
        return Err(format_err(8, "zero dimension"));
    }
    if reserved != 0 {
        return Err(format_err(20, format!("reserved field is {reserved}, expected 0")));
    }
    let total = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(n))
        .filter(|&t| t <= MAX_STACK_VALUES)
        .ok_or_else(|| format_err(16, format!("{width}x{height}x{n} exceeds the stack size limit")))?;
    let start = r.pos();
    let values = r.f64_payload(total)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(format_err(start + 8 * i, "non-finite value"));
    }
    Ok(Decoded {
        width,
        height,
        n,
        values,
    })
}

pub fn encode_frame_stack(stack: &FrameStack) -> Vec<u8> {
    encode(stack.width, stack.height, stack.n_frames, &stack.values)
}

pub fn decode_frame_stack(buf: &[u8]) -> Result<FrameStack> {
    let d = decode(buf)?;
    FrameStack::new(d.width, d.height, d.n, d.values)
}

pub fn write_frame_stack(path: &Path, stack: &FrameStack) -> Result<()> {
    std::fs::write(path, encode_frame_stack(stack))?;
    Ok(())
}

pub fn read_frame_stack(path: &Path) -> Result<FrameStack> {
    decode_frame_stack(&std::fs::read(path)?)
}

pub fn encode_cumulant_stack(k: &CumulantStack) -> Result<Vec<u8>> {
    let mut values = Vec::with_capacity(k.width() * k.height() * k.orders());
    for j in 1..=k.orders() {
        values.extend(k.map(j)?.data);
    }
    Ok(encode(k.width(), k.height(), k.orders(), &values))
}

pub fn decode_cumulant_stack(buf: &[u8]) -> Result<CumulantStack> {
    let d = decode(buf)?;
    if d.n == 0 {
        return Err(format_err(16, "cumulant stack with zero orders"));
    }
    let n_pix = d.width * d.height;
    let maps: Vec<FieldMap> = d
        .values
        .chunks_exact(n_pix)
        .map(|c| FieldMap::new(d.width, d.height, 1.0, c.to_vec()))
        .collect::<Result<_>>()?;
    CumulantStack::from_maps(&maps, None)
}

pub fn write_cumulant_stack(path: &Path, k: &CumulantStack) -> Result<()> {
    std::fs::write(path, encode_cumulant_stack(k)?)?;
    Ok(())
}

pub fn read_cumulant_stack(path: &Path) -> Result<CumulantStack> {
    decode_cumulant_stack(&std::fs::read(path)?)
}
