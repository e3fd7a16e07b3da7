//! Streaming per-pixel moment accumulation and conversion to cumulant and
//! normalized factorial-moment (g-function) maps.
//!
//! Power sums are kept in double-double: a sixth power of a count near 100
//! is ~1e12 per frame, and the cumulants of interest come out of heavy
//! cancellation between such sums.

use crate::error::{contract, Error, Result};
use crate::field::FieldMap;
use crate::numeric::{cumulants_from_moments, DoubleDouble};
use crate::photon_models::MAX_CUMULANT_ORDER;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    width: usize,
    height: usize,
    j_max: usize,
    count: u64,
    // [pixel * j_max + (p - 1)] = sum N^p
    power_sums: Vec<DoubleDouble>,
    // [pixel * j_max + (p - 1)] = sum N (N-1) ... (N-p+1)
    factorial_sums: Option<Vec<DoubleDouble>>,
    integer_valued: bool,
}

impl MomentAccumulator {
    /// Empty accumulator. `factorial` also tracks falling-factorial power
    /// sums, needed for [`g_maps`].
    pub fn new(width: usize, height: usize, j_max: usize, factorial: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(contract("accumulator needs positive dimensions"));
        }
        if j_max == 0 || j_max > MAX_CUMULANT_ORDER {
            return Err(Error::OrderOutOfRange {
                order: j_max,
                min: 1,
                max: MAX_CUMULANT_ORDER,
            });
        }
        let n = width * height * j_max;
        Ok(Self {
            width,
            height,
            j_max,
            count: 0,
            power_sums: vec![DoubleDouble::ZERO; n],
            factorial_sums: factorial.then(|| vec![DoubleDouble::ZERO; n]),
            integer_valued: true,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn has_factorial(&self) -> bool {
        self.factorial_sums.is_some()
    }

    /// Whether every absorbed value was an integer.
    pub fn integer_valued(&self) -> bool {
        self.integer_valued
    }

    /// `sum N^p` at `pixel` for `p = 1..=j_max`.
    pub fn power_sums(&self, pixel: usize) -> Vec<f64> {
        self.power_sums[pixel * self.j_max..(pixel + 1) * self.j_max]
            .iter()
            .map(|x| x.to_f64())
            .collect()
    }

    /// Adds one frame (row-major, `width * height` values).
    pub fn accumulate(&mut self, frame: &[f64]) -> Result<()> {
        let n_pix = self.width * self.height;
        if frame.len() != n_pix {
            return Err(contract(format!(
                "frame has {} values, accumulator expects {n_pix}",
                frame.len()
            )));
        }
        let j_max = self.j_max;
        for (pixel, &x) in frame.iter().enumerate() {
            if x.fract() != 0.0 {
                self.integer_valued = false;
            }
            if x == 0.0 {
                continue;
            }
            let sums = &mut self.power_sums[pixel * j_max..(pixel + 1) * j_max];
            let mut term = DoubleDouble::new(x);
            sums[0] += term;
            for s in sums.iter_mut().skip(1) {
                term = term.mul_f64(x);
                *s += term;
            }
            if let Some(f) = self.factorial_sums.as_mut() {
                let sums = &mut f[pixel * j_max..(pixel + 1) * j_max];
                let mut term = DoubleDouble::ONE;
                for (i, s) in sums.iter_mut().enumerate() {
                    term = term.mul_f64(x - i as f64);
                    *s += term;
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Adds consecutive frames from a frame-major buffer.
    pub fn accumulate_frames(&mut self, frames: &[f64]) -> Result<()> {
        let n_pix = self.width * self.height;
        if frames.len() % n_pix != 0 {
            return Err(contract("frame buffer is not a whole number of frames"));
        }
        frames.chunks_exact(n_pix).try_for_each(|f| self.accumulate(f))
    }

    /// Folds `other` into `self`.
    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.j_max != other.j_max
            || self.has_factorial() != other.has_factorial()
        {
            return Err(contract("cannot merge accumulators of different shape"));
        }
        for (a, b) in self.power_sums.iter_mut().zip(&other.power_sums) {
            *a += *b;
        }
        if let (Some(a), Some(b)) = (self.factorial_sums.as_mut(), other.factorial_sums.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        self.count += other.count;
        self.integer_valued &= other.integer_valued;
        Ok(())
    }

    pub fn merged(mut self, other: &MomentAccumulator) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }
}

/// Per-pixel cumulant maps `k^(1..=orders)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantStack {
    width: usize,
    height: usize,
    orders: usize,
    /// Frames behind the estimate; `None` for exact (oracle) stacks.
    count: Option<u64>,
    integer_counts: bool,
    // [(j - 1) * n_pix + pixel]
    values: Vec<DoubleDouble>,
}

impl CumulantStack {
    /// Builds a stack from per-pixel cumulant vectors (each of length
    /// `orders`), row-major over pixels.
    pub(crate) fn from_pixels(
        width: usize,
        height: usize,
        orders: usize,
        count: Option<u64>,
        integer_counts: bool,
        pixels: impl IntoIterator<Item = Vec<DoubleDouble>>,
    ) -> Self {
        let n_pix = width * height;
        let mut values = vec![DoubleDouble::ZERO; n_pix * orders];
        for (p, k) in pixels.into_iter().enumerate() {
            for (j, v) in k.into_iter().enumerate().take(orders) {
                values[j * n_pix + p] = v;
            }
        }
        Self {
            width,
            height,
            orders,
            count,
            integer_counts,
            values,
        }
    }

    /// Wraps plain maps, one per order starting at 1.
    pub fn from_maps(maps: &[FieldMap], count: Option<u64>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| contract("need at least one order"))?;
        if maps.iter().any(|m| !m.same_shape(first)) {
            return Err(contract("cumulant maps differ in shape"));
        }
        Ok(Self {
            width: first.width,
            height: first.height,
            orders: maps.len(),
            count,
            integer_counts: false,
            values: maps
                .iter()
                .flat_map(|m| m.data.iter().map(|&v| DoubleDouble::new(v)))
                .collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn orders(&self) -> usize {
        self.orders
    }

    pub fn count(&self) -> Option<u64> {
        self.count
    }

    /// True when the underlying counts were integers (no readout noise).
    pub fn integer_counts(&self) -> bool {
        self.integer_counts
    }

    pub(crate) fn get_dd(&self, order: usize, pixel: usize) -> DoubleDouble {
        self.values[(order - 1) * self.width * self.height + pixel]
    }

    pub fn get(&self, order: usize, pixel: usize) -> f64 {
        self.get_dd(order, pixel).to_f64()
    }

    pub fn map(&self, order: usize) -> Result<FieldMap> {
        if order == 0 || order > self.orders {
            return Err(Error::OrderOutOfRange {
                order,
                min: 1,
                max: self.orders,
            });
        }
        let n = self.width * self.height;
        let data = self.values[(order - 1) * n..order * n]
            .iter()
            .map(|x| x.to_f64())
            .collect();
        FieldMap::new(self.width, self.height, 1.0, data)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CumulantMode {
    /// Population formulas applied to empirical moments.
    #[default]
    PlugIn,
    /// k-statistics for orders 2 and 3; orders above 3 stay plug-in.
    Unbiased,
}

/// Cumulant maps of orders `1..=j_max` from the accumulated power sums.
pub fn cumulants_from_raw(
    acc: &MomentAccumulator,
    j_max: usize,
    mode: CumulantMode,
) -> Result<CumulantStack> {
    if acc.count == 0 {
        return Err(Error::EmptySample);
    }
    if j_max == 0 || j_max > acc.j_max {
        return Err(Error::OrderOutOfRange {
            order: j_max,
            min: 1,
            max: acc.j_max,
        });
    }
    let n = acc.count;
    if n < j_max as u64 {
        return Err(contract(format!("{n} frames cannot support order {j_max}")));
    }
    let nf = n as f64;
    let (c2, c3) = match mode {
        CumulantMode::PlugIn => (1.0, 1.0),
        CumulantMode::Unbiased => {
            if n < 3 {
                return Err(contract("unbiased cumulants need at least 3 frames"));
            }
            (nf / (nf - 1.0), nf * nf / ((nf - 1.0) * (nf - 2.0)))
        }
    };
    let n_pix = acc.width * acc.height;
    let pixels = (0..n_pix).map(|p| {
        let moments: Vec<DoubleDouble> = acc.power_sums[p * acc.j_max..p * acc.j_max + j_max]
            .iter()
            .map(|s| s.div_f64(nf))
            .collect();
        let mut k = cumulants_from_moments(&moments);
        if j_max >= 2 {
            k[1] = k[1].mul_f64(c2);
        }
        if j_max >= 3 {
            k[2] = k[2].mul_f64(c3);
        }
        k
    });
    Ok(CumulantStack::from_pixels(
        acc.width,
        acc.height,
        j_max,
        Some(n),
        acc.integer_valued,
        pixels,
    ))
}

/// Mean map plus normalized factorial moments
/// `g^(j) = <N (N-1) ... (N-j+1)> / <N>^j`. Pixels with zero mean are
/// masked: their `g` entries are NaN and `valid` is false.
#[derive(Clone, Debug, PartialEq)]
pub struct GStack {
    pub width: usize,
    pub height: usize,
    pub mean: Vec<f64>,
    /// `g[j - 1]` is the order-`j` map.
    pub g: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
    pub integer_counts: bool,
}

impl GStack {
    /// From per-pixel factorial moments `<N>_[1..=j_max]`, row-major.
    pub(crate) fn from_factorial_moments(
        width: usize,
        height: usize,
        integer_counts: bool,
        moments: impl IntoIterator<Item = Vec<DoubleDouble>>,
    ) -> Self {
        let n_pix = width * height;
        let mut mean = Vec::with_capacity(n_pix);
        let mut valid = Vec::with_capacity(n_pix);
        let mut g: Vec<Vec<f64>> = Vec::new();
        for (p, m) in moments.into_iter().enumerate() {
            if g.is_empty() {
                g = vec![vec![f64::NAN; n_pix]; m.len()];
            }
            let mu = m[0].to_f64();
            mean.push(mu);
            let ok = mu > 0.0;
            valid.push(ok);
            if ok {
                let mut denom = DoubleDouble::ONE;
                for (j, mj) in m.iter().enumerate() {
                    denom = denom.mul_f64(mu);
                    g[j][p] = mj.to_f64() / denom.to_f64();
                }
            }
        }
        Self {
            width,
            height,
            mean,
            g,
            valid,
            integer_counts,
        }
    }

    pub fn orders(&self) -> usize {
        self.g.len()
    }
}

/// g-function maps from the factorial power sums of `acc`.
///
/// On non-integer (noisy) data the falling factorials are evaluated as
/// polynomials in the real value, which no longer has a factorial-moment
/// meaning; [`MomentAccumulator::integer_valued`] reports that case.
pub fn g_maps(acc: &MomentAccumulator, j_max: usize) -> Result<GStack> {
    let sums = acc
        .factorial_sums
        .as_ref()
        .ok_or_else(|| contract("accumulator was built without factorial sums"))?;
    if acc.count == 0 {
        return Err(Error::EmptySample);
    }
    if j_max == 0 || j_max > acc.j_max {
        return Err(Error::OrderOutOfRange {
            order: j_max,
            min: 1,
            max: acc.j_max,
        });
    }
    let nf = acc.count as f64;
    let n_pix = acc.width * acc.height;
    Ok(GStack::from_factorial_moments(
        acc.width,
        acc.height,
        acc.integer_valued,
        (0..n_pix).map(|p| {
            sums[p * acc.j_max..p * acc.j_max + j_max]
                .iter()
                .map(|s| s.div_f64(nf))
                .collect()
        }),
    ))
}

/// Per-element standard error of the mean over `batches` independent
/// replicate estimates (all of equal length): `sd / sqrt(B)`.
pub fn batch_standard_error(batches: &[Vec<f64>]) -> Result<Vec<f64>> {
    let b = batches.len();
    if b < 2 {
        return Err(contract("need at least two batches"));
    }
    let n = batches[0].len();
    if batches.iter().any(|v| v.len() != n) {
        return Err(contract("batches differ in length"));
    }
    Ok((0..n)
        .map(|i| {
            let mean = batches.iter().map(|v| v[i]).sum::<f64>() / b as f64;
            let var = batches.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
            (var / b as f64).sqrt()
        })
        .collect())
}
