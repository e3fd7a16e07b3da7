//! Gaussian PSF fits, enhancement ratios, two-peak visibility and display
//! conditioning (Fourier interpolation, blur, line cuts).
//!
//! Positions and widths are in detector pixel units, so maps on refined
//! grids (pitch < 1) are directly comparable with raw maps.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Vector6};

use crate::error::{contract, Error, Result};
use crate::fft::{fft2, ifft2, zero_pad_spectrum, Grid2};
use crate::field::FieldMap;

const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-9;

/// Rectangular pixel-index window of a map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn full(map: &FieldMap) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width: map.width,
            height: map.height,
        }
    }

    /// Square window of half-size `half` (detector units) around `(cx, cy)`,
    /// clipped to the map.
    pub fn around(map: &FieldMap, cx: f64, cy: f64, half: f64) -> Self {
        let to_idx = |v: f64, n: usize| ((v / map.pitch).round().max(0.0) as usize).min(n - 1);
        let (x0, x1) = (to_idx(cx - half, map.width), to_idx(cx + half, map.width));
        let (y0, y1) = (to_idx(cy - half, map.height), to_idx(cy + half, map.height));
        Self {
            x0,
            y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        }
    }
}

/// Parameter order in [`GaussianFit::covariance`].
pub const FIT_PARAMS: [&str; 6] = ["amplitude", "x0", "y0", "sigma_x", "sigma_y", "offset"];

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub offset: f64,
    pub residual_rms: f64,
    pub covariance: [[f64; 6]; 6],
    pub iterations: usize,
}

impl GaussianFit {
    pub fn stderr(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.covariance[i][i].max(0.0).sqrt())
    }

    /// Geometric-mean width.
    pub fn sigma(&self) -> f64 {
        (self.sigma_x * self.sigma_y).sqrt()
    }
}

fn model(p: &Vector6<f64>, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - p[1], y - p[2]);
    p[0] * (-(dx * dx) / (2.0 * p[3] * p[3]) - dy * dy / (2.0 * p[4] * p[4])).exp() + p[5]
}

fn jacobian_row(p: &Vector6<f64>, x: f64, y: f64) -> Vector6<f64> {
    let (dx, dy) = (x - p[1], y - p[2]);
    let (sx2, sy2) = (p[3] * p[3], p[4] * p[4]);
    let e = (-(dx * dx) / (2.0 * sx2) - dy * dy / (2.0 * sy2)).exp();
    let ae = p[0] * e;
    Vector6::new(
        e,
        ae * dx / sx2,
        ae * dy / sy2,
        ae * dx * dx / (sx2 * p[3]),
        ae * dy * dy / (sy2 * p[4]),
        1.0,
    )
}

fn roi_samples(map: &FieldMap, roi: Roi) -> Result<Vec<(f64, f64, f64)>> {
    if roi.width == 0
        || roi.height == 0
        || roi.x0 + roi.width > map.width
        || roi.y0 + roi.height > map.height
    {
        return Err(contract(format!("ROI {roi:?} outside {}x{} map", map.width, map.height)));
    }
    let mut out = Vec::with_capacity(roi.width * roi.height);
    for y in roi.y0..roi.y0 + roi.height {
        for x in roi.x0..roi.x0 + roi.width {
            out.push((x as f64 * map.pitch, y as f64 * map.pitch, map.get(x, y)));
        }
    }
    if out.len() <= 6 {
        return Err(contract("ROI needs more samples than fit parameters"));
    }
    Ok(out)
}

fn initial_guess(samples: &[(f64, f64, f64)]) -> Result<Vector6<f64>> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.2), hi.max(s.2)));
    let weights: Vec<f64> = samples.iter().map(|s| s.2 - lo).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && hi > lo) {
        return Err(Error::FitFailure {
            iterations: 0,
            reason: "ROI has no peak above its floor".into(),
        });
    }
    let mx = samples.iter().zip(&weights).map(|(s, w)| s.0 * w).sum::<f64>() / total;
    let my = samples.iter().zip(&weights).map(|(s, w)| s.1 * w).sum::<f64>() / total;
    let vx = samples.iter().zip(&weights).map(|(s, w)| (s.0 - mx).powi(2) * w).sum::<f64>() / total;
    let vy = samples.iter().zip(&weights).map(|(s, w)| (s.1 - my).powi(2) * w).sum::<f64>() / total;
    // Second moments of a floor-subtracted window overestimate the width;
    // halving keeps the start inside the basin for broad windows.
    Ok(Vector6::new(hi - lo, mx, my, (0.5 * vx).sqrt().max(1e-3), (0.5 * vy).sqrt().max(1e-3), lo))
}

fn cost(p: &Vector6<f64>, samples: &[(f64, f64, f64)]) -> f64 {
    samples.iter().map(|&(x, y, v)| (v - model(p, x, y)).powi(2)).sum()
}

/// Damped least-squares fit of `A exp(-(dx^2/2sx^2 + dy^2/2sy^2)) + c`.
pub fn gaussian_fit_2d(map: &FieldMap, roi: Roi) -> Result<GaussianFit> {
    let samples = roi_samples(map, roi)?;
    let mut p = initial_guess(&samples)?;
    let mut c = cost(&p, &samples);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for &(x, y, v) in &samples {
            let j = jacobian_row(&p, x, y);
            jtj += j * j.transpose();
            jtr += j * (v - model(&p, x, y));
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let tc = if trial[3] > 0.0 && trial[4] > 0.0 {
                cost(&trial, &samples)
            } else {
                f64::INFINITY
            };
            if tc <= c {
                let rel = step.norm() / p.norm().max(1e-300);
                p = trial;
                c = tc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                converged = rel < STEP_TOLERANCE;
                break;
            }
            lambda *= 10.0;
        }
        // No descent direction left at any damping: the current point is a
        // minimum to working precision.
        if !improved {
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure {
            iterations,
            reason: format!("relative step above {STEP_TOLERANCE} after {MAX_ITERATIONS} iterations"),
        });
    }
    if !(p.iter().all(|v| v.is_finite()) && p[3] > 0.0 && p[4] > 0.0 && p[0] != 0.0) {
        return Err(Error::FitFailure {
            iterations,
            reason: format!("degenerate parameters {:?}", p.as_slice()),
        });
    }
    let mut jtj = Matrix6::zeros();
    for &(x, y, _) in &samples {
        let j = jacobian_row(&p, x, y);
        jtj += j * j.transpose();
    }
    let dof = (samples.len() - 6) as f64;
    let s2 = c / dof;
    let inv = jtj.try_inverse().ok_or_else(|| Error::FitFailure {
        iterations,
        reason: "singular normal matrix at the solution".into(),
    })?;
    let covariance = std::array::from_fn(|i| std::array::from_fn(|k| inv[(i, k)] * s2));
    Ok(GaussianFit {
        amplitude: p[0],
        x0: p[1],
        y0: p[2],
        sigma_x: p[3],
        sigma_y: p[4],
        offset: p[5],
        residual_rms: (c / samples.len() as f64).sqrt(),
        covariance,
        iterations,
    })
}

/// Flips the sign of `map` when its largest-magnitude value is negative.
/// Factorial-cumulant maps of sub-Poissonian emitters are negative peaks.
pub fn orient_positive(map: &FieldMap) -> FieldMap {
    let (lo, hi) = map.min_max();
    if -lo > hi {
        map.map(|v| -v)
    } else {
        map.clone()
    }
}

/// `sqrt((sx_ref / sx_sr) (sy_ref / sy_sr))`.
pub fn enhancement_ratio(reference: &GaussianFit, sr: &GaussianFit) -> f64 {
    ((reference.sigma_x / sr.sigma_x) * (reference.sigma_y / sr.sigma_y)).sqrt()
}

/// First-order standard error of [`enhancement_ratio`] from the fitted
/// width errors, treating the two fits as independent.
pub fn enhancement_stderr(reference: &GaussianFit, sr: &GaussianFit) -> f64 {
    let (er, es) = (reference.stderr(), sr.stderr());
    let rel2 = (er[3] / reference.sigma_x).powi(2)
        + (er[4] / reference.sigma_y).powi(2)
        + (es[3] / sr.sigma_x).powi(2)
        + (es[4] / sr.sigma_y).powi(2);
    0.5 * enhancement_ratio(reference, sr) * rel2.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Visibility {
    pub raw: f64,
    /// `raw` clamped to `[0, 1]`.
    pub value: f64,
    /// False when the midpoint exceeds the peaks (`raw < 0`).
    pub resolved: bool,
}

/// Valley depth at the midpoint between two peaks, relative to the mean
/// peak value. Points are in detector units; values are bilinear samples.
pub fn visibility(map: &FieldMap, peak_a: (f64, f64), peak_b: (f64, f64)) -> Result<Visibility> {
    let ia = map.sample(peak_a.0, peak_a.1);
    let ib = map.sample(peak_b.0, peak_b.1);
    let mid = map.sample(0.5 * (peak_a.0 + peak_b.0), 0.5 * (peak_a.1 + peak_b.1));
    let mean = 0.5 * (ia + ib);
    if !(mean > 0.0) {
        return Err(contract(format!("mean peak value {mean} is not positive")));
    }
    let raw = (mean - mid) / mean;
    Ok(Visibility {
        raw,
        value: raw.clamp(0.0, 1.0),
        resolved: raw >= 0.0,
    })
}

/// Band-limited upsampling by zero-padding the spectrum.
pub fn fourier_interpolate(map: &FieldMap, factor: usize) -> Result<FieldMap> {
    if factor == 0 {
        return Err(contract("interpolation factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(map.clone());
    }
    let s = fft2(&Grid2::from_real(map.width, map.height, &map.data));
    let (w, h) = (map.width * factor, map.height * factor);
    let big = ifft2(&zero_pad_spectrum(&s, w, h));
    let scale = factor as f64;
    FieldMap::new(w, h, map.pitch / scale, big.data.iter().map(|c| c.re * scale).collect())
}

/// Circular Gaussian convolution, `sigma` in detector units.
pub fn gaussian_blur(map: &FieldMap, sigma: f64) -> Result<FieldMap> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(contract(format!("blur sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(map.clone());
    }
    let mut s = fft2(&Grid2::from_real(map.width, map.height, &map.data));
    let sp = sigma / map.pitch;
    for v in 0..s.height {
        for u in 0..s.width {
            let (fx, fy) = s.freq(u, v);
            s.data[v * s.width + u] *= (-2.0 * PI * PI * sp * sp * (fx * fx + fy * fy)).exp();
        }
    }
    FieldMap::new(map.width, map.height, map.pitch, ifft2(&s).real())
}

/// `n_samples` bilinear samples from `p1` to `p2` inclusive.
pub fn line_cut(map: &FieldMap, p1: (f64, f64), p2: (f64, f64), n_samples: usize) -> Vec<f64> {
    let denom = n_samples.saturating_sub(1).max(1) as f64;
    (0..n_samples)
        .map(|i| {
            let t = i as f64 / denom;
            map.sample(p1.0 + t * (p2.0 - p1.0), p1.1 + t * (p2.1 - p1.1))
        })
        .collect()
}
