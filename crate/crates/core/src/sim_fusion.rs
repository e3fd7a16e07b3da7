//! Structured-illumination fusion of per-pattern maps.
//!
//! An order-`j` map taken under the pattern `w(r) = (1 - cos(2 pi p.r + phi)) / 2`
//! sees the object multiplied by `w^j`, whose Fourier series has harmonics
//! `m = -j..=j` with coefficients `c_m e^{i m phi}`. Its spectrum is therefore
//! `D(f) = H(f) sum_m c_m e^{i m phi} O(f - m p)` with `H` the OTF of the
//! map (a Gaussian of width `sigma / sqrt(j)`). Phase stepping separates the
//! bands, each band is moved back by `-m p`, and all bands of all
//! orientations are merged with a generalized Wiener filter, then apodized.
//!
//! Spectra use the centered unitary DFT of [`crate::fft`]; frequencies are in
//! cycles per detector pixel.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use rustfft::num_complex::Complex64;

use crate::error::{contract, Error, Result};
use crate::exec::Execution;
use crate::fft::{fft2, ifft2, zero_pad_spectrum, Grid2};
use crate::field::FieldMap;

/// Which modulation harmonics are separated and used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BandModel {
    /// Bands `-1, 0, +1`.
    Three,
    /// Bands `-2..=2`; needs at least five phases.
    #[default]
    Five,
}

impl BandModel {
    pub fn max_harmonic(self) -> i32 {
        match self {
            BandModel::Three => 1,
            BandModel::Five => 2,
        }
    }

    fn bands(self) -> Vec<i32> {
        let m = self.max_harmonic();
        (-m..=m).collect()
    }
}

/// Per-pattern maps on a `theta x phi` grid, theta-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionSet {
    pub thetas: Vec<f64>,
    pub phases: Vec<f64>,
    pub p_mag: f64,
    /// Effective nonlinearity of the maps: 1 for mean maps, 2 for
    /// second-order maps.
    pub order: usize,
    pub maps: Vec<FieldMap>,
}

impl AcquisitionSet {
    /// Builds a set from optional entries (theta-major); any `None` is
    /// reported by `(theta_index, phase_index)`.
    pub fn from_grid(
        thetas: Vec<f64>,
        phases: Vec<f64>,
        p_mag: f64,
        order: usize,
        entries: Vec<Option<FieldMap>>,
    ) -> Result<Self> {
        let np = phases.len();
        if entries.len() != thetas.len() * np {
            return Err(contract(format!(
                "{} maps for a {}x{} grid",
                entries.len(),
                thetas.len(),
                np
            )));
        }
        let missing: Vec<(usize, usize)> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_none())
            .map(|(i, _)| (i / np, i % np))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingAcquisitions(missing));
        }
        let set = Self {
            thetas,
            phases,
            p_mag,
            order,
            maps: entries.into_iter().flatten().collect(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() {
            return Err(contract("acquisition set has no orientations"));
        }
        if self.maps.len() != self.thetas.len() * self.phases.len() {
            return Err(contract("map count does not match the theta x phi grid"));
        }
        if !(self.p_mag.is_finite() && self.p_mag >= 0.0) {
            return Err(contract(format!("p_mag {} must be >= 0", self.p_mag)));
        }
        if self.order == 0 {
            return Err(contract("acquisition order must be >= 1"));
        }
        let first = &self.maps[0];
        if self.maps.iter().any(|m| !m.same_shape(first)) {
            return Err(contract("acquisition maps differ in shape"));
        }
        Ok(())
    }

    pub fn maps_for_theta(&self, t: usize) -> &[FieldMap] {
        let n = self.phases.len();
        &self.maps[t * n..(t + 1) * n]
    }

    pub fn wave_vector(&self, t: usize) -> (f64, f64) {
        (self.p_mag * self.thetas[t].cos(), self.p_mag * self.thetas[t].sin())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumComponent {
    pub spectrum: Grid2,
    /// Carrier `m p` in cycles per pixel.
    pub offset: (f64, f64),
    pub band: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandSeparation {
    pub components: Vec<SpectrumComponent>,
    pub condition_number: f64,
}

/// Fourier coefficients `c_m`, `m = -j..=j`, of `((1 - cos psi) / 2)^j` in
/// powers of `e^{i psi}`.
pub fn harmonic_coefficients(j: usize) -> Vec<f64> {
    let base = [-0.25, 0.5, -0.25];
    let mut c = vec![1.0];
    for _ in 0..j {
        let mut next = vec![0.0; c.len() + 2];
        for (i, &a) in c.iter().enumerate() {
            for (k, &b) in base.iter().enumerate() {
                next[i + k] += a * b;
            }
        }
        c = next;
    }
    c
}

/// Phase matrix `A[k][m] = e^{i m phi_k}` pseudo-inverse and its condition
/// number.
fn phase_pseudo_inverse(phases: &[f64], bands: &[i32]) -> Result<(DMatrix<Complex<f64>>, f64)> {
    let distinct = {
        let mut p: Vec<f64> = phases.iter().map(|x| x.rem_euclid(2.0 * PI)).collect();
        p.sort_by(f64::total_cmp);
        p.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        p.len()
    };
    if distinct < bands.len() {
        return Err(Error::DegeneratePhases(format!(
            "{distinct} distinct phases cannot separate {} bands",
            bands.len()
        )));
    }
    let a = DMatrix::from_fn(phases.len(), bands.len(), |k, m| {
        Complex::from_polar(1.0, f64::from(bands[m]) * phases[k])
    });
    let svd = a.clone().svd(true, true);
    let (smax, smin) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if !(smin > 1e-9 * smax) {
        return Err(Error::DegeneratePhases(format!(
            "phase matrix is rank deficient (singular values {smax:.3e} .. {smin:.3e})"
        )));
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| Error::DegeneratePhases(e.to_string()))?;
    Ok((pinv, smax / smin))
}

/// Least-squares separation of the modulation bands of one orientation.
pub fn separate_bands(
    maps: &[FieldMap],
    phases: &[f64],
    wave_vector: (f64, f64),
    model: BandModel,
) -> Result<BandSeparation> {
    if maps.len() != phases.len() {
        return Err(contract("one map per phase required"));
    }
    let bands = model.bands();
    let (pinv, cond) = phase_pseudo_inverse(phases, &bands)?;
    let first = maps.first().ok_or_else(|| contract("no maps"))?;
    let spectra: Vec<Grid2> = maps
        .iter()
        .map(|m| fft2(&Grid2::from_real(m.width, m.height, &m.data)))
        .collect();
    let n = first.width * first.height;
    let components = bands
        .iter()
        .enumerate()
        .map(|(bi, &m)| {
            let mut out = Grid2::zeros(first.width, first.height);
            for (k, s) in spectra.iter().enumerate() {
                let coef = pinv[(bi, k)];
                let coef = Complex64::new(coef.re, coef.im);
                for i in 0..n {
                    out.data[i] += coef * s.data[i];
                }
            }
            SpectrumComponent {
                spectrum: out,
                offset: (f64::from(m) * wave_vector.0, f64::from(m) * wave_vector.1),
                band: m,
            }
        })
        .collect();
    Ok(BandSeparation {
        components,
        condition_number: cond,
    })
}

/// Unit-peak Gaussian OTF of a Gaussian PSF with standard deviation `sigma`.
pub fn gaussian_otf(sigma: f64) -> impl Fn(f64, f64) -> f64 + Sync {
    move |fx, fy| (-2.0 * PI * PI * sigma * sigma * (fx * fx + fy * fy)).exp()
}

/// Multiplies by `conj(OTF) / (|OTF|^2 + w)`. `pitch` is the sample
/// spacing of the spectrum's grid in detector pixels.
pub fn wiener_filter(spectrum: &Grid2, otf: impl Fn(f64, f64) -> f64, w: f64, pitch: f64) -> Result<Grid2> {
    if !(w > 0.0) {
        return Err(contract("Wiener parameter must be positive"));
    }
    let mut out = spectrum.clone();
    for v in 0..spectrum.height {
        for u in 0..spectrum.width {
            let (fx, fy) = spectrum.freq(u, v);
            let h = otf(fx / pitch, fy / pitch);
            out.data[v * spectrum.width + u] *= h / (h * h + w);
        }
    }
    Ok(out)
}

/// Moves spectral content by `offset` (cycles per detector pixel):
/// `S'(f) = S(f - offset)`, via a complex ramp in real space. Exact for any
/// real offset; integer multiples of the frequency spacing reduce to a
/// circular shift of the array.
pub fn shift_spectrum(spectrum: &Grid2, offset: (f64, f64), pitch: f64) -> Grid2 {
    if offset == (0.0, 0.0) {
        return spectrum.clone();
    }
    let mut img = ifft2(spectrum);
    let w = img.width;
    for (i, c) in img.data.iter_mut().enumerate() {
        let (x, y) = ((i % w) as f64 * pitch, (i / w) as f64 * pitch);
        *c *= Complex64::from_polar(1.0, 2.0 * PI * (offset.0 * x + offset.1 * y));
    }
    fft2(&img)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Apodization {
    None,
    /// `cos^2(pi |f| / (2 k_ext))` inside the extended support.
    RaisedCosine,
    /// Gaussian target OTF whose 0.42/sigma cut-off equals the extended
    /// support, i.e. the effective PSF a Gaussian system with that support
    /// would have.
    #[default]
    GaussianTarget,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParams {
    /// Wiener regularization relative to the zero-frequency weight.
    pub wiener_w: f64,
    pub apodization: Apodization,
    pub bands: BandModel,
    /// PSF standard deviation of the raw (order-1) image, pixels.
    pub psf_sigma: f64,
    /// Output grid refinement; the fused support usually exceeds the
    /// detector Nyquist frequency.
    pub upsample: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            wiener_w: 1e-4,
            apodization: Apodization::GaussianTarget,
            bands: BandModel::Five,
            psf_sigma: 1.0,
            upsample: 3,
        }
    }
}

/// Extended support radius `sqrt(j) k_Abbe + m_max p`.
pub fn extended_support(psf_sigma: f64, order: usize, p_mag: f64, bands: BandModel) -> f64 {
    0.42 * (order as f64).sqrt() / psf_sigma + f64::from(bands.max_harmonic()) * p_mag
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionResult {
    /// Fused image on the refined grid (pitch `1 / upsample`).
    pub map: FieldMap,
    pub support: f64,
    pub condition_numbers: Vec<f64>,
}

/// Fuses all orientations into one image.
pub fn fuse(set: &AcquisitionSet, params: &FusionParams, exec: Execution) -> Result<FusionResult> {
    set.validate()?;
    if params.upsample == 0 {
        return Err(contract("upsample factor must be >= 1"));
    }
    if !(params.wiener_w > 0.0) {
        return Err(contract("Wiener parameter must be positive"));
    }
    let (w0, h0) = (set.maps[0].width, set.maps[0].height);
    let (w, h) = (w0 * params.upsample, h0 * params.upsample);
    let pitch = 1.0 / params.upsample as f64;
    // Without a carrier there is no modulation to model: the maps are plain
    // images and only band 0 with unit weight is used.
    let unmodulated = set.p_mag == 0.0;
    let max_m = if unmodulated { 0 } else { params.bands.max_harmonic().min(set.order as i32) };
    let all_c = harmonic_coefficients(set.order);
    let coef = |m: i32| if unmodulated { 1.0 } else { all_c[(m + set.order as i32) as usize] };
    let otf = gaussian_otf(params.psf_sigma / (set.order as f64).sqrt());

    // Per orientation: separated bands moved to their true frequencies,
    // with the matching transfer weights c_m H(f + m p).
    let per_theta = exec.map_indexed(set.thetas.len(), |t| -> Result<(Vec<(Grid2, Vec<f64>)>, f64)> {
        let p = set.wave_vector(t);
        let sep = separate_bands(set.maps_for_theta(t), &set.phases, p, params.bands)?;
        let mut out = Vec::new();
        for comp in sep.components.iter().filter(|c| c.band.abs() <= max_m) {
            let m = f64::from(comp.band);
            let padded = zero_pad_spectrum(&comp.spectrum, w, h);
            let moved = shift_spectrum(&padded, (-comp.offset.0, -comp.offset.1), pitch);
            let c = coef(comp.band);
            let weights = (0..w * h)
                .map(|i| {
                    let (fx, fy) = moved.freq(i % w, i / w);
                    c * otf(fx / pitch + m * p.0, fy / pitch + m * p.1)
                })
                .collect();
            out.push((moved, weights));
        }
        Ok((out, sep.condition_number))
    });

    let mut num = Grid2::zeros(w, h);
    let mut den = vec![0.0; w * h];
    let mut conds = Vec::new();
    for r in per_theta {
        let (bands, cond) = r?;
        conds.push(cond);
        for (s, weights) in bands {
            for i in 0..w * h {
                num.data[i] += s.data[i] * weights[i];
                den[i] += weights[i] * weights[i];
            }
        }
    }
    let dc = (h / 2) * w + w / 2;
    let reg = params.wiener_w * den[dc];
    let support = extended_support(params.psf_sigma, set.order, set.p_mag, params.bands)
        .min(if set.p_mag == 0.0 {
            0.42 * (set.order as f64).sqrt() / params.psf_sigma
        } else {
            f64::INFINITY
        });
    let target_sigma = 0.42 / support;
    for i in 0..w * h {
        let (fx, fy) = num.freq(i % w, i / w);
        let f = (fx * fx + fy * fy).sqrt() / pitch;
        let apod = match params.apodization {
            Apodization::None => 1.0,
            Apodization::RaisedCosine => {
                if f < support {
                    (0.5 * PI * f / support).cos().powi(2)
                } else {
                    0.0
                }
            }
            Apodization::GaussianTarget => (-2.0 * PI * PI * target_sigma * target_sigma * f * f).exp(),
        };
        num.data[i] *= apod / (den[i] + reg);
    }
    // Undo the unitary normalization change from zero padding so the fused
    // image keeps the input's intensity scale.
    let scale = params.upsample as f64;
    let data = ifft2(&num).data.iter().map(|c| c.re * scale).collect();
    Ok(FusionResult {
        map: FieldMap::new(w, h, pitch, data)?,
        support,
        condition_numbers: conds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatternEstimate {
    pub p_mag: f64,
    pub theta: f64,
    /// Peak sits at the Nyquist edge of the spectrum, where interpolation
    /// is unreliable.
    pub near_nyquist: bool,
}

/// Locates the illumination carrier in `map` near orientation `theta_hint`
/// (within +-pi/8) and refines it with log-parabolic interpolation.
pub fn estimate_pattern_vector(map: &FieldMap, theta_hint: f64) -> Result<PatternEstimate> {
    let (w, h) = (map.width, map.height);
    if w < 8 || h < 8 {
        return Err(contract("map too small for carrier estimation"));
    }
    let mean = map.data.iter().sum::<f64>() / map.data.len() as f64;
    let hann = |i: usize, n: usize| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
    let windowed: Vec<f64> = map
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - mean) * hann(i % w, w) * hann(i / w, h))
        .collect();
    let spec = fft2(&Grid2::from_real(w, h, &windowed));
    let mag: Vec<f64> = spec.data.iter().map(|c| c.norm()).collect();
    let (dir_x, dir_y) = (theta_hint.cos(), theta_hint.sin());
    let min_f = 3.0 / w.min(h) as f64;
    let mut region = Vec::new();
    let mut best: Option<(usize, usize)> = None;
    for v in 0..h {
        for u in 0..w {
            let (fx, fy) = spec.freq(u, v);
            let f = (fx * fx + fy * fy).sqrt();
            if f < min_f {
                continue;
            }
            let cosang = (fx * dir_x + fy * dir_y) / f;
            if cosang < (PI / 8.0).cos() {
                continue;
            }
            let m = mag[v * w + u];
            region.push(m);
            if best.is_none_or(|(bu, bv)| m > mag[bv * w + bu]) {
                best = Some((u, v));
            }
        }
    }
    let (bu, bv) = best.ok_or_else(|| Error::PeakNotFound("empty search region".into()))?;
    let peak = mag[bv * w + bu];
    region.sort_by(f64::total_cmp);
    let median = region[region.len() / 2];
    let total: f64 = windowed.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(peak > 1e-9 * total.max(f64::MIN_POSITIVE)) || peak < 5.0 * median {
        return Err(Error::PeakNotFound(format!(
            "strongest component {peak:.3e} does not stand out (median {median:.3e})"
        )));
    }
    let near_nyquist = bu == 0 || bv == 0 || bu + 1 == w || bv + 1 == h;
    let refine = |lo: f64, mid: f64, hi: f64| {
        let (a, b, c) = (lo.max(1e-300).ln(), mid.ln(), hi.max(1e-300).ln());
        let d = a - 2.0 * b + c;
        if d < 0.0 {
            (0.5 * (a - c) / d).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let du = if bu > 0 && bu + 1 < w {
        refine(mag[bv * w + bu - 1], peak, mag[bv * w + bu + 1])
    } else {
        0.0
    };
    let dv = if bv > 0 && bv + 1 < h {
        refine(mag[(bv - 1) * w + bu], peak, mag[(bv + 1) * w + bu])
    } else {
        0.0
    };
    let fx = (bu as f64 + du - (w / 2) as f64) / w as f64 / map.pitch;
    let fy = (bv as f64 + dv - (h / 2) as f64) / h as f64 / map.pitch;
    Ok(PatternEstimate {
        p_mag: (fx * fx + fy * fy).sqrt(),
        theta: fy.atan2(fx),
        near_nyquist,
    })
}
