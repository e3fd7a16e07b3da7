//! Emitters, Gaussian PSF, detector grid and sinusoidal illumination.
//!
//! Positions are in detector pixel units; pixel `(i, j)` is column `i`,
//! row `j`, with its center at `(i, j)`.

use std::f64::consts::PI;

use crate::error::{contract, Result};
use crate::field::FieldMap;
use crate::photon_models::EmitterStatModel;

#[derive(Clone, Debug, PartialEq)]
pub struct Emitter {
    pub x: f64,
    pub y: f64,
    pub model: EmitterStatModel,
    /// Optical transmission, `1 - loss`.
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsfModel {
    pub sigma: f64,
    /// Detection probability at the PSF center.
    pub peak: f64,
}

impl PsfModel {
    pub fn new(sigma: f64) -> Self {
        Self { sigma, peak: 1.0 }
    }

    /// Area-normalized Gaussian: the detection probabilities summed over an
    /// unbounded grid come to one.
    pub fn normalized(sigma: f64) -> Self {
        Self {
            sigma,
            peak: 1.0 / (2.0 * PI * sigma * sigma),
        }
    }

    #[inline]
    pub fn value(&self, dx: f64, dy: f64) -> f64 {
        self.peak * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IlluminationPattern {
    pub theta: f64,
    pub phi: f64,
    /// Spatial frequency in cycles per pixel.
    pub p_mag: f64,
    pub uniform: bool,
}

impl IlluminationPattern {
    pub const UNIFORM: Self = Self {
        theta: 0.0,
        phi: 0.0,
        p_mag: 0.0,
        uniform: true,
    };

    pub fn sinusoid(theta: f64, phi: f64, p_mag: f64) -> Self {
        Self {
            theta,
            phi,
            p_mag,
            uniform: false,
        }
    }

    /// Wave vector `p_theta` in cycles per pixel.
    pub fn wave_vector(&self) -> (f64, f64) {
        (self.p_mag * self.theta.cos(), self.p_mag * self.theta.sin())
    }
}

/// Four orientations, offset by pi/8.
pub fn standard_thetas() -> Vec<f64> {
    (0..4).map(|k| k as f64 * PI / 4.0 + PI / 8.0).collect()
}

/// Five equally spaced phases, offset by pi/8.
pub fn standard_phases() -> Vec<f64> {
    (0..5).map(|k| k as f64 * 2.0 * PI / 5.0 + PI / 8.0).collect()
}

/// The 4 x 5 structured-illumination grid, theta-major.
pub fn standard_pattern_grid(p_mag: f64) -> Vec<IlluminationPattern> {
    let phases = standard_phases();
    standard_thetas()
        .into_iter()
        .flat_map(|t| phases.iter().map(move |&p| IlluminationPattern::sinusoid(t, p, p_mag)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub emitters: Vec<Emitter>,
    pub psf: PsfModel,
    pub width: usize,
    pub height: usize,
    pub readout_rms: f64,
}

impl Scene {
    /// Checks every field. An empty emitter list is accepted and yields
    /// noise-only data.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(contract("grid dimensions must be at least 1"));
        }
        if !(self.psf.sigma.is_finite() && self.psf.sigma > 0.0) {
            return Err(contract(format!("psf sigma {} must be positive", self.psf.sigma)));
        }
        if !(self.psf.peak > 0.0 && self.psf.peak <= 1.0) {
            return Err(contract(format!("psf peak {} outside (0, 1]", self.psf.peak)));
        }
        if !(self.readout_rms.is_finite() && self.readout_rms >= 0.0) {
            return Err(contract(format!("readout rms {} must be >= 0", self.readout_rms)));
        }
        for (i, e) in self.emitters.iter().enumerate() {
            if !(e.x.is_finite() && e.y.is_finite()) {
                return Err(contract(format!("emitter {i} position is not finite")));
            }
            if !(e.rho > 0.0 && e.rho <= 1.0) {
                return Err(contract(format!("emitter {i} rho {} outside (0, 1]", e.rho)));
            }
            e.model
                .validate()
                .map_err(|err| contract(format!("emitter {i}: {err}")))?;
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Detection probabilities of one emitter over the whole grid,
    /// row-major.
    pub fn detection_field(&self, emitter: usize) -> Vec<f64> {
        let e = &self.emitters[emitter];
        let mut out = Vec::with_capacity(self.n_pixels());
        for j in 0..self.height {
            for i in 0..self.width {
                out.push(e.rho * self.psf.value(i as f64 - e.x, j as f64 - e.y));
            }
        }
        out
    }
}

/// `eta = rho * PSF(pixel - position)`, evaluated at the pixel center.
pub fn detection_prob(scene: &Scene, emitter: usize, pixel: (usize, usize)) -> f64 {
    let e = &scene.emitters[emitter];
    e.rho * scene.psf.value(pixel.0 as f64 - e.x, pixel.1 as f64 - e.y)
}

/// Excitation transmittance `(1 - cos(2 pi p.r + phi)) / 2` at `position`.
pub fn illumination_weight(pattern: &IlluminationPattern, position: (f64, f64)) -> f64 {
    if pattern.uniform {
        return 1.0;
    }
    let (px, py) = pattern.wave_vector();
    let arg = 2.0 * PI * (px * position.0 + py * position.1) + pattern.phi;
    (0.5 * (1.0 - arg.cos())).clamp(0.0, 1.0)
}

/// Highest spatial frequency passed by a Gaussian PSF, `0.42 / sigma`.
pub fn abbe_frequency(psf: &PsfModel) -> f64 {
    0.42 / psf.sigma
}

/// Mean detected photon number per pixel.
pub fn expected_intensity_map(scene: &Scene, pattern: &IlluminationPattern) -> FieldMap {
    let mut map = FieldMap::zeros(scene.width, scene.height);
    for (a, e) in scene.emitters.iter().enumerate() {
        let excited = e.model.mean() * illumination_weight(pattern, (e.x, e.y));
        if excited == 0.0 {
            continue;
        }
        for (v, eta) in map.data.iter_mut().zip(scene.detection_field(a)) {
            *v += excited * eta;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_emitter(model: EmitterStatModel, rho: f64, x: f64, y: f64) -> Scene {
        Scene {
            emitters: vec![Emitter { x, y, model, rho }],
            psf: PsfModel::new(1.5),
            width: 16,
            height: 12,
            readout_rms: 0.0,
        }
    }

    #[test]
    fn detection_examples() {
        let s = one_emitter(EmitterStatModel::SinglePhoton, 0.25, 5.0, 4.0);
        assert_eq!(detection_prob(&s, 0, (5, 4)), 0.25);
        let s = one_emitter(EmitterStatModel::SinglePhoton, 0.25, 5.0, 4.0 - 1.5);
        assert!((detection_prob(&s, 0, (5, 4)) - 0.25 * (-0.5f64).exp()).abs() < 1e-15);
        let s = one_emitter(EmitterStatModel::SinglePhoton, 1.0, 1e4, 0.0);
        assert_eq!(detection_prob(&s, 0, (0, 0)), 0.0);
    }

    #[test]
    fn illumination_extremes() {
        let p = IlluminationPattern::sinusoid(0.3, 0.0, 0.2);
        assert_eq!(illumination_weight(&p, (0.0, 0.0)), 0.0);
        let p = IlluminationPattern::sinusoid(0.3, PI, 0.2);
        assert_eq!(illumination_weight(&p, (0.0, 0.0)), 1.0);
        assert_eq!(illumination_weight(&IlluminationPattern::UNIFORM, (3.0, -7.0)), 1.0);
    }

    #[test]
    fn abbe_examples() {
        assert!((abbe_frequency(&PsfModel::new(1.55)) - 0.2710).abs() < 5e-5);
        assert!((abbe_frequency(&PsfModel::new(0.42)) - 1.0).abs() < 1e-15);
        assert_eq!(abbe_frequency(&PsfModel::new(3.0)), abbe_frequency(&PsfModel::new(1.5)) / 2.0);
    }

    #[test]
    fn intensity_map_examples() {
        let s = one_emitter(EmitterStatModel::SinglePhoton, 0.5, 6.3, 5.1);
        let m = expected_intensity_map(&s, &IlluminationPattern::UNIFORM);
        assert_eq!(m.data, s.detection_field(0));

        let dark = IlluminationPattern::sinusoid(0.0, -2.0 * PI * 0.2 * 6.3, 0.2);
        let m = expected_intensity_map(&s, &dark);
        assert!(m.data.iter().all(|v| v.abs() < 1e-20));

        let model = EmitterStatModel::Blinking { b: 0.1, m: 100 };
        let mut two = one_emitter(model.clone(), 0.1, 4.0, 5.0);
        two.emitters.push(Emitter { x: 9.5, y: 6.0, model, rho: 0.1 });
        let m = expected_intensity_map(&two, &IlluminationPattern::UNIFORM);
        for j in 0..two.height {
            for i in 0..two.width {
                let direct = 90.0 * 0.1 * two.psf.value(i as f64 - 4.0, j as f64 - 5.0)
                    + 90.0 * 0.1 * two.psf.value(i as f64 - 9.5, j as f64 - 6.0);
                assert!((m.get(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_layout() {
        let g = standard_pattern_grid(0.3);
        assert_eq!(g.len(), 20);
        assert!((g[0].theta - PI / 8.0).abs() < 1e-15 && (g[0].phi - PI / 8.0).abs() < 1e-15);
        assert!((g[6].theta - 3.0 * PI / 8.0).abs() < 1e-15);
        assert!((g[6].phi - (2.0 * PI / 5.0 + PI / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        let mut s = one_emitter(EmitterStatModel::SinglePhoton, 0.5, 1.0, 1.0);
        assert!(s.validate().is_ok());
        s.emitters[0].rho = 0.0;
        assert!(s.validate().is_err());
        s.emitters.clear();
        assert!(s.validate().is_ok());
        s.psf.peak = 1.5;
        assert!(s.validate().is_err());
    }

    proptest! {
        #[test]
        fn detection_is_isotropic(dx in -4.0f64..4.0, dy in -4.0f64..4.0, angle in 0.0f64..(2.0 * PI)) {
            let psf = PsfModel::new(1.3);
            let (c, s) = (angle.cos(), angle.sin());
            let a = psf.value(dx, dy);
            let b = psf.value(c * dx - s * dy, s * dx + c * dy);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn phase_average_is_half(x in -50.0f64..50.0, y in -50.0f64..50.0, t in 0usize..4, p in 0.05f64..0.5) {
            let theta = standard_thetas()[t];
            let avg: f64 = standard_phases()
                .iter()
                .map(|&phi| illumination_weight(&IlluminationPattern::sinusoid(theta, phi, p), (x, y)))
                .sum::<f64>() / 5.0;
            prop_assert!((avg - 0.5).abs() < 1e-12);
        }

        #[test]
        fn intensity_is_linear_in_emitters(x1 in 2.0f64..14.0, x2 in 2.0f64..14.0, phi in 0.0f64..6.0) {
            let pat = IlluminationPattern::sinusoid(0.4, phi, 0.15);
            let a = one_emitter(EmitterStatModel::Poisson { lambda: 3.0 }, 0.7, x1, 5.0);
            let b = one_emitter(EmitterStatModel::Blinking { b: 0.4, m: 9 }, 0.2, x2, 7.0);
            let mut ab = a.clone();
            ab.emitters.push(b.emitters[0].clone());
            let (ma, mb, mab) = (
                expected_intensity_map(&a, &pat),
                expected_intensity_map(&b, &pat),
                expected_intensity_map(&ab, &pat),
            );
            for k in 0..mab.data.len() {
                prop_assert!((mab.data[k] - ma.data[k] - mb.data[k]).abs() < 1e-12);
            }
        }
    }
}
