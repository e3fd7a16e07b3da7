//! End-to-end compositions: scene to cumulant stacks, super-resolved maps,
//! SIM acquisition sets and visibility sweeps. Every step can run on exact
//! pixel laws or on simulated frames.

use crate::analysis::{gaussian_fit_2d, orient_positive, visibility, GaussianFit, Roi};
use crate::error::{contract, Result};
use crate::estimator::{cumulants_from_raw, g_maps, CumulantMode, CumulantStack};
use crate::exec::Execution;
use crate::field::FieldMap;
use crate::frame_sim::{exact_cumulant_stack, exact_g_stack, simulate_moments, Allocation, RngSpec};
use crate::io::VisibilityRow;
use crate::photon_models::EmitterStatModel;
use crate::reconstruction::{qsips_map, sofi_map, sr_map_via_g, Method};
use crate::scene::{IlluminationPattern, Scene};
use crate::sim_fusion::AcquisitionSet;

/// Where cumulants come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapSource {
    /// Exact pixel laws (no sampling noise).
    Exact,
    MonteCarlo {
        n_frames: usize,
        seed: u64,
        allocation: Allocation,
    },
}

impl MapSource {
    pub fn monte_carlo(n_frames: usize, seed: u64) -> Self {
        MapSource::MonteCarlo {
            n_frames,
            seed,
            allocation: Allocation::default(),
        }
    }
}

/// Cumulant stack of `scene` under `pattern`; `stream` selects the RNG
/// stream for simulated frames.
pub fn cumulant_stack(
    scene: &Scene,
    pattern: &IlluminationPattern,
    j_max: usize,
    source: MapSource,
    stream: u64,
    mode: CumulantMode,
    exec: Execution,
) -> Result<CumulantStack> {
    match source {
        MapSource::Exact => exact_cumulant_stack(scene, pattern, j_max, exec),
        MapSource::MonteCarlo {
            n_frames,
            seed,
            allocation,
        } => {
            let acc = simulate_moments(
                scene,
                pattern,
                n_frames,
                RngSpec::new(seed, stream),
                allocation,
                j_max,
                false,
                exec,
            )?;
            cumulants_from_raw(&acc, j_max, mode)
        }
    }
}

/// Order-`j` map of `method` from a cumulant stack (QSIPS unnormalized).
pub fn method_map(k: &CumulantStack, method: Method, j: usize) -> Result<FieldMap> {
    match method {
        Method::Qsips => Ok(qsips_map(k, j)?.map),
        Method::Sofi => Ok(sofi_map(k, j)?.map),
        Method::SrG => Err(contract("g-function maps are built from factorial moments, not cumulants")),
    }
}

/// g-function based `SR^(j)` map.
pub fn sr_g_map(
    scene: &Scene,
    pattern: &IlluminationPattern,
    j: usize,
    source: MapSource,
    stream: u64,
    force: bool,
    exec: Execution,
) -> Result<FieldMap> {
    let g = match source {
        MapSource::Exact => exact_g_stack(scene, pattern, j, exec)?,
        MapSource::MonteCarlo {
            n_frames,
            seed,
            allocation,
        } => {
            let acc = simulate_moments(
                scene,
                pattern,
                n_frames,
                RngSpec::new(seed, stream),
                allocation,
                j,
                true,
                exec,
            )?;
            g_maps(&acc, j)?
        }
    };
    Ok(sr_map_via_g(&g, j, force)?.map)
}

/// Order-`j` maps of `method` for every pattern (theta-major), stream `s`
/// for pattern `s`.
#[allow(clippy::too_many_arguments)]
pub fn sim_acquisitions(
    scene: &Scene,
    thetas: &[f64],
    phases: &[f64],
    p_mag: f64,
    method: Method,
    j: usize,
    source: MapSource,
    exec: Execution,
) -> Result<AcquisitionSet> {
    let mut maps = Vec::with_capacity(thetas.len() * phases.len());
    for (t, &theta) in thetas.iter().enumerate() {
        for (f, &phi) in phases.iter().enumerate() {
            let pattern = IlluminationPattern::sinusoid(theta, phi, p_mag);
            let stream = (t * phases.len() + f) as u64;
            let k = cumulant_stack(scene, &pattern, j, source, stream, CumulantMode::PlugIn, exec)?;
            maps.push(method_map(&k, method, j)?);
        }
    }
    Ok(AcquisitionSet {
        thetas: thetas.to_vec(),
        phases: phases.to_vec(),
        p_mag,
        order: j,
        maps,
    })
}

/// Fit of the dominant peak of `map` after orienting it positive, in a
/// window of half-size `half` around `(cx, cy)`.
pub fn fit_peak(map: &FieldMap, cx: f64, cy: f64, half: f64) -> Result<GaussianFit> {
    let m = orient_positive(map);
    gaussian_fit_2d(&m, Roi::around(&m, cx, cy, half))
}

/// Two identical emitters, visibility swept over the
/// emitter photon number `M`.
pub fn visibility_sweep(
    base: &Scene,
    b: f64,
    m_values: &[u32],
    source: MapSource,
    exec: Execution,
) -> Result<Vec<VisibilityRow>> {
    if base.emitters.len() != 2 {
        return Err(contract("visibility sweep needs exactly two emitters"));
    }
    let pa = (base.emitters[0].x, base.emitters[0].y);
    let pb = (base.emitters[1].x, base.emitters[1].y);
    m_values
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut scene = base.clone();
            for e in &mut scene.emitters {
                e.model = EmitterStatModel::Blinking { b, m };
            }
            let k = cumulant_stack(
                &scene,
                &IlluminationPattern::UNIFORM,
                2,
                source,
                i as u64,
                CumulantMode::PlugIn,
                exec,
            )?;
            let mean = k.map(1)?;
            let var = k.map(2)?;
            let (fano, mean_detected) = psf_region_average(&mean, &var);
            let v_sofi = visibility(&orient_positive(&sofi_map(&k, 2)?.map), pa, pb)?;
            let v_qsips = visibility(&orient_positive(&qsips_map(&k, 2)?.map), pa, pb)?;
            Ok(VisibilityRow {
                m,
                fano_detected: fano,
                mean_detected,
                v_sofi: v_sofi.raw,
                v_qsips: v_qsips.raw,
            })
        })
        .collect()
}

/// Mean Fano factor and mean count over pixels at or above `e^{-1/2}` of
/// the peak mean, i.e. inside the one-sigma footprint of the emitters.
fn psf_region_average(mean: &FieldMap, var: &FieldMap) -> (f64, f64) {
    let (_, hi) = mean.min_max();
    let cut = hi * (-0.5f64).exp();
    let (mut f, mut m, mut n) = (0.0, 0.0, 0usize);
    for (&mu, &v) in mean.data.iter().zip(&var.data) {
        if mu >= cut && mu > 0.0 {
            f += v / mu;
            m += mu;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    (f / n, m / n)
}
