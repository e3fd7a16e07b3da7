//! Monte-Carlo photon-count frames and the exact per-pixel laws they are
//! drawn from.
//!
//! Each frame owns an RNG stream (`ChaCha8` stream id = frame index, key
//! derived from seed and pattern stream), so frames can be produced in any
//! order or in parallel and still reproduce bit for bit. Inside a frame the
//! draws run over emitters in order (emission, illumination thinning, then
//! pixels row-major), followed by readout noise row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};

use crate::error::{contract, Error, Result};
use crate::estimator::{CumulantStack, GStack, MomentAccumulator};
use crate::exec::Execution;
use crate::numeric::DoubleDouble;
use crate::photon_models::{
    binomial_thin, convolve, exact_cumulants_dd, pmf, EmitterStatModel, PhotonDistribution,
};
use crate::scene::{illumination_weight, IlluminationPattern, Scene};

/// Upper bound on `width * height * n_frames` for an in-memory stack.
pub const MAX_STACK_VALUES: usize = 1 << 27;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    /// Frame-major, row-major.
    pub values: Vec<f64>,
}

impl FrameStack {
    pub fn new(width: usize, height: usize, n_frames: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(contract("stack needs positive dimensions"));
        }
        if values.len() != width * height * n_frames {
            return Err(contract(format!(
                "{width}x{height}x{n_frames} stack given {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(contract("stack values must be finite"));
        }
        Ok(Self {
            width,
            height,
            n_frames,
            values,
        })
    }

    pub fn frame(&self, index: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[index * n..(index + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width * self.height)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed plus a stream id (typically the pattern index) identifying one
/// acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn frame_rng(&self, frame: u64) -> ChaCha8Rng {
        let key = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5157_5350)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(frame);
        rng
    }
}

/// How the photons surviving illumination are spread over pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Allocation {
    /// Each pixel independently sees Binomial(m, eta(pixel)).
    #[default]
    IndependentPixels,
    /// Each photon lands in at most one pixel (sequential conditional
    /// binomials). Needs the detection probabilities to sum to at most 1.
    Multinomial,
}

enum Emission {
    Fixed(u64),
    Blinking { b: f64, m: u64 },
    Poisson(Poisson<f64>),
    Table(Vec<f64>),
}

impl Emission {
    fn new(model: &EmitterStatModel) -> Result<Self> {
        model.validate()?;
        Ok(match model {
            EmitterStatModel::SinglePhoton => Emission::Fixed(1),
            EmitterStatModel::Blinking { b, m } => Emission::Blinking {
                b: *b,
                m: u64::from(*m),
            },
            EmitterStatModel::Poisson { lambda } => {
                Emission::Poisson(Poisson::new(*lambda).map_err(|e| contract(e.to_string()))?)
            }
            EmitterStatModel::Custom(d) => {
                let mut acc = 0.0;
                Emission::Table(
                    d.probs()
                        .iter()
                        .map(|p| {
                            acc += p;
                            acc
                        })
                        .collect(),
                )
            }
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Emission::Fixed(m) => *m,
            Emission::Blinking { b, m } => {
                if rng.random::<f64>() < *b {
                    0
                } else {
                    *m
                }
            }
            Emission::Poisson(p) => p.sample(rng) as u64,
            Emission::Table(cdf) => {
                let u = rng.random::<f64>() * cdf[cdf.len() - 1];
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u64
            }
        }
    }
}

#[inline]
fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p checked in (0, 1)").sample(rng)
}

struct EmitterPlan {
    emission: Emission,
    illumination: f64,
    eta: Vec<f64>,
}

/// Precomputed per-emitter quantities for drawing frames of one scene
/// under one pattern.
pub struct FrameSampler {
    width: usize,
    height: usize,
    emitters: Vec<EmitterPlan>,
    readout: Option<Normal<f64>>,
    allocation: Allocation,
}

impl FrameSampler {
    pub fn new(scene: &Scene, pattern: &IlluminationPattern, allocation: Allocation) -> Result<Self> {
        scene.validate()?;
        let mut emitters = Vec::with_capacity(scene.emitters.len());
        for (a, e) in scene.emitters.iter().enumerate() {
            let eta = scene.detection_field(a);
            if allocation == Allocation::Multinomial {
                let total: f64 = eta.iter().sum();
                if total > 1.0 + 1e-12 {
                    return Err(contract(format!(
                        "emitter {a}: detection probabilities sum to {total} > 1, multinomial allocation impossible"
                    )));
                }
            }
            emitters.push(EmitterPlan {
                emission: Emission::new(&e.model)?,
                illumination: illumination_weight(pattern, (e.x, e.y)),
                eta,
            });
        }
        let readout = (scene.readout_rms > 0.0)
            .then(|| Normal::new(0.0, scene.readout_rms).expect("rms validated"));
        Ok(Self {
            width: scene.width,
            height: scene.height,
            emitters,
            readout,
            allocation,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Draws one frame into `out` (overwritten).
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for e in &self.emitters {
            let emitted = e.emission.sample(rng);
            let excited = binomial(rng, emitted, e.illumination);
            if excited == 0 {
                continue;
            }
            match self.allocation {
                Allocation::IndependentPixels => {
                    for (v, &eta) in out.iter_mut().zip(&e.eta) {
                        *v += binomial(rng, excited, eta) as f64;
                    }
                }
                Allocation::Multinomial => {
                    let mut remaining = excited;
                    let mut used = 0.0;
                    for (v, &eta) in out.iter_mut().zip(&e.eta) {
                        if remaining == 0 {
                            break;
                        }
                        let q = (eta / (1.0 - used)).min(1.0);
                        let k = binomial(rng, remaining, q);
                        *v += k as f64;
                        remaining -= k;
                        used += eta;
                    }
                }
            }
        }
        if let Some(noise) = &self.readout {
            for v in out.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }
}

/// One frame drawn from `rng`.
pub fn sample_frame(
    scene: &Scene,
    pattern: &IlluminationPattern,
    allocation: Allocation,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let sampler = FrameSampler::new(scene, pattern, allocation)?;
    let mut out = vec![0.0; sampler.n_pixels()];
    sampler.sample_into(rng, &mut out);
    Ok(out)
}

/// `n_frames` independent frames; frame `f` uses `rng.frame_rng(f)`.
pub fn sample_stack(
    scene: &Scene,
    pattern: &IlluminationPattern,
    n_frames: usize,
    rng: RngSpec,
    allocation: Allocation,
    exec: Execution,
) -> Result<FrameStack> {
    if n_frames == 0 {
        return Err(contract("n_frames must be at least 1"));
    }
    let sampler = FrameSampler::new(scene, pattern, allocation)?;
    let n_pix = sampler.n_pixels();
    let total = n_pix
        .checked_mul(n_frames)
        .filter(|&t| t <= MAX_STACK_VALUES)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "{n_frames} frames of {n_pix} pixels exceed the {MAX_STACK_VALUES}-value stack cap; stream into moments instead"
            ))
        })?;
    let mut values = vec![0.0; total];
    exec.for_each_chunk_mut(&mut values, n_pix, |f, frame| {
        sampler.sample_into(&mut rng.frame_rng(f as u64), frame);
    });
    FrameStack::new(scene.width, scene.height, n_frames, values)
}

/// Streams `n_frames` frames straight into moment accumulators without
/// storing them. Frames are grouped in consecutive blocks of
/// `block_frames`; one accumulator per block is returned in block order,
/// which doubles as a batch-means partition. Frame `f` is the same frame
/// [`sample_stack`] would produce.
#[allow(clippy::too_many_arguments)]
pub fn simulate_moment_blocks(
    scene: &Scene,
    pattern: &IlluminationPattern,
    n_frames: usize,
    rng: RngSpec,
    allocation: Allocation,
    j_max: usize,
    factorial: bool,
    block_frames: usize,
    exec: Execution,
) -> Result<Vec<MomentAccumulator>> {
    if n_frames == 0 || block_frames == 0 {
        return Err(contract("n_frames and block_frames must be positive"));
    }
    let sampler = FrameSampler::new(scene, pattern, allocation)?;
    MomentAccumulator::new(scene.width, scene.height, j_max, factorial)?;
    let n_blocks = n_frames.div_ceil(block_frames);
    let blocks = exec.map_indexed(n_blocks, |b| {
        let mut acc = MomentAccumulator::new(scene.width, scene.height, j_max, factorial)
            .expect("shape checked above");
        let mut frame = vec![0.0; sampler.n_pixels()];
        let end = ((b + 1) * block_frames).min(n_frames);
        for f in b * block_frames..end {
            sampler.sample_into(&mut rng.frame_rng(f as u64), &mut frame);
            acc.accumulate(&frame).expect("frame matches accumulator");
        }
        acc
    });
    Ok(blocks)
}

/// Sum of block accumulators, merged in order.
pub fn merge_blocks(blocks: &[MomentAccumulator]) -> Result<MomentAccumulator> {
    let (first, rest) = blocks.split_first().ok_or(Error::EmptySample)?;
    rest.iter().try_fold(first.clone(), |acc, b| acc.merged(b))
}

/// [`simulate_moment_blocks`] merged into one accumulator.
#[allow(clippy::too_many_arguments)]
pub fn simulate_moments(
    scene: &Scene,
    pattern: &IlluminationPattern,
    n_frames: usize,
    rng: RngSpec,
    allocation: Allocation,
    j_max: usize,
    factorial: bool,
    exec: Execution,
) -> Result<MomentAccumulator> {
    let blocks = simulate_moment_blocks(
        scene, pattern, n_frames, rng, allocation, j_max, factorial, 4096, exec,
    )?;
    merge_blocks(&blocks)
}

/// Emitted pmf of each emitter after illumination thinning.
fn excited_laws(scene: &Scene, pattern: &IlluminationPattern) -> Result<Vec<PhotonDistribution>> {
    scene
        .emitters
        .iter()
        .map(|e| binomial_thin(&pmf(&e.model)?, illumination_weight(pattern, (e.x, e.y))))
        .collect()
}

/// Exact pre-readout law of the count in `pixel`. Both allocation modes
/// share this marginal. Mass above `n_cap` must stay below 1e-10.
pub fn exact_pixel_distribution(
    scene: &Scene,
    pattern: &IlluminationPattern,
    pixel: (usize, usize),
    n_cap: usize,
) -> Result<PhotonDistribution> {
    scene.validate()?;
    if pixel.0 >= scene.width || pixel.1 >= scene.height {
        return Err(contract(format!("pixel {pixel:?} outside the grid")));
    }
    let laws = excited_laws(scene, pattern)?;
    pixel_law(scene, &laws, pixel.1 * scene.width + pixel.0, n_cap)
}

fn pixel_law(
    scene: &Scene,
    laws: &[PhotonDistribution],
    pixel: usize,
    n_cap: usize,
) -> Result<PhotonDistribution> {
    let (i, j) = ((pixel % scene.width) as f64, (pixel / scene.width) as f64);
    let mut out = PhotonDistribution::delta(0);
    for (e, law) in scene.emitters.iter().zip(laws) {
        let eta = e.rho * scene.psf.value(i - e.x, j - e.y);
        out = convolve(&out, &binomial_thin(law, eta)?);
    }
    if out.max_count() > n_cap {
        let tail: f64 = out.probs()[n_cap + 1..].iter().sum();
        if tail >= 1e-10 {
            return Err(Error::Capacity(format!(
                "tail mass {tail:e} above n_cap={n_cap}"
            )));
        }
        out = PhotonDistribution::from_weights(out.probs()[..=n_cap].to_vec())?;
    }
    Ok(out)
}

/// Exact cumulant maps of orders `1..=j_max`, using additivity over
/// emitters. Readout noise adds its variance to order 2 only.
pub fn exact_cumulant_stack(
    scene: &Scene,
    pattern: &IlluminationPattern,
    j_max: usize,
    exec: Execution,
) -> Result<CumulantStack> {
    scene.validate()?;
    crate::photon_models::exact_cumulants(&PhotonDistribution::delta(0), j_max)?;
    let laws = excited_laws(scene, pattern)?;
    let fields: Vec<Vec<f64>> = (0..scene.emitters.len()).map(|a| scene.detection_field(a)).collect();
    let noise_var = scene.readout_rms * scene.readout_rms;
    let pixels = exec.map_indexed(scene.n_pixels(), |p| -> Result<Vec<DoubleDouble>> {
        let mut k = vec![DoubleDouble::ZERO; j_max];
        for (law, field) in laws.iter().zip(&fields) {
            let z = exact_cumulants_dd(&binomial_thin(law, field[p])?, j_max);
            for (acc, zi) in k.iter_mut().zip(z) {
                *acc += zi;
            }
        }
        if j_max >= 2 {
            k[1] = k[1].add_f64(noise_var);
        }
        Ok(k)
    });
    let pixels = pixels.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CumulantStack::from_pixels(
        scene.width,
        scene.height,
        j_max,
        None,
        scene.readout_rms == 0.0,
        pixels,
    ))
}

/// Exact mean and g-function maps of the pre-readout pixel laws.
pub fn exact_g_stack(
    scene: &Scene,
    pattern: &IlluminationPattern,
    j_max: usize,
    exec: Execution,
) -> Result<GStack> {
    scene.validate()?;
    crate::photon_models::exact_cumulants(&PhotonDistribution::delta(0), j_max)?;
    let laws = excited_laws(scene, pattern)?;
    let moments = exec.map_indexed(scene.n_pixels(), |p| {
        pixel_law(scene, &laws, p, usize::MAX - 1).map(|d| d.factorial_moments_dd(j_max))
    });
    let moments = moments.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(GStack::from_factorial_moments(scene.width, scene.height, true, moments))
}
