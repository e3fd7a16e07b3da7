//! Self-check suite over the core identities, each evaluated against an
//! independent route and reported with its tolerance and observed
//! deviation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::combinatorics::{bell_partial_exact, StirlingTable};
use crate::error::Result;
use crate::estimator::CumulantStack;
use crate::exec::Execution;
use crate::frame_sim::{exact_cumulant_stack, exact_g_stack};
use crate::numeric::DoubleDouble;
use crate::photon_models::{binomial_thin, exact_cumulants_dd, pmf, EmitterStatModel, PhotonDistribution};
use crate::reconstruction::{qsips_sign_factor, sr_map_via_g};
use crate::scene::{Emitter, IlluminationPattern, PsfModel, Scene};

const ORDER: usize = 8;

/// Deliberate faults used to confirm the suite detects them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mutations {
    /// Negates `beta_{1,j}` for every `j >= 2`.
    pub flip_beta_sign: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

struct Beta {
    rows: Vec<Vec<i64>>,
}

impl Beta {
    fn new(m: Mutations) -> Result<Self> {
        let table = StirlingTable::shared();
        let rows = (1..=ORDER)
            .map(|j| {
                let mut b = table.beta_coeffs(j)?;
                if m.flip_beta_sign && j >= 2 {
                    b[0] = -b[0];
                }
                Ok(b)
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    fn get(&self, i: usize, j: usize) -> i64 {
        self.rows[j - 1].get(i - 1).copied().unwrap_or(0)
    }

    fn combine(&self, k: &[DoubleDouble], j: usize) -> f64 {
        (1..=j)
            .fold(DoubleDouble::ZERO, |acc, i| acc + k[i - 1].mul_f64(self.get(i, j) as f64))
            .to_f64()
    }
}

fn check(name: &str, tolerance: f64, max_deviation: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        tolerance,
        max_deviation,
        passed: max_deviation <= tolerance,
    }
}

fn orthogonality(beta: &Beta) -> Result<CheckResult> {
    let table = StirlingTable::shared();
    let mut worst = 0i128;
    for j in 1..=ORDER {
        for k in 1..=ORDER {
            let s: i128 = (1..=ORDER)
                .map(|i| i128::from(beta.get(i, j)) * i128::from(table.second_kind(i, k).unwrap_or(0)))
                .sum();
            worst = worst.max((s - i128::from(j == k)).abs());
        }
    }
    Ok(check("stirling_orthogonality", 0.0, worst as f64))
}

fn bell_all_ones() -> Result<CheckResult> {
    let table = StirlingTable::shared();
    let mut worst = 0i128;
    for i in 1..=ORDER {
        for k in 1..=i {
            let b = bell_partial_exact(i, k, &vec![1; i - k + 1])?;
            worst = worst.max((b - i128::from(table.second_kind(i, k)?)).abs());
        }
    }
    Ok(check("bell_all_ones_equals_stirling_second", 0.0, worst as f64))
}

/// Fixed set of random finite laws.
pub fn random_laws(count: usize, seed: u64) -> Vec<PhotonDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let support = rng.random_range(2..=12);
            let w: Vec<f64> = (0..support).map(|_| rng.random::<f64>()).collect();
            PhotonDistribution::from_weights(w).expect("positive weights")
        })
        .collect()
}

fn thinning_law(beta: &Beta) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for d in random_laws(50, 0x51_5053) {
        let z = exact_cumulants_dd(&d, 6);
        for eta in [0.1, 0.37, 0.85] {
            let t = binomial_thin(&d, eta)?;
            let zt = exact_cumulants_dd(&t, 6);
            let fm = t.factorial_moments(6);
            for j in 1..=6 {
                let lhs = beta.combine(&zt, j);
                let rhs = eta.powi(j as i32) * beta.combine(&z, j);
                let scale = rhs.abs().max(fm[j - 1]).max(f64::MIN_POSITIVE);
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
    }
    Ok(check("thinning_sgurzant_law", 1e-8, worst))
}

fn poisson_nulling(beta: &Beta) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for lambda in [0.5, 3.0, 20.0] {
        let z = exact_cumulants_dd(&pmf(&EmitterStatModel::Poisson { lambda })?, 6);
        for j in 2..=6 {
            worst = worst.max(beta.combine(&z, j).abs() / lambda);
        }
    }
    Ok(check("poisson_nulling", 1e-6, worst))
}

fn equivalence_scene() -> Scene {
    Scene {
        emitters: vec![
            Emitter {
                x: 3.2,
                y: 4.1,
                model: EmitterStatModel::Blinking { b: 0.3, m: 12 },
                rho: 0.4,
            },
            Emitter {
                x: 5.5,
                y: 3.0,
                model: EmitterStatModel::SinglePhoton,
                rho: 0.9,
            },
        ],
        psf: PsfModel::new(1.3),
        width: 9,
        height: 8,
        readout_rms: 0.0,
    }
}

fn qsips_sr_equivalence(beta: &Beta) -> Result<CheckResult> {
    let scene = equivalence_scene();
    let pattern = IlluminationPattern::sinusoid(0.3, 0.2, 0.2);
    let k: CumulantStack = exact_cumulant_stack(&scene, &pattern, 5, Execution::Parallel)?;
    let g = exact_g_stack(&scene, &pattern, 5, Execution::Parallel)?;
    let mut worst: f64 = 0.0;
    for j in 2..=5 {
        let sr = sr_map_via_g(&g, j, false)?;
        for p in 0..scene.n_pixels() {
            let kp: Vec<DoubleDouble> = (1..=j).map(|i| k.get_dd(i, p)).collect();
            let q = beta.combine(&kp, j) * qsips_sign_factor(j);
            let scale = q.abs().max(g.mean[p].powi(j as i32)).max(f64::MIN_POSITIVE);
            worst = worst.max((q - sr.map.data[p]).abs() / scale);
        }
    }
    Ok(check("qsips_g_function_equivalence", 1e-8, worst))
}

/// Runs every check; never stops at the first failure.
pub fn run(mutations: Mutations) -> Result<VerifyReport> {
    let beta = Beta::new(mutations)?;
    let checks = vec![
        orthogonality(&beta)?,
        bell_all_ones()?,
        thinning_law(&beta)?,
        poisson_nulling(&beta)?,
        qsips_sr_equivalence(&beta)?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, passed })
}
