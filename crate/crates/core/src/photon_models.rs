//! Finite photon-number distributions and their exact algebra: emission
//! models, binomial thinning, convolution, cumulants and Sgurzants
//! (Stirling-weighted cumulant combinations, i.e. factorial cumulants).

use crate::combinatorics::StirlingTable;
use crate::error::{contract, Error, Result};
use crate::numeric::{cumulants_from_moments, DoubleDouble};

/// Highest cumulant order handled by the exact routines.
pub const MAX_CUMULANT_ORDER: usize = 8;

/// Largest pmf support (number of entries) any routine will build.
pub const MAX_SUPPORT: usize = 1 << 22;

/// Poisson truncation target for the discarded upper tail.
pub const POISSON_TAIL: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-12;

// Relative size below which binomial/Poisson tail terms are dropped. Kept
// close to underflow: at tiny thinning probabilities the order-8 factorial
// moments live entirely in terms ~1e-40 below the mode.
const NEGLIGIBLE: f64 = 1e-280;

/// Probability mass function over photon number `m = 0..probs.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonDistribution {
    probs: Vec<f64>,
}

impl PhotonDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(contract("distribution needs at least one entry"));
        }
        if let Some(m) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(contract(format!("probability at m={m} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(contract(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Scales `weights` to unit mass.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(contract("weights must have a positive finite sum"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights)
    }

    /// Point mass at `m`.
    pub fn delta(m: usize) -> Self {
        let mut probs = vec![0.0; m + 1];
        probs[m] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_count(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.raw_moments_dd(1)[0].to_f64()
    }

    /// `<m^p>` for `p = 1..=n` in double-double.
    pub(crate) fn raw_moments_dd(&self, n: usize) -> Vec<DoubleDouble> {
        let mut out = vec![DoubleDouble::ZERO; n];
        for (m, &p) in self.probs.iter().enumerate() {
            if p == 0.0 || m == 0 {
                continue;
            }
            let mut term = DoubleDouble::new(p);
            for slot in out.iter_mut() {
                term = term.mul_f64(m as f64);
                *slot += term;
            }
        }
        out
    }

    /// `<m (m-1) ... (m-p+1)>` for `p = 1..=n` in double-double.
    pub(crate) fn factorial_moments_dd(&self, n: usize) -> Vec<DoubleDouble> {
        let mut out = vec![DoubleDouble::ZERO; n];
        for (m, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut term = DoubleDouble::new(p);
            for (i, slot) in out.iter_mut().enumerate().take(m) {
                term = term.mul_f64((m - i) as f64);
                *slot += term;
            }
        }
        out
    }

    pub fn raw_moments(&self, n: usize) -> Vec<f64> {
        self.raw_moments_dd(n).iter().map(|x| x.to_f64()).collect()
    }

    pub fn factorial_moments(&self, n: usize) -> Vec<f64> {
        self.factorial_moments_dd(n).iter().map(|x| x.to_f64()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmitterStatModel {
    /// Emits nothing with probability `b`, otherwise exactly `m` photons.
    Blinking { b: f64, m: u32 },
    SinglePhoton,
    Poisson { lambda: f64 },
    Custom(PhotonDistribution),
}

impl EmitterStatModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EmitterStatModel::Blinking { b, m } => {
                if !(0.0..=1.0).contains(&b) {
                    return Err(contract(format!("blinking probability {b} outside [0, 1]")));
                }
                if m == 0 {
                    return Err(contract("blinking emitter needs M >= 1"));
                }
            }
            EmitterStatModel::Poisson { lambda } => {
                if !(lambda.is_finite() && lambda > 0.0) {
                    return Err(contract(format!("Poisson mean {lambda} must be positive")));
                }
            }
            EmitterStatModel::SinglePhoton | EmitterStatModel::Custom(_) => {}
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            EmitterStatModel::Blinking { b, m } => (1.0 - b) * f64::from(*m),
            EmitterStatModel::SinglePhoton => 1.0,
            EmitterStatModel::Poisson { lambda } => *lambda,
            EmitterStatModel::Custom(d) => d.mean(),
        }
    }
}

/// Exact pmf of an emission model.
pub fn pmf(model: &EmitterStatModel) -> Result<PhotonDistribution> {
    model.validate()?;
    match model {
        EmitterStatModel::Blinking { b, m } => {
            let m = *m as usize;
            if m >= MAX_SUPPORT {
                return Err(Error::Capacity(format!("blinking M={m} exceeds pmf size cap")));
            }
            let mut probs = vec![0.0; m + 1];
            probs[0] = *b;
            probs[m] += 1.0 - b;
            Ok(PhotonDistribution { probs })
        }
        EmitterStatModel::SinglePhoton => Ok(PhotonDistribution::delta(1)),
        EmitterStatModel::Poisson { lambda } => poisson_pmf(*lambda),
        EmitterStatModel::Custom(d) => Ok(d.clone()),
    }
}

fn poisson_pmf(lambda: f64) -> Result<PhotonDistribution> {
    // Unnormalized terms built outward from the mode, where the ratio
    // recursion p(m+1)/p(m) = lambda/(m+1) is stable in both directions.
    let mode = lambda.floor() as usize;
    let mut up = vec![1.0_f64];
    let mut m = mode;
    loop {
        let next = up[up.len() - 1] * lambda / (m + 1) as f64;
        m += 1;
        // Past the mode the terms decrease geometrically, so the tail
        // beyond `m` is bounded by next / (1 - lambda/(m+1)). Cutting far
        // below POISSON_TAIL keeps high moments, which weight the tail by
        // m^j, accurate as well.
        let ratio = lambda / (m + 1) as f64;
        if ratio < 1.0 && next / (1.0 - ratio) < NEGLIGIBLE {
            break;
        }
        if m + 1 >= MAX_SUPPORT {
            return Err(Error::Capacity(format!(
                "Poisson({lambda}) needs more than {MAX_SUPPORT} entries to reach tail {POISSON_TAIL:e}"
            )));
        }
        up.push(next);
    }
    let mut probs = vec![0.0; mode + up.len()];
    probs[mode..].copy_from_slice(&up);
    let mut v = 1.0;
    for k in (0..mode).rev() {
        v *= (k + 1) as f64 / lambda;
        if v < NEGLIGIBLE {
            break;
        }
        probs[k] = v;
    }
    PhotonDistribution::from_weights(probs)
}

/// Binomial(n, eta) pmf restricted to the entries that are not negligible;
/// returns `(first_index, probs)`.
fn binomial_pmf(n: usize, eta: f64) -> (usize, Vec<f64>) {
    if eta <= 0.0 || n == 0 {
        return (0, vec![1.0]);
    }
    if eta >= 1.0 {
        return (n, vec![1.0]);
    }
    let odds = eta / (1.0 - eta);
    let mode = (((n + 1) as f64) * eta).floor().min(n as f64) as usize;
    let mut lower = Vec::new();
    let mut v = 1.0;
    let mut k = mode;
    while k > 0 {
        // p(k-1)/p(k) = k / ((n-k+1) odds)
        v *= k as f64 / ((n - k + 1) as f64 * odds);
        if v < NEGLIGIBLE {
            break;
        }
        lower.push(v);
        k -= 1;
    }
    let first = mode - lower.len();
    let mut probs: Vec<f64> = lower.into_iter().rev().collect();
    probs.push(1.0);
    let mut v = 1.0;
    for k in mode..n {
        v *= (n - k) as f64 / (k + 1) as f64 * odds;
        if v < NEGLIGIBLE {
            break;
        }
        probs.push(v);
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    (first, probs)
}

/// Law of the number of survivors when each photon independently survives
/// with probability `eta`.
pub fn binomial_thin(dist: &PhotonDistribution, eta: f64) -> Result<PhotonDistribution> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(contract(format!("thinning probability {eta} outside [0, 1]")));
    }
    if eta == 1.0 {
        return Ok(dist.clone());
    }
    if eta == 0.0 {
        return Ok(PhotonDistribution::delta(0));
    }
    let mut out = vec![0.0; dist.probs.len()];
    let mut top = 0;
    for (m, &p) in dist.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let (first, b) = binomial_pmf(m, eta);
        for (i, q) in b.iter().enumerate() {
            out[first + i] += p * q;
        }
        top = top.max(first + b.len());
    }
    out.truncate(top.max(1));
    PhotonDistribution::from_weights(out)
}

/// Law of the sum of two independent counts.
pub fn convolve(a: &PhotonDistribution, b: &PhotonDistribution) -> PhotonDistribution {
    let mut out = vec![0.0; a.probs.len() + b.probs.len() - 1];
    for (i, &pa) in a.probs.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        for (j, &pb) in b.probs.iter().enumerate() {
            out[i + j] += pa * pb;
        }
    }
    PhotonDistribution { probs: out }
}

fn check_order(j_max: usize) -> Result<()> {
    if j_max == 0 || j_max > MAX_CUMULANT_ORDER {
        return Err(Error::OrderOutOfRange {
            order: j_max,
            min: 1,
            max: MAX_CUMULANT_ORDER,
        });
    }
    Ok(())
}

pub(crate) fn exact_cumulants_dd(dist: &PhotonDistribution, j_max: usize) -> Vec<DoubleDouble> {
    cumulants_from_moments(&dist.raw_moments_dd(j_max))
}

/// Cumulants `z^(1..=j_max)` from exact raw moments.
pub fn exact_cumulants(dist: &PhotonDistribution, j_max: usize) -> Result<Vec<f64>> {
    check_order(j_max)?;
    Ok(exact_cumulants_dd(dist, j_max).iter().map(|x| x.to_f64()).collect())
}

/// Stirling-weighted combinations `sum_i beta_{i,j} z^(i)` for `j = 1..=n`,
/// evaluated in double-double.
pub(crate) fn stirling_combine(cumulants: &[DoubleDouble]) -> Vec<DoubleDouble> {
    let table = StirlingTable::shared();
    (1..=cumulants.len())
        .map(|j| {
            let beta = table.beta_coeffs(j).expect("order within table");
            beta.iter()
                .zip(cumulants)
                .fold(DoubleDouble::ZERO, |acc, (&b, z)| acc + z.mul_f64(b as f64))
        })
        .collect()
}

/// Sgurzants of orders `1..=j_max`.
pub fn sgurzants(dist: &PhotonDistribution, j_max: usize) -> Result<Vec<f64>> {
    check_order(j_max)?;
    Ok(stirling_combine(&exact_cumulants_dd(dist, j_max))
        .iter()
        .map(|x| x.to_f64())
        .collect())
}

/// Factorial cumulants computed from factorial moments, without going
/// through ordinary cumulants. Equal to [`sgurzants`].
pub fn factorial_cumulants(dist: &PhotonDistribution, j_max: usize) -> Result<Vec<f64>> {
    check_order(j_max)?;
    Ok(cumulants_from_moments(&dist.factorial_moments_dd(j_max))
        .iter()
        .map(|x| x.to_f64())
        .collect())
}

/// Variance over mean.
pub fn fano(dist: &PhotonDistribution) -> Result<f64> {
    let k = exact_cumulants_dd(dist, 2);
    let mean = k[0].to_f64();
    if mean <= 0.0 {
        return Err(Error::UndefinedFano);
    }
    Ok(k[1].to_f64() / mean)
}

/// Fano factor after independent loss with survival probability `eta`.
pub fn fano_after_loss(f_e: f64, eta: f64) -> f64 {
    eta * (f_e - 1.0) + 1.0
}
