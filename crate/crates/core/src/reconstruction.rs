//! QSIPS, SOFI and g-function super-resolved maps.

use crate::combinatorics::StirlingTable;
use crate::error::{contract, Error, Result};
use crate::estimator::{CumulantStack, GStack};
use crate::field::FieldMap;
use crate::numeric::DoubleDouble;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Qsips,
    Sofi,
    SrG,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Qsips => "qsips",
            Method::Sofi => "sofi",
            Method::SrG => "sr_g",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperResMap {
    pub map: FieldMap,
    pub order: usize,
    pub method: Method,
    pub sign_normalized: bool,
}

fn check_orders(k: &CumulantStack, j: usize) -> Result<()> {
    if j == 0 {
        return Err(Error::OrderOutOfRange {
            order: j,
            min: 1,
            max: k.orders(),
        });
    }
    if j > k.orders() {
        return Err(contract(format!(
            "order {j} requested but the cumulant stack only holds orders 1..={}",
            k.orders()
        )));
    }
    Ok(())
}

/// `QSIPS^(j) = sum_i beta_{i,j} k^(i)` per pixel.
pub fn qsips_map(k: &CumulantStack, j: usize) -> Result<SuperResMap> {
    check_orders(k, j)?;
    let beta = StirlingTable::shared().beta_coeffs(j)?;
    let n = k.width() * k.height();
    let data = (0..n)
        .map(|p| {
            beta.iter()
                .enumerate()
                .fold(DoubleDouble::ZERO, |acc, (i, &b)| acc + k.get_dd(i + 1, p).mul_f64(b as f64))
                .to_f64()
        })
        .collect();
    Ok(SuperResMap {
        map: FieldMap::new(k.width(), k.height(), 1.0, data)?,
        order: j,
        method: Method::Qsips,
        sign_normalized: false,
    })
}

/// `SOFI^(j) = k^(j)`.
pub fn sofi_map(k: &CumulantStack, j: usize) -> Result<SuperResMap> {
    check_orders(k, j)?;
    Ok(SuperResMap {
        map: k.map(j)?,
        order: j,
        method: Method::Sofi,
        sign_normalized: false,
    })
}

/// Bracketed polynomial in `g^(2..=j)` multiplying `<N>^j`.
fn sr_bracket(j: usize, g: &[f64]) -> f64 {
    let (g2, g3) = (g[1], g.get(2).copied().unwrap_or(0.0));
    let g4 = g.get(3).copied().unwrap_or(0.0);
    let g5 = g.get(4).copied().unwrap_or(0.0);
    match j {
        2 => 1.0 - g2,
        3 => 1.0 - 1.5 * g2 + 0.5 * g3,
        4 => 1.0 - 2.0 * g2 + 0.5 * g2 * g2 + (2.0 / 3.0) * g3 - g4 / 6.0,
        5 => {
            1.0 - 2.5 * g2 + 1.25 * g2 * g2 + (5.0 / 6.0) * g3 - (5.0 / 12.0) * g2 * g3
                - (5.0 / 24.0) * g4
                + g5 / 24.0
        }
        _ => unreachable!("order checked by caller"),
    }
}

/// `SR^(j) = <N>^j * P_j(g^(2), ..., g^(j))` for `j = 2..=5`. Masked (zero
/// mean) pixels give 0. Refused on non-integer data unless `force`.
pub fn sr_map_via_g(g: &GStack, j: usize, force: bool) -> Result<SuperResMap> {
    if !(2..=5).contains(&j) {
        return Err(Error::OrderOutOfRange { order: j, min: 2, max: 5 });
    }
    if j > g.orders() {
        return Err(contract(format!("g maps hold orders 1..={} only", g.orders())));
    }
    if !g.integer_counts && !force {
        return Err(Error::NonIntegerCounts);
    }
    let n = g.width * g.height;
    let data = (0..n)
        .map(|p| {
            if !g.valid[p] {
                return 0.0;
            }
            let gp: Vec<f64> = g.g.iter().map(|m| m[p]).collect();
            g.mean[p].powi(j as i32) * sr_bracket(j, &gp)
        })
        .collect();
    Ok(SuperResMap {
        map: FieldMap::new(g.width, g.height, 1.0, data)?,
        order: j,
        method: Method::SrG,
        sign_normalized: false,
    })
}

/// `(-1)^(j-1) / (j-1)!`.
pub fn qsips_sign_factor(j: usize) -> f64 {
    let fact: f64 = (1..j).map(|i| i as f64).product();
    let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
    sign / fact
}

/// Rescales a QSIPS map by `(-1)^(j-1)/(j-1)!` and marks it normalized.
/// SOFI and g-function maps are only marked.
pub fn sign_normalize(map: SuperResMap) -> Result<SuperResMap> {
    if map.sign_normalized {
        return Err(Error::AlreadyNormalized);
    }
    let factor = match map.method {
        Method::Qsips => qsips_sign_factor(map.order),
        Method::Sofi | Method::SrG => 1.0,
    };
    Ok(SuperResMap {
        map: map.map.map(|v| v * factor),
        sign_normalized: true,
        ..map
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::frame_sim::{exact_cumulant_stack, exact_g_stack};
    use crate::photon_models::{binomial_thin, pmf, sgurzants, EmitterStatModel, PhotonDistribution};
    use crate::scene::{Emitter, IlluminationPattern, PsfModel, Scene};
    use proptest::prelude::*;

    fn single(model: EmitterStatModel, rho: f64, rms: f64) -> Scene {
        Scene {
            emitters: vec![Emitter { x: 6.2, y: 5.7, model, rho }],
            psf: PsfModel::new(1.6),
            width: 13,
            height: 12,
            readout_rms: rms,
        }
    }

    #[test]
    fn qsips_examples() {
        let s = single(EmitterStatModel::Blinking { b: 0.5, m: 2 }, 0.3, 0.0);
        let k = exact_cumulant_stack(&s, &IlluminationPattern::UNIFORM, 3, Execution::Sequential).unwrap();
        let q2 = qsips_map(&k, 2).unwrap();
        let q1 = qsips_map(&k, 1).unwrap();
        assert_eq!(q1.map, k.map(1).unwrap());
        let center = 6 + 6 * 13;
        for p in [center, 0, 40] {
            let expected = k.get(2, p) - k.get(1, p);
            assert!((q2.map.data[p] - expected).abs() < 1e-15);
        }
        // Pixel (6, 6) sees eta = 0.3 * exp(-(0.2^2 + 0.3^2) / (2 * 1.6^2)).
        let eta = 0.3 * (-(0.04 + 0.09) / (2.0 * 1.6 * 1.6f64)).exp();
        let s2 = sgurzants(&pmf(&EmitterStatModel::Blinking { b: 0.5, m: 2 }).unwrap(), 2).unwrap()[1];
        assert!((q2.map.data[center] - eta * eta * s2).abs() < 1e-14);
        assert!(qsips_map(&k, 4).is_err());
        assert!(qsips_map(&k, 0).is_err());
    }

    #[test]
    fn sofi_examples() {
        let s = single(EmitterStatModel::SinglePhoton, 0.8, 0.0);
        let k = exact_cumulant_stack(&s, &IlluminationPattern::UNIFORM, 2, Execution::Sequential).unwrap();
        let sofi = sofi_map(&k, 2).unwrap();
        for (p, eta) in s.detection_field(0).iter().enumerate() {
            assert!((sofi.map.data[p] - eta * (1.0 - eta)).abs() < 1e-15);
        }
        assert_eq!(sofi_map(&k, 1).unwrap().map, k.map(1).unwrap());

        let model = EmitterStatModel::Blinking { b: 0.1, m: 100 };
        let s = single(model.clone(), 0.1, 0.0);
        let k = exact_cumulant_stack(&s, &IlluminationPattern::UNIFORM, 2, Execution::Sequential).unwrap();
        let z = crate::photon_models::exact_cumulants(&pmf(&model).unwrap(), 2).unwrap();
        for (p, eta) in s.detection_field(0).iter().enumerate() {
            let expected = eta * eta * (z[1] - z[0]) + eta * z[0];
            assert!((k.get(2, p) - expected).abs() < 1e-12 * expected.max(1e-6));
        }
    }

    #[test]
    fn sr_examples() {
        // Poisson: every g is 1, so every bracket vanishes.
        for j in 2..=5 {
            assert!(sr_bracket(j, &[1.0; 5]).abs() < 1e-15, "j={j}");
        }
        let s = single(EmitterStatModel::SinglePhoton, 0.7, 0.0);
        let g = exact_g_stack(&s, &IlluminationPattern::UNIFORM, 2, Execution::Sequential).unwrap();
        let sr = sr_map_via_g(&g, 2, false).unwrap();
        for (p, eta) in s.detection_field(0).iter().enumerate() {
            assert!((sr.map.data[p] - eta * eta).abs() < 1e-15);
        }
        assert!(sr_map_via_g(&g, 6, false).is_err());
        assert!(sr_map_via_g(&g, 3, false).is_err());
        let mut noisy = g.clone();
        noisy.integer_counts = false;
        assert!(matches!(sr_map_via_g(&noisy, 2, false), Err(Error::NonIntegerCounts)));
        assert!(sr_map_via_g(&noisy, 2, true).is_ok());
    }

    #[test]
    fn sign_normalization() {
        let map = SuperResMap {
            map: FieldMap::new(1, 1, 1.0, vec![-0.25]).unwrap(),
            order: 2,
            method: Method::Qsips,
            sign_normalized: false,
        };
        let n = sign_normalize(map.clone()).unwrap();
        assert_eq!(n.map.data, vec![0.25]);
        assert!(matches!(sign_normalize(n), Err(Error::AlreadyNormalized)));
        let one = SuperResMap { order: 1, ..map };
        assert_eq!(sign_normalize(one).unwrap().map.data, vec![-0.25]);
        assert_eq!(qsips_sign_factor(4), -1.0 / 6.0);
        assert_eq!(qsips_sign_factor(5), 1.0 / 24.0);
    }

    #[test]
    fn normalized_qsips_is_eta_power() {
        let s = single(EmitterStatModel::Blinking { b: 0.1, m: 100 }, 0.1, 0.0);
        let k = exact_cumulant_stack(&s, &IlluminationPattern::UNIFORM, 5, Execution::Parallel).unwrap();
        let eta = s.detection_field(0);
        for j in 2..=5 {
            let q = sign_normalize(qsips_map(&k, j).unwrap()).unwrap();
            let center = 6 + 6 * 13;
            let c = q.map.data[center] / eta[center].powi(j as i32);
            for (p, e) in eta.iter().enumerate() {
                if *e > 1e-6 {
                    let r = q.map.data[p] / e.powi(j as i32);
                    assert!((r - c).abs() < 1e-8 * c.abs(), "j={j} p={p}: {r} vs {c}");
                }
            }
        }
    }

    #[test]
    fn qsips_and_sr_agree_on_a_two_emitter_scene() {
        let mut s = single(EmitterStatModel::Blinking { b: 0.3, m: 12 }, 0.4, 0.0);
        s.emitters.push(Emitter {
            x: 8.0,
            y: 5.0,
            model: EmitterStatModel::SinglePhoton,
            rho: 0.9,
        });
        let pat = IlluminationPattern::sinusoid(0.3, 0.2, 0.2);
        let k = exact_cumulant_stack(&s, &pat, 5, Execution::Parallel).unwrap();
        let g = exact_g_stack(&s, &pat, 5, Execution::Parallel).unwrap();
        for j in 2..=5 {
            let q = qsips_map(&k, j).unwrap();
            let sr = sr_map_via_g(&g, j, false).unwrap();
            let f = qsips_sign_factor(j);
            for p in 0..q.map.data.len() {
                let (a, b) = (q.map.data[p] * f, sr.map.data[p]);
                if a.abs() > 1e-12 {
                    assert!((a - b).abs() < 1e-8 * a.abs(), "j={j} p={p}: {a} vs {b}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn qsips_equals_scaled_sr_on_random_laws(
            w in prop::collection::vec(0.0f64..1.0, 2..10),
            eta in 0.05f64..1.0,
        ) {
            let Ok(d) = PhotonDistribution::from_weights(w) else { return Ok(()) };
            let d = binomial_thin(&d, eta).unwrap();
            prop_assume!(d.mean() > 1e-3);
            let k = crate::estimator::CumulantStack::from_pixels(
                1, 1, 5, None, true, [crate::photon_models::exact_cumulants_dd(&d, 5)],
            );
            let g = GStack::from_factorial_moments(1, 1, true, [d.factorial_moments_dd(5)]);
            for j in 2..=5 {
                let q = qsips_map(&k, j).unwrap().map.data[0];
                let sr = sr_map_via_g(&g, j, false).unwrap().map.data[0];
                let scaled = sr / qsips_sign_factor(j);
                // Natural magnitude of an order-j factorial cumulant.
                let scale = q.abs().max(d.mean().powi(j as i32));
                prop_assert!((q - scaled).abs() <= 1e-8 * scale, "j={} {} {}", j, q, scaled);
            }
        }
    }
}
