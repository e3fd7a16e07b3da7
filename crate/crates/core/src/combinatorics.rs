//! Exact integer combinatorics: Stirling numbers of both kinds, partial Bell
//! polynomials and the orthogonality between the two Stirling kinds.
//!
//! Indexing follows the falling-factorial convention: `first_kind(n, k)` is
//! the coefficient of `x^k` in `x (x-1) ... (x-n+1)` (signed), and
//! `second_kind(n, k)` counts partitions of an `n`-set into `k` blocks.
//! The QSIPS weight of cumulant `i` in the order-`j` map is
//! `beta(i, j) = first_kind(j, i)`.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest order whose tables fit in 64-bit integers with headroom.
pub const MAX_SUPPORTED_ORDER: usize = 20;

/// Order of the shared table returned by [`StirlingTable::shared`].
pub const DEFAULT_ORDER: usize = MAX_SUPPORTED_ORDER;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StirlingTable {
    max_order: usize,
    // s1[n][k], 0 <= k <= n <= max_order
    s1: Vec<Vec<i64>>,
    s2: Vec<Vec<u64>>,
}

impl StirlingTable {
    /// Builds both triangles up to `max_order` with the standard recurrences
    /// `s(n,k) = s(n-1,k-1) - (n-1) s(n-1,k)` and
    /// `S(n,k) = S(n-1,k-1) + k S(n-1,k)`, checking every step for overflow.
    pub fn new(max_order: usize) -> Result<Self> {
        if max_order == 0 || max_order > MAX_SUPPORTED_ORDER {
            return Err(Error::OrderOutOfRange {
                order: max_order,
                min: 1,
                max: MAX_SUPPORTED_ORDER,
            });
        }
        let overflow = |n: usize| Error::Capacity(format!("Stirling table overflows i64 at n={n}"));

        let mut s1 = vec![vec![1i64]];
        let mut s2 = vec![vec![1u64]];
        for n in 1..=max_order {
            let prev1 = &s1[n - 1];
            let prev2 = &s2[n - 1];
            let mut row1 = vec![0i64; n + 1];
            let mut row2 = vec![0u64; n + 1];
            for k in 1..=n {
                let a = prev1[k - 1];
                let b = if k < n { prev1[k] } else { 0 };
                let scaled = b.checked_mul((n - 1) as i64).ok_or_else(|| overflow(n))?;
                row1[k] = a.checked_sub(scaled).ok_or_else(|| overflow(n))?;

                let a = prev2[k - 1];
                let b = if k < n { prev2[k] } else { 0 };
                let scaled = b.checked_mul(k as u64).ok_or_else(|| overflow(n))?;
                row2[k] = a.checked_add(scaled).ok_or_else(|| overflow(n))?;
            }
            s1.push(row1);
            s2.push(row2);
        }
        Ok(Self { max_order, s1, s2 })
    }

    /// Process-wide table of order [`DEFAULT_ORDER`].
    pub fn shared() -> &'static StirlingTable {
        static TABLE: OnceLock<StirlingTable> = OnceLock::new();
        TABLE.get_or_init(|| StirlingTable::new(DEFAULT_ORDER).expect("default order is valid"))
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    fn check(&self, n: usize, k: usize) -> Result<()> {
        if n == 0 || n > self.max_order {
            return Err(Error::OrderOutOfRange {
                order: n,
                min: 1,
                max: self.max_order,
            });
        }
        if k == 0 || k > n {
            return Err(Error::OrderOutOfRange {
                order: k,
                min: 1,
                max: n,
            });
        }
        Ok(())
    }

    /// Signed Stirling number of the first kind `s(n, k)`.
    pub fn first_kind(&self, n: usize, k: usize) -> Result<i64> {
        self.check(n, k)?;
        Ok(self.s1[n][k])
    }

    /// Stirling number of the second kind `S(n, k)`.
    pub fn second_kind(&self, n: usize, k: usize) -> Result<u64> {
        self.check(n, k)?;
        Ok(self.s2[n][k])
    }

    /// QSIPS weights `beta_{1..j, j}`, i.e. row `j` of the first-kind table
    /// without its constant term. `beta_{j,j} = 1`.
    pub fn beta_coeffs(&self, j: usize) -> Result<Vec<i64>> {
        if j == 0 || j > self.max_order {
            return Err(Error::OrderOutOfRange {
                order: j,
                min: 1,
                max: self.max_order,
            });
        }
        Ok(self.s1[j][1..=j].to_vec())
    }

    /// Checks `sum_{i=k}^{j} s(j,i) S(i,k) = delta_{jk}` for all
    /// `1 <= k <= j <= j_max` in exact 128-bit arithmetic.
    pub fn verify_orthogonality(&self, j_max: usize) -> bool {
        if j_max == 0 || j_max > self.max_order {
            return false;
        }
        (1..=j_max).all(|j| (1..=j).all(|k| self.orthogonality_sum(j, k) == i128::from(j == k)))
    }

    /// The single sum `sum_{i=k}^{j} s(j,i) S(i,k)`.
    pub fn orthogonality_sum(&self, j: usize, k: usize) -> i128 {
        (k..=j)
            .map(|i| i128::from(self.s1[j][i]) * i128::from(self.s2[i][k]))
            .sum()
    }
}

/// `beta_{1..j,j}` from the shared table.
pub fn beta_coeffs(j: usize) -> Result<Vec<i64>> {
    StirlingTable::shared().beta_coeffs(j)
}

/// `S(i, k)` from the shared table.
pub fn stirling_second(i: usize, k: usize) -> Result<u64> {
    StirlingTable::shared().second_kind(i, k)
}

/// Calls `visit(c)` for every multiplicity vector `c` (with `c[l-1]` the
/// count of blocks of size `l`) such that `sum c_l = k` and `sum l c_l = i`.
fn for_each_bell_index(i: usize, k: usize, visit: &mut dyn FnMut(&[usize])) {
    fn walk(l: usize, parts: usize, weight: usize, c: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if l == 0 {
            if parts == 0 && weight == 0 {
                visit(c);
            }
            return;
        }
        for n in 0..=parts.min(weight / l) {
            c[l - 1] = n;
            walk(l - 1, parts - n, weight - n * l, c, visit);
        }
        c[l - 1] = 0;
    }
    let len = i - k + 1;
    let mut c = vec![0; len];
    walk(len, k, i, &mut c, visit);
}

fn check_bell_args(i: usize, k: usize, n_args: usize) -> Result<()> {
    if k == 0 || k > i {
        return Err(Error::OrderOutOfRange {
            order: k,
            min: 1,
            max: i,
        });
    }
    if n_args != i - k + 1 {
        return Err(crate::error::contract(format!(
            "B_{{{i},{k}}} takes {} arguments, got {n_args}",
            i - k + 1
        )));
    }
    Ok(())
}

/// `i! / prod_l ((l!)^{c_l} c_l!)`, the number of set partitions with block
/// multiplicities `c`. Always an integer.
fn partition_count(i: usize, c: &[usize]) -> u128 {
    let fact = |n: usize| (1..=n as u128).product::<u128>();
    let denom: u128 = c
        .iter()
        .enumerate()
        .map(|(l, &n)| fact(l + 1).pow(n as u32) * fact(n))
        .product();
    fact(i) / denom
}

/// Partial Bell polynomial `B_{i,k}(x_1, ..., x_{i-k+1})`: the sum over
/// block multiplicities `c` (`sum c_l = k`, `sum l c_l = i`) of
/// `i! prod_l x_l^{c_l} / ((l!)^{c_l} c_l!)`.
pub fn bell_partial(i: usize, k: usize, args: &[f64]) -> Result<f64> {
    check_bell_args(i, k, args.len())?;
    if args.iter().any(|a| !a.is_finite()) {
        return Err(crate::error::contract("Bell polynomial arguments must be finite"));
    }
    let mut total = 0.0;
    for_each_bell_index(i, k, &mut |c| {
        let term: f64 = c
            .iter()
            .zip(args)
            .map(|(&n, &x)| x.powi(n as i32))
            .product();
        total += partition_count(i, c) as f64 * term;
    });
    Ok(total)
}

/// [`bell_partial`] over integer arguments in exact 128-bit arithmetic.
pub fn bell_partial_exact(i: usize, k: usize, args: &[i64]) -> Result<i128> {
    check_bell_args(i, k, args.len())?;
    let mut total: Option<i128> = Some(0);
    for_each_bell_index(i, k, &mut |c| {
        let term = i128::try_from(partition_count(i, c)).ok().and_then(|count| {
            c.iter().zip(args).try_fold(count, |acc, (&n, &x)| {
                acc.checked_mul(i128::from(x).checked_pow(n as u32)?)
            })
        });
        total = total.and_then(|t| t.checked_add(term?));
    });
    total.ok_or_else(|| Error::Capacity(format!("B_{{{i},{k}}} overflows i128")))
}
