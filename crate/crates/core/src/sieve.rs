//! Divisor-structured large-sieve forms and the block bounds for `|A_d|`.
//!
//! Windows `n ~ X` and `d ~ D` are the closed ranges `[X, 2X]`, `[D, 2D]`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::Parallelism;
use crate::error::{Error, Result};
use crate::exact::ExactInt;
use crate::set_model::{multiples_count, multiplicity_table, IntegerSet};

/// Integer weights on a closed dyadic window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedSequence {
    scale: u64,
    values: BTreeMap<u64, i64>,
}

impl WeightedSequence {
    pub fn new(scale: u64, values: BTreeMap<u64, i64>) -> Result<Self> {
        if scale == 0 {
            return Err(Error::usage("window scale must be positive"));
        }
        if let Some((&n, _)) = values.iter().find(|(&n, _)| n < scale || n > 2 * scale) {
            return Err(Error::usage(format!(
                "index {n} outside [{scale}, {}]",
                2 * scale
            )));
        }
        let values = values.into_iter().filter(|(_, v)| *v != 0).collect();
        Ok(WeightedSequence { scale, values })
    }

    pub fn indicator(scale: u64, support: impl IntoIterator<Item = u64>) -> Result<Self> {
        Self::new(scale, support.into_iter().map(|n| (n, 1)).collect())
    }

    pub fn of_set(set: &IntegerSet) -> Self {
        WeightedSequence {
            scale: set.scale(),
            values: set.elements().iter().map(|&a| (a, 1)).collect(),
        }
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn get(&self, n: u64) -> i64 {
        self.values.get(&n).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, i64)> + '_ {
        self.values.iter().map(|(&n, &v)| (n, v))
    }

    /// `sum |xi_n|^2`.
    pub fn energy(&self) -> ExactInt {
        self.values
            .values()
            .map(|&v| ExactInt::from(v as i128 * v as i128))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SieveReport {
    pub lhs: ExactInt,
    pub scale: f64,
    pub energy: ExactInt,
    pub ratio: f64,
    pub epsilon: f64,
}

impl SieveReport {
    fn new(lhs: ExactInt, scale: f64, energy: ExactInt, epsilon: f64) -> Self {
        let denom = scale * energy.to_f64();
        let ratio = if denom > 0.0 { lhs.to_f64() / denom } else { 0.0 };
        SieveReport {
            lhs,
            scale,
            energy,
            ratio,
            epsilon,
        }
    }
}

fn sum_squares(acc: impl Iterator<Item = i128>) -> ExactInt {
    acc.map(|s| ExactInt::from(BigInt::from(s) * BigInt::from(s))).sum()
}

/// `sum_{d ~ D} | sum_{n ~ X, d | n} xi_n |^2`.
pub fn sieve_lhs(xi: &WeightedSequence, d: u64) -> Result<ExactInt> {
    if d == 0 {
        return Err(Error::usage("D must be positive"));
    }
    let lo = xi.scale();
    let hi = 2 * lo;
    let dense: Vec<i64> = (lo..=hi).map(|n| xi.get(n)).collect();
    Ok(sum_squares((d..=2 * d).map(|q| {
        let mut m = lo.div_ceil(q) * q;
        let mut s = 0i128;
        while m <= hi {
            s += dense[(m - lo) as usize] as i128;
            m += q;
        }
        s
    })))
}

/// `X D^(eps - 1) + D`.
pub fn sieve_scale(x: u64, d: u64, eps: f64) -> f64 {
    let (x, d) = (x as f64, d as f64);
    x * d.powf(eps - 1.0) + d
}

/// `D` at which the two terms of [`sieve_scale`] agree.
pub fn sieve_crossover(x: u64, eps: f64) -> f64 {
    (x as f64).powf(1.0 / (2.0 - eps))
}

/// `sum_{d ~ D} | sum_{n ~ X, n | d} xi_n |^2`.
pub fn dual_sieve_lhs(xi: &WeightedSequence, d: u64) -> Result<ExactInt> {
    if d == 0 {
        return Err(Error::usage("D must be positive"));
    }
    let mut acc = vec![0i128; d as usize + 1];
    for (n, v) in xi.iter() {
        let mut m = d.div_ceil(n) * n;
        while m <= 2 * d {
            acc[(m - d) as usize] += v as i128;
            m += n;
        }
    }
    Ok(sum_squares(acc.into_iter()))
}

/// `D X^(eps - 1) + X`.
pub fn dual_scale(x: u64, d: u64, eps: f64) -> f64 {
    let (x, d) = (x as f64, d as f64);
    d * x.powf(eps - 1.0) + x
}

pub fn sieve_report(xi: &WeightedSequence, d: u64, eps: f64) -> Result<SieveReport> {
    Ok(SieveReport::new(
        sieve_lhs(xi, d)?,
        sieve_scale(xi.scale(), d, eps),
        xi.energy(),
        eps,
    ))
}

pub fn dual_report(xi: &WeightedSequence, d: u64, eps: f64) -> Result<SieveReport> {
    Ok(SieveReport::new(
        dual_sieve_lhs(xi, d)?,
        dual_scale(xi.scale(), d, eps),
        xi.energy(),
        eps,
    ))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcdForm {
    /// `sum gcd(d1, d2) / (d1 d2) |eta_d1| |eta_d2|`.
    pub form: BigRational,
    /// `C(d1) = sum_{d2 ~ D} gcd(d1, d2) / (d1 d2)` for each `d1` in the support.
    pub majorants: BTreeMap<u64, BigRational>,
}

/// The gcd-weighted bilinear form of `eta` over its window.
pub fn gcd_quadratic_form(eta: &WeightedSequence) -> GcdForm {
    let entries: Vec<(u64, BigInt)> = eta.iter().map(|(d, v)| (d, BigInt::from(v).abs())).collect();
    let mut form = BigRational::zero();
    for (i, (d1, v1)) in entries.iter().enumerate() {
        form += BigRational::new(v1 * v1, BigInt::from(*d1));
        for (d2, v2) in &entries[i + 1..] {
            let g = num_integer::gcd(*d1, *d2);
            form += BigRational::new(BigInt::from(2 * g) * v1 * v2, BigInt::from(d1 * d2));
        }
    }
    let majorants = entries
        .iter()
        .map(|&(d1, _)| (d1, gcd_majorant(d1, eta.scale())))
        .collect();
    GcdForm { form, majorants }
}

/// `C(d1)` over the window `[D, 2D]`.
pub fn gcd_majorant(d1: u64, d: u64) -> BigRational {
    (d..=2 * d)
        .map(|d2| BigRational::new(BigInt::from(num_integer::gcd(d1, d2)), BigInt::from(d1 * d2)))
        .sum()
}

/// `C(d1) d1 / tau(d1)` with `d1` in its own window (`D = d1`), summed in
/// floating point: the exact denominators grow like `lcm(D..2D)`.
pub fn majorant_ratio(d1: u64) -> f64 {
    let tau = crate::kernel::divisor_list(d1).len() as f64;
    let c: f64 = (d1..=2 * d1)
        .map(|d2| num_integer::gcd(d1, d2) as f64 / d2 as f64)
        .sum();
    c / tau
}

/// `#{multiples of m in [X, 2X]} - X/m`, bounded by one in absolute value.
pub fn multiples_error(x: u64, m: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(multiples_count(x, m)))
        - BigRational::new(BigInt::from(x), BigInt::from(m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockBounds {
    pub delta: u64,
    pub eta: f64,
    pub linf: u64,
    pub linf_scale: f64,
    pub l1: u64,
    pub l1_scale: f64,
    pub l2: ExactInt,
    pub l2_scale: f64,
    /// `X >= Delta^(2 - eta)`.
    pub l2_valid: bool,
}

/// Exact `max`, sum and sum of squares of `|A_d|` over `d ~ Delta`, with
/// the matching scales `X/Delta`, `|A| X^eta`, `X Delta^(eta-1) |A|`.
pub fn block_bounds(set: &IntegerSet, delta: u64, eta: f64) -> Result<BlockBounds> {
    let x = set.scale();
    if delta == 0 || delta > 2 * x {
        return Err(Error::usage(format!(
            "Delta must lie in [1, 2X] = [1, {}], got {delta}",
            2 * x
        )));
    }
    let d_max = (2 * delta).min(set.upper());
    let table = multiplicity_table(set, d_max)?;
    let counts: Vec<u64> = (delta..=2 * delta).map(|d| table.get(d)).collect();
    let (xf, df, n) = (x as f64, delta as f64, set.len() as f64);
    Ok(BlockBounds {
        delta,
        eta,
        linf: counts.iter().copied().max().unwrap_or(0),
        linf_scale: xf / df,
        l1: counts.iter().sum(),
        l1_scale: n * xf.powf(eta),
        l2: counts.iter().map(|&c| ExactInt::from(c as u128 * c as u128)).sum(),
        l2_scale: xf * df.powf(eta - 1.0) * n,
        l2_valid: xf >= df.powf(2.0 - eta),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SieveForm {
    Primal,
    Dual,
}

impl SieveForm {
    pub fn as_str(self) -> &'static str {
        match self {
            SieveForm::Primal => "primal",
            SieveForm::Dual => "dual",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub form: SieveForm,
    /// The `X` of the sweep axis; `D = floor(sqrt X)`.
    pub x: u64,
    pub d: u64,
    pub trials: usize,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub form: SieveForm,
    pub max_ratio: f64,
    /// Average of `mean_ratio(2X) / mean_ratio(X)` over consecutive points.
    pub mean_doubling: f64,
}

fn random_indicator(scale: u64, rng: &mut ChaCha8Rng) -> WeightedSequence {
    let mut support: Vec<u64> = (scale..=2 * scale).filter(|_| rng.gen_bool(0.5)).collect();
    if support.is_empty() {
        support.push(scale + rng.gen_range(0..=scale));
    }
    WeightedSequence::indicator(scale, support).expect("support inside window")
}

/// Random 0/1 sweep at `X = 2^e`, `D = floor(sqrt X)`. The primal form puts
/// `xi` on `[X, 2X]` and `d` on `[D, 2D]`; the dual form swaps the windows.
/// Trial `j` at point `e` draws from stream `(e << 32) | j` of the seed.
pub fn sieve_sweep(
    form: SieveForm,
    exponents: &[u32],
    eps: f64,
    trials: usize,
    seed: u64,
    par: Parallelism,
) -> Result<Vec<SweepPoint>> {
    let point = |&e: &u32| -> Result<SweepPoint> {
        let x = 1u64 << e;
        let d = crate::kernel::isqrt(x);
        let mut ratios = Vec::with_capacity(trials);
        for j in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((e as u64) << 32) | j as u64);
            let rep = match form {
                SieveForm::Primal => sieve_report(&random_indicator(x, &mut rng), d, eps)?,
                SieveForm::Dual => dual_report(&random_indicator(d, &mut rng), x, eps)?,
            };
            ratios.push(rep.ratio);
        }
        Ok(SweepPoint {
            form,
            x,
            d,
            trials,
            max_ratio: ratios.iter().copied().fold(0.0, f64::max),
            mean_ratio: ratios.iter().sum::<f64>() / trials.max(1) as f64,
        })
    };
    let results: Vec<Result<SweepPoint>> = if par.workers > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(par.workers).build() {
            Ok(pool) => pool.install(|| exponents.par_iter().map(point).collect()),
            Err(_) => exponents.iter().map(point).collect(),
        }
    } else {
        exponents.iter().map(point).collect()
    };
    results.into_iter().collect()
}

pub fn summarize_sweep(points: &[SweepPoint]) -> Option<SweepSummary> {
    let first = points.first()?;
    let max_ratio = points.iter().map(|p| p.max_ratio).fold(0.0, f64::max);
    let quotients: Vec<f64> = points
        .windows(2)
        .filter(|w| w[1].x == 2 * w[0].x && w[0].mean_ratio > 0.0)
        .map(|w| w[1].mean_ratio / w[0].mean_ratio)
        .collect();
    let mean_doubling = if quotients.is_empty() {
        f64::NAN
    } else {
        quotients.iter().sum::<f64>() / quotients.len() as f64
    };
    Some(SweepSummary {
        form: first.form,
        max_ratio,
        mean_doubling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::parse_rational;
    use num_traits::One;

    #[test]
    fn sieve_lhs_examples() {
        let xi = WeightedSequence::indicator(4, [4, 6, 8]).unwrap();
        assert_eq!(sieve_lhs(&xi, 2).unwrap(), ExactInt::from(14));
        let zero = WeightedSequence::new(4, BTreeMap::new()).unwrap();
        assert!(sieve_lhs(&zero, 2).unwrap().is_zero());
        let one = WeightedSequence::indicator(50, [60]).unwrap();
        let divs = (5..=10).filter(|d| 60 % d == 0).count() as i64;
        assert_eq!(sieve_lhs(&one, 5).unwrap(), ExactInt::from(divs));
        assert!(WeightedSequence::indicator(4, [9]).is_err());
    }

    #[test]
    fn scale_examples() {
        assert_eq!(sieve_scale(17, 1, 0.0), 18.0);
        assert!((sieve_scale(4096, 64, 0.5) - 576.0).abs() < 1e-9);
        let c = sieve_crossover(4096, 0.5);
        assert!((4096.0 * c.powf(-0.5) - c).abs() < 1e-6 * c);
        assert!((dual_scale(4, 64, 0.5) - (32.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn dual_examples() {
        let xi = WeightedSequence::indicator(2, [2, 3, 4]).unwrap();
        assert_eq!(dual_sieve_lhs(&xi, 6).unwrap(), ExactInt::from(19));
        let zero = WeightedSequence::new(2, BTreeMap::new()).unwrap();
        assert!(dual_sieve_lhs(&zero, 6).unwrap().is_zero());
        let one = WeightedSequence::indicator(7, [9]).unwrap();
        assert_eq!(dual_sieve_lhs(&one, 40).unwrap(), ExactInt::from(multiples_count(40, 9)));
    }

    #[test]
    fn gcd_form_examples() {
        let single = WeightedSequence::indicator(5, [7]).unwrap();
        assert_eq!(gcd_quadratic_form(&single).form, parse_rational("1/7").unwrap());
        let eta = WeightedSequence::indicator(2, [2, 3, 4]).unwrap();
        let f = gcd_quadratic_form(&eta);
        assert_eq!(f.form, parse_rational("25/12").unwrap());
        // C(2) over [2, 4]: 2/4 + 1/6 + 2/8.
        assert_eq!(f.majorants[&2], parse_rational("11/12").unwrap());
    }

    #[test]
    fn majorant_ratio_is_bounded() {
        let worst = (1..=2000u64).map(majorant_ratio).fold(0.0, f64::max);
        assert!(worst < 3.0, "{worst}");
    }

    #[test]
    fn error_term_at_most_one() {
        for x in [1u64, 7, 64, 1000] {
            for m in 1..=200u64 {
                let e = multiples_error(x, m);
                assert!(e.abs() <= BigRational::one());
            }
        }
    }

    #[test]
    fn block_bounds_examples() {
        let full = IntegerSet::full_interval(1000).unwrap();
        for delta in [1u64, 7, 100, 999, 1000] {
            let b = block_bounds(&full, delta, 0.5).unwrap();
            assert!(b.linf as f64 <= 1000.0 / delta as f64 + 1.0);
            assert_eq!(b.l2, sieve_lhs(&WeightedSequence::of_set(&full), delta).unwrap());
        }
        let single = IntegerSet::new(100, vec![180]).unwrap();
        let b = block_bounds(&single, 10, 0.5).unwrap();
        let divs = (10..=20).filter(|d| 180 % d == 0).count() as u64;
        assert_eq!(b.l1, divs);
        assert!(block_bounds(&single, 201, 0.5).is_err());
    }

    #[test]
    fn sweep_deterministic_across_workers() {
        let a = sieve_sweep(SieveForm::Primal, &[8, 9, 10], 0.5, 5, 3, Parallelism::default()).unwrap();
        let b = sieve_sweep(SieveForm::Primal, &[8, 9, 10], 0.5, 5, 3, Parallelism::new(3)).unwrap();
        assert_eq!(a, b);
        let s = summarize_sweep(&a).unwrap();
        assert!(s.max_ratio > 0.0 && s.mean_doubling.is_finite());
        let d = sieve_sweep(SieveForm::Dual, &[8, 9], 0.5, 3, 3, Parallelism::default()).unwrap();
        assert!(d.iter().all(|p| p.mean_ratio > 0.0));
    }
}
