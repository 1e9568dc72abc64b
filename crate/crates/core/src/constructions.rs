//! Extremal instances: multiples of `D_0` for the gcd problem and unions of
//! multiples of `M` primes in `[Q, 2Q]` for the lcm problem.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counting::{rational_serde, GcdInstance, LcmInstance, TupleCensus};
use crate::error::{Error, Result};
use crate::exact::{fmt_rational, product_u64, rational_to_f64, ExactInt};
use crate::kernel::{self, iroot_floor};
use crate::set_model::{multiples_count, multiples_in, IntegerSet};

/// Relative distance below which a float is snapped to the nearest integer
/// before taking a ceiling, so `512 / 128` gives 4 and not 5.
const SNAP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcdRecipe {
    pub k: usize,
    pub scales: Vec<u64>,
    pub threshold: u64,
    #[serde(with = "rational_serde")]
    pub target_delta: BigRational,
    pub d0: u64,
}

impl GcdRecipe {
    /// Explicit two-sided window `(X / (2 D_0))^k <= prod |A_i| <= (2X / D_0)^k`
    /// for the equal-scale construction, as exact rationals.
    pub fn product_window(&self) -> (BigRational, BigRational) {
        let d0 = BigInt::from(self.d0);
        let mut lo = BigRational::one();
        let mut hi = BigRational::one();
        for &x in &self.scales {
            lo *= BigRational::new(BigInt::from(x), &d0 * 2);
            hi *= BigRational::new(BigInt::from(2 * x), d0.clone());
        }
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcmRecipe {
    pub k: usize,
    pub scales: Vec<u64>,
    pub budget: u64,
    #[serde(with = "rational_serde")]
    pub target_delta: BigRational,
    pub c_small: f64,
    pub c_large: f64,
    pub m: u64,
    pub q: u64,
    pub primes: Vec<u64>,
    /// `block_sizes[i][j] = |A_i^(j)|`.
    pub block_sizes: Vec<Vec<u64>>,
    /// `Q / (M log2(2M))`; at least 1 by construction.
    pub log_margin: f64,
    /// `Q / (8 k M^2)`; reported only.
    pub square_margin: f64,
}

impl LcmRecipe {
    /// `2^(k+1) prod X_i <= L Q^(k-1)`, i.e. every good tuple has lcm at most
    /// `L` through the chain `lcm <= 2Q prod(2X_i / Q)`.
    pub fn lcm_chain_holds(&self) -> bool {
        let lhs = ExactInt::from(2u64).pow(self.k as u32 + 1) * product_u64(self.scales.iter().copied());
        let rhs = ExactInt::from(self.budget) * ExactInt::from(self.q).pow(self.k as u32 - 1);
        lhs <= rhs
    }

    /// Exact form of `lcm(a) <= 2Q prod(2X_i / Q)`.
    pub fn good_tuple_lcm_within_chain(&self, tuple: &[u64]) -> Result<bool> {
        let lcm = kernel::lcm_tuple(tuple)?;
        let lhs = lcm * ExactInt::from(self.q).pow(self.k as u32 - 1);
        let rhs = ExactInt::from(2u64).pow(self.k as u32 + 1) * product_u64(self.scales.iter().copied());
        Ok(lhs <= rhs)
    }

    /// Index of the first block containing the whole tuple, if any.
    pub fn block_of(&self, tuple: &[u64]) -> Option<usize> {
        self.primes
            .iter()
            .position(|&q| tuple.iter().all(|&a| a % q == 0))
    }

    /// Pairwise inclusion–exclusion lower bound on the good-tuple count:
    /// `sum_j prod_i |A_i^(j)| - sum_{j<l} prod_i |A_i^(j) ∩ A_i^(l)|`.
    pub fn good_lower_bound(&self) -> ExactInt {
        let singles: ExactInt = (0..self.primes.len())
            .map(|j| product_u64(self.block_sizes.iter().map(|b| b[j])))
            .sum();
        let mut pairs = ExactInt::zero();
        for j in 0..self.primes.len() {
            for l in j + 1..self.primes.len() {
                let qq = self.primes[j] * self.primes[l];
                pairs += product_u64(self.scales.iter().map(|&x| multiples_count(x, qq)));
            }
        }
        singles - pairs
    }
}

pub fn default_c_small(k: usize) -> f64 {
    let k = k as f64;
    (2.0 * 8f64.powf(k)).powf(-1.0 / (k - 1.0))
}

pub fn default_c_large(k: usize) -> f64 {
    let kf = k as f64;
    2f64.powf((kf + 1.0) / (kf - 1.0)).max(8.0 * kf * kf)
}

fn ceil_snapped(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= SNAP_TOL * r.abs().max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::parameter(format!("k must be >= 2, got {k}")));
    }
    Ok(())
}

fn check_delta(delta: &BigRational) -> Result<()> {
    if !delta.is_positive() || *delta > BigRational::one() {
        return Err(Error::parameter(format!(
            "delta must lie in (0, 1], got {}",
            fmt_rational(delta)
        )));
    }
    Ok(())
}

/// `A_i` = multiples of `D` in `[X_i, 2X_i]`; every tuple qualifies.
pub fn build_gcd_extremal_delta1(scales: &[u64], d: u64) -> Result<(GcdInstance, GcdRecipe)> {
    check_k(scales.len())?;
    let sets = scales
        .iter()
        .map(|&x| multiples_in(x, d))
        .collect::<Result<Vec<_>>>()?;
    let inst = GcdInstance::new(sets, d)?;
    let recipe = GcdRecipe {
        k: scales.len(),
        scales: scales.to_vec(),
        threshold: d,
        target_delta: BigRational::one(),
        d0: d,
    };
    Ok((inst, recipe))
}

/// `D_0 = floor(delta^(1/(k-1)) D)`, computed exactly.
pub fn gcd_d0(k: usize, d: u64, delta: &BigRational) -> Result<u64> {
    check_k(k)?;
    check_delta(delta)?;
    let e = (k - 1) as u32;
    let scaled = delta * BigRational::from_integer(BigInt::from(d).pow(e));
    if scaled < BigRational::one() {
        return Err(Error::parameter(format!(
            "hypothesis D >= delta^(-1/(k-1)) violated: D = {d}, delta = {}, k = {k}",
            fmt_rational(delta)
        )));
    }
    let root = iroot_floor(&scaled.floor().to_integer(), e);
    Ok(u64::try_from(root).expect("D_0 <= D fits in u64"))
}

/// Equal-scale construction: every `A_i` is the multiples of `D_0` in `[X, 2X]`.
pub fn build_gcd_extremal(
    k: usize,
    x: u64,
    d: u64,
    delta: &BigRational,
) -> Result<(GcdInstance, GcdRecipe)> {
    let d0 = gcd_d0(k, d, delta)?;
    let a = multiples_in(x, d0)?;
    let inst = GcdInstance::new(vec![a; k], d)?;
    let recipe = GcdRecipe {
        k,
        scales: vec![x; k],
        threshold: d,
        target_delta: delta.clone(),
        d0,
    };
    Ok((inst, recipe))
}

/// Union-of-prime-multiples construction for the lcm problem.
pub fn build_lcm_extremal(
    scales: &[u64],
    budget: u64,
    delta: &BigRational,
    c_small: f64,
    c_large: f64,
) -> Result<(LcmInstance, LcmRecipe)> {
    let k = scales.len();
    check_k(k)?;
    check_delta(delta)?;
    if !(c_small > 0.0 && c_large > 0.0) {
        return Err(Error::parameter("constants c_k and C_k must be positive"));
    }
    let max_x = *scales.iter().max().unwrap();
    let min_x = *scales.iter().min().unwrap();
    if budget < max_x {
        return Err(Error::parameter(format!(
            "hypothesis L >= max(X_1, ..., X_k) violated: L = {budget} < {max_x}"
        )));
    }
    let km1 = (k - 1) as f64;
    let m = ceil_snapped(c_small * rational_to_f64(delta).powf(-1.0 / km1)).max(1);
    let ln_q = c_large.ln()
        + (scales.iter().map(|&x| (x as f64).ln()).sum::<f64>() - (budget as f64).ln()) / km1;
    let q = ceil_snapped(ln_q.exp()).max(1);
    let need = m as f64 * (2.0 * m as f64).log2();
    if need > q as f64 {
        return Err(Error::parameter(format!(
            "window M log2(2M) <= Q violated: M = {m}, M log2(2M) = {need:.3}, Q = {q}"
        )));
    }
    if q > min_x {
        return Err(Error::parameter(format!(
            "window Q <= min(X_1, ..., X_k) violated: Q = {q} > {min_x}"
        )));
    }
    let candidates = kernel::primes_in(q.max(2), 2 * q);
    if (candidates.len() as u64) < m {
        return Err(Error::Construction(format!(
            "need {m} primes in [{q}, {}], found {}",
            2 * q,
            candidates.len()
        )));
    }
    let primes: Vec<u64> = candidates[..m as usize].to_vec();
    let mut sets = Vec::with_capacity(k);
    let mut block_sizes = Vec::with_capacity(k);
    for &x in scales {
        let mut elements = Vec::new();
        let mut sizes = Vec::with_capacity(primes.len());
        for &p in &primes {
            let block = multiples_in(x, p)?;
            sizes.push(block.len() as u64);
            elements.extend_from_slice(block.elements());
        }
        sets.push(IntegerSet::new(x, elements)?);
        block_sizes.push(sizes);
    }
    let inst = LcmInstance::new(sets, budget)?;
    let recipe = LcmRecipe {
        k,
        scales: scales.to_vec(),
        budget,
        target_delta: delta.clone(),
        c_small,
        c_large,
        m,
        q,
        primes,
        block_sizes,
        log_margin: q as f64 / need.max(f64::MIN_POSITIVE),
        square_margin: q as f64 / (8.0 * k as f64 * (m * m) as f64),
    };
    Ok((inst, recipe))
}

fn check_recipe_matches(recipe: &LcmRecipe, inst: &LcmInstance) -> Result<()> {
    if inst.scales() != recipe.scales || inst.budget() != recipe.budget {
        return Err(Error::usage("instance was not produced by this recipe"));
    }
    Ok(())
}

/// Exact size of `union_j prod_i A_i^(j)` by inclusion–exclusion over prime
/// subsets. A subset contributes only while its product stays below
/// `2 min X_i`, so the recursion is shallow.
pub fn good_tuple_census(recipe: &LcmRecipe, inst: &LcmInstance) -> Result<TupleCensus> {
    check_recipe_matches(recipe, inst)?;
    let limit = 2 * recipe.scales.iter().min().unwrap();
    fn rec(
        primes: &[u64],
        scales: &[u64],
        limit: u64,
        start: usize,
        prod: u64,
        depth: usize,
        acc: &mut BigInt,
    ) {
        for j in start..primes.len() {
            let Some(next) = prod.checked_mul(primes[j]) else {
                // Products only grow along the sorted prime list.
                return;
            };
            if next > limit {
                return;
            }
            let term = product_u64(scales.iter().map(|&x| multiples_count(x, next)));
            if depth % 2 == 0 {
                *acc += term.as_bigint();
            } else {
                *acc -= term.as_bigint();
            }
            rec(primes, scales, limit, j + 1, next, depth + 1, acc);
        }
    }
    let mut acc = BigInt::zero();
    rec(&recipe.primes, &recipe.scales, limit, 0, 1, 0, &mut acc);
    let total = crate::counting::total_tuples(inst.sets());
    TupleCensus::new(ExactInt::from(acc), total)
}

/// Visits each good tuple exactly once, grouped by the first block that
/// contains it.
pub fn for_each_good_tuple(recipe: &LcmRecipe, mut visit: impl FnMut(&[u64])) -> Result<()> {
    let blocks: Vec<Vec<IntegerSet>> = recipe
        .primes
        .iter()
        .map(|&q| {
            recipe
                .scales
                .iter()
                .map(|&x| multiples_in(x, q))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    for (j, block) in blocks.iter().enumerate() {
        crate::counting::for_each_tuple(block, |t| {
            if recipe.block_of(t) == Some(j) {
                visit(t);
            }
        });
    }
    Ok(())
}

/// `n` good tuples drawn by picking a block uniformly and then one element
/// per coordinate uniformly inside the block.
pub fn sample_good_tuples<R: Rng>(recipe: &LcmRecipe, n: usize, rng: &mut R) -> Vec<Vec<u64>> {
    let mut out = Vec::with_capacity(n);
    if recipe.primes.is_empty() {
        return out;
    }
    for _ in 0..n {
        let q = recipe.primes[rng.gen_range(0..recipe.primes.len())];
        let tuple = recipe
            .scales
            .iter()
            .map(|&x| {
                let lo = x.div_ceil(q);
                let hi = (2 * x) / q;
                rng.gen_range(lo..=hi) * q
            })
            .collect();
        out.push(tuple);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{count_gcd_fast, count_lcm_bruteforce, DEFAULT_BRUTE_CAP};
    use crate::exact::parse_rational;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn delta1_examples() {
        let (inst, recipe) = build_gcd_extremal_delta1(&[10, 10], 5).unwrap();
        assert_eq!(inst.sets()[0].elements(), &[10, 15, 20]);
        assert_eq!(recipe.d0, 5);
        let c = count_gcd_fast(&inst).unwrap();
        assert_eq!(c.qualifying, c.total);

        let (inst, _) = build_gcd_extremal_delta1(&[7, 9, 11], 1).unwrap();
        for (s, x) in inst.sets().iter().zip([7u64, 9, 11]) {
            assert_eq!(s.len() as u64, x + 1);
        }
    }

    #[test]
    fn delta1_product_within_4k() {
        for (k, x, d) in [(2usize, 1000u64, 7u64), (3, 500, 13), (4, 200, 50), (3, 64, 64)] {
            let (inst, _) = build_gcd_extremal_delta1(&vec![x; k], d).unwrap();
            let prod = crate::counting::total_tuples(inst.sets()).to_f64();
            let shape = (x as f64 / d as f64).powi(k as i32);
            let ratio = prod / shape;
            let bound = 4f64.powi(k as i32);
            assert!(ratio <= bound && ratio >= 1.0 / bound, "k={k} X={x} D={d}: {ratio}");
        }
    }

    #[test]
    fn d0_examples() {
        assert_eq!(gcd_d0(3, 100, &q("1/100")).unwrap(), 10);
        assert_eq!(gcd_d0(3, 37, &q("1")).unwrap(), 37);
        // 0.1 * 32 = 3.2
        assert_eq!(gcd_d0(3, 32, &q("1/100")).unwrap(), 3);
        let err = gcd_d0(3, 9, &q("1/100")).unwrap_err();
        assert!(err.to_string().contains("D >= delta^(-1/(k-1))"));
    }

    #[test]
    fn delta_one_reduces_to_delta1() {
        let (a, ra) = build_gcd_extremal(3, 100, 20, &q("1")).unwrap();
        let (b, _) = build_gcd_extremal_delta1(&[100, 100, 100], 20).unwrap();
        assert_eq!(ra.d0, 20);
        assert_eq!(a, b);
    }

    #[test]
    fn gcd_product_window_holds() {
        for (x, d) in [(10_000u64, 100u64), (5000, 40), (777, 64)] {
            let (inst, recipe) = build_gcd_extremal(3, x, d, &q("1/100")).unwrap();
            let prod = crate::counting::total_tuples(inst.sets()).to_rational();
            let (lo, hi) = recipe.product_window();
            assert!(lo <= prod && prod <= hi);
        }
    }

    #[test]
    fn lcm_m_from_constants() {
        let (_, recipe) = build_lcm_extremal(&[100_000, 100_000], 64_000_000, &q("1/512"), 1.0 / 128.0, 8.0).unwrap();
        assert_eq!(recipe.m, 4);
        assert_eq!(recipe.q, 1250);
        assert_eq!(recipe.primes.len(), 4);
        assert!(recipe.primes.iter().all(|&p| (1250..=2500).contains(&p) && kernel::is_prime(p)));
        assert!(recipe.lcm_chain_holds());
    }

    #[test]
    fn lcm_block_sizes_in_window() {
        let (_, recipe) = build_lcm_extremal(&[30_000, 50_000, 40_000], 1 << 40, &q("1/4"), 0.5, 64.0).unwrap();
        for (i, &x) in recipe.scales.iter().enumerate() {
            for &b in &recipe.block_sizes[i] {
                let b = b as f64;
                let qf = recipe.q as f64;
                assert!(b >= x as f64 / (4.0 * qf) && b <= 2.0 * x as f64 / qf);
            }
        }
    }

    #[test]
    fn single_prime_every_tuple_good() {
        let (inst, recipe) = build_lcm_extremal(&[5000, 5000], 200_000, &q("1"), 1.0, 8.0).unwrap();
        assert_eq!(recipe.m, 1);
        let good = good_tuple_census(&recipe, &inst).unwrap();
        assert_eq!(good.qualifying, good.total);
    }

    #[test]
    fn good_census_matches_enumeration_and_bruteforce() {
        let (inst, recipe) = build_lcm_extremal(&[2000, 2000], 250_000, &q("1/64"), 0.25, 8.0).unwrap();
        assert!(recipe.m >= 2);
        let good = good_tuple_census(&recipe, &inst).unwrap();
        let mut seen = 0u64;
        let mut ok = true;
        for_each_good_tuple(&recipe, |t| {
            seen += 1;
            ok &= recipe.good_tuple_lcm_within_chain(t).unwrap();
        })
        .unwrap();
        assert!(ok);
        assert_eq!(good.qualifying, ExactInt::from(seen));
        assert!(good.qualifying >= recipe.good_lower_bound());
        let all = count_lcm_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap();
        assert!(all.qualifying >= good.qualifying);
    }

    #[test]
    fn window_violations_named() {
        let err = build_lcm_extremal(&[100, 100], 100, &q("1/512"), 1.0 / 128.0, 8.0).unwrap_err();
        assert!(err.to_string().contains("Q <= min"), "{err}");
        let err = build_lcm_extremal(&[100_000, 100_000], 1 << 40, &q("1/512"), 1.0 / 128.0, 8.0).unwrap_err();
        assert!(err.to_string().contains("M log2(2M) <= Q"), "{err}");
        let err = build_lcm_extremal(&[100, 200], 150, &q("1/2"), 1.0, 8.0).unwrap_err();
        assert!(err.to_string().contains("L >= max"));
    }

    #[test]
    fn samples_are_good() {
        let (_, recipe) = build_lcm_extremal(&[100_000, 100_000], 64_000_000, &q("1/512"), 1.0 / 128.0, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in sample_good_tuples(&recipe, 500, &mut rng) {
            assert!(recipe.block_of(&t).is_some());
            assert!(recipe.good_tuple_lcm_within_chain(&t).unwrap());
            assert!(kernel::lcm_tuple(&t).unwrap() <= ExactInt::from(recipe.budget));
        }
    }

    #[test]
    fn default_constants() {
        assert!((default_c_small(2) - 1.0 / 128.0).abs() < 1e-15);
        assert_eq!(default_c_large(2), 32.0);
        assert_eq!(default_c_large(3), 72.0);
    }
}
