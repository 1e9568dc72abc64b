//! Elementary number theory shared by every other module.

use num_bigint::BigInt;
use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactInt;

/// A point `t = (t_1, ..., t_k)` of the integer lattice, `k >= 2`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct LatticePoint {
    coords: Vec<i64>,
}

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::usage(format!(
                "lattice point needs dimension >= 2, got {}",
                coords.len()
            )));
        }
        Ok(LatticePoint { coords })
    }

    /// The diagonal point `m * (1, ..., 1)`.
    pub fn diagonal(k: usize, m: i64) -> Result<Self> {
        Self::new(vec![m; k])
    }

    pub fn coords(&self) -> &[i64] {
        &self.coords
    }

    pub fn k(&self) -> usize {
        self.coords.len()
    }

    /// Adds `c` to every coordinate.
    pub fn shifted(&self, c: i64) -> Self {
        LatticePoint {
            coords: self.coords.iter().map(|t| t + c).collect(),
        }
    }

    /// Adds one to coordinate `j`.
    pub fn plus_unit(&self, j: usize) -> Self {
        let mut coords = self.coords.clone();
        coords[j] += 1;
        LatticePoint { coords }
    }
}

impl TryFrom<Vec<i64>> for LatticePoint {
    type Error = Error;
    fn try_from(v: Vec<i64>) -> Result<Self> {
        LatticePoint::new(v)
    }
}

impl From<LatticePoint> for Vec<i64> {
    fn from(p: LatticePoint) -> Self {
        p.coords
    }
}

/// `||t||_GCD = sum t_i - k * min t_i`; zero exactly on the diagonal.
pub fn gcd_norm(t: &LatticePoint) -> u64 {
    let min = *t.coords.iter().min().expect("k >= 2");
    t.coords.iter().map(|&x| (x as i128 - min as i128) as u64).sum()
}

pub fn gcd_tuple(values: &[u64]) -> Result<u64> {
    check_positive(values)?;
    Ok(values.iter().fold(0u64, |g, &v| g.gcd(&v)))
}

/// Exact lcm; intermediate products widen instead of wrapping.
pub fn lcm_tuple(values: &[u64]) -> Result<ExactInt> {
    check_positive(values)?;
    if let Some(v) = lcm_u128(values) {
        return Ok(ExactInt::from(v));
    }
    let l = values
        .iter()
        .fold(BigInt::from(1u32), |acc, &v| acc.lcm(&BigInt::from(v)));
    Ok(ExactInt::from(l))
}

/// `gcd` over arbitrary-size positive integers.
pub fn gcd_tuple_exact(values: &[ExactInt]) -> Result<ExactInt> {
    check_positive_exact(values)?;
    let g = values
        .iter()
        .fold(BigInt::from(0u32), |g, v| g.gcd(v.as_bigint()));
    Ok(ExactInt::from(g))
}

pub fn lcm_tuple_exact(values: &[ExactInt]) -> Result<ExactInt> {
    check_positive_exact(values)?;
    let l = values
        .iter()
        .fold(BigInt::from(1u32), |l, v| l.lcm(v.as_bigint()));
    Ok(ExactInt::from(l))
}

/// Fast path: lcm in `u128`, `None` on overflow.
pub fn lcm_u128(values: &[u64]) -> Option<u128> {
    let mut l: u128 = 1;
    for &v in values {
        let v = v as u128;
        let g = l.gcd(&v);
        l = (l / g).checked_mul(v)?;
    }
    Some(l)
}

fn check_positive(values: &[u64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::usage("empty sequence"));
    }
    if values.contains(&0) {
        return Err(Error::usage("entries must be positive"));
    }
    Ok(())
}

fn check_positive_exact(values: &[ExactInt]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::usage("empty sequence"));
    }
    if values.iter().any(|v| !v.is_positive()) {
        return Err(Error::usage("entries must be positive"));
    }
    Ok(())
}

/// Deterministic trial-division primality test.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n % 2 == 0 || n % 3 == 0 {
        return false;
    }
    let mut d = 5u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 || n % (d + 2) == 0 {
            return false;
        }
        d += 6;
    }
    true
}

/// Prime factorization by trial division, ascending primes.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p.saturating_mul(p) <= n {
        if n % p == 0 {
            let mut e = 0;
            while n % p == 0 {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn mobius(n: u64) -> Result<i8> {
    if n == 0 {
        return Err(Error::usage("mobius(0) is undefined"));
    }
    let f = factorize(n);
    if f.iter().any(|&(_, e)| e > 1) {
        return Ok(0);
    }
    Ok(if f.len() % 2 == 0 { 1 } else { -1 })
}

pub fn p_adic_valuation(n: u64, p: u64) -> Result<u32> {
    if n == 0 {
        return Err(Error::usage("valuation of 0 is infinite"));
    }
    if !is_prime(p) {
        return Err(Error::usage(format!("{p} is not prime")));
    }
    Ok(valuation_unchecked(n, p))
}

#[inline]
pub(crate) fn valuation_unchecked(mut n: u64, p: u64) -> u32 {
    let mut e = 0;
    while n % p == 0 {
        n /= p;
        e += 1;
    }
    e
}

/// All divisors of `n`, ascending.
pub fn divisor_list(n: u64) -> Vec<u64> {
    if n == 0 {
        return Vec::new();
    }
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Smallest-prime-factor and Möbius tables up to `limit`, built once by a
/// linear sieve and shared read-only afterwards.
#[derive(Clone, Debug)]
pub struct NumberTables {
    limit: u64,
    spf: Vec<u32>,
    mu: Vec<i8>,
    primes: Vec<u32>,
}

impl NumberTables {
    pub fn new(limit: u64) -> Self {
        assert!(limit < u32::MAX as u64, "table limit must fit in u32");
        let n = limit as usize;
        let mut spf = vec![0u32; n + 1];
        let mut mu = vec![0i8; n + 1];
        let mut primes = Vec::new();
        if n >= 1 {
            mu[1] = 1;
        }
        for i in 2..=n {
            if spf[i] == 0 {
                spf[i] = i as u32;
                mu[i] = -1;
                primes.push(i as u32);
            }
            let si = spf[i];
            for &p in &primes {
                let ip = i * p as usize;
                if p > si || ip > n {
                    break;
                }
                spf[ip] = p;
                mu[ip] = if p == si { 0 } else { -mu[i] };
            }
        }
        NumberTables {
            limit,
            spf,
            mu,
            primes,
        }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn mobius(&self, n: u64) -> i8 {
        self.mu[n as usize]
    }

    pub fn mobius_slice(&self) -> &[i8] {
        &self.mu
    }

    pub fn primes(&self) -> &[u32] {
        &self.primes
    }

    pub fn is_prime(&self, n: u64) -> bool {
        n >= 2 && self.spf[n as usize] as u64 == n
    }

    pub fn factorize(&self, mut n: u64) -> Vec<(u64, u32)> {
        debug_assert!(n >= 1 && n <= self.limit);
        let mut out: Vec<(u64, u32)> = Vec::new();
        while n > 1 {
            let p = self.spf[n as usize] as u64;
            n /= p;
            match out.last_mut() {
                Some((q, e)) if *q == p => *e += 1,
                _ => out.push((p, 1)),
            }
        }
        out
    }

    pub fn distinct_primes(&self, mut n: u64) -> Vec<u64> {
        let mut out = Vec::new();
        while n > 1 {
            let p = self.spf[n as usize] as u64;
            while n % p == 0 {
                n /= p;
            }
            out.push(p);
        }
        out
    }

    /// Divisors of `n`, ascending.
    pub fn divisors(&self, n: u64) -> Vec<u64> {
        let mut divs = vec![1u64];
        for (p, e) in self.factorize(n) {
            let len = divs.len();
            let mut pk = 1u64;
            for _ in 0..e {
                pk *= p;
                for i in 0..len {
                    divs.push(divs[i] * pk);
                }
            }
        }
        divs.sort_unstable();
        divs
    }

    /// `(m, mu(m))` over the squarefree divisors `m` of `n`.
    pub fn squarefree_divisors(&self, n: u64) -> Vec<(u64, i8)> {
        let mut out = vec![(1u64, 1i8)];
        for p in self.distinct_primes(n) {
            let len = out.len();
            for i in 0..len {
                let (m, s) = out[i];
                out.push((m * p, -s));
            }
        }
        out
    }
}

/// All primes in `[lo, hi]` by a segmented sieve of Eratosthenes.
pub fn primes_in(lo: u64, hi: u64) -> Vec<u64> {
    if lo > hi || hi < 2 {
        return Vec::new();
    }
    let lo = lo.max(2);
    let root = isqrt(hi);
    let base: Vec<u64> = simple_sieve(root);
    const SEGMENT: u64 = 1 << 16;
    let mut out = Vec::new();
    let mut seg_lo = lo;
    let mut mark = vec![true; SEGMENT as usize];
    loop {
        let seg_hi = seg_lo.saturating_add(SEGMENT - 1).min(hi);
        let len = (seg_hi - seg_lo + 1) as usize;
        mark[..len].fill(true);
        for &p in &base {
            let p2 = p * p;
            if p2 > seg_hi {
                break;
            }
            let start = if p2 >= seg_lo {
                p2
            } else {
                seg_lo.div_ceil(p) * p
            };
            let mut m = start;
            while m <= seg_hi {
                mark[(m - seg_lo) as usize] = false;
                m += p;
            }
        }
        out.extend(
            (0..len)
                .filter(|&i| mark[i])
                .map(|i| seg_lo + i as u64),
        );
        if seg_hi == hi {
            break;
        }
        seg_lo = seg_hi + 1;
    }
    out
}

fn simple_sieve(n: u64) -> Vec<u64> {
    if n < 2 {
        return Vec::new();
    }
    let n = n as usize;
    let mut is = vec![true; n + 1];
    is[0] = false;
    is[1] = false;
    let mut i = 2;
    while i * i <= n {
        if is[i] {
            let mut j = i * i;
            while j <= n {
                is[j] = false;
                j += i;
            }
        }
        i += 1;
    }
    (0..=n).filter(|&i| is[i]).map(|i| i as u64).collect()
}

/// Floor square root.
pub fn isqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r.saturating_mul(r) > n {
        r -= 1;
    }
    while (r + 1).saturating_mul(r + 1) <= n {
        r += 1;
    }
    r
}

/// Floor of the `e`-th root of a non-negative big integer.
pub fn iroot_floor(n: &BigInt, e: u32) -> BigInt {
    use num_traits::Zero;
    if n.is_zero() || e == 1 {
        return n.clone();
    }
    n.nth_root(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gcd_examples() {
        assert_eq!(gcd_tuple(&[6, 10, 15]).unwrap(), 1);
        assert_eq!(gcd_tuple(&[7, 7, 7]).unwrap(), 7);
        assert_eq!(gcd_tuple(&[4, 6]).unwrap(), 2);
        assert!(matches!(gcd_tuple(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn lcm_examples() {
        assert_eq!(lcm_tuple(&[4, 6]).unwrap(), ExactInt::from(12));
        assert_eq!(lcm_tuple(&[9]).unwrap(), ExactInt::from(9));
        assert_eq!(lcm_tuple(&[3, 4, 5]).unwrap(), ExactInt::from(60));
        assert!(lcm_tuple(&[]).is_err());
    }

    #[test]
    fn lcm_widens_instead_of_wrapping() {
        // product of distinct large primes overflows u128
        let ps = [18446744073709551557u64, 18446744073709551533, 18446744073709551521];
        let l = lcm_tuple(&ps).unwrap();
        let expected: BigInt = ps.iter().map(|&p| BigInt::from(p)).product();
        assert_eq!(l.as_bigint(), &expected);
        assert_eq!(lcm_u128(&ps), None);
    }

    #[test]
    fn exact_variants_agree() {
        let v: Vec<ExactInt> = [12u64, 18, 30].iter().map(|&x| x.into()).collect();
        assert_eq!(gcd_tuple_exact(&v).unwrap(), ExactInt::from(6));
        assert_eq!(lcm_tuple_exact(&v).unwrap(), ExactInt::from(180));
    }

    #[test]
    fn mobius_examples() {
        assert_eq!(mobius(1).unwrap(), 1);
        assert_eq!(mobius(12).unwrap(), 0);
        assert_eq!(mobius(30).unwrap(), -1);
        assert!(mobius(0).is_err());
    }

    #[test]
    fn mobius_divisor_sum_vanishes() {
        let t = NumberTables::new(100_000);
        let mut acc = vec![0i32; 100_001];
        for d in 1..=100_000usize {
            let m = t.mobius(d as u64) as i32;
            if m != 0 {
                for n in (d..=100_000).step_by(d) {
                    acc[n] += m;
                }
            }
        }
        assert_eq!(acc[1], 1);
        assert!(acc[2..].iter().all(|&s| s == 0));
    }

    #[test]
    fn table_mobius_matches_trial_division() {
        let t = NumberTables::new(5000);
        for n in 1..=5000 {
            assert_eq!(t.mobius(n), mobius(n).unwrap(), "n = {n}");
        }
    }

    #[test]
    fn primes_in_examples() {
        assert_eq!(primes_in(10, 20), vec![11, 13, 17, 19]);
        assert_eq!(primes_in(2, 2), vec![2]);
        assert!(primes_in(24, 28).is_empty());
        assert!(primes_in(30, 20).is_empty());
    }

    #[test]
    fn primes_in_matches_trial_division() {
        let sieved = primes_in(2, 10_000);
        let trial: Vec<u64> = (2..=10_000).filter(|&n| is_prime(n)).collect();
        assert_eq!(sieved, trial);
        // crosses a segment boundary
        let window = primes_in(65_000, 200_000);
        let trial: Vec<u64> = (65_000..=200_000).filter(|&n| is_prime(n)).collect();
        assert_eq!(window, trial);
    }

    #[test]
    fn valuation_examples() {
        assert_eq!(p_adic_valuation(40, 2).unwrap(), 3);
        assert_eq!(p_adic_valuation(7, 3).unwrap(), 0);
        assert_eq!(p_adic_valuation(27, 3).unwrap(), 3);
        assert!(matches!(p_adic_valuation(12, 4), Err(Error::Usage(_))));
        assert!(p_adic_valuation(0, 2).is_err());
    }

    #[test]
    fn gcd_norm_examples() {
        let p = |v: &[i64]| LatticePoint::new(v.to_vec()).unwrap();
        assert_eq!(gcd_norm(&p(&[2, 2, 2])), 0);
        assert_eq!(gcd_norm(&p(&[0, 0, 1])), 1);
        assert_eq!(gcd_norm(&p(&[-1, 0, 0])), 2);
        assert!(LatticePoint::new(vec![1]).is_err());
    }

    #[test]
    fn divisor_examples() {
        assert_eq!(divisor_list(1), vec![1]);
        assert_eq!(divisor_list(12), vec![1, 2, 3, 4, 6, 12]);
        assert_eq!(divisor_list(7), vec![1, 7]);
        let t = NumberTables::new(1000);
        for n in 1..=1000 {
            assert_eq!(t.divisors(n), divisor_list(n));
        }
    }

    #[test]
    fn factorization_tables_agree() {
        let t = NumberTables::new(3000);
        for n in 1..=3000 {
            assert_eq!(t.factorize(n), factorize(n));
        }
    }

    proptest! {
        #[test]
        fn gcd_times_lcm_is_product(a in 1u64..1_000_000, b in 1u64..1_000_000) {
            let g = gcd_tuple(&[a, b]).unwrap();
            let l = lcm_tuple(&[a, b]).unwrap();
            prop_assert_eq!(ExactInt::from(g) * l, ExactInt::from(a as u128 * b as u128));
        }

        #[test]
        fn gcd_norm_is_translation_invariant(
            coords in prop::collection::vec(-50i64..50, 2..6),
            c in -100i64..100,
        ) {
            let t = LatticePoint::new(coords).unwrap();
            prop_assert_eq!(gcd_norm(&t), gcd_norm(&t.shifted(c)));
        }

        #[test]
        fn gcd_norm_on_concentration_set(k in 2usize..7, m in -20i64..20) {
            let center = LatticePoint::diagonal(k, m).unwrap();
            prop_assert_eq!(gcd_norm(&center), 0);
            for j in 0..k {
                prop_assert_eq!(gcd_norm(&center.plus_unit(j)), 1);
            }
        }

        #[test]
        fn gcd_norm_zero_iff_constant(coords in prop::collection::vec(-5i64..5, 2..5)) {
            let t = LatticePoint::new(coords.clone()).unwrap();
            let constant = coords.iter().all(|&c| c == coords[0]);
            prop_assert_eq!(gcd_norm(&t) == 0, constant);
        }
    }
}
