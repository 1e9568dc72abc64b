//! Right-hand sides of the upper bounds, evaluated in log space, and the
//! comparison against measured censuses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::counting::TupleCensus;
use crate::error::{Error, Result};
use crate::exact::ExactInt;
use crate::kernel::{self, NumberTables};
use crate::set_model::IntegerSet;

/// Relative tolerance for verdicts near the boundary.
pub const VERDICT_RTOL: f64 = 1e-9;

/// A bound value kept as its natural logarithm; desk-scale bounds routinely
/// exceed the binary64 range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rhs {
    pub ln: f64,
}

impl Rhs {
    pub fn from_ln(ln: f64) -> Self {
        Rhs { ln }
    }

    /// The value itself; `inf` when it overflows.
    pub fn value(&self) -> f64 {
        self.ln.exp()
    }

    pub fn log2(&self) -> f64 {
        self.ln / std::f64::consts::LN_2
    }

    pub fn scaled(&self, c: f64) -> Self {
        Rhs { ln: self.ln + c.ln() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub epsilon: f64,
    pub p0: u64,
    pub implied_constant: f64,
}

impl BoundParams {
    pub fn new(epsilon: f64, p0: u64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(BoundParams {
            epsilon,
            p0,
            implied_constant: 1.0,
        })
    }

    pub fn with_implied_constant(mut self, c: f64) -> Self {
        self.implied_constant = c;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    NotApplicable,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Violated => "violated",
            Verdict::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: String,
    pub params: BTreeMap<String, String>,
    pub lhs: ExactInt,
    /// `ln` of the right-hand side without the implied constant.
    pub ln_rhs: f64,
    pub implied_constant: f64,
    /// `lhs / rhs`, computed through logarithms.
    pub ratio: f64,
    pub verdict: Verdict,
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::parameter(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::parameter(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

fn check_gcd_shape(scales: &[u64], d: u64) -> Result<()> {
    if scales.len() < 2 {
        return Err(Error::parameter("need k >= 2 scales"));
    }
    let min_x = *scales.iter().min().unwrap();
    if d == 0 || d > min_x {
        return Err(Error::parameter(format!(
            "hypothesis D <= min(X_1, ..., X_k) violated: D = {d}, min X = {min_x}"
        )));
    }
    Ok(())
}

fn ln_prod(scales: &[u64]) -> f64 {
    scales.iter().map(|&x| (x as f64).ln()).sum()
}

/// `C_k = 2^(4k)`.
pub fn c_k(k: usize) -> f64 {
    2f64.powi(4 * k as i32)
}

/// Exponent of `delta` in the explicit bound: `-(k + eps/(k-1)) / (k-1)`.
pub fn main_delta_exponent(k: usize, eps: f64) -> f64 {
    let km1 = k as f64 - 1.0;
    -(k as f64 + eps / km1) / km1
}

/// `C_k^(1 + n_small) delta^(-(k + eps/(k-1))/(k-1)) prod X_i / D^k`, with
/// `C_k = 2^(4k)`. `None` for `k < 3`, where the explicit form is not stated.
pub fn rhs_thm_main_explicit(
    scales: &[u64],
    d: u64,
    delta: f64,
    eps: f64,
    n_small_primes: usize,
) -> Result<Option<Rhs>> {
    check_gcd_shape(scales, d)?;
    check_delta(delta)?;
    check_epsilon(eps)?;
    let k = scales.len();
    if k < 3 {
        return Ok(None);
    }
    let ln = (1 + n_small_primes) as f64 * (4 * k) as f64 * std::f64::consts::LN_2
        + main_delta_exponent(k, eps) * delta.ln()
        + ln_prod(scales)
        - k as f64 * (d as f64).ln();
    Ok(Some(Rhs::from_ln(ln)))
}

/// `delta^(-k/(k-1) - eps) prod X_i / D^k`. For `k = 2` this is the
/// two-dimensional shape `delta^(-2-eps) X_1 X_2 / D^2`.
pub fn rhs_thm_main_simplified(scales: &[u64], d: u64, delta: f64, eps: f64) -> Result<Rhs> {
    check_gcd_shape(scales, d)?;
    check_delta(delta)?;
    let k = scales.len() as f64;
    let ln = (-k / (k - 1.0) - eps) * delta.ln() + ln_prod(scales) - k * (d as f64).ln();
    Ok(Rhs::from_ln(ln))
}

/// `delta^(-k/(k-1)) prod X_i / D^(k - eps)`.
pub fn rhs_thm_hybrid(scales: &[u64], d: u64, delta: f64, eps: f64) -> Result<Rhs> {
    check_gcd_shape(scales, d)?;
    check_delta(delta)?;
    let k = scales.len() as f64;
    let ln = (-k / (k - 1.0)) * delta.ln() + ln_prod(scales) - (k - eps) * (d as f64).ln();
    Ok(Rhs::from_ln(ln))
}

fn check_lcm_shape(scales: &[u64], l: u64) -> Result<()> {
    if scales.len() < 2 {
        return Err(Error::parameter("need k >= 2 scales"));
    }
    let max_x = *scales.iter().max().unwrap();
    if l < max_x {
        return Err(Error::parameter(format!(
            "hypothesis L >= max(X_1, ..., X_k) violated: L = {l} < {max_x}"
        )));
    }
    Ok(())
}

/// `delta^(-k/(k-1)) L^(k/(k-1) + eps) / (prod X_i)^(1/(k-1))`.
pub fn rhs_thm_lcm(scales: &[u64], l: u64, delta: f64, eps: f64) -> Result<Rhs> {
    check_lcm_shape(scales, l)?;
    check_delta(delta)?;
    let k = scales.len() as f64;
    let e = k / (k - 1.0);
    let ln = -e * delta.ln() + (e + eps) * (l as f64).ln() - ln_prod(scales) / (k - 1.0);
    Ok(Rhs::from_ln(ln))
}

/// Two-dimensional lcm bound through the gcd reduction:
/// `delta^(-2-eps) L^2 / (X_1 X_2)`.
pub fn rhs_cor_lcm2(scales: &[u64], l: u64, delta: f64, eps: f64) -> Result<Rhs> {
    check_lcm_shape(scales, l)?;
    check_delta(delta)?;
    if scales.len() != 2 {
        return Err(Error::parameter("the two-dimensional lcm bound needs k = 2"));
    }
    let ln = (-2.0 - eps) * delta.ln() + 2.0 * (l as f64).ln() - ln_prod(scales);
    Ok(Rhs::from_ln(ln))
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrivialKind<'a> {
    /// `delta^(-1) prod X_i / D^(k-1)`.
    Gcd { scales: &'a [u64], d: u64 },
    /// `delta^(-1) L (ln L)^(2^k - 1)`.
    Lcm { k: usize, l: u64 },
}

pub fn rhs_trivial(kind: TrivialKind<'_>, delta: f64) -> Result<Rhs> {
    check_delta(delta)?;
    match kind {
        TrivialKind::Gcd { scales, d } => {
            check_gcd_shape(scales, d)?;
            let k = scales.len() as f64;
            Ok(Rhs::from_ln(
                -delta.ln() + ln_prod(scales) - (k - 1.0) * (d as f64).ln(),
            ))
        }
        TrivialKind::Lcm { k, l } => {
            if k < 2 || l < 2 {
                return Err(Error::parameter("need k >= 2 and L >= 2"));
            }
            let lnl = (l as f64).ln();
            let e = 2f64.powi(k as i32) - 1.0;
            Ok(Rhs::from_ln(-delta.ln() + lnl + e * lnl.ln()))
        }
    }
}

/// Explicit constant for the trivial gcd bound. Each `|A_{i,d}| <= 2X_i/d`
/// for `d <= 2X_i`, and `sum_{d >= D} d^(-k) <= D^(1-k) k/(k-1)`.
pub fn trivial_gcd_constant(k: usize) -> f64 {
    2f64.powi(k as i32) * k as f64 / (k as f64 - 1.0)
}

/// `delta^(-k/(s-1) - k eps/s) prod X_i / D^k`.
pub fn rhs_swise(scales: &[u64], s: usize, d: u64, delta: f64, eps: f64) -> Result<Rhs> {
    check_gcd_shape(scales, d)?;
    check_delta(delta)?;
    let k = scales.len();
    if s < 2 || s > k {
        return Err(Error::parameter(format!("need 2 <= s <= k = {k}, got s = {s}")));
    }
    let (kf, sf) = (k as f64, s as f64);
    let ln = (-kf / (sf - 1.0) - kf * eps / sf) * delta.ln() + ln_prod(scales)
        - kf * (d as f64).ln();
    Ok(Rhs::from_ln(ln))
}

/// Whether the explicit-exponent shape beats the hybrid shape. The two
/// differ by `(delta D)^(-eps)`, so this flips once, at `delta = 1/D`.
pub fn main_beats_hybrid(scales: &[u64], d: u64, delta: f64, eps: f64) -> Result<bool> {
    Ok(rhs_thm_main_simplified(scales, d, delta, eps)?.ln < rhs_thm_hybrid(scales, d, delta, eps)?.ln)
}

/// Largest element for which `small_prime_count` builds a factor table.
const SPF_TABLE_LIMIT: u64 = 100_000_000;

/// Distinct primes `p <= p0` dividing some element of some set.
pub fn small_prime_count(sets: &[IntegerSet], p0: u64) -> usize {
    let max = sets.iter().map(IntegerSet::upper).max().unwrap_or(1);
    if max > SPF_TABLE_LIMIT {
        let mut primes: Vec<u64> = sets
            .iter()
            .flat_map(|s| s.elements().iter())
            .flat_map(|&a| kernel::factorize(a).into_iter().map(|(p, _)| p))
            .filter(|&p| p <= p0)
            .collect();
        primes.sort_unstable();
        primes.dedup();
        return primes.len();
    }
    let tables = NumberTables::new(max);
    let mut seen = vec![false; max as usize + 1];
    let mut count = 0;
    for &a in sets.iter().flat_map(|s| s.elements()) {
        for p in tables.distinct_primes(a) {
            if p <= p0 && !seen[p as usize] {
                seen[p as usize] = true;
                count += 1;
            }
        }
    }
    count
}

/// Upper estimate of `sum_{n > p0} n^(-1-s)`: first term plus integral.
pub fn tail_estimate(p0: u64, s: f64) -> f64 {
    let a = p0 as f64 + 1.0;
    a.powf(-1.0 - s) + a.powf(-s) / s
}

/// Smallest `p0` whose tail estimate with exponent `1 + eps/(k+1)` is at
/// most `threshold`.
pub fn default_p0(k: usize, eps: f64, threshold: f64) -> Result<u64> {
    check_epsilon(eps)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::parameter(format!(
            "tail threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if k < 2 {
        return Err(Error::parameter("need k >= 2"));
    }
    let s = eps / (k as f64 + 1.0);
    let (mut lo, mut hi) = (1u64, 2u64);
    while tail_estimate(hi, s) > threshold {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| {
            Error::parameter(format!("no p0 below 2^64 meets tail threshold {threshold}"))
        })?;
    }
    if tail_estimate(lo, s) <= threshold {
        return Ok(lo);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tail_estimate(mid, s) <= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `sum_{p0 < p <= limit, p prime} p^(-1-s)` plus the integer tail estimate
/// beyond `limit`. An independent upper estimate of the prime tail.
pub fn prime_tail_with_remainder(p0: u64, k: usize, eps: f64, limit: u64) -> f64 {
    let s = eps / (k as f64 + 1.0);
    let head: f64 = if p0 < limit {
        kernel::primes_in(p0 + 1, limit)
            .iter()
            .map(|&p| (p as f64).powf(-1.0 - s))
            .sum()
    } else {
        0.0
    };
    head + tail_estimate(limit.max(p0), s)
}

/// `lhs = prod |A_i|` against `implied_constant * rhs`.
pub fn compare(
    bound: &str,
    census: &TupleCensus,
    rhs: Option<Rhs>,
    implied_constant: f64,
    params: BTreeMap<String, String>,
) -> BoundReport {
    let lhs = census.total.clone();
    let ln_lhs = lhs.ln();
    let (ln_rhs, ratio, verdict) = match rhs {
        None => (f64::NAN, f64::NAN, Verdict::NotApplicable),
        Some(r) => {
            let ln_cap = r.ln + implied_constant.ln();
            let verdict = if ln_lhs <= ln_cap + VERDICT_RTOL {
                Verdict::Holds
            } else {
                Verdict::Violated
            };
            (r.ln, (ln_lhs - r.ln).exp(), verdict)
        }
    };
    BoundReport {
        bound: bound.to_string(),
        params,
        lhs,
        ln_rhs,
        implied_constant,
        ratio,
        verdict,
    }
}

/// Builds a parameter map from `(name, value)` pairs.
pub fn params<I, K, V>(pairs: I) -> BTreeMap<String, String>
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: ToString,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rtol: f64) -> bool {
        ((a - b) / b).abs() <= rtol
    }

    #[test]
    fn explicit_main_examples() {
        assert_eq!(c_k(3), 4096.0);
        let r = rhs_thm_main_explicit(&[1000, 1000, 1000], 10, 1.0, 0.5, 0).unwrap().unwrap();
        assert!(close(r.value(), 4096.0 * 1e9 / 1e3, 1e-12));
        assert_eq!(main_delta_exponent(3, 0.5), -1.625);
        assert!(rhs_thm_main_explicit(&[10, 10], 2, 0.5, 0.5, 0).unwrap().is_none());
        let two = rhs_thm_main_explicit(&[1000, 1000, 1000], 10, 1.0, 0.5, 2).unwrap().unwrap();
        assert!(close(two.ln - r.ln, 2.0 * 12.0 * std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn hybrid_examples() {
        let r = rhs_thm_hybrid(&[1024, 1024, 1024], 16, 0.125, 0.0).unwrap();
        let want = 8f64.powf(1.5) * 2f64.powi(30) / 2f64.powi(12);
        assert!(close(r.value(), want, 1e-12));
        assert!(close(r.value(), 5.93e6, 1e-3));
        let r = rhs_thm_hybrid(&[50, 70], 10, 1.0, 0.3).unwrap();
        assert!(close(r.value(), 3500.0 / 10f64.powf(1.7), 1e-12));
    }

    #[test]
    fn lcm_examples() {
        let r = rhs_thm_lcm(&[100, 100], 10_000, 0.25, 0.0).unwrap();
        assert!(close(r.value(), 1.6e5, 1e-12));
        let r = rhs_thm_lcm(&[100, 300], 10_000, 1.0, 0.0).unwrap();
        assert!(close(r.value(), 1e8 / 3e4, 1e-12));
        let c = rhs_cor_lcm2(&[100, 100], 10_000, 0.25, 0.0).unwrap();
        assert!(close(c.value(), 1.6e5, 1e-12));
        let c = rhs_cor_lcm2(&[100, 100], 10_000, 0.25, 0.5).unwrap();
        assert!(c.ln > rhs_thm_lcm(&[100, 100], 10_000, 0.25, 0.0).unwrap().ln);
    }

    #[test]
    fn trivial_examples() {
        let r = rhs_trivial(TrivialKind::Gcd { scales: &[10, 20, 30], d: 5 }, 1.0).unwrap();
        assert!(close(r.value(), 6000.0 / 25.0, 1e-12));
        let r = rhs_trivial(TrivialKind::Gcd { scales: &[1000, 1000, 1000], d: 10 }, 0.5).unwrap();
        assert!(close(r.value(), 2e7, 1e-12));
        let r = rhs_trivial(TrivialKind::Lcm { k: 2, l: 1000 }, 0.5).unwrap();
        assert!(close(r.value(), 2.0 * 1000.0 * 1000f64.ln().powi(3), 1e-12));
    }

    #[test]
    fn swise_examples() {
        let x = [100u64, 200, 300, 400];
        let r = rhs_swise(&x, 2, 10, 0.5, 0.0).unwrap();
        assert!(close(r.value(), 16.0 * 2.4e9 / 1e4, 1e-12));
        let r = rhs_swise(&x, 3, 10, 1.0, 0.4).unwrap();
        assert!(close(r.value(), 2.4e9 / 1e4, 1e-12));
        let x3 = [100u64, 200, 300];
        let s = rhs_swise(&x3, 3, 10, 0.3, 0.2).unwrap();
        let m = rhs_thm_main_simplified(&x3, 10, 0.3, 0.2).unwrap();
        assert!(close(s.ln, m.ln, 1e-12));
    }

    #[test]
    fn rhs_monotone() {
        let x = [1000u64, 1000, 1000];
        let mut last = f64::INFINITY;
        for delta in [0.01, 0.1, 0.5, 1.0] {
            let v = rhs_thm_main_explicit(&x, 10, delta, 0.5, 1).unwrap().unwrap().ln;
            assert!(v <= last);
            last = v;
        }
        let a = rhs_thm_hybrid(&x, 10, 0.2, 0.5).unwrap().ln;
        let b = rhs_thm_hybrid(&x, 20, 0.2, 0.5).unwrap().ln;
        assert!(b <= a);
        let a = rhs_thm_lcm(&x, 5000, 0.2, 0.5).unwrap().ln;
        let b = rhs_thm_lcm(&x, 9000, 0.2, 0.5).unwrap().ln;
        assert!(b >= a);
    }

    #[test]
    fn crossover_flips_once() {
        let x = [10_000u64; 3];
        let d = 100u64;
        let flags: Vec<bool> = (1..200)
            .map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 200.0))
            .map(|delta| main_beats_hybrid(&x, d, delta, 0.5).unwrap())
            .collect();
        let flips = flags.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(flips, 1);
        assert!(!main_beats_hybrid(&x, d, 0.5 / d as f64, 0.5).unwrap());
        assert!(main_beats_hybrid(&x, d, 2.0 / d as f64, 0.5).unwrap());
    }

    #[test]
    fn small_primes_examples() {
        let sets = [IntegerSet::new(10, vec![12, 13]).unwrap()];
        assert_eq!(small_prime_count(&sets, 5), 2);
        let sets = [IntegerSet::new(30, vec![30]).unwrap()];
        assert_eq!(small_prime_count(&sets, 3), 2);
        let sets = [IntegerSet::new(10, vec![11, 13, 17, 19]).unwrap()];
        assert_eq!(small_prime_count(&sets, 7), 0);
    }

    #[test]
    fn p0_threshold_and_monotone() {
        let p = default_p0(3, 0.5, 0.5).unwrap();
        let s = 0.5 / 4.0;
        assert!(tail_estimate(p, s) <= 0.5);
        assert!(tail_estimate(p - 1, s) > 0.5);
        let mut last = u64::MAX;
        for eps in [0.5, 0.8, 0.9, 0.99] {
            let p = default_p0(3, eps, 0.5).unwrap();
            assert!(p <= last);
            last = p;
        }
        // s = 0.05 needs p0 near 40^20, beyond u64.
        assert!(default_p0(3, 0.2, 0.5).is_err());
        let p = default_p0(3, 0.99, 0.5).unwrap();
        assert!(p < 10_000_000);
        assert!(prime_tail_with_remainder(p, 3, 0.99, 10_000_000) <= 0.5);
    }

    #[test]
    fn compare_verdicts() {
        let census = TupleCensus::new(ExactInt::from(10), ExactInt::from(100)).unwrap();
        let rep = compare("t", &census, Some(Rhs::from_ln(100f64.ln())), 1.0, BTreeMap::new());
        assert_eq!(rep.verdict, Verdict::Holds);
        assert!(close(rep.ratio, 1.0, 1e-12));
        let rep = compare("t", &census, Some(Rhs::from_ln(50f64.ln())), 1.0, BTreeMap::new());
        assert_eq!(rep.verdict, Verdict::Violated);
        let rep = compare("t", &census, Some(Rhs::from_ln(50f64.ln())), 2.0, BTreeMap::new());
        assert_eq!(rep.verdict, Verdict::Holds);
        let rep = compare("t", &census, None, 1.0, BTreeMap::new());
        assert_eq!(rep.verdict, Verdict::NotApplicable);
    }
}
