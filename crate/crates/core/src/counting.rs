//! Exact censuses of qualifying tuples.
//!
//! Brute-force enumerators are the oracles; the fast counters invert
//! "divisible by" counts on the divisor lattice with the Möbius function.

use std::ops::AddAssign;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{product_u64, ratio, ExactInt};
use crate::kernel::{self, NumberTables};
use crate::set_model::{multiplicity_table, IntegerSet, MultiplicityTable};

/// Default brute-force cap on the number of enumerated tuples.
pub const DEFAULT_BRUTE_CAP: u64 = 10_000_000;

/// Largest budget `L` the fast lcm counter accepts.
pub const LCM_FAST_CAP: u64 = 100_000_000;

/// `k` sets and a gcd threshold `D <= min X_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcdInstance {
    sets: Vec<IntegerSet>,
    threshold: u64,
}

impl GcdInstance {
    pub fn new(sets: Vec<IntegerSet>, threshold: u64) -> Result<Self> {
        if sets.len() < 2 {
            return Err(Error::parameter(format!("k must be >= 2, got {}", sets.len())));
        }
        if threshold == 0 {
            return Err(Error::parameter("threshold D must be positive"));
        }
        let min_x = sets.iter().map(IntegerSet::scale).min().unwrap();
        if threshold > min_x {
            return Err(Error::parameter(format!(
                "hypothesis D <= min(X_1, ..., X_k) violated: D = {threshold} > {min_x}"
            )));
        }
        Ok(GcdInstance { sets, threshold })
    }

    pub fn k(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[IntegerSet] {
        &self.sets
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn scales(&self) -> Vec<u64> {
        self.sets.iter().map(IntegerSet::scale).collect()
    }

    pub fn min_scale(&self) -> u64 {
        self.sets.iter().map(IntegerSet::scale).min().unwrap()
    }

    /// Same sets with a different threshold.
    pub fn with_threshold(&self, threshold: u64) -> Result<Self> {
        GcdInstance::new(self.sets.clone(), threshold)
    }
}

/// `k` sets and an lcm budget `L >= max X_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcmInstance {
    sets: Vec<IntegerSet>,
    budget: u64,
}

impl LcmInstance {
    pub fn new(sets: Vec<IntegerSet>, budget: u64) -> Result<Self> {
        if sets.len() < 2 {
            return Err(Error::parameter(format!("k must be >= 2, got {}", sets.len())));
        }
        let max_x = sets.iter().map(IntegerSet::scale).max().unwrap();
        if budget < max_x {
            return Err(Error::parameter(format!(
                "hypothesis L >= max(X_1, ..., X_k) violated: L = {budget} < {max_x}"
            )));
        }
        Ok(LcmInstance { sets, budget })
    }

    pub fn k(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[IntegerSet] {
        &self.sets
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn scales(&self) -> Vec<u64> {
        self.sets.iter().map(IntegerSet::scale).collect()
    }

    pub fn with_budget(&self, budget: u64) -> Result<Self> {
        LcmInstance::new(self.sets.clone(), budget)
    }
}

/// Exact tuple census: `total = prod |A_i|`, `qualifying = |Omega|`,
/// `delta = qualifying / total`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleCensus {
    pub total: ExactInt,
    pub qualifying: ExactInt,
    #[serde(with = "rational_serde")]
    pub delta: BigRational,
}

impl TupleCensus {
    pub fn new(qualifying: ExactInt, total: ExactInt) -> Result<Self> {
        if !total.is_positive() {
            return Err(Error::usage("census over an empty product"));
        }
        if qualifying.is_negative() || qualifying > total {
            return Err(Error::usage(format!(
                "qualifying count {qualifying} outside [0, {total}]"
            )));
        }
        let delta = ratio(&qualifying, &total);
        Ok(TupleCensus {
            total,
            qualifying,
            delta,
        })
    }

    pub fn delta_f64(&self) -> f64 {
        crate::exact::rational_to_f64(&self.delta)
    }
}

pub(crate) mod rational_serde {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::exact::fmt_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        crate::exact::parse_rational(&s).map_err(serde::de::Error::custom)
    }
}

/// `S(Delta) = sum_{Delta <= d < 2 Delta} prod_i |A_{i,d}|`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicBlock {
    pub delta_scale: u64,
    pub value: ExactInt,
}

/// `F(l) = prod_i d_{A_i}(l)` and `G(l) = #{tuples with lcm exactly l}` on
/// the support `{l <= L : F(l) > 0}`; both vanish elsewhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LcmLattice {
    budget: u64,
    support: Vec<u64>,
    f: Vec<ExactInt>,
    g: Vec<ExactInt>,
}

impl LcmLattice {
    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn f(&self, l: u64) -> ExactInt {
        self.lookup(&self.f, l)
    }

    pub fn g(&self, l: u64) -> ExactInt {
        self.lookup(&self.g, l)
    }

    pub fn f_values(&self) -> &[ExactInt] {
        &self.f
    }

    pub fn g_values(&self) -> &[ExactInt] {
        &self.g
    }

    /// `sum_{l <= L} F(l)`.
    pub fn f_sum(&self) -> ExactInt {
        self.f.iter().cloned().sum()
    }

    /// `sum_{l <= L} G(l)`, the number of tuples with lcm at most `L`.
    pub fn g_sum(&self) -> ExactInt {
        self.g.iter().cloned().sum()
    }

    fn lookup(&self, values: &[ExactInt], l: u64) -> ExactInt {
        match self.support.binary_search(&l) {
            Ok(i) => values[i].clone(),
            Err(_) => ExactInt::zero(),
        }
    }
}

/// Exact-gcd counts `M_g` for `g >= D`: the number of tuples whose gcd is
/// exactly `g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactGcdCounts {
    threshold: u64,
    counts: Vec<ExactInt>,
}

impl ExactGcdCounts {
    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    /// `M_g`; zero outside the computed range.
    pub fn get(&self, g: u64) -> ExactInt {
        if g < self.threshold {
            return ExactInt::zero();
        }
        self.counts
            .get((g - self.threshold) as usize)
            .cloned()
            .unwrap_or_default()
    }

    /// `(g, M_g)` pairs with `M_g != 0`.
    pub fn nonzero(&self) -> impl Iterator<Item = (u64, &ExactInt)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(move |(i, c)| (self.threshold + i as u64, c))
    }

    pub fn total(&self) -> ExactInt {
        self.counts.iter().cloned().sum()
    }

    pub fn all_nonnegative(&self) -> bool {
        self.counts.iter().all(|c| !c.is_negative())
    }
}

/// Worker count for the data-parallel loops. One means sequential.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Parallelism {
    pub workers: usize,
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism { workers: 1 }
    }
}

impl Parallelism {
    pub fn new(workers: usize) -> Self {
        Parallelism {
            workers: workers.max(1),
        }
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        if self.workers <= 1 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
}

fn require_nonempty(sets: &[IntegerSet]) -> Result<()> {
    if let Some(i) = sets.iter().position(IntegerSet::is_empty) {
        return Err(Error::usage(format!("set A_{} is empty; delta is undefined", i + 1)));
    }
    Ok(())
}

pub fn total_tuples(sets: &[IntegerSet]) -> ExactInt {
    product_u64(sets.iter().map(|s| s.len() as u64))
}

fn check_cap(total: &ExactInt, cap: u64) -> Result<()> {
    if *total > ExactInt::from(cap) {
        return Err(Error::CapExceeded {
            what: "brute-force enumeration",
            needed: format!("{total} tuples"),
            cap: cap.to_string(),
        });
    }
    Ok(())
}

/// Visits every tuple of `prod A_i` in lexicographic order.
pub fn for_each_tuple(sets: &[IntegerSet], mut visit: impl FnMut(&[u64])) {
    if sets.iter().any(IntegerSet::is_empty) {
        return;
    }
    let k = sets.len();
    let mut idx = vec![0usize; k];
    let mut tuple: Vec<u64> = sets.iter().map(|s| s.elements()[0]).collect();
    loop {
        visit(&tuple);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < sets[i].len() {
                tuple[i] = sets[i].elements()[idx[i]];
                break;
            }
            idx[i] = 0;
            tuple[i] = sets[i].elements()[0];
        }
    }
}

/// Visits every tuple with `gcd >= D`, pruning prefixes whose gcd already
/// fell below `D`. Order is lexicographic.
pub fn for_each_gcd_tuple(inst: &GcdInstance, mut visit: impl FnMut(&[u64])) {
    fn rec(
        sets: &[IntegerSet],
        d: u64,
        depth: usize,
        prefix_gcd: u64,
        tuple: &mut Vec<u64>,
        visit: &mut dyn FnMut(&[u64]),
    ) {
        if depth == sets.len() {
            visit(tuple);
            return;
        }
        for &a in sets[depth].elements() {
            let g = num_integer::gcd(prefix_gcd, a);
            if g < d {
                continue;
            }
            tuple.push(a);
            rec(sets, d, depth + 1, g, tuple, visit);
            tuple.pop();
        }
    }
    let mut tuple = Vec::with_capacity(inst.k());
    rec(inst.sets(), inst.threshold(), 0, 0, &mut tuple, &mut visit);
}

/// Exhaustive gcd census; refuses when `prod |A_i| > cap`.
pub fn count_gcd_bruteforce(inst: &GcdInstance, cap: u64) -> Result<TupleCensus> {
    require_nonempty(inst.sets())?;
    let total = total_tuples(inst.sets());
    check_cap(&total, cap)?;
    let d = inst.threshold();
    let mut hits = 0u64;
    for_each_tuple(inst.sets(), |t| {
        if kernel::gcd_tuple(t).unwrap() >= d {
            hits += 1;
        }
    });
    TupleCensus::new(hits.into(), total)
}

/// Exhaustive lcm census; refuses when `prod |A_i| > cap`.
pub fn count_lcm_bruteforce(inst: &LcmInstance, cap: u64) -> Result<TupleCensus> {
    require_nonempty(inst.sets())?;
    let total = total_tuples(inst.sets());
    check_cap(&total, cap)?;
    let l = inst.budget() as u128;
    let mut hits = 0u64;
    for_each_tuple(inst.sets(), |t| {
        if kernel::lcm_u128(t).is_some_and(|v| v <= l) {
            hits += 1;
        }
    });
    TupleCensus::new(hits.into(), total)
}

/// Tuples in which every size-`s` sub-tuple has gcd at least `D`.
pub fn count_swise_bruteforce(inst: &GcdInstance, s: usize, cap: u64) -> Result<TupleCensus> {
    if s < 2 || s > inst.k() {
        return Err(Error::usage(format!("need 2 <= s <= k = {}, got s = {s}", inst.k())));
    }
    require_nonempty(inst.sets())?;
    let total = total_tuples(inst.sets());
    check_cap(&total, cap)?;
    let pred = swise_predicate(inst.k(), s, inst.threshold());
    let mut hits = 0u64;
    for_each_tuple(inst.sets(), |t| {
        if pred(t) {
            hits += 1;
        }
    });
    TupleCensus::new(hits.into(), total)
}

/// `gcd(a_1, ..., a_k) >= D`.
pub fn gcd_predicate(d: u64) -> impl Fn(&[u64]) -> bool + Clone {
    move |t: &[u64]| kernel::gcd_tuple(t).map(|g| g >= d).unwrap_or(false)
}

/// Every size-`s` sub-tuple of a `k`-tuple has gcd at least `D`.
pub fn swise_predicate(k: usize, s: usize, d: u64) -> impl Fn(&[u64]) -> bool + Clone {
    let subsets = index_subsets(k, s);
    move |t: &[u64]| {
        subsets.iter().all(|idx| {
            idx.iter()
                .fold(0u64, |g, &i| num_integer::gcd(g, t[i]))
                >= d
        })
    }
}

/// All size-`s` subsets of `0..k`, lexicographic.
pub fn index_subsets(k: usize, s: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == s {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, s, &mut Vec::new(), &mut out);
    out
}

/// Census of the projection `pi_I(Omega)` inside `prod_{i in I} A_i`, where
/// `Omega` is the set of tuples satisfying `qualifies`. `indices` are
/// zero-based.
pub fn project_census(
    sets: &[IntegerSet],
    qualifies: impl Fn(&[u64]) -> bool,
    indices: &[usize],
    cap: u64,
) -> Result<TupleCensus> {
    if indices.is_empty() {
        return Err(Error::usage("index subset I must be nonempty"));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != indices.len() || *sorted.last().unwrap() >= sets.len() {
        return Err(Error::usage(format!(
            "index subset {indices:?} is not a subset of 0..{}",
            sets.len()
        )));
    }
    require_nonempty(sets)?;
    check_cap(&total_tuples(sets), cap)?;
    let mut projected: Vec<u64> = Vec::new();
    for_each_tuple(sets, |t| {
        if qualifies(t) {
            projected.extend(sorted.iter().map(|&i| t[i]));
        }
    });
    let width = sorted.len();
    let mut rows: Vec<&[u64]> = projected.chunks(width).collect();
    rows.sort_unstable();
    rows.dedup();
    let sub: Vec<IntegerSet> = sorted.iter().map(|&i| sets[i].clone()).collect();
    TupleCensus::new(ExactInt::from(rows.len()), total_tuples(&sub))
}

fn tables_for(sets: &[IntegerSet], d_max: u64) -> Result<Vec<MultiplicityTable>> {
    sets.iter().map(|s| multiplicity_table(s, d_max)).collect()
}

/// `N_d = prod_i |A_{i,d}|` for `d` in `0..=d_max` (index 0 unused).
enum DivisibleCounts {
    Small(Vec<i128>),
    Big(Vec<BigInt>),
}

fn divisible_counts(tables: &[&MultiplicityTable], d_max: u64) -> DivisibleCounts {
    let n = d_max as usize + 1;
    let mut small = vec![0i128; n];
    let mut running: i128 = 0;
    let mut fits = true;
    'outer: for d in 1..n {
        let mut v: i128 = 1;
        for t in tables {
            let c = t.get(d as u64) as i128;
            if c == 0 {
                v = 0;
                break;
            }
            match v.checked_mul(c) {
                Some(x) => v = x,
                None => {
                    fits = false;
                    break 'outer;
                }
            }
        }
        small[d] = v;
        // Partial Möbius sums are bounded by the sum of all N_d.
        match running.checked_add(v) {
            Some(x) => running = x,
            None => {
                fits = false;
                break;
            }
        }
    }
    if fits {
        return DivisibleCounts::Small(small);
    }
    let big = (0..n)
        .map(|d| {
            if d == 0 {
                return BigInt::zero();
            }
            tables
                .iter()
                .map(|t| BigInt::from(t.get(d as u64)))
                .product()
        })
        .collect();
    DivisibleCounts::Big(big)
}

fn mobius_inversion<T>(n: &[T], mu: &[i8], g_lo: u64, g_hi: u64, par: Parallelism) -> Vec<ExactInt>
where
    T: Clone + Zero + AddAssign + std::ops::Neg<Output = T> + Send + Sync + Into<ExactInt>,
    for<'a> T: AddAssign<&'a T>,
{
    let body = |g: u64| -> ExactInt {
        let mut acc = T::zero();
        let mut neg = T::zero();
        let limit = g_hi / g;
        for m in 1..=limit {
            match mu[m as usize] {
                1 => acc += &n[(g * m) as usize],
                -1 => neg += &n[(g * m) as usize],
                _ => {}
            }
        }
        acc += -neg;
        acc.into()
    };
    par.install(|| {
        if par.workers > 1 {
            (g_lo..=g_hi).into_par_iter().map(body).collect()
        } else {
            (g_lo..=g_hi).map(body).collect()
        }
    })
}

/// `M_g = sum_{m >= 1} mu(m) N_{gm}` for every `g` in `[D, 2 min X_i]`.
pub fn gcd_exact_counts(inst: &GcdInstance, par: Parallelism) -> Result<ExactGcdCounts> {
    require_nonempty(inst.sets())?;
    let d_max = 2 * inst.min_scale();
    let d = inst.threshold();
    let tables = tables_for(inst.sets(), d_max)?;
    let refs: Vec<&MultiplicityTable> = tables.iter().collect();
    let mu_table = NumberTables::new(d_max / d);
    Ok(exact_counts_from_tables(&refs, d, mu_table.mobius_slice(), par))
}

/// `M_g` for `g` in `[D, d_max]` straight from multiplicity tables, where
/// `d_max` is the smallest table range. `mu` must cover `1..=d_max / D`.
/// Tables may come from sets sharing a scale, e.g. valuation slices.
pub fn exact_counts_from_tables(
    tables: &[&MultiplicityTable],
    threshold: u64,
    mu: &[i8],
    par: Parallelism,
) -> ExactGcdCounts {
    let d_max = tables.iter().map(|t| t.d_max()).min().unwrap_or(0);
    if threshold > d_max {
        return ExactGcdCounts {
            threshold,
            counts: Vec::new(),
        };
    }
    assert!(
        mu.len() as u64 > d_max / threshold,
        "Möbius table too short for d_max / D"
    );
    let counts = match divisible_counts(tables, d_max) {
        DivisibleCounts::Small(n) => mobius_inversion(&n, mu, threshold, d_max, par),
        DivisibleCounts::Big(n) => mobius_inversion(&n, mu, threshold, d_max, par),
    };
    ExactGcdCounts { threshold, counts }
}

/// Fast gcd census: `qualifying = sum_{g >= D} M_g`.
pub fn count_gcd_fast(inst: &GcdInstance) -> Result<TupleCensus> {
    count_gcd_fast_with(inst, Parallelism::default())
}

pub fn count_gcd_fast_with(inst: &GcdInstance, par: Parallelism) -> Result<TupleCensus> {
    let exact = gcd_exact_counts(inst, par)?;
    debug_assert!(exact.all_nonnegative());
    TupleCensus::new(exact.total(), total_tuples(inst.sets()))
}

/// Dyadic blocks `S(2^j D)` for `0 <= j <= floor(log2(2 min X_i / D))`.
pub fn dyadic_blocks(inst: &GcdInstance) -> Result<Vec<DyadicBlock>> {
    dyadic_blocks_for(inst.sets(), inst.threshold())
}

/// Dyadic blocks for raw sets; empty when `D > 2 min X_i`.
pub fn dyadic_blocks_for(sets: &[IntegerSet], d: u64) -> Result<Vec<DyadicBlock>> {
    if sets.is_empty() || d == 0 {
        return Err(Error::usage("need at least one set and D >= 1"));
    }
    let d_max = 2 * sets.iter().map(IntegerSet::scale).min().unwrap();
    if d > d_max {
        return Ok(Vec::new());
    }
    let tables = tables_for(sets, d_max)?;
    let mut blocks = Vec::new();
    let mut delta = d;
    while delta <= d_max {
        let mut value = ExactInt::zero();
        for e in delta..(2 * delta).min(d_max + 1) {
            value += product_u64(tables.iter().map(|t| t.get(e)));
        }
        blocks.push(DyadicBlock {
            delta_scale: delta,
            value,
        });
        delta *= 2;
    }
    Ok(blocks)
}

/// Per-set divisor counts `d_{A_i}(l)` on the joint support, as sorted
/// `(l, F(l))` pairs with `F(l) = prod_i d_{A_i}(l) > 0`.
fn lcm_support(sets: &[IntegerSet], budget: u64) -> Vec<(u64, ExactInt)> {
    let mut joint: Option<Vec<(u64, Vec<u64>)>> = None;
    let mut dense: Vec<u32> = Vec::new();
    for set in sets {
        let work: u64 = set.elements().iter().map(|&a| budget / a).sum();
        let counts: Vec<(u64, u64)> = if work.saturating_mul(8) >= budget {
            dense.clear();
            dense.resize(budget as usize + 1, 0);
            for &a in set.elements() {
                let mut l = a;
                while l <= budget {
                    dense[l as usize] += 1;
                    l += a;
                }
            }
            match &joint {
                Some(j) => j
                    .iter()
                    .map(|(l, _)| (*l, dense[*l as usize] as u64))
                    .filter(|&(_, c)| c > 0)
                    .collect(),
                None => dense
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(l, &c)| (l as u64, c as u64))
                    .collect(),
            }
        } else {
            let mut multiples: Vec<u64> = Vec::with_capacity(work as usize);
            for &a in set.elements() {
                multiples.extend((1..=budget / a).map(|j| j * a));
            }
            multiples.sort_unstable();
            let mut runs: Vec<(u64, u64)> = Vec::new();
            for l in multiples {
                match runs.last_mut() {
                    Some((m, c)) if *m == l => *c += 1,
                    _ => runs.push((l, 1)),
                }
            }
            runs
        };
        joint = Some(match joint {
            None => counts.into_iter().map(|(l, c)| (l, vec![c])).collect(),
            Some(prev) => {
                let mut merged = Vec::with_capacity(prev.len().min(counts.len()));
                let mut it = counts.into_iter().peekable();
                for (l, mut cs) in prev {
                    while it.peek().is_some_and(|&(m, _)| m < l) {
                        it.next();
                    }
                    if let Some(&(m, c)) = it.peek() {
                        if m == l {
                            cs.push(c);
                            merged.push((l, cs));
                        }
                    }
                }
                merged
            }
        });
    }
    joint
        .unwrap_or_default()
        .into_iter()
        .map(|(l, cs)| (l, product_u64(cs)))
        .collect()
}

/// `sum_{l <= L} prod_i d_{A_i}(l)`, which counts each qualifying tuple once
/// per common multiple up to `L`.
pub fn multiplicity_weighted_sum(inst: &LcmInstance) -> Result<ExactInt> {
    require_nonempty(inst.sets())?;
    check_lcm_cap(inst.budget())?;
    Ok(lcm_support(inst.sets(), inst.budget())
        .into_iter()
        .map(|(_, f)| f)
        .sum())
}

fn check_lcm_cap(budget: u64) -> Result<()> {
    if budget > LCM_FAST_CAP {
        return Err(Error::CapExceeded {
            what: "fast lcm counter budget L",
            needed: budget.to_string(),
            cap: LCM_FAST_CAP.to_string(),
        });
    }
    Ok(())
}

/// Fast lcm census via `G = mu * F` on the divisor lattice.
pub fn count_lcm_fast(inst: &LcmInstance) -> Result<(TupleCensus, LcmLattice)> {
    count_lcm_fast_with(inst, Parallelism::default())
}

pub fn count_lcm_fast_with(
    inst: &LcmInstance,
    par: Parallelism,
) -> Result<(TupleCensus, LcmLattice)> {
    require_nonempty(inst.sets())?;
    let budget = inst.budget();
    check_lcm_cap(budget)?;
    let support_f = lcm_support(inst.sets(), budget);
    let support: Vec<u64> = support_f.iter().map(|(l, _)| *l).collect();
    let f: Vec<ExactInt> = support_f.into_iter().map(|(_, f)| f).collect();
    let g = if support.is_empty() {
        Vec::new()
    } else {
        let mu_limit = budget / support[0];
        let mu_table = NumberTables::new(mu_limit);
        let small: Option<Vec<i128>> = {
            let total = total_tuples(inst.sets());
            // |partial sums| <= tau(l) * prod |A_i| <= 2^40 * total.
            if total.to_i128().and_then(|t| t.checked_mul(1 << 40)).is_some() {
                f.iter().map(ExactInt::to_i128).collect()
            } else {
                None
            }
        };
        match small {
            Some(fs) => dirichlet_with_mobius(&support, &fs, mu_table.mobius_slice(), par),
            None => {
                let fs: Vec<BigInt> = f.iter().map(|v| v.as_bigint().clone()).collect();
                dirichlet_with_mobius(&support, &fs, mu_table.mobius_slice(), par)
            }
        }
    };
    let lattice = LcmLattice {
        budget,
        support,
        f,
        g,
    };
    let census = TupleCensus::new(lattice.g_sum(), total_tuples(inst.sets()))?;
    Ok((census, lattice))
}

/// `G(l) = sum_{d | l} mu(l/d) F(d)` restricted to the support. Every
/// multiple of a support point is again in the support.
fn dirichlet_with_mobius<T>(
    support: &[u64],
    f: &[T],
    mu: &[i8],
    par: Parallelism,
) -> Vec<ExactInt>
where
    T: Clone + Zero + AddAssign + std::ops::Neg<Output = T> + Send + Sync + Into<ExactInt>,
    for<'a> T: AddAssign<&'a T>,
{
    // Pull form: G(l) = sum over squarefree m | l with l/m in support.
    let body = |i: usize| -> ExactInt {
        let l = support[i];
        let mut pos = T::zero();
        let mut neg = T::zero();
        let mut stack: Vec<(u64, i8, usize)> = vec![(1, 1, 0)];
        let primes = small_primes_of(l, mu.len() as u64 - 1);
        while let Some((m, sign, start)) = stack.pop() {
            if let Ok(j) = support.binary_search(&(l / m)) {
                if sign > 0 {
                    pos += &f[j];
                } else {
                    neg += &f[j];
                }
            } else {
                continue;
            }
            for (pi, &p) in primes.iter().enumerate().skip(start) {
                if m * p <= l {
                    stack.push((m * p, -sign, pi + 1));
                }
            }
        }
        pos += -neg;
        pos.into()
    };
    par.install(|| {
        if par.workers > 1 {
            (0..support.len()).into_par_iter().map(body).collect()
        } else {
            (0..support.len()).map(body).collect()
        }
    })
}

/// Distinct primes `p <= bound` dividing `n`. The Möbius factor `m` in
/// `l = m d` satisfies `m <= L / min(support)`, so larger primes never matter.
fn small_primes_of(mut n: u64, bound: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p <= bound && p * p <= n {
        if n % p == 0 {
            out.push(p);
            while n % p == 0 {
                n /= p;
            }
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 && n <= bound {
        out.push(n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(x: u64, v: &[u64]) -> IntegerSet {
        IntegerSet::new(x, v.to_vec()).unwrap()
    }

    fn gcd_inst(sets: Vec<IntegerSet>, d: u64) -> GcdInstance {
        GcdInstance::new(sets, d).unwrap()
    }

    #[test]
    fn instance_hypotheses_enforced() {
        let err = GcdInstance::new(vec![set(3, &[4]), set(3, &[5])], 4).unwrap_err();
        assert!(err.to_string().contains("D <= min"));
        assert!(GcdInstance::new(vec![set(3, &[4])], 1).is_err());
        let err = LcmInstance::new(vec![set(3, &[4]), set(10, &[12])], 9).unwrap_err();
        assert!(err.to_string().contains("L >= max"));
    }

    #[test]
    fn gcd_bruteforce_examples() {
        let a = set(3, &[4, 5, 6]);
        let inst = gcd_inst(vec![a.clone(), a.clone()], 2);
        let c = count_gcd_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap();
        assert_eq!(c.qualifying, ExactInt::from(5));
        assert_eq!(c.total, ExactInt::from(9));

        let all = gcd_inst(vec![a.clone(), a.clone()], 1);
        let c = count_gcd_bruteforce(&all, DEFAULT_BRUTE_CAP).unwrap();
        assert_eq!(c.qualifying, c.total);

        let b = set(2, &[2, 3]);
        let inst = gcd_inst(vec![b.clone(), b.clone(), b], 2);
        assert_eq!(
            count_gcd_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap().qualifying,
            ExactInt::from(2)
        );
    }

    #[test]
    fn bruteforce_cap_refuses() {
        let a = IntegerSet::full_interval(100).unwrap();
        let inst = gcd_inst(vec![a.clone(), a.clone(), a], 2);
        match count_gcd_bruteforce(&inst, 1000) {
            Err(Error::CapExceeded { needed, .. }) => assert!(needed.contains("1030301")),
            other => panic!("expected cap refusal, got {other:?}"),
        }
    }

    #[test]
    fn empty_sets_rejected_by_censuses() {
        let inst = gcd_inst(vec![set(3, &[]), set(3, &[4])], 2);
        assert!(matches!(count_gcd_fast(&inst), Err(Error::Usage(_))));
        assert!(matches!(count_gcd_bruteforce(&inst, 10), Err(Error::Usage(_))));
    }

    #[test]
    fn gcd_fast_examples() {
        let a = set(3, &[4, 5, 6]);
        let inst = gcd_inst(vec![a.clone(), a], 2);
        assert_eq!(count_gcd_fast(&inst).unwrap().qualifying, ExactInt::from(5));

        let m = crate::set_model::multiples_in(50, 7).unwrap();
        let inst = gcd_inst(vec![m.clone(), m.clone(), m], 7);
        let c = count_gcd_fast(&inst).unwrap();
        assert_eq!(c.qualifying, c.total);

        let b = set(4, &[4, 6, 8]);
        let inst = gcd_inst(vec![b.clone(), b], 3);
        let exact = gcd_exact_counts(&inst, Parallelism::default()).unwrap();
        let got: Vec<i64> = [3, 4, 6, 8]
            .iter()
            .map(|&g| exact.get(g).to_i128().unwrap() as i64)
            .collect();
        assert_eq!(got, vec![0, 3, 1, 1]);
        assert_eq!(exact.total(), ExactInt::from(5));
        assert_eq!(
            count_gcd_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap().qualifying,
            ExactInt::from(5)
        );
    }

    #[test]
    fn lcm_bruteforce_examples() {
        let a = set(3, &[3, 4, 5]);
        let inst = LcmInstance::new(vec![a.clone(), a.clone()], 12).unwrap();
        assert_eq!(
            count_lcm_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap().qualifying,
            ExactInt::from(5)
        );
        let inst = LcmInstance::new(vec![a.clone(), a], 36).unwrap();
        let c = count_lcm_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap();
        assert_eq!(c.qualifying, c.total);
        let b = set(2, &[2, 3]);
        let inst = LcmInstance::new(vec![b.clone(), b], 5).unwrap();
        assert_eq!(
            count_lcm_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap().qualifying,
            ExactInt::from(2)
        );
    }

    #[test]
    fn lcm_fast_examples() {
        let b = set(2, &[2, 3]);
        let inst = LcmInstance::new(vec![b.clone(), b], 6).unwrap();
        let (census, lattice) = count_lcm_fast(&inst).unwrap();
        assert_eq!(lattice.f(6), ExactInt::from(4));
        assert_eq!(lattice.g(6), ExactInt::from(2));
        assert_eq!(lattice.g(1), ExactInt::zero());
        assert_eq!(census.qualifying, ExactInt::from(4));

        let a = set(3, &[3, 4, 5]);
        let inst = LcmInstance::new(vec![a.clone(), a], 12).unwrap();
        let (census, lattice) = count_lcm_fast(&inst).unwrap();
        assert_eq!(census.qualifying, ExactInt::from(5));
        assert!(lattice.support().iter().all(|&l| l >= 3));
    }

    #[test]
    fn weighted_sum_examples() {
        let b = set(2, &[2, 3]);
        let inst = LcmInstance::new(vec![b.clone(), b.clone()], 6).unwrap();
        assert_eq!(multiplicity_weighted_sum(&inst).unwrap(), ExactInt::from(7));
        // L below every element: nothing divides any l <= L.
        let c = set(10, &[11, 13]);
        let inst = LcmInstance::new(vec![c.clone(), c], 10).unwrap();
        assert_eq!(multiplicity_weighted_sum(&inst).unwrap(), ExactInt::zero());
    }

    #[test]
    fn lcm_cap_refuses() {
        let b = set(2, &[2, 3]);
        let inst = LcmInstance::new(vec![b.clone(), b], LCM_FAST_CAP + 1).unwrap();
        assert!(matches!(count_lcm_fast(&inst), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn dyadic_block_examples() {
        let b = set(4, &[4, 6, 8]);
        let inst = gcd_inst(vec![b.clone(), b.clone()], 2);
        let blocks = dyadic_blocks(&inst).unwrap();
        assert_eq!(blocks[0].delta_scale, 2);
        assert_eq!(blocks[0].value, ExactInt::from(10));
        // j ranges over 0..=floor(log2(2*4/2)) = 0..=2
        assert_eq!(blocks.len(), 3);
        assert!(dyadic_blocks_for(&[b.clone(), b], 9).unwrap().is_empty());
    }

    #[test]
    fn swise_examples() {
        let a = set(4, &[4, 6]);
        let inst = gcd_inst(vec![a.clone(), a.clone(), a.clone()], 2);
        assert_eq!(
            count_swise_bruteforce(&inst, 2, DEFAULT_BRUTE_CAP).unwrap().qualifying,
            ExactInt::from(8)
        );
        assert_eq!(
            count_swise_bruteforce(&inst, 3, DEFAULT_BRUTE_CAP).unwrap(),
            count_gcd_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap()
        );
        let b = set(4, &[4, 5]);
        let inst = gcd_inst(vec![b.clone(), b.clone(), b], 2);
        assert_eq!(
            count_swise_bruteforce(&inst, 2, DEFAULT_BRUTE_CAP).unwrap().qualifying,
            ExactInt::from(2)
        );
        assert!(count_swise_bruteforce(&inst, 4, DEFAULT_BRUTE_CAP).is_err());
    }

    #[test]
    fn projection_examples() {
        let a = set(4, &[4, 6]);
        let sets = vec![a.clone(), a.clone(), a];
        let pred = swise_predicate(3, 2, 2);
        let full = project_census(&sets, &pred, &[0, 1, 2], DEFAULT_BRUTE_CAP).unwrap();
        let inst = gcd_inst(sets.clone(), 2);
        assert_eq!(full, count_swise_bruteforce(&inst, 2, DEFAULT_BRUTE_CAP).unwrap());
        let proj = project_census(&sets, &pred, &[0, 1], DEFAULT_BRUTE_CAP).unwrap();
        assert_eq!(proj.qualifying, ExactInt::from(4));
        assert!(project_census(&sets, &pred, &[], 10).is_err());
        assert!(project_census(&sets, &pred, &[0, 3], 10).is_err());
    }

    #[test]
    fn pruned_enumeration_matches_census() {
        let a = IntegerSet::new(20, (20..=40).step_by(2).collect()).unwrap();
        let b = IntegerSet::new(20, (20..=40).step_by(3).collect()).unwrap();
        let inst = gcd_inst(vec![a.clone(), b, a], 4);
        let mut n = 0u64;
        for_each_gcd_tuple(&inst, |t| {
            assert!(kernel::gcd_tuple(t).unwrap() >= 4);
            n += 1;
        });
        assert_eq!(
            ExactInt::from(n),
            count_gcd_bruteforce(&inst, DEFAULT_BRUTE_CAP).unwrap().qualifying
        );
    }

    #[test]
    fn parallel_counts_match_sequential() {
        let a = IntegerSet::full_interval(300).unwrap();
        let inst = gcd_inst(vec![a.clone(), a.clone(), a], 20);
        let seq = count_gcd_fast(&inst).unwrap();
        let par = count_gcd_fast_with(&inst, Parallelism::new(4)).unwrap();
        assert_eq!(seq, par);
        let b = set(30, &[30, 36, 42, 45, 50, 60]);
        let linst = LcmInstance::new(vec![b.clone(), b.clone(), b], 5000).unwrap();
        let (c1, l1) = count_lcm_fast(&linst).unwrap();
        let (c2, l2) = count_lcm_fast_with(&linst, Parallelism::new(3)).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn huge_products_widen() {
        // (2X+1)^k with X = 10^6, k = 4 overflows i64 but not the census.
        let a = crate::set_model::multiples_in(1_000_000, 1).unwrap();
        let sets: Vec<IntegerSet> = (0..4).map(|_| a.clone()).collect();
        let total = total_tuples(&sets);
        assert_eq!(total, ExactInt::from(1_000_001u128.pow(4)));
    }
}
