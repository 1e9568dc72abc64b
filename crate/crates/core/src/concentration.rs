//! Dominated measures on `Z^k`, p-adic localization of qualifying tuples, and
//! the purity structure of the tuples.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{
    exact_counts_from_tables, for_each_gcd_tuple, rational_serde, GcdInstance, Parallelism,
};
use crate::error::{Error, Result};
use crate::exact::{rational_to_f64, ExactInt};
use crate::kernel::{self, gcd_norm, LatticePoint, NumberTables};
use crate::set_model::{multiplicity_table, valuation_slices, IntegerSet, MultiplicityTable};

/// Relative tolerance on the `l^{q'}` normalization of weight sequences.
pub const NORM_RTOL: f64 = 1e-12;

/// Relative slack on the pointwise domination test.
pub const DOMINATION_RTOL: f64 = 1e-12;

/// Finitely supported probability measure with exact rational weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteMeasure {
    k: usize,
    weights: BTreeMap<LatticePoint, BigRational>,
}

impl FiniteMeasure {
    /// Drops zero weights; rejects negative weights, mixed dimensions and
    /// total mass other than one.
    pub fn new(k: usize, entries: impl IntoIterator<Item = (LatticePoint, BigRational)>) -> Result<Self> {
        let mut weights: BTreeMap<LatticePoint, BigRational> = BTreeMap::new();
        for (t, w) in entries {
            if t.k() != k {
                return Err(Error::usage(format!("point {:?} is not in Z^{k}", t.coords())));
            }
            if w.is_negative() {
                return Err(Error::usage(format!("negative weight at {:?}", t.coords())));
            }
            if w.is_zero() {
                continue;
            }
            *weights.entry(t).or_insert_with(BigRational::zero) += w;
        }
        let total: BigRational = weights.values().sum();
        if !total.is_one() {
            return Err(Error::usage(format!(
                "weights sum to {} instead of 1",
                crate::exact::fmt_rational(&total)
            )));
        }
        Ok(FiniteMeasure { k, weights })
    }

    /// Normalizes nonnegative integer counts into a measure.
    pub fn from_counts(k: usize, counts: impl IntoIterator<Item = (LatticePoint, ExactInt)>) -> Result<Self> {
        let counts: Vec<(LatticePoint, ExactInt)> = counts.into_iter().collect();
        let total: ExactInt = counts.iter().map(|(_, c)| c.clone()).sum();
        if !total.is_positive() {
            return Err(Error::usage("measure from empty counts"));
        }
        let denom = total.into_bigint();
        Self::new(
            k,
            counts
                .into_iter()
                .map(|(t, c)| (t, BigRational::new(c.into_bigint(), denom.clone()))),
        )
    }

    pub fn point_mass(t: LatticePoint) -> Self {
        let k = t.k();
        let mut weights = BTreeMap::new();
        weights.insert(t, BigRational::one());
        FiniteMeasure { k, weights }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn support(&self) -> impl Iterator<Item = (&LatticePoint, &BigRational)> {
        self.weights.iter()
    }

    pub fn mass(&self, t: &LatticePoint) -> BigRational {
        self.weights.get(t).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn total(&self) -> BigRational {
        self.weights.values().sum()
    }

    /// `(min, max)` coordinate over the support.
    pub fn coordinate_hull(&self) -> (i64, i64) {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for t in self.weights.keys() {
            for &c in t.coords() {
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
        (lo, hi)
    }
}

/// JSON form: a list of `{point, num, den}` entries.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct MeasureEntry {
    point: Vec<i64>,
    num: String,
    den: String,
}

impl Serialize for FiniteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<MeasureEntry> = self
            .weights
            .iter()
            .map(|(t, w)| MeasureEntry {
                point: t.coords().to_vec(),
                num: w.numer().to_string(),
                den: w.denom().to_string(),
            })
            .collect();
        entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let entries = Vec::<MeasureEntry>::deserialize(d)?;
        let k = entries.first().map(|e| e.point.len()).unwrap_or(0);
        let parsed = entries
            .into_iter()
            .map(|e| {
                let num: BigInt = e.num.parse().map_err(D::Error::custom)?;
                let den: BigInt = e.den.parse().map_err(D::Error::custom)?;
                if den.is_zero() {
                    return Err(D::Error::custom("zero denominator"));
                }
                let t = LatticePoint::new(e.point).map_err(D::Error::custom)?;
                Ok((t, BigRational::new(num, den)))
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        FiniteMeasure::new(k, parsed).map_err(D::Error::custom)
    }
}

/// Nonnegative finitely supported sequence with unit `l^{q'}` norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSequence {
    values: BTreeMap<i64, f64>,
    q_prime: f64,
}

impl WeightSequence {
    pub fn new(values: BTreeMap<i64, f64>, q_prime: f64) -> Result<Self> {
        if values.values().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::usage("weights must be finite and nonnegative"));
        }
        let seq = WeightSequence { values, q_prime };
        let norm = seq.norm();
        if (norm - 1.0).abs() > NORM_RTOL {
            return Err(Error::usage(format!(
                "sequence has l^{q_prime} norm {norm}, expected 1"
            )));
        }
        Ok(seq)
    }

    /// Rescales raw nonnegative values to unit `l^{q'}` norm.
    pub fn normalized(raw: BTreeMap<i64, f64>, q_prime: f64) -> Result<Self> {
        let s: f64 = raw.values().map(|v| v.powf(q_prime)).sum();
        if !(s > 0.0) {
            return Err(Error::usage("cannot normalize a zero sequence"));
        }
        let n = s.powf(1.0 / q_prime);
        Self::new(raw.into_iter().map(|(i, v)| (i, v / n)).collect(), q_prime)
    }

    /// Indicator of a single index.
    pub fn indicator(t: i64, q_prime: f64) -> Self {
        WeightSequence {
            values: BTreeMap::from([(t, 1.0)]),
            q_prime,
        }
    }

    pub fn get(&self, t: i64) -> f64 {
        self.values.get(&t).copied().unwrap_or(0.0)
    }

    pub fn q_prime(&self) -> f64 {
        self.q_prime
    }

    pub fn norm(&self) -> f64 {
        self.values
            .values()
            .map(|v| v.powf(self.q_prime))
            .sum::<f64>()
            .powf(1.0 / self.q_prime)
    }

    pub fn support(&self) -> impl Iterator<Item = i64> + '_ {
        self.values.iter().filter(|(_, &v)| v > 0.0).map(|(&i, _)| i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub k: usize,
    pub epsilon: f64,
    pub q: f64,
    pub q_prime: f64,
    pub eta: f64,
    pub lambda_k: f64,
}

/// `eta(k, q) = min(k + q - 2, k(q - 1), 2q - 1, q + 1)`.
pub fn eta_of(k: usize, q: f64) -> f64 {
    let k = k as f64;
    (k + q - 2.0).min(k * (q - 1.0)).min(2.0 * q - 1.0).min(q + 1.0)
}

/// `lambda(k) = 2^(-(k-1)/(k+1))`.
pub fn lambda_k(k: usize) -> f64 {
    let k = k as f64;
    2f64.powf(-(k - 1.0) / (k + 1.0))
}

/// `q = (k + eps/(k-1)) / (k-1)` with its conjugate and `eta`.
pub fn q_of(k: usize, eps: f64) -> Result<ConcentrationParams> {
    if k < 3 {
        return Err(Error::parameter(format!("not applicable for k = {k} < 3")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::parameter(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let km1 = k as f64 - 1.0;
    let q = (k as f64 + eps / km1) / km1;
    let eta = eta_of(k, q);
    debug_assert!(q <= 2.0);
    debug_assert!((eta - k as f64 * (q - 1.0)).abs() < 1e-12);
    Ok(ConcentrationParams {
        k,
        epsilon: eps,
        q,
        q_prime: q / (q - 1.0),
        eta,
        lambda_k: lambda_k(k),
    })
}

/// `(1/k) (1 - lambda_k)^(k-1)`.
pub fn c_floor(k: usize, lambda_k: f64) -> f64 {
    (1.0 - lambda_k).powi(k as i32 - 1) / k as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub passed: bool,
    /// First support point (lexicographic) where the domination fails.
    pub first_violation: Option<LatticePoint>,
    /// Support point with the largest `mu(t) / (lambda^||t|| prod x)`.
    pub binding_point: Option<LatticePoint>,
    /// Smallest `c` for which the domination holds.
    pub min_c: f64,
}

fn dominating_weight(t: &LatticePoint, xs: &[WeightSequence], lambda: f64) -> f64 {
    let prod: f64 = t.coords().iter().zip(xs).map(|(&c, x)| x.get(c)).product();
    lambda.powi(gcd_norm(t) as i32) * prod
}

/// Checks `mu(t) <= c lambda^||t||_GCD prod_i x^(i)_{t_i}` on the support of
/// `mu`. Off the support the left side is zero, so nothing else can fail.
pub fn check_hypothesis(
    mu: &FiniteMeasure,
    xs: &[WeightSequence],
    lambda: f64,
    c: f64,
) -> Result<HypothesisCheck> {
    if xs.len() != mu.k() {
        return Err(Error::usage(format!(
            "need {} weight sequences, got {}",
            mu.k(),
            xs.len()
        )));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::usage(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    for (i, x) in xs.iter().enumerate() {
        let n = x.norm();
        if (n - 1.0).abs() > NORM_RTOL {
            return Err(Error::usage(format!("x^({}) has norm {n}, expected 1", i + 1)));
        }
    }
    let mut first_violation = None;
    let mut binding_point = None;
    let mut min_c = 0.0f64;
    for (t, w) in mu.support() {
        let m = rational_to_f64(w);
        let b = dominating_weight(t, xs, lambda);
        let need = if b > 0.0 { m / b } else { f64::INFINITY };
        if need > min_c || binding_point.is_none() {
            min_c = need.max(min_c);
            binding_point = Some(t.clone());
        }
        if first_violation.is_none() && !(m <= c * b * (1.0 + DOMINATION_RTOL)) {
            first_violation = Some(t.clone());
        }
    }
    Ok(HypothesisCheck {
        passed: first_violation.is_none(),
        first_violation,
        binding_point,
        min_c,
    })
}

/// Whether `t` lies in `S_m = {m 1} ∪ {m 1 + e_j}`.
pub fn in_s_m(t: &[i64], m: i64) -> bool {
    let mut bumped = 0;
    for &c in t {
        if c == m + 1 {
            bumped += 1;
        } else if c != m {
            return false;
        }
    }
    bumped <= 1
}

/// Mass of `mu` outside `S_m`.
pub fn outside_mass(mu: &FiniteMeasure, m: i64) -> BigRational {
    mu.support()
        .filter(|(t, _)| !in_s_m(t.coords(), m))
        .map(|(_, w)| w.clone())
        .sum()
}

/// Center `m` with the least mass outside `S_m`; ties go to the smaller `m`.
pub fn best_center(mu: &FiniteMeasure) -> (i64, BigRational) {
    let (lo, hi) = mu.coordinate_hull();
    let mut best: Option<(i64, BigRational)> = None;
    for m in (lo - 1)..=(hi + 1) {
        let out = outside_mass(mu, m);
        if best.as_ref().is_none_or(|(_, b)| out < *b) {
            best = Some((m, out));
        }
    }
    best.expect("support is nonempty")
}

/// Raw localization counts: `|Omega ∩ prod A_{i,t_i}|` per valuation vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalCounts {
    pub p: u64,
    pub omega: ExactInt,
    pub counts: BTreeMap<Vec<i64>, ExactInt>,
}

impl LocalCounts {
    pub fn measure(&self) -> Result<FiniteMeasure> {
        let k = self.counts.keys().next().map(Vec::len).unwrap_or(0);
        if !self.omega.is_positive() {
            return Err(Error::usage("no qualifying tuples to localize"));
        }
        FiniteMeasure::from_counts(
            k,
            self.counts
                .iter()
                .map(|(t, c)| (LatticePoint::new(t.clone()).unwrap(), c.clone())),
        )
    }
}

/// Localizes `Omega` at several primes in one pruned enumeration pass.
pub fn localize_enumerated(inst: &GcdInstance, primes: &[u64]) -> Result<Vec<LocalCounts>> {
    for &p in primes {
        if !kernel::is_prime(p) {
            return Err(Error::usage(format!("{p} is not prime")));
        }
    }
    let mut maps: Vec<HashMap<Vec<i64>, u64>> = vec![HashMap::new(); primes.len()];
    let mut omega = 0u64;
    let mut key = vec![0i64; inst.k()];
    for_each_gcd_tuple(inst, |t| {
        omega += 1;
        for (pi, &p) in primes.iter().enumerate() {
            for (slot, &a) in key.iter_mut().zip(t) {
                *slot = kernel::valuation_unchecked(a, p) as i64;
            }
            match maps[pi].get_mut(&key) {
                Some(c) => *c += 1,
                None => {
                    maps[pi].insert(key.clone(), 1);
                }
            }
        }
    });
    if omega == 0 {
        return Err(Error::usage("no qualifying tuples to localize"));
    }
    Ok(primes
        .iter()
        .zip(maps)
        .map(|(&p, m)| LocalCounts {
            p,
            omega: omega.into(),
            counts: m.into_iter().map(|(t, c)| (t, ExactInt::from(c))).collect(),
        })
        .collect())
}

/// Localization through the fast counter: each valuation box
/// `prod A_{i,t_i}` is counted as its own gcd instance.
pub fn localize_fast(inst: &GcdInstance, p: u64, par: Parallelism) -> Result<LocalCounts> {
    let d_max = 2 * inst.min_scale();
    let d = inst.threshold();
    let slice_tables: Vec<Vec<(i64, MultiplicityTable)>> = inst
        .sets()
        .iter()
        .map(|set| {
            let part = valuation_slices(set, p)?;
            part.slices
                .iter()
                .filter(|s| !s.members.is_empty())
                .map(|s| {
                    let sub = IntegerSet::new(set.scale(), s.members.clone())?;
                    Ok((s.t as i64, multiplicity_table(&sub, d_max)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mu_table = NumberTables::new(d_max / d);
    let mu = mu_table.mobius_slice();
    let mut boxes: Vec<Vec<usize>> = vec![Vec::new()];
    for per_set in &slice_tables {
        boxes = boxes
            .into_iter()
            .flat_map(|b| {
                (0..per_set.len()).map(move |j| {
                    let mut nb = b.clone();
                    nb.push(j);
                    nb
                })
            })
            .collect();
    }
    let count_box = |b: &Vec<usize>| -> (Vec<i64>, ExactInt) {
        let key: Vec<i64> = b.iter().zip(&slice_tables).map(|(&j, s)| s[j].0).collect();
        let refs: Vec<&MultiplicityTable> = b.iter().zip(&slice_tables).map(|(&j, s)| &s[j].1).collect();
        let c = exact_counts_from_tables(&refs, d, mu, Parallelism::default()).total();
        (key, c)
    };
    let results: Vec<(Vec<i64>, ExactInt)> = if par.workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(par.workers)
            .build()
            .map(|pool| pool.install(|| boxes.par_iter().map(count_box).collect()))
            .unwrap_or_else(|_| boxes.iter().map(count_box).collect())
    } else {
        boxes.iter().map(count_box).collect()
    };
    let counts: BTreeMap<Vec<i64>, ExactInt> = results.into_iter().filter(|(_, c)| !c.is_zero()).collect();
    let omega: ExactInt = counts.values().cloned().sum();
    if omega.is_zero() {
        return Err(Error::usage("no qualifying tuples to localize"));
    }
    Ok(LocalCounts { p, omega, counts })
}

pub fn localize_at_prime(inst: &GcdInstance, p: u64) -> Result<FiniteMeasure> {
    localize_fast(inst, p, Parallelism::default())?.measure()
}

/// `a_i / N` squarefree and pairwise coprime.
pub fn purity_check(tuple: &[u64], n: u64) -> Result<bool> {
    if n == 0 {
        return Err(Error::usage("N must be positive"));
    }
    if let Some(&a) = tuple.iter().find(|&&a| a % n != 0) {
        return Err(Error::usage(format!("N = {n} does not divide {a}")));
    }
    let reduced: Vec<u64> = tuple.iter().map(|&a| a / n).collect();
    for (i, &a) in reduced.iter().enumerate() {
        if kernel::factorize(a).iter().any(|&(_, e)| e > 1) {
            return Ok(false);
        }
        if reduced[i + 1..].iter().any(|&b| num_integer::gcd(a, b) != 1) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureProfile {
    pub n: ExactInt,
    /// Primes with a nonzero center `m_p`.
    pub centers: BTreeMap<u64, i64>,
    pub primes_scanned: usize,
    pub omega: ExactInt,
    pub pure: ExactInt,
    #[serde(with = "rational_serde")]
    pub pure_fraction: BigRational,
    /// Every pure tuple passed `purity_check` against `N` and had gcd `N`.
    pub pure_tuples_have_gcd_n: bool,
    /// `N / D_0` style correction: the diagonal part of `N` beyond a supplied
    /// base, when one is given.
    pub correction: Option<ExactInt>,
}

/// Centers every relevant prime on its best `S_m`, sets `N = prod p^(m_p)`,
/// and counts tuples whose valuation vectors sit in `S_{m_p}` at every prime.
/// Two enumeration passes over `Omega`; memory stays per-prime.
pub fn structure_scan(inst: &GcdInstance, base: Option<u64>) -> Result<StructureProfile> {
    let k = inst.k();
    let max_el = inst.sets().iter().map(IntegerSet::upper).max().unwrap_or(1);
    let tables = NumberTables::new(max_el);
    let mut relevant: Vec<u64> = inst
        .sets()
        .iter()
        .flat_map(|s| s.elements().iter())
        .flat_map(|&a| tables.distinct_primes(a))
        .collect();
    relevant.sort_unstable();
    relevant.dedup();
    let index: HashMap<u64, usize> = relevant.iter().enumerate().map(|(i, &p)| (p, i)).collect();

    // Pass 1: valuation vectors per prime, zero vectors left implicit.
    let mut per_prime: Vec<HashMap<Vec<i64>, u64>> = vec![HashMap::new(); relevant.len()];
    let mut omega = 0u64;
    let mut touched: Vec<usize> = Vec::new();
    for_each_gcd_tuple(inst, |t| {
        omega += 1;
        touched.clear();
        for &a in t {
            for p in tables.distinct_primes(a) {
                touched.push(index[&p]);
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for &pi in &touched {
            let p = relevant[pi];
            let key: Vec<i64> = t.iter().map(|&a| kernel::valuation_unchecked(a, p) as i64).collect();
            *per_prime[pi].entry(key).or_insert(0) += 1;
        }
    });
    if omega == 0 {
        return Err(Error::usage("no qualifying tuples to scan"));
    }
    let mut centers: BTreeMap<u64, i64> = BTreeMap::new();
    let zero = vec![0i64; k];
    for (pi, map) in per_prime.iter().enumerate() {
        let nonzero: u64 = map.values().sum();
        let mut entries: Vec<(LatticePoint, ExactInt)> = map
            .iter()
            .map(|(t, &c)| (LatticePoint::new(t.clone()).unwrap(), ExactInt::from(c)))
            .collect();
        if omega > nonzero {
            entries.push((LatticePoint::new(zero.clone()).unwrap(), ExactInt::from(omega - nonzero)));
        }
        let mu = FiniteMeasure::from_counts(k, entries)?;
        let (m, _) = best_center(&mu);
        if m != 0 {
            centers.insert(relevant[pi], m);
        }
    }
    let n_exact: ExactInt = centers
        .iter()
        .map(|(&p, &m)| {
            if m < 0 {
                ExactInt::zero()
            } else {
                ExactInt::from(p).pow(m as u32)
            }
        })
        .product();
    let n_small = if centers.values().any(|&m| m < 0) { None } else { n_exact.to_u64() };

    // Pass 2: purity against the centers.
    let mut pure = 0u64;
    let mut consistent = true;
    if let Some(n) = n_small {
        for_each_gcd_tuple(inst, |t| {
            let mut ok = centers
                .iter()
                .all(|(&p, &m)| {
                    let v: Vec<i64> = t.iter().map(|&a| kernel::valuation_unchecked(a, p) as i64).collect();
                    in_s_m(&v, m)
                });
            if ok {
                'outer: for &a in t {
                    for p in tables.distinct_primes(a) {
                        if centers.contains_key(&p) {
                            continue;
                        }
                        let v: Vec<i64> = t.iter().map(|&b| kernel::valuation_unchecked(b, p) as i64).collect();
                        if !in_s_m(&v, 0) {
                            ok = false;
                            break 'outer;
                        }
                    }
                }
            }
            if ok {
                pure += 1;
                let agrees = purity_check(t, n).unwrap_or(false)
                    && kernel::gcd_tuple(t).map(|g| g == n).unwrap_or(false);
                consistent &= agrees;
            }
        });
    }
    let correction = base.and_then(|b| {
        let b = ExactInt::from(b);
        let nb = n_exact.as_bigint();
        if b.is_positive() && (nb % b.as_bigint()).is_zero() {
            Some(ExactInt::from(nb / b.as_bigint()))
        } else {
            None
        }
    });
    Ok(StructureProfile {
        n: n_exact,
        centers,
        primes_scanned: relevant.len(),
        omega: omega.into(),
        pure: pure.into(),
        pure_fraction: BigRational::new(BigInt::from(pure), BigInt::from(omega)),
        pure_tuples_have_gcd_n: consistent,
        correction,
    })
}

/// One accepted trial of the dominated-measure search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaTrial {
    pub attempt: u64,
    pub lambda: f64,
    pub c: f64,
    pub q_prime: f64,
    pub support_size: usize,
    pub min_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSearchSummary {
    pub k: usize,
    pub seed: u64,
    pub attempts: u64,
    pub accepted: usize,
    pub violations: usize,
    pub c_floor: f64,
    /// Smallest `c` among accepted trials.
    pub min_c_seen: f64,
    pub trials: Vec<LemmaTrial>,
}

/// Largest admissible coordinate in sampled supports.
const SUPPORT_RADIUS: i64 = 6;

/// Dominated measure from one RNG stream, with the tightest `c` for it, or
/// `None` when that `c` exceeds one.
/// `lambda` is drawn from `(0.05 lambda_k, lambda_k]`; the measure is the
/// dominating shape perturbed pointwise by a factor in `[u, 1]` with `u`
/// uniform in `(0, 1)`.
pub fn sample_dominated_measure(
    k: usize,
    lambda_cap: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(FiniteMeasure, Vec<WeightSequence>, f64, f64)>> {
    let eps = rng.gen_range(0.05..0.95);
    let params = q_of(k, eps)?;
    let lambda = lambda_cap * rng.gen_range(0.05..=1.0);
    let xs: Vec<WeightSequence> = (0..k)
        .map(|_| {
            let len = rng.gen_range(1..=5i64);
            let start = rng.gen_range(-SUPPORT_RADIUS..=SUPPORT_RADIUS + 1 - len);
            let raw: BTreeMap<i64, f64> = (start..start + len)
                .map(|t| (t, rng.gen_range(0.05..1.0)))
                .collect();
            WeightSequence::normalized(raw, params.q_prime)
        })
        .collect::<Result<_>>()?;
    let supports: Vec<Vec<i64>> = xs.iter().map(|x| x.support().collect()).collect();
    let mut points: Vec<Vec<i64>> = vec![Vec::new()];
    for s in &supports {
        points = points
            .into_iter()
            .flat_map(|p| {
                s.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    let floor_factor = rng.gen_range(0.0..1.0);
    let bounds: Vec<(LatticePoint, f64)> = points
        .into_iter()
        .map(|p| {
            let t = LatticePoint::new(p).unwrap();
            let b = dominating_weight(&t, &xs, lambda);
            (t, b)
        })
        .collect();
    let scaled: Vec<f64> = bounds
        .iter()
        .map(|(_, b)| b * rng.gen_range(floor_factor..=1.0))
        .collect();
    let total: f64 = scaled.iter().sum();
    if !(total > 0.0) {
        return Ok(None);
    }
    const SCALE: f64 = (1u64 << 48) as f64;
    let numers: Vec<u64> = scaled.iter().map(|w| (w / total * SCALE).floor() as u64).collect();
    let denom: u64 = numers.iter().sum();
    let c = bounds
        .iter()
        .zip(&numers)
        .filter(|(_, &n)| n > 0)
        .map(|((_, b), &n)| n as f64 / denom as f64 / b)
        .fold(0.0f64, f64::max);
    if c > 1.0 {
        return Ok(None);
    }
    let entries = bounds
        .into_iter()
        .zip(numers)
        .map(|((t, _), n)| (t, BigRational::new(BigInt::from(n), BigInt::from(denom))));
    let mu = FiniteMeasure::new(k, entries)?;
    Ok(Some((mu, xs, lambda, c)))
}

/// Seeded search for dominated probability measures whose `c` falls below
/// the floor. Attempt `a` draws from stream `a` of the seed, so results do
/// not depend on the worker count.
pub fn search_lemma_counterexamples(
    k: usize,
    wanted: usize,
    seed: u64,
    max_attempts: u64,
    lambda_cap: Option<f64>,
    par: Parallelism,
) -> Result<LemmaSearchSummary> {
    let lambda_cap = lambda_cap.unwrap_or_else(|| lambda_k(k));
    if !(lambda_cap > 0.0 && lambda_cap < 1.0) {
        return Err(Error::parameter(format!("lambda_k must lie in (0, 1), got {lambda_cap}")));
    }
    let floor = c_floor(k, lambda_cap);
    let attempt = |a: u64| -> Result<Option<LemmaTrial>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(a);
        let Some((mu, xs, lambda, c)) = sample_dominated_measure(k, lambda_cap, &mut rng)? else {
            return Ok(None);
        };
        let check = check_hypothesis(&mu, &xs, lambda, c)?;
        if !check.passed {
            return Err(Error::usage(format!(
                "generator left the hypothesis class at attempt {a}"
            )));
        }
        Ok(Some(LemmaTrial {
            attempt: a,
            lambda,
            c,
            q_prime: xs[0].q_prime(),
            support_size: mu.support().count(),
            min_c: check.min_c,
        }))
    };
    let batch = 256u64.max(par.workers as u64 * 64);
    let mut trials = Vec::with_capacity(wanted);
    let mut next = 0u64;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(par.workers.max(1)).build().ok();
    while trials.len() < wanted && next < max_attempts {
        let hi = (next + batch).min(max_attempts);
        let run = || (next..hi).into_par_iter().map(attempt).collect::<Vec<_>>();
        let results: Vec<Result<Option<LemmaTrial>>> = match (&pool, par.workers > 1) {
            (Some(pool), true) => pool.install(run),
            _ => (next..hi).map(attempt).collect(),
        };
        for r in results {
            if let Some(t) = r? {
                if trials.len() < wanted {
                    trials.push(t);
                }
            }
        }
        next = hi;
    }
    let attempts = trials.last().map(|t| t.attempt + 1).unwrap_or(next);
    let violations = trials.iter().filter(|t| !(t.c >= floor)).count();
    let min_c_seen = trials.iter().map(|t| t.c).fold(f64::INFINITY, f64::min);
    Ok(LemmaSearchSummary {
        k,
        seed,
        attempts,
        accepted: trials.len(),
        violations,
        c_floor: floor,
        min_c_seen,
        trials,
    })
}

/// Marginal of `mu` on coordinate `i`.
pub fn marginal(mu: &FiniteMeasure, i: usize) -> BTreeMap<i64, BigRational> {
    let mut out: BTreeMap<i64, BigRational> = BTreeMap::new();
    for (t, w) in mu.support() {
        *out.entry(t.coords()[i]).or_insert_with(BigRational::zero) += w;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::count_gcd_fast;
    use crate::exact::parse_rational;

    fn r(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    fn pt(v: &[i64]) -> LatticePoint {
        LatticePoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn q_examples() {
        let p = q_of(3, 0.5).unwrap();
        assert!((p.q - 1.625).abs() < 1e-15);
        assert!((p.q_prime - 2.6).abs() < 1e-12);
        assert!((p.eta - 1.875).abs() < 1e-12);
        let p = q_of(3, 1e-9).unwrap();
        assert!((p.q - 1.5).abs() < 1e-8);
        assert!(q_of(2, 0.5).is_err());
        assert!((eta_of(3, 1.625) - 1.875).abs() < 1e-15);
    }

    #[test]
    fn c_floor_examples() {
        let f = c_floor(3, lambda_k(3));
        assert!((lambda_k(3) - 2f64.powf(-0.5)).abs() < 1e-15);
        assert!((f - 0.028595).abs() < 1e-6);
        assert!((c_floor(3, 1e-12) - 1.0 / 3.0).abs() < 1e-9);
        assert!(c_floor(4, 0.3) > c_floor(4, 0.4));
    }

    #[test]
    fn hypothesis_examples() {
        let m = 4;
        let mu = FiniteMeasure::point_mass(LatticePoint::diagonal(3, m).unwrap());
        let xs: Vec<_> = (0..3).map(|_| WeightSequence::indicator(m, 2.6)).collect();
        assert!(check_hypothesis(&mu, &xs, 0.3, 1.0).unwrap().passed);
        let half = check_hypothesis(&mu, &xs, 0.3, 0.5).unwrap();
        assert!(!half.passed);
        assert_eq!(half.first_violation, Some(LatticePoint::diagonal(3, m).unwrap()));

        // Uniform on {m1, m1 + e_1} with x^(1) spread over {m, m+1}.
        let mu = FiniteMeasure::new(3, [(pt(&[0, 0, 0]), r("1/2")), (pt(&[1, 0, 0]), r("1/2"))]).unwrap();
        let x1 = WeightSequence::normalized(BTreeMap::from([(0, 1.0), (1, 1.0)]), 2.0).unwrap();
        let xs = vec![x1, WeightSequence::indicator(0, 2.0), WeightSequence::indicator(0, 2.0)];
        let lambda = 0.5;
        let chk = check_hypothesis(&mu, &xs, lambda, 1.0).unwrap();
        // x^(1)_0 = x^(1)_1 = 1/sqrt 2; need c >= (1/2)/(lambda/sqrt 2) at (1,0,0).
        assert_eq!(chk.binding_point, Some(pt(&[1, 0, 0])));
        assert!((chk.min_c - 0.5 * 2f64.sqrt() / lambda).abs() < 1e-12);
        assert!(!chk.passed);
        let unnormalized = WeightSequence { values: BTreeMap::from([(0, 2.0)]), q_prime: 2.0 };
        let bad = vec![unnormalized.clone(), unnormalized.clone(), unnormalized];
        assert!(check_hypothesis(&mu, &bad, lambda, 1.0).is_err());
    }

    #[test]
    fn best_center_examples() {
        let mu = FiniteMeasure::point_mass(pt(&[5, 5, 5]));
        assert_eq!(best_center(&mu), (5, BigRational::zero()));
        let q = r("1/4");
        let mu = FiniteMeasure::new(
            3,
            [(pt(&[0, 0, 0]), q.clone()), (pt(&[1, 0, 0]), q.clone()), (pt(&[0, 1, 0]), q.clone()), (pt(&[0, 0, 1]), q)],
        )
        .unwrap();
        assert_eq!(best_center(&mu), (0, BigRational::zero()));
        let mu = FiniteMeasure::new(3, [(pt(&[0, 0, 0]), r("1/2")), (pt(&[2, 0, 0]), r("1/2"))]).unwrap();
        assert_eq!(best_center(&mu), (0, r("1/2")));
    }

    #[test]
    fn measure_json_round_trip() {
        let mu = FiniteMeasure::new(2, [(pt(&[0, 1]), r("1/3")), (pt(&[2, -1]), r("2/3"))]).unwrap();
        let s = serde_json::to_string(&mu).unwrap();
        assert_eq!(serde_json::from_str::<FiniteMeasure>(&s).unwrap(), mu);
        assert!(FiniteMeasure::new(2, [(pt(&[0, 1]), r("1/3"))]).is_err());
    }

    fn small_inst() -> GcdInstance {
        let a = IntegerSet::new(3, vec![4, 5, 6]).unwrap();
        GcdInstance::new(vec![a.clone(), a], 2).unwrap()
    }

    #[test]
    fn localize_example() {
        let mu = localize_at_prime(&small_inst(), 2).unwrap();
        let fifth = r("1/5");
        for t in [[2, 2], [2, 1], [1, 2], [1, 1], [0, 0]] {
            assert_eq!(mu.mass(&pt(&t)), fifth);
        }
        assert!(mu.total().is_one());
        let enumerated = localize_enumerated(&small_inst(), &[2]).unwrap();
        assert_eq!(enumerated[0].measure().unwrap(), mu);
    }

    #[test]
    fn localize_coprime_is_point_mass() {
        let a = IntegerSet::new(10, vec![10, 12, 14, 16, 18, 20]).unwrap();
        let inst = GcdInstance::new(vec![a.clone(), a.clone(), a], 2).unwrap();
        let mu = localize_at_prime(&inst, 11).unwrap();
        assert_eq!(mu, FiniteMeasure::point_mass(pt(&[0, 0, 0])));
    }

    #[test]
    fn localize_fast_matches_enumeration() {
        let a = IntegerSet::new(200, (200..=400).step_by(3).collect()).unwrap();
        let b = IntegerSet::new(150, (150..=300).step_by(2).collect()).unwrap();
        let inst = GcdInstance::new(vec![a.clone(), b, a], 12).unwrap();
        let primes = [2, 3, 5, 7];
        let slow = localize_enumerated(&inst, &primes).unwrap();
        for (p, s) in primes.iter().zip(&slow) {
            let f = localize_fast(&inst, *p, Parallelism::new(2)).unwrap();
            assert_eq!(&f, s);
            assert_eq!(f.omega, count_gcd_fast(&inst).unwrap().qualifying);
        }
    }

    #[test]
    fn marginal_against_slices() {
        let inst = small_inst();
        let local = localize_fast(&inst, 2, Parallelism::default()).unwrap();
        let mu = local.measure().unwrap();
        let part = valuation_slices(&inst.sets()[0], 2).unwrap();
        let total = BigRational::from_integer(crate::counting::total_tuples(inst.sets()).into_bigint());
        let omega = BigRational::from_integer(local.omega.clone().into_bigint());
        let n2 = BigRational::from_integer(BigInt::from(inst.sets()[1].len()));
        for (t1, w) in marginal(&mu, 0) {
            // mu_p mass with first coordinate t1 cannot exceed |A_{1,t1}| |A_2| / |Omega|.
            let cap = part.proportion(t1 as u32) * &total / &omega;
            assert!(w <= cap.clone());
            assert!(cap <= part.proportion(t1 as u32) * BigRational::from_integer(BigInt::from(inst.sets()[0].len())) * &n2 / &omega);
        }
    }

    #[test]
    fn purity_examples() {
        assert!(purity_check(&[4, 6, 10], 2).unwrap());
        assert!(!purity_check(&[4, 3, 5], 1).unwrap());
        assert!(purity_check(&[12, 12, 12], 12).unwrap());
        assert!(purity_check(&[4, 6], 4).is_err());
    }

    #[test]
    fn structure_of_single_diagonal() {
        let a = IntegerSet::new(20, vec![36]).unwrap();
        let inst = GcdInstance::new(vec![a.clone(), a.clone(), a], 20).unwrap();
        let prof = structure_scan(&inst, None).unwrap();
        assert_eq!(prof.n, ExactInt::from(36));
        assert!(prof.pure_fraction.is_one());
        assert!(prof.pure_tuples_have_gcd_n);
    }

    #[test]
    fn structure_pure_implies_gcd_n() {
        let a = IntegerSet::new(60, (60..=120).step_by(6).collect()).unwrap();
        let inst = GcdInstance::new(vec![a.clone(), a.clone(), a], 6).unwrap();
        let prof = structure_scan(&inst, Some(6)).unwrap();
        assert!(prof.pure_tuples_have_gcd_n);
        assert!(prof.pure <= prof.omega);
    }

    #[test]
    fn lemma_search_small() {
        let s = search_lemma_counterexamples(3, 40, 11, 200_000, None, Parallelism::default()).unwrap();
        assert_eq!(s.accepted, 40);
        assert_eq!(s.violations, 0);
        let t = search_lemma_counterexamples(3, 40, 11, 200_000, None, Parallelism::new(3)).unwrap();
        assert_eq!(s, t);
    }
}
