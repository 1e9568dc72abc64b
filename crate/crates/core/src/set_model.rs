//! Integer sets confined to a dyadic window `[X, 2X]`, with their divisor
//! multiplicities and p-adic valuation slices.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, valuation_unchecked};

/// A finite set of integers inside `[scale, 2 * scale]`, stored sorted and
/// deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntegerSet {
    scale: u64,
    elements: Vec<u64>,
}

impl IntegerSet {
    /// Builds a set, sorting and deduplicating `elements`. Fails on the first
    /// element outside the window.
    pub fn new(scale: u64, mut elements: Vec<u64>) -> Result<Self> {
        if scale == 0 {
            return Err(Error::usage("scale X must be positive"));
        }
        let hi = scale
            .checked_mul(2)
            .ok_or_else(|| Error::usage("scale X too large"))?;
        if let Some(&bad) = elements.iter().find(|&&a| a < scale || a > hi) {
            return Err(Error::parse(format!(
                "element {bad} outside window [{scale}, {hi}]"
            )));
        }
        elements.sort_unstable();
        elements.dedup();
        Ok(IntegerSet { scale, elements })
    }

    /// Every integer of `[X, 2X]`.
    pub fn full_interval(scale: u64) -> Result<Self> {
        Self::new(scale, (scale..=scale * 2).collect())
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, a: u64) -> bool {
        self.elements.binary_search(&a).is_ok()
    }

    pub fn upper(&self) -> u64 {
        self.scale * 2
    }

    /// Elements that are multiples of `d`.
    pub fn multiples_of(&self, d: u64) -> impl Iterator<Item = u64> + '_ {
        self.elements.iter().copied().filter(move |a| a % d == 0)
    }

    /// Line-oriented text form: `X <scale>` then one element per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("X {}\n", self.scale);
        for a in &self.elements {
            let _ = writeln!(s, "{a}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse("missing `X <value>` header"))?;
        let scale = header
            .strip_prefix('X')
            .map(str::trim)
            .and_then(|v| v.parse::<u64>().ok())
            .ok_or_else(|| Error::parse(format!("bad header {header:?}")))?;
        let mut elements = Vec::new();
        for (lineno, line) in lines {
            let a = line
                .parse::<u64>()
                .map_err(|_| Error::parse(format!("line {}: bad element {line:?}", lineno + 1)))?;
            elements.push(a);
        }
        Self::new(scale, elements)
    }
}

/// `{ n in [X, 2X] : d | n }`. Empty when `d > 2X`.
pub fn multiples_in(scale: u64, d: u64) -> Result<IntegerSet> {
    if d == 0 {
        return Err(Error::usage("d must be positive"));
    }
    let lo = scale.div_ceil(d);
    let hi = (scale * 2) / d;
    let elements = if lo > hi {
        Vec::new()
    } else {
        (lo..=hi).map(|m| m * d).collect()
    };
    IntegerSet::new(scale, elements)
}

/// `floor(2X/d) - ceil(X/d) + 1`, clamped at zero.
pub fn multiples_count(scale: u64, d: u64) -> u64 {
    let lo = scale.div_ceil(d);
    let hi = (scale * 2) / d;
    (hi + 1).saturating_sub(lo)
}

/// Counts `|A_d| = #{a in A : d | a}` for `1 <= d <= d_max`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiplicityTable {
    set_len: u64,
    counts: Vec<u64>,
}

impl MultiplicityTable {
    pub fn d_max(&self) -> u64 {
        self.counts.len() as u64 - 1
    }

    /// `|A_d|`; zero beyond `d_max`.
    pub fn get(&self, d: u64) -> u64 {
        self.counts.get(d as usize).copied().unwrap_or(0)
    }

    pub fn set_len(&self) -> u64 {
        self.set_len
    }

    /// Counts indexed by `d` (index 0 unused).
    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }
}

pub fn multiplicity_table(set: &IntegerSet, d_max: u64) -> Result<MultiplicityTable> {
    if d_max == 0 || d_max > set.upper() {
        return Err(Error::usage(format!(
            "d_max must lie in [1, 2X] = [1, {}], got {d_max}",
            set.upper()
        )));
    }
    let mut counts = vec![0u64; d_max as usize + 1];
    let by_divisors = (set.len() as f64) * ((set.upper() as f64).sqrt() + 1.0);
    let by_sieve = (set.scale() as f64 + 1.0) * ((d_max as f64).ln() + 1.0) + d_max as f64;
    if by_divisors < by_sieve {
        for &a in set.elements() {
            for d in kernel::divisor_list(a) {
                if d > d_max {
                    break;
                }
                counts[d as usize] += 1;
            }
        }
    } else {
        let lo = set.scale();
        let mut indicator = vec![false; (set.upper() - lo + 1) as usize];
        for &a in set.elements() {
            indicator[(a - lo) as usize] = true;
        }
        for d in 1..=d_max {
            let mut m = lo.div_ceil(d) * d;
            let mut c = 0u64;
            while m <= set.upper() {
                c += indicator[(m - lo) as usize] as u64;
                m += d;
            }
            counts[d as usize] = c;
        }
    }
    Ok(MultiplicityTable {
        set_len: set.len() as u64,
        counts,
    })
}

/// `A_{t} = { a in A : v_p(a) = t }` together with the parent scale.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValuationSlice {
    pub p: u64,
    pub t: u32,
    pub scale: u64,
    pub members: Vec<u64>,
}

/// Nonempty valuation slices of a set, ascending in `t`, with their exact
/// proportions `alpha_t = |A_t| / |A|`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlicePartition {
    pub p: u64,
    pub slices: Vec<ValuationSlice>,
    pub proportions: Vec<BigRational>,
}

impl SlicePartition {
    pub fn slice(&self, t: u32) -> Option<&ValuationSlice> {
        self.slices.iter().find(|s| s.t == t)
    }

    /// `alpha_t`, zero for absent valuations.
    pub fn proportion(&self, t: u32) -> BigRational {
        self.slices
            .iter()
            .position(|s| s.t == t)
            .map(|i| self.proportions[i].clone())
            .unwrap_or_else(|| BigRational::from_integer(0.into()))
    }
}

pub fn valuation_slices(set: &IntegerSet, p: u64) -> Result<SlicePartition> {
    if !kernel::is_prime(p) {
        return Err(Error::usage(format!("{p} is not prime")));
    }
    let mut by_t: std::collections::BTreeMap<u32, Vec<u64>> = Default::default();
    for &a in set.elements() {
        by_t.entry(valuation_unchecked(a, p)).or_default().push(a);
    }
    let total = BigInt::from(set.len());
    let mut slices = Vec::with_capacity(by_t.len());
    let mut proportions = Vec::with_capacity(by_t.len());
    for (t, members) in by_t {
        proportions.push(BigRational::new(BigInt::from(members.len()), total.clone()));
        slices.push(ValuationSlice {
            p,
            t,
            scale: set.scale(),
            members,
        });
    }
    Ok(SlicePartition {
        p,
        slices,
        proportions,
    })
}

/// Divides `p^t` out of every member. The result lives in `[X/p^t, 2X/p^t]`
/// and carries scale `ceil(X / p^t)`.
pub fn prime_removed(slice: &ValuationSlice) -> Result<IntegerSet> {
    let pt = slice
        .p
        .checked_pow(slice.t)
        .ok_or_else(|| Error::usage("p^t overflows"))?;
    let scale = slice.scale.div_ceil(pt).max(1);
    let members = slice
        .members
        .iter()
        .map(|&a| {
            if a % pt != 0 {
                Err(Error::usage(format!("{a} is not divisible by {pt}")))
            } else {
                Ok(a / pt)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    IntegerSet::new(scale, members)
}

/// `d_A(l) = #{a in A : a | l}`.
pub fn divisor_count_in_set(set: &IntegerSet, l: u64) -> u64 {
    if l == 0 {
        return 0;
    }
    set.elements()
        .iter()
        .take_while(|&&a| a <= l)
        .filter(|&&a| l % a == 0)
        .count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(x: u64, v: &[u64]) -> IntegerSet {
        IntegerSet::new(x, v.to_vec()).unwrap()
    }

    #[test]
    fn construction_sorts_and_validates() {
        let s = set(3, &[6, 4, 4, 5]);
        assert_eq!(s.elements(), &[4, 5, 6]);
        let err = IntegerSet::new(3, vec![4, 7]).unwrap_err();
        assert!(err.to_string().contains('7'));
        assert!(IntegerSet::new(0, vec![]).is_err());
    }

    #[test]
    fn multiples_in_examples() {
        assert_eq!(multiples_in(10, 4).unwrap().elements(), &[12, 16, 20]);
        assert_eq!(
            multiples_in(7, 1).unwrap().elements(),
            &(7..=14).collect::<Vec<_>>()[..]
        );
        assert_eq!(multiples_in(5, 5).unwrap().elements(), &[5, 10]);
        assert!(multiples_in(5, 11).unwrap().is_empty());
        for x in 1..60 {
            for d in 1..=2 * x {
                assert_eq!(multiples_in(x, d).unwrap().len() as u64, multiples_count(x, d));
            }
        }
    }

    #[test]
    fn multiplicity_table_examples() {
        let t = multiplicity_table(&set(4, &[4, 6, 8]), 4).unwrap();
        assert_eq!(&t.as_slice()[1..], &[3, 3, 1, 2]);
        let t = multiplicity_table(&set(3, &[4, 5, 6]), 2).unwrap();
        assert_eq!(&t.as_slice()[1..], &[3, 2]);
        let t = multiplicity_table(&set(7, &[13]), 14).unwrap();
        assert_eq!(t.get(13), 1);
        assert!((2..13).all(|d| t.get(d) == 0));
        assert!(multiplicity_table(&set(3, &[4]), 7).is_err());
    }

    #[test]
    fn multiplicity_table_matches_multiples_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = rng.gen_range(1..400u64);
            let n = rng.gen_range(1..30usize);
            let elems: Vec<u64> = (0..n).map(|_| rng.gen_range(x..=2 * x)).collect();
            let a = IntegerSet::new(x, elems).unwrap();
            let d_max = rng.gen_range(1..=2 * x);
            let table = multiplicity_table(&a, d_max).unwrap();
            let d = rng.gen_range(1..=d_max);
            let expected = multiples_in(x, d)
                .unwrap()
                .elements()
                .iter()
                .filter(|&&m| a.contains(m))
                .count() as u64;
            assert_eq!(table.get(d), expected);
            assert_eq!(table.get(1), a.len() as u64);
        }
    }

    #[test]
    fn valuation_slice_examples() {
        let part = valuation_slices(&set(3, &[4, 5, 6]), 2).unwrap();
        let got: Vec<(u32, Vec<u64>)> = part.slices.iter().map(|s| (s.t, s.members.clone())).collect();
        assert_eq!(got, vec![(0, vec![5]), (1, vec![6]), (2, vec![4])]);

        let odd = valuation_slices(&set(5, &[5, 7, 9]), 2).unwrap();
        assert_eq!(odd.slices.len(), 1);
        assert_eq!(odd.slices[0].t, 0);
        assert!(odd.proportions[0].is_one());

        let part = valuation_slices(&set(4, &[4, 6, 8]), 2).unwrap();
        let got: Vec<(u32, Vec<u64>)> = part.slices.iter().map(|s| (s.t, s.members.clone())).collect();
        assert_eq!(got, vec![(1, vec![6]), (2, vec![4]), (3, vec![8])]);

        assert!(valuation_slices(&set(4, &[4]), 6).is_err());
    }

    #[test]
    fn prime_removed_examples() {
        let s = ValuationSlice { p: 2, t: 2, scale: 3, members: vec![4] };
        assert_eq!(prime_removed(&s).unwrap().elements(), &[1]);
        let s = ValuationSlice { p: 2, t: 0, scale: 5, members: vec![5, 7, 9] };
        assert_eq!(prime_removed(&s).unwrap(), set(5, &[5, 7, 9]));
        let s = ValuationSlice { p: 2, t: 1, scale: 6, members: vec![6, 10] };
        assert_eq!(prime_removed(&s).unwrap().elements(), &[3, 5]);
        let s = ValuationSlice { p: 3, t: 1, scale: 6, members: vec![] };
        assert!(prime_removed(&s).unwrap().is_empty());
    }

    #[test]
    fn divisor_count_examples() {
        assert_eq!(divisor_count_in_set(&set(2, &[2, 3]), 6), 2);
        assert_eq!(divisor_count_in_set(&set(1, &[1, 2]), 1), 1);
        assert_eq!(divisor_count_in_set(&set(2, &[2, 3]), 1), 0);
        assert_eq!(divisor_count_in_set(&set(3, &[3, 4, 5]), 12), 2);
    }

    #[test]
    fn text_round_trip() {
        let s = set(10, &[12, 15, 20]);
        assert_eq!(IntegerSet::from_text(&s.to_text()).unwrap(), s);
        assert!(IntegerSet::from_text("X 10\n25\n").is_err());
        assert!(IntegerSet::from_text("12\n").is_err());
    }

    proptest! {
        #[test]
        fn slices_partition_the_set(
            x in 1u64..2000,
            raw in prop::collection::vec(0u64..2001, 1..40),
            pi in 0usize..6,
        ) {
            let p = [2u64, 3, 5, 7, 11, 13][pi];
            let elems: Vec<u64> = raw.iter().map(|r| x + r % (x + 1)).collect();
            let a = IntegerSet::new(x, elems).unwrap();
            let part = valuation_slices(&a, p).unwrap();
            let total: usize = part.slices.iter().map(|s| s.members.len()).sum();
            prop_assert_eq!(total, a.len());
            let mass: BigRational = part.proportions.iter().cloned().sum();
            prop_assert!(mass.is_one());
            for s in &part.slices {
                let removed = prime_removed(s).unwrap();
                prop_assert_eq!(removed.len(), s.members.len());
                let pt = p.pow(s.t) as f64;
                for &y in removed.elements() {
                    prop_assert!(y as f64 >= x as f64 / pt && y as f64 <= 2.0 * x as f64 / pt);
                }
            }
        }

        #[test]
        fn divisor_count_bounded_by_tau(
            x in 1u64..500,
            raw in prop::collection::vec(0u64..501, 1..30),
            l in 1u64..5000,
        ) {
            let elems: Vec<u64> = raw.iter().map(|r| x + r % (x + 1)).collect();
            let a = IntegerSet::new(x, elems).unwrap();
            let c = divisor_count_in_set(&a, l);
            prop_assert!(c <= kernel::divisor_list(l).len() as u64);
        }
    }
}
