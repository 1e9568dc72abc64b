//! Instance files and CSV helpers.
//!
//! An instance file is JSON:
//!
//! ```json
//! {"kind": "gcd", "k": 3, "X": [1000, 1000, 1000], "D": 10, "sets": [[...], [...], [...]]}
//! ```
//!
//! `sets` may be replaced by a `recipe` object, in which case the sets are
//! regenerated by the matching construction on load.

use std::fs;
use std::path::Path;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::constructions::{
    build_gcd_extremal, build_gcd_extremal_delta1, build_lcm_extremal, default_c_large,
    default_c_small,
};
use crate::counting::{GcdInstance, LcmInstance};
use crate::error::{Error, Result};
use crate::exact::{fmt_rational, parse_rational};
use crate::set_model::IntegerSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Gcd,
    Lcm,
}

/// Parameters for regenerating sets from a construction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSpec {
    /// Target density as a rational string such as `"1/100"`. Absent for the
    /// gcd family means `delta = 1` (multiples of `D`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_small: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_large: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub kind: InstanceKind,
    pub k: usize,
    #[serde(rename = "X")]
    pub scales: Vec<u64>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<RecipeSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instance {
    Gcd(GcdInstance),
    Lcm(LcmInstance),
}

impl Instance {
    pub fn kind(&self) -> InstanceKind {
        match self {
            Instance::Gcd(_) => InstanceKind::Gcd,
            Instance::Lcm(_) => InstanceKind::Lcm,
        }
    }

    pub fn sets(&self) -> &[IntegerSet] {
        match self {
            Instance::Gcd(i) => i.sets(),
            Instance::Lcm(i) => i.sets(),
        }
    }

    pub fn to_file(&self) -> InstanceFile {
        let sets = self.sets();
        let (threshold, budget) = match self {
            Instance::Gcd(i) => (Some(i.threshold()), None),
            Instance::Lcm(i) => (None, Some(i.budget())),
        };
        InstanceFile {
            kind: self.kind(),
            k: sets.len(),
            scales: sets.iter().map(IntegerSet::scale).collect(),
            threshold,
            budget,
            sets: Some(sets.iter().map(|s| s.elements().to_vec()).collect()),
            recipe: None,
        }
    }
}

pub fn parse_delta(s: &str) -> Result<BigRational> {
    parse_rational(s).map_err(|e| Error::parse(format!("bad delta {s:?}: {e}")))
}

impl InstanceFile {
    /// Re-validates every invariant and builds the instance.
    pub fn build(&self) -> Result<Instance> {
        if self.k < 2 {
            return Err(Error::parse(format!("k must be >= 2, got {}", self.k)));
        }
        if self.scales.len() != self.k {
            return Err(Error::parse(format!(
                "X has {} entries, expected k = {}",
                self.scales.len(),
                self.k
            )));
        }
        match (&self.sets, &self.recipe) {
            (Some(_), Some(_)) => return Err(Error::parse("give either sets or recipe, not both")),
            (None, None) => return Err(Error::parse("missing sets or recipe")),
            _ => {}
        }
        match self.kind {
            InstanceKind::Gcd => {
                if self.budget.is_some() {
                    return Err(Error::parse("gcd instance takes D, not L"));
                }
                let d = self.threshold.ok_or_else(|| Error::parse("gcd instance needs D"))?;
                let min_x = *self.scales.iter().min().unwrap();
                if d == 0 || d > min_x {
                    return Err(Error::parse(format!(
                        "hypothesis D <= min(X_1, ..., X_k) violated: D = {d}, min X = {min_x}"
                    )));
                }
                if let Some(recipe) = &self.recipe {
                    return self.build_gcd_recipe(d, recipe);
                }
                Ok(Instance::Gcd(GcdInstance::new(self.explicit_sets()?, d)?))
            }
            InstanceKind::Lcm => {
                if self.threshold.is_some() {
                    return Err(Error::parse("lcm instance takes L, not D"));
                }
                let l = self.budget.ok_or_else(|| Error::parse("lcm instance needs L"))?;
                let max_x = *self.scales.iter().max().unwrap();
                if l < max_x {
                    return Err(Error::parse(format!(
                        "hypothesis L >= max(X_1, ..., X_k) violated: L = {l} < {max_x}"
                    )));
                }
                if let Some(recipe) = &self.recipe {
                    let delta = parse_delta(
                        recipe
                            .delta
                            .as_deref()
                            .ok_or_else(|| Error::parse("lcm recipe needs delta"))?,
                    )?;
                    let (inst, _) = build_lcm_extremal(
                        &self.scales,
                        l,
                        &delta,
                        recipe.c_small.unwrap_or_else(|| default_c_small(self.k)),
                        recipe.c_large.unwrap_or_else(|| default_c_large(self.k)),
                    )?;
                    return Ok(Instance::Lcm(inst));
                }
                Ok(Instance::Lcm(LcmInstance::new(self.explicit_sets()?, l)?))
            }
        }
    }

    fn build_gcd_recipe(&self, d: u64, recipe: &RecipeSpec) -> Result<Instance> {
        if recipe.c_small.is_some() || recipe.c_large.is_some() {
            return Err(Error::parse("gcd recipe takes only delta"));
        }
        match &recipe.delta {
            None => Ok(Instance::Gcd(build_gcd_extremal_delta1(&self.scales, d)?.0)),
            Some(s) => {
                let x = self.scales[0];
                if self.scales.iter().any(|&y| y != x) {
                    return Err(Error::parse("gcd recipe with delta needs equal scales"));
                }
                Ok(Instance::Gcd(build_gcd_extremal(self.k, x, d, &parse_delta(s)?)?.0))
            }
        }
    }

    fn explicit_sets(&self) -> Result<Vec<IntegerSet>> {
        let sets = self.sets.as_ref().expect("checked by caller");
        if sets.len() != self.k {
            return Err(Error::parse(format!(
                "sets has {} entries, expected k = {}",
                sets.len(),
                self.k
            )));
        }
        sets.iter()
            .zip(&self.scales)
            .enumerate()
            .map(|(i, (els, &x))| {
                if els.is_empty() {
                    return Err(Error::parse(format!("set {} is empty", i + 1)));
                }
                IntegerSet::new(x, els.clone())
                    .map_err(|e| Error::parse(format!("set {}: {e}", i + 1)))
            })
            .collect()
    }
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let file: InstanceFile =
        serde_json::from_str(text).map_err(|e| Error::parse(format!("instance json: {e}")))?;
    file.build()
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path)?;
    parse_instance(&text).map_err(|e| match e {
        Error::Parse(m) => Error::parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_instance(inst: &Instance, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&inst.to_file()).expect("instance serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Reals in CSV and JSON tables: 17 significant digits, enough to round-trip
/// any `f64`.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn parse_real(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::parse(format!("bad real {s:?}"))),
    }
}

pub fn fmt_scales(scales: &[u64]) -> String {
    scales.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

pub fn fmt_delta(r: &BigRational) -> String {
    fmt_rational(r)
}

/// A named table of string cells, written as one CSV file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len(), "table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::parse(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(text.as_bytes());
        let columns = r
            .headers()
            .map_err(|e| Error::parse(format!("csv: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| {
                rec.map(|rec| rec.iter().map(str::to_string).collect())
                    .map_err(|e| Error::parse(format!("csv: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Table {
            name: name.to_string(),
            columns,
            rows,
        })
    }
}
