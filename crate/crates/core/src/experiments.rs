//! Experiment orchestration behind the `gcdlab` binary.
//!
//! A run takes an [`ExperimentConfig`], produces a [`RunReport`] with
//! structured results and CSV tables, and optionally writes them to disk.
//! Everything except the `timing` block is a pure function of the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{self, compare, params, BoundReport, TrivialKind, Verdict};
use crate::concentration::{
    best_center, localize_fast, q_of, search_lemma_counterexamples, structure_scan,
};
use crate::constructions::{
    build_gcd_extremal, build_gcd_extremal_delta1, build_lcm_extremal, default_c_large,
    default_c_small, for_each_good_tuple, good_tuple_census, sample_good_tuples,
};
use crate::counting::{
    count_gcd_bruteforce, count_gcd_fast_with, count_lcm_bruteforce, count_lcm_fast_with,
    count_swise_bruteforce, Parallelism, TupleCensus,
    DEFAULT_BRUTE_CAP,
};
use crate::error::{Error, Result};
use crate::exact::{fmt_rational, rational_to_f64, ExactInt};
use crate::io::{fmt_real, fmt_scales, load_instance, parse_delta, Instance, InstanceFile, Table};
use crate::kernel::is_prime;
use crate::sieve::{sieve_sweep, summarize_sweep, SieveForm};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "GCDLAB_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Construct,
    Census,
    Verify,
    SieveSweep,
    Concentrate,
    Swise,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Construct => "construct",
            CommandKind::Census => "census",
            CommandKind::Verify => "verify",
            CommandKind::SieveSweep => "sieve-sweep",
            CommandKind::Concentrate => "concentrate",
            CommandKind::Swise => "swise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    File { path: PathBuf },
    Inline(InstanceFile),
}

impl InstanceSource {
    pub fn file(&self) -> Result<InstanceFile> {
        match self {
            InstanceSource::File { path } => Ok(load_instance(path)?.to_file()),
            InstanceSource::Inline(f) => Ok(f.clone()),
        }
    }
}

fn default_epsilon() -> f64 {
    0.5
}

fn default_tail() -> f64 {
    0.5
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Small-prime cutoff; derived from `tail_threshold` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<u64>,
    #[serde(default = "default_tail")]
    pub tail_threshold: f64,
    /// Multiplies every right-hand side that carries an unstated constant.
    #[serde(default = "default_one")]
    pub implied_constant: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_small: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_large: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_k: Option<f64>,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            epsilon: default_epsilon(),
            p0: None,
            tail_threshold: default_tail(),
            implied_constant: 1.0,
            c_small: None,
            c_large: None,
            lambda_k: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, rename = "D", skip_serializing_if = "Vec::is_empty")]
    pub d: Vec<u64>,
    #[serde(default, rename = "L", skip_serializing_if = "Vec::is_empty")]
    pub l: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<String>,
    #[serde(default, rename = "X", skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p: Vec<u64>,
    /// Sieve sweep points `X = 2^e`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exponents: Vec<u32>,
}

fn default_workers() -> usize {
    1
}

fn default_brute_cap() -> u64 {
    DEFAULT_BRUTE_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSource>,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
    /// Cross-check fast counts against enumeration.
    #[serde(default)]
    pub brute: bool,
    #[serde(default = "default_brute_cap")]
    pub brute_cap: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    /// Random trials per point (sieve sweep) or per dimension (lemma search).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Dimensions for the dominated-measure search.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lemma_k: Vec<usize>,
    /// Run the two-pass purity scan in `concentrate`.
    #[serde(default)]
    pub structure: bool,
}

impl ExperimentConfig {
    pub fn new(command: CommandKind) -> Self {
        ExperimentConfig {
            command,
            instance: None,
            constants: Constants::default(),
            sweep: SweepAxes::default(),
            seed: None,
            workers: 1,
            out: None,
            strict: false,
            brute: false,
            brute_cap: DEFAULT_BRUTE_CAP,
            s: None,
            trials: None,
            lemma_k: Vec::new(),
            structure: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(format!("config json: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn par(&self) -> Parallelism {
        Parallelism::new(self.workers.max(1))
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::usage(format!("{} needs --seed", self.command.as_str())))
    }

    fn instance_file(&self) -> Result<InstanceFile> {
        self.instance
            .as_ref()
            .ok_or_else(|| Error::usage(format!("{} needs an instance", self.command.as_str())))?
            .file()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub timestamp_unix: u64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub results: Value,
    pub tables: Vec<Table>,
    /// Plot-data tables derived from `tables`.
    pub plots: Vec<Table>,
    /// Bound verdicts that came out `violated`.
    pub violations: usize,
    /// SHA-256 of this report with `timing` and the hash itself removed.
    pub determinism_hash: String,
    pub timing: Timing,
}

impl RunReport {
    fn hash_input(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        let obj = v.as_object_mut().expect("report is an object");
        obj.remove("timing");
        obj.remove("determinism_hash");
        // Worker count never changes results, so it stays out of the hash.
        if let Some(cfg) = obj.get_mut("config").and_then(|c| c.as_object_mut()) {
            cfg.remove("workers");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn compute_hash(&self) -> String {
        hex::encode(Sha256::digest(self.hash_input().as_bytes()))
    }

    /// Report JSON without the timing block.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().unwrap().remove("timing");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().chain(&self.plots).find(|t| t.name == name)
    }
}

/// Applies `f` to every point, in parallel when asked, keeping input order.
fn ordered_map<T: Sync, R: Send>(
    points: &[T],
    par: Parallelism,
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let results: Vec<Result<R>> = if par.workers > 1 && points.len() > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(par.workers).build() {
            Ok(pool) => pool.install(|| points.par_iter().map(&f).collect()),
            Err(_) => points.iter().map(&f).collect(),
        }
    } else {
        points.iter().map(&f).collect()
    };
    results.into_iter().collect()
}

/// Least-squares slope of `y` on `x`; `None` with fewer than two distinct `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Two-column plot data (plus group key) taken from `table`, with one
/// `slope` footer row per group that has at least two points.
pub fn emit_plotdata(table: &Table, x_col: &str, y_col: &str, group_col: Option<&str>) -> Result<Table> {
    let find = |c: &str| {
        table
            .column(c)
            .ok_or_else(|| Error::usage(format!("table {} has no column {c:?}", table.name)))
    };
    let (xi, yi) = (find(x_col)?, find(y_col)?);
    let gi = group_col.map(find).transpose()?;
    let mut out = Table::new(&format!("plot_{}", table.name), &["group", x_col, y_col]);
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &table.rows {
        let g = gi.map(|i| row[i].clone()).unwrap_or_default();
        let x = crate::io::parse_real(&row[xi])?;
        let y = crate::io::parse_real(&row[yi])?;
        out.push(vec![g.clone(), row[xi].clone(), row[yi].clone()]);
        match groups.iter_mut().find(|(name, _)| *name == g) {
            Some((_, pts)) => pts.push((x, y)),
            None => groups.push((g, vec![(x, y)])),
        }
    }
    for (g, pts) in groups {
        if let Some(s) = fit_slope(&pts) {
            out.push(vec![g, "slope".to_string(), fmt_real(s)]);
        }
    }
    Ok(out)
}

/// Footer slope of `group` in a plot table.
pub fn plot_slope(plot: &Table, group: &str) -> Option<f64> {
    plot.rows
        .iter()
        .find(|r| r[0] == group && r[1] == "slope")
        .and_then(|r| crate::io::parse_real(&r[2]).ok())
}

struct Output {
    results: Value,
    tables: Vec<Table>,
    plots: Vec<Table>,
    violations: usize,
}

pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let out = match config.command {
        CommandKind::Construct => run_construct(config)?,
        CommandKind::Census => run_census(config)?,
        CommandKind::Verify => run_verify(config)?,
        CommandKind::SieveSweep => run_sieve(config)?,
        CommandKind::Concentrate => run_concentrate(config)?,
        CommandKind::Swise => run_swise(config)?,
    };
    let mut echo = config.clone();
    echo.out = None;
    let mut report = RunReport {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: echo,
        results: out.results,
        tables: out.tables,
        plots: out.plots,
        violations: out.violations,
        determinism_hash: String::new(),
        timing: Timing {
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    };
    report.determinism_hash = report.compute_hash();
    Ok(report)
}

/// Writes `report.json` and one CSV per table into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(report).expect("report serializes") + "\n")?;
    written.push(path);
    for t in report.tables.iter().chain(&report.plots) {
        let path = dir.join(format!("{}.csv", t.name));
        fs::write(&path, t.to_csv()?)?;
        written.push(path);
    }
    Ok(written)
}

fn census_row(label: &str, inst_scales: &[u64], param: u64, c: &TupleCensus, method: &str) -> Vec<String> {
    vec![
        label.to_string(),
        inst_scales.len().to_string(),
        fmt_scales(inst_scales),
        param.to_string(),
        c.qualifying.to_string(),
        c.total.to_string(),
        fmt_rational(&c.delta),
        fmt_real(c.delta_f64()),
        method.to_string(),
    ]
}

const CENSUS_COLUMNS: [&str; 9] = [
    "kind", "k", "X", "param", "qualifying", "total", "delta", "delta_f64", "method",
];

fn deltas(config: &ExperimentConfig, fallback: Option<&String>) -> Result<Vec<Option<BigRational>>> {
    if config.sweep.delta.is_empty() {
        return Ok(vec![fallback.map(|s| parse_delta(s)).transpose()?]);
    }
    config.sweep.delta.iter().map(|s| parse_delta(s).map(Some)).collect()
}

fn run_construct(config: &ExperimentConfig) -> Result<Output> {
    let file = config.instance_file()?;
    let recipe = file.recipe.clone().unwrap_or_default();
    let xs: Vec<Vec<u64>> = if config.sweep.x.is_empty() {
        vec![file.scales.clone()]
    } else {
        config.sweep.x.iter().map(|&x| vec![x; file.k]).collect()
    };
    let deltas = deltas(config, recipe.delta.as_ref())?;
    match file.kind {
        crate::io::InstanceKind::Gcd => {
            let ds = if config.sweep.d.is_empty() {
                vec![file.threshold.ok_or_else(|| Error::usage("gcd construction needs D"))?]
            } else {
                config.sweep.d.clone()
            };
            let mut points = Vec::new();
            for x in &xs {
                for delta in &deltas {
                    for &d in &ds {
                        points.push((x.clone(), delta.clone(), d));
                    }
                }
            }
            let rows = ordered_map(&points, config.par(), |(x, delta, d)| {
                let (inst, recipe) = match delta {
                    None => build_gcd_extremal_delta1(x, *d)?,
                    Some(delta) => {
                        if x.iter().any(|&y| y != x[0]) {
                            return Err(Error::usage("gcd construction needs equal scales"));
                        }
                        build_gcd_extremal(x.len(), x[0], *d, delta)?
                    }
                };
                let census = count_gcd_fast_with(&inst, Parallelism::default())?;
                let (lo, hi) = recipe.product_window();
                let total = census.total.to_rational();
                let in_window = lo <= total && total <= hi;
                let target = fmt_rational(&recipe.target_delta);
                Ok(vec![
                    format!("{};{}", fmt_scales(x), target),
                    fmt_scales(x),
                    d.to_string(),
                    target,
                    recipe.d0.to_string(),
                    inst.sets()[0].len().to_string(),
                    census.total.to_string(),
                    census.qualifying.to_string(),
                    fmt_rational(&census.delta),
                    fmt_real(census.delta_f64()),
                    in_window.to_string(),
                    fmt_real((*d as f64).log2()),
                    fmt_real(census.total.ln() / std::f64::consts::LN_2),
                ])
            })?;
            let mut table = Table::new(
                "construct_gcd",
                &[
                    "group", "X", "D", "target_delta", "D0", "set_size", "product", "qualifying",
                    "delta_hat", "delta_hat_f64", "product_in_window", "log2_D", "log2_product",
                ],
            );
            rows.into_iter().for_each(|r| table.push(r));
            let plot = emit_plotdata(&table, "log2_D", "log2_product", Some("group"))?;
            Ok(Output {
                results: json!({ "points": table.rows.len() }),
                tables: vec![table],
                plots: vec![plot],
                violations: 0,
            })
        }
        crate::io::InstanceKind::Lcm => {
            let ls = if config.sweep.l.is_empty() {
                vec![file.budget.ok_or_else(|| Error::usage("lcm construction needs L"))?]
            } else {
                config.sweep.l.clone()
            };
            let c_small = config.constants.c_small.or(recipe.c_small).unwrap_or_else(|| default_c_small(file.k));
            let c_large = config.constants.c_large.or(recipe.c_large).unwrap_or_else(|| default_c_large(file.k));
            let mut points = Vec::new();
            for x in &xs {
                for delta in &deltas {
                    let delta = delta.clone().ok_or_else(|| Error::usage("lcm construction needs delta"))?;
                    for &l in &ls {
                        points.push((x.clone(), delta.clone(), l));
                    }
                }
            }
            let seed = config.seed;
            let cap = config.brute_cap;
            let rows = ordered_map(&points, config.par(), |(x, delta, l)| {
                let (inst, recipe) = build_lcm_extremal(x, *l, delta, c_small, c_large)?;
                let good = good_tuple_census(&recipe, &inst)?;
                let budget = ExactInt::from(*l);
                let (checked, all_within) = if good.qualifying <= ExactInt::from(cap) {
                    let mut n = 0u64;
                    let mut ok = true;
                    for_each_good_tuple(&recipe, |t| {
                        n += 1;
                        ok &= crate::kernel::lcm_tuple(t).map(|v| v <= budget).unwrap_or(false);
                    })?;
                    (n, ok)
                } else {
                    let seed = seed.ok_or_else(|| {
                        Error::usage("too many good tuples to check exhaustively; give --seed to sample")
                    })?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let sample = sample_good_tuples(&recipe, 1000, &mut rng);
                    let ok = sample
                        .iter()
                        .all(|t| crate::kernel::lcm_tuple(t).map(|v| v <= budget).unwrap_or(false));
                    (sample.len() as u64, ok)
                };
                let target = fmt_rational(&recipe.target_delta);
                let density_ok = good.delta >= recipe.target_delta;
                Ok(vec![
                    format!("{};{}", fmt_scales(x), target),
                    fmt_scales(x),
                    l.to_string(),
                    target,
                    recipe.m.to_string(),
                    recipe.q.to_string(),
                    recipe.primes.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
                    good.total.to_string(),
                    good.qualifying.to_string(),
                    fmt_rational(&good.delta),
                    fmt_real(good.delta_f64()),
                    density_ok.to_string(),
                    checked.to_string(),
                    all_within.to_string(),
                    recipe.lcm_chain_holds().to_string(),
                    fmt_real(recipe.log_margin),
                    fmt_real((*l as f64).log2()),
                    fmt_real(good.total.ln() / std::f64::consts::LN_2),
                ])
            })?;
            let mut table = Table::new(
                "construct_lcm",
                &[
                    "group", "X", "L", "target_delta", "M", "Q", "primes", "product", "good",
                    "good_density", "good_density_f64", "density_at_least_target",
                    "tuples_checked", "all_lcm_within_L", "chain_holds", "log_margin", "log2_L",
                    "log2_product",
                ],
            );
            rows.into_iter().for_each(|r| table.push(r));
            let plot = emit_plotdata(&table, "log2_L", "log2_product", Some("group"))?;
            Ok(Output {
                results: json!({ "points": table.rows.len(), "c_small": fmt_real(c_small), "c_large": fmt_real(c_large) }),
                tables: vec![table],
                plots: vec![plot],
                violations: 0,
            })
        }
    }
}

/// The instance of the config with every `D` (or `L`) of the sweep applied.
fn swept_instances(config: &ExperimentConfig) -> Result<Vec<Instance>> {
    let base = config.instance_file()?.build()?;
    Ok(match &base {
        Instance::Gcd(g) if !config.sweep.d.is_empty() => config
            .sweep
            .d
            .iter()
            .map(|&d| g.with_threshold(d).map(Instance::Gcd))
            .collect::<Result<_>>()?,
        Instance::Lcm(l) if !config.sweep.l.is_empty() => config
            .sweep
            .l
            .iter()
            .map(|&b| l.with_budget(b).map(Instance::Lcm))
            .collect::<Result<_>>()?,
        _ => vec![base],
    })
}

fn census_of(inst: &Instance, par: Parallelism) -> Result<TupleCensus> {
    match inst {
        Instance::Gcd(g) => count_gcd_fast_with(g, par),
        Instance::Lcm(l) => Ok(count_lcm_fast_with(l, par)?.0),
    }
}

fn inst_param(inst: &Instance) -> (String, Vec<u64>, u64) {
    match inst {
        Instance::Gcd(g) => ("gcd".into(), g.scales(), g.threshold()),
        Instance::Lcm(l) => ("lcm".into(), l.scales(), l.budget()),
    }
}

fn run_census(config: &ExperimentConfig) -> Result<Output> {
    let insts = swept_instances(config)?;
    let inner = if insts.len() > 1 { Parallelism::default() } else { config.par() };
    let rows = ordered_map(&insts, config.par(), |inst| {
        let fast = census_of(inst, inner)?;
        let (kind, scales, param) = inst_param(inst);
        let mut rows = vec![census_row(&kind, &scales, param, &fast, "fast")];
        if config.brute {
            let slow = match inst {
                Instance::Gcd(g) => count_gcd_bruteforce(g, config.brute_cap)?,
                Instance::Lcm(l) => count_lcm_bruteforce(l, config.brute_cap)?,
            };
            if slow != fast {
                return Err(Error::Construction(format!(
                    "fast and brute-force counts disagree: {} vs {}",
                    fast.qualifying, slow.qualifying
                )));
            }
            rows.push(census_row(&kind, &scales, param, &slow, "bruteforce"));
        }
        Ok(rows)
    })?;
    let mut table = Table::new("census", &CENSUS_COLUMNS);
    rows.into_iter().flatten().for_each(|r| table.push(r));
    Ok(Output {
        results: json!({ "instances": insts.len() }),
        tables: vec![table],
        plots: Vec::new(),
        violations: 0,
    })
}

fn bound_row(r: &BoundReport) -> Vec<String> {
    vec![
        r.bound.clone(),
        serde_json::to_string(&r.params).expect("params serialize"),
        r.lhs.to_string(),
        fmt_real(r.ln_rhs),
        fmt_real(r.implied_constant),
        fmt_real(r.ratio),
        r.verdict.as_str().to_string(),
    ]
}

/// Every applicable bound for one instance, evaluated at the measured density.
pub fn bound_reports(inst: &Instance, census: &TupleCensus, c: &Constants) -> Result<Vec<BoundReport>> {
    let eps = c.epsilon;
    let delta = rational_to_f64(&census.delta);
    let ic = c.implied_constant;
    let mut out = Vec::new();
    if census.qualifying.is_zero() {
        return Ok(out);
    }
    match inst {
        Instance::Gcd(g) => {
            let scales = g.scales();
            let d = g.threshold();
            let k = g.k();
            let base = params([("D", d.to_string()), ("delta", fmt_rational(&census.delta))]);
            out.push(compare(
                "trivial_gcd",
                census,
                Some(bounds::rhs_trivial(TrivialKind::Gcd { scales: &scales, d }, delta)?),
                bounds::trivial_gcd_constant(k),
                base.clone(),
            ));
            if k >= 3 {
                let p0 = match c.p0 {
                    Some(p) => p,
                    None => bounds::default_p0(k, eps, c.tail_threshold)?,
                };
                let n_small = bounds::small_prime_count(g.sets(), p0);
                let mut p = base.clone();
                p.insert("epsilon".into(), eps.to_string());
                p.insert("p0".into(), p0.to_string());
                p.insert("n_small".into(), n_small.to_string());
                out.push(compare(
                    "thm_main_explicit",
                    census,
                    bounds::rhs_thm_main_explicit(&scales, d, delta, eps, n_small)?,
                    1.0,
                    p,
                ));
            }
            let mut p = base;
            p.insert("epsilon".into(), eps.to_string());
            out.push(compare(
                "thm_main_simplified",
                census,
                Some(bounds::rhs_thm_main_simplified(&scales, d, delta, eps)?),
                ic,
                p.clone(),
            ));
            out.push(compare(
                "thm_hybrid",
                census,
                Some(bounds::rhs_thm_hybrid(&scales, d, delta, eps)?),
                ic,
                p,
            ));
        }
        Instance::Lcm(l) => {
            let scales = l.scales();
            let b = l.budget();
            let k = l.k();
            let p = params([
                ("L", b.to_string()),
                ("delta", fmt_rational(&census.delta)),
                ("epsilon", eps.to_string()),
            ]);
            out.push(compare(
                "trivial_lcm",
                census,
                Some(bounds::rhs_trivial(TrivialKind::Lcm { k, l: b }, delta)?),
                ic,
                p.clone(),
            ));
            out.push(compare(
                "thm_lcm",
                census,
                Some(bounds::rhs_thm_lcm(&scales, b, delta, eps)?),
                ic,
                p.clone(),
            ));
            if k == 2 {
                out.push(compare(
                    "cor_lcm2",
                    census,
                    Some(bounds::rhs_cor_lcm2(&scales, b, delta, eps)?),
                    ic,
                    p,
                ));
            }
        }
    }
    Ok(out)
}

const BOUND_COLUMNS: [&str; 7] = ["bound", "params", "lhs", "ln_rhs", "implied_constant", "ratio", "verdict"];

fn run_verify(config: &ExperimentConfig) -> Result<Output> {
    let insts = swept_instances(config)?;
    let reports = ordered_map(&insts, config.par(), |inst| {
        let census = census_of(inst, Parallelism::default())?;
        Ok((census.clone(), bound_reports(inst, &census, &config.constants)?))
    })?;
    let mut census_table = Table::new("census", &CENSUS_COLUMNS);
    let mut table = Table::new("bounds", &BOUND_COLUMNS);
    let mut violations = 0;
    for (inst, (census, rs)) in insts.iter().zip(&reports) {
        let (kind, scales, param) = inst_param(inst);
        census_table.push(census_row(&kind, &scales, param, census, "fast"));
        for r in rs {
            violations += (r.verdict == Verdict::Violated) as usize;
            table.push(bound_row(r));
        }
    }
    let p0_note = if config.constants.p0.is_none() {
        "p0 derived from tail_threshold; the tail's implied constant is taken as 1"
    } else {
        "p0 supplied"
    };
    Ok(Output {
        results: json!({ "instances": insts.len(), "violations": violations, "p0": p0_note }),
        tables: vec![census_table, table],
        plots: Vec::new(),
        violations,
    })
}

fn run_sieve(config: &ExperimentConfig) -> Result<Output> {
    let seed = config.require_seed()?;
    let exps = if config.sweep.exponents.is_empty() {
        (8..=14).collect()
    } else {
        config.sweep.exponents.clone()
    };
    let trials = config.trials.unwrap_or(20);
    let eps = config.constants.epsilon;
    let mut table = Table::new("sieve_sweep", &["form", "X", "D", "trials", "max_ratio", "mean_ratio"]);
    let mut summary = Table::new("sieve_summary", &["form", "max_ratio", "mean_doubling"]);
    for form in [SieveForm::Primal, SieveForm::Dual] {
        let points = sieve_sweep(form, &exps, eps, trials, seed, config.par())?;
        for p in &points {
            table.push(vec![
                form.as_str().into(),
                p.x.to_string(),
                p.d.to_string(),
                p.trials.to_string(),
                fmt_real(p.max_ratio),
                fmt_real(p.mean_ratio),
            ]);
        }
        if let Some(s) = summarize_sweep(&points) {
            summary.push(vec![form.as_str().into(), fmt_real(s.max_ratio), fmt_real(s.mean_doubling)]);
        }
    }
    Ok(Output {
        results: json!({ "epsilon": eps, "trials": trials }),
        tables: vec![table, summary],
        plots: Vec::new(),
        violations: 0,
    })
}

fn run_concentrate(config: &ExperimentConfig) -> Result<Output> {
    let mut tables = Vec::new();
    let mut results = serde_json::Map::new();
    if config.instance.is_some() {
        let Instance::Gcd(inst) = config.instance_file()?.build()? else {
            return Err(Error::usage("concentrate needs a gcd instance"));
        };
        let primes = if config.sweep.p.is_empty() {
            vec![2, 3, 5, 7]
        } else {
            config.sweep.p.clone()
        };
        if let Some(&p) = primes.iter().find(|&&p| !is_prime(p)) {
            return Err(Error::usage(format!("{p} is not prime")));
        }
        let qp = if inst.k() >= 3 { Some(q_of(inst.k(), config.constants.epsilon)?) } else { None };
        let rows = ordered_map(&primes, config.par(), |&p| {
            let local = localize_fast(&inst, p, Parallelism::default())?;
            let mu = local.measure()?;
            let (m, outside) = best_center(&mu);
            let (lambda, normalized) = match &qp {
                Some(q) => {
                    let lambda = (p as f64).powf(-1.0 / q.q);
                    (lambda, rational_to_f64(&outside) / lambda.powf(q.eta))
                }
                None => (f64::NAN, f64::NAN),
            };
            Ok(vec![
                p.to_string(),
                fmt_real(lambda),
                m.to_string(),
                fmt_rational(&outside),
                fmt_real(rational_to_f64(&outside)),
                fmt_real(normalized),
                mu.support().count().to_string(),
                local.omega.to_string(),
            ])
        })?;
        let mut table = Table::new(
            "localization",
            &["p", "lambda", "center", "outside_mass", "outside_mass_f64", "outside_over_lambda_eta", "support", "omega"],
        );
        rows.into_iter().for_each(|r| table.push(r));
        if let Some(q) = &qp {
            results.insert("q".into(), json!(fmt_real(q.q)));
            results.insert("eta".into(), json!(fmt_real(q.eta)));
        }
        if config.structure {
            let census = count_gcd_fast_with(&inst, config.par())?;
            if census.qualifying > ExactInt::from(config.brute_cap) {
                return Err(Error::CapExceeded {
                    what: "structure scan",
                    needed: census.qualifying.to_string(),
                    cap: config.brute_cap.to_string(),
                });
            }
            let base = config.instance_file()?.recipe.and_then(|r| r.delta).map(|d| {
                parse_delta(&d).and_then(|delta| crate::constructions::gcd_d0(inst.k(), inst.threshold(), &delta))
            });
            let base = base.transpose()?;
            let prof = structure_scan(&inst, base)?;
            let mut st = Table::new(
                "structure",
                &["N", "centers", "omega", "pure", "pure_fraction", "pure_fraction_f64", "pure_gcd_is_n", "correction"],
            );
            st.push(vec![
                prof.n.to_string(),
                prof.centers.iter().map(|(p, m)| format!("{p}^{m}")).collect::<Vec<_>>().join(";"),
                prof.omega.to_string(),
                prof.pure.to_string(),
                fmt_rational(&prof.pure_fraction),
                fmt_real(rational_to_f64(&prof.pure_fraction)),
                prof.pure_tuples_have_gcd_n.to_string(),
                prof.correction.map(|c| c.to_string()).unwrap_or_default(),
            ]);
            tables.push(st);
        }
        tables.insert(0, table);
    }
    if let Some(trials) = config.trials {
        let seed = config.require_seed()?;
        let ks = if config.lemma_k.is_empty() { vec![3, 4] } else { config.lemma_k.clone() };
        let mut table = Table::new(
            "lemma_search",
            &["k", "seed", "attempts", "accepted", "violations", "c_floor", "min_c_seen"],
        );
        for k in ks {
            let s = search_lemma_counterexamples(
                k,
                trials,
                seed,
                (trials as u64).saturating_mul(1000).max(10_000),
                config.constants.lambda_k,
                config.par(),
            )?;
            table.push(vec![
                k.to_string(),
                seed.to_string(),
                s.attempts.to_string(),
                s.accepted.to_string(),
                s.violations.to_string(),
                fmt_real(s.c_floor),
                fmt_real(s.min_c_seen),
            ]);
        }
        tables.push(table);
    }
    if tables.is_empty() {
        return Err(Error::usage("concentrate needs an instance or --trials"));
    }
    Ok(Output {
        results: Value::Object(results),
        tables,
        plots: Vec::new(),
        violations: 0,
    })
}

fn run_swise(config: &ExperimentConfig) -> Result<Output> {
    let s = config.s.ok_or_else(|| Error::usage("swise needs --s"))?;
    let insts = swept_instances(config)?;
    let rows = ordered_map(&insts, config.par(), |inst| {
        let Instance::Gcd(g) = inst else {
            return Err(Error::usage("swise needs a gcd instance"));
        };
        let census = count_swise_bruteforce(g, s, config.brute_cap)?;
        let eps = config.constants.epsilon;
        let report = if census.qualifying.is_zero() {
            None
        } else {
            Some(compare(
                "thm_swise",
                &census,
                Some(bounds::rhs_swise(&g.scales(), s, g.threshold(), rational_to_f64(&census.delta), eps)?),
                config.constants.implied_constant,
                params([("s", s.to_string()), ("D", g.threshold().to_string()), ("epsilon", eps.to_string())]),
            ))
        };
        let mut row = census_row("gcd", &g.scales(), g.threshold(), &census, "bruteforce");
        row.insert(0, s.to_string());
        match &report {
            Some(r) => {
                row.push(fmt_real(r.ln_rhs));
                row.push(fmt_real(r.ratio));
                row.push(r.verdict.as_str().to_string());
            }
            None => row.extend(["nan".into(), "nan".into(), Verdict::NotApplicable.as_str().into()]),
        }
        Ok((row, report.map(|r| r.verdict == Verdict::Violated).unwrap_or(false)))
    })?;
    let mut cols = vec!["s"];
    cols.extend(CENSUS_COLUMNS);
    cols.extend(["ln_rhs", "ratio", "verdict"]);
    let mut table = Table::new("swise", &cols);
    let mut violations = 0;
    for (r, v) in rows {
        violations += v as usize;
        table.push(r);
    }
    Ok(Output {
        results: json!({ "s": s }),
        tables: vec![table],
        plots: Vec::new(),
        violations,
    })
}
