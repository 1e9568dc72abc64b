//! Python bindings: instances, exact counts, constructions, bound
//! evaluators, concentration tools and the experiment runner.

use num_bigint::BigInt;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gcdlab::bounds;
use gcdlab::concentration;
use gcdlab::constructions;
use gcdlab::counting::{self, Parallelism, TupleCensus};
use gcdlab::exact::{fmt_rational, parse_rational};
use gcdlab::experiments::{self, ExperimentConfig};
use gcdlab::sieve;
use gcdlab::Error;

create_exception!(gcdlab_py, CapExceededError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::CapExceeded { .. } => CapExceededError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("{}: {e}", e.kind())),
    }
}

fn fraction<'py>(py: Python<'py>, r: &num_bigint::BigInt, d: &num_bigint::BigInt) -> PyResult<Bound<'py, PyAny>> {
    py.import("fractions")?.getattr("Fraction")?.call1((r.clone(), d.clone()))
}

fn census_dict<'py>(py: Python<'py>, c: &TupleCensus) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("qualifying", c.qualifying.as_bigint().clone())?;
    d.set_item("total", c.total.as_bigint().clone())?;
    d.set_item("delta", fraction(py, c.delta.numer(), c.delta.denom())?)?;
    Ok(d)
}

#[pyclass(frozen, from_py_object, name = "IntegerSet")]
#[derive(Clone)]
struct PyIntegerSet(gcdlab::set_model::IntegerSet);

#[pymethods]
impl PyIntegerSet {
    #[new]
    fn new(scale: u64, elements: Vec<u64>) -> PyResult<Self> {
        gcdlab::set_model::IntegerSet::new(scale, elements).map(Self).map_err(err)
    }

    /// Multiples of `d` in `[scale, 2 scale]`.
    #[staticmethod]
    fn multiples(scale: u64, d: u64) -> PyResult<Self> {
        gcdlab::set_model::multiples_in(scale, d).map(Self).map_err(err)
    }

    #[getter]
    fn scale(&self) -> u64 {
        self.0.scale()
    }

    #[getter]
    fn elements(&self) -> Vec<u64> {
        self.0.elements().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("IntegerSet(scale={}, len={})", self.0.scale(), self.0.len())
    }
}

fn unwrap_sets(sets: Vec<PyIntegerSet>) -> Vec<gcdlab::set_model::IntegerSet> {
    sets.into_iter().map(|s| s.0).collect()
}

#[pyclass(frozen, from_py_object, name = "GcdInstance")]
#[derive(Clone)]
struct PyGcdInstance(counting::GcdInstance);

#[pymethods]
impl PyGcdInstance {
    #[new]
    fn new(sets: Vec<PyIntegerSet>, d: u64) -> PyResult<Self> {
        counting::GcdInstance::new(unwrap_sets(sets), d).map(Self).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn threshold(&self) -> u64 {
        self.0.threshold()
    }

    #[getter]
    fn sets(&self) -> Vec<PyIntegerSet> {
        self.0.sets().iter().cloned().map(PyIntegerSet).collect()
    }

    /// Exact census of tuples with gcd >= D; `brute` enumerates instead.
    #[pyo3(signature = (brute=false, cap=u64::MAX, workers=1))]
    fn census<'py>(&self, py: Python<'py>, brute: bool, cap: u64, workers: usize) -> PyResult<Bound<'py, PyDict>> {
        let c = py
            .detach(|| {
                if brute {
                    counting::count_gcd_bruteforce(&self.0, cap)
                } else {
                    counting::count_gcd_fast_with(&self.0, Parallelism::new(workers))
                }
            })
            .map_err(err)?;
        census_dict(py, &c)
    }

    /// `(delta, value)` for each dyadic block of divisors.
    fn dyadic_blocks(&self) -> PyResult<Vec<(u64, BigInt)>> {
        let blocks = counting::dyadic_blocks(&self.0).map_err(err)?;
        Ok(blocks.into_iter().map(|b| (b.delta_scale, b.value.into_bigint())).collect())
    }

    fn __repr__(&self) -> String {
        format!("GcdInstance(k={}, D={})", self.0.k(), self.0.threshold())
    }
}

#[pyclass(frozen, from_py_object, name = "LcmInstance")]
#[derive(Clone)]
struct PyLcmInstance(counting::LcmInstance);

#[pymethods]
impl PyLcmInstance {
    #[new]
    fn new(sets: Vec<PyIntegerSet>, l: u64) -> PyResult<Self> {
        counting::LcmInstance::new(unwrap_sets(sets), l).map(Self).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn budget(&self) -> u64 {
        self.0.budget()
    }

    #[getter]
    fn sets(&self) -> Vec<PyIntegerSet> {
        self.0.sets().iter().cloned().map(PyIntegerSet).collect()
    }

    #[pyo3(signature = (brute=false, cap=u64::MAX))]
    fn census<'py>(&self, py: Python<'py>, brute: bool, cap: u64) -> PyResult<Bound<'py, PyDict>> {
        let c = py
            .detach(|| {
                if brute {
                    counting::count_lcm_bruteforce(&self.0, cap)
                } else {
                    counting::count_lcm_fast(&self.0).map(|(c, _)| c)
                }
            })
            .map_err(err)?;
        census_dict(py, &c)
    }

    fn __repr__(&self) -> String {
        format!("LcmInstance(k={}, L={})", self.0.k(), self.0.budget())
    }
}

/// Equal-scale gcd construction; returns the instance and `D_0`.
#[pyfunction]
fn build_gcd_extremal(k: usize, x: u64, d: u64, delta: &str) -> PyResult<(PyGcdInstance, u64)> {
    let delta = parse_rational(delta).map_err(err)?;
    let (inst, recipe) = constructions::build_gcd_extremal(k, x, d, &delta).map_err(err)?;
    Ok((PyGcdInstance(inst), recipe.d0))
}

/// Prime-multiples lcm construction; returns the instance and `(M, Q, primes)`.
#[pyfunction]
#[pyo3(signature = (scales, l, delta, c_small=None, c_large=None))]
fn build_lcm_extremal(
    scales: Vec<u64>,
    l: u64,
    delta: &str,
    c_small: Option<f64>,
    c_large: Option<f64>,
) -> PyResult<(PyLcmInstance, (u64, u64, Vec<u64>))> {
    let k = scales.len();
    let delta = parse_rational(delta).map_err(err)?;
    let (inst, r) = constructions::build_lcm_extremal(
        &scales,
        l,
        &delta,
        c_small.unwrap_or_else(|| constructions::default_c_small(k)),
        c_large.unwrap_or_else(|| constructions::default_c_large(k)),
    )
    .map_err(err)?;
    Ok((PyLcmInstance(inst), (r.m, r.q, r.primes)))
}

/// Natural log of a named upper bound.
#[pyfunction]
#[pyo3(signature = (name, scales, param, delta, eps, n_small_primes=0, s=2))]
fn rhs_ln(
    name: &str,
    scales: Vec<u64>,
    param: u64,
    delta: f64,
    eps: f64,
    n_small_primes: usize,
    s: usize,
) -> PyResult<Option<f64>> {
    let r = match name {
        "thm_main_explicit" => bounds::rhs_thm_main_explicit(&scales, param, delta, eps, n_small_primes),
        "thm_main_simplified" => bounds::rhs_thm_main_simplified(&scales, param, delta, eps).map(Some),
        "thm_hybrid" => bounds::rhs_thm_hybrid(&scales, param, delta, eps).map(Some),
        "thm_lcm" => bounds::rhs_thm_lcm(&scales, param, delta, eps).map(Some),
        "cor_lcm2" => bounds::rhs_cor_lcm2(&scales, param, delta, eps).map(Some),
        "swise" => bounds::rhs_swise(&scales, s, param, delta, eps).map(Some),
        _ => return Err(PyValueError::new_err(format!("unknown bound {name}"))),
    }
    .map_err(err)?;
    Ok(r.map(|r| r.ln))
}

/// `(q, q', eta, lambda_k)` for the concentration lemma.
#[pyfunction]
fn concentration_params(k: usize, eps: f64) -> PyResult<(f64, f64, f64, f64)> {
    let p = concentration::q_of(k, eps).map_err(err)?;
    Ok((p.q, p.q_prime, p.eta, p.lambda_k))
}

#[pyfunction]
fn c_floor(k: usize, lambda_k: f64) -> f64 {
    concentration::c_floor(k, lambda_k)
}

/// Localizes a gcd instance at `p`; returns `(center, outside mass)`.
#[pyfunction]
#[pyo3(signature = (inst, p, workers=1))]
fn localize<'py>(py: Python<'py>, inst: &PyGcdInstance, p: u64, workers: usize) -> PyResult<(i64, Bound<'py, PyAny>)> {
    let local = py
        .detach(|| concentration::localize_fast(&inst.0, p, Parallelism::new(workers)))
        .map_err(err)?;
    let mu = local.measure().map_err(err)?;
    let (m, out) = concentration::best_center(&mu);
    Ok((m, fraction(py, out.numer(), out.denom())?))
}

#[pyfunction]
fn purity_check(tuple: Vec<u64>, n: u64) -> PyResult<bool> {
    concentration::purity_check(&tuple, n).map_err(err)
}

/// Seeded dominated-measure search; returns `(accepted, violations, min c, floor)`.
#[pyfunction]
#[pyo3(signature = (k, trials, seed, workers=1))]
fn lemma_search(py: Python<'_>, k: usize, trials: usize, seed: u64, workers: usize) -> PyResult<(usize, usize, f64, f64)> {
    let s = py
        .detach(|| {
            concentration::search_lemma_counterexamples(
                k,
                trials,
                seed,
                trials as u64 * 1000,
                None,
                Parallelism::new(workers),
            )
        })
        .map_err(err)?;
    Ok((s.accepted, s.violations, s.min_c_seen, s.c_floor))
}

/// `sum_{d ~ D} |sum_{n ~ X, d | n} xi_n|^2` for the indicator of `support`.
#[pyfunction]
fn sieve_lhs(x: u64, support: Vec<u64>, d: u64) -> PyResult<BigInt> {
    let set = gcdlab::set_model::IntegerSet::new(x, support).map_err(err)?;
    let xi = sieve::WeightedSequence::of_set(&set);
    Ok(sieve::sieve_lhs(&xi, d).map_err(err)?.into_bigint())
}

/// Runs an experiment config given as JSON and returns the report as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_json(config_json).map_err(err)?;
    let report = py.detach(|| experiments::run(&config)).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn format_rational(s: &str) -> PyResult<String> {
    Ok(fmt_rational(&parse_rational(s).map_err(err)?))
}

#[pymodule(name = "gcdlab_py")]
pub fn gcdlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntegerSet>()?;
    m.add_class::<PyGcdInstance>()?;
    m.add_class::<PyLcmInstance>()?;
    m.add("CapExceededError", m.py().get_type::<CapExceededError>())?;
    m.add_function(wrap_pyfunction!(build_gcd_extremal, m)?)?;
    m.add_function(wrap_pyfunction!(build_lcm_extremal, m)?)?;
    m.add_function(wrap_pyfunction!(rhs_ln, m)?)?;
    m.add_function(wrap_pyfunction!(concentration_params, m)?)?;
    m.add_function(wrap_pyfunction!(c_floor, m)?)?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(purity_check, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_search, m)?)?;
    m.add_function(wrap_pyfunction!(sieve_lhs, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(format_rational, m)?)?;
    Ok(())
}
