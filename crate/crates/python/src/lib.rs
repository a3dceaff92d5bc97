//! Python bindings: limiting overlap formulas, the free-convolution solver,
//! exact overlap grids and the Monte Carlo experiments.
//!
//! Reports come back as plain dicts with the same layout as the CLI's JSON.

use minor_overlaps::ensembles::SymmetricMatrix;
use minor_overlaps::freeprob::{self, SpectrumModel};
use minor_overlaps::montecarlo::{self, ASpec, Binning, ExperimentConfig, RankOneRecipe, Target};
use minor_overlaps::overlaps_theory as theory;
use minor_overlaps::spectral::{eig_minor, eig_sym, overlap_grid};
use minor_overlaps::Error;
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(minor_overlaps_py, DomainError, PyValueError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(msg) => DomainError::new_err(msg),
        Error::InvalidArgument(msg) => PyValueError::new_err(msg),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Limiting spectrum of `A`: weighted atoms plus zero-weight spikes.
#[pyclass(name = "SpectrumModel", module = "minor_overlaps_py", skip_from_py_object)]
#[derive(Clone)]
struct PySpectrumModel {
    inner: SpectrumModel,
}

#[pymethods]
impl PySpectrumModel {
    #[new]
    #[pyo3(signature = (atoms, spikes = Vec::new(), q = 1.0))]
    fn new(atoms: Vec<(f64, f64)>, spikes: Vec<f64>, q: f64) -> PyResult<Self> {
        Ok(Self {
            inner: SpectrumModel::new(atoms, spikes, q).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn null(q: f64) -> PyResult<Self> {
        Ok(Self {
            inner: SpectrumModel::null(q).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SpectrumModel::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn atoms(&self) -> Vec<(f64, f64)> {
        self.inner.atoms().to_vec()
    }

    #[getter]
    fn spikes(&self) -> Vec<f64> {
        self.inner.spikes().to_vec()
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.q()
    }

    /// `G(z)` of the free convolution with a semicircle of variance `t`.
    fn stieltjes(&self, z: Complex64, t: f64) -> PyResult<Complex64> {
        freeprob::solve_g(&self.inner, z, t).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("SpectrumModel({})", self.inner.to_json())
    }
}

#[pyfunction]
fn w_goe(mu: f64, lambda_: f64, t: f64, q: f64) -> PyResult<f64> {
    Ok(theory::w_goe(mu, lambda_, t, q).map_err(to_py)?.value)
}

/// General kernel for `A` drawn from `model`, realized as a diagonal of size `N`.
#[pyfunction]
#[pyo3(signature = (model, mu, lambda_, t, q = None, N = 400))]
#[allow(non_snake_case)]
fn w_general(model: &PySpectrumModel, mu: f64, lambda_: f64, t: f64, q: Option<f64>, N: usize) -> PyResult<f64> {
    let model = &model.inner;
    let q = q.unwrap_or(model.q());
    let n = (q * N as f64).round() as usize;
    let diag = montecarlo::model_diagonal(model, N).map_err(to_py)?;
    let s0 = theory::InitialOverlapTransform::from_diagonal(&diag, n).map_err(to_py)?;
    let g = freeprob::FreeConvolution {
        model: model.clone(),
        shift: t,
    };
    let g_tilde = freeprob::FreeConvolution {
        model: model.clone(),
        shift: q * t,
    };
    Ok(theory::w_general(&s0, mu, lambda_, t, q, &g, &g_tilde)
        .map_err(to_py)?
        .value)
}

#[pyfunction]
fn lambda_star(mu: f64, t: f64, q: f64) -> PyResult<f64> {
    theory::lambda_star(mu, t, q).map_err(to_py)
}

#[pyfunction]
fn interlace_interval(x: f64, t: f64, q: f64) -> PyResult<(f64, f64)> {
    theory::interlace_interval(x, t, q).map_err(to_py)
}

#[pyfunction]
fn f_spike(lambda_: f64, mu: f64, q: f64, t: f64) -> PyResult<f64> {
    theory::f_spike(lambda_, mu, q, t).map_err(to_py)
}

#[pyfunction]
fn g_spike_bulk(lambda_: f64, q: f64, t: f64, mu: f64) -> PyResult<f64> {
    theory::g_spike_bulk(lambda_, q, t, mu).map_err(to_py)
}

#[pyfunction]
fn spike_mass(lambda_: f64, q: f64, t: f64) -> PyResult<f64> {
    theory::spike_mass(lambda_, q, t).map_err(to_py)
}

#[pyfunction]
#[allow(non_snake_case)]
fn bernoulli_spike(N: usize, n: usize, p: f64) -> PyResult<f64> {
    theory::bernoulli_spike(N, n, p).map_err(to_py)
}

#[pyfunction]
fn semicircle_density(lambda_: f64, t: f64) -> f64 {
    freeprob::semicircle_density(lambda_, t)
}

#[pyfunction]
#[pyo3(signature = (x, t, radius_scale = 1.0))]
fn semicircle_quantile(x: f64, t: f64, radius_scale: f64) -> PyResult<f64> {
    freeprob::semicircle_quantile(x, t, radius_scale).map_err(to_py)
}

/// Exact squared overlaps of the `n × n` minor's eigenvectors (rows) with the
/// full matrix's (columns). Returns `(minor_evals, full_evals, overlaps)`,
/// eigenvalues in descending order.
#[pyfunction]
fn overlaps(py: Python<'_>, rows: Vec<Vec<f64>>, n: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    py.detach(|| {
        let x = SymmetricMatrix::from_rows(&rows)?;
        let full = eig_sym(&x)?;
        let minor = eig_minor(&x, n)?;
        let grid = overlap_grid(&full, &minor, n)?;
        let values = (0..grid.n()).map(|i| grid.row(i).to_vec()).collect();
        Ok((grid.minor_evals().to_vec(), grid.full_evals().to_vec(), values))
    })
    .map_err(to_py)
}

/// Monte Carlo experiment configuration.
///
/// `target` is one of `bulk`, `spike_spike`, `spike_bulk`, `bernoulli_bulk`,
/// `bernoulli_spike`. Spike targets need `lambda_` (and `mu` for
/// `spike_spike`); Bernoulli targets need `p`.
#[pyclass(name = "ExperimentConfig", module = "minor_overlaps_py")]
struct PyExperimentConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperimentConfig {
    #[new]
    #[pyo3(signature = (
        target, N, q, t = 1.0, trials = 200, seed = 42, x = 0.5, lambda_ = None, mu = None,
        p = None, sizes = None, bins = 25, range = None, model = None, threads = 0
    ))]
    #[allow(non_snake_case, clippy::too_many_arguments)]
    fn new(
        target: &str,
        N: usize,
        q: f64,
        t: f64,
        trials: usize,
        seed: u64,
        x: f64,
        lambda_: Option<f64>,
        mu: Option<f64>,
        p: Option<f64>,
        sizes: Option<Vec<usize>>,
        bins: usize,
        range: Option<(f64, f64)>,
        model: Option<PyRef<'_, PySpectrumModel>>,
        threads: usize,
    ) -> PyResult<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| PyValueError::new_err(format!("target {target} needs {name}")))
        };
        let (target_spec, a_spec, t) = match target {
            "bulk" => (
                Target::Bulk { x },
                model.map_or(ASpec::Null, |m| ASpec::Model { model: m.inner.clone() }),
                t,
            ),
            "spike_spike" => (
                Target::SpikeSpike,
                ASpec::RankOne {
                    recipe: RankOneRecipe::Split {
                        lambda: need(lambda_, "lambda_")?,
                        mu: need(mu, "mu")?,
                    },
                },
                t,
            ),
            "spike_bulk" => (
                Target::SpikeBulk,
                ASpec::RankOne {
                    recipe: RankOneRecipe::Outside {
                        lambda: need(lambda_, "lambda_")?,
                    },
                },
                t,
            ),
            "bernoulli_bulk" | "bernoulli_spike" => {
                let p = need(p, "p")?;
                let target_spec = if target == "bernoulli_bulk" {
                    Target::BernoulliBulk
                } else {
                    Target::BernoulliSpike {
                        sizes: sizes.unwrap_or_else(|| vec![100, 200, 400]),
                    }
                };
                (target_spec, ASpec::Bernoulli { p }, p * (1.0 - p))
            }
            other => return Err(PyValueError::new_err(format!("unknown target {other:?}"))),
        };
        let mut inner = ExperimentConfig::new(N, q, t, trials, seed, target_spec);
        inner.a_spec = a_spec;
        inner.binning = Binning { count: bins, range };
        inner.threads = threads;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Runs the experiment with the GIL released and returns the report dict.
    fn run(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let cfg = self.inner.clone();
        let report = py
            .detach(|| match cfg.target {
                Target::Bulk { .. } => montecarlo::run_bulk_experiment(&cfg),
                Target::SpikeSpike => montecarlo::run_spike_spike(&cfg),
                Target::SpikeBulk => montecarlo::run_spike_bulk(&cfg),
                Target::BernoulliBulk | Target::BernoulliSpike { .. } => montecarlo::run_bernoulli(&cfg),
            })
            .map_err(to_py)?;
        let dict = to_dict(py, &report)?;
        dict.bind(py).set_item("wall_time_s", report.wall_time_s)?;
        Ok(dict)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(N={}, q={}, t={}, trials={}, seed={})",
            self.inner.big_n, self.inner.q, self.inner.t, self.inner.trials, self.inner.master_seed
        )
    }
}

#[pyfunction]
#[pyo3(signature = (N = 50, n = 45, t = 1.0, samples = 100_000, seed = 42, threads = 0))]
#[allow(non_snake_case)]
fn correlation_probe(py: Python<'_>, N: usize, n: usize, t: f64, samples: usize, seed: u64, threads: usize) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| montecarlo::correlation_probe(N, n, t, samples, seed, None, threads))
        .map_err(to_py)?;
    to_dict(py, &report)
}

#[pyfunction]
#[pyo3(signature = (N = 60, n = 30, t = 1.0, dt = 1e-4, trials = 20_000, seed = 42, pair = None, doubling = false, threads = 0))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn drift_probe(
    py: Python<'_>,
    N: usize,
    n: usize,
    t: f64,
    dt: f64,
    trials: usize,
    seed: u64,
    pair: Option<(usize, usize)>,
    doubling: bool,
    threads: usize,
) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| montecarlo::drift_probe(N, n, t, dt, trials, seed, pair, doubling, threads))
        .map_err(to_py)?;
    to_dict(py, &report)
}

#[pymodule]
pub fn minor_overlaps_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DomainError", m.py().get_type::<DomainError>())?;
    m.add_class::<PySpectrumModel>()?;
    m.add_class::<PyExperimentConfig>()?;
    m.add_function(wrap_pyfunction!(w_goe, m)?)?;
    m.add_function(wrap_pyfunction!(w_general, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_star, m)?)?;
    m.add_function(wrap_pyfunction!(interlace_interval, m)?)?;
    m.add_function(wrap_pyfunction!(f_spike, m)?)?;
    m.add_function(wrap_pyfunction!(g_spike_bulk, m)?)?;
    m.add_function(wrap_pyfunction!(spike_mass, m)?)?;
    m.add_function(wrap_pyfunction!(bernoulli_spike, m)?)?;
    m.add_function(wrap_pyfunction!(semicircle_density, m)?)?;
    m.add_function(wrap_pyfunction!(semicircle_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(overlaps, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_probe, m)?)?;
    m.add_function(wrap_pyfunction!(drift_probe, m)?)?;
    Ok(())
}
