//! Python bindings: configs, intensity curves, closed-form coefficients, the
//! backward solver and the shock experiment.

use fxmm_core::closedform::{client_turnover, ClosedFormCoeffs, Side};
use fxmm_core::hjb::{self, GridSpec, SolveMode};
use fxmm_core::intensity::{curves_from_tiers, IntensityCurve};
use fxmm_core::params::{self, ModelParams, RawConfig};
use fxmm_core::simulate::{self, Series, SimConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_side(side: &str) -> PyResult<Side> {
    match side {
        "bid" => Ok(Side::Bid),
        "ask" => Ok(Side::Ask),
        other => Err(PyValueError::new_err(format!("side must be 'bid' or 'ask', got {other:?}"))),
    }
}

/// A validated model configuration in input units.
#[pyclass(name = "Config", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    raw: RawConfig,
}

impl PyConfig {
    fn params(&self) -> ModelParams {
        params::normalize(&self.raw)
    }

    fn curves(&self) -> PyResult<Vec<IntensityCurve>> {
        curves_from_tiers(&self.params().tiers).map_err(value_err)
    }
}

#[pymethods]
impl PyConfig {
    /// Copy with one scalar parameter replaced (sigma, gamma, psi, eta, k,
    /// beta, horizon, x_nodes, paths, seed).
    fn with_param(&self, name: &str, value: f64) -> PyResult<Self> {
        let mut raw = self.raw.clone();
        match name {
            "sigma" => raw.sigma_daily = value,
            "gamma" => raw.gamma = value,
            "psi" => raw.psi = value,
            "eta" => raw.eta = value,
            "k" => raw.k = value,
            "beta" => raw.beta = value,
            "horizon" => raw.solver.horizon = value,
            "x_nodes" => raw.solver.x_nodes = value as usize,
            "paths" => raw.simulation.paths = value as usize,
            "seed" => raw.simulation.seed = value as u64,
            other => return Err(PyValueError::new_err(format!("unknown parameter {other:?}"))),
        }
        params::validate(&raw).map_err(value_err)?;
        Ok(Self { raw })
    }

    #[getter]
    fn sizes(&self) -> Vec<f64> {
        self.raw.ladder_notional.clone()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.raw.sigma_daily
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.raw.gamma
    }

    #[getter]
    fn psi(&self) -> f64 {
        self.raw.psi
    }

    /// bp * s / M, as entered.
    #[getter]
    fn eta(&self) -> f64 {
        self.raw.eta
    }

    #[getter]
    fn k(&self) -> f64 {
        self.raw.k
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.raw.beta
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(sizes={:?}, sigma={}, gamma={}, psi={}, eta={}, k={}, beta={})",
            self.raw.ladder_notional,
            self.raw.sigma_daily,
            self.raw.gamma,
            self.raw.psi,
            self.raw.eta,
            self.raw.k,
            self.raw.beta
        )
    }
}

/// Load a TOML config, or the built-in FX example when `path` is None.
#[pyfunction]
#[pyo3(signature = (path=None))]
fn load_config(path: Option<&str>) -> PyResult<PyConfig> {
    let mut raw = match path {
        Some(p) => params::load_config_file(std::path::Path::new(p)).map_err(value_err)?,
        None => params::fx_example(),
    };
    params::apply_env_overrides(&mut raw).map_err(value_err)?;
    Ok(PyConfig { raw })
}

/// Sigmoid client intensity `lambda0 / (1 + exp(a + b delta))` for one tier.
#[pyclass(name = "IntensityCurve", frozen)]
struct PyCurve {
    inner: IntensityCurve,
}

#[pymethods]
impl PyCurve {
    #[new]
    fn new(lambda0: f64, a: f64, b: f64, size: f64) -> PyResult<Self> {
        let inner = IntensityCurve::sigmoid(lambda0, a, b, size).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn intensity(&self, delta: f64) -> f64 {
        self.inner.intensity(delta)
    }

    /// `(H(p), argmax)` of `sup_d lambda(d) (d - p)`.
    fn hamiltonian(&self, p: f64) -> PyResult<(f64, f64)> {
        let h = self.inner.hamiltonian(p).map_err(value_err)?;
        Ok((h.value, h.maximizer))
    }

    #[getter]
    fn delta_zero(&self) -> f64 {
        self.inner.delta_zero()
    }

    #[getter]
    fn curvature(&self) -> f64 {
        self.inner.curvature()
    }

    #[getter]
    fn size(&self) -> f64 {
        self.inner.tier_size
    }
}

/// Closed-form coefficients and the quantities derived from them.
#[pyfunction]
fn coeffs<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let p = config.params();
    let curves = config.curves()?;
    let cf = ClosedFormCoeffs::new(&p, &curves);
    let d = PyDict::new(py);
    d.set_item("a0", cf.a0)?;
    d.set_item("xi", cf.xi)?;
    d.set_item("omega", cf.omega)?;
    d.set_item("b0", cf.b0)?;
    d.set_item("top_of_book_spread", cf.spread_at_zero(&curves[0]))?;
    d.set_item("client_turnover", client_turnover(&curves))?;
    d.set_item("zone_half_width", cf.internalization_half_width(p.k, p.psi))?;
    d.set_item("delta0", curves.iter().map(|c| c.delta_zero()).collect::<Vec<_>>())?;
    d.set_item("curvature", curves.iter().map(|c| c.curvature()).collect::<Vec<_>>())?;
    Ok(d)
}

/// Closed-form quote for one tier: `delta0 + (A0/c)(size +- 2q) +- (B0/c) x`.
#[pyfunction]
fn approx_quote(config: &PyConfig, tier: usize, side: &str, q: f64, x: f64) -> PyResult<f64> {
    let curves = config.curves()?;
    let curve = curves
        .get(tier)
        .ok_or_else(|| PyValueError::new_err(format!("tier {tier} out of range")))?;
    let cf = ClosedFormCoeffs::new(&config.params(), &curves);
    Ok(cf.approx_quote(curve, q, x, parse_side(side)?))
}

/// Result of a backward solve, sampled by grid node.
#[pyclass(name = "Solution", frozen)]
struct PySolution {
    out: hjb::SolveOutput,
}

impl PySolution {
    fn node(&self, q: f64, x: f64) -> (usize, usize) {
        let g = &self.out.controls.grid;
        (g.q_index(q), g.x_index(x))
    }
}

#[pymethods]
impl PySolution {
    #[getter]
    fn mode(&self) -> &'static str {
        self.out.report.mode.as_str()
    }

    #[getter]
    fn q_grid(&self) -> Vec<f64> {
        self.out.controls.grid.q.clone()
    }

    #[getter]
    fn x_grid(&self) -> Vec<f64> {
        self.out.controls.grid.x.clone()
    }

    #[getter]
    fn stationary(&self) -> bool {
        self.out.report.stationary
    }

    #[getter]
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = &self.out.report;
        let d = PyDict::new(py);
        d.set_item("mode", r.mode.as_str())?;
        d.set_item("dt", r.dt)?;
        d.set_item("steps", r.steps)?;
        d.set_item("horizon", r.horizon)?;
        d.set_item("stationarity", r.stationarity)?;
        d.set_item("stationary", r.stationary)?;
        d.set_item("restarts", r.restarts)?;
        d.set_item("max_rate_dt", r.max_rate_dt)?;
        Ok(d)
    }

    /// Quote at the grid node nearest to `(q, x)`; `tier` counts from 0.
    #[pyo3(signature = (tier, side, q, x=0.0))]
    fn quote(&self, tier: usize, side: &str, q: f64, x: f64) -> PyResult<f64> {
        let f = &self.out.controls;
        if tier >= f.n_tiers() {
            return Err(PyValueError::new_err(format!("tier {tier} out of range")));
        }
        let (i, j) = self.node(q, x);
        Ok(f.quote(tier, parse_side(side)?, i, j))
    }

    #[pyo3(signature = (q, x=0.0))]
    fn speed(&self, q: f64, x: f64) -> Option<f64> {
        let (i, j) = self.node(q, x);
        self.out.controls.speed(i, j)
    }

    #[pyo3(signature = (q, x=0.0))]
    fn p_exec(&self, q: f64, x: f64) -> Option<f64> {
        let (i, j) = self.node(q, x);
        self.out.controls.p_exec_at(i, j)
    }

    #[pyo3(signature = (q, x=0.0))]
    fn value(&self, q: f64, x: f64) -> f64 {
        let (i, j) = self.node(q, x);
        self.out.value.at(i, j)
    }

    /// `(lower, upper)` inventory edges of the no-hedging band on the impact
    /// row nearest to `x`.
    #[pyo3(signature = (x=0.0))]
    fn zone_band(&self, x: f64) -> Option<(f64, f64)> {
        let j = self.out.controls.grid.x_index(x);
        self.out.controls.zone_band(j)
    }
}

fn parse_mode(mode: &str) -> PyResult<SolveMode> {
    mode.parse().map_err(PyValueError::new_err)
}

/// Backward solve on the config's grid; mode is transient, baseline or ac.
#[pyfunction]
#[pyo3(signature = (config, mode="transient"))]
fn solve(py: Python<'_>, config: &PyConfig, mode: &str) -> PyResult<PySolution> {
    let mode = parse_mode(mode)?;
    let p = config.params();
    let curves = config.curves()?;
    let spec = GridSpec::from(&p.solver);
    let out = py
        .detach(|| hjb::solve(&p, &curves, &spec, mode))
        .map_err(runtime_err)?;
    Ok(PySolution { out })
}

fn series_dict<'py>(py: Python<'py>, stats: &simulate::PathStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("time", stats.times.clone())?;
    for s in Series::ALL {
        let st = stats.get(s);
        let e = PyDict::new(py);
        e.set_item("mean", st.mean.clone())?;
        e.set_item("se", st.se.clone())?;
        e.set_item("quantiles", st.quantiles.iter().map(|q| q.to_vec()).collect::<Vec<_>>())?;
        d.set_item(s.as_str(), e)?;
    }
    Ok(d)
}

/// Solve with and without impact decay and simulate both policies after an
/// inventory shock, with common random numbers.
#[pyfunction]
#[pyo3(signature = (config, paths=None, shock=None, seed=None))]
fn shock_experiment<'py>(
    py: Python<'py>,
    config: &PyConfig,
    paths: Option<usize>,
    shock: Option<f64>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut raw = config.raw.clone();
    if let Some(n) = paths {
        raw.simulation.paths = n;
    }
    if let Some(q0) = shock {
        raw.simulation.shock = q0;
    }
    if let Some(s) = seed {
        raw.simulation.seed = s;
    }
    if raw.simulation.paths == 0 {
        return Err(PyValueError::new_err("at least 1 path is required"));
    }
    params::validate(&raw).map_err(value_err)?;
    let p = params::normalize(&raw);
    let curves = curves_from_tiers(&p.tiers).map_err(value_err)?;
    let spec = GridSpec::from(&p.solver);
    let cfg = SimConfig::from_params(&p, &curves);
    let exp = py
        .detach(|| simulate::shock_experiment(&p, &curves, &spec, &cfg))
        .map_err(runtime_err)?;
    let r = &exp.report;
    let d = PyDict::new(py);
    d.set_item("paths", r.n_paths)?;
    d.set_item("seed", r.seed)?;
    d.set_item("shock", r.q0)?;
    d.set_item("horizon", r.horizon)?;
    d.set_item("transient_mean_pnl", r.transient_mean_pnl)?;
    d.set_item("transient_se", r.transient_se)?;
    d.set_item("ac_mean_pnl", r.ac_mean_pnl)?;
    d.set_item("ac_se", r.ac_se)?;
    d.set_item("difference", r.difference)?;
    d.set_item("difference_se", r.difference_se)?;
    d.set_item("z_score", r.z_score())?;
    d.set_item("transient", series_dict(py, &exp.transient.stats)?)?;
    d.set_item("ac", series_dict(py, &exp.ac.stats)?)?;
    Ok(d)
}

#[pymodule]
fn fxmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCurve>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(approx_quote, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(shock_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
