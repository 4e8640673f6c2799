//! Python bindings for `semimarkov_hedge`.
//!
//! Regime indices are 0-based here, as in the Rust API.

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use semimarkov_hedge as core;
use semimarkov_hedge::volterra::{UpperTail, ZeroLagHedge};
use semimarkov_hedge::{Error, Estimate};

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::InvalidIndex { .. } => PyIndexError::new_err(msg),
        Error::Io(_) => PyIOError::new_err(msg),
        Error::NonConvergence(..) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

#[pyclass(name = "MarketSpec", module = "smhedge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMarketSpec {
    inner: core::MarketSpec,
}

#[pymethods]
impl PyMarketSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        core::MarketSpec::from_json_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        core::MarketSpec::from_json_file(path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Three regimes with Gamma(2, 1) holding times.
    #[staticmethod]
    fn three_regime_example() -> Self {
        Self { inner: core::MarketSpec::three_regime_example() }
    }

    /// Three regimes sharing `(mu, sigma, r)`.
    #[staticmethod]
    fn identical(mu: f64, sigma: f64, r: f64) -> Self {
        Self { inner: core::MarketSpec::identical_regimes(core::RegimeParams::new(mu, sigma, r)) }
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn strike(&self) -> f64 {
        self.inner.strike
    }

    #[getter]
    fn maturity(&self) -> f64 {
        self.inner.maturity
    }

    /// Violated constraints as messages; empty when the spec is usable.
    fn validate(&self) -> Vec<String> {
        core::validate(&self.inner).violations.iter().map(|v| v.to_string()).collect()
    }

    fn hazard(&self, i: usize, j: usize, y: f64) -> PyResult<f64> {
        core::hazard(&self.inner, i, j, y).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("MarketSpec(k={}, strike={}, maturity={})", self.inner.k(), self.inner.strike, self.inner.maturity)
    }
}

#[pyclass(name = "SolverGrid", module = "smhedge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySolverGrid {
    inner: core::SolverGrid,
}

#[pymethods]
impl PySolverGrid {
    #[new]
    #[pyo3(signature = (maturity, dt, ds, s_max, upper_tail = "linear", zero_lag = "price-ratio", force = false))]
    fn new(
        maturity: f64,
        dt: f64,
        ds: f64,
        s_max: f64,
        upper_tail: &str,
        zero_lag: &str,
        force: bool,
    ) -> PyResult<Self> {
        let tail = match upper_tail {
            "linear" => UpperTail::LinearExtrapolation,
            "truncate" => UpperTail::Truncate,
            other => return Err(PyValueError::new_err(format!("unknown upper_tail `{other}`"))),
        };
        let zl = match zero_lag {
            "price-ratio" => ZeroLagHedge::PriceRatio,
            "stock-derivative" => ZeroLagHedge::StockDerivative,
            other => return Err(PyValueError::new_err(format!("unknown zero_lag `{other}`"))),
        };
        let inner = core::SolverGrid::new(maturity, dt, ds, s_max)
            .map_err(to_py)?
            .with_upper_tail(tail)
            .with_zero_lag_hedge(zl)
            .allow_unstable(force);
        Ok(Self { inner })
    }

    #[staticmethod]
    fn default_for(spec: &PyMarketSpec) -> Self {
        Self { inner: core::SolverGrid::default_for(&spec.inner) }
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn ds(&self) -> f64 {
        self.inner.ds
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps
    }

    #[getter]
    fn m_max(&self) -> usize {
        self.inner.m_max
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!("SolverGrid(dt={}, ds={}, n_steps={}, m_max={})", g.dt, g.ds, g.n_steps, g.m_max)
    }
}

#[pyclass(name = "PriceSurface", module = "smhedge", frozen)]
struct PyPriceSurface {
    inner: core::PriceSurface,
}

#[pymethods]
impl PyPriceSurface {
    fn price_at(&self, t: f64, s: f64, regime: usize, y: f64) -> PyResult<f64> {
        self.inner.price_at(t, s, regime, y).map_err(to_py)
    }

    /// `(price, xi, epsilon)`.
    fn hedge_at(&self, t: f64, s: f64, regime: usize, y: f64) -> PyResult<(f64, f64, f64)> {
        let h = self.inner.hedge_at(t, s, regime, y).map_err(to_py)?;
        Ok((h.price, h.xi, h.epsilon))
    }

    fn node(&self, n: usize, m: usize, regime: usize) -> PyResult<f64> {
        let g = self.inner.grid();
        if n > g.n_steps || m > g.m_max || regime >= self.inner.spec().k() {
            return Err(PyIndexError::new_err("node index out of range"));
        }
        Ok(self.inner.node(n, m, regime))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::PriceSurface::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint().to_string()
    }

    #[getter]
    fn spec(&self) -> PyMarketSpec {
        PyMarketSpec { inner: self.inner.spec().clone() }
    }

    #[getter]
    fn grid(&self) -> PySolverGrid {
        PySolverGrid { inner: *self.inner.grid() }
    }
}

#[pyfunction]
fn solve_surface(py: Python<'_>, spec: &PyMarketSpec, grid: &PySolverGrid) -> PyResult<PyPriceSurface> {
    let (spec, grid) = (spec.inner.clone(), grid.inner);
    py.detach(move || core::solve_surface(&spec, &grid))
        .map(|inner| PyPriceSurface { inner })
        .map_err(to_py)
}

/// `(price, delta)` of a Black-Scholes call.
#[pyfunction]
fn bs_call(t: f64, s: f64, r: f64, sigma: f64, strike: f64, maturity: f64) -> PyResult<(f64, f64)> {
    let q = core::bs_call(t, s, r, sigma, strike, maturity).map_err(to_py)?;
    Ok((q.price, q.delta))
}

#[pyfunction]
fn stability_bound(spec: &PyMarketSpec) -> f64 {
    core::stability_bound(&spec.inner)
}

fn estimate_dict<'py>(py: Python<'py>, e: &Estimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("estimate", e.estimate)?;
    d.set_item("stderr", e.stderr)?;
    d.set_item("n_paths", e.n_paths)?;
    Ok(d)
}

/// Risk-neutral Monte Carlo call price as `(estimate, stderr)`.
#[pyfunction]
#[pyo3(signature = (spec, s0, regime, y0 = 0.0, paths = 100_000, seed = 1))]
fn mc_price_oracle(
    py: Python<'_>,
    spec: &PyMarketSpec,
    s0: f64,
    regime: usize,
    y0: f64,
    paths: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let spec = spec.inner.clone();
    let cfg = core::SimConfig::new(core::Measure::RiskNeutral, paths, seed);
    let e = py.detach(move || core::mc_price_oracle(&spec, s0, regime, y0, &cfg)).map_err(to_py)?;
    Ok((e.estimate, e.stderr))
}

/// QRR, PRR, PM(QRR) and PM(PRR) at one starting point, as a dict of
/// `{estimate, stderr, n_paths}` entries.
#[pyfunction]
#[pyo3(signature = (surface, s0, regime, y0 = 0.0, rebalances = 12, paths = 100_000, seed = 1, measure = "physical"))]
#[allow(clippy::too_many_arguments)]
fn risk_report<'py>(
    py: Python<'py>,
    surface: &PyPriceSurface,
    s0: f64,
    regime: usize,
    y0: f64,
    rebalances: usize,
    paths: usize,
    seed: u64,
    measure: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let measure: core::Measure = measure.parse().map_err(to_py)?;
    let cfg = core::SimConfig::new(measure, paths, seed);
    let surf = &surface.inner;
    let report = py
        .detach(|| core::risk_report(surf.spec(), surf, s0, regime, y0, rebalances, &cfg))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    for (name, e) in report.measures() {
        out.set_item(name, estimate_dict(py, &e)?)?;
    }
    out.set_item("cashflow_mean", estimate_dict(py, &report.cashflow_mean)?)?;
    out.set_item("rebalance_times", report.rebalance_times)?;
    Ok(out)
}

#[pymodule]
fn smhedge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarketSpec>()?;
    m.add_class::<PySolverGrid>()?;
    m.add_class::<PyPriceSurface>()?;
    m.add_function(wrap_pyfunction!(solve_surface, m)?)?;
    m.add_function(wrap_pyfunction!(bs_call, m)?)?;
    m.add_function(wrap_pyfunction!(stability_bound, m)?)?;
    m.add_function(wrap_pyfunction!(mc_price_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(risk_report, m)?)?;
    Ok(())
}
