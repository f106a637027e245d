//! Python bindings: configurations, ensembles, premium decompositions,
//! closed forms and the statistics toolkit.

use std::collections::BTreeMap;

use darkmatter::closedform::{self, BsInputs, BsStyle};
use darkmatter::empirics::{self, BootstrapMethod, EmpiricsConfig, SyntheticPanelSpec};
use darkmatter::premia::{self, RiskPremiumReport};
use darkmatter::tanaka;
use darkmatter::{JumpLaw, Measure, PathEnsemble, PathSource, RunConfig, Side, Simulator, ValidatedConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn side(s: &str) -> PyResult<Side> {
    match s.to_ascii_lowercase().as_str() {
        "call" => Ok(Side::Call),
        "put" => Ok(Side::Put),
        other => Err(err(format!("side must be 'call' or 'put', got {other:?}"))),
    }
}

fn measure(s: &str) -> PyResult<Measure> {
    match s.to_ascii_uppercase().as_str() {
        "P" => Ok(Measure::P),
        "Q" => Ok(Measure::Q),
        other => Err(err(format!("measure must be 'P' or 'Q', got {other:?}"))),
    }
}

type Components = BTreeMap<String, (f64, f64)>;

fn components(r: &RiskPremiumReport) -> Components {
    r.components.iter().map(|(k, e)| (k.clone(), (e.estimate, e.se))).collect()
}

/// Price-jump distribution.
#[pyclass(name = "JumpLaw", module = "darkmatter_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyJumpLaw(JumpLaw);

#[pymethods]
impl PyJumpLaw {
    #[staticmethod]
    fn merton(mu: f64, sigma: f64) -> Self {
        PyJumpLaw(JumpLaw::Merton { mu, sigma })
    }

    #[staticmethod]
    fn kou(p_plus: f64, eta_plus: f64, eta_minus: f64) -> Self {
        PyJumpLaw(JumpLaw::Kou {
            p_plus,
            eta_plus,
            eta_minus,
        })
    }

    #[staticmethod]
    fn dps(beta0: f64, beta_sv: f64, sigma_sv: f64, mu_v: f64) -> Self {
        PyJumpLaw(JumpLaw::Dps {
            beta0,
            beta_sv,
            sigma_sv,
            mu_v,
        })
    }

    fn expected_jump_factor(&self) -> f64 {
        self.0.expected_jump_factor()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("law serializes")
    }

    fn __repr__(&self) -> String {
        format!("JumpLaw({})", self.to_json())
    }
}

/// Validated model parameters and market state.
#[pyclass(name = "Config", module = "darkmatter_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(ValidatedConfig);

#[pymethods]
impl PyConfig {
    /// Built-in defaults, or the given JSON document.
    #[new]
    #[pyo3(signature = (json=None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let raw = match json {
            Some(s) => RunConfig::from_json(s).map_err(err)?,
            None => RunConfig::default(),
        };
        raw.validate().map(PyConfig).map_err(err)
    }

    /// Copy with jump intensities and laws replaced; `consistent_q` also
    /// resets the Q drift terms to those the kernel implies.
    #[pyo3(signature = (lambda_p, law_p, lambda_q, law_q, consistent_q=true))]
    fn with_jumps(
        &self,
        lambda_p: f64,
        law_p: &PyJumpLaw,
        lambda_q: f64,
        law_q: &PyJumpLaw,
        consistent_q: bool,
    ) -> PyResult<Self> {
        let mut rc = self.0.to_run_config();
        rc.params.p_measure.lambda_jump = lambda_p;
        rc.params.p_measure.jump_law = law_p.0;
        rc.params.q_measure.lambda_jump = lambda_q;
        rc.params.q_measure.jump_law = law_q.0;
        if consistent_q {
            rc.params = rc.params.with_consistent_q();
        }
        rc.validate().map(PyConfig).map_err(err)
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.state().horizon()
    }

    fn to_json(&self) -> String {
        self.0.to_run_config().to_json()
    }
}

/// Materialized path ensemble under one measure.
#[pyclass(name = "Ensemble", module = "darkmatter_py", frozen)]
struct PyEnsemble(PathEnsemble);

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn n_paths(&self) -> usize {
        self.0.n_paths()
    }

    #[getter]
    fn measure(&self) -> String {
        self.0.measure.to_string()
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.0.grid().to_vec()
    }

    fn terminal(&self) -> PyResult<Vec<f64>> {
        self.0.map_paths(|p| p.terminal()).map_err(err)
    }

    /// `(g, v)` of path `i`.
    fn path(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = self.0.path_at(i).map_err(err)?;
        Ok((p.g.clone(), p.v.clone()))
    }

    /// Per-path Tanaka terms as columns.
    fn decompose(&self, py: Python<'_>, k: f64, side_name: &str, eps: f64) -> PyResult<BTreeMap<String, Vec<f64>>> {
        let s = side(side_name)?;
        let rows = py
            .detach(|| self.0.map_paths(|p| tanaka::decompose(p, k, s, eps)))
            .map_err(err)?
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let col = |f: fn(&tanaka::TanakaDecomposition) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        Ok(BTreeMap::from([
            ("stochIntegral".into(), col(|d| d.stoch_integral)),
            ("localTime".into(), col(|d| d.local_time)),
            ("crossBelowToAbove".into(), col(|d| d.cross_below_to_above)),
            ("crossAboveToBelow".into(), col(|d| d.cross_above_to_below)),
            ("payoffChange".into(), col(|d| d.payoff_change)),
            ("residual".into(), col(|d| d.residual)),
        ]))
    }
}

#[pyfunction]
#[pyo3(signature = (config, measure_name, n_paths, n_steps, seed=0))]
fn simulate(
    py: Python<'_>,
    config: &PyConfig,
    measure_name: &str,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> PyResult<PyEnsemble> {
    let m = measure(measure_name)?;
    let cfg = config.0;
    py.detach(|| Simulator::new(&cfg, m, n_paths, n_steps, seed)?.materialize())
        .map(PyEnsemble)
        .map_err(err)
}

/// Local-time, crossing and dark-matter premia at `k` as `{name: (estimate, se)}`.
#[pyfunction]
#[pyo3(signature = (p, q, k, eps=None))]
fn dark_matter_rp(py: Python<'_>, p: &PyEnsemble, q: &PyEnsemble, k: f64, eps: Option<f64>) -> PyResult<Components> {
    let r = py.detach(|| premia::dark_matter_rp(&p.0, &q.0, k, eps)).map_err(err)?;
    Ok(components(&r))
}

/// Call, put and straddle decompositions keyed by report kind.
#[pyfunction]
#[pyo3(signature = (p, q, k_call, k_put, eps=None))]
fn premia_reports(
    py: Python<'_>,
    p: &PyEnsemble,
    q: &PyEnsemble,
    k_call: f64,
    k_put: f64,
    eps: Option<f64>,
) -> PyResult<BTreeMap<String, Components>> {
    let reports = py
        .detach(|| premia::premia_reports(&p.0, &q.0, k_call, k_put, eps))
        .map_err(err)?;
    Ok(reports.iter().map(|r| (r.kind.clone(), components(r))).collect())
}

#[pyfunction]
fn omega(k: f64) -> PyResult<f64> {
    premia::omega(k).map_err(err)
}

fn bs_inputs(f: f64, k: f64, sigma: f64, tau: f64, r: f64, style: &str) -> PyResult<BsInputs> {
    let style = match style {
        "index" => BsStyle::Index,
        "futures" => BsStyle::Futures,
        other => return Err(err(format!("style must be 'index' or 'futures', got {other:?}"))),
    };
    Ok(BsInputs::new(f, k, sigma, tau, r, style))
}

#[pyfunction]
#[pyo3(signature = (f, k, sigma, tau, r=0.0, side_name="call", style="index"))]
fn bs_price(f: f64, k: f64, sigma: f64, tau: f64, r: f64, side_name: &str, style: &str) -> PyResult<f64> {
    closedform::bs_price(&bs_inputs(f, k, sigma, tau, r, style)?, side(side_name)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (price, f, k, tau, r=0.0, side_name="call", style="index"))]
fn implied_vol(price: f64, f: f64, k: f64, tau: f64, r: f64, side_name: &str, style: &str) -> PyResult<f64> {
    closedform::implied_vol(price, &bs_inputs(f, k, 0.2, tau, r, style)?, side(side_name)?).map_err(err)
}

/// Annualized crossing premium, closed form.
#[pyfunction]
fn crossing_rp(k: f64, lambda_p: f64, law_p: &PyJumpLaw, lambda_q: f64, law_q: &PyJumpLaw) -> PyResult<f64> {
    closedform::crossing_rp(k, lambda_p, &law_p.0, lambda_q, &law_q.0).map_err(err)
}

/// Annualized crossing premium by adaptive quadrature.
#[pyfunction]
#[pyo3(signature = (k, lambda_p, law_p, lambda_q, law_q, tol=1e-12))]
fn crossing_rp_quadrature(
    k: f64,
    lambda_p: f64,
    law_p: &PyJumpLaw,
    lambda_q: f64,
    law_q: &PyJumpLaw,
    tol: f64,
) -> PyResult<f64> {
    closedform::crossing_rp_quadrature(k, lambda_p, &law_p.0, lambda_q, &law_q.0, tol).map_err(err)
}

/// `(mean, se, lag)` with a Bartlett HAC error.
#[pyfunction]
#[pyo3(signature = (series, lag=None))]
fn newey_west_mean(series: Vec<f64>, lag: Option<usize>) -> PyResult<(f64, f64, usize)> {
    let (m, h) = empirics::newey_west_mean(&series, lag).map_err(err)?;
    Ok((m, h.se[0], h.lag))
}

/// Percentile interval `(lower, upper)`; `block=None` picks the block size from the data.
#[pyfunction]
#[pyo3(signature = (series, method="stationary", n_boot=10_000, level=0.95, block=None, seed=0))]
fn bootstrap_ci(
    py: Python<'_>,
    series: Vec<f64>,
    method: &str,
    n_boot: usize,
    level: f64,
    block: Option<f64>,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let m = BootstrapMethod::ALL
        .into_iter()
        .find(|m| m.name() == method)
        .ok_or_else(|| err(format!("unknown bootstrap method {method:?}")))?;
    let b = block.unwrap_or_else(|| empirics::optimal_block(&series, m));
    let r = py
        .detach(|| empirics::bootstrap_ci(&series, m, n_boot, level, b, seed))
        .map_err(err)?;
    Ok((r.lower, r.upper))
}

/// Conditional table CSV for a synthetic panel.
#[pyfunction]
#[pyo3(signature = (n_cycles=200, seed=0))]
fn synthetic_table(py: Python<'_>, n_cycles: usize, seed: u64) -> PyResult<String> {
    py.detach(|| -> darkmatter::Result<String> {
        let panel = empirics::synthetic_panel(&SyntheticPanelSpec {
            n_cycles,
            seed,
            ..SyntheticPanelSpec::default()
        })?;
        let mut cfg = EmpiricsConfig::default();
        cfg.bootstrap.seed = seed;
        let out = empirics::run_pipeline(&cfg, &panel.chains, Some(&panel.daily), &[])?;
        let mut buf = Vec::new();
        out.write_table_csv(&mut buf, cfg.hac_lag)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    })
    .map_err(err)
}

#[pymodule]
fn darkmatter_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyJumpLaw>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(dark_matter_rp, m)?)?;
    m.add_function(wrap_pyfunction!(premia_reports, m)?)?;
    m.add_function(wrap_pyfunction!(omega, m)?)?;
    m.add_function(wrap_pyfunction!(bs_price, m)?)?;
    m.add_function(wrap_pyfunction!(implied_vol, m)?)?;
    m.add_function(wrap_pyfunction!(crossing_rp, m)?)?;
    m.add_function(wrap_pyfunction!(crossing_rp_quadrature, m)?)?;
    m.add_function(wrap_pyfunction!(newey_west_mean, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_table, m)?)?;
    Ok(())
}
