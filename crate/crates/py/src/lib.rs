//! Python extension module exposing the planning toolkit: fleet sampling,
//! virtual-battery envelopes, market scenarios, the two bidding modes,
//! settlement KPIs, and the full pipeline.
//!
//! The module name is `flexbid`; build the cdylib and import it directly
//! (see python/smoke_test.py for the expected workflow).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use flexbid_core::bidding::{self, RiskParams, SolveOptions};
use flexbid_core::config::RunConfig;
use flexbid_core::envelope;
use flexbid_core::fleet;
use flexbid_core::scenario;
use flexbid_core::settlement;
use flexbid_core::{defaults, pipeline, QH_PER_DAY};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Sampling distribution of a synthetic residential charging cohort.
#[pyclass(name = "FleetSpec", skip_from_py_object)]
#[derive(Clone)]
struct PyFleetSpec {
    inner: fleet::FleetSpec,
}

#[pymethods]
impl PyFleetSpec {
    #[new]
    #[pyo3(signature = (n_vehicles=1000, rng_seed=1, power_kw=11.0))]
    fn new(n_vehicles: usize, rng_seed: u64, power_kw: f64) -> Self {
        Self {
            inner: fleet::FleetSpec {
                n_vehicles,
                rng_seed,
                power_kw,
                ..fleet::FleetSpec::default()
            },
        }
    }

    #[getter]
    fn n_vehicles(&self) -> usize {
        self.inner.n_vehicles
    }

    #[setter]
    fn set_n_vehicles(&mut self, n: usize) {
        self.inner.n_vehicles = n;
    }

    #[getter]
    fn rng_seed(&self) -> u64 {
        self.inner.rng_seed
    }

    #[setter]
    fn set_rng_seed(&mut self, seed: u64) {
        self.inner.rng_seed = seed;
    }

    fn __repr__(&self) -> String {
        format!(
            "FleetSpec(n_vehicles={}, rng_seed={}, power_kw={})",
            self.inner.n_vehicles, self.inner.rng_seed, self.inner.power_kw
        )
    }
}

/// One vehicle's plug-in session.
#[pyclass(name = "EvSession", from_py_object)]
#[derive(Clone)]
struct PyEvSession {
    inner: fleet::EvSession,
}

#[pymethods]
impl PyEvSession {
    #[getter]
    fn vehicle_id(&self) -> usize {
        self.inner.vehicle_id
    }

    #[getter]
    fn arrival_qh(&self) -> usize {
        self.inner.arrival_qh
    }

    #[getter]
    fn departure_qh(&self) -> usize {
        self.inner.departure_qh
    }

    #[getter]
    fn energy_kwh(&self) -> f64 {
        self.inner.energy_kwh
    }

    #[getter]
    fn power_kw(&self) -> f64 {
        self.inner.power_kw
    }

    fn __repr__(&self) -> String {
        format!(
            "EvSession(id={}, qh={}..{}, energy={:.2} kWh, power={} kW)",
            self.inner.vehicle_id,
            self.inner.arrival_qh,
            self.inner.departure_qh,
            self.inner.energy_kwh,
            self.inner.power_kw
        )
    }
}

/// Aggregate flexibility envelopes of a fleet.
#[pyclass(name = "VirtualBattery", skip_from_py_object)]
#[derive(Clone)]
struct PyVirtualBattery {
    inner: envelope::VirtualBattery,
}

#[pymethods]
impl PyVirtualBattery {
    #[getter]
    fn horizon_qh(&self) -> usize {
        self.inner.horizon_qh
    }

    #[getter]
    fn e_min_mwh(&self) -> Vec<f64> {
        self.inner.e_min_mwh.clone()
    }

    #[getter]
    fn e_max_mwh(&self) -> Vec<f64> {
        self.inner.e_max_mwh.clone()
    }

    #[getter]
    fn p_max_mw(&self) -> Vec<f64> {
        self.inner.p_max_mw.clone()
    }

    #[getter]
    fn total_energy_mwh(&self) -> f64 {
        self.inner.total_energy_mwh()
    }

    /// True when the per-QH charging series (MW) fits the envelopes;
    /// otherwise a string describing the first violation.
    fn check_trajectory(&self, charging_mw: Vec<f64>) -> PyResult<Option<String>> {
        match self.inner.check_trajectory(&charging_mw) {
            Ok(()) => Ok(None),
            Err(v) => Ok(Some(format!("{v:?}"))),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "VirtualBattery(horizon_qh={}, total_energy={:.3} MWh)",
            self.inner.horizon_qh,
            self.inner.total_energy_mwh()
        )
    }
}

/// Regulation-state chain plus premium model parameters.
#[pyclass(name = "MarketParams", skip_from_py_object)]
#[derive(Clone)]
struct PyMarketParams {
    inner: scenario::MarketParams,
}

#[pymethods]
impl PyMarketParams {
    fn __repr__(&self) -> String {
        format!(
            "MarketParams(up_premium~{:.1} EUR/MWh, down_premium~{:.1} EUR/MWh)",
            self.inner.premium.up.mu_log.exp(),
            self.inner.premium.down.mu_log.exp()
        )
    }
}

/// Day-ahead price series over the horizon.
#[pyclass(name = "DayAheadPrices", skip_from_py_object)]
#[derive(Clone)]
struct PyDayAheadPrices {
    inner: scenario::DayAheadPrices,
}

#[pymethods]
impl PyDayAheadPrices {
    #[getter]
    fn eur_mwh(&self) -> Vec<f64> {
        self.inner.eur_mwh.clone()
    }

    #[getter]
    fn source(&self) -> String {
        self.inner.source.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "DayAheadPrices(source={}, qhs={})",
            self.inner.source,
            self.inner.eur_mwh.len()
        )
    }
}

/// An equally weighted set of joint regulation-state/price scenarios.
#[pyclass(name = "ScenarioSet", skip_from_py_object)]
#[derive(Clone)]
struct PyScenarioSet {
    inner: Vec<scenario::MarketScenario>,
}

#[pymethods]
impl PyScenarioSet {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Regulation states of one scenario as "up" / "down" / "none".
    fn states(&self, idx: usize) -> PyResult<Vec<String>> {
        let sc = self.inner.get(idx).ok_or_else(|| {
            PyValueError::new_err(format!("scenario {idx} out of range ({})", self.inner.len()))
        })?;
        Ok(sc
            .states
            .iter()
            .map(|s| {
                match s {
                    scenario::RegulationState::Up => "up",
                    scenario::RegulationState::Down => "down",
                    scenario::RegulationState::None => "none",
                }
                .to_string()
            })
            .collect())
    }

    /// Fraction of QHs in each state across the whole set.
    fn state_frequencies(&self) -> (f64, f64, f64) {
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for sc in &self.inner {
            for s in &sc.states {
                counts[s.index()] += 1;
                total += 1;
            }
        }
        let f = |i: usize| counts[i] as f64 / total.max(1) as f64;
        (f(0), f(1), f(2))
    }

    fn __repr__(&self) -> String {
        let (up, down, none) = self.state_frequencies();
        format!(
            "ScenarioSet(n={}, up={:.2}, down={:.2}, none={:.2})",
            self.inner.len(),
            up,
            down,
            none
        )
    }
}

/// Solved bidding strategy.
#[pyclass(name = "BidSolution", skip_from_py_object)]
#[derive(Clone)]
struct PyBidSolution {
    inner: bidding::BidSolution,
}

#[pymethods]
impl PyBidSolution {
    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[getter]
    fn objective_value(&self) -> f64 {
        self.inner.objective_value
    }

    #[getter]
    fn p_da_mw(&self) -> Vec<f64> {
        self.inner.p_da_mw.clone()
    }

    #[getter]
    fn c_base_mw(&self) -> Vec<f64> {
        self.inner.c_base_mw.clone()
    }

    #[getter]
    fn bid_up_mw(&self) -> Vec<u32> {
        self.inner.bid_up_mw.clone()
    }

    #[getter]
    fn bid_dn_mw(&self) -> Vec<u32> {
        self.inner.bid_dn_mw.clone()
    }

    #[getter]
    fn da_volume_mwh(&self) -> f64 {
        self.inner.p_da_mw.iter().map(|v| v * 0.25).sum()
    }

    #[getter]
    fn gap(&self) -> Option<f64> {
        self.inner.solver.gap
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(runtime_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "BidSolution(mode={}, objective={:.2} EUR, da_volume={:.3} MWh)",
            self.inner.mode,
            self.inner.objective_value,
            self.da_volume_mwh()
        )
    }
}

/// KPI panel of a solution replayed over a scenario set.
#[pyclass(name = "KpiPanel", skip_from_py_object)]
#[derive(Clone)]
struct PyKpiPanel {
    inner: settlement::KpiPanel,
}

#[pymethods]
impl PyKpiPanel {
    #[getter]
    fn expected_total_eur(&self) -> f64 {
        self.inner.expected.total_eur
    }

    #[getter]
    fn cvar_eur(&self) -> f64 {
        self.inner.cvar_alpha_eur
    }

    #[getter]
    fn da_volume_mwh(&self) -> f64 {
        self.inner.expected.da_mwh
    }

    #[getter]
    fn mfrr_up_volume_mwh(&self) -> f64 {
        self.inner.expected.mfrr_up_mwh
    }

    #[getter]
    fn mfrr_dn_volume_mwh(&self) -> f64 {
        self.inner.expected.mfrr_dn_mwh
    }

    #[getter]
    fn imbalance_up_volume_mwh(&self) -> f64 {
        self.inner.expected.imbalance_up_mwh
    }

    #[getter]
    fn imbalance_dn_volume_mwh(&self) -> f64 {
        self.inner.expected.imbalance_dn_mwh
    }

    /// Cash-flow decomposition as a dict: da / mfrr_up / mfrr_dn / imbalance
    /// / total (EUR).
    fn decomposition(&self) -> std::collections::HashMap<String, f64> {
        let e = &self.inner.expected;
        [
            ("da", e.da_eur),
            ("mfrr_up", e.mfrr_up_eur),
            ("mfrr_dn", e.mfrr_dn_eur),
            ("imbalance", e.imbalance_eur),
            ("total", e.total_eur),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "KpiPanel(mode={}, expected={:.2} EUR, cvar={:.2} EUR)",
            self.inner.mode, self.inner.expected.total_eur, self.inner.cvar_alpha_eur
        )
    }
}

#[pyfunction]
fn sample_fleet(spec: &PyFleetSpec) -> PyResult<Vec<PyEvSession>> {
    Ok(fleet::sample_fleet(&spec.inner)
        .map_err(value_err)?
        .into_iter()
        .map(|s| PyEvSession { inner: s })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (sessions, horizon_qh=QH_PER_DAY))]
fn build_envelopes(sessions: Vec<PyEvSession>, horizon_qh: usize) -> PyResult<PyVirtualBattery> {
    let sessions: Vec<fleet::EvSession> = sessions.into_iter().map(|s| s.inner).collect();
    Ok(PyVirtualBattery {
        inner: envelope::build_envelopes(&sessions, horizon_qh).map_err(value_err)?,
    })
}

#[pyfunction]
fn default_market_params() -> PyMarketParams {
    let (chain, premium) = defaults::default_market_params();
    PyMarketParams {
        inner: scenario::MarketParams { chain, premium },
    }
}

#[pyfunction]
#[pyo3(signature = (history_csv, trim_quantile=0.01))]
fn calibrate_from_csv(history_csv: &str, trim_quantile: f64) -> PyResult<PyMarketParams> {
    let history = scenario::read_history_csv(history_csv).map_err(value_err)?;
    let cal = scenario::calibrate(&history, trim_quantile).map_err(value_err)?;
    Ok(PyMarketParams {
        inner: cal.into_params(),
    })
}

#[pyfunction]
fn synthetic_prices(day: &str) -> PyResult<PyDayAheadPrices> {
    defaults::synthetic_prices(day)
        .map(|inner| PyDayAheadPrices { inner })
        .ok_or_else(|| {
            PyValueError::new_err(format!(
                "unknown synthetic price day '{day}' (duck_curve | double_peak)"
            ))
        })
}

#[pyfunction]
fn read_day_ahead_csv(path: &str) -> PyResult<PyDayAheadPrices> {
    Ok(PyDayAheadPrices {
        inner: scenario::read_day_ahead_csv(path, &format!("observed:{path}"))
            .map_err(value_err)?,
    })
}

#[pyfunction]
fn sample_scenarios(
    params: &PyMarketParams,
    prices: &PyDayAheadPrices,
    n: usize,
    seed: u64,
) -> PyResult<PyScenarioSet> {
    Ok(PyScenarioSet {
        inner: scenario::sample_scenarios(
            &params.inner.chain,
            &params.inner.premium,
            &prices.inner,
            n,
            seed,
        )
        .map_err(value_err)?,
    })
}

#[allow(clippy::too_many_arguments)]
#[pyfunction]
#[pyo3(signature = (vb, scenarios, prices, beta=0.4, alpha=0.95, fee=0.0, max_nodes=8))]
fn solve_independent(
    vb: &PyVirtualBattery,
    scenarios: &PyScenarioSet,
    prices: &PyDayAheadPrices,
    beta: f64,
    alpha: f64,
    fee: f64,
    max_nodes: usize,
) -> PyResult<PyBidSolution> {
    let risk = RiskParams { beta, alpha };
    let opts = SolveOptions {
        max_nodes,
        ..SolveOptions::default()
    };
    Ok(PyBidSolution {
        inner: bidding::solve_independent(&vb.inner, &scenarios.inner, &prices.inner, &risk, fee, &opts)
            .map_err(runtime_err)?,
    })
}

#[allow(clippy::too_many_arguments)]
#[pyfunction]
#[pyo3(signature = (vb, scenarios, prices, beta=0.4, alpha=0.95, fee=0.0, max_nodes=8, warm_start=None))]
fn solve_cooptimized(
    vb: &PyVirtualBattery,
    scenarios: &PyScenarioSet,
    prices: &PyDayAheadPrices,
    beta: f64,
    alpha: f64,
    fee: f64,
    max_nodes: usize,
    warm_start: Option<&PyBidSolution>,
) -> PyResult<PyBidSolution> {
    let risk = RiskParams { beta, alpha };
    let opts = SolveOptions {
        max_nodes,
        ..SolveOptions::default()
    };
    Ok(PyBidSolution {
        inner: bidding::solve_cooptimized(
            &vb.inner,
            &scenarios.inner,
            &prices.inner,
            &risk,
            fee,
            &opts,
            warm_start.map(|w| w.inner.first_stage()).as_ref(),
        )
        .map_err(runtime_err)?,
    })
}

#[pyfunction]
fn evaluate(
    sol: &PyBidSolution,
    scenarios: &PyScenarioSet,
    prices: &PyDayAheadPrices,
) -> PyResult<PyKpiPanel> {
    Ok(PyKpiPanel {
        inner: settlement::evaluate(
            &sol.inner,
            &scenarios.inner,
            &prices.inner,
            &sol.inner.risk,
            sol.inner.fee_eur_mwh,
        )
        .map_err(runtime_err)?,
    })
}

/// Compare two KPI panels; returns a dict with the deltas and the
/// qualitative flags.
#[pyfunction]
fn compare<'py>(
    py: Python<'py>,
    baseline: &PyKpiPanel,
    candidate: &PyKpiPanel,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    use pyo3::types::PyDict;
    let report = settlement::compare(&baseline.inner, &candidate.inner).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("expected_total_delta_eur", report.expected_total_delta_eur)?;
    d.set_item("cvar_delta_eur", report.cvar_delta_eur)?;
    d.set_item("da_volume_delta_mwh", report.da_volume_delta_mwh)?;
    d.set_item("mfrr_up_volume_delta_mwh", report.mfrr_up_volume_delta_mwh)?;
    d.set_item("mfrr_dn_volume_delta_mwh", report.mfrr_dn_volume_delta_mwh)?;
    d.set_item("imbalance_volume_delta_mwh", report.imbalance_volume_delta_mwh)?;
    d.set_item("expected_improves", report.expected_improves)?;
    d.set_item("cvar_improves", report.cvar_improves)?;
    d.set_item("da_volume_decreases", report.da_volume_decreases)?;
    d.set_item("mfrr_dn_volume_increases", report.mfrr_dn_volume_increases)?;
    Ok(d)
}

/// Run the full file-based pipeline from a flat config file.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None))]
fn run_pipeline(config_path: &str, out_dir: Option<&str>) -> PyResult<Vec<String>> {
    let mut config = RunConfig::from_file(config_path).map_err(value_err)?;
    if let Some(dir) = out_dir {
        config.out_dir = dir.into();
    }
    let output = pipeline::run_pipeline(&config).map_err(runtime_err)?;
    Ok(output.artifacts)
}

#[pymodule]
fn flexbid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFleetSpec>()?;
    m.add_class::<PyEvSession>()?;
    m.add_class::<PyVirtualBattery>()?;
    m.add_class::<PyMarketParams>()?;
    m.add_class::<PyDayAheadPrices>()?;
    m.add_class::<PyScenarioSet>()?;
    m.add_class::<PyBidSolution>()?;
    m.add_class::<PyKpiPanel>()?;
    m.add_function(wrap_pyfunction!(sample_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(build_envelopes, m)?)?;
    m.add_function(wrap_pyfunction!(default_market_params, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_from_csv, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_prices, m)?)?;
    m.add_function(wrap_pyfunction!(read_day_ahead_csv, m)?)?;
    m.add_function(wrap_pyfunction!(sample_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(solve_independent, m)?)?;
    m.add_function(wrap_pyfunction!(solve_cooptimized, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("QH_PER_DAY", QH_PER_DAY)?;
    Ok(())
}
