//! Python bindings: scenarios, the fixed and dynamic ordering solvers, the
//! oracles and the experiment runner.

use hapc_core::dynamic_sic::algorithm2;
use hapc_core::experiment::{run_experiment as run_spec, ExperimentSpec};
use hapc_core::fixed_sic::algorithm1;
use hapc_core::oracles::{audit_solution, exhaustive_sic_oracle as exhaustive, grid_oracle as grid, traditional_sr_baseline};
use hapc_core::ratemodel::{self, AcDecode, AllocationVars, SicOrdering};
use hapc_core::scenario::{build_channel_gains, ChannelGains, Fading, ScenarioConfig};
use hapc_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(hapc, InfeasibleError, PyRuntimeError, "No allocation satisfies the constraints.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) => InfeasibleError::new_err(e.to_string()),
        Error::Config(_) | Error::Domain(_) | Error::Validation(_) | Error::Parse(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A validated scenario.
#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
pub struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// The two-SU reference scenario.
    #[staticmethod]
    fn reference() -> Self {
        Self { inner: ScenarioConfig::reference() }
    }

    /// The single-SU reference scenario.
    #[staticmethod]
    fn reference_single() -> Self {
        Self { inner: ScenarioConfig::reference_single() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_json_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ScenarioConfig::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    /// Copy with one `key=value` override applied, e.g. `"pt_power=2"`.
    fn with_override(&self, assignment: &str) -> PyResult<Self> {
        self.inner.with_override(assignment).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Copy with exponential fading drawn from `seed`.
    fn with_seed(&self, seed: u64) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner.fading = Fading::Exponential { seed };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_sus(&self) -> usize {
        self.inner.num_sus
    }

    #[getter]
    fn pt_power(&self) -> f64 {
        self.inner.pt_power
    }

    #[getter]
    fn min_pt_gain(&self) -> f64 {
        self.inner.min_pt_gain
    }

    #[getter]
    fn eh_efficiency(&self) -> f64 {
        self.inner.eh_efficiency
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(num_sus={}, pt_power={}, min_pt_gain={})",
            self.inner.num_sus, self.inner.pt_power, self.inner.min_pt_gain
        )
    }
}

impl PyScenario {
    fn gains(&self) -> PyResult<ChannelGains> {
        build_channel_gains(&self.inner).map_err(to_py)
    }
}

/// Time, reflection and power allocation of every SU.
#[pyclass(name = "Allocation", from_py_object)]
#[derive(Clone)]
pub struct PyAllocation {
    #[pyo3(get)]
    tau: Vec<f64>,
    #[pyo3(get)]
    t: Vec<f64>,
    #[pyo3(get)]
    beta: Vec<f64>,
    #[pyo3(get)]
    p_tr: Vec<f64>,
    #[pyo3(get)]
    t_a: f64,
    #[pyo3(get)]
    t_b: f64,
}

#[pymethods]
impl PyAllocation {
    #[new]
    fn new(tau: Vec<f64>, t: Vec<f64>, beta: Vec<f64>, p_tr: Vec<f64>, t_a: f64, t_b: f64) -> Self {
        Self { tau, t, beta, p_tr, t_a, t_b }
    }

    fn __repr__(&self) -> String {
        format!(
            "Allocation(tau={:?}, t={:?}, beta={:?}, p_tr={:?}, t_a={}, t_b={})",
            self.tau, self.t, self.beta, self.p_tr, self.t_a, self.t_b
        )
    }
}

impl From<&AllocationVars> for PyAllocation {
    fn from(v: &AllocationVars) -> Self {
        Self { tau: v.tau.clone(), t: v.t.clone(), beta: v.beta.clone(), p_tr: v.p_tr.clone(), t_a: v.t_a, t_b: v.t_b }
    }
}

impl From<&PyAllocation> for AllocationVars {
    fn from(v: &PyAllocation) -> Self {
        Self { tau: v.tau.clone(), t: v.t.clone(), beta: v.beta.clone(), p_tr: v.p_tr.clone(), t_a: v.t_a, t_b: v.t_b }
    }
}

fn ordering_names(o: &SicOrdering) -> Vec<String> {
    o.decodes()
        .map(|d| {
            d.into_iter()
                .map(|r| match r {
                    Some(AcDecode::PtFirst) => "pt_first".to_string(),
                    Some(AcDecode::SuFirst) => "su_first".to_string(),
                    None => "none".to_string(),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn parse_ordering(names: &[String]) -> PyResult<SicOrdering> {
    let rules = names
        .iter()
        .map(|n| match n.as_str() {
            "pt_first" => Ok(AcDecode::PtFirst),
            "su_first" => Ok(AcDecode::SuFirst),
            other => Err(PyValueError::new_err(format!("unknown decoding rule `{other}`; use pt_first or su_first"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(SicOrdering::from_decodes(&rules))
}

/// Solver output together with its constraint audit.
#[pyclass(name = "Solution", skip_from_py_object)]
#[derive(Clone)]
pub struct PySolution {
    #[pyo3(get)]
    algorithm: String,
    #[pyo3(get)]
    total_su_rate: f64,
    #[pyo3(get)]
    pt_rate_gain: f64,
    #[pyo3(get)]
    allocation: PyAllocation,
    /// Decoding rule of each SU's active slot.
    #[pyo3(get)]
    ordering: Vec<String>,
    /// Objective after each outer iteration.
    #[pyo3(get)]
    trace: Vec<f64>,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    audit_pass: bool,
    /// Label and normalized slack of the tightest constraint.
    #[pyo3(get)]
    worst_slack: (String, f64),
}

#[pymethods]
impl PySolution {
    #[getter]
    fn iterations(&self) -> usize {
        self.trace.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(algorithm={:?}, total_su_rate={:.6e}, pt_rate_gain={:.6e}, ordering={:?})",
            self.algorithm, self.total_su_rate, self.pt_rate_gain, self.ordering
        )
    }
}

fn solution(
    algorithm: &str,
    vars: &AllocationVars,
    ordering: &SicOrdering,
    trace: Vec<f64>,
    converged: bool,
    sc: &PyScenario,
    g: &ChannelGains,
) -> PyResult<PySolution> {
    let report = audit_solution(vars, ordering, &sc.inner, g);
    let worst = report.worst().map_or((String::new(), f64::INFINITY), |e| (e.label.clone(), e.normalized()));
    Ok(PySolution {
        algorithm: algorithm.into(),
        total_su_rate: ratemodel::total_su_rate(vars, ordering, g, &sc.inner).map_err(to_py)?,
        pt_rate_gain: ratemodel::pt_rate_gain(vars, ordering, g, &sc.inner).map_err(to_py)?,
        allocation: vars.into(),
        ordering: ordering_names(ordering),
        trace,
        converged,
        audit_pass: report.passes(),
        worst_slack: worst,
    })
}

/// Maximizes the total SU rate with every active slot decoding the PT first.
#[pyfunction]
fn solve_fixed(py: Python<'_>, scenario: &PyScenario) -> PyResult<PySolution> {
    let g = scenario.gains()?;
    let sol = py.detach(|| algorithm1(&scenario.inner, &g)).map_err(to_py)?;
    let k = g.num_sus();
    solution("fixed", &sol.vars, &SicOrdering::all_pt_first(k), sol.objective_trace(), sol.converged, scenario, &g)
}

/// Maximizes the total SU rate jointly over the allocation and the decoding order.
#[pyfunction]
fn solve_dynamic(py: Python<'_>, scenario: &PyScenario) -> PyResult<PySolution> {
    let g = scenario.gains()?;
    let sol = py.detach(|| algorithm2(&scenario.inner, &g)).map_err(to_py)?;
    solution("dynamic", &sol.vars, &sol.ordering, sol.objective_trace(), sol.converged, scenario, &g)
}

/// Backscatter-only baseline over the whole block.
#[pyfunction]
fn traditional_baseline(py: Python<'_>, scenario: &PyScenario) -> PyResult<PySolution> {
    let g = scenario.gains()?;
    let sol = py.detach(|| traditional_sr_baseline(&scenario.inner, &g)).map_err(to_py)?;
    let k = g.num_sus();
    solution("traditional", &sol.vars(&scenario.inner), &SicOrdering::all_pt_first(k), Vec::new(), true, scenario, &g)
}

/// Best decoding order by solving every one of them.
#[pyfunction]
fn exhaustive_sic_oracle(py: Python<'_>, scenario: &PyScenario) -> PyResult<PySolution> {
    let g = scenario.gains()?;
    let res = py.detach(|| exhaustive(&scenario.inner, &g)).map_err(to_py)?;
    let best = res
        .candidates
        .iter()
        .filter(|c| c.rate.is_some())
        .max_by(|a, b| a.rate.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.rate.unwrap_or(f64::NEG_INFINITY)))
        .and_then(|c| c.vars.as_ref().map(|v| (v, &c.ordering)));
    let (vars, ordering) = best.ok_or_else(|| InfeasibleError::new_err("no decoding order is feasible"))?;
    solution("exhaustive_sic", vars, ordering, Vec::new(), true, scenario, &g)
}

/// Brute-force grid search for one or two SUs; `None` when no grid point is feasible.
#[pyfunction]
#[pyo3(signature = (scenario, resolution = 17))]
fn grid_oracle(py: Python<'_>, scenario: &PyScenario, resolution: usize) -> PyResult<Option<PySolution>> {
    let g = scenario.gains()?;
    let res = py.detach(|| grid(&scenario.inner, &g, resolution)).map_err(to_py)?;
    let k = g.num_sus();
    res.vars
        .map(|v| solution("grid", &v, &SicOrdering::all_pt_first(k), Vec::new(), true, scenario, &g))
        .transpose()
}

/// Normalized slack of every constraint at a raw allocation; negative means violated.
#[pyfunction]
#[pyo3(signature = (scenario, allocation, ordering = None))]
fn audit(scenario: &PyScenario, allocation: &PyAllocation, ordering: Option<Vec<String>>) -> PyResult<Vec<(String, f64)>> {
    let g = scenario.gains()?;
    let o = match ordering {
        Some(names) => parse_ordering(&names)?,
        None => SicOrdering::all_pt_first(g.num_sus()),
    };
    let report = audit_solution(&allocation.into(), &o, &scenario.inner, &g);
    Ok(report.entries.iter().map(|e| (e.label.clone(), e.normalized())).collect())
}

/// Runs a preset (`"fig2"` to `"fig9"`) or a JSON spec and returns its CSV.
#[pyfunction]
#[pyo3(signature = (experiment, seed = None, overrides = Vec::new()))]
fn run_experiment(py: Python<'_>, experiment: &str, seed: Option<u64>, overrides: Vec<String>) -> PyResult<String> {
    let mut spec = if experiment.trim_start().starts_with('{') {
        ExperimentSpec::from_json_str(experiment)
    } else {
        ExperimentSpec::resolve(experiment)
    }
    .map_err(to_py)?;
    if seed.is_some() {
        spec.seed = seed;
    }
    spec.overrides.extend(overrides);
    py.detach(|| run_spec(&spec)).map(|r| r.csv).map_err(to_py)
}

#[pymodule]
pub fn hapc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyAllocation>()?;
    m.add_class::<PySolution>()?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_function(wrap_pyfunction!(solve_fixed, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dynamic, m)?)?;
    m.add_function(wrap_pyfunction!(traditional_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(exhaustive_sic_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(grid_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
