//! Parameter sweeps producing plot-ready CSV.
//!
//! An [`ExperimentSpec`] names a scenario, one swept parameter, optional
//! series (extra overrides that each produce one curve) and the algorithms to
//! run at every point. Sweep points run in parallel; rows are always written
//! in sweep order so identical specs give byte-identical output.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamic_sic::algorithm2;
use crate::error::{Error, Result};
use crate::fixed_sic::algorithm1;
use crate::oracles::{audit_solution, exhaustive_sic_oracle, grid_oracle, traditional_sr_baseline};
use crate::ratemodel::{AllocationVars, SicOrdering};
use crate::scenario::{build_channel_gains, ChannelGains, Fading, ScenarioConfig};

/// First line of every CSV artifact.
pub const SCHEMA_LINE: &str = "# schema=1";
/// Default grid resolution of the grid oracle rows.
pub const DEFAULT_GRID_RESOLUTION: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// `P_p` in watts.
    PtPower,
    /// `Δ` in bit/s.
    MinPtGain,
    /// `η`.
    EhEfficiency,
    /// Factor applied to both circuit powers `ε_a` and `ε_b`.
    CircuitScale,
}

impl SweepVariable {
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> ScenarioConfig {
        let mut cfg = base.clone();
        match self {
            SweepVariable::PtPower => cfg.pt_power = value,
            SweepVariable::MinPtGain => cfg.min_pt_gain = value,
            SweepVariable::EhEfficiency => cfg.eh_efficiency = value,
            SweepVariable::CircuitScale => {
                cfg.ac_circuit_power *= value;
                cfg.bc_circuit_power *= value;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// SCA with PT-first decoding in every active slot.
    Fixed,
    /// Block coordinate descent over allocation and SIC ordering.
    Dynamic,
    /// Backscatter-only baseline.
    Traditional,
    /// Exhaustive ordering search and, for up to two SUs, the grid search.
    Oracles,
}

/// What [`run_experiment`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// One row per sweep value and algorithm.
    #[default]
    Sweep,
    /// One row per outer iteration of the fixed or dynamic algorithm.
    Trace,
    /// Fixed-ordering rates with and without SU-to-SU energy recycling.
    Recycling,
}

/// One curve: a label and scenario overrides applied before the sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    #[serde(default)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Scenario file; the built-in two-SU reference when absent.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    pub sweep: SweepVariable,
    pub values: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub mode: ExperimentMode,
    #[serde(default)]
    pub series: Vec<Series>,
    /// Overrides applied to the scenario before any series.
    #[serde(default)]
    pub overrides: Vec<String>,
    /// Seed of exponential fading; when set it replaces the scenario's fading.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
}

fn default_grid_resolution() -> usize {
    DEFAULT_GRID_RESOLUTION
}

impl ExperimentSpec {
    pub fn new(name: &str, sweep: SweepVariable, values: &[f64], algorithms: &[Algorithm]) -> Self {
        Self {
            name: name.to_string(),
            scenario: None,
            sweep,
            values: values.to_vec(),
            algorithms: algorithms.to_vec(),
            mode: ExperimentMode::Sweep,
            series: Vec::new(),
            overrides: Vec::new(),
            seed: None,
            output: None,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    /// A preset name, or else a path to a JSON spec.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            preset(name_or_path)
        } else if std::path::Path::new(name_or_path).exists() {
            Self::load(name_or_path)
        } else {
            Err(Error::Config(format!(
                "`{name_or_path}` is neither a preset ({}) nor a spec file",
                PRESETS.join(", ")
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("experiment name must not be empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite".into()));
        }
        if self.values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("sweep values must be sorted".into()));
        }
        if self.mode != ExperimentMode::Recycling && self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm is required".into()));
        }
        if self.mode == ExperimentMode::Trace
            && self.algorithms.iter().any(|a| !matches!(a, Algorithm::Fixed | Algorithm::Dynamic))
        {
            return Err(Error::Config("trace mode supports the fixed and dynamic algorithms only".into()));
        }
        if self.grid_resolution < 2 {
            return Err(Error::Config("grid_resolution must be at least 2".into()));
        }
        Ok(())
    }

    /// Base scenario with file, overrides and seed applied.
    pub fn base_scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.scenario {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::reference(),
        };
        for o in &self.overrides {
            cfg = cfg.with_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.fading = Fading::Exponential { seed };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn series_or_default(&self) -> Vec<Series> {
        if self.series.is_empty() {
            vec![Series { label: "base".into(), overrides: Vec::new() }]
        } else {
            self.series.clone()
        }
    }

    /// Scenario of every (series, sweep value) point, in output order.
    fn points(&self) -> Result<Vec<(String, f64, ScenarioConfig)>> {
        let base = self.base_scenario()?;
        let mut out = Vec::new();
        for s in self.series_or_default() {
            let mut cfg = base.clone();
            for o in &s.overrides {
                cfg = cfg.with_override(o)?;
            }
            for &v in &self.values {
                let c = self.sweep.apply(&cfg, v);
                c.validate()?;
                out.push((s.label.clone(), v, c));
            }
        }
        Ok(out)
    }
}

fn series(label: &str, overrides: &[&str]) -> Series {
    Series { label: label.into(), overrides: overrides.iter().map(|s| s.to_string()).collect() }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 8] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];

/// Built-in sweeps on the two-SU reference scenario.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    use Algorithm::*;
    use SweepVariable::*;
    let p_grid = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
    let delta_series = || vec![series("delta=1e3", &["min_pt_gain=1e3"]), series("delta=5e3", &["min_pt_gain=5e3"]), series("delta=1e4", &["min_pt_gain=1e4"])];
    let mut spec = match name {
        "fig2" => {
            let mut s = ExperimentSpec::new(name, PtPower, &[0.5, 1.0, 2.0], &[Fixed]);
            s.mode = ExperimentMode::Trace;
            s
        }
        "fig3" => {
            let mut s = ExperimentSpec::new(name, PtPower, &p_grid, &[Fixed, Traditional]);
            s.series = delta_series();
            s
        }
        "fig4" => {
            let mut s = ExperimentSpec::new(name, MinPtGain, &[1e3, 2e3, 5e3, 1e4, 2e4, 3e4], &[Fixed]);
            s.series = vec![series("pp=0.5", &["pt_power=0.5"]), series("pp=1", &["pt_power=1"]), series("pp=2", &["pt_power=2"])];
            s
        }
        "fig5" => {
            let mut s = ExperimentSpec::new(name, PtPower, &p_grid, &[Fixed]);
            s.series = delta_series();
            s
        }
        "fig6" => {
            let mut s = ExperimentSpec::new(name, EhEfficiency, &[0.4, 0.6, 0.8, 1.0], &[Fixed]);
            s.series = vec![
                series("eps=1e-5/1e-3", &[]),
                series("eps=2e-5/2e-3", &["bc_circuit_power=2e-5", "ac_circuit_power=2e-3"]),
                series("eps=5e-5/5e-3", &["bc_circuit_power=5e-5", "ac_circuit_power=5e-3"]),
            ];
            s
        }
        "fig7" => {
            let mut s = ExperimentSpec::new(name, PtPower, &p_grid, &[Fixed]);
            s.mode = ExperimentMode::Recycling;
            s.series = delta_series();
            s
        }
        "fig8" => {
            let mut s = ExperimentSpec::new(name, PtPower, &[0.5, 1.0, 2.0], &[Dynamic]);
            s.mode = ExperimentMode::Trace;
            s
        }
        "fig9" => ExperimentSpec::new(name, MinPtGain, &[1e3, 5e3, 1e4, 2e4, 3e4, 3.5e4, 3.8e4], &[Fixed, Dynamic, Traditional]),
        _ => return Err(Error::Config(format!("unknown experiment `{name}`; known: {}", PRESETS.join(", ")))),
    };
    spec.name = name.to_string();
    Ok(spec)
}

/// How a row ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Infeasible,
    Failed,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Infeasible => "infeasible",
            RowStatus::Failed => "failed",
        }
    }
}

/// One algorithm at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub series: String,
    pub sweep_value: f64,
    pub algorithm: String,
    pub status: RowStatus,
    pub total_su_rate: f64,
    pub pt_rate_gain: f64,
    pub vars: Option<AllocationVars>,
    pub iterations: usize,
    pub converged: bool,
    pub audit_pass: bool,
    /// Per-iteration objective, used by trace output.
    pub trace: Vec<f64>,
}

impl ResultRow {
    fn empty(series: &str, v: f64, algorithm: &str, status: RowStatus) -> Self {
        Self {
            series: series.into(),
            sweep_value: v,
            algorithm: algorithm.into(),
            status,
            total_su_rate: f64::NAN,
            pt_rate_gain: f64::NAN,
            vars: None,
            iterations: 0,
            converged: false,
            audit_pass: false,
            trace: Vec::new(),
        }
    }
}

/// Rows of an experiment plus its CSV rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub csv: String,
}

impl ExperimentReport {
    pub fn any_infeasible(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Infeasible)
    }

    pub fn any_audit_failure(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Ok && !r.audit_pass)
    }

    pub fn rows_for(&self, algorithm: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.algorithm == algorithm).collect()
    }
}

fn fmt(v: f64) -> String {
    if v.is_finite() { format!("{v:.11e}") } else { String::new() }
}

fn record(
    label: &str,
    v: f64,
    algorithm: &str,
    outcome: Result<(AllocationVars, SicOrdering, usize, bool, Vec<f64>)>,
    cfg: &ScenarioConfig,
    gains: &ChannelGains,
) -> Result<ResultRow> {
    match outcome {
        Ok((vars, ordering, iterations, converged, trace)) => {
            let audit = audit_solution(&vars, &ordering, cfg, gains);
            Ok(ResultRow {
                series: label.into(),
                sweep_value: v,
                algorithm: algorithm.into(),
                status: RowStatus::Ok,
                total_su_rate: crate::ratemodel::total_su_rate(&vars, &ordering, gains, cfg)?,
                pt_rate_gain: crate::ratemodel::pt_rate_gain(&vars, &ordering, gains, cfg)?,
                vars: Some(vars),
                iterations,
                converged,
                audit_pass: audit.passes(),
                trace,
            })
        }
        Err(e) if e.is_infeasible() => Ok(ResultRow::empty(label, v, algorithm, RowStatus::Infeasible)),
        Err(e @ Error::Config(_)) => Err(e),
        Err(e) => {
            log::warn!("{algorithm} at {v}: {e}");
            Ok(ResultRow::empty(label, v, algorithm, RowStatus::Failed))
        }
    }
}

fn evaluate(spec: &ExperimentSpec, label: &str, v: f64, cfg: &ScenarioConfig) -> Result<Vec<ResultRow>> {
    let gains = build_channel_gains(cfg)?;
    let k = gains.num_sus();
    let mut rows = Vec::new();
    for alg in &spec.algorithms {
        match alg {
            Algorithm::Fixed => {
                let out = algorithm1(cfg, &gains).map(|s| {
                    let trace = s.objective_trace();
                    (s.vars, SicOrdering::all_pt_first(k), s.sca_trace.len(), s.converged, trace)
                });
                rows.push(record(label, v, "fixed", out, cfg, &gains)?);
            }
            Algorithm::Dynamic => {
                let out = algorithm2(cfg, &gains).map(|s| {
                    let trace = s.objective_trace();
                    (s.vars, s.ordering, s.bcd_trace.len(), s.converged, trace)
                });
                rows.push(record(label, v, "dynamic", out, cfg, &gains)?);
            }
            Algorithm::Traditional => {
                let out = traditional_sr_baseline(cfg, &gains).map(|s| {
                    let vars = s.vars(cfg);
                    (vars, SicOrdering::all_pt_first(k), 1, s.status == crate::cvxcore::SolveStatus::Optimal, Vec::new())
                });
                rows.push(record(label, v, "traditional", out, cfg, &gains)?);
            }
            Algorithm::Oracles => {
                let out = exhaustive_sic_oracle(cfg, &gains).and_then(|r| {
                    let best = r.candidates.into_iter().filter(|c| c.rate.is_some()).max_by(|a, b| {
                        a.rate.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.rate.unwrap_or(f64::NEG_INFINITY))
                    });
                    match best {
                        Some(c) => Ok((c.vars.unwrap_or_else(|| AllocationVars::zeros(k)), c.ordering, 1usize << k, true, Vec::new())),
                        None => Err(Error::Infeasible("no ordering is feasible".into())),
                    }
                });
                rows.push(record(label, v, "exhaustive_sic", out, cfg, &gains)?);
                if k <= 2 {
                    let out = grid_oracle(cfg, &gains, spec.grid_resolution).and_then(|g| match g.vars {
                        Some(vars) => Ok((vars, SicOrdering::all_pt_first(k), g.points as usize, true, Vec::new())),
                        None => Err(Error::Infeasible("no feasible grid point".into())),
                    });
                    rows.push(record(label, v, "grid", out, cfg, &gains)?);
                }
            }
        }
    }
    Ok(rows)
}

fn sweep_header(k: usize) -> String {
    let mut h = String::from("series,sweep_value,algorithm,status,total_su_rate,pt_rate_gain,T_a,T_b");
    for name in ["tau", "t", "beta", "p_tr"] {
        for i in 1..=k {
            let _ = write!(h, ",{name}{i}");
        }
    }
    h.push_str(",iterations,converged,audit_pass\n");
    h
}

fn sweep_line(r: &ResultRow, k: usize) -> String {
    let mut s = format!(
        "{},{},{},{},{},{}",
        r.series,
        fmt(r.sweep_value),
        r.algorithm,
        r.status.as_str(),
        fmt(r.total_su_rate),
        fmt(r.pt_rate_gain)
    );
    match &r.vars {
        Some(v) => {
            let _ = write!(s, ",{},{}", fmt(v.t_a), fmt(v.t_b));
            for vec in [&v.tau, &v.t, &v.beta, &v.p_tr] {
                for x in vec.iter() {
                    let _ = write!(s, ",{}", fmt(*x));
                }
            }
        }
        None => s.push_str(&",".repeat(2 + 4 * k)),
    }
    let _ = writeln!(s, ",{},{},{}", r.iterations, u8::from(r.converged), u8::from(r.audit_pass));
    s
}

/// Runs every point of `spec` and renders CSV for its mode.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    if spec.mode == ExperimentMode::Recycling {
        return compare_recycling(spec);
    }
    let points = spec.points()?;
    let k = spec.base_scenario()?.num_sus;
    let per_point: Vec<Vec<ResultRow>> =
        points.par_iter().map(|(label, v, cfg)| evaluate(spec, label, *v, cfg)).collect::<Result<_>>()?;
    let rows: Vec<ResultRow> = per_point.into_iter().flatten().collect();
    let mut csv = format!("{SCHEMA_LINE}\n");
    match spec.mode {
        ExperimentMode::Trace => {
            csv.push_str("series,sweep_value,algorithm,status,iteration,total_su_rate\n");
            for r in &rows {
                if r.trace.is_empty() {
                    let _ = writeln!(csv, "{},{},{},{},,", r.series, fmt(r.sweep_value), r.algorithm, r.status.as_str());
                }
                for (i, obj) in r.trace.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{},{},{},{}", r.series, fmt(r.sweep_value), r.algorithm, r.status.as_str(), i + 1, fmt(*obj));
                }
            }
        }
        _ => {
            csv.push_str(&sweep_header(k));
            for r in &rows {
                csv.push_str(&sweep_line(r, k));
            }
        }
    }
    Ok(ExperimentReport { rows, csv })
}

/// Fixed-ordering rate of every point with the SU-to-SU links on and off.
pub fn compare_recycling(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let points = spec.points()?;
    let pairs: Vec<(ResultRow, ResultRow)> = points
        .par_iter()
        .map(|(label, v, cfg)| -> Result<(ResultRow, ResultRow)> {
            let gains = build_channel_gains(cfg)?;
            let k = gains.num_sus();
            let run = |g: &ChannelGains, name: &str| {
                let out = algorithm1(cfg, g).map(|s| {
                    let trace = s.objective_trace();
                    (s.vars, SicOrdering::all_pt_first(k), s.sca_trace.len(), s.converged, trace)
                });
                record(label, *v, name, out, cfg, g)
            };
            Ok((run(&gains, "recycling")?, run(&gains.without_recycling(), "no_recycling")?))
        })
        .collect::<Result<_>>()?;
    let mut csv = format!("{SCHEMA_LINE}\nseries,sweep_value,status,rate_with_recycling,rate_without_recycling\n");
    let mut rows = Vec::with_capacity(2 * pairs.len());
    for (with, without) in pairs {
        let status = if with.status == RowStatus::Ok && without.status == RowStatus::Ok { with.status } else if with.status == RowStatus::Ok { without.status } else { with.status };
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            with.series,
            fmt(with.sweep_value),
            status.as_str(),
            fmt(with.total_su_rate),
            fmt(without.total_su_rate)
        );
        rows.push(with);
        rows.push(without);
    }
    Ok(ExperimentReport { rows, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(csv: &str, name: &str) -> Vec<String> {
        let mut lines = csv.lines().skip(1);
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let idx = header.iter().position(|h| *h == name).unwrap();
        lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let spec = ExperimentSpec::new("empty", SweepVariable::PtPower, &[], &[Algorithm::Fixed]);
        let r = run_experiment(&spec).unwrap();
        assert_eq!(r.csv.lines().count(), 2);
        assert!(r.csv.starts_with(SCHEMA_LINE));
        assert!(r.csv.lines().nth(1).unwrap().starts_with("series,sweep_value,algorithm,status"));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let unsorted = ExperimentSpec::new("x", SweepVariable::PtPower, &[2.0, 1.0], &[Algorithm::Fixed]);
        assert!(unsorted.validate().is_err());
        let nan = ExperimentSpec::new("x", SweepVariable::PtPower, &[f64::NAN], &[Algorithm::Fixed]);
        assert!(nan.validate().is_err());
        let unnamed = ExperimentSpec::new(" ", SweepVariable::PtPower, &[1.0], &[Algorithm::Fixed]);
        assert!(unnamed.validate().is_err());
        let mut trace = ExperimentSpec::new("x", SweepVariable::PtPower, &[1.0], &[Algorithm::Traditional]);
        trace.mode = ExperimentMode::Trace;
        assert!(trace.validate().is_err());
        assert!(preset("fig99").is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = preset("fig3").unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(ExperimentSpec::from_json_str(&json).unwrap(), spec);
        let minimal = r#"{"name":"m","sweep":"min_pt_gain","values":[1e3],"algorithms":["fixed","oracles"]}"#;
        let m = ExperimentSpec::from_json_str(minimal).unwrap();
        assert_eq!(m.grid_resolution, DEFAULT_GRID_RESOLUTION);
        assert_eq!(m.mode, ExperimentMode::Sweep);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut spec = ExperimentSpec::new("seeded", SweepVariable::MinPtGain, &[1e3, 1e4], &[Algorithm::Fixed, Algorithm::Dynamic]);
        spec.seed = Some(7);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.csv, b.csv);
        spec.seed = Some(8);
        assert_ne!(run_experiment(&spec).unwrap().csv, a.csv);
    }

    #[test]
    fn fixed_traces_converge_quickly() {
        let r = run_experiment(&preset("fig2").unwrap()).unwrap();
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows {
            assert!(row.converged && row.trace.len() <= 10, "{row:?}");
            assert!(row.trace.windows(2).all(|w| w[1] >= w[0]));
        }
        assert_eq!(column(&r.csv, "iteration").len(), r.rows.iter().map(|x| x.trace.len()).sum::<usize>());
    }

    #[test]
    fn rate_falls_with_the_gain_target() {
        let r = run_experiment(&preset("fig4").unwrap()).unwrap();
        for label in ["pp=0.5", "pp=1", "pp=2"] {
            let rates: Vec<f64> = r.rows.iter().filter(|x| x.series == label).map(|x| x.total_su_rate).collect();
            assert_eq!(rates.len(), 6);
            assert!(rates.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)), "{label}: {rates:?}");
        }
        assert!(!r.any_audit_failure());
    }

    #[test]
    fn infeasible_rows_keep_going() {
        let spec = ExperimentSpec::new("edge", SweepVariable::MinPtGain, &[1e3, 1e7], &[Algorithm::Fixed]);
        let r = run_experiment(&spec).unwrap();
        assert!(r.any_infeasible());
        let status = column(&r.csv, "status");
        assert_eq!(status, ["ok", "infeasible"]);
        assert_eq!(column(&r.csv, "total_su_rate")[1], "");
        let fields = r.csv.lines().last().unwrap().split(',').count();
        assert_eq!(fields, r.csv.lines().nth(1).unwrap().split(',').count());
    }

    #[test]
    fn oracle_rows() {
        let spec = ExperimentSpec::new("oracles", SweepVariable::MinPtGain, &[1e4], &[Algorithm::Oracles]);
        let r = run_experiment(&spec).unwrap();
        assert_eq!(column(&r.csv, "algorithm"), ["exhaustive_sic", "grid"]);
        let ex = &r.rows_for("exhaustive_sic")[0];
        let grid = &r.rows_for("grid")[0];
        assert!(grid.total_su_rate <= ex.total_su_rate * 1.02);
    }

    #[test]
    fn circuit_scale_multiplies_both_powers() {
        let base = ScenarioConfig::reference();
        let c = SweepVariable::CircuitScale.apply(&base, 3.0);
        assert_eq!(c.ac_circuit_power, 3.0 * base.ac_circuit_power);
        assert_eq!(c.bc_circuit_power, 3.0 * base.bc_circuit_power);
    }

    #[test]
    fn recycling_never_hurts() {
        let mut spec = preset("fig7").unwrap();
        spec.values = vec![0.5, 2.0];
        let r = compare_recycling(&spec).unwrap();
        let with = column(&r.csv, "rate_with_recycling");
        let without = column(&r.csv, "rate_without_recycling");
        for (a, b) in with.iter().zip(&without) {
            assert!(a.parse::<f64>().unwrap() >= b.parse::<f64>().unwrap());
        }
    }

    #[test]
    fn single_su_recycling_columns_agree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("single.json");
        std::fs::write(&path, ScenarioConfig::reference_single().to_json_string()).unwrap();
        let mut spec = ExperimentSpec::new("single", SweepVariable::PtPower, &[1.0], &[Algorithm::Fixed]);
        spec.mode = ExperimentMode::Recycling;
        spec.scenario = Some(path);
        let r = run_experiment(&spec).unwrap();
        assert_eq!(column(&r.csv, "rate_with_recycling"), column(&r.csv, "rate_without_recycling"));
    }
}
