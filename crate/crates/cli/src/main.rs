use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hapc_core::dynamic_sic::algorithm2;
use hapc_core::experiment::{run_experiment, ExperimentMode, ExperimentReport, ExperimentSpec, DEFAULT_GRID_RESOLUTION};
use hapc_core::fixed_sic::{algorithm1, audit_with_ordering};
use hapc_core::oracles::{audit_solution, exhaustive_sic_oracle, grid_oracle, traditional_sr_baseline};
use hapc_core::ratemodel::{AllocationVars, SicOrdering};
use hapc_core::scenario::{build_channel_gains, ChannelGains, Fading, ScenarioConfig};
use hapc_core::{Error, Result};
use serde_json::{json, Value};

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_AUDIT: u8 = 3;

/// Resource allocation experiments for symbiotic radio with hybrid active-passive SUs.
#[derive(Parser)]
#[command(name = "hapc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write one CSV row per sweep value and algorithm.
    Run(ExperimentArgs),
    /// Run a sweep in trace mode and write per-iteration objectives.
    Trace(ExperimentArgs),
    /// Solve one scenario with both algorithms and print a JSON slack report.
    Audit(ScenarioArgs),
    /// Run the baseline, the exhaustive ordering search and the grid search on one scenario.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Points per grid dimension.
        #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
        resolution: usize,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file; the built-in two-SU reference when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Seed of exponential small-scale fading.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario override such as `pt_power=2` or `sca.tol=1e-8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Preset name (fig2 to fig9) or path to an experiment JSON file.
    #[arg(long)]
    experiment: String,
    #[command(flatten)]
    scenario: ScenarioArgs,
}

impl ScenarioArgs {
    fn config(&self) -> Result<ScenarioConfig> {
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

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

impl ExperimentArgs {
    fn spec(&self, mode: Option<ExperimentMode>) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::resolve(&self.experiment)?;
        if let Some(p) = &self.scenario.scenario {
            spec.scenario = Some(p.clone());
        }
        if self.scenario.seed.is_some() {
            spec.seed = self.scenario.seed;
        }
        spec.overrides.extend(self.scenario.overrides.iter().cloned());
        if let Some(m) = mode {
            spec.mode = m;
        }
        Ok(spec)
    }
}

fn report_exit(report: &ExperimentReport) -> u8 {
    if report.any_audit_failure() {
        EXIT_AUDIT
    } else if report.any_infeasible() {
        EXIT_INFEASIBLE
    } else {
        0
    }
}

fn run(args: &ExperimentArgs, mode: Option<ExperimentMode>) -> Result<u8> {
    let spec = args.spec(mode)?;
    log::info!("running experiment {}", spec.name);
    let report = run_experiment(&spec)?;
    let out = args.scenario.out.clone().or_else(|| spec.output.clone());
    match out {
        Some(p) => std::fs::write(&p, &report.csv).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        None => print!("{}", report.csv),
    }
    Ok(report_exit(&report))
}

fn allocation_json(v: &AllocationVars) -> Value {
    json!({ "T_a": v.t_a, "T_b": v.t_b, "tau": v.tau, "t": v.t, "beta": v.beta, "p_tr": v.p_tr })
}

fn solved_json(name: &str, vars: &AllocationVars, ordering: &SicOrdering, cfg: &ScenarioConfig, g: &ChannelGains) -> Result<(Value, bool)> {
    let report = audit_solution(vars, ordering, cfg, g);
    let tight = audit_with_ordering(vars, ordering, cfg, g)?;
    let worst = report.worst().map(|e| json!({ "label": e.label, "normalized_slack": e.normalized() }));
    let slacks: serde_json::Map<String, Value> = report.entries.iter().map(|e| (e.label.clone(), json!(e.normalized()))).collect();
    let pass = report.passes();
    Ok((
        json!({
            "algorithm": name,
            "status": "ok",
            "total_su_rate": hapc_core::ratemodel::total_su_rate(vars, ordering, g, cfg)?,
            "pt_rate_gain": hapc_core::ratemodel::pt_rate_gain(vars, ordering, g, cfg)?,
            "ordering": { "alpha_b": ordering.alpha_b, "alpha_a": ordering.alpha_a },
            "allocation": allocation_json(vars),
            "audit_pass": pass,
            "worst_slack": worst,
            "time_slack": tight.time_slack,
            "min_tightness_slack": tight.min_normalized_slack(),
            "slacks": slacks,
        }),
        pass,
    ))
}

fn failed_json(name: &str, e: &Error) -> Value {
    let status = if e.is_infeasible() { "infeasible" } else { "failed" };
    json!({ "algorithm": name, "status": status, "error": e.to_string() })
}

fn audit(args: &ScenarioArgs) -> Result<u8> {
    let cfg = args.config()?;
    let g = build_channel_gains(&cfg)?;
    let mut runs = Vec::new();
    let (mut infeasible, mut failed_audit) = (false, false);
    let k = g.num_sus();
    let solved = [
        ("fixed", algorithm1(&cfg, &g).map(|s| (s.vars, SicOrdering::all_pt_first(k)))),
        ("dynamic", algorithm2(&cfg, &g).map(|s| (s.vars, s.ordering))),
    ];
    for (name, out) in solved {
        match out {
            Ok((vars, ordering)) => {
                let (v, pass) = solved_json(name, &vars, &ordering, &cfg, &g)?;
                failed_audit |= !pass;
                runs.push(v);
            }
            Err(e) if e.is_infeasible() => {
                infeasible = true;
                runs.push(failed_json(name, &e));
            }
            Err(e) => return Err(e),
        }
    }
    args.emit(&format!("{}\n", serde_json::to_string_pretty(&json!({ "schema": 1, "runs": runs }))?))?;
    Ok(if failed_audit { EXIT_AUDIT } else if infeasible { EXIT_INFEASIBLE } else { 0 })
}

fn oracle(args: &ScenarioArgs, resolution: usize) -> Result<u8> {
    let cfg = args.config()?;
    let g = build_channel_gains(&cfg)?;
    let k = g.num_sus();
    let mut infeasible = false;
    let baseline = match traditional_sr_baseline(&cfg, &g) {
        Ok(b) => json!({ "status": "ok", "rate": b.rate, "pt_rate_gain": b.pt_rate_gain, "tau": b.tau, "beta": b.beta }),
        Err(e) if e.is_infeasible() => {
            infeasible = true;
            failed_json("traditional", &e)
        }
        Err(e) => return Err(e),
    };
    let ex = exhaustive_sic_oracle(&cfg, &g)?;
    infeasible |= ex.ordering.is_none();
    let candidates: Vec<Value> = ex
        .candidates
        .iter()
        .map(|c| json!({ "alpha_a": c.ordering.alpha_a, "rate": c.rate }))
        .collect();
    let exhaustive = json!({
        "ordering": ex.ordering.as_ref().map(|o| json!({ "alpha_b": o.alpha_b, "alpha_a": o.alpha_a })),
        "rate": if ex.rate.is_finite() { json!(ex.rate) } else { Value::Null },
        "candidates": candidates,
    });
    let grid = if k <= 2 {
        let r = grid_oracle(&cfg, &g, resolution)?;
        infeasible |= r.vars.is_none();
        json!({
            "resolution": resolution,
            "points": r.points,
            "objective": if r.objective.is_finite() { json!(r.objective) } else { Value::Null },
            "allocation": r.vars.as_ref().map(allocation_json),
        })
    } else {
        Value::Null
    };
    let doc = json!({ "schema": 1, "baseline": baseline, "exhaustive_sic": exhaustive, "grid": grid });
    args.emit(&format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    Ok(if infeasible { EXIT_INFEASIBLE } else { 0 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a, None),
        Command::Trace(a) => run(a, Some(ExperimentMode::Trace)),
        Command::Audit(a) => audit(a),
        Command::Oracle { scenario, resolution } => oracle(scenario, *resolution),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("hapc: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
