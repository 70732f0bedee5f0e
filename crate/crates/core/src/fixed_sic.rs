//! Total-rate maximization with PT-first SIC in every active slot.
//!
//! The interference term of the PT's active-phase rate is replaced by its
//! tangent at an anchor power, which lower-bounds it because the function is
//! convex in the SU power. With `q_i = τ_i β_i` and `z_i = t_i P_tr,i` every
//! remaining term is a perspective of a concave function, so each anchor gives
//! a program for [`cvxcore`](crate::cvxcore). Re-anchoring at the recovered
//! power yields a monotone successive convex approximation.

use serde::{Deserialize, Serialize};

use crate::cvxcore::{self, ConcaveFn, Kernel, Sense, SmoothConcaveProgram, SolveStatus, Term};
use crate::error::{Error, Result};
use crate::ratemodel::{
    energy_report, pt_rate_gain, reference_log2, total_su_rate, AcDecode, AllocationVars, ScatterRule, SicOrdering,
};
use crate::scenario::{ChannelGains, ScenarioConfig};

/// Active time below which an SU is treated as silent and its power as zero.
pub const T_FLOOR: f64 = 1e-9;
/// Relative tolerance of the proposition audit.
pub const AUDIT_TOL: f64 = 1e-4;

/// Index map of the continuous program's variables `(τ, t, q, z, T_a, T_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub k: usize,
}

impl Layout {
    pub fn tau(&self, i: usize) -> usize {
        i
    }
    pub fn t(&self, i: usize) -> usize {
        self.k + i
    }
    pub fn q(&self, i: usize) -> usize {
        2 * self.k + i
    }
    pub fn z(&self, i: usize) -> usize {
        3 * self.k + i
    }
    pub fn t_a(&self) -> usize {
        4 * self.k
    }
    pub fn t_b(&self) -> usize {
        4 * self.k + 1
    }
    pub fn n(&self) -> usize {
        4 * self.k + 2
    }

    /// Packs raw allocation variables into a program vector.
    pub fn pack(&self, v: &AllocationVars) -> Vec<f64> {
        let mut x = vec![0.0; self.n()];
        for i in 0..self.k {
            x[self.tau(i)] = v.tau[i];
            x[self.t(i)] = v.t[i];
            x[self.q(i)] = v.tau[i] * v.beta[i];
            x[self.z(i)] = v.t[i] * v.p_tr[i];
        }
        x[self.t_a()] = v.t_a;
        x[self.t_b()] = v.t_b;
        x
    }

    /// Recovers `(vars, q, z)` with `β = q/τ` and `P_tr = z/t`.
    pub fn recover(&self, x: &[f64]) -> (AllocationVars, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut v = AllocationVars::zeros(k);
        let mut q = vec![0.0; k];
        let mut z = vec![0.0; k];
        for i in 0..k {
            let tau = x[self.tau(i)].max(0.0);
            let t = x[self.t(i)].max(0.0);
            q[i] = x[self.q(i)].clamp(0.0, tau);
            z[i] = x[self.z(i)].max(0.0);
            v.tau[i] = tau;
            v.t[i] = t;
            v.beta[i] = if tau > 0.0 { (q[i] / tau).clamp(0.0, 1.0) } else { 0.0 };
            v.p_tr[i] = if t >= T_FLOOR { z[i] / t } else { 0.0 };
        }
        v.t_a = x[self.t_a()].max(0.0);
        v.t_b = x[self.t_b()].max(0.0);
        (v, q, z)
    }
}

/// Linearization powers `P_tr,i^(L)` of the PT-first interference term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P3Anchor {
    pub p_tr_anchor: Vec<f64>,
}

impl P3Anchor {
    /// Average harvestable power `η P_p a_i` of each SU.
    pub fn initial(cfg: &ScenarioConfig, gains: &ChannelGains) -> Self {
        Self { p_tr_anchor: gains.a.iter().map(|a| cfg.eh_efficiency * cfg.pt_power * a).collect() }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.p_tr_anchor.len() != k || self.p_tr_anchor.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("anchor powers must be K finite nonnegative values".into()));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.p_tr_anchor.iter().map(|p| p * p).sum::<f64>().sqrt()
    }
}

/// PT rate in an active slot under PT-first decoding, `W t log₂(1 + P_p b/(σ² + P d))`.
pub fn f_pt_ac(i: usize, p_tr: f64, t: f64, gains: &ChannelGains, cfg: &ScenarioConfig) -> f64 {
    let s2 = cfg.noise_power();
    cfg.bandwidth * t * (1.0 + cfg.pt_power * gains.b / (s2 + p_tr * gains.d[i])).log2()
}

/// Derivative of [`f_pt_ac`] in the SU power.
pub fn f_prime_pt_ac(i: usize, p_tr: f64, t: f64, gains: &ChannelGains, cfg: &ScenarioConfig) -> f64 {
    let s2 = cfg.noise_power();
    let (pb, d) = (cfg.pt_power * gains.b, gains.d[i]);
    let den = s2 + p_tr * d;
    -cfg.bandwidth * t * pb * d / (std::f64::consts::LN_2 * (den + pb) * den)
}

/// Tangent of [`f_pt_ac`] at `anchor`, evaluated at `p_tr`; never above the function.
pub fn taylor_lower_bound(i: usize, p_tr: f64, anchor: f64, t: f64, gains: &ChannelGains, cfg: &ScenarioConfig) -> f64 {
    f_pt_ac(i, anchor, t, gains, cfg) + f_prime_pt_ac(i, anchor, t, gains, cfg) * (p_tr - anchor)
}

/// Builds the convex program for a committed per-slot ordering.
pub(crate) fn assemble_continuous(
    cfg: &ScenarioConfig,
    gains: &ChannelGains,
    decodes: &[AcDecode],
    anchor: &P3Anchor,
) -> Result<SmoothConcaveProgram> {
    let k = gains.num_sus();
    if decodes.len() != k {
        return Err(Error::Config("ordering must cover every SU".into()));
    }
    anchor.validate(k)?;
    let lay = Layout { k };
    let s2 = cfg.noise_power();
    let (w, n_sf, pp, eta) = (cfg.bandwidth, f64::from(cfg.spreading_factor), cfg.pt_power, cfg.eh_efficiency);
    let horizon = cfg.block_duration;
    let rule = ScatterRule::new(cfg.quadrature_order)?;
    let r0 = reference_log2(gains, cfg);

    let mut p = SmoothConcaveProgram::new(lay.n());
    for i in 0..k {
        let s = i + 1;
        p.name(lay.tau(i), format!("tau{s}")).bounds(lay.tau(i), 0.0, horizon);
        p.name(lay.t(i), format!("t{s}")).bounds(lay.t(i), 0.0, horizon);
        p.name(lay.q(i), format!("q{s}")).bounds(lay.q(i), 0.0, horizon);
        p.name(lay.z(i), format!("z{s}")).bounds(lay.z(i), 0.0, f64::INFINITY);
    }
    p.name(lay.t_a(), "T_a").bounds(lay.t_a(), 0.0, horizon);
    p.name(lay.t_b(), "T_b").bounds(lay.t_b(), 0.0, horizon);

    let mut objective = ConcaveFn::new();
    let mut gain = ConcaveFn { terms: Vec::new(), constant: -cfg.min_pt_gain };
    for i in 0..k {
        let ad = gains.a[i] * gains.d[i];
        objective.push(Term::Perspective {
            num: lay.q(i),
            den: lay.tau(i),
            scale: w / n_sf,
            kernel: Kernel::Log2Affine { gain: n_sf * pp * ad / s2 },
        });
        let ac_gain = match decodes[i] {
            AcDecode::PtFirst => gains.d[i] / s2,
            AcDecode::SuFirst => gains.d[i] / (pp * gains.b + s2),
        };
        objective.push(Term::Perspective { num: lay.z(i), den: lay.t(i), scale: w, kernel: Kernel::Log2Affine { gain: ac_gain } });

        gain.push(Term::Perspective {
            num: lay.q(i),
            den: lay.tau(i),
            scale: w,
            kernel: Kernel::ScatterLog2 { rule: rule.clone(), rho_b: pp * gains.b / s2, rho_s: pp * ad / s2 },
        });
        gain.push(Term::Linear { coeffs: vec![(lay.tau(i), -w * r0)] });
        if decodes[i] == AcDecode::PtFirst {
            let pl = anchor.p_tr_anchor[i];
            let slope = f_prime_pt_ac(i, pl, 1.0, gains, cfg);
            let at_anchor = f_pt_ac(i, pl, 1.0, gains, cfg);
            gain.push(Term::Linear { coeffs: vec![(lay.z(i), slope), (lay.t(i), at_anchor - slope * pl - w * r0)] });
        }
    }
    p.maximize(objective);
    p.add_smooth("rate_gain", gain);

    for i in 0..k {
        let s = i + 1;
        let mut row = vec![
            (lay.t_b(), eta * pp * gains.a[i]),
            (lay.t_a(), eta * pp * gains.a[i]),
            (lay.q(i), -eta * pp * gains.a[i]),
            (lay.t(i), -eta * pp * gains.a[i] - cfg.ac_circuit_power),
            (lay.tau(i), -cfg.bc_circuit_power),
            (lay.z(i), -1.0),
        ];
        for j in (0..k).filter(|&j| j != i) {
            row.push((lay.q(j), eta * pp * gains.a[j] * gains.f[j][i]));
            row.push((lay.z(j), eta * gains.f[j][i]));
        }
        p.add_linear(format!("energy{s}"), row, Sense::Ge, 0.0);
        p.add_linear(format!("reflect{s}"), vec![(lay.q(i), 1.0), (lay.tau(i), -1.0)], Sense::Le, 0.0);
    }
    let mut bc_row: Vec<(usize, f64)> = (0..k).map(|i| (lay.tau(i), 1.0)).collect();
    bc_row.push((lay.t_b(), -1.0));
    p.add_linear("bc_phase", bc_row, Sense::Le, 0.0);
    let mut ac_row: Vec<(usize, f64)> = (0..k).map(|i| (lay.t(i), 1.0)).collect();
    ac_row.push((lay.t_a(), -1.0));
    p.add_linear("ac_phase", ac_row, Sense::Le, 0.0);
    p.add_linear("block", vec![(lay.t_a(), 1.0), (lay.t_b(), 1.0)], Sense::Le, horizon);
    p.with_start(default_start(cfg, lay));
    Ok(p)
}

/// A symmetric interior guess: phases just under half the block, slots sharing them evenly.
fn default_start(cfg: &ScenarioConfig, lay: Layout) -> Vec<f64> {
    let k = lay.k as f64;
    let half = 0.45 * cfg.block_duration;
    let mut x = vec![0.0; lay.n()];
    for i in 0..lay.k {
        x[lay.tau(i)] = 0.8 * half / k;
        x[lay.t(i)] = 0.8 * half / k;
        x[lay.q(i)] = 0.4 * half / k;
        x[lay.z(i)] = 1e-3 * half / k;
    }
    x[lay.t_a()] = half;
    x[lay.t_b()] = half;
    x
}

/// The fixed-ordering program at `anchor`.
pub fn assemble_p3(cfg: &ScenarioConfig, gains: &ChannelGains, anchor: &P3Anchor) -> Result<SmoothConcaveProgram> {
    assemble_continuous(cfg, gains, &vec![AcDecode::PtFirst; gains.num_sus()], anchor)
}

/// One outer iteration of the successive convex approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaIteration {
    pub iteration: usize,
    pub objective: f64,
    pub anchor_norm: f64,
    pub rate_gain_slack: f64,
    pub min_energy_slack: f64,
    pub solver_iterations: usize,
}

/// Result of [`sca_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<ScaIteration>,
    pub anchor: P3Anchor,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// SCA on the continuous program for a committed ordering, from an optional
/// warm start and a given anchor.
pub fn sca_solve(
    cfg: &ScenarioConfig,
    gains: &ChannelGains,
    decodes: &[AcDecode],
    start: Option<&[f64]>,
    anchor: P3Anchor,
) -> Result<ScaOutcome> {
    let lay = Layout { k: gains.num_sus() };
    let mut anchor = anchor;
    let mut start = start.map(<[f64]>::to_vec);
    let mut best: Option<ScaOutcome> = None;
    for iteration in 1..=cfg.sca.max_iter {
        let mut prog = assemble_continuous(cfg, gains, decodes, &anchor)?;
        if let Some(s) = &start {
            prog.with_start(s.clone());
        }
        let sol = cvxcore::solve(&prog, &cfg.solver)?.feasible()?;
        if sol.status != SolveStatus::Optimal {
            log::warn!("SCA iteration {iteration}: solver stopped with {:?}", sol.status);
        }
        let rate_gain_slack = prog.smooth[0].g.value(&sol.x);
        let min_energy_slack = prog
            .linear
            .iter()
            .filter(|r| r.label.starts_with("energy"))
            .map(|r| r.slack(&sol.x))
            .fold(f64::INFINITY, f64::min);
        let row = ScaIteration {
            iteration,
            objective: sol.objective_value,
            anchor_norm: anchor.norm(),
            rate_gain_slack,
            min_energy_slack,
            solver_iterations: sol.iterations,
        };
        let (vars, _, _) = lay.recover(&sol.x);
        let next_anchor = P3Anchor { p_tr_anchor: vars.p_tr.clone() };
        match best.as_mut() {
            None => {
                best = Some(ScaOutcome {
                    x: sol.x.clone(),
                    objective: sol.objective_value,
                    trace: vec![row],
                    anchor: next_anchor.clone(),
                    converged: false,
                    kkt_residual: sol.kkt_residual,
                });
            }
            Some(b) => {
                let prev = b.objective;
                if sol.objective_value < prev {
                    // The previous point stays feasible after re-anchoring, so a drop is solver noise.
                    log::debug!("SCA iteration {iteration}: objective fell by {:.3e}; keeping incumbent", prev - sol.objective_value);
                    b.trace.push(ScaIteration { objective: prev, ..row });
                    b.converged = true;
                    break;
                }
                b.x = sol.x.clone();
                b.objective = sol.objective_value;
                b.trace.push(row);
                b.anchor = next_anchor.clone();
                b.kkt_residual = sol.kkt_residual;
                if (sol.objective_value - prev).abs() <= cfg.sca.tol * prev.abs().max(1e-12) {
                    b.converged = true;
                    break;
                }
            }
        }
        start = Some(sol.x);
        anchor = next_anchor;
    }
    let out = best.ok_or_else(|| Error::Config("sca.max_iter must be positive".into()))?;
    debug_assert!(out.trace.windows(2).all(|w| w[1].objective >= w[0].objective - 1e-9 * w[0].objective.abs()));
    Ok(out)
}

/// Output of [`algorithm1`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSicSolution {
    pub vars: AllocationVars,
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub total_su_rate: f64,
    pub pt_rate_gain: f64,
    pub sca_trace: Vec<ScaIteration>,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl FixedSicSolution {
    pub fn iterations(&self) -> usize {
        self.sca_trace.len()
    }

    pub fn objective_trace(&self) -> Vec<f64> {
        self.sca_trace.iter().map(|r| r.objective).collect()
    }
}

pub(crate) fn finish_fixed(cfg: &ScenarioConfig, gains: &ChannelGains, out: ScaOutcome) -> Result<FixedSicSolution> {
    let lay = Layout { k: gains.num_sus() };
    let (vars, q, z) = lay.recover(&out.x);
    let ordering = SicOrdering::all_pt_first(lay.k);
    Ok(FixedSicSolution {
        total_su_rate: total_su_rate(&vars, &ordering, gains, cfg)?,
        pt_rate_gain: pt_rate_gain(&vars, &ordering, gains, cfg)?,
        vars,
        q,
        z,
        sca_trace: out.trace,
        converged: out.converged,
        kkt_residual: out.kkt_residual,
    })
}

/// SCA for the fixed PT-first ordering, starting from [`P3Anchor::initial`].
pub fn algorithm1(cfg: &ScenarioConfig, gains: &ChannelGains) -> Result<FixedSicSolution> {
    cfg.validate()?;
    let k = gains.num_sus();
    let out = sca_solve(cfg, gains, &vec![AcDecode::PtFirst; k], None, P3Anchor::initial(cfg, gains))?;
    finish_fixed(cfg, gains, out)
}

/// Tightness of the rate-gain, energy and block-time constraints at a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionAudit {
    pub rate_gain_slack: f64,
    pub rate_gain_scale: f64,
    pub energy_slack: Vec<f64>,
    pub energy_scale: Vec<f64>,
    /// `T − (T_a + T_b)`.
    pub time_slack: f64,
    /// Some rate-gain or energy constraint is tight.
    pub prop1: bool,
    /// The whole block is used.
    pub prop2: bool,
}

impl PropositionAudit {
    /// Smallest of the normalized rate-gain and energy slacks.
    pub fn min_normalized_slack(&self) -> f64 {
        self.energy_slack
            .iter()
            .zip(&self.energy_scale)
            .map(|(s, c)| s / c)
            .fold(self.rate_gain_slack / self.rate_gain_scale, f64::min)
    }
}

/// Audits a PT-first allocation against the tightness properties of optimal solutions.
pub fn proposition_audit(vars: &AllocationVars, cfg: &ScenarioConfig, gains: &ChannelGains) -> Result<PropositionAudit> {
    audit_with_ordering(vars, &SicOrdering::all_pt_first(gains.num_sus()), cfg, gains)
}

/// As [`proposition_audit`] under an arbitrary committed ordering.
pub fn audit_with_ordering(
    vars: &AllocationVars,
    ordering: &SicOrdering,
    cfg: &ScenarioConfig,
    gains: &ChannelGains,
) -> Result<PropositionAudit> {
    let gain = pt_rate_gain(vars, ordering, gains, cfg)?;
    let rate_gain_slack = gain - cfg.min_pt_gain;
    let rate_gain_scale = cfg.min_pt_gain.max(1.0);
    let rep = energy_report(vars, gains, cfg)?;
    let k = gains.num_sus();
    let energy_slack: Vec<f64> = (0..k).map(|i| rep.surplus(i)).collect();
    let energy_scale: Vec<f64> = (0..k).map(|i| (rep.harvested_bc[i] + rep.harvested_ac[i]).max(1e-12)).collect();
    let time_slack = cfg.block_duration - (vars.t_a + vars.t_b);
    let mut audit = PropositionAudit {
        rate_gain_slack,
        rate_gain_scale,
        energy_slack,
        energy_scale,
        time_slack,
        prop1: false,
        prop2: time_slack <= 1e-6 * cfg.block_duration,
    };
    audit.prop1 = audit.min_normalized_slack() <= AUDIT_TOL;
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build_channel_gains;

    fn setup() -> (ScenarioConfig, ChannelGains) {
        let cfg = ScenarioConfig::reference();
        let g = build_channel_gains(&cfg).unwrap();
        (cfg, g)
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let (cfg, g) = setup();
        for &p in &[0.0f64, 1e-3, 0.1, 1.0, 4.0, 30.0] {
            let h = 1e-6 * p.max(1e-3);
            let fd = (f_pt_ac(0, p + h, 0.3, &g, &cfg) - f_pt_ac(0, (p - h).max(0.0), 0.3, &g, &cfg)) / (p + h - (p - h).max(0.0));
            let an = f_prime_pt_ac(0, p, 0.3, &g, &cfg);
            assert!(an < 0.0);
            assert!((fd - an).abs() <= 1e-6 * an.abs(), "{p}: {fd} vs {an}");
        }
        let f0 = f_pt_ac(0, 0.0, 0.3, &g, &cfg);
        assert_eq!(f0, cfg.bandwidth * 0.3 * reference_log2(&g, &cfg));
    }

    #[test]
    fn tangent_is_a_lower_bound() {
        let (cfg, g) = setup();
        for &anchor in &[0.0, 0.5, 2.0] {
            assert_eq!(taylor_lower_bound(0, anchor, anchor, 0.2, &g, &cfg), f_pt_ac(0, anchor, 0.2, &g, &cfg));
            for k in 0..50 {
                let p = 0.1 * k as f64;
                if p != anchor {
                    assert!(taylor_lower_bound(0, p, anchor, 0.2, &g, &cfg) < f_pt_ac(0, p, 0.2, &g, &cfg));
                }
            }
        }
    }

    #[test]
    fn program_shape() {
        let (cfg, g) = setup();
        let p = assemble_p3(&cfg, &g, &P3Anchor::initial(&cfg, &g)).unwrap();
        assert_eq!(p.n_vars, 4 * 2 + 2);
        let lay = Layout { k: 2 };
        let v = AllocationVars {
            tau: vec![0.1, 0.2],
            t: vec![0.15, 0.05],
            beta: vec![0.3, 0.9],
            p_tr: vec![0.5, 2.0],
            t_a: 0.3,
            t_b: 0.4,
        };
        let x = lay.pack(&v);
        let raw = total_su_rate(&v, &SicOrdering::all_pt_first(2), &g, &cfg).unwrap();
        let obj = p.objective.value(&x);
        assert!((raw - obj).abs() <= 1e-9 * raw);
        let (back, _, _) = lay.recover(&x);
        for i in 0..2 {
            assert!((back.beta[i] - v.beta[i]).abs() < 1e-12);
            assert!((back.p_tr[i] - v.p_tr[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_rows_match_the_energy_report() {
        let (cfg, g) = setup();
        let p = assemble_p3(&cfg, &g, &P3Anchor::initial(&cfg, &g)).unwrap();
        let lay = Layout { k: 2 };
        let v = AllocationVars {
            tau: vec![0.1, 0.2],
            t: vec![0.15, 0.05],
            beta: vec![0.3, 0.9],
            p_tr: vec![0.5, 2.0],
            t_a: 0.3,
            t_b: 0.4,
        };
        let x = lay.pack(&v);
        let rep = energy_report(&v, &g, &cfg).unwrap();
        for i in 0..2 {
            let row = p.linear.iter().find(|r| r.label == format!("energy{}", i + 1)).unwrap();
            assert!((row.slack(&x) - rep.surplus(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn algorithm1_reference_run() {
        let (cfg, g) = setup();
        let sol = algorithm1(&cfg, &g).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations() <= 10, "{}", sol.iterations());
        let tr = sol.objective_trace();
        assert!(tr.windows(2).all(|w| w[1] >= w[0]));
        assert!(sol.total_su_rate > 3e4, "{}", sol.total_su_rate);
        let audit = proposition_audit(&sol.vars, &cfg, &g).unwrap();
        assert!(audit.prop2, "{audit:?}");
        assert!(audit.prop1, "{audit:?}");
    }

    #[test]
    fn unreachable_gain_is_infeasible() {
        let (mut cfg, _) = setup();
        cfg.pt_power = 1e-9;
        let g = build_channel_gains(&cfg).unwrap();
        let err = algorithm1(&cfg, &g).unwrap_err();
        assert!(err.is_infeasible(), "{err}");
    }

    #[test]
    fn slack_allocation_fails_both_propositions() {
        let (cfg, g) = setup();
        let v = AllocationVars {
            tau: vec![0.1, 0.1],
            t: vec![0.0, 0.0],
            beta: vec![0.9, 0.9],
            p_tr: vec![0.0, 0.0],
            t_a: 0.2,
            t_b: 0.3,
        };
        let a = proposition_audit(&v, &cfg, &g).unwrap();
        assert!(!a.prop1 && !a.prop2, "{a:?}");
    }
}
