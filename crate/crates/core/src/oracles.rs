//! Slow reference solvers and a constraint auditor.
//!
//! None of these share code paths with the SCA programs beyond the raw rate
//! and energy definitions, so agreement between them is meaningful.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cvxcore::{self, ConcaveFn, Kernel, Sense, SmoothConcaveProgram, SolveStatus, Term};
use crate::error::{Error, Result};
use crate::fixed_sic::{sca_solve, Layout, P3Anchor};
use crate::ratemodel::{
    bc_su_rate, expected_log2_term_with, pt_rate_gain, reference_log2, total_su_rate, AcDecode, AllocationVars,
    ScatterRule, SicOrdering,
};
use crate::scenario::{ChannelGains, ScenarioConfig};

/// Relative slack tolerance of [`audit_solution`].
pub const AUDIT_SLACK_TOL: f64 = 1e-7;

/// Backscatter-only allocation over the whole block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSolution {
    pub rate: f64,
    pub tau: Vec<f64>,
    pub beta: Vec<f64>,
    pub pt_rate_gain: f64,
    pub status: SolveStatus,
}

impl BaselineSolution {
    pub fn vars(&self, cfg: &ScenarioConfig) -> AllocationVars {
        let k = self.tau.len();
        AllocationVars {
            tau: self.tau.clone(),
            t: vec![0.0; k],
            beta: self.beta.clone(),
            p_tr: vec![0.0; k],
            t_a: 0.0,
            t_b: cfg.block_duration,
        }
    }
}

/// Traditional symbiotic radio: every SU only backscatters, in TDMA over the block.
pub fn traditional_sr_baseline(cfg: &ScenarioConfig, gains: &ChannelGains) -> Result<BaselineSolution> {
    cfg.validate()?;
    let k = gains.num_sus();
    let rule = ScatterRule::new(cfg.quadrature_order)?;
    let s2 = cfg.noise_power();
    let (w, pp, eta, horizon) = (cfg.bandwidth, cfg.pt_power, cfg.eh_efficiency, cfg.block_duration);
    let n_sf = f64::from(cfg.spreading_factor);
    let r0 = reference_log2(gains, cfg);
    let (tau, q) = (|i: usize| i, |i: usize| k + i);

    let mut p = SmoothConcaveProgram::new(2 * k);
    let mut objective = ConcaveFn::new();
    let mut gain = ConcaveFn { terms: Vec::new(), constant: -cfg.min_pt_gain };
    for i in 0..k {
        p.name(tau(i), format!("tau{}", i + 1)).bounds(tau(i), 0.0, horizon);
        p.name(q(i), format!("q{}", i + 1)).bounds(q(i), 0.0, horizon);
        let ad = gains.a[i] * gains.d[i];
        objective.push(Term::Perspective {
            num: q(i),
            den: tau(i),
            scale: w / n_sf,
            kernel: Kernel::Log2Affine { gain: n_sf * pp * ad / s2 },
        });
        gain.push(Term::Perspective {
            num: q(i),
            den: tau(i),
            scale: w,
            kernel: Kernel::ScatterLog2 { rule: rule.clone(), rho_b: pp * gains.b / s2, rho_s: pp * ad / s2 },
        });
        gain.push(Term::Linear { coeffs: vec![(tau(i), -w * r0)] });
    }
    p.maximize(objective);
    p.add_smooth("rate_gain", gain);
    for i in 0..k {
        let h = eta * pp * gains.a[i];
        let mut row = vec![(q(i), -h), (tau(i), -cfg.bc_circuit_power)];
        for j in (0..k).filter(|&j| j != i) {
            row.push((q(j), eta * pp * gains.a[j] * gains.f[j][i]));
        }
        p.add_linear(format!("energy{}", i + 1), row, Sense::Ge, -h * horizon);
        p.add_linear(format!("reflect{}", i + 1), vec![(q(i), 1.0), (tau(i), -1.0)], Sense::Le, 0.0);
    }
    p.add_linear("bc_phase", (0..k).map(|i| (tau(i), 1.0)).collect(), Sense::Le, horizon);
    let mut start = vec![0.0; 2 * k];
    for i in 0..k {
        start[tau(i)] = 0.9 * horizon / k as f64;
        start[q(i)] = 0.5 * start[tau(i)];
    }
    p.with_start(start);

    let sol = cvxcore::solve(&p, &cfg.solver)?.feasible()?;
    let taus: Vec<f64> = (0..k).map(|i| sol.x[tau(i)].max(0.0)).collect();
    let betas: Vec<f64> =
        (0..k).map(|i| if taus[i] > 0.0 { (sol.x[q(i)] / taus[i]).clamp(0.0, 1.0) } else { 0.0 }).collect();
    let mut out = BaselineSolution { rate: 0.0, tau: taus, beta: betas, pt_rate_gain: 0.0, status: sol.status };
    let vars = out.vars(cfg);
    let ordering = SicOrdering::all_pt_first(k);
    out.rate = total_su_rate(&vars, &ordering, gains, cfg)?;
    out.pt_rate_gain = pt_rate_gain(&vars, &ordering, gains, cfg)?;
    Ok(out)
}

/// Best grid point found by [`grid_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOracleResult {
    /// Total SU rate of the best feasible point, `−∞` when none is feasible.
    pub objective: f64,
    pub vars: Option<AllocationVars>,
    pub points: u64,
}

struct GridContext {
    k: usize,
    w: f64,
    s2: f64,
    pp_b: f64,
    eta: f64,
    r0: f64,
    delta: f64,
    eps_b: f64,
    eps_a: f64,
    d: Vec<f64>,
    harvest: Vec<f64>,
    f: Vec<Vec<f64>>,
    a_pp: Vec<f64>,
}

impl GridContext {
    /// Largest `z` whose PT-first AC gain `W t log₂(1 + P_p b/(z d/t + σ²)) − W t R₀` is at least `c`.
    fn max_z_for_gain(&self, i: usize, t: f64, c: f64) -> Option<f64> {
        if t <= 0.0 {
            return (c <= 0.0).then_some(0.0);
        }
        if c > 0.0 {
            return None;
        }
        let full = self.w * t * self.r0;
        if c <= -full {
            return Some(f64::INFINITY);
        }
        let snr = (2f64).powf((c + full) / (self.w * t)) - 1.0;
        let p = (self.pp_b / snr - self.s2) / self.d[i];
        Some((t * p).max(0.0))
    }

    fn ac_gain(&self, i: usize, t: f64, z: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.w * t * ((1.0 + self.pp_b / (z * self.d[i] / t + self.s2)).log2() - self.r0)
    }

    fn ac_su(&self, i: usize, t: f64, z: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.w * t * (1.0 + z * self.d[i] / (t * self.s2)).log2()
    }

    /// Energy surplus of SU `i` before its own and the other SUs' AC power.
    fn base_energy(&self, i: usize, tb: f64, ta: f64, tau: &[f64], q: &[f64], t: &[f64]) -> f64 {
        let mut e = self.harvest[i] * (tb - q[i]) + self.harvest[i] * (ta - t[i]) - self.eps_b * tau[i] - self.eps_a * t[i];
        for j in (0..self.k).filter(|&j| j != i) {
            e += self.a_pp[j] * self.eta * self.f[j][i] * q[j];
        }
        e
    }
}

/// Brute-force search for `K ≤ 2` SUs under PT-first decoding.
///
/// Scans `T_b`, `τ_i`, `β_i` and `t_i` on uniform grids of `resolution`
/// points with `T_a = T − T_b`. The AC energy `z_i = t_i P_tr,i` is set to the
/// largest value allowed by energy causality and the rate-gain constraint;
/// with two SUs `z_1` is gridded as well and `z_2` follows. Grids with
/// `2^m + 1` points are nested.
pub fn grid_oracle(cfg: &ScenarioConfig, gains: &ChannelGains, resolution: usize) -> Result<GridOracleResult> {
    cfg.validate()?;
    let k = gains.num_sus();
    if !(1..=2).contains(&k) {
        return Err(Error::Config(format!("grid oracle supports one or two SUs, got {k}")));
    }
    if resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let rule = ScatterRule::new(cfg.quadrature_order)?;
    let horizon = cfg.block_duration;
    let ctx = GridContext {
        k,
        w: cfg.bandwidth,
        s2: cfg.noise_power(),
        pp_b: cfg.pt_power * gains.b,
        eta: cfg.eh_efficiency,
        r0: reference_log2(gains, cfg),
        delta: cfg.min_pt_gain,
        eps_b: cfg.bc_circuit_power,
        eps_a: cfg.ac_circuit_power,
        d: gains.d.clone(),
        harvest: gains.a.iter().map(|a| cfg.eh_efficiency * cfg.pt_power * a).collect(),
        f: gains.f.clone(),
        a_pp: gains.a.iter().map(|a| cfg.pt_power * a).collect(),
    };
    let u: Vec<f64> = (0..resolution).map(|j| j as f64 / (resolution - 1) as f64).collect();
    let times: Vec<f64> = u.iter().map(|v| v * horizon).collect();

    // BC rates per (SU, τ index, β index).
    let mut bc_su = vec![vec![vec![0.0; resolution]; resolution]; k];
    let mut bc_gain = vec![vec![vec![0.0; resolution]; resolution]; k];
    for i in 0..k {
        let ad = gains.a[i] * gains.d[i];
        for (ti, &tau) in times.iter().enumerate() {
            for (bi, &beta) in u.iter().enumerate() {
                bc_su[i][ti][bi] = bc_su_rate(tau, beta, ad, cfg);
                let e = expected_log2_term_with(&rule, gains.b, beta * ad, cfg.pt_power, ctx.s2)?;
                bc_gain[i][ti][bi] = ctx.w * tau * (e - ctx.r0);
            }
        }
    }
    let z1_max = 2.0 * ctx.eta * cfg.pt_power * horizon * (gains.a[0] + (1..k).map(|j| gains.a[j] * gains.f[j][0]).sum::<f64>());
    let z1_grid: Vec<f64> = u.iter().map(|v| v * z1_max).collect();

    type Best = (f64, Option<AllocationVars>, u64);
    let merge = |a: Best, b: Best| -> Best {
        let n = a.2 + b.2;
        if b.0 > a.0 { (b.0, b.1, n) } else { (a.0, a.1, n) }
    };
    let best = (0..resolution)
        .into_par_iter()
        .map(|tbi| {
            let tb = times[tbi];
            let ta = horizon - tb;
            let mut best: Best = (f64::NEG_INFINITY, None, 0);
            let mut consider = |obj: f64, tau: &[f64], beta: &[f64], t: &[f64], z: &[f64]| {
                if obj > best.0 {
                    let p_tr = (0..k).map(|i| if t[i] > 0.0 { z[i] / t[i] } else { 0.0 }).collect();
                    best.0 = obj;
                    best.1 = Some(AllocationVars { tau: tau.to_vec(), t: t.to_vec(), beta: beta.to_vec(), p_tr, t_a: ta, t_b: tb });
                }
            };
            if k == 1 {
                for ti in (0..resolution).take_while(|&ti| times[ti] <= tb) {
                    for bi in 0..resolution {
                        let (tau, beta) = (times[ti], u[bi]);
                        for ai in (0..resolution).take_while(|&ai| times[ai] <= ta) {
                            best.2 += 1;
                            let t = times[ai];
                            let energy = ctx.base_energy(0, tb, ta, &[tau], &[tau * beta], &[t]);
                            let Some(zg) = ctx.max_z_for_gain(0, t, ctx.delta - bc_gain[0][ti][bi]) else { continue };
                            let z = if t > 0.0 { energy.min(zg) } else { 0.0 };
                            if energy < 0.0 || z < 0.0 {
                                continue;
                            }
                            let obj = bc_su[0][ti][bi] + ctx.ac_su(0, t, z);
                            consider(obj, &[tau], &[beta], &[t], &[z]);
                        }
                    }
                }
            } else {
                for t1i in (0..resolution).take_while(|&j| times[j] <= tb) {
                    for t2i in (0..resolution).take_while(|&j| times[t1i] + times[j] <= tb * (1.0 + 1e-12)) {
                        let tau = [times[t1i], times[t2i]];
                        for b1 in 0..resolution {
                            for b2 in 0..resolution {
                                let beta = [u[b1], u[b2]];
                                let q = [tau[0] * beta[0], tau[1] * beta[1]];
                                let su_bc = bc_su[0][t1i][b1] + bc_su[1][t2i][b2];
                                let gain_bc = bc_gain[0][t1i][b1] + bc_gain[1][t2i][b2];
                                for a1 in (0..resolution).take_while(|&j| times[j] <= ta) {
                                    for a2 in (0..resolution).take_while(|&j| times[a1] + times[j] <= ta * (1.0 + 1e-12)) {
                                        let t = [times[a1], times[a2]];
                                        let e1 = ctx.base_energy(0, tb, ta, &tau, &q, &t);
                                        let e2 = ctx.base_energy(1, tb, ta, &tau, &q, &t);
                                        let z1s: &[f64] = if t[0] > 0.0 { &z1_grid } else { &z1_grid[..1] };
                                        for &z1 in z1s {
                                            best.2 += 1;
                                            let Some(zg) = ctx.max_z_for_gain(1, t[1], ctx.delta - gain_bc - ctx.ac_gain(0, t[0], z1))
                                            else {
                                                continue;
                                            };
                                            let upper = if t[1] > 0.0 { (e2 + ctx.eta * ctx.f[0][1] * z1).min(zg) } else { 0.0 };
                                            let recycled = ctx.eta * ctx.f[1][0];
                                            let lower = if z1 <= e1 {
                                                0.0
                                            } else if recycled > 0.0 {
                                                (z1 - e1) / recycled
                                            } else {
                                                f64::INFINITY
                                            };
                                            if e2 + ctx.eta * ctx.f[0][1] * z1 < 0.0 || upper < lower {
                                                continue;
                                            }
                                            let z = [z1, upper];
                                            let obj = su_bc + ctx.ac_su(0, t[0], z[0]) + ctx.ac_su(1, t[1], z[1]);
                                            consider(obj, &tau, &beta, &t, &z);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, None, 0), merge);
    Ok(GridOracleResult { objective: best.0, vars: best.1, points: best.2 })
}

/// One candidate of [`exhaustive_sic_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCandidate {
    pub ordering: SicOrdering,
    /// Total SU rate, `None` when the ordering is infeasible.
    pub rate: Option<f64>,
    pub vars: Option<AllocationVars>,
}

/// Winner of [`exhaustive_sic_oracle`] and every evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SicOracleResult {
    pub ordering: Option<SicOrdering>,
    pub rate: f64,
    pub candidates: Vec<OrderingCandidate>,
}

/// Runs the SCA for every per-slot ordering and keeps the best feasible rate.
pub fn exhaustive_sic_oracle(cfg: &ScenarioConfig, gains: &ChannelGains) -> Result<SicOracleResult> {
    cfg.validate()?;
    let k = gains.num_sus();
    if k > crate::dynamic_sic::MAX_ENUMERATION_SUS {
        return Err(Error::Config(format!("exhaustive search is limited to {} SUs", crate::dynamic_sic::MAX_ENUMERATION_SUS)));
    }
    let lay = Layout { k };
    let candidates: Vec<OrderingCandidate> = SicOrdering::enumerate(k)
        .into_par_iter()
        .map(|ordering| -> Result<OrderingCandidate> {
            let decodes: Vec<AcDecode> = ordering.decodes()?.into_iter().map(|d| d.unwrap_or(AcDecode::PtFirst)).collect();
            match sca_solve(cfg, gains, &decodes, None, P3Anchor::initial(cfg, gains)) {
                Ok(out) => {
                    let (vars, _, _) = lay.recover(&out.x);
                    let rate = total_su_rate(&vars, &ordering, gains, cfg)?;
                    Ok(OrderingCandidate { ordering, rate: Some(rate), vars: Some(vars) })
                }
                Err(e) if e.is_infeasible() => Ok(OrderingCandidate { ordering, rate: None, vars: None }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, SicOrdering)> = None;
    for c in &candidates {
        if let Some(r) = c.rate {
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, c.ordering.clone()));
            }
        }
    }
    Ok(match best {
        Some((rate, o)) => SicOracleResult { ordering: Some(o), rate, candidates },
        None => SicOracleResult { ordering: None, rate: f64::NEG_INFINITY, candidates },
    })
}

/// A constraint recomputed from the raw model, with its signed slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackEntry {
    pub label: String,
    pub slack: f64,
    pub scale: f64,
}

impl SlackEntry {
    pub fn normalized(&self) -> f64 {
        self.slack / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    pub entries: Vec<SlackEntry>,
}

impl SlackReport {
    pub fn passes(&self) -> bool {
        self.entries.iter().all(|e| e.slack >= -AUDIT_SLACK_TOL * e.scale)
    }

    /// Entry with the smallest normalized slack.
    pub fn worst(&self) -> Option<&SlackEntry> {
        self.entries.iter().min_by(|a, b| a.normalized().total_cmp(&b.normalized()))
    }

    pub fn get(&self, label: &str) -> Option<&SlackEntry> {
        self.entries.iter().find(|e| e.label == label)
    }
}

/// Signed slack of every constraint of the original problem at a raw allocation.
pub fn audit_solution(vars: &AllocationVars, ordering: &SicOrdering, cfg: &ScenarioConfig, gains: &ChannelGains) -> SlackReport {
    let k = gains.num_sus();
    let mut entries = Vec::new();
    let mut push = |label: String, slack: f64, scale: f64| entries.push(SlackEntry { label, slack, scale: scale.max(1e-12) });
    if vars.check_shape(k).is_err() || ordering.num_sus() != k || ordering.alpha_a.len() != k {
        push("shape".into(), f64::NEG_INFINITY, 1.0);
        return SlackReport { entries };
    }
    let horizon = cfg.block_duration;
    let (eta, pp) = (cfg.eh_efficiency, cfg.pt_power);
    match pt_rate_gain(vars, ordering, gains, cfg) {
        Ok(g) => push("rate_gain".into(), g - cfg.min_pt_gain, cfg.min_pt_gain.abs().max(1.0)),
        Err(_) => push("rate_gain".into(), f64::NEG_INFINITY, 1.0),
    }
    for i in 0..k {
        let s = i + 1;
        let (tau, t, beta, p) = (vars.tau[i], vars.t[i], vars.beta[i], vars.p_tr[i]);
        let mut harvested = eta * pp * gains.a[i] * (vars.t_b - tau * beta) + eta * pp * gains.a[i] * (vars.t_a - t);
        for j in (0..k).filter(|&j| j != i) {
            harvested += eta * pp * gains.a[j] * gains.f[j][i] * vars.tau[j] * vars.beta[j];
            harvested += eta * gains.f[j][i] * vars.t[j] * vars.p_tr[j];
        }
        let consumed = cfg.bc_circuit_power * tau + (cfg.ac_circuit_power + p) * t;
        push(format!("energy{s}"), harvested - consumed, harvested.abs() + consumed);
        push(format!("beta{s}_low"), beta, 1.0);
        push(format!("beta{s}_high"), 1.0 - beta, 1.0);
        push(format!("tau{s}"), tau, horizon);
        push(format!("t{s}"), t, horizon);
        push(format!("p{s}"), p, 1.0);
        let (ab, aa) = (ordering.alpha_b[i], ordering.alpha_a[i]);
        push(format!("sic{s}_single"), 1.0 - ab - aa, 1.0);
        let binary = ordering.decode(i).is_ok();
        push(format!("sic{s}_binary"), if binary { 0.0 } else { -(ab - ab * ab).max(aa - aa * aa).max(1.0) }, 1.0);
    }
    push("bc_phase".into(), vars.t_b - vars.tau.iter().sum::<f64>(), horizon);
    push("ac_phase".into(), vars.t_a - vars.t.iter().sum::<f64>(), horizon);
    push("block".into(), horizon - vars.t_a - vars.t_b, horizon);
    push("t_a".into(), vars.t_a, horizon);
    push("t_b".into(), vars.t_b, horizon);
    SlackReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamic_sic::algorithm2;
    use crate::fixed_sic::algorithm1;
    use crate::scenario::build_channel_gains;

    fn setup(reference: ScenarioConfig, delta: f64) -> (ScenarioConfig, ChannelGains) {
        let mut cfg = reference;
        cfg.min_pt_gain = delta;
        let g = build_channel_gains(&cfg).unwrap();
        (cfg, g)
    }

    #[test]
    fn free_baseline_fills_the_block() {
        let (mut cfg, _) = setup(ScenarioConfig::reference(), 0.0);
        cfg.bc_circuit_power = 0.0;
        let g = build_channel_gains(&cfg).unwrap();
        let b = traditional_sr_baseline(&cfg, &g).unwrap();
        assert!(b.beta.iter().all(|&x| x > 1.0 - 1e-4), "{:?}", b.beta);
        assert!((b.tau.iter().sum::<f64>() - cfg.block_duration).abs() < 1e-4, "{:?}", b.tau);
    }

    #[test]
    fn single_su_baseline_matches_a_plain_grid() {
        let (cfg, g) = setup(ScenarioConfig::reference_single(), 1e3);
        let b = traditional_sr_baseline(&cfg, &g).unwrap();
        let n = 200;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=n {
            for j in 0..=n {
                let tau = cfg.block_duration * i as f64 / n as f64;
                let beta = j as f64 / n as f64;
                let v = AllocationVars { tau: vec![tau], t: vec![0.0], beta: vec![beta], p_tr: vec![0.0], t_a: 0.0, t_b: cfg.block_duration };
                if audit_solution(&v, &SicOrdering::all_pt_first(1), &cfg, &g).passes() {
                    best = best.max(total_su_rate(&v, &SicOrdering::all_pt_first(1), &g, &cfg).unwrap());
                }
            }
        }
        assert!(best.is_finite());
        assert!((b.rate - best).abs() <= 0.02 * best, "{} vs {best}", b.rate);
    }

    #[test]
    fn baseline_is_far_below_hybrid() {
        let (cfg, g) = setup(ScenarioConfig::reference(), 1e3);
        let b = traditional_sr_baseline(&cfg, &g).unwrap();
        let h = algorithm1(&cfg, &g).unwrap();
        assert!(h.total_su_rate / b.rate >= 10.0, "{} / {}", h.total_su_rate, b.rate);
        assert!(b.pt_rate_gain >= cfg.min_pt_gain * (1.0 - 1e-6));
    }

    #[test]
    fn grid_finds_nothing_past_the_feasibility_edge() {
        let (cfg, g) = setup(ScenarioConfig::reference_single(), 1e7);
        let r = grid_oracle(&cfg, &g, 9).unwrap();
        assert_eq!(r.objective, f64::NEG_INFINITY);
        assert!(r.vars.is_none());
    }

    #[test]
    fn grid_stays_below_the_solver_and_refines_monotonically() {
        let (cfg, g) = setup(ScenarioConfig::reference_single(), 0.0);
        let coarse = grid_oracle(&cfg, &g, 9).unwrap();
        let fine = grid_oracle(&cfg, &g, 17).unwrap();
        let a1 = algorithm1(&cfg, &g).unwrap();
        assert!(fine.objective >= coarse.objective);
        assert!(fine.objective <= a1.total_su_rate * (1.0 + 1e-6), "{} vs {}", fine.objective, a1.total_su_rate);
        let v = fine.vars.unwrap();
        assert!(audit_solution(&v, &SicOrdering::all_pt_first(1), &cfg, &g).passes());
    }

    #[test]
    fn grid_rejects_many_sus() {
        let mut cfg = ScenarioConfig::reference();
        cfg.num_sus = 3;
        cfg.su_pos.push([0.0, 0.8]);
        let g = build_channel_gains(&cfg).unwrap();
        assert!(grid_oracle(&cfg, &g, 5).is_err());
    }

    #[test]
    fn single_su_enumerates_two_orderings() {
        let (cfg, g) = setup(ScenarioConfig::reference_single(), 1e3);
        let r = exhaustive_sic_oracle(&cfg, &g).unwrap();
        assert_eq!(r.candidates.len(), 2);
        assert!(r.ordering.is_some());
    }

    #[test]
    fn exhaustive_winner_bounds_dynamic_ordering() {
        for delta in [1e3, 3e4] {
            let (cfg, g) = setup(ScenarioConfig::reference(), delta);
            let ex = exhaustive_sic_oracle(&cfg, &g).unwrap();
            assert!(ex.candidates.iter().filter_map(|c| c.rate).all(|r| r <= ex.rate));
            let dy = algorithm2(&cfg, &g).unwrap();
            assert!(ex.rate >= dy.total_su_rate * (1.0 - 0.02), "{} vs {}", ex.rate, dy.total_su_rate);
            assert!((ex.rate - dy.total_su_rate).abs() <= 0.02 * ex.rate);
        }
    }

    #[test]
    fn audit_of_idle_allocation() {
        let (cfg, g) = setup(ScenarioConfig::reference(), 0.0);
        let mut v = AllocationVars::zeros(2);
        v.t_b = cfg.block_duration;
        let o = SicOrdering::all_pt_first(2);
        assert!(audit_solution(&v, &o, &cfg, &g).passes());
        let (cfg, g) = setup(ScenarioConfig::reference(), 1e3);
        let r = audit_solution(&v, &o, &cfg, &g);
        assert!(!r.passes());
        assert_eq!(r.worst().unwrap().label, "rate_gain");
    }

    #[test]
    fn audit_of_solver_output() {
        let (cfg, g) = setup(ScenarioConfig::reference(), 1e3);
        let sol = algorithm1(&cfg, &g).unwrap();
        let r = audit_solution(&sol.vars, &SicOrdering::all_pt_first(2), &cfg, &g);
        assert!(r.passes(), "{:?}", r.worst());
        assert!(r.get("energy1").is_some());
    }

    #[test]
    fn audit_flags_fractional_and_malformed_orderings() {
        let (cfg, g) = setup(ScenarioConfig::reference(), 0.0);
        let mut v = AllocationVars::zeros(2);
        v.t_b = cfg.block_duration;
        let half = SicOrdering { alpha_b: vec![0.5, 1.0], alpha_a: vec![0.5, 0.0] };
        assert!(!audit_solution(&v, &half, &cfg, &g).passes());
        let short = SicOrdering::all_pt_first(1);
        assert_eq!(audit_solution(&v, &short, &cfg, &g).entries[0].label, "shape");
    }
}
