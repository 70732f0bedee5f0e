//! Joint optimization of the allocation and the per-slot SIC ordering.
//!
//! Block coordinate descent alternates between the continuous program for a
//! committed ordering (solved by SCA, see [`fixed_sic`](crate::fixed_sic)) and
//! an ordering program at the frozen continuous point. The ordering program
//! relaxes the binary indicators to `[0, 1]`, adds the penalty `ζ Σ(α − α²)`
//! and linearizes that penalty around the previous iterate, which leaves a
//! linear program per penalty step.

use serde::{Deserialize, Serialize};

use crate::cvxcore::{self, ConcaveFn, Sense, SmoothConcaveProgram};
use crate::error::{Error, Result};
use crate::fixed_sic::{
    assemble_continuous, f_prime_pt_ac, f_pt_ac, sca_solve, Layout, P3Anchor, ScaIteration, ScaOutcome,
};
use crate::ratemodel::{
    expected_log2_term_with, pt_rate_gain, reference_log2, total_su_rate, AcDecode, AllocationVars, ScatterRule,
    SicOrdering,
};
use crate::scenario::{ChannelGains, ScenarioConfig};

/// Threshold on `Σ(α − α²)` below which the relaxed ordering counts as binary.
pub const BINARY_GAP_TOL: f64 = 1e-3;
/// Relative slack allowed in each link of the monotonicity chain.
pub const CHAIN_TOL: f64 = 1e-9;
/// Largest `K` for which orderings may be enumerated.
pub const MAX_ENUMERATION_SUS: usize = 8;

const PENALTY_MAX_ITER: usize = 50;
const PENALTY_STEP_TOL: f64 = 1e-6;
const ZETA_GROWTH: f64 = 10.0;
const ZETA_ESCALATIONS: usize = 5;
const NEUTRAL_ANCHOR: f64 = 0.5;

/// Penalty weight and linearization point of the ordering program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    pub zeta: f64,
    pub alpha_anchor: SicOrdering,
}

impl PenaltyState {
    /// Every indicator anchored at one half, where the linearized penalty is flat.
    pub fn neutral(k: usize, zeta: f64) -> Self {
        Self { zeta, alpha_anchor: SicOrdering { alpha_b: vec![NEUTRAL_ANCHOR; k], alpha_a: vec![NEUTRAL_ANCHOR; k] } }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return Err(Error::Config(format!("penalty weight must be positive, got {}", self.zeta)));
        }
        let a = &self.alpha_anchor;
        if a.alpha_a.len() != k || a.alpha_b.len() != k {
            return Err(Error::Config("penalty anchor must cover every SU".into()));
        }
        if a.alpha_a.iter().chain(&a.alpha_b).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("penalty anchor must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Linearization of `Σ(α − α²)` at `anchor`, evaluated at `alpha`; never below the exact penalty.
pub fn penalty_upper_bound(alpha: &SicOrdering, anchor: &SicOrdering) -> f64 {
    let pairs = alpha.alpha_b.iter().zip(&anchor.alpha_b).chain(alpha.alpha_a.iter().zip(&anchor.alpha_a));
    pairs.map(|(&a, &r)| a - r * r - 2.0 * r * (a - r)).sum()
}

/// Continuous variables frozen while the ordering is optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousFix {
    pub tau: Vec<f64>,
    pub t: Vec<f64>,
    /// `τ β`.
    pub mu: Vec<f64>,
    /// `t P_tr`.
    pub chi: Vec<f64>,
    /// Powers at which the PT-first interference term is linearized.
    pub p_tr_anchor: Vec<f64>,
    /// Rate gain the ordering must deliver.
    pub min_gain: f64,
}

impl ContinuousFix {
    /// Freezes a point of the continuous program, linearizing at its own powers.
    pub fn from_point(cfg: &ScenarioConfig, k: usize, x: &[f64]) -> Self {
        let (vars, mu, chi) = Layout { k }.recover(x);
        Self { tau: vars.tau, t: vars.t, mu, chi, p_tr_anchor: vars.p_tr, min_gain: cfg.min_pt_gain }
    }

    pub fn num_sus(&self) -> usize {
        self.tau.len()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let lens = [self.tau.len(), self.t.len(), self.mu.len(), self.chi.len(), self.p_tr_anchor.len()];
        if lens.iter().any(|&l| l != k) {
            return Err(Error::Config(format!("frozen point must have {k} entries per variable")));
        }
        let all = self.tau.iter().chain(&self.t).chain(&self.mu).chain(&self.chi).chain(&self.p_tr_anchor);
        if all.clone().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.min_gain.is_finite() {
            return Err(Error::Config("frozen point must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Per-slot rate constants of the ordering program.
    pub fn primed(&self, cfg: &ScenarioConfig, gains: &ChannelGains) -> Result<PrimedRates> {
        let k = gains.num_sus();
        self.validate(k)?;
        let rule = ScatterRule::new(cfg.quadrature_order)?;
        let (w, s2, pp) = (cfg.bandwidth, cfg.noise_power(), cfg.pt_power);
        let n_sf = f64::from(cfg.spreading_factor);
        let r0 = reference_log2(gains, cfg);
        let mut out = PrimedRates::default();
        for i in 0..k {
            let (tau, t, mu, chi) = (self.tau[i], self.t[i], self.mu[i], self.chi[i]);
            let ad = gains.a[i] * gains.d[i];
            let (rs_tau, rp_tau) = if tau > 0.0 {
                let beta = (mu / tau).clamp(0.0, 1.0);
                (
                    w * tau / n_sf * (1.0 + n_sf * beta * pp * ad / s2).log2(),
                    w * tau * expected_log2_term_with(&rule, gains.b, beta * ad, pp, s2)?,
                )
            } else {
                (0.0, 0.0)
            };
            let (rs1, rs2) = if t > 0.0 {
                (w * t * (1.0 + chi * gains.d[i] / (t * s2)).log2(), w * t * (1.0 + chi * gains.d[i] / (t * (pp * gains.b + s2))).log2())
            } else {
                (0.0, 0.0)
            };
            let pu = self.p_tr_anchor[i];
            let rp1 = f_pt_ac(i, pu, t, gains, cfg) + f_prime_pt_ac(i, pu, 1.0, gains, cfg) * (chi - t * pu);
            out.rs_tau.push(rs_tau);
            out.rs1.push(rs1);
            out.rs2.push(rs2);
            out.rp_tau.push(rp_tau);
            out.rp1.push(rp1);
            out.rp2.push(w * t * r0);
            out.reference.push(w * (tau + t) * r0);
        }
        Ok(out)
    }
}

/// Rates at a frozen point, per slot: SU and PT rates of both phases under
/// either decoding rule, and the PT's rate without SUs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrimedRates {
    pub rs_tau: Vec<f64>,
    pub rs1: Vec<f64>,
    pub rs2: Vec<f64>,
    pub rp_tau: Vec<f64>,
    pub rp1: Vec<f64>,
    pub rp2: Vec<f64>,
    pub reference: Vec<f64>,
}

impl PrimedRates {
    /// Total SU rate under a (possibly relaxed) ordering.
    pub fn su_rate(&self, o: &SicOrdering) -> f64 {
        (0..self.rs_tau.len()).map(|i| self.rs_tau[i] + o.alpha_b[i] * self.rs1[i] + o.alpha_a[i] * self.rs2[i]).sum()
    }

    /// PT rate gain under a (possibly relaxed) ordering.
    pub fn pt_gain(&self, o: &SicOrdering) -> f64 {
        (0..self.rs_tau.len())
            .map(|i| self.rp_tau[i] + o.alpha_b[i] * self.rp1[i] + o.alpha_a[i] * self.rp2[i] - self.reference[i])
            .sum()
    }

    /// Largest rate gain any relaxed ordering reaches.
    pub fn best_gain(&self) -> f64 {
        (0..self.rs_tau.len())
            .map(|i| self.rp_tau[i] + self.rp1[i].max(self.rp2[i]).max(0.0) - self.reference[i])
            .sum()
    }

    fn gain_scale(&self, target: f64) -> f64 {
        self.reference.iter().sum::<f64>().max(target.abs()).max(1.0)
    }

    fn rate_scale(&self) -> f64 {
        (0..self.rs_tau.len()).map(|i| self.rs_tau[i] + self.rs1[i].max(self.rs2[i])).sum::<f64>().max(1.0)
    }
}

/// Continuous program for a committed ordering; identical to the fixed-ordering
/// program when every slot decodes the PT first.
pub fn assemble_p411(
    cfg: &ScenarioConfig,
    gains: &ChannelGains,
    ordering: &SicOrdering,
    anchor: &P3Anchor,
) -> Result<SmoothConcaveProgram> {
    assemble_continuous(cfg, gains, &committed_decodes(ordering)?, anchor)
}

fn committed_decodes(ordering: &SicOrdering) -> Result<Vec<AcDecode>> {
    ordering
        .decodes()?
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| Error::Model(format!("SU {} has no SIC ordering", i + 1))))
        .collect()
}

/// Index of `α_b,i` in the ordering program; `α_a,i` follows at `k + i`.
fn alpha_b_index(i: usize) -> usize {
    i
}

fn alpha_a_index(k: usize, i: usize) -> usize {
    k + i
}

/// Linearized penalty program over the relaxed indicators at a frozen point.
pub fn assemble_p423(
    cfg: &ScenarioConfig,
    gains: &ChannelGains,
    fix: &ContinuousFix,
    state: &PenaltyState,
) -> Result<SmoothConcaveProgram> {
    let k = gains.num_sus();
    state.validate(k)?;
    let rates = fix.primed(cfg, gains)?;
    ordering_program(&rates, fix.min_gain, state)
}

fn ordering_program(rates: &PrimedRates, target: f64, state: &PenaltyState) -> Result<SmoothConcaveProgram> {
    let k = rates.rs_tau.len();
    let scale = rates.gain_scale(target);
    if rates.best_gain() < target - CHAIN_TOL * scale {
        return Err(Error::Infeasible(format!(
            "no SIC ordering reaches the rate gain {target} at the frozen point (best {})",
            rates.best_gain()
        )));
    }
    let mut p = SmoothConcaveProgram::new(2 * k);
    let mut objective: Vec<(usize, f64)> = Vec::with_capacity(2 * k);
    let mut constant = rates.rs_tau.iter().sum::<f64>();
    let anchor = &state.alpha_anchor;
    for i in 0..k {
        let (ib, ia) = (alpha_b_index(i), alpha_a_index(k, i));
        p.name(ib, format!("alpha_b{}", i + 1)).bounds(ib, 0.0, 1.0);
        p.name(ia, format!("alpha_a{}", i + 1)).bounds(ia, 0.0, 1.0);
        let (rb, ra) = (anchor.alpha_b[i], anchor.alpha_a[i]);
        objective.push((ib, rates.rs1[i] - state.zeta * (1.0 - 2.0 * rb)));
        objective.push((ia, rates.rs2[i] - state.zeta * (1.0 - 2.0 * ra)));
        constant -= state.zeta * (rb * rb + ra * ra);
        p.add_linear(format!("single{}", i + 1), vec![(ib, 1.0), (ia, 1.0)], Sense::Le, 1.0);
    }
    p.maximize(ConcaveFn::linear(objective, constant));
    let row: Vec<(usize, f64)> = (0..k)
        .flat_map(|i| [(alpha_b_index(i), rates.rp1[i]), (alpha_a_index(k, i), rates.rp2[i])])
        .filter(|&(_, c)| c != 0.0)
        .collect();
    let fixed_part: f64 = (0..k).map(|i| rates.rp_tau[i] - rates.reference[i]).sum();
    if !row.is_empty() {
        p.add_linear("rate_gain", row, Sense::Ge, target - fixed_part);
    }
    let start: Vec<f64> = (0..2 * k)
        .map(|j| if j < k { rates_start(rates, j) } else { 1.0 - rates_start(rates, j - k) - 0.1 })
        .collect();
    p.with_start(start);
    Ok(p)
}

/// Start leaning towards the decode rule with the larger PT rate, which is the feasible side.
fn rates_start(rates: &PrimedRates, i: usize) -> f64 {
    if rates.rp1[i] >= rates.rp2[i] { 0.6 } else { 0.3 }
}

fn relaxed_from_x(k: usize, x: &[f64]) -> SicOrdering {
    let clip = |v: f64| v.clamp(0.0, 1.0);
    SicOrdering {
        alpha_b: (0..k).map(|i| clip(x[alpha_b_index(i)])).collect(),
        alpha_a: (0..k).map(|i| clip(x[alpha_a_index(k, i)])).collect(),
    }
}

/// Outcome of [`sic_penalty_loop`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyOutcome {
    /// Binary ordering after rounding.
    pub ordering: SicOrdering,
    /// Relaxed indicators at termination, before rounding.
    pub relaxed: SicOrdering,
    pub state: PenaltyState,
    pub iterations: usize,
    /// `Σ(α − α²)` of the relaxed indicators.
    pub binary_gap: f64,
    /// Rounding was infeasible and the ordering came from enumeration.
    pub fallback: bool,
}

/// Penalty iterations for the ordering at a frozen point, starting from
/// `initial` or from the neutral anchor.
pub fn sic_penalty_loop(
    cfg: &ScenarioConfig,
    gains: &ChannelGains,
    fix: &ContinuousFix,
    initial: Option<&SicOrdering>,
) -> Result<PenaltyOutcome> {
    let k = gains.num_sus();
    let rates = fix.primed(cfg, gains)?;
    let target = fix.min_gain;
    let scale = rates.gain_scale(target);
    let zeta0 = 10.0 * rates.rate_scale();
    let mut state = match initial {
        Some(a) => PenaltyState { zeta: zeta0, alpha_anchor: a.clone() },
        None => PenaltyState::neutral(k, zeta0),
    };
    state.validate(k)?;
    if rates.best_gain() < target - CHAIN_TOL * scale {
        return Err(Error::Infeasible(format!("no SIC ordering reaches the rate gain {target} at the frozen point")));
    }
    if rates.best_gain() - target <= CHAIN_TOL * scale {
        let ordering = enumerate_orderings(&rates, target, scale)?;
        return Ok(PenaltyOutcome { relaxed: ordering.clone(), ordering, state, iterations: 0, binary_gap: 0.0, fallback: true });
    }
    let mut iterations = 0;
    let mut escalations = 0;
    let mut alpha = state.alpha_anchor.clone();
    while iterations < PENALTY_MAX_ITER * (ZETA_ESCALATIONS + 1) {
        let prog = ordering_program(&rates, target, &state)?;
        let sol = cvxcore::solve(&prog, &cfg.solver)?.feasible()?;
        iterations += 1;
        alpha = relaxed_from_x(k, &sol.x);
        let step = alpha
            .alpha_b
            .iter()
            .zip(&state.alpha_anchor.alpha_b)
            .chain(alpha.alpha_a.iter().zip(&state.alpha_anchor.alpha_a))
            .map(|(a, r)| (a - r).abs())
            .fold(0.0, f64::max);
        state.alpha_anchor = alpha.clone();
        if step > PENALTY_STEP_TOL {
            continue;
        }
        if alpha.penalty_sum() <= BINARY_GAP_TOL || escalations >= ZETA_ESCALATIONS {
            break;
        }
        state.zeta *= ZETA_GROWTH;
        escalations += 1;
    }
    let binary_gap = alpha.penalty_sum();
    let (ordering, fallback) = match round_ordering(&alpha, &rates, target, scale) {
        Some(o) => (o, false),
        None => {
            log::debug!("rounded SIC ordering violates the rate gain; enumerating");
            (enumerate_orderings(&rates, target, scale)?, true)
        }
    };
    Ok(PenaltyOutcome { ordering, relaxed: alpha, state, iterations, binary_gap, fallback })
}

/// Nearest binary ordering; undecided slots prefer PT-first, then SU-first.
fn round_ordering(alpha: &SicOrdering, rates: &PrimedRates, target: f64, scale: f64) -> Option<SicOrdering> {
    let k = alpha.num_sus();
    let mut rules: Vec<Option<AcDecode>> = (0..k)
        .map(|i| {
            if alpha.alpha_b[i] >= 0.5 && alpha.alpha_b[i] >= alpha.alpha_a[i] {
                Some(AcDecode::PtFirst)
            } else if alpha.alpha_a[i] >= 0.5 {
                Some(AcDecode::SuFirst)
            } else {
                None
            }
        })
        .collect();
    let feasible = |o: &SicOrdering| rates.pt_gain(o) >= target - CHAIN_TOL * scale;
    for i in 0..k {
        if rules[i].is_none() {
            let mut trial: Vec<AcDecode> = rules.iter().map(|r| r.unwrap_or(AcDecode::PtFirst)).collect();
            let pt_first_ok = feasible(&SicOrdering::from_decodes(&trial));
            trial[i] = AcDecode::SuFirst;
            let su_first_better = !pt_first_ok && feasible(&SicOrdering::from_decodes(&trial));
            rules[i] = Some(if su_first_better { AcDecode::SuFirst } else { AcDecode::PtFirst });
        }
    }
    let rules: Vec<AcDecode> = rules.into_iter().map(|r| r.unwrap_or(AcDecode::PtFirst)).collect();
    let o = SicOrdering::from_decodes(&rules);
    feasible(&o).then_some(o)
}

/// Best feasible binary ordering at the frozen rates; ties go to the earlier (more PT-first) ordering.
fn enumerate_orderings(rates: &PrimedRates, target: f64, scale: f64) -> Result<SicOrdering> {
    let k = rates.rs_tau.len();
    if k > MAX_ENUMERATION_SUS {
        return Err(Error::Config(format!("ordering enumeration is limited to {MAX_ENUMERATION_SUS} SUs")));
    }
    let mut best: Option<(f64, SicOrdering)> = None;
    for o in SicOrdering::enumerate(k) {
        if rates.pt_gain(&o) < target - CHAIN_TOL * scale {
            continue;
        }
        let r = rates.su_rate(&o);
        if best.as_ref().is_none_or(|(b, _)| r > *b) {
            best = Some((r, o));
        }
    }
    best.map(|(_, o)| o).ok_or_else(|| Error::Infeasible("no SIC ordering reaches the rate gain".into()))
}

/// The four links of the per-iteration monotonicity chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    /// Exact total rate at the SCA point under the committed ordering.
    pub exact_before: f64,
    /// Same point and ordering, from the linearized rate constants.
    pub bound_before: f64,
    /// Bound value the SCA solve started from.
    pub bound_start: f64,
    /// Bound value after the SCA solve.
    pub bound_solved: f64,
    /// Bound value after the ordering update at the frozen point.
    pub bound_reordered: f64,
    /// Exact total rate after the ordering update.
    pub exact_after: f64,
}

impl ChainRecord {
    fn rel(a: f64, b: f64) -> f64 {
        (a - b) / b.abs().max(1.0)
    }

    /// Signed slacks of links (a) to (d); (a) is an equality and reports `−|gap|`.
    pub fn slacks(&self) -> [f64; 4] {
        [
            -Self::rel(self.exact_before, self.bound_before).abs(),
            Self::rel(self.bound_solved, self.bound_start),
            Self::rel(self.bound_reordered, self.bound_solved),
            Self::rel(self.exact_after, self.bound_reordered),
        ]
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.slacks().iter().all(|&s| s >= -tol)
    }
}

/// One outer iteration of the block coordinate descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcdIteration {
    pub outer: usize,
    pub inner_iterations: usize,
    pub zeta: f64,
    pub binary_gap: f64,
    pub total_rate: f64,
    pub pt_gain: f64,
    pub ordering: SicOrdering,
    pub adopted: bool,
    pub fallback: bool,
    pub chain: ChainRecord,
}

/// Output of [`algorithm2`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicSicSolution {
    pub vars: AllocationVars,
    pub mu: Vec<f64>,
    pub chi: Vec<f64>,
    pub ordering: SicOrdering,
    pub total_su_rate: f64,
    pub pt_rate_gain: f64,
    pub bcd_trace: Vec<BcdIteration>,
    pub inner_traces: Vec<Vec<ScaIteration>>,
    /// Ordering the winning descent started from.
    pub initial_ordering: SicOrdering,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl DynamicSicSolution {
    pub fn iterations(&self) -> usize {
        self.bcd_trace.len()
    }

    pub fn objective_trace(&self) -> Vec<f64> {
        self.bcd_trace.iter().map(|r| r.total_rate).collect()
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("outer,inner_iterations,zeta,binary_gap,total_rate,pt_gain\n");
        for r in &self.bcd_trace {
            s.push_str(&format!(
                "{},{},{:.11e},{:.11e},{:.11e},{:.11e}\n",
                r.outer, r.inner_iterations, r.zeta, r.binary_gap, r.total_rate, r.pt_gain
            ));
        }
        s
    }
}

/// Switches of [`algorithm2_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcdOptions {
    /// Optimize the ordering; when off only the PT-first continuous problem is solved.
    pub search_ordering: bool,
    /// Also descend from the all-SU-first ordering and keep the better result.
    pub two_start: bool,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self { search_ordering: true, two_start: true }
    }
}

/// Block coordinate descent over allocation and SIC ordering.
pub fn algorithm2(cfg: &ScenarioConfig, gains: &ChannelGains) -> Result<DynamicSicSolution> {
    algorithm2_with(cfg, gains, BcdOptions::default())
}

pub fn algorithm2_with(cfg: &ScenarioConfig, gains: &ChannelGains, opts: BcdOptions) -> Result<DynamicSicSolution> {
    cfg.validate()?;
    let k = gains.num_sus();
    let first = descend(cfg, gains, SicOrdering::all_pt_first(k), opts.search_ordering);
    if !(opts.search_ordering && opts.two_start) {
        return first;
    }
    let second = descend(cfg, gains, SicOrdering::all_su_first(k), true);
    match (first, second) {
        (Ok(a), Ok(b)) => Ok(if b.total_su_rate > a.total_su_rate { b } else { a }),
        (Ok(a), Err(e)) | (Err(e), Ok(a)) => {
            log::debug!("one BCD start failed: {e}");
            Ok(a)
        }
        (Err(e), Err(_)) => Err(e),
    }
}

fn descend(cfg: &ScenarioConfig, gains: &ChannelGains, start: SicOrdering, search: bool) -> Result<DynamicSicSolution> {
    let k = gains.num_sus();
    let lay = Layout { k };
    let mut ordering = start.clone();
    let mut x: Option<Vec<f64>> = None;
    let mut anchor = P3Anchor::initial(cfg, gains);
    let mut bound_start = f64::NAN;
    let mut trace: Vec<BcdIteration> = Vec::new();
    let mut inner_traces = Vec::new();
    let mut converged = false;
    let mut kkt_residual = f64::NAN;
    let mut point: Vec<f64> = Vec::new();

    for outer in 1..=cfg.bcd.max_iter {
        let decodes = committed_decodes(&ordering)?;
        let solved = match sca_solve(cfg, gains, &decodes, x.as_deref(), anchor.clone()) {
            Ok(s) => s,
            Err(e) if x.is_some() && e.is_infeasible() => {
                log::warn!("BCD iteration {outer}: re-solve failed ({e}); keeping the previous point");
                converged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let ScaOutcome { x: xs, objective, trace: sca_trace, kkt_residual: kkt, .. } = solved;
        if bound_start.is_nan() {
            bound_start = sca_trace.first().map_or(objective, |r| r.objective);
        }
        let (xu, bound_solved) = match &x {
            Some(prev) if objective < bound_start => (prev.clone(), bound_start),
            _ => (xs, objective),
        };
        kkt_residual = kkt;
        inner_traces.push(sca_trace);
        let (vars_u, _, _) = lay.recover(&xu);
        let mut fix = ContinuousFix::from_point(cfg, k, &xu);
        let rates = fix.primed(cfg, gains)?;
        let incumbent_gain = rates.pt_gain(&ordering);
        let scale = rates.gain_scale(cfg.min_pt_gain);
        if incumbent_gain < cfg.min_pt_gain && incumbent_gain >= cfg.min_pt_gain - 1e-6 * scale {
            fix.min_gain = incumbent_gain;
        }
        let exact_before = total_su_rate(&vars_u, &ordering, gains, cfg)?;
        let bound_before = rates.su_rate(&ordering);

        let (mut next, mut zeta, mut gap, mut fallback) = (ordering.clone(), 0.0, 0.0, false);
        if search {
            match sic_penalty_loop(cfg, gains, &fix, None) {
                Ok(out) => {
                    next = out.ordering;
                    zeta = out.state.zeta;
                    gap = out.binary_gap;
                    fallback = out.fallback;
                }
                Err(e) if e.is_infeasible() => log::warn!("BCD iteration {outer}: ordering step infeasible ({e})"),
                Err(e) => return Err(e),
            }
        }
        let old_bound = rates.su_rate(&ordering);
        let mut bound_reordered = rates.su_rate(&next);
        if next != ordering && bound_reordered <= old_bound {
            next = ordering.clone();
            bound_reordered = old_bound;
        }
        let adopted = next != ordering;
        let exact_after = total_su_rate(&vars_u, &next, gains, cfg)?;
        let chain = ChainRecord { exact_before, bound_before, bound_start, bound_solved, bound_reordered, exact_after };
        trace.push(BcdIteration {
            outer,
            inner_iterations: inner_traces.last().map_or(0, Vec::len),
            zeta,
            binary_gap: gap,
            total_rate: exact_after,
            pt_gain: pt_rate_gain(&vars_u, &next, gains, cfg)?,
            ordering: next.clone(),
            adopted,
            fallback,
            chain,
        });
        point = xu.clone();
        ordering = next;
        anchor = P3Anchor { p_tr_anchor: vars_u.p_tr.clone() };
        x = Some(xu);
        bound_start = bound_reordered;
        let prev_total = trace.iter().rev().nth(1).map(|r| r.total_rate);
        let settled = prev_total.is_some_and(|p| (exact_after - p).abs() <= cfg.bcd.tol * p.abs().max(1e-12));
        if !adopted || !search || settled {
            converged = true;
            break;
        }
    }
    let (vars, mu, chi) = lay.recover(&point);
    Ok(DynamicSicSolution {
        total_su_rate: total_su_rate(&vars, &ordering, gains, cfg)?,
        pt_rate_gain: pt_rate_gain(&vars, &ordering, gains, cfg)?,
        vars,
        mu,
        chi,
        ordering,
        bcd_trace: trace,
        inner_traces,
        initial_ordering: start,
        converged,
        kkt_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_sic::{algorithm1, assemble_p3};
    use crate::oracles::audit_solution;
    use crate::scenario::build_channel_gains;

    fn setup(delta: f64) -> (ScenarioConfig, ChannelGains) {
        let mut cfg = ScenarioConfig::reference();
        cfg.min_pt_gain = delta;
        let g = build_channel_gains(&cfg).unwrap();
        (cfg, g)
    }

    fn frozen(cfg: &ScenarioConfig, g: &ChannelGains) -> ContinuousFix {
        let sol = algorithm1(cfg, g).unwrap();
        let x = Layout { k: 2 }.pack(&sol.vars);
        ContinuousFix::from_point(cfg, 2, &x)
    }

    fn brute(rates: &PrimedRates, target: f64) -> Option<SicOrdering> {
        let mut best: Option<(f64, SicOrdering)> = None;
        for o in SicOrdering::enumerate(rates.rs_tau.len()) {
            if rates.pt_gain(&o) + 1e-9 * target.abs().max(1.0) < target {
                continue;
            }
            let r = rates.su_rate(&o);
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, o));
            }
        }
        best.map(|(_, o)| o)
    }

    #[test]
    fn penalty_bound_is_tight_at_the_anchor() {
        let a = SicOrdering { alpha_b: vec![0.2, 0.7], alpha_a: vec![0.5, 0.1] };
        assert!((penalty_upper_bound(&a, &a) - a.penalty_sum()).abs() < 1e-15);
        let bin = SicOrdering::from_decodes(&[AcDecode::PtFirst, AcDecode::SuFirst]);
        assert_eq!(penalty_upper_bound(&bin, &bin), 0.0);
    }

    #[test]
    fn pt_first_program_is_the_fixed_program() {
        let (cfg, g) = setup(1e3);
        let anchor = P3Anchor::initial(&cfg, &g);
        let a = assemble_p411(&cfg, &g, &SicOrdering::all_pt_first(2), &anchor).unwrap();
        let b = assemble_p3(&cfg, &g, &anchor).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn su_first_slots_add_nothing_to_the_rate_gain() {
        let (cfg, g) = setup(1e3);
        let anchor = P3Anchor::initial(&cfg, &g);
        let p = assemble_p411(&cfg, &g, &SicOrdering::all_su_first(2), &anchor).unwrap();
        let lay = Layout { k: 2 };
        let mut x = p.default_start();
        let base = p.smooth[0].g.value(&x);
        for i in 0..2 {
            x[lay.t(i)] = 0.3;
            x[lay.z(i)] = 2.0;
        }
        assert!((p.smooth[0].g.value(&x) - base).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn unordered_slot_is_rejected() {
        let (cfg, g) = setup(1e3);
        let o = SicOrdering { alpha_b: vec![1.0, 0.0], alpha_a: vec![0.0, 0.0] };
        assert!(assemble_p411(&cfg, &g, &o, &P3Anchor::initial(&cfg, &g)).is_err());
    }

    #[test]
    fn mixed_orderings_pass_the_raw_audit() {
        let (cfg, g) = setup(1e4);
        for rules in [[AcDecode::PtFirst, AcDecode::SuFirst], [AcDecode::SuFirst, AcDecode::PtFirst]] {
            let out = sca_solve(&cfg, &g, &rules, None, P3Anchor::initial(&cfg, &g)).unwrap();
            let (vars, _, _) = Layout { k: 2 }.recover(&out.x);
            let report = audit_solution(&vars, &SicOrdering::from_decodes(&rules), &cfg, &g);
            assert!(report.passes(), "{:?}", report.worst());
        }
    }

    #[test]
    fn zero_target_prefers_the_larger_su_rate() {
        let (cfg, g) = setup(0.0);
        let mut fix = frozen(&cfg, &g);
        fix.min_gain = 0.0;
        let state = PenaltyState::neutral(2, 1.0);
        let p = assemble_p423(&cfg, &g, &fix, &state).unwrap();
        let sol = cvxcore::solve(&p, &cfg.solver).unwrap();
        let rates = fix.primed(&cfg, &g).unwrap();
        for i in 0..2 {
            if rates.rs1[i] >= rates.rs2[i] {
                assert!(sol.x[i] > 1.0 - 1e-4, "{:?}", sol.x);
            }
        }
    }

    #[test]
    fn heavy_penalty_pins_a_binary_anchor() {
        let (cfg, g) = setup(1e3);
        let fix = frozen(&cfg, &g);
        let anchor = SicOrdering::from_decodes(&[AcDecode::SuFirst, AcDecode::PtFirst]);
        let state = PenaltyState { zeta: 1e9, alpha_anchor: anchor.clone() };
        let p = assemble_p423(&cfg, &g, &fix, &state).unwrap();
        let sol = cvxcore::solve(&p, &cfg.solver).unwrap();
        let got = relaxed_from_x(2, &sol.x);
        for (a, b) in got.alpha_b.iter().chain(&got.alpha_a).zip(anchor.alpha_b.iter().chain(&anchor.alpha_a)) {
            assert!((a - b).abs() < 1e-4, "{got:?}");
        }
    }

    #[test]
    fn nonpositive_zeta_is_rejected() {
        assert!(PenaltyState::neutral(2, 0.0).validate(2).is_err());
        assert!(PenaltyState::neutral(2, 1.0).validate(3).is_err());
    }

    #[test]
    fn binary_feasible_anchor_is_kept() {
        let (cfg, g) = setup(1e3);
        let fix = frozen(&cfg, &g);
        let start = SicOrdering::all_pt_first(2);
        let out = sic_penalty_loop(&cfg, &g, &fix, Some(&start)).unwrap();
        assert_eq!(out.ordering, start);
        assert_eq!(out.iterations, 1);
        assert!(!out.fallback);
    }

    #[test]
    fn small_target_keeps_pt_first() {
        let (cfg, g) = setup(1e3);
        let out = sic_penalty_loop(&cfg, &g, &frozen(&cfg, &g), None).unwrap();
        assert_eq!(out.ordering, SicOrdering::all_pt_first(2));
        assert!(out.binary_gap <= BINARY_GAP_TOL);
    }

    #[test]
    fn penalty_loop_matches_enumeration() {
        for delta in [1e3, 1e4, 3e4, 3.8e4] {
            let (cfg, g) = setup(delta);
            let fix = frozen(&cfg, &g);
            let out = sic_penalty_loop(&cfg, &g, &fix, None).unwrap();
            let rates = fix.primed(&cfg, &g).unwrap();
            let want = brute(&rates, fix.min_gain).unwrap();
            assert!(
                (rates.su_rate(&out.ordering) - rates.su_rate(&want)).abs() <= 1e-9 * rates.su_rate(&want),
                "delta {delta}: {:?} vs {want:?}",
                out.ordering
            );
            assert!(out.ordering.is_binary());
        }
    }

    #[test]
    fn unreachable_target_is_infeasible() {
        let (cfg, g) = setup(1e3);
        let mut fix = frozen(&cfg, &g);
        fix.min_gain = 1e9;
        assert!(sic_penalty_loop(&cfg, &g, &fix, None).unwrap_err().is_infeasible());
    }

    #[test]
    fn chain_slacks() {
        let c = ChainRecord {
            exact_before: 10.0,
            bound_before: 10.0,
            bound_start: 9.0,
            bound_solved: 11.0,
            bound_reordered: 11.0,
            exact_after: 12.0,
        };
        assert_eq!(c.slacks()[0], 0.0);
        assert!(c.holds(0.0));
        let bad = ChainRecord { bound_reordered: 10.0, ..c };
        assert!(!bad.holds(1e-9));
    }

    #[test]
    fn small_target_matches_fixed_ordering() {
        let (cfg, g) = setup(1e3);
        let fixed = algorithm1(&cfg, &g).unwrap();
        let dynamic = algorithm2(&cfg, &g).unwrap();
        let rel = (dynamic.total_su_rate - fixed.total_su_rate).abs() / fixed.total_su_rate;
        assert!(rel <= 5e-3, "{} vs {}", dynamic.total_su_rate, fixed.total_su_rate);
        assert!(dynamic.converged);
    }

    #[test]
    fn disabled_search_reduces_to_fixed_ordering() {
        let (cfg, g) = setup(1e4);
        let fixed = algorithm1(&cfg, &g).unwrap();
        let opts = BcdOptions { search_ordering: false, two_start: false };
        let dynamic = algorithm2_with(&cfg, &g, opts).unwrap();
        let rel = (dynamic.total_su_rate - fixed.total_su_rate).abs() / fixed.total_su_rate;
        assert!(rel <= 1e-6, "{} vs {}", dynamic.total_su_rate, fixed.total_su_rate);
        assert_eq!(dynamic.ordering, SicOrdering::all_pt_first(2));
    }

    #[test]
    fn large_target_uses_su_first_and_beats_fixed() {
        let (cfg, g) = setup(3.8e4);
        let fixed = algorithm1(&cfg, &g).unwrap();
        let dynamic = algorithm2(&cfg, &g).unwrap();
        assert!(dynamic.total_su_rate >= fixed.total_su_rate * (1.0 - 1e-6));
        assert!(dynamic.ordering.alpha_a.iter().any(|&a| a == 1.0), "{:?}", dynamic.ordering);
        let tr = dynamic.objective_trace();
        assert!(tr.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)), "{tr:?}");
        assert!(dynamic.bcd_trace.iter().all(|r| r.chain.holds(CHAIN_TOL)));
        assert!(dynamic.trace_csv().lines().count() == dynamic.iterations() + 1);
    }
}
