//! Rates, PT rate gain and energy bookkeeping of the hybrid active-passive system.

mod scatter;

pub use scatter::{scatter_log2, ScatterRule};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ChannelGains, ScenarioConfig};

/// Per-SU time, reflection and power allocation for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVars {
    /// Backscatter time `τ_i` (s).
    pub tau: Vec<f64>,
    /// Active transmission time `t_i` (s).
    pub t: Vec<f64>,
    /// Reflection coefficient `β_i`.
    pub beta: Vec<f64>,
    /// Active transmit power `P_tr,i` (W).
    pub p_tr: Vec<f64>,
    /// Length of the active phase (s).
    pub t_a: f64,
    /// Length of the backscatter phase (s).
    pub t_b: f64,
}

impl AllocationVars {
    pub fn zeros(k: usize) -> Self {
        Self { tau: vec![0.0; k], t: vec![0.0; k], beta: vec![0.0; k], p_tr: vec![0.0; k], t_a: 0.0, t_b: 0.0 }
    }

    pub fn num_sus(&self) -> usize {
        self.tau.len()
    }

    pub fn check_shape(&self, k: usize) -> Result<()> {
        if [self.tau.len(), self.t.len(), self.beta.len(), self.p_tr.len()].iter().any(|&n| n != k) {
            return Err(Error::Validation(format!("allocation vectors must all have {k} entries")));
        }
        Ok(())
    }
}

/// How the receiver runs SIC in an SU's active slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AcDecode {
    /// Decode the PT signal first, then the SU signal interference-free.
    PtFirst,
    /// Decode the SU signal first, then the PT signal interference-free.
    SuFirst,
}

/// Per-SU SIC indicators. `alpha_b[i] = 1` selects PT-first decoding and
/// `alpha_a[i] = 1` SU-first decoding; inside the ordering program they are
/// relaxed to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SicOrdering {
    pub alpha_b: Vec<f64>,
    pub alpha_a: Vec<f64>,
}

const BINARY_TOL: f64 = 1e-9;

impl SicOrdering {
    pub fn uniform(k: usize, rule: AcDecode) -> Self {
        Self::from_decodes(&vec![rule; k])
    }

    pub fn all_pt_first(k: usize) -> Self {
        Self::uniform(k, AcDecode::PtFirst)
    }

    pub fn all_su_first(k: usize) -> Self {
        Self::uniform(k, AcDecode::SuFirst)
    }

    pub fn from_decodes(rules: &[AcDecode]) -> Self {
        let alpha_b = rules.iter().map(|r| f64::from(u8::from(*r == AcDecode::PtFirst))).collect();
        let alpha_a = rules.iter().map(|r| f64::from(u8::from(*r == AcDecode::SuFirst))).collect();
        Self { alpha_b, alpha_a }
    }

    /// All `2^k` orderings, PT-first before SU-first in lexicographic order.
    pub fn enumerate(k: usize) -> Vec<Self> {
        (0..1usize << k)
            .map(|mask| {
                let rules: Vec<AcDecode> = (0..k)
                    .map(|i| if mask >> (k - 1 - i) & 1 == 1 { AcDecode::SuFirst } else { AcDecode::PtFirst })
                    .collect();
                Self::from_decodes(&rules)
            })
            .collect()
    }

    pub fn num_sus(&self) -> usize {
        self.alpha_b.len()
    }

    /// `max(α − α²)` over every indicator.
    pub fn binary_gap(&self) -> f64 {
        self.alpha_b.iter().chain(&self.alpha_a).map(|a| a - a * a).fold(0.0, f64::max)
    }

    /// `Σ(α − α²)` over every indicator.
    pub fn penalty_sum(&self) -> f64 {
        self.alpha_b.iter().chain(&self.alpha_a).map(|a| a - a * a).sum()
    }

    pub fn is_binary(&self) -> bool {
        self.alpha_b.iter().chain(&self.alpha_a).all(|a| a.abs() <= BINARY_TOL || (a - 1.0).abs() <= BINARY_TOL)
    }

    /// Decode rule of slot `i`, or `None` when neither indicator is set.
    pub fn decode(&self, i: usize) -> Result<Option<AcDecode>> {
        let (ab, aa) = (self.alpha_b[i], self.alpha_a[i]);
        let bit = |a: f64| -> Result<bool> {
            if a.abs() <= BINARY_TOL {
                Ok(false)
            } else if (a - 1.0).abs() <= BINARY_TOL {
                Ok(true)
            } else {
                Err(Error::Model(format!("ordering of SU {} is not binary ({a})", i + 1)))
            }
        };
        match (bit(ab)?, bit(aa)?) {
            (true, true) => Err(Error::Model(format!("SU {} has both SIC orderings selected", i + 1))),
            (true, false) => Ok(Some(AcDecode::PtFirst)),
            (false, true) => Ok(Some(AcDecode::SuFirst)),
            (false, false) => Ok(None),
        }
    }

    pub fn decodes(&self) -> Result<Vec<Option<AcDecode>>> {
        (0..self.num_sus()).map(|i| self.decode(i)).collect()
    }
}

/// Harvested and consumed energy per SU over one block (J).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub harvested_bc: Vec<f64>,
    pub harvested_ac: Vec<f64>,
    pub consumed_bc: Vec<f64>,
    pub consumed_ac: Vec<f64>,
}

impl EnergyReport {
    /// Harvested minus consumed energy of SU `i`.
    pub fn surplus(&self, i: usize) -> f64 {
        self.harvested_bc[i] + self.harvested_ac[i] - self.consumed_bc[i] - self.consumed_ac[i]
    }
}

/// `E_c log₂(1 + P_p|√b + √s·c|²/σ²)` with `c ~ CN(0, 1)`, by the fixed rule of `order` nodes.
pub fn expected_log2_term(los_gain: f64, scatter_gain: f64, p_p: f64, sigma2: f64, order: usize) -> Result<f64> {
    let rule = ScatterRule::new(order)?;
    expected_log2_term_with(&rule, los_gain, scatter_gain, p_p, sigma2)
}

/// As [`expected_log2_term`] with a prebuilt rule.
pub fn expected_log2_term_with(
    rule: &ScatterRule,
    los_gain: f64,
    scatter_gain: f64,
    p_p: f64,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {sigma2}")));
    }
    if los_gain < 0.0 || scatter_gain < 0.0 || p_p < 0.0 {
        return Err(Error::Domain("gains and power must be nonnegative".into()));
    }
    Ok(scatter_log2(rule, p_p * los_gain / sigma2, p_p * scatter_gain / sigma2, 1.0).0)
}

/// Interference-free PT spectral efficiency `log₂(1 + P_p b/σ²)`.
pub fn reference_log2(gains: &ChannelGains, cfg: &ScenarioConfig) -> f64 {
    (1.0 + cfg.pt_power * gains.b / cfg.noise_power()).log2()
}

/// BC-slot SU rate from its closed form, as a function of the slot's raw variables.
pub fn bc_su_rate(tau: f64, beta: f64, ad: f64, cfg: &ScenarioConfig) -> f64 {
    let n = f64::from(cfg.spreading_factor);
    cfg.bandwidth * tau / n * (1.0 + n * beta * cfg.pt_power * ad / cfg.noise_power()).log2()
}

/// PT and SU rates during SU `i`'s backscatter slot (bit/s).
pub fn bc_slot_rates(i: usize, vars: &AllocationVars, gains: &ChannelGains, cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let rule = ScatterRule::new(cfg.quadrature_order)?;
    bc_slot_rates_with(&rule, i, vars, gains, cfg)
}

pub(crate) fn bc_slot_rates_with(
    rule: &ScatterRule,
    i: usize,
    vars: &AllocationVars,
    gains: &ChannelGains,
    cfg: &ScenarioConfig,
) -> Result<(f64, f64)> {
    let ad = gains.a[i] * gains.d[i];
    let (tau, beta) = (vars.tau[i], vars.beta[i]);
    let su = bc_su_rate(tau, beta, ad, cfg);
    let pt = if tau == 0.0 {
        0.0
    } else {
        cfg.bandwidth * tau * expected_log2_term_with(rule, gains.b, beta * ad, cfg.pt_power, cfg.noise_power())?
    };
    Ok((pt, su))
}

/// Per-slot AC rates for an explicit decode rule and raw `(t, P_tr)`.
pub fn ac_rates(rule: AcDecode, t: f64, p_tr: f64, d: f64, gains: &ChannelGains, cfg: &ScenarioConfig) -> (f64, f64) {
    let s2 = cfg.noise_power();
    let w = cfg.bandwidth;
    let pb = cfg.pt_power * gains.b;
    let pd = p_tr * d;
    match rule {
        AcDecode::PtFirst => (w * t * (1.0 + pb / (pd + s2)).log2(), w * t * (1.0 + pd / s2).log2()),
        AcDecode::SuFirst => (w * t * (1.0 + pb / s2).log2(), w * t * (1.0 + pd / (pb + s2)).log2()),
    }
}

/// PT and SU rates during SU `i`'s active slot (bit/s).
pub fn ac_slot_rates(
    i: usize,
    vars: &AllocationVars,
    ordering: &SicOrdering,
    gains: &ChannelGains,
    cfg: &ScenarioConfig,
) -> Result<(f64, f64)> {
    let t = vars.t[i];
    match ordering.decode(i)? {
        Some(rule) => Ok(ac_rates(rule, t, vars.p_tr[i], gains.d[i], gains, cfg)),
        None if t > 0.0 => Err(Error::Model(format!("SU {} transmits actively without a SIC ordering", i + 1))),
        None => Ok((0.0, 0.0)),
    }
}

/// PT rate gain over both phases relative to transmitting without SUs (bit/s).
pub fn pt_rate_gain(vars: &AllocationVars, ordering: &SicOrdering, gains: &ChannelGains, cfg: &ScenarioConfig) -> Result<f64> {
    let k = gains.num_sus();
    vars.check_shape(k)?;
    let rule = ScatterRule::new(cfg.quadrature_order)?;
    let r0 = reference_log2(gains, cfg);
    let mut total = 0.0;
    for i in 0..k {
        let (pt_bc, _) = bc_slot_rates_with(&rule, i, vars, gains, cfg)?;
        let (pt_ac, _) = ac_slot_rates(i, vars, ordering, gains, cfg)?;
        total += pt_bc + pt_ac - cfg.bandwidth * (vars.tau[i] + vars.t[i]) * r0;
    }
    Ok(total)
}

/// Energy harvested and consumed by every SU.
pub fn energy_report(vars: &AllocationVars, gains: &ChannelGains, cfg: &ScenarioConfig) -> Result<EnergyReport> {
    let k = gains.num_sus();
    vars.check_shape(k)?;
    let (eta, pp) = (cfg.eh_efficiency, cfg.pt_power);
    let mut rep = EnergyReport {
        harvested_bc: vec![0.0; k],
        harvested_ac: vec![0.0; k],
        consumed_bc: vec![0.0; k],
        consumed_ac: vec![0.0; k],
    };
    for i in 0..k {
        let (tau, t) = (vars.tau[i], vars.t[i]);
        if vars.t_b < tau || vars.t_a < t {
            return Err(Error::Validation(format!("SU {} slot exceeds its phase", i + 1)));
        }
        let mut hb = eta * (1.0 - vars.beta[i]) * pp * gains.a[i] * tau + eta * pp * gains.a[i] * (vars.t_b - tau);
        let mut ha = eta * pp * gains.a[i] * (vars.t_a - t);
        for j in (0..k).filter(|&j| j != i) {
            hb += eta * pp * gains.a[j] * gains.f[j][i] * vars.beta[j] * vars.tau[j];
            ha += eta * vars.p_tr[j] * gains.f[j][i] * vars.t[j];
        }
        rep.harvested_bc[i] = hb;
        rep.harvested_ac[i] = ha;
        rep.consumed_bc[i] = cfg.bc_circuit_power * tau;
        rep.consumed_ac[i] = (vars.p_tr[i] + cfg.ac_circuit_power) * t;
    }
    Ok(rep)
}

/// Sum of every SU's BC and AC rate (bit/s).
pub fn total_su_rate(vars: &AllocationVars, ordering: &SicOrdering, gains: &ChannelGains, cfg: &ScenarioConfig) -> Result<f64> {
    let k = gains.num_sus();
    vars.check_shape(k)?;
    let mut total = 0.0;
    for i in 0..k {
        total += bc_su_rate(vars.tau[i], vars.beta[i], gains.a[i] * gains.d[i], cfg);
        total += ac_slot_rates(i, vars, ordering, gains, cfg)?.1;
    }
    Ok(total)
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

    fn sample_vars() -> AllocationVars {
        AllocationVars {
            tau: vec![0.1, 0.1],
            t: vec![0.1, 0.1],
            beta: vec![0.5, 0.5],
            p_tr: vec![0.01, 0.01],
            t_a: 0.2,
            t_b: 0.2,
        }
    }

    #[test]
    fn expected_term_reductions() {
        let x = expected_log2_term(1e-7, 0.0, 1.0, 1e-8, 24).unwrap();
        assert_eq!(x, 11f64.log2());
        assert_eq!(expected_log2_term(1e-7, 1e-6, 0.0, 1e-8, 24).unwrap(), 0.0);
        assert!(matches!(expected_log2_term(1e-7, 1e-6, 1.0, 1e-8, 3), Err(Error::Config(_))));
    }

    #[test]
    fn bc_su_rate_example() {
        let mut cfg = ScenarioConfig::reference();
        cfg.spreading_factor = 128;
        let r = bc_su_rate(0.1, 0.5, 2.769e-6, &cfg);
        assert!((r - 110.2).abs() < 0.1, "{r}");
        assert_eq!(bc_su_rate(0.1, 0.0, 2.769e-6, &cfg), 0.0);
        assert_eq!(bc_su_rate(0.0, 0.5, 2.769e-6, &cfg), 0.0);
    }

    #[test]
    fn ac_su_rate_example() {
        let (cfg, mut g) = setup();
        g.d[0] = 1.5847e-6;
        let (_, su) = ac_rates(AcDecode::PtFirst, 0.1, 0.01, g.d[0], &g, &cfg);
        assert!((su - 1370.0).abs() < 1.0, "{su}");
        let (pt, su0) = ac_rates(AcDecode::PtFirst, 0.1, 0.0, g.d[0], &g, &cfg);
        assert_eq!(su0, 0.0);
        assert_eq!(pt, cfg.bandwidth * 0.1 * reference_log2(&g, &cfg));
        let (pt, _) = ac_rates(AcDecode::SuFirst, 0.1, 3.0, g.d[0], &g, &cfg);
        assert_eq!(pt, cfg.bandwidth * 0.1 * reference_log2(&g, &cfg));
    }

    #[test]
    fn missing_ordering_with_active_slot_is_a_model_error() {
        let (cfg, g) = setup();
        let ord = SicOrdering { alpha_b: vec![0.0, 1.0], alpha_a: vec![0.0, 0.0] };
        assert!(matches!(ac_slot_rates(0, &sample_vars(), &ord, &g, &cfg), Err(Error::Model(_))));
        let mut v = sample_vars();
        v.t[0] = 0.0;
        assert_eq!(ac_slot_rates(0, &v, &ord, &g, &cfg).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn rate_gain_reductions() {
        let (cfg, g) = setup();
        let mut v = sample_vars();
        v.beta = vec![0.0, 0.0];
        v.p_tr = vec![0.0, 0.0];
        let gain = pt_rate_gain(&v, &SicOrdering::all_pt_first(2), &g, &cfg).unwrap();
        assert!(gain.abs() < 1e-9, "{gain}");

        let v = sample_vars();
        let su_first = pt_rate_gain(&v, &SicOrdering::all_su_first(2), &g, &cfg).unwrap();
        let mut bc_only = v.clone();
        bc_only.t = vec![0.0, 0.0];
        let bc = pt_rate_gain(&bc_only, &SicOrdering::all_su_first(2), &g, &cfg).unwrap();
        assert!((su_first - bc).abs() <= 1e-9 * bc.abs());
        let pt_first = pt_rate_gain(&v, &SicOrdering::all_pt_first(2), &g, &cfg).unwrap();
        assert!(pt_first < bc);
    }

    #[test]
    fn energy_report_matches_term_by_term() {
        let (cfg, g) = setup();
        let v = sample_vars();
        let rep = energy_report(&v, &g, &cfg).unwrap();
        let (eta, pp) = (0.8, 1.0);
        for i in 0..2 {
            let j = 1 - i;
            let hb = eta * 0.5 * pp * g.a[i] * 0.1 + eta * pp * g.a[i] * 0.1 + eta * pp * g.a[j] * g.f[j][i] * 0.5 * 0.1;
            let ha = eta * pp * g.a[i] * 0.1 + eta * 0.01 * g.f[j][i] * 0.1;
            assert!((rep.harvested_bc[i] - hb).abs() < 1e-15);
            assert!((rep.harvested_ac[i] - ha).abs() < 1e-15);
            assert!((rep.consumed_bc[i] - 1e-6).abs() < 1e-18);
            assert!((rep.consumed_ac[i] - 0.0011).abs() < 1e-15);
        }
        let zero = energy_report(&AllocationVars::zeros(2), &g, &cfg).unwrap();
        assert!(zero.harvested_bc.iter().chain(&zero.consumed_ac).all(|&x| x == 0.0));
        let mut bad = v.clone();
        bad.t_b = 0.05;
        assert!(matches!(energy_report(&bad, &g, &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn full_reflection_absorbs_nothing_in_slot() {
        let (cfg, g) = setup();
        let mut v = AllocationVars::zeros(1);
        v.tau = vec![0.3];
        v.t_b = 0.3;
        v.beta = vec![1.0];
        let g1 = ChannelGains { b: g.b, a: vec![g.a[0]], d: vec![g.d[0]], f: vec![vec![0.0]] };
        let rep = energy_report(&v, &g1, &cfg).unwrap();
        assert_eq!(rep.harvested_bc[0], 0.0);
    }

    #[test]
    fn total_rate_is_sum_of_slots() {
        let (cfg, g) = setup();
        let v = sample_vars();
        let ord = SicOrdering::from_decodes(&[AcDecode::PtFirst, AcDecode::SuFirst]);
        let total = total_su_rate(&v, &ord, &g, &cfg).unwrap();
        let mut sum = 0.0;
        for i in 0..2 {
            sum += bc_slot_rates(i, &v, &g, &cfg).unwrap().1 + ac_slot_rates(i, &v, &ord, &g, &cfg).unwrap().1;
        }
        assert!((total - sum).abs() <= 1e-12 * sum);
    }

    #[test]
    fn enumeration_lists_every_ordering() {
        let all = SicOrdering::enumerate(2);
        assert_eq!(all.len(), 4);
        assert_eq!(all[0], SicOrdering::all_pt_first(2));
        assert_eq!(all[3], SicOrdering::all_su_first(2));
        assert!(all.iter().all(SicOrdering::is_binary));
    }
}
