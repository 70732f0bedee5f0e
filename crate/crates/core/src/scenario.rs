//! Scenario configuration, geometry and channel gains.
//!
//! Every physical constant used by the rate model and the optimizers comes
//! from a [`ScenarioConfig`]. Powers are in watts, energy in joules, time in
//! seconds and rates in bit/s; the noise power spectral density is the only
//! quantity given in dBm/Hz and is converted once by [`noise_power`].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::cvxcore::SolverOptions;
use crate::error::{Error, Result};

/// Default number of nodes of the scatter-expectation quadrature rule.
pub const DEFAULT_QUADRATURE_ORDER: usize = 256;
/// Smallest accepted quadrature order.
pub const MIN_QUADRATURE_ORDER: usize = 4;

/// Path-loss exponent for a link class, either shared by every SU or given per SU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSu {
    Uniform(f64),
    PerIndex(Vec<f64>),
}

impl PerSu {
    fn get(&self, i: usize) -> Result<f64> {
        match self {
            PerSu::Uniform(v) => Ok(*v),
            PerSu::PerIndex(v) => v
                .get(i)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing per-SU exponent for SU {}", i + 1))),
        }
    }
}

/// Path-loss exponent between SU pairs, shared or given as a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPair {
    Uniform(f64),
    Matrix(Vec<Vec<f64>>),
}

impl PerPair {
    fn get(&self, j: usize, i: usize) -> Result<f64> {
        match self {
            PerPair::Uniform(v) => Ok(*v),
            PerPair::Matrix(m) => m
                .get(j)
                .and_then(|row| row.get(i))
                .copied()
                .ok_or_else(|| Error::Config(format!("missing SU-SU exponent ({}, {})", j + 1, i + 1))),
        }
    }
}

/// Path-loss exponents keyed by link class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossExponents {
    pub pt_rx: f64,
    pub pt_su: PerSu,
    pub su_rx: PerSu,
    pub su_su: PerPair,
}

impl Default for PathlossExponents {
    fn default() -> Self {
        Self {
            pt_rx: 3.5,
            pt_su: PerSu::Uniform(2.5),
            su_rx: PerSu::Uniform(2.9),
            su_su: PerPair::Uniform(2.5),
        }
    }
}

/// Small-scale fading power gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fading {
    /// Every link has unit fading gain.
    #[default]
    Unit,
    /// One unit-mean exponential draw per link from a seeded generator.
    Exponential { seed: u64 },
    /// Explicit per-link gains. `su_su` must be symmetric.
    Fixed {
        pt_rx: f64,
        pt_su: Vec<f64>,
        su_rx: Vec<f64>,
        su_su: Vec<Vec<f64>>,
    },
}

/// Stopping rule for an outer iterative loop (SCA or BCD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSettings {
    /// Relative objective change below which the loop stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl LoopSettings {
    pub const fn sca_default() -> Self {
        Self { tol: 1e-6, max_iter: 50 }
    }

    pub const fn bcd_default() -> Self {
        Self { tol: 1e-6, max_iter: 20 }
    }
}

fn default_quadrature_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

fn default_sca() -> LoopSettings {
    LoopSettings::sca_default()
}

fn default_bcd() -> LoopSettings {
    LoopSettings::bcd_default()
}

/// All physical parameters, node positions and algorithm knobs of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of secondary users `K`.
    pub num_sus: usize,
    pub pt_pos: [f64; 2],
    pub rx_pos: [f64; 2],
    pub su_pos: Vec<[f64; 2]>,
    /// PT transmit power `P_p` in watts.
    pub pt_power: f64,
    /// Channel bandwidth `W` in hertz.
    pub bandwidth: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd: f64,
    /// Energy-harvesting efficiency `η`.
    pub eh_efficiency: f64,
    /// Backscatter circuit power `ε_b` in watts.
    pub bc_circuit_power: f64,
    /// Active-transmission circuit power `ε_a` in watts.
    pub ac_circuit_power: f64,
    /// Primary symbols per backscatter symbol `N`.
    pub spreading_factor: u32,
    /// Minimum PT rate gain `Δ` in bit/s.
    pub min_pt_gain: f64,
    /// Block duration `T` in seconds.
    pub block_duration: f64,
    #[serde(default)]
    pub pathloss: PathlossExponents,
    #[serde(default)]
    pub fading: Fading,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_sca")]
    pub sca: LoopSettings,
    #[serde(default = "default_bcd")]
    pub bcd: LoopSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ScenarioConfig {
    /// Two-SU reference layout: PT at the origin, SUs at (±0.8, 0) m and the
    /// receiver at (0, 100) m, with P_p = 1 W and Δ = 1 kbit/s.
    pub fn reference() -> Self {
        Self {
            num_sus: 2,
            pt_pos: [0.0, 0.0],
            rx_pos: [0.0, 100.0],
            su_pos: vec![[0.8, 0.0], [-0.8, 0.0]],
            pt_power: 1.0,
            bandwidth: 1.0e4,
            noise_psd: -90.0,
            eh_efficiency: 0.8,
            bc_circuit_power: 1.0e-5,
            ac_circuit_power: 1.0e-3,
            spreading_factor: 128,
            min_pt_gain: 1.0e3,
            block_duration: 1.0,
            pathloss: PathlossExponents::default(),
            fading: Fading::Unit,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            solver: SolverOptions::default(),
            sca: LoopSettings::sca_default(),
            bcd: LoopSettings::bcd_default(),
        }
    }

    /// The reference layout reduced to its first SU.
    pub fn reference_single() -> Self {
        let mut cfg = Self::reference();
        cfg.num_sus = 1;
        cfg.su_pos.truncate(1);
        cfg
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Applies a `key=value` override. Keys are dot-separated JSON paths
    /// (`solver.tol`, `pathloss.pt_rx`); values are parsed as JSON and fall
    /// back to a bare string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let value: serde_json::Value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
        let mut doc = serde_json::to_value(self)?;
        let mut node = &mut doc;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (depth, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` does not name an object field")))?;
            if depth + 1 == parts.len() {
                if !obj.contains_key(*part) {
                    return Err(Error::Config(format!("unknown scenario key `{key}`")));
                }
                obj.insert((*part).to_string(), value.clone());
                break;
            }
            node = obj
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown scenario key `{key}`")))?;
        }
        let cfg: Self = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Noise power σ² in watts.
    pub fn noise_power(&self) -> f64 {
        noise_power(self.noise_psd, self.bandwidth)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.num_sus == 0 {
            return cfg_err("num_sus must be at least 1".into());
        }
        if self.su_pos.len() != self.num_sus {
            return cfg_err(format!(
                "su_pos has {} entries but num_sus = {}",
                self.su_pos.len(),
                self.num_sus
            ));
        }
        let positive = [
            ("pt_power", self.pt_power),
            ("bandwidth", self.bandwidth),
            ("block_duration", self.block_duration),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return cfg_err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.eh_efficiency > 0.0 && self.eh_efficiency <= 1.0) {
            return cfg_err(format!("eh_efficiency must lie in (0, 1], got {}", self.eh_efficiency));
        }
        for (name, v) in [
            ("bc_circuit_power", self.bc_circuit_power),
            ("ac_circuit_power", self.ac_circuit_power),
            ("min_pt_gain", self.min_pt_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return cfg_err(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        if !self.noise_psd.is_finite() {
            return cfg_err("noise_psd must be finite".into());
        }
        if self.spreading_factor < 2 {
            return cfg_err(format!("spreading_factor must be at least 2, got {}", self.spreading_factor));
        }
        if self.quadrature_order < MIN_QUADRATURE_ORDER {
            return cfg_err(format!(
                "quadrature_order must be at least {MIN_QUADRATURE_ORDER}, got {}",
                self.quadrature_order
            ));
        }
        let mut nodes = vec![self.pt_pos, self.rx_pos];
        nodes.extend(self.su_pos.iter().copied());
        if nodes.iter().flatten().any(|c| !c.is_finite()) {
            return cfg_err("node positions must be finite".into());
        }
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                if distance(nodes[i], nodes[j]) <= 0.0 {
                    return cfg_err(format!("nodes {i} and {j} are co-located"));
                }
            }
        }
        self.solver.validate()?;
        for (name, l) in [("sca", self.sca), ("bcd", self.bcd)] {
            if !(l.tol > 0.0) || l.max_iter == 0 {
                return cfg_err(format!("{name} needs tol > 0 and max_iter >= 1"));
            }
        }
        Ok(())
    }
}

fn distance(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Large-scale gain `fading · distance^(−exponent)`.
pub fn path_gain(distance: f64, exponent: f64, fading: f64) -> Result<f64> {
    if !(distance.is_finite() && distance > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance} (co-located nodes?)")));
    }
    if !(exponent.is_finite() && exponent > 0.0) {
        return Err(Error::Domain(format!("path-loss exponent must be positive, got {exponent}")));
    }
    if !(fading.is_finite() && fading > 0.0) {
        return Err(Error::Domain(format!("fading gain must be positive, got {fading}")));
    }
    Ok(fading * distance.powf(-exponent))
}

/// Converts a noise PSD in dBm/Hz over `bandwidth` Hz into watts.
pub fn noise_power(psd_dbm_hz: f64, bandwidth: f64) -> f64 {
    10f64.powf((psd_dbm_hz - 30.0) / 10.0) * bandwidth
}

/// Power gains of every link. `f[j][i]` is the SU_j → SU_i gain; the
/// diagonal is unused and zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGains {
    /// PT → receiver.
    pub b: f64,
    /// PT → SU_i.
    pub a: Vec<f64>,
    /// SU_i → receiver.
    pub d: Vec<f64>,
    /// SU_j → SU_i.
    pub f: Vec<Vec<f64>>,
}

impl ChannelGains {
    pub fn num_sus(&self) -> usize {
        self.a.len()
    }

    /// Copy with every SU-to-SU gain zeroed, which disables energy recycling.
    pub fn without_recycling(&self) -> Self {
        let k = self.num_sus();
        Self { f: vec![vec![0.0; k]; k], ..self.clone() }
    }
}

struct FadingDraws {
    pt_rx: f64,
    pt_su: Vec<f64>,
    su_rx: Vec<f64>,
    su_su: Vec<Vec<f64>>,
}

fn fading_draws(cfg: &ScenarioConfig) -> Result<FadingDraws> {
    let k = cfg.num_sus;
    match &cfg.fading {
        Fading::Unit => Ok(FadingDraws {
            pt_rx: 1.0,
            pt_su: vec![1.0; k],
            su_rx: vec![1.0; k],
            su_su: vec![vec![1.0; k]; k],
        }),
        Fading::Exponential { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut draw = || -> f64 { Exp1.sample(&mut rng) };
            let pt_rx = draw();
            let pt_su: Vec<f64> = (0..k).map(|_| draw()).collect();
            let su_rx: Vec<f64> = (0..k).map(|_| draw()).collect();
            let mut su_su = vec![vec![1.0; k]; k];
            for j in 0..k {
                for i in (j + 1)..k {
                    let g = draw();
                    su_su[j][i] = g;
                    su_su[i][j] = g;
                }
            }
            Ok(FadingDraws { pt_rx, pt_su, su_rx, su_su })
        }
        Fading::Fixed { pt_rx, pt_su, su_rx, su_su } => {
            if pt_su.len() != k || su_rx.len() != k {
                return Err(Error::Config("fixed fading vectors must have num_sus entries".into()));
            }
            if su_su.len() != k || su_su.iter().any(|r| r.len() != k) {
                return Err(Error::Config("fixed fading su_su must be num_sus x num_sus".into()));
            }
            for j in 0..k {
                for i in 0..k {
                    if i != j && su_su[j][i] != su_su[i][j] {
                        return Err(Error::Config("fixed fading su_su must be symmetric".into()));
                    }
                }
            }
            Ok(FadingDraws {
                pt_rx: *pt_rx,
                pt_su: pt_su.clone(),
                su_rx: su_rx.clone(),
                su_su: su_su.clone(),
            })
        }
    }
}

/// Builds all link gains from the geometry, exponents and fading of `cfg`.
pub fn build_channel_gains(cfg: &ScenarioConfig) -> Result<ChannelGains> {
    let k = cfg.num_sus;
    if cfg.su_pos.len() != k {
        return Err(Error::Config("su_pos length does not match num_sus".into()));
    }
    let fade = fading_draws(cfg)?;
    let pl = &cfg.pathloss;
    let b = path_gain(distance(cfg.pt_pos, cfg.rx_pos), pl.pt_rx, fade.pt_rx)?;
    let mut a = Vec::with_capacity(k);
    let mut d = Vec::with_capacity(k);
    for i in 0..k {
        a.push(path_gain(distance(cfg.pt_pos, cfg.su_pos[i]), pl.pt_su.get(i)?, fade.pt_su[i])?);
        d.push(path_gain(distance(cfg.su_pos[i], cfg.rx_pos), pl.su_rx.get(i)?, fade.su_rx[i])?);
    }
    let mut f = vec![vec![0.0; k]; k];
    for j in 0..k {
        for i in (j + 1)..k {
            let exponent = pl.su_su.get(j, i)?;
            if pl.su_su.get(i, j)? != exponent {
                return Err(Error::Config("SU-SU exponent matrix must be symmetric".into()));
            }
            let g = path_gain(distance(cfg.su_pos[j], cfg.su_pos[i]), exponent, fade.su_su[j][i])?;
            f[j][i] = g;
            f[i][j] = g;
        }
    }
    Ok(ChannelGains { b, a, d, f })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn path_gain_examples() {
        assert_eq!(path_gain(1.0, 3.5, 1.0).unwrap(), 1.0);
        assert!(rel(path_gain(100.0, 3.5, 1.0).unwrap(), 1.0e-7) < 1e-12);
        assert!(rel(path_gain(0.8, 2.5, 1.0).unwrap(), 1.7469281074217107) < 1e-12);
    }

    #[test]
    fn path_gain_rejects_colocated() {
        assert!(matches!(path_gain(0.0, 2.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(path_gain(-1.0, 2.0, 1.0), Err(Error::Domain(_))));
        assert!(path_gain(1.0, 0.0, 1.0).is_err());
        assert!(path_gain(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn noise_power_examples() {
        assert!(rel(noise_power(-90.0, 1.0e4), 1.0e-8) < 1e-12);
        assert!(rel(noise_power(-30.0, 1.0), 1.0e-6) < 1e-12);
        assert!(rel(noise_power(-90.0, 1.0), 1.0e-12) < 1e-12);
    }

    #[test]
    fn reference_gains() {
        let g = build_channel_gains(&ScenarioConfig::reference()).unwrap();
        assert!(rel(g.b, 1.0e-7) < 1e-12);
        assert!(rel(g.a[0], 1.7469) < 1e-4);
        assert!(rel(g.d[0], 1.5847e-6) < 1e-4);
        assert!(rel(g.f[0][1], 1.6f64.powf(-2.5)) < 1e-12);
        assert!(rel(g.f[0][1], 0.30936) < 2e-3);
        assert_eq!(g.f[0][1], g.f[1][0]);
        assert_eq!(g.f[0][0], 0.0);
        assert_eq!(g.a[0], g.a[1]);
    }

    #[test]
    fn halved_fading_halves_every_gain() {
        let base = build_channel_gains(&ScenarioConfig::reference()).unwrap();
        let mut cfg = ScenarioConfig::reference();
        cfg.fading = Fading::Fixed {
            pt_rx: 0.5,
            pt_su: vec![0.5, 0.5],
            su_rx: vec![0.5, 0.5],
            su_su: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        let half = build_channel_gains(&cfg).unwrap();
        assert!(rel(half.b, base.b / 2.0) < 1e-14);
        for i in 0..2 {
            assert!(rel(half.a[i], base.a[i] / 2.0) < 1e-14);
            assert!(rel(half.d[i], base.d[i] / 2.0) < 1e-14);
        }
        assert!(rel(half.f[0][1], base.f[0][1] / 2.0) < 1e-14);
    }

    #[test]
    fn single_su_has_empty_recycling() {
        let g = build_channel_gains(&ScenarioConfig::reference_single()).unwrap();
        assert_eq!(g.f, vec![vec![0.0]]);
    }

    #[test]
    fn seeded_fading_is_reproducible() {
        let mut cfg = ScenarioConfig::reference();
        cfg.fading = Fading::Exponential { seed: 11 };
        let g1 = build_channel_gains(&cfg).unwrap();
        let g2 = build_channel_gains(&cfg).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.f[0][1].to_bits(), g1.f[1][0].to_bits());
        cfg.fading = Fading::Exponential { seed: 12 };
        assert_ne!(build_channel_gains(&cfg).unwrap(), g1);
    }

    #[test]
    fn strict_schema_rejects_unknown_keys() {
        let mut doc = serde_json::to_value(ScenarioConfig::reference()).unwrap();
        doc.as_object_mut().unwrap().insert("bogus".into(), 1.into());
        assert!(ScenarioConfig::from_json_str(&doc.to_string()).is_err());
        let ok = ScenarioConfig::from_json_str(&ScenarioConfig::reference().to_json_string()).unwrap();
        assert_eq!(ok, ScenarioConfig::reference());
    }

    #[test]
    fn overrides_edit_nested_fields() {
        let cfg = ScenarioConfig::reference().with_override("pathloss.pt_rx=3.0").unwrap();
        assert_eq!(cfg.pathloss.pt_rx, 3.0);
        let cfg = cfg.with_override("min_pt_gain=5000").unwrap();
        assert_eq!(cfg.min_pt_gain, 5000.0);
        assert!(cfg.with_override("nonexistent=1").is_err());
        assert!(cfg.with_override("eh_efficiency=1.5").is_err());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = ScenarioConfig::reference();
        cfg.su_pos[1] = cfg.su_pos[0];
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::reference();
        cfg.quadrature_order = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ScenarioConfig::reference();
        cfg.spreading_factor = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::reference();
        cfg.num_sus = 3;
        assert!(cfg.validate().is_err());
    }
}
