//! Expectation of the PT spectral efficiency over the backscatter symbol.
//!
//! With `c = √v·e^{iθ}` circularly-symmetric complex Gaussian, `v` is unit
//! exponential and `θ` uniform and independent. The phase average has the
//! closed form `E_θ ln(A + B cos θ) = ln((A + √(A² − B²)) / 2)`, so only the
//! one-dimensional integral over `v` needs a rule. It is taken as a trapezoid
//! in `y = ln v`, where the integrand `e^{y − e^y}` decays doubly
//! exponentially on the right and exponentially on the left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::MIN_QUADRATURE_ORDER;

const Y_MIN: f64 = -32.0;
const Y_MAX: f64 = 4.0;

/// Fixed nodes `v_k` and weights `w_k` with `E[h(v)] ≈ Σ w_k h(v_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ScatterRule {
    pub fn new(order: usize) -> Result<Self> {
        if order < MIN_QUADRATURE_ORDER {
            return Err(Error::Config(format!(
                "quadrature_order must be at least {MIN_QUADRATURE_ORDER}, got {order}"
            )));
        }
        let h = (Y_MAX - Y_MIN) / (order - 1) as f64;
        let mut nodes = Vec::with_capacity(order);
        let mut weights = Vec::with_capacity(order);
        for k in 0..order {
            let y = Y_MIN + h * k as f64;
            let v = y.exp();
            let end = if k == 0 || k + 1 == order { 0.5 } else { 1.0 };
            nodes.push(v);
            weights.push(end * h * (y - v).exp());
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// `ψ(u) = E_c log₂(1 + |√(ρb) + √(ρ s u)·c|²)` and its first two derivatives in `u`.
///
/// `rho_b = P_p b / σ²` and `rho_s = P_p s / σ²` where `s` is the scatter gain per
/// unit of `u` (for the BC slot, `s = a_i d_i` and `u = β_i`).
pub fn scatter_log2(rule: &ScatterRule, rho_b: f64, rho_s: f64, u: f64) -> (f64, f64, f64) {
    let x = 1.0 + rho_b;
    if rho_s == 0.0 {
        return (x.log2(), 0.0, 0.0);
    }
    let (mut val, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (&v, &w) in rule.nodes.iter().zip(&rule.weights) {
        let kappa = rho_s * v;
        let cross = 4.0 * rho_b * kappa;
        let a = x + kappa * u;
        // A² − B² factored to avoid cancellation when the direct and scattered paths align.
        let root_bk = (rho_b * kappa * u).max(0.0).sqrt();
        let lo = 1.0 + (rho_b.sqrt() - (kappa * u).max(0.0).sqrt()).powi(2);
        let hi = a + 2.0 * root_bk;
        let disc = lo * hi;
        let sq = disc.sqrt();
        let f = a + sq;
        let dd = 2.0 * a * kappa - cross;
        let fp = kappa + dd / (2.0 * sq);
        let fpp = kappa * kappa / sq - dd * dd / (4.0 * disc * sq);
        val += w * (0.5 * f).ln();
        d1 += w * fp / f;
        d2 += w * (fpp * f - fp * fp) / (f * f);
    }
    let l2 = std::f64::consts::LN_2;
    (val / l2, d1 / l2, d2 / l2)
}
