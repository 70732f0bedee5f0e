//! Concave building blocks with analytic gradients and Hessians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ratemodel::{scatter_log2, ScatterRule};

/// Below this denominator a perspective term takes its continuous extension at zero.
pub const PERSPECTIVE_FLOOR: f64 = 1e-12;

/// Univariate kernel `φ(u)` used inside a perspective `s·φ(x/s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// `log₂(1 + gain·u)`.
    Log2Affine { gain: f64 },
    /// `E_c log₂(1 + |√rho_b + √(rho_s·u)·c|²)` over the fixed rule.
    ScatterLog2 { rule: ScatterRule, rho_b: f64, rho_s: f64 },
}

impl Kernel {
    /// `(φ(u), φ'(u), φ''(u))`; non-finite outside the kernel's domain.
    pub fn eval(&self, u: f64) -> (f64, f64, f64) {
        match self {
            Kernel::Log2Affine { gain } => {
                let arg = 1.0 + gain * u;
                if arg <= 0.0 {
                    return (f64::NAN, f64::NAN, f64::NAN);
                }
                let l2 = std::f64::consts::LN_2;
                (arg.log2(), gain / (arg * l2), -gain * gain / (arg * arg * l2))
            }
            Kernel::ScatterLog2 { rule, rho_b, rho_s } => {
                if u < 0.0 {
                    return (f64::NAN, f64::NAN, f64::NAN);
                }
                scatter_log2(rule, *rho_b, *rho_s, u)
            }
        }
    }
}

/// One additive piece of a [`ConcaveFn`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    /// `Σ c_k x_{i_k}`.
    Linear { coeffs: Vec<(usize, f64)> },
    /// `coeff·(x_var − center)²`; concave when `coeff ≤ 0`.
    Quadratic { var: usize, coeff: f64, center: f64 },
    /// `scale·x_den·φ(x_num / x_den)`.
    Perspective { num: usize, den: usize, scale: f64, kernel: Kernel },
}

/// Value, gradient and Hessian of a function at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Term {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Term::Linear { coeffs } => coeffs.iter().map(|&(i, c)| c * x[i]).sum(),
            Term::Quadratic { var, coeff, center } => coeff * (x[*var] - center).powi(2),
            Term::Perspective { num, den, scale, kernel } => {
                let s = x[*den];
                if s <= PERSPECTIVE_FLOOR {
                    return 0.0;
                }
                scale * s * kernel.eval(x[*num] / s).0
            }
        }
    }

    fn accumulate(&self, x: &[f64], out: &mut Evaluation) {
        match self {
            Term::Linear { coeffs } => {
                for &(i, c) in coeffs {
                    out.value += c * x[i];
                    out.grad[i] += c;
                }
            }
            Term::Quadratic { var, coeff, center } => {
                let r = x[*var] - center;
                out.value += coeff * r * r;
                out.grad[*var] += 2.0 * coeff * r;
                out.hess[(*var, *var)] += 2.0 * coeff;
            }
            Term::Perspective { num, den, scale, kernel } => {
                let s = x[*den];
                if s <= PERSPECTIVE_FLOOR {
                    let (p0, d0, _) = kernel.eval(0.0);
                    out.grad[*num] += scale * d0;
                    out.grad[*den] += scale * p0;
                    return;
                }
                let u = x[*num] / s;
                let (p, d1, d2) = kernel.eval(u);
                out.value += scale * s * p;
                out.grad[*num] += scale * d1;
                out.grad[*den] += scale * (p - u * d1);
                let h = scale * d2 / s;
                out.hess[(*num, *num)] += h;
                out.hess[(*num, *den)] -= h * u;
                out.hess[(*den, *num)] -= h * u;
                out.hess[(*den, *den)] += h * u * u;
            }
        }
    }

    fn variables(&self) -> Vec<usize> {
        match self {
            Term::Linear { coeffs } => coeffs.iter().map(|c| c.0).collect(),
            Term::Quadratic { var, .. } => vec![*var],
            Term::Perspective { num, den, .. } => vec![*num, *den],
        }
    }
}

/// `constant + Σ terms`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConcaveFn {
    pub terms: Vec<Term>,
    pub constant: f64,
}

impl ConcaveFn {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn linear(coeffs: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { terms: vec![Term::Linear { coeffs }], constant }
    }

    pub fn with(mut self, term: Term) -> Self {
        self.terms.push(term);
        self
    }

    pub fn push(&mut self, term: Term) {
        self.terms.push(term);
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|t| t.value(x)).sum::<f64>()
    }

    pub fn eval(&self, x: &[f64]) -> Evaluation {
        let n = x.len();
        let mut out = Evaluation { value: self.constant, grad: DVector::zeros(n), hess: DMatrix::zeros(n, n) };
        for t in &self.terms {
            t.accumulate(x, &mut out);
        }
        out
    }

    /// `|constant| + Σ |term|`, the natural scale for relative slack checks.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        self.constant.abs() + self.terms.iter().map(|t| t.value(x).abs()).sum::<f64>()
    }

    pub fn is_linear(&self) -> bool {
        self.terms.iter().all(|t| matches!(t, Term::Linear { .. }))
    }

    pub(crate) fn max_index(&self) -> Option<usize> {
        self.terms.iter().flat_map(Term::variables).max()
    }
}
