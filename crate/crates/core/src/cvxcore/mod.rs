//! Dense log-barrier interior-point solver for smooth concave maximization.
//!
//! A [`SmoothConcaveProgram`] is plain data: variable bounds, linear rows and
//! concave constraint functions built from [`Term`]s, so programs can be
//! compared, cloned and serialized. [`solve`] runs a phase-one search for a
//! strictly feasible point when needed, then damped Newton path following.

mod barrier;
mod kkt;
mod terms;

pub use barrier::solve;
pub use kkt::{kkt_residuals, KktReport};
pub use terms::{ConcaveFn, Evaluation, Kernel, Term, PERSPECTIVE_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances and limits of the barrier method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Relative duality-gap and KKT tolerance.
    pub tol: f64,
    /// Cap on the total number of Newton steps.
    pub max_iter: usize,
    /// Factor applied to the barrier parameter after each centering.
    pub barrier_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 200, barrier_factor: 10.0 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("solver tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be positive".into()));
        }
        if !(self.barrier_factor > 1.0) {
            return Err(Error::Config("barrier_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// `Σ coeffs·x (sense) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub label: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// Signed slack, nonnegative when satisfied; equalities report `−|residual|`.
    pub fn slack(&self, x: &[f64]) -> f64 {
        let l = self.lhs(x);
        match self.sense {
            Sense::Le => self.rhs - l,
            Sense::Ge => l - self.rhs,
            Sense::Eq => -(l - self.rhs).abs(),
        }
    }

    pub fn scale(&self, x: &[f64]) -> f64 {
        (self.rhs.abs() + self.coeffs.iter().map(|&(i, c)| (c * x[i]).abs()).sum::<f64>()).max(1e-12)
    }
}

/// `g(x) ≥ 0` with `g` concave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConstraint {
    pub label: String,
    pub g: ConcaveFn,
}

/// Maximize a concave objective over bounds, linear rows and concave constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConcaveProgram {
    pub n_vars: usize,
    pub var_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub linear: Vec<LinearConstraint>,
    pub smooth: Vec<SmoothConstraint>,
    pub objective: ConcaveFn,
    /// Optional starting point; need not be feasible.
    pub start: Option<Vec<f64>>,
}

impl SmoothConcaveProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            var_names: (0..n_vars).map(|i| format!("x{i}")).collect(),
            lower: vec![f64::NEG_INFINITY; n_vars],
            upper: vec![f64::INFINITY; n_vars],
            linear: Vec::new(),
            smooth: Vec::new(),
            objective: ConcaveFn::new(),
            start: None,
        }
    }

    pub fn name(&mut self, i: usize, name: impl Into<String>) -> &mut Self {
        self.var_names[i] = name.into();
        self
    }

    pub fn bounds(&mut self, i: usize, lo: f64, hi: f64) -> &mut Self {
        self.lower[i] = lo;
        self.upper[i] = hi;
        self
    }

    pub fn add_linear(&mut self, label: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> &mut Self {
        self.linear.push(LinearConstraint { label: label.into(), coeffs, sense, rhs });
        self
    }

    pub fn add_smooth(&mut self, label: impl Into<String>, g: ConcaveFn) -> &mut Self {
        self.smooth.push(SmoothConstraint { label: label.into(), g });
        self
    }

    pub fn maximize(&mut self, f: ConcaveFn) -> &mut Self {
        self.objective = f;
        self
    }

    pub fn with_start(&mut self, x: Vec<f64>) -> &mut Self {
        self.start = Some(x);
        self
    }

    /// Checks dimensions and bound ordering.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars;
        if self.lower.len() != n || self.upper.len() != n || self.var_names.len() != n {
            return Err(Error::Config("bound vectors must have n_vars entries".into()));
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] >= self.upper[i] {
                return Err(Error::Config(format!("variable {} has empty or invalid bounds", self.var_names[i])));
            }
        }
        let in_range = |f: &ConcaveFn| f.max_index().is_none_or(|m| m < n);
        if !in_range(&self.objective) || self.smooth.iter().any(|s| !in_range(&s.g)) {
            return Err(Error::Config("term references a variable out of range".into()));
        }
        if self.linear.iter().any(|r| r.coeffs.iter().any(|&(i, c)| i >= n || !c.is_finite()) || !r.rhs.is_finite()) {
            return Err(Error::Config("linear row references a variable out of range or is not finite".into()));
        }
        if let Some(s) = &self.start {
            if s.len() != n {
                return Err(Error::Config("start point has the wrong dimension".into()));
            }
        }
        Ok(())
    }

    /// Interior-friendly default start: bound midpoints, one unit inside a single bound, else 0.
    pub fn default_start(&self) -> Vec<f64> {
        (0..self.n_vars)
            .map(|i| match (self.lower[i].is_finite(), self.upper[i].is_finite()) {
                (true, true) => 0.5 * (self.lower[i] + self.upper[i]),
                (true, false) => self.lower[i] + 1.0,
                (false, true) => self.upper[i] - 1.0,
                (false, false) => 0.0,
            })
            .collect()
    }

    pub fn eq_rows(&self) -> impl Iterator<Item = &LinearConstraint> {
        self.linear.iter().filter(|r| r.sense == Sense::Eq)
    }

    pub fn num_inequalities(&self) -> usize {
        inequalities(self).len()
    }

    /// Label of every inequality in the order used by [`Solution::multipliers`].
    pub fn inequality_labels(&self) -> Vec<String> {
        inequalities(self)
            .iter()
            .map(|q| match q {
                Ineq::Lower(i, _) => format!("{} >= lower", self.var_names[*i]),
                Ineq::Upper(i, _) => format!("{} <= upper", self.var_names[*i]),
                Ineq::Linear(r) => r.label.clone(),
                Ineq::Smooth(s) => s.label.clone(),
            })
            .collect()
    }
}

/// One inequality `c(x) > 0` of the barrier.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Ineq<'a> {
    Lower(usize, f64),
    Upper(usize, f64),
    Linear(&'a LinearConstraint),
    Smooth(&'a SmoothConstraint),
}

impl Ineq<'_> {
    pub(crate) fn value(&self, x: &[f64]) -> f64 {
        match self {
            Ineq::Lower(i, lo) => x[*i] - lo,
            Ineq::Upper(i, hi) => hi - x[*i],
            Ineq::Linear(r) => r.slack(x),
            Ineq::Smooth(s) => s.g.value(x),
        }
    }

    /// Value, gradient and (for smooth rows) Hessian.
    pub(crate) fn eval(&self, x: &[f64]) -> Evaluation {
        use nalgebra::{DMatrix, DVector};
        let n = x.len();
        match self {
            Ineq::Smooth(s) => s.g.eval(x),
            _ => {
                let mut grad = DVector::zeros(n);
                match self {
                    Ineq::Lower(i, _) => grad[*i] = 1.0,
                    Ineq::Upper(i, _) => grad[*i] = -1.0,
                    Ineq::Linear(r) => {
                        let sign = if r.sense == Sense::Le { -1.0 } else { 1.0 };
                        for &(i, c) in &r.coeffs {
                            grad[i] += sign * c;
                        }
                    }
                    Ineq::Smooth(_) => unreachable!(),
                }
                Evaluation { value: self.value(x), grad, hess: DMatrix::zeros(0, 0) }
            }
        }
    }

    /// Magnitude used to normalize slacks.
    pub(crate) fn scale(&self, x: &[f64]) -> f64 {
        match self {
            Ineq::Lower(_, b) | Ineq::Upper(_, b) => b.abs().max(1.0),
            Ineq::Linear(r) => r.scale(x),
            Ineq::Smooth(s) => s.g.magnitude(x).max(1e-12),
        }
    }
}

pub(crate) fn inequalities(p: &SmoothConcaveProgram) -> Vec<Ineq<'_>> {
    let mut out = Vec::new();
    for i in 0..p.n_vars {
        if p.lower[i].is_finite() {
            out.push(Ineq::Lower(i, p.lower[i]));
        }
    }
    for i in 0..p.n_vars {
        if p.upper[i].is_finite() {
            out.push(Ineq::Upper(i, p.upper[i]));
        }
    }
    out.extend(p.linear.iter().filter(|r| r.sense != Sense::Eq).map(Ineq::Linear));
    out.extend(p.smooth.iter().map(Ineq::Smooth));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// One Newton step of the path-following loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub phase_one: bool,
    pub barrier_t: f64,
    pub objective: f64,
    /// `t·f(x) + Σ log c(x)` after the step.
    pub barrier_value: f64,
    /// Half the squared Newton decrement before the step.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Barrier multipliers `1/(t·c_j)` in [`SmoothConcaveProgram::inequality_labels`] order.
    pub multipliers: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

impl Solution {
    /// Turns an infeasible status into [`Error::Infeasible`].
    pub fn feasible(self) -> Result<Self> {
        match self.status {
            SolveStatus::Infeasible => Err(Error::Infeasible("no strictly feasible point exists".into())),
            _ => Ok(self),
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,phase_one,barrier_t,objective,barrier_value,residual\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{},{:.11e},{:.11e},{:.11e},{:.11e}\n",
                r.iteration, r.phase_one as u8, r.barrier_t, r.objective, r.barrier_value, r.residual
            ));
        }
        s
    }
}
