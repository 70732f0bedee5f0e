use nalgebra::{DMatrix, DVector};

use super::kkt::{null_space, report_with};
use super::{inequalities, ConcaveFn, Ineq, SmoothConcaveProgram, SolveStatus, Solution, SolverOptions, TraceRow};
use super::{LinearConstraint, Sense, SmoothConstraint, Term};
use crate::error::{Error, Result};

/// Centering stops once half the squared Newton decrement drops below this.
const DECREMENT_TOL: f64 = 1e-10;
const ARMIJO: f64 = 0.25;
const MIN_STEP: f64 = 1e-14;
/// Decrement below which undamped Newton steps are taken.
const PURE_NEWTON: f64 = 1e-6;

/// Affine parametrization `x = xp + Z y` of the equality-constrained subspace.
struct Space {
    xp: DVector<f64>,
    z: DMatrix<f64>,
}

impl Space {
    fn build(p: &SmoothConcaveProgram, x0: &[f64]) -> Result<Self> {
        let n = p.n_vars;
        let rows: Vec<_> = p.eq_rows().collect();
        let x0v = DVector::from_column_slice(x0);
        if rows.is_empty() {
            return Ok(Self { xp: x0v, z: DMatrix::identity(n, n) });
        }
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (r, row) in rows.iter().enumerate() {
            for &(i, c) in &row.coeffs {
                a[(r, i)] += c;
            }
            b[r] = row.rhs;
        }
        let svd = a.clone().svd(true, true);
        let resid = &a * &x0v - &b;
        let shift = svd
            .solve(&resid, 1e-12 * svd.singular_values.max().max(1e-300))
            .map_err(|e| Error::NumericalFailure(e.to_string()))?;
        let xp = &x0v - shift;
        let miss = (&a * &xp - &b).amax();
        if miss > 1e-9 * (1.0 + b.amax()) {
            return Err(Error::Infeasible(format!("equality rows are inconsistent (residual {miss:.3e})")));
        }
        let z = null_space(p);
        Ok(Self { xp, z })
    }

    fn x(&self, y: &DVector<f64>) -> Vec<f64> {
        (&self.xp + &self.z * y).as_slice().to_vec()
    }
}

struct Core<'a> {
    ineqs: Vec<Ineq<'a>>,
    objective: &'a ConcaveFn,
    space: Space,
}

impl Core<'_> {
    fn slacks_ok(&self, x: &[f64]) -> bool {
        self.ineqs.iter().all(|q| {
            let c = q.value(x);
            c > 0.0 && c.is_finite()
        })
    }

    fn barrier_value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = t * self.objective.value(x);
        for q in &self.ineqs {
            let c = q.value(x);
            if !(c > 0.0 && c.is_finite()) {
                return None;
            }
            v += c.ln();
        }
        v.is_finite().then_some(v)
    }

    /// Gradient and Hessian of the barrier function in the reduced coordinates.
    fn derivatives(&self, x: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let ev = self.objective.eval(x);
        let mut g = ev.grad * t;
        let mut h = ev.hess * t;
        for q in &self.ineqs {
            let e = q.eval(x);
            let c = e.value;
            g.axpy(1.0 / c, &e.grad, 1.0);
            if e.hess.nrows() == n {
                h += &e.hess * (1.0 / c);
            }
            h.ger(-1.0 / (c * c), &e.grad, &e.grad, 1.0);
        }
        let zt = self.space.z.transpose();
        let gy = &zt * g;
        let hy = &zt * h * &self.space.z;
        (gy, hy)
    }
}

/// Solves `(−H + λI) d = g` by Cholesky, raising `λ` until the factorization succeeds.
fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Result<DVector<f64>> {
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(format!("non-finite barrier derivatives (g = {g:?})")));
    }
    let m = -h;
    let scale = m.diagonal().amax().max(1e-300);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += lambda;
        }
        if let Some(ch) = reg.cholesky() {
            let d = ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Ok(d);
            }
        }
        lambda = if lambda == 0.0 { 1e-12 * scale } else { lambda * 10.0 };
    }
    Err(Error::NumericalFailure("Newton system stayed singular after regularization".into()))
}

struct PathResult {
    y: DVector<f64>,
    t: f64,
    iterations: usize,
    status: SolveStatus,
    stopped_early: bool,
}

/// Barrier path following from a strictly feasible `y`.
/// Barrier increases allowed after the gap test passes while stationarity lags.
const EXTRA_ROUNDS: usize = 4;

fn follow_path(
    core: &Core<'_>,
    mut y: DVector<f64>,
    opts: &SolverOptions,
    phase_one: bool,
    stop_early: &dyn Fn(&[f64]) -> bool,
    trace: &mut Vec<TraceRow>,
    offset: usize,
) -> Result<PathResult> {
    let m = core.ineqs.len().max(1) as f64;
    let f0 = core.objective.value(&core.space.x(&y));
    let mut t = m / f0.abs().max(1.0);
    let mut iterations = 0;
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let mut extra_rounds = 0;
    loop {
        // Centering at fixed t.
        let mut prev_dec = f64::INFINITY;
        loop {
            let x = core.space.x(&y);
            let (g, h) = core.derivatives(&x, t);
            if g.is_empty() {
                break;
            }
            let d = newton_direction(&g, &h)?;
            let dec = 0.5 * g.dot(&d);
            if dec <= DECREMENT_TOL {
                break;
            }
            if iterations >= opts.max_iter {
                return Ok(PathResult { y, t, iterations, status: SolveStatus::MaxIterations, stopped_early: false });
            }
            let Some(phi) = core.barrier_value(&x, t) else { break };
            let mut s = 1.0;
            let mut accepted = None;
            if dec <= PURE_NEWTON && dec < prev_dec {
                // Inside the quadratic region the Armijo test is below rounding; take the full step.
                let yn = &y + &d;
                let xn = core.space.x(&yn);
                if let Some(pn) = core.barrier_value(&xn, t) {
                    accepted = Some((yn, xn, pn));
                }
            }
            prev_dec = dec;
            while accepted.is_none() && s >= MIN_STEP {
                let yn = &y + &d * s;
                let xn = core.space.x(&yn);
                if let Some(pn) = core.barrier_value(&xn, t) {
                    if pn > phi && pn >= phi + ARMIJO * s * 2.0 * dec {
                        accepted = Some((yn, xn, pn));
                        break;
                    }
                }
                s *= 0.5;
            }
            let Some((yn, xn, pn)) = accepted else { break };
            y = yn;
            iterations += 1;
            trace.push(TraceRow {
                iteration: offset + iterations,
                phase_one,
                barrier_t: t,
                objective: core.objective.value(&xn),
                barrier_value: pn,
                residual: dec,
            });
        }
        let x = core.space.x(&y);
        if stop_early(&x) {
            return Ok(PathResult { y, t, iterations, status: SolveStatus::Optimal, stopped_early: true });
        }
        let f = core.objective.value(&x);
        if m / t <= opts.tol * f.abs().max(1.0) {
            if phase_one {
                return Ok(PathResult { y, t, iterations, status: SolveStatus::Optimal, stopped_early: false });
            }
            let lam: Vec<f64> = core.ineqs.iter().map(|q| 1.0 / (t * q.value(&x))).collect();
            let kkt = report_with(&core.ineqs, core.objective, &core.space.z, &x, &lam).max();
            if kkt <= opts.tol {
                return Ok(PathResult { y, t, iterations, status: SolveStatus::Optimal, stopped_early: false });
            }
            let stalled = best.as_ref().is_some_and(|b| kkt >= b.0);
            if best.as_ref().is_none_or(|b| kkt < b.0) {
                best = Some((kkt, y.clone(), t));
            }
            extra_rounds += 1;
            if stalled || extra_rounds > EXTRA_ROUNDS || !(t * opts.barrier_factor).is_finite() {
                let (kkt, y, t) = best.take().expect("best point recorded");
                let status = if kkt <= opts.tol.sqrt() { SolveStatus::Optimal } else { SolveStatus::MaxIterations };
                return Ok(PathResult { y, t, iterations, status, stopped_early: false });
            }
        }
        if iterations >= opts.max_iter {
            return Ok(PathResult { y, t, iterations, status: SolveStatus::MaxIterations, stopped_early: false });
        }
        t *= opts.barrier_factor;
    }
}

/// Auxiliary program `max −s` over `c_j(x) + s·w_j ≥ 0`, `s ≥ −1`.
///
/// With `hard_bounds` the variable bounds stay unrelaxed, which keeps
/// perspective terms inside their domain; `x0` must then lie strictly inside them.
fn phase_one_program(p: &SmoothConcaveProgram, x0: &[f64], hard_bounds: bool) -> (SmoothConcaveProgram, Vec<f64>) {
    let n = p.n_vars;
    let si = n;
    let mut aux = SmoothConcaveProgram::new(n + 1);
    aux.var_names[..n].clone_from_slice(&p.var_names);
    aux.var_names[n] = "phase_one_s".into();
    aux.lower[si] = -1.0;
    if hard_bounds {
        aux.lower[..n].copy_from_slice(&p.lower);
        aux.upper[..n].copy_from_slice(&p.upper);
    }
    let mut worst = f64::NEG_INFINITY;
    for q in inequalities(p) {
        let (w, c) = match q {
            Ineq::Lower(..) | Ineq::Upper(..) if hard_bounds => continue,
            Ineq::Lower(i, lo) => {
                aux.linear.push(LinearConstraint {
                    label: format!("{} lower", p.var_names[i]),
                    coeffs: vec![(i, 1.0), (si, 1.0)],
                    sense: Sense::Ge,
                    rhs: lo,
                });
                (1.0, q.value(x0))
            }
            Ineq::Upper(i, hi) => {
                aux.linear.push(LinearConstraint {
                    label: format!("{} upper", p.var_names[i]),
                    coeffs: vec![(i, 1.0), (si, -1.0)],
                    sense: Sense::Le,
                    rhs: hi,
                });
                (1.0, q.value(x0))
            }
            Ineq::Linear(r) => {
                let w = r.coeffs.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt().max(1e-12);
                let mut coeffs = r.coeffs.clone();
                coeffs.push((si, if r.sense == Sense::Le { -w } else { w }));
                aux.linear.push(LinearConstraint { label: r.label.clone(), coeffs, sense: r.sense, rhs: r.rhs });
                (w, q.value(x0))
            }
            Ineq::Smooth(s) => {
                let ev = s.g.eval(x0);
                let mut w = ev.grad.norm().max(ev.value.abs());
                if !(w.is_finite() && w > 1e-12) {
                    w = 1.0;
                }
                let g = s.g.clone().with(Term::Linear { coeffs: vec![(si, w)] });
                aux.smooth.push(SmoothConstraint { label: s.label.clone(), g });
                (w, ev.value)
            }
        };
        let need = if c.is_finite() { -c / w } else { f64::INFINITY };
        worst = worst.max(need);
    }
    aux.linear.extend(p.eq_rows().cloned());
    aux.objective = ConcaveFn::linear(vec![(si, -1.0)], 0.0);
    let mut start = x0.to_vec();
    start.push(worst.max(0.0) + 1.0);
    (aux, start)
}

/// Moves each coordinate at least 1% of its box width (or 1e-3 for one-sided bounds) inside the bounds.
fn pull_inside(p: &SmoothConcaveProgram, mut x: Vec<f64>) -> Vec<f64> {
    for i in 0..p.n_vars {
        let (lo, hi) = (p.lower[i], p.upper[i]);
        let (lo_in, hi_in) = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => (lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo)),
            (true, false) => (lo + 1e-3 * lo.abs().max(1.0), f64::INFINITY),
            (false, true) => (f64::NEG_INFINITY, hi - 1e-3 * hi.abs().max(1.0)),
            (false, false) => (f64::NEG_INFINITY, f64::INFINITY),
        };
        x[i] = x[i].clamp(lo_in, hi_in);
    }
    x
}

/// Maximizes `program.objective` subject to every constraint of `program`.
///
/// Returns `status = Infeasible` when phase one proves that no strictly
/// feasible point exists; use [`Solution::feasible`] to turn that into an error.
pub fn solve(program: &SmoothConcaveProgram, opts: &SolverOptions) -> Result<Solution> {
    program.validate()?;
    opts.validate()?;
    let n = program.n_vars;
    let raw_start = pull_inside(program, program.start.clone().unwrap_or_else(|| program.default_start()));
    let space = Space::build(program, &raw_start)?;
    let mut core = Core { ineqs: inequalities(program), objective: &program.objective, space };
    let mut trace = Vec::new();
    let mut iterations = 0;

    let x0 = core.space.xp.as_slice().to_vec();
    let y = DVector::zeros(core.space.z.ncols());
    let finite_start = program.objective.value(&x0).is_finite();
    if !(core.slacks_ok(&x0) && finite_start) {
        let inside = (0..n).all(|i| x0[i] > program.lower[i] && x0[i] < program.upper[i]);
        let (aux, aux_start) = phase_one_program(program, &x0, inside);
        let aux_space = Space::build(&aux, &aux_start)?;
        let aux_core = Core { ineqs: inequalities(&aux), objective: &aux.objective, space: aux_space };
        let ay = DVector::zeros(aux_core.space.z.ncols());
        let ax0 = aux_core.space.x(&ay);
        if !aux_core.slacks_ok(&ax0) {
            return Err(Error::NumericalFailure("phase-one start is not interior".into()));
        }
        let stop = |x: &[f64]| x[n] < 0.0;
        let res = follow_path(&aux_core, ay, opts, true, &stop, &mut trace, 0)?;
        iterations += res.iterations;
        let xa = aux_core.space.x(&res.y);
        let xf = xa[..n].to_vec();
        if !(res.stopped_early && core.slacks_ok(&xf)) {
            log::debug!("phase one ended with s = {:.3e}", xa[n]);
            return Ok(Solution {
                objective_value: program.objective.value(&xf),
                x: xf,
                kkt_residual: f64::INFINITY,
                iterations,
                status: SolveStatus::Infeasible,
                multipliers: Vec::new(),
                trace,
            });
        }
        // The phase-one point already satisfies the equality rows, so it becomes the new origin.
        core.space.xp = DVector::from_column_slice(&xf);
    }

    let res = follow_path(&core, y, opts, false, &|_| false, &mut trace, iterations)?;
    iterations += res.iterations;
    let x = core.space.x(&res.y);
    let multipliers: Vec<f64> = core.ineqs.iter().map(|q| 1.0 / (res.t * q.value(&x))).collect();
    let rep = report_with(&core.ineqs, core.objective, &core.space.z, &x, &multipliers);
    Ok(Solution {
        objective_value: program.objective.value(&x),
        x,
        kkt_residual: rep.max(),
        iterations,
        status: res.status,
        multipliers,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvxcore::{Kernel, Term};

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn interior_quadratic_optimum() {
        let mut p = SmoothConcaveProgram::new(1);
        p.bounds(0, 0.0, 2.0).maximize(ConcaveFn::new().with(Term::Quadratic { var: 0, coeff: -1.0, center: 1.0 }));
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-6, "{:?}", s.x);
        assert!(s.kkt_residual <= 1e-7);
    }

    #[test]
    fn lp_face() {
        let mut p = SmoothConcaveProgram::new(2);
        p.bounds(0, 0.0, f64::INFINITY)
            .bounds(1, 0.0, f64::INFINITY)
            .add_linear("sum", vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.0)
            .maximize(ConcaveFn::linear(vec![(0, 1.0), (1, 1.0)], 0.0));
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn perspective_corner() {
        let mut p = SmoothConcaveProgram::new(2);
        p.bounds(0, 0.0, 1.0).bounds(1, 0.0, 0.5).maximize(ConcaveFn::new().with(Term::Perspective {
            num: 1,
            den: 0,
            scale: 1.0,
            kernel: Kernel::Log2Affine { gain: 1.0 },
        }));
        let s = solve(&p, &opts()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-5 && (s.x[1] - 0.5).abs() < 1e-5, "{:?}", s.x);
    }

    #[test]
    fn phase_one_finds_interior_and_detects_infeasibility() {
        let mut p = SmoothConcaveProgram::new(2);
        p.bounds(0, 0.0, 10.0)
            .bounds(1, 0.0, 10.0)
            .add_linear("lo", vec![(0, 1.0), (1, 1.0)], Sense::Ge, 15.0)
            .maximize(ConcaveFn::linear(vec![(0, -1.0), (1, -2.0)], 0.0))
            .with_start(vec![1.0, 1.0]);
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 10.0).abs() < 1e-5 && (s.x[1] - 5.0).abs() < 1e-5, "{:?}", s.x);
        assert!(s.trace.iter().any(|r| r.phase_one));

        p.linear[0].rhs = 25.0;
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(s.feasible().unwrap_err().is_infeasible());
    }

    #[test]
    fn equality_rows_are_respected() {
        let mut p = SmoothConcaveProgram::new(3);
        for i in 0..3 {
            p.bounds(i, 0.0, 1.0);
        }
        p.add_linear("sum", vec![(0, 1.0), (1, 1.0), (2, 1.0)], Sense::Eq, 1.2);
        let mut f = ConcaveFn::new();
        for i in 0..3 {
            f.push(Term::Quadratic { var: i, coeff: -1.0, center: i as f64 });
        }
        p.maximize(f);
        let s = solve(&p, &opts()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        let sum: f64 = s.x.iter().sum();
        assert!((sum - 1.2).abs() < 1e-9);
        assert!((s.x[0] - 0.0).abs() < 1e-5 && (s.x[1] - 0.2).abs() < 1e-5 && (s.x[2] - 1.0).abs() < 1e-5, "{:?}", s.x);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut p = SmoothConcaveProgram::new(1);
        p.bounds(0, 0.0, 2.0).maximize(ConcaveFn::new().with(Term::Quadratic { var: 0, coeff: -1.0, center: 1.9 }));
        let s = solve(&p, &SolverOptions { max_iter: 1, ..opts() }).unwrap();
        assert_eq!(s.status, SolveStatus::MaxIterations);
    }
}
