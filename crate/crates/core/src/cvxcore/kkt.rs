use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{inequalities, ConcaveFn, Ineq, SmoothConcaveProgram};

/// Normalized slack below which a constraint counts as active when estimating multipliers.
const ACTIVE_SLACK: f64 = 1e-5;

/// Scaled first-order optimality residuals at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖∇f + Σ λ_j ∇c_j‖∞` on the equality subspace, over `max(1, ‖∇f‖∞)`.
    pub stationarity: f64,
    /// `Σ λ_j c_j` over `max(1, |f|)`.
    pub complementarity: f64,
    /// Largest constraint violation relative to its scale.
    pub infeasibility: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.infeasibility)
    }
}

/// Orthonormal basis of the null space of the equality rows.
pub(super) fn null_space(p: &SmoothConcaveProgram) -> DMatrix<f64> {
    let n = p.n_vars;
    let rows: Vec<_> = p.eq_rows().collect();
    if rows.is_empty() {
        return DMatrix::identity(n, n);
    }
    let mut a: DMatrix<f64> = DMatrix::zeros(rows.len(), n);
    for (r, row) in rows.iter().enumerate() {
        for &(i, c) in &row.coeffs {
            a[(r, i)] += c;
        }
    }
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let top: f64 = eig.eigenvalues.amax();
    let top = top.max(1e-300);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&k| eig.eigenvalues[k].abs() <= 1e-12 * top)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub(super) fn report_with(ineqs: &[Ineq<'_>], objective: &ConcaveFn, z: &DMatrix<f64>, x: &[f64], lam: &[f64]) -> KktReport {
    let fe = objective.eval(x);
    let mut r = fe.grad.clone();
    let mut comp = 0.0;
    let mut infeas: f64 = 0.0;
    for (q, &l) in ineqs.iter().zip(lam) {
        let e = q.eval(x);
        r.axpy(l, &e.grad, 1.0);
        comp += (l * e.value).abs();
        infeas = infeas.max((-e.value).max(0.0) / q.scale(x));
    }
    let projected = z * (z.transpose() * r);
    KktReport {
        stationarity: projected.amax() / fe.grad.amax().max(1.0),
        complementarity: comp / fe.value.abs().max(1.0),
        infeasibility: infeas,
    }
}

/// Optimality residuals of `x` for `program`.
///
/// With `multipliers` (in [`SmoothConcaveProgram::inequality_labels`] order)
/// they are used as given; otherwise nonnegative multipliers of the
/// near-active constraints are fitted by least squares.
pub fn kkt_residuals(program: &SmoothConcaveProgram, x: &[f64], multipliers: Option<&[f64]>) -> KktReport {
    let ineqs = inequalities(program);
    let z = null_space(program);
    let mut eq_violation: f64 = 0.0;
    for row in program.eq_rows() {
        eq_violation = eq_violation.max((row.lhs(x) - row.rhs).abs() / row.scale(x));
    }
    let lam = match multipliers {
        Some(m) => m.to_vec(),
        None => estimate_multipliers(&ineqs, &program.objective, &z, x),
    };
    let mut rep = report_with(&ineqs, &program.objective, &z, x, &lam);
    rep.infeasibility = rep.infeasibility.max(eq_violation);
    rep
}

fn estimate_multipliers(ineqs: &[Ineq<'_>], objective: &ConcaveFn, z: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let active: Vec<usize> =
        (0..ineqs.len()).filter(|&j| ineqs[j].value(x) / ineqs[j].scale(x) <= ACTIVE_SLACK).collect();
    let mut lam = vec![0.0; ineqs.len()];
    if active.is_empty() || z.ncols() == 0 {
        return lam;
    }
    let zt = z.transpose();
    let cols: Vec<DVector<f64>> = active.iter().map(|&j| &zt * ineqs[j].eval(x).grad).collect();
    let a = DMatrix::from_columns(&cols);
    let b = -(&zt * objective.eval(x).grad);
    let sol = nnls(&a, &b);
    for (k, &j) in active.iter().enumerate() {
        lam[j] = sol[k];
    }
    lam
}

/// Lawson–Hanson active-set solver for `min ‖A x − b‖₂, x ≥ 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1e-300) * b.amax().max(1.0);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_columns(&idx.iter().map(|&j| a.column(j).into_owned()).collect::<Vec<_>>());
        let svd = sub.svd(true, true);
        let zs = svd.solve(b, 1e-14 * svd.singular_values.max().max(1e-300)).unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = zs[k];
        }
        full
    };
    for _ in 0..3 * n + 3 {
        let w = a.transpose() * (b - a * &x);
        let pick = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = pick else { break };
        passive[j] = true;
        for _ in 0..3 * n + 3 {
            let z = solve_passive(&passive);
            if (0..n).filter(|&k| passive[k]).all(|k| z[k] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for k in (0..n).filter(|&k| passive[k] && z[k] <= 0.0) {
                alpha = alpha.min(x[k] / (x[k] - z[k]));
            }
            x += (z - &x) * alpha;
            for k in 0..n {
                if passive[k] && x[k] <= 1e-15 {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvxcore::{Sense, Term};

    #[test]
    fn nnls_matches_unconstrained_when_positive() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 2.0).abs() < 1e-10);
        let b = DVector::from_vec(vec![-1.0, 2.0, 1.0]);
        let x = nnls(&a, &b);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn exact_optimum_has_tiny_residuals() {
        let mut p = SmoothConcaveProgram::new(1);
        p.bounds(0, 0.0, 2.0).maximize(ConcaveFn::new().with(Term::Quadratic { var: 0, coeff: -1.0, center: 1.0 }));
        let r = kkt_residuals(&p, &[1.0], None);
        assert!(r.max() <= 1e-8, "{r:?}");
    }

    #[test]
    fn interior_point_of_lp_is_not_stationary() {
        let mut p = SmoothConcaveProgram::new(2);
        p.bounds(0, 0.0, 5.0)
            .bounds(1, 0.0, 5.0)
            .add_linear("sum", vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.0)
            .maximize(ConcaveFn::linear(vec![(0, 1.0), (1, 1.0)], 0.0));
        let r = kkt_residuals(&p, &[0.2, 0.3], None);
        assert_eq!(r.infeasibility, 0.0);
        assert!(r.stationarity > 0.0);
        let r = kkt_residuals(&p, &[0.4, 0.6], None);
        assert!(r.max() <= 1e-10, "{r:?}");
    }
}
