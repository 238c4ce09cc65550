//! Forward mean-variance allocation: `min ½xᵀQx − r·cᵀx` over `Ax ≥ b`,
//! the target-return variant, the risk↔target equivalence map, and
//! efficient-frontier sweeps.
//!
//! Every solution carries a full KKT certificate. A returned
//! [`ForwardSolution`] always satisfies feasibility, dual feasibility,
//! complementary slackness and stationarity to `1e-8`; anything worse is
//! reported as a numerical failure instead of being returned.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::constraints::{ConstraintKind, ConstraintSet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::qp::{solve_qp, QpOptions, QpProblem};

/// Residuals of the first-order optimality system, all as infinity norms.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// `max(0, max_i (b − Ax)_i)`
    pub feasibility: f64,
    /// `max(0, −min_i u_i)`
    pub dual_feasibility: f64,
    /// `max_i |u_i · (Ax − b)_i|`
    pub complementarity: f64,
    /// `‖Qx − ρc − Aᵀu‖∞` with `ρ` the risk tolerance (or the target
    /// multiplier for the target-return variant)
    pub stationarity: f64,
}

impl KktReport {
    pub fn worst(&self) -> f64 {
        self.feasibility
            .max(self.dual_feasibility)
            .max(self.complementarity)
            .max(self.stationarity)
    }
}

/// Certified optimum of one forward solve.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub x: Array1<f64>,
    /// Dual vector over the constraint rows, `u ≥ 0`.
    pub u: Array1<f64>,
    /// `½xᵀQx − r·cᵀx` (or `½xᵀQx` for the target variant).
    pub objective: f64,
    /// Rows where `A x = b` within `1e-8`, ascending.
    pub active_set: Vec<usize>,
    /// `xᵀQx`
    pub risk: f64,
    /// `cᵀx`
    pub ret: f64,
    pub kkt: KktReport,
    /// Multiplier of the `cᵀx = z` row when solved via the target variant.
    pub target_dual: Option<f64>,
}

/// One point of an efficient-frontier sweep.
#[derive(Debug, Clone)]
pub struct FrontierPoint {
    pub r: f64,
    pub risk: f64,
    pub ret: f64,
    pub x: Array1<f64>,
}

const CERT_TOL: f64 = 1e-8;

fn validate_dims(q: &ArrayView2<f64>, c: &ArrayView1<f64>, cons: &ConstraintSet) -> Result<usize> {
    let n = c.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} covariance"),
            actual: format!("{}x{}", q.nrows(), q.ncols()),
            context: "forward solve".into(),
        });
    }
    if cons.n() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("constraints over {n} variables"),
            actual: format!("{}", cons.n()),
            context: "forward solve".into(),
        });
    }
    Ok(n)
}

/// Solves the forward problem at risk tolerance `r ≥ 0`.
///
/// With singular `Q` the optimizer may not be unique; the minimum-norm
/// optimum is returned so repeated runs and tests see one deterministic
/// answer.
pub fn solve_po(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    r: f64,
    cons: &ConstraintSet,
) -> Result<ForwardSolution> {
    solve_po_warm(q, c, r, cons, None)
}

pub(crate) fn solve_po_warm(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    r: f64,
    cons: &ConstraintSet,
    warm: Option<&ArrayView1<f64>>,
) -> Result<ForwardSolution> {
    validate_dims(q, c, cons)?;
    if !r.is_finite() || r < 0.0 {
        return Err(Error::InvalidInput(format!(
            "risk tolerance must be finite and nonnegative, got {r}"
        )));
    }
    let problem = QpProblem {
        h: q.to_owned(),
        g: c.mapv(|v| -r * v),
        a_eq: Array2::zeros((0, c.len())),
        b_eq: Array1::zeros(0),
        a_in: cons.a.clone(),
        b_in: cons.b.clone(),
    };
    let interior = cons.cheap_interior_point();
    let warm_view = warm.cloned().or_else(|| interior.as_ref().map(|v| v.view()));
    let sol = solve_qp(&problem, warm_view.as_ref(), &QpOptions::default())?;

    let (x, u) = if linalg::psd_rank_deficient(q, 1e-12) {
        min_norm_polish(q, c, r, cons, &sol.w)?
    } else {
        (sol.w, sol.in_duals)
    };
    finish_solution(q, c, r, cons, x, u, None)
}

/// Target-return variant: `min ½xᵀQx` subject to `cᵀx = z` and `cons`.
pub fn solve_po_target(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    z: f64,
    cons: &ConstraintSet,
) -> Result<ForwardSolution> {
    let n = validate_dims(q, c, cons)?;
    if !z.is_finite() {
        return Err(Error::InvalidInput("target return must be finite".into()));
    }
    let mut a_eq = Array2::zeros((1, n));
    a_eq.row_mut(0).assign(c);
    let problem = QpProblem {
        h: q.to_owned(),
        g: Array1::zeros(n),
        a_eq,
        b_eq: ndarray::arr1(&[z]),
        a_in: cons.a.clone(),
        b_in: cons.b.clone(),
    };
    let warm = target_warm_start(c, z, cons);
    let sol = match solve_qp(&problem, warm.as_ref().map(|w| w.view()).as_ref(), &QpOptions::default()) {
        Ok(sol) => sol,
        Err(Error::Infeasible { .. }) => {
            let (lo, hi) = attainable_return_range(c, cons)?;
            return Err(Error::InfeasibleTarget { z, lo, hi });
        }
        Err(e) => return Err(e),
    };
    let mu = sol.eq_duals[0];
    let (x, u) = if linalg::psd_rank_deficient(q, 1e-12) {
        min_norm_polish_target(q, c, z, mu, cons, &sol.w)?
    } else {
        (sol.w, sol.in_duals)
    };
    finish_solution(q, c, mu, cons, x, u, Some(mu))
}

/// Assembles and certifies the returned solution. `rho` multiplies `c` in
/// the stationarity residual: the risk tolerance for `solve_po`, the
/// equality multiplier for `solve_po_target`.
fn finish_solution(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    rho: f64,
    cons: &ConstraintSet,
    x: Array1<f64>,
    mut u: Array1<f64>,
    target_dual: Option<f64>,
) -> Result<ForwardSolution> {
    u.mapv_inplace(|v| v.max(0.0));
    let kkt = kkt_report(q, c, rho, cons, &x.view(), &u.view());
    if kkt.worst() > CERT_TOL {
        return Err(Error::NumericalFailure {
            iterations: 0,
            stationarity: kkt.stationarity,
            feasibility: kkt.feasibility,
        });
    }
    let slacks = cons.slacks(&x.view());
    let active_set: Vec<usize> = (0..cons.m())
        .filter(|&i| slacks[i].abs() <= 1e-8 * (1.0 + cons.b[i].abs()))
        .collect();
    let risk = x.dot(&q.dot(&x));
    let ret = c.dot(&x);
    let objective = match target_dual {
        Some(_) => 0.5 * risk,
        None => 0.5 * risk - rho * ret,
    };
    Ok(ForwardSolution {
        x,
        u,
        objective,
        active_set,
        risk,
        ret,
        kkt,
        target_dual,
    })
}

/// KKT residuals for `Qx − ρc − Aᵀu = 0` plus feasibility conditions.
pub fn kkt_report(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    rho: f64,
    cons: &ConstraintSet,
    x: &ArrayView1<f64>,
    u: &ArrayView1<f64>,
) -> KktReport {
    let feasibility = cons.max_violation(x);
    let dual_feasibility = u.iter().fold(0.0f64, |m, &v| m.max(-v)).max(0.0);
    let slacks = cons.slacks(x);
    let complementarity = u
        .iter()
        .zip(slacks.iter())
        .fold(0.0f64, |m, (&ui, &si)| m.max((ui * si).abs()));
    let resid = q.dot(x) - &c.mapv(|v| rho * v) - cons.a.t().dot(u);
    let stationarity = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    KktReport {
        feasibility,
        dual_feasibility,
        complementarity,
        stationarity,
    }
}

/// With singular `Q` the optimal set is the face
/// `{x ∈ F : Qx = Qx̄, cᵀx = cᵀx̄}`; picks its minimum-norm point and
/// refits nonnegative duals on the active rows.
fn min_norm_polish(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    r: f64,
    cons: &ConstraintSet,
    x_bar: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = c.len();
    let mut a_eq = Array2::zeros((n + 1, n));
    let mut b_eq = Array1::zeros(n + 1);
    let qx = q.dot(x_bar);
    for i in 0..n {
        a_eq.row_mut(i).assign(&q.row(i));
        b_eq[i] = qx[i];
    }
    a_eq.row_mut(n).assign(c);
    b_eq[n] = c.dot(x_bar);
    let problem = QpProblem {
        h: Array2::eye(n),
        g: Array1::zeros(n),
        a_eq,
        b_eq,
        a_in: cons.a.clone(),
        b_in: cons.b.clone(),
    };
    let sol = solve_qp(&problem, Some(&x_bar.view()), &QpOptions::default())?;
    let x = sol.w;
    let grad = q.dot(&x) - &c.mapv(|v| r * v);
    let u = refit_duals(cons, &x, &grad)?;
    Ok((x, u))
}

fn min_norm_polish_target(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    z: f64,
    mu: f64,
    cons: &ConstraintSet,
    x_bar: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = c.len();
    // Same face characterization; cᵀx = z is already one of the equalities.
    let mut a_eq = Array2::zeros((n + 1, n));
    let mut b_eq = Array1::zeros(n + 1);
    let qx = q.dot(x_bar);
    for i in 0..n {
        a_eq.row_mut(i).assign(&q.row(i));
        b_eq[i] = qx[i];
    }
    a_eq.row_mut(n).assign(c);
    b_eq[n] = z;
    let problem = QpProblem {
        h: Array2::eye(n),
        g: Array1::zeros(n),
        a_eq,
        b_eq,
        a_in: cons.a.clone(),
        b_in: cons.b.clone(),
    };
    let sol = solve_qp(&problem, Some(&x_bar.view()), &QpOptions::default())?;
    let x = sol.w;
    let grad = q.dot(&x) - &c.mapv(|v| mu * v);
    let u = refit_duals(cons, &x, &grad)?;
    Ok((x, u))
}

/// Nonnegative least-squares fit of duals on the geometrically active rows:
/// `min ½‖A_Wᵀv − grad‖²` over `v ≥ 0`, scattered back over all rows.
fn refit_duals(
    cons: &ConstraintSet,
    x: &Array1<f64>,
    grad: &Array1<f64>,
) -> Result<Array1<f64>> {
    let slacks = cons.slacks(&x.view());
    let active: Vec<usize> = (0..cons.m())
        .filter(|&i| slacks[i].abs() <= 1e-8 * (1.0 + cons.b[i].abs()))
        .collect();
    let k = active.len();
    let mut u = Array1::zeros(cons.m());
    if k == 0 {
        return Ok(u);
    }
    let mut aw = Array2::zeros((k, cons.n()));
    for (j, &row) in active.iter().enumerate() {
        aw.row_mut(j).assign(&cons.a.row(row));
    }
    let h = aw.dot(&aw.t());
    let g = -aw.dot(grad);
    let problem = QpProblem {
        h,
        g,
        a_eq: Array2::zeros((0, k)),
        b_eq: Array1::zeros(0),
        a_in: Array2::eye(k),
        b_in: Array1::zeros(k),
    };
    let sol = solve_qp(&problem, None, &QpOptions::default())?;
    for (j, &row) in active.iter().enumerate() {
        u[row] = sol.w[j].max(0.0);
    }
    Ok(u)
}

/// Feasible point with `cᵀx = z` on the long-only simplex, when `z` lies in
/// the attainable band: a convex mix of the extreme single-asset portfolios.
fn target_warm_start(c: &ArrayView1<f64>, z: f64, cons: &ConstraintSet) -> Option<Array1<f64>> {
    if cons.kind != ConstraintKind::LongOnlyBudget {
        return None;
    }
    let n = c.len();
    let (mut lo_i, mut hi_i) = (0usize, 0usize);
    for i in 1..n {
        if c[i] < c[lo_i] {
            lo_i = i;
        }
        if c[i] > c[hi_i] {
            hi_i = i;
        }
    }
    let (lo, hi) = (c[lo_i], c[hi_i]);
    if z < lo || z > hi {
        return None;
    }
    let t = if hi > lo { (z - lo) / (hi - lo) } else { 0.0 };
    let mut x = Array1::zeros(n);
    x[lo_i] += 1.0 - t;
    x[hi_i] += t;
    Some(x)
}

/// Attainable range of `cᵀx` over the constraint polytope. Exact for the
/// long-only simplex; best-effort ridge-regularized LP otherwise.
pub fn attainable_return_range(c: &ArrayView1<f64>, cons: &ConstraintSet) -> Result<(f64, f64)> {
    if cons.kind == ConstraintKind::LongOnlyBudget {
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return Ok((lo, hi));
    }
    let n = cons.n();
    let mut range = [0.0f64; 2];
    for (k, sign) in [1.0f64, -1.0].iter().enumerate() {
        let problem = QpProblem {
            h: Array2::zeros((n, n)),
            g: c.mapv(|v| sign * v),
            a_eq: Array2::zeros((0, n)),
            b_eq: Array1::zeros(0),
            a_in: cons.a.clone(),
            b_in: cons.b.clone(),
        };
        let sol = solve_qp(&problem, None, &QpOptions::default())?;
        range[k] = c.dot(&sol.w);
    }
    Ok((range[0].min(range[1]), range[0].max(range[1])))
}

/// `z = r·cᵀQ⁻¹c`: the target return equivalent to risk tolerance `r` in the
/// unconstrained regime.
pub fn risk_return_equivalence(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    r: f64,
) -> Result<f64> {
    let qinv_c = linalg::solve_refined(q, c)?;
    Ok(r * c.dot(&qinv_c))
}

/// Inverse map of [`risk_return_equivalence`]: `r = z / (cᵀQ⁻¹c)`.
pub fn target_to_risk(q: &ArrayView2<f64>, c: &ArrayView1<f64>, z: f64) -> Result<f64> {
    let qinv_c = linalg::solve_refined(q, c)?;
    let denom = c.dot(&qinv_c);
    if denom.abs() < 1e-300 {
        return Err(Error::InvalidInput(
            "cᵀQ⁻¹c = 0: no finite risk tolerance corresponds to this target".into(),
        ));
    }
    Ok(z / denom)
}

/// The frontier's default tolerance grid: 100 points log-spaced over
/// [1e-5, 10].
pub fn default_frontier_grid() -> Vec<f64> {
    let n = 100;
    (0..n)
        .map(|k| 10f64.powf(-5.0 + 6.0 * k as f64 / (n - 1) as f64))
        .collect()
}

/// Sweeps the frontier over an ascending grid of risk tolerances, warm
/// starting each solve from the previous optimum.
pub fn efficient_frontier(
    q: &ArrayView2<f64>,
    c: &ArrayView1<f64>,
    cons: &ConstraintSet,
    r_grid: &[f64],
) -> Result<Vec<FrontierPoint>> {
    if r_grid.is_empty() {
        return Err(Error::InvalidInput("frontier grid is empty".into()));
    }
    if r_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "frontier grid must be sorted ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(r_grid.len());
    let mut warm: Option<Array1<f64>> = None;
    for &r in r_grid {
        let sol = solve_po_warm(q, c, r, cons, warm.as_ref().map(|w| w.view()).as_ref())
            .map_err(|e| Error::Context {
                context: format!("frontier solve at r={r}"),
                source: Box::new(e),
            })?;
        warm = Some(sol.x.clone());
        points.push(FrontierPoint {
            r,
            risk: sol.risk,
            ret: sol.ret,
            x: sol.x,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, array};

    /// Brute-force oracle for 2-asset simplex problems: densely grids
    /// x₁ ∈ [0,1], x₂ = 1−x₁ and returns the argmin of the objective.
    fn grid_oracle_2(q: &Array2<f64>, c: &Array1<f64>, r: f64) -> Array1<f64> {
        let steps = 10_000usize;
        let mut best_x = array![0.0, 1.0];
        let mut best = f64::INFINITY;
        for k in 0..=steps {
            let x1 = k as f64 / steps as f64;
            let x = array![x1, 1.0 - x1];
            let obj = 0.5 * x.dot(&q.dot(&x)) - r * c.dot(&x);
            if obj < best {
                best = obj;
                best_x = x;
            }
        }
        best_x
    }

    #[test]
    fn symmetric_assets_split_evenly() {
        let q = Array2::eye(2);
        let c = arr1(&[1.0, 1.0]);
        let cons = ConstraintSet::long_only_budget(2);
        let sol = solve_po(&q.view(), &c.view(), 0.7, &cons).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-9);
        assert!((sol.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn two_asset_interior_solution_matches_oracle() {
        let q = Array2::eye(2);
        let c = arr1(&[1.0, 0.0]);
        let cons = ConstraintSet::long_only_budget(2);
        let sol = solve_po(&q.view(), &c.view(), 0.5, &cons).unwrap();
        assert!((sol.x[0] - 0.75).abs() < 1e-9);
        assert!((sol.x[1] - 0.25).abs() < 1e-9);
        let oracle = grid_oracle_2(&q, &c, 0.5);
        assert!((sol.x[0] - oracle[0]).abs() < 2e-4);
        assert!((sol.ret - 0.75).abs() < 1e-9);
    }

    #[test]
    fn two_asset_vertex_solution_matches_oracle() {
        let q = Array2::eye(2);
        let c = arr1(&[1.0, 0.0]);
        let cons = ConstraintSet::long_only_budget(2);
        let sol = solve_po(&q.view(), &c.view(), 2.0, &cons).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!(sol.x[1].abs() < 1e-9);
        let oracle = grid_oracle_2(&q, &c, 2.0);
        assert!((sol.x[0] - oracle[0]).abs() < 2e-4);
        // The x₂ ≥ 0 bound is active at the vertex.
        assert!(sol.active_set.contains(&1));
    }

    #[test]
    fn target_variant_matches_risk_variant() {
        let q = Array2::eye(2);
        let c = arr1(&[1.0, 0.0]);
        let cons = ConstraintSet::long_only_budget(2);
        let sol = solve_po_target(&q.view(), &c.view(), 0.75, &cons).unwrap();
        assert!((sol.x[0] - 0.75).abs() < 1e-8);
        assert!((sol.x[1] - 0.25).abs() < 1e-8);
        // The target multiplier recovers the equivalent risk tolerance.
        assert!((sol.target_dual.unwrap() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn target_at_maximum_return_is_the_argmax_vertex() {
        let q = Array2::eye(3);
        let c = arr1(&[0.1, 0.5, 0.3]);
        let cons = ConstraintSet::long_only_budget(3);
        let sol = solve_po_target(&q.view(), &c.view(), 0.5, &cons).unwrap();
        assert!((sol.x[1] - 1.0).abs() < 1e-7);
        assert!(sol.x[0].abs() < 1e-7);
        assert!(sol.x[2].abs() < 1e-7);
    }

    #[test]
    fn unattainable_target_reports_range() {
        let q = Array2::eye(2);
        let c = arr1(&[1.0, 0.0]);
        let cons = ConstraintSet::long_only_budget(2);
        let err = solve_po_target(&q.view(), &c.view(), 2.0, &cons).unwrap_err();
        match err {
            Error::InfeasibleTarget { z, lo, hi } => {
                assert_eq!(z, 2.0);
                assert!((lo - 0.0).abs() < 1e-12);
                assert!((hi - 1.0).abs() < 1e-12);
            }
            other => panic!("expected InfeasibleTarget, got {other:?}"),
        }
    }

    #[test]
    fn equivalence_map_examples() {
        let q = Array2::eye(2);
        let c = arr1(&[1.0, 0.0]);
        assert!((risk_return_equivalence(&q.view(), &c.view(), 0.5).unwrap() - 0.5).abs() < 1e-12);
        let q2 = arr2(&[[2.0, 0.0], [0.0, 2.0]]);
        let c2 = arr1(&[1.0, 1.0]);
        assert!((risk_return_equivalence(&q2.view(), &c2.view(), 1.0).unwrap() - 1.0).abs() < 1e-12);
        let c0 = arr1(&[0.0, 0.0]);
        for r in [0.1, 1.0, 7.3] {
            assert_eq!(risk_return_equivalence(&q.view(), &c0.view(), r).unwrap(), 0.0);
        }
        // Inverse map round-trips.
        let z = risk_return_equivalence(&q2.view(), &c2.view(), 3.2).unwrap();
        assert!((target_to_risk(&q2.view(), &c2.view(), z).unwrap() - 3.2).abs() < 1e-10);
    }

    #[test]
    fn objective_is_invariant_to_c_r_rescaling() {
        let q = arr2(&[[1.2, 0.3, 0.1], [0.3, 0.9, 0.2], [0.1, 0.2, 1.5]]);
        let c = arr1(&[0.3, 0.1, 0.2]);
        let cons = ConstraintSet::long_only_budget(3);
        let kappa = 3.7;
        let a = solve_po(&q.view(), &c.view(), 0.8, &cons).unwrap();
        let scaled = c.mapv(|v| kappa * v);
        let b = solve_po(&q.view(), &scaled.view(), 0.8 / kappa, &cons).unwrap();
        for i in 0..3 {
            assert!((a.x[i] - b.x[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn singular_q_returns_minimum_norm_optimizer() {
        // Q = 0: every simplex point is optimal for c = (1,1) since the
        // return term is constant; the minimum-norm point is the center.
        let q = Array2::zeros((2, 2));
        let c = arr1(&[1.0, 1.0]);
        let cons = ConstraintSet::long_only_budget(2);
        let sol = solve_po(&q.view(), &c.view(), 1.0, &cons).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-7);
        assert!((sol.x[1] - 0.5).abs() < 1e-7);
        assert!(sol.kkt.worst() < 1e-8);
    }

    #[test]
    fn frontier_ret_matches_contract_points() {
        let q = Array2::eye(2);
        let c = arr1(&[1.0, 0.0]);
        let cons = ConstraintSet::long_only_budget(2);
        let pts = efficient_frontier(&q.view(), &c.view(), &cons, &[0.5, 2.0]).unwrap();
        assert_eq!(pts.len(), 2);
        assert!((pts[0].ret - 0.75).abs() < 1e-8);
        assert!((pts[1].ret - 1.0).abs() < 1e-8);
    }

    #[test]
    fn frontier_is_monotone_on_default_grid() {
        let q = arr2(&[
            [0.9, 0.2, 0.1, 0.0],
            [0.2, 1.3, 0.3, 0.1],
            [0.1, 0.3, 0.7, 0.2],
            [0.0, 0.1, 0.2, 1.1],
        ]);
        let c = arr1(&[0.02, 0.07, 0.04, 0.11]);
        let cons = ConstraintSet::long_only_budget(4);
        let grid = default_frontier_grid();
        assert_eq!(grid.len(), 100);
        assert!((grid[0] - 1e-5).abs() < 1e-18);
        assert!((grid[99] - 10.0).abs() < 1e-12);
        let pts = efficient_frontier(&q.view(), &c.view(), &cons, &grid).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].ret >= w[0].ret - 1e-9, "returns must be non-decreasing");
            assert!(w[1].risk >= w[0].risk - 1e-9, "risks must be non-decreasing");
        }
    }

    #[test]
    fn single_point_frontier_equals_solve_po() {
        let q = Array2::eye(2);
        let c = arr1(&[0.4, 0.6]);
        let cons = ConstraintSet::long_only_budget(2);
        let pts = efficient_frontier(&q.view(), &c.view(), &cons, &[0.9]).unwrap();
        let direct = solve_po(&q.view(), &c.view(), 0.9, &cons).unwrap();
        assert!((pts[0].ret - direct.ret).abs() < 1e-12);
        assert!((pts[0].risk - direct.risk).abs() < 1e-12);
    }

    #[test]
    fn certificates_hold_on_a_dense_spd_fixture() {
        let q = arr2(&[
            [1.5, 0.4, 0.2, 0.1, 0.0],
            [0.4, 1.2, 0.3, 0.2, 0.1],
            [0.2, 0.3, 1.8, 0.1, 0.2],
            [0.1, 0.2, 0.1, 0.9, 0.3],
            [0.0, 0.1, 0.2, 0.3, 1.1],
        ]);
        let c = arr1(&[0.12, 0.31, 0.05, 0.22, 0.17]);
        let cons = ConstraintSet::long_only_budget(5);
        for r in [0.01, 0.3, 1.0, 4.0, 25.0] {
            let sol = solve_po(&q.view(), &c.view(), r, &cons).unwrap();
            assert!(
                sol.kkt.worst() <= 1e-8,
                "certificate failed at r={r}: {:?}",
                sol.kkt
            );
        }
    }
}
