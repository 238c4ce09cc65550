//! One round of the inverse problem: given market moments, an observed
//! allocation `y`, a prior hypothesis `r_prev`, and a learning weight `eta`,
//! recover the risk tolerance that best rationalizes `y`.
//!
//! The problem is
//!
//! ```text
//! min over (r, x, u, z)   ½(r − r_prev)² + η‖y − x‖²
//! s.t.  Qx − r·c − Aᵀu = 0          (stationarity)
//!       Ax ≥ b,  u ≥ 0,  r ≥ 0
//!       u ≤ M·z,  Ax − b ≤ M·(1 − z),  z ∈ {0,1}^m
//! ```
//!
//! a convex MIQP solved here by branch and bound on the complementarity
//! binaries. Node relaxations eliminate `z`: a row whose binary is still
//! free carries the combined constraint `u_i + (Ax − b)_i ≤ M`, which is
//! exactly the projection of the big-M box onto `(u, x)`, so node values are
//! true lower bounds. Rows fixed to `z_i = 1` become equalities; rows fixed
//! to `z_i = 0` have `u_i` eliminated.
//!
//! Relaxations are solved with a restricted dual support plus a pricing
//! loop: `u` components start restricted to the rows plausibly active, and
//! a component is admitted only when its reduced cost shows the restricted
//! optimum is not stationary for the full relaxation. This keeps node QPs
//! near the natural problem size even when `m` is large (factor space has
//! `m = 2N + 2` rows for a K-dimensional variable).

use ndarray::{Array1, Array2, ArrayView1};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::forward::{self, solve_po};
use crate::linalg;
use crate::qp::{solve_qp, QpOptions, QpProblem};

/// Absolute branch-and-bound gap: the returned objective is within this of
/// the true mixed-integer optimum.
pub const BB_GAP: f64 = 1e-9;

/// Complementarity threshold deciding whether a relaxed node is integral.
const INT_TOL: f64 = 1e-9;

/// Reduced costs below `-PRICE_TOL` force a dual column into the support.
const PRICE_TOL: f64 = 1e-10;

const MAX_NODES: usize = 100_000;

/// One inverse-problem instance.
#[derive(Debug, Clone)]
pub struct InverseInstance {
    pub q: Array2<f64>,
    pub c: Array1<f64>,
    pub cons: ConstraintSet,
    /// Observed allocation; may violate the constraints by observation
    /// noise up to 1e-2, beyond which the instance is rejected.
    pub y: Array1<f64>,
    pub r_prev: f64,
    /// Learning weight `λ/√t`; zero short-circuits to `r = r_prev`.
    pub eta: f64,
    pub big_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpoStatus {
    /// Incumbent proven equal to the mixed-integer optimum.
    Optimal,
    /// Incumbent proven within [`BB_GAP`] of the optimum.
    GapTolerance,
    /// Every binary pattern is infeasible (big-M too small).
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct InverseSolution {
    pub r: f64,
    pub x: Array1<f64>,
    pub u: Array1<f64>,
    pub z: Vec<bool>,
    /// `½(r − r_prev)² + η‖y − x‖²`
    pub objective: f64,
    /// `‖y − x‖²`
    pub loss: f64,
    pub status: IpoStatus,
    /// True when the nonnegativity bound on `r` is active with positive
    /// multiplier (the unconstrained update would have gone negative).
    pub clamped: bool,
    /// True when some `u_i` or slack sits within 1% of `M`: the big-M then
    /// truncates the feasible region and a larger `M` should be tried.
    pub binding_m: bool,
    /// Root-relaxation lower bound (diagnostic).
    pub root_bound: f64,
    /// Branch-and-bound nodes solved (diagnostic).
    pub nodes: usize,
}

/// Worst-case residuals of the returned certificate, by direct
/// substitution into the problem constraints.
#[derive(Debug, Clone, Copy)]
pub struct IpoCertificate {
    /// `‖Qx − r·c − Aᵀu‖∞`
    pub stationarity: f64,
    /// `max(0, max_i (b − Ax)_i)`
    pub feasibility: f64,
    /// `max(0, −min_i u_i, −r)`
    pub dual_feasibility: f64,
    /// `max(0, max_i u_i − M z_i, max_i (Ax − b)_i − M(1 − z_i))`
    pub big_m: f64,
}

impl IpoCertificate {
    pub fn worst(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.dual_feasibility)
            .max(self.big_m)
    }
}

impl InverseInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.q.nrows() != n || self.q.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{n} covariance"),
                actual: format!("{}x{}", self.q.nrows(), self.q.ncols()),
                context: "inverse instance".into(),
            });
        }
        if self.cons.n() != n || self.y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("constraints and observation over {n} variables"),
                actual: format!("{} / {}", self.cons.n(), self.y.len()),
                context: "inverse instance".into(),
            });
        }
        if !self.r_prev.is_finite() || self.r_prev < 0.0 {
            return Err(Error::InvalidInput(format!(
                "prior hypothesis must be finite and nonnegative, got {}",
                self.r_prev
            )));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::InvalidInput(format!(
                "learning weight must be finite and nonnegative, got {}",
                self.eta
            )));
        }
        if !self.big_m.is_finite() || self.big_m <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "big-M must be finite and positive, got {}",
                self.big_m
            )));
        }
        let viol = self.cons.max_violation(&self.y.view());
        if viol > 1e-2 {
            return Err(Error::InvalidInput(format!(
                "observed allocation violates the constraints by {viol:.3e} (limit 1e-2)"
            )));
        }
        Ok(())
    }

    /// Recorded-but-not-enforced sanity check from the problem statement:
    /// `M` should dominate the observation's slacks.
    pub fn m_heuristic_ok(&self) -> bool {
        let max_slack = self
            .cons
            .slacks(&self.y.view())
            .iter()
            .fold(0.0f64, |m, &s| m.max(s.abs()));
        self.big_m > max_slack
    }

    fn objective(&self, r: f64, x: &Array1<f64>) -> f64 {
        let d = &self.y - x;
        0.5 * (r - self.r_prev).powi(2) + self.eta * d.dot(&d)
    }
}

impl InverseSolution {
    /// Residuals by direct substitution; independent of solver internals.
    pub fn certificate(&self, inst: &InverseInstance) -> IpoCertificate {
        let resid = inst.q.dot(&self.x) - &inst.c.mapv(|v| self.r * v) - inst.cons.a.t().dot(&self.u);
        let stationarity = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let feasibility = inst.cons.max_violation(&self.x.view());
        let dual_feasibility = self
            .u
            .iter()
            .fold(0.0f64, |m, &v| m.max(-v))
            .max(-self.r)
            .max(0.0);
        let slacks = inst.cons.slacks(&self.x.view());
        let mut big_m = 0.0f64;
        for i in 0..inst.cons.m() {
            let zi = if self.z[i] { 1.0 } else { 0.0 };
            big_m = big_m
                .max(self.u[i] - inst.big_m * zi)
                .max(slacks[i] - inst.big_m * (1.0 - zi));
        }
        IpoCertificate {
            stationarity,
            feasibility,
            dual_feasibility,
            big_m: big_m.max(0.0),
        }
    }
}

/// Distance from `y` to the optimal-solution set of the forward problem at
/// tolerance `r`.
///
/// With nonsingular `Q` the set is the single point `x*(r)`. With singular
/// `Q` every optimum satisfies `Qx = Qx̄` and `cᵀx = cᵀx̄`, so the distance
/// is itself a small convex QP over that face.
pub fn loss(
    y: &ArrayView1<f64>,
    q: &ndarray::ArrayView2<f64>,
    c: &ArrayView1<f64>,
    cons: &ConstraintSet,
    r: f64,
) -> Result<f64> {
    let viol = cons.max_violation(y);
    if viol > 1e-2 {
        return Err(Error::InvalidInput(format!(
            "observed allocation violates the constraints by {viol:.3e} (limit 1e-2)"
        )));
    }
    let sol = solve_po(q, c, r, cons)?;
    if !linalg::psd_rank_deficient(q, 1e-12) {
        let d = y - &sol.x;
        return Ok(d.dot(&d));
    }
    let n = c.len();
    let mut a_eq = Array2::zeros((n + 1, n));
    let mut b_eq = Array1::zeros(n + 1);
    let qx = q.dot(&sol.x);
    for k in 0..n {
        a_eq.row_mut(k).assign(&q.row(k));
        b_eq[k] = qx[k];
    }
    a_eq.row_mut(n).assign(c);
    b_eq[n] = c.dot(&sol.x);
    let problem = QpProblem {
        h: Array2::<f64>::eye(n) * 2.0,
        g: y.mapv(|v| -2.0 * v),
        a_eq,
        b_eq,
        a_in: cons.a.clone(),
        b_in: cons.b.clone(),
    };
    let proj = solve_qp(&problem, Some(&sol.x.view()), &QpOptions::default())?;
    let d = y - &proj.w;
    Ok(d.dot(&d))
}

/// Binary-pattern bookkeeping for one branch-and-bound node. Rows in `z1`
/// are forced active, rows in `z0` have their duals eliminated, the rest
/// are undecided.
#[derive(Debug, Clone)]
struct Pattern {
    z1: Vec<bool>,
    z0: Vec<bool>,
}

impl Pattern {
    fn free_rows(&self, m: usize) -> Vec<usize> {
        (0..m).filter(|&i| !self.z1[i] && !self.z0[i]).collect()
    }
}

/// Solved node relaxation, scattered back to full-length duals.
#[derive(Debug, Clone)]
struct NodeSol {
    r: f64,
    x: Array1<f64>,
    u: Array1<f64>,
    value: f64,
    r_bound_dual: f64,
}

/// Solves one node relaxation (or, with no free rows, one fixed-pattern
/// QP). `support` lists the rows granted a dual variable; the pricing loop
/// grows it until the restricted optimum is optimal for the full
/// relaxation.
fn solve_node_qp(
    inst: &InverseInstance,
    pat: &Pattern,
    support_hint: &[usize],
    warm: Option<&NodeSol>,
) -> Result<NodeSol> {
    let m = inst.cons.m();
    let mut support: Vec<usize> = (0..m)
        .filter(|&i| pat.z1[i] || (!pat.z0[i] && support_hint.contains(&i)))
        .collect();

    for _round in 0..=m {
        let (sol, priced_in) = solve_restricted(inst, pat, &support, warm)?;
        match priced_in {
            None => return Ok(sol),
            Some(mut rows) => {
                support.append(&mut rows);
                support.sort_unstable();
                support.dedup();
            }
        }
    }
    // The pricing loop grows the support strictly, so falling through means
    // a tolerance stalemate; the full support is always exact.
    let full: Vec<usize> = (0..m).filter(|&i| !pat.z0[i]).collect();
    let (sol, _) = solve_restricted(inst, pat, &full, warm)?;
    Ok(sol)
}

fn solve_restricted(
    inst: &InverseInstance,
    pat: &Pattern,
    support: &[usize],
    warm: Option<&NodeSol>,
) -> Result<(NodeSol, Option<Vec<usize>>)> {
    let n = inst.c.len();
    let m = inst.cons.m();
    let s = support.len();
    let dim = 1 + n + s;
    let free = pat.free_rows(m);
    let n_z1 = (0..m).filter(|&i| pat.z1[i]).count();

    let mut h = Array2::zeros((dim, dim));
    h[[0, 0]] = 1.0;
    for j in 0..n {
        h[[1 + j, 1 + j]] = 2.0 * inst.eta;
    }
    let mut g = Array1::zeros(dim);
    g[0] = -inst.r_prev;
    for j in 0..n {
        g[1 + j] = -2.0 * inst.eta * inst.y[j];
    }

    let mut a_eq = Array2::zeros((n + n_z1, dim));
    let mut b_eq = Array1::zeros(n + n_z1);
    for k in 0..n {
        a_eq[[k, 0]] = -inst.c[k];
        for j in 0..n {
            a_eq[[k, 1 + j]] = inst.q[[k, j]];
        }
        for (uj, &row) in support.iter().enumerate() {
            a_eq[[k, 1 + n + uj]] = -inst.cons.a[[row, k]];
        }
    }
    {
        let mut eq = n;
        for i in 0..m {
            if pat.z1[i] {
                for j in 0..n {
                    a_eq[[eq, 1 + j]] = inst.cons.a[[i, j]];
                }
                b_eq[eq] = inst.cons.b[i];
                eq += 1;
            }
        }
    }

    // Inequality layout: primal rows, u >= 0, combined rows for free rows,
    // dual caps for z1 rows, slack caps for z0 rows, then r >= 0.
    let m_primal = m - n_z1;
    let m_in = m_primal + s + free.len() + n_z1 + (0..m).filter(|&i| pat.z0[i]).count() + 1;
    let mut a_in = Array2::zeros((m_in, dim));
    let mut b_in = Array1::zeros(m_in);
    let mut row = 0usize;
    for i in 0..m {
        if pat.z1[i] {
            continue;
        }
        for j in 0..n {
            a_in[[row, 1 + j]] = inst.cons.a[[i, j]];
        }
        b_in[row] = inst.cons.b[i];
        row += 1;
    }
    for uj in 0..s {
        a_in[[row, 1 + n + uj]] = 1.0;
        row += 1;
    }
    let mut comb_row_of = vec![usize::MAX; m];
    for &i in &free {
        if let Some(uj) = support.iter().position(|&sr| sr == i) {
            a_in[[row, 1 + n + uj]] = -1.0;
        }
        for j in 0..n {
            a_in[[row, 1 + j]] = -inst.cons.a[[i, j]];
        }
        b_in[row] = -inst.big_m - inst.cons.b[i];
        comb_row_of[i] = row;
        row += 1;
    }
    for (uj, &sr) in support.iter().enumerate() {
        if pat.z1[sr] {
            a_in[[row, 1 + n + uj]] = -1.0;
            b_in[row] = -inst.big_m;
            row += 1;
        }
    }
    for i in 0..m {
        if pat.z0[i] {
            for j in 0..n {
                a_in[[row, 1 + j]] = -inst.cons.a[[i, j]];
            }
            b_in[row] = -inst.big_m - inst.cons.b[i];
            row += 1;
        }
    }
    a_in[[row, 0]] = 1.0;
    let r_row = row;

    let problem = QpProblem {
        h,
        g,
        a_eq,
        b_eq,
        a_in,
        b_in,
    };

    let warm_w = warm.map(|ns| {
        let mut w = Array1::zeros(dim);
        w[0] = ns.r;
        for j in 0..n {
            w[1 + j] = ns.x[j];
        }
        for (uj, &sr) in support.iter().enumerate() {
            w[1 + n + uj] = ns.u[sr].max(0.0);
        }
        w
    });
    let sol = solve_qp(&problem, warm_w.as_ref().map(|w| w.view()).as_ref(), &QpOptions::default())?;

    // Pricing: a row without a dual variable would improve the relaxation
    // exactly when its bound multiplier, reconstructed from the stationarity
    // multipliers and the reduced combined row, comes out negative.
    let nu = sol.eq_duals.slice(ndarray::s![..n]);
    let scale = 1.0 + nu.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
    let mut price_in: Vec<usize> = Vec::new();
    for &i in &free {
        if support.contains(&i) {
            continue;
        }
        let a_nu = inst.cons.a.row(i).dot(&nu);
        let comb_dual = sol.in_duals[comb_row_of[i]];
        if a_nu + comb_dual < -PRICE_TOL * scale {
            price_in.push(i);
        }
    }

    let r = sol.w[0].max(0.0);
    let x = sol.w.slice(ndarray::s![1..1 + n]).to_owned();
    let mut u = Array1::zeros(m);
    for (uj, &sr) in support.iter().enumerate() {
        u[sr] = sol.w[1 + n + uj].max(0.0);
    }
    let value = inst.objective(r, &x);
    let node = NodeSol {
        r,
        x,
        u,
        value,
        r_bound_dual: sol.in_duals[r_row],
    };
    if price_in.is_empty() {
        Ok((node, None))
    } else {
        Ok((node, Some(price_in)))
    }
}

/// Candidate incumbent: a fully-decided pattern together with its exact QP
/// optimum.
#[derive(Debug, Clone)]
struct Incumbent {
    sol: NodeSol,
    z: Vec<bool>,
}

/// Solves the fixed pattern where `active` rows get `z = 1` and everything
/// else `z = 0`; returns `None` when that pattern is infeasible.
fn try_pattern(
    inst: &InverseInstance,
    active: &[usize],
    warm: Option<&NodeSol>,
) -> Result<Option<Incumbent>> {
    let m = inst.cons.m();
    let mut z1 = vec![false; m];
    for &i in active {
        z1[i] = true;
    }
    let z0: Vec<bool> = (0..m).map(|i| !z1[i]).collect();
    let pat = Pattern { z1: z1.clone(), z0 };
    match solve_node_qp(inst, &pat, &[], warm) {
        Ok(sol) => Ok(Some(Incumbent { sol, z: z1 })),
        Err(Error::Infeasible { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Forward-sweep heuristic: minimize `φ(r) = ½(r−r_prev)² + η·‖y − x*(r)‖²`
/// over a log grid plus golden-section refinement, then polish the best
/// active pattern into an exact mixed-integer-feasible candidate.
fn incumbent_heuristic(inst: &InverseInstance) -> Result<Option<Incumbent>> {
    let mut evals: Vec<(f64, f64, Array1<f64>)> = Vec::new();
    let mut warm: Option<Array1<f64>> = None;
    let phi = |r: f64, warm: &mut Option<Array1<f64>>| -> Option<(f64, Array1<f64>)> {
        let sol = forward::solve_po_warm(
            &inst.q.view(),
            &inst.c.view(),
            r,
            &inst.cons,
            warm.as_ref().map(|w| w.view()).as_ref(),
        )
        .ok()?;
        *warm = Some(sol.x.clone());
        Some((inst.objective(r, &sol.x), sol.x))
    };

    let base = inst.r_prev.max(1e-3);
    let mut grid: Vec<f64> = vec![0.0];
    for k in -12..=12 {
        grid.push(base * 10f64.powf(k as f64 / 4.0));
    }
    grid.push(inst.r_prev);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &r in &grid {
        if let Some((v, x)) = phi(r, &mut warm) {
            evals.push((r, v, x));
        }
    }
    if evals.is_empty() {
        return Ok(None);
    }
    let best_i = (0..evals.len())
        .min_by(|&a, &b| evals[a].1.partial_cmp(&evals[b].1).unwrap())
        .unwrap();
    let mut lo = if best_i > 0 { evals[best_i - 1].0 } else { evals[best_i].0 };
    let mut hi = if best_i + 1 < evals.len() {
        evals[best_i + 1].0
    } else {
        evals[best_i].0 * 2.0 + 1.0
    };
    let golden = 0.5 * (3.0 - 5.0f64.sqrt());
    let mut r1 = lo + golden * (hi - lo);
    let mut r2 = hi - golden * (hi - lo);
    let mut f1 = phi(r1, &mut warm).map(|(v, _)| v).unwrap_or(f64::INFINITY);
    let mut f2 = phi(r2, &mut warm).map(|(v, _)| v).unwrap_or(f64::INFINITY);
    for _ in 0..90 {
        if f1 <= f2 {
            hi = r2;
            r2 = r1;
            f2 = f1;
            r1 = lo + golden * (hi - lo);
            f1 = phi(r1, &mut warm).map(|(v, _)| v).unwrap_or(f64::INFINITY);
        } else {
            lo = r1;
            r1 = r2;
            f1 = f2;
            r2 = hi - golden * (hi - lo);
            f2 = phi(r2, &mut warm).map(|(v, _)| v).unwrap_or(f64::INFINITY);
        }
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
    }
    let r_hat = if f1 <= f2 { r1 } else { r2 };
    let fwd = match solve_po(&inst.q.view(), &inst.c.view(), r_hat, &inst.cons) {
        Ok(f) => f,
        Err(_) => return Ok(None),
    };

    // Two pattern readings of the same point: geometric activity and dual
    // support. They differ only at weakly-active rows.
    let slacks = inst.cons.slacks(&fwd.x.view());
    let by_slack: Vec<usize> = (0..inst.cons.m())
        .filter(|&i| slacks[i].abs() <= 1e-9 * (1.0 + inst.cons.b[i].abs()))
        .collect();
    let by_dual: Vec<usize> = (0..inst.cons.m()).filter(|&i| fwd.u[i] > 1e-9).collect();
    let mut best: Option<Incumbent> = None;
    for pattern in [by_slack, by_dual] {
        if let Some(cand) = try_pattern(inst, &pattern, None)? {
            let better = match &best {
                None => true,
                Some(b) => cand.sol.value < b.sol.value - 1e-15,
            };
            if better {
                best = Some(cand);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
struct BbNode {
    pat: Pattern,
    bound: f64,
    depth: usize,
    id: usize,
    warm: Option<NodeSol>,
}

/// Branch-and-bound solve of the inverse MIQP to absolute gap [`BB_GAP`].
pub fn solve_ipo(inst: &InverseInstance) -> Result<InverseSolution> {
    inst.validate()?;
    let m = inst.cons.m();

    if inst.eta == 0.0 {
        let fwd = solve_po(&inst.q.view(), &inst.c.view(), inst.r_prev, &inst.cons)?;
        let slacks = inst.cons.slacks(&fwd.x.view());
        let z: Vec<bool> = (0..m)
            .map(|i| slacks[i].abs() <= 1e-9 * (1.0 + inst.cons.b[i].abs()))
            .collect();
        let d = &inst.y - &fwd.x;
        let mut u = fwd.u.clone();
        for i in 0..m {
            if !z[i] {
                u[i] = 0.0;
            }
        }
        return Ok(finish(
            inst,
            Incumbent {
                sol: NodeSol {
                    r: inst.r_prev,
                    x: fwd.x,
                    u,
                    value: inst.eta * d.dot(&d),
                    r_bound_dual: 0.0,
                },
                z,
            },
            IpoStatus::Optimal,
            0.0,
            0,
        ));
    }

    // Presolve: the opposing budget rows hold with equality at every
    // feasible point, so their binaries can be fixed to 1 without loss.
    let mut root = Pattern {
        z1: vec![false; m],
        z0: vec![false; m],
    };
    for i in inst.cons.always_active_rows() {
        root.z1[i] = true;
    }
    let pairs = inst.cons.complementary_pairs();

    let mut incumbent = incumbent_heuristic(inst)?;
    let mut nodes_solved = 0usize;
    let mut next_id = 0usize;
    let mut proven_lb = f64::INFINITY;
    let mut root_bound = f64::NEG_INFINITY;

    let mut queue: Vec<BbNode> = vec![BbNode {
        pat: root,
        bound: f64::NEG_INFINITY,
        depth: 0,
        id: {
            next_id += 1;
            next_id - 1
        },
        warm: None,
    }];

    while let Some(pos) = select_node(&queue) {
        let node = queue.swap_remove(pos);
        if std::env::var_os("RISKINV_QP_STATS").is_some() && nodes_solved > 0 && nodes_solved % 500 == 0 {
            eprintln!("bb: nodes={nodes_solved} queue={} depth={}", queue.len(), node.depth);
        }
        if nodes_solved >= MAX_NODES {
            return Err(Error::NumericalFailure {
                iterations: nodes_solved,
                stationarity: f64::NAN,
                feasibility: f64::NAN,
            });
        }
        if let Some(inc) = &incumbent {
            if node.bound >= inc.sol.value - BB_GAP {
                proven_lb = proven_lb.min(node.bound);
                continue;
            }
        }

        let hint = support_hint(inst, &node);
        let relaxed = match solve_node_qp(inst, &node.pat, &hint, node.warm.as_ref()) {
            Ok(sol) => sol,
            Err(Error::Infeasible { .. }) => continue,
            Err(e) => return Err(e),
        };
        nodes_solved += 1;
        if node.depth == 0 {
            root_bound = relaxed.value;
        }
        if let Some(inc) = &incumbent {
            if relaxed.value >= inc.sol.value - BB_GAP {
                proven_lb = proven_lb.min(relaxed.value);
                continue;
            }
        }

        // Most-violated complementarity among undecided rows.
        let slacks = inst.cons.slacks(&relaxed.x.view());
        let free = node.pat.free_rows(m);
        let mut branch_row = None;
        let mut worst = INT_TOL;
        for &i in &free {
            let v = relaxed.u[i].min(slacks[i].max(0.0));
            if v > worst {
                worst = v;
                branch_row = Some(i);
            }
        }

        match branch_row {
            None => {
                // Integral within tolerance: polish the implied pattern into
                // an exact candidate. Close the node only when the polished
                // value certifies the whole subtree within the gap.
                let active: Vec<usize> = (0..m)
                    .filter(|&i| {
                        node.pat.z1[i]
                            || (!node.pat.z0[i]
                                && slacks[i] <= INT_TOL * (1.0 + inst.cons.b[i].abs()))
                    })
                    .collect();
                let polished = try_pattern(inst, &active, Some(&relaxed))?;
                if let Some(cand) = polished {
                    if cand.sol.value <= relaxed.value + BB_GAP {
                        accept(&mut incumbent, cand);
                        continue;
                    }
                    accept(&mut incumbent, cand);
                }
                // Pattern polish could not certify the subtree; force the
                // least-violated free row instead of re-looping.
                if let Some(&i) = free.first() {
                    push_children(inst, &mut queue, &node, &relaxed, i, &pairs, &mut next_id);
                } else {
                    proven_lb = proven_lb.min(relaxed.value);
                }
            }
            Some(i) => {
                push_children(inst, &mut queue, &node, &relaxed, i, &pairs, &mut next_id);
            }
        }
    }

    let incumbent = match incumbent {
        // Every pattern (equivalently every relaxation) came back
        // infeasible; a larger M is the only remedy either way.
        None => return Err(Error::IpoInfeasible { big_m: inst.big_m }),
        Some(inc) => inc,
    };
    let status = if proven_lb >= incumbent.sol.value - 1e-12 * (1.0 + incumbent.sol.value.abs()) {
        IpoStatus::Optimal
    } else {
        IpoStatus::GapTolerance
    };
    let root_bound = if root_bound.is_finite() {
        root_bound
    } else {
        incumbent.sol.value
    };
    if std::env::var_os("RISKINV_QP_STATS").is_some() {
        let (kkt, rep, iters) = crate::qp::stat_snapshot();
        eprintln!("ipo done: nodes={nodes_solved} kkt_ms={kkt} repair_ms={rep} iters={iters}");
    }
    Ok(finish(inst, incumbent, status, root_bound, nodes_solved))
}

fn accept(incumbent: &mut Option<Incumbent>, cand: Incumbent) {
    let better = match incumbent {
        None => true,
        Some(inc) => cand.sol.value < inc.sol.value - 1e-15,
    };
    if better {
        *incumbent = Some(cand);
    }
}

fn select_node(queue: &[BbNode]) -> Option<usize> {
    if queue.is_empty() {
        return None;
    }
    let mut best = 0usize;
    for i in 1..queue.len() {
        let (a, b) = (&queue[i], &queue[best]);
        let better = a.bound < b.bound
            || (a.bound == b.bound && a.depth > b.depth)
            || (a.bound == b.bound && a.depth == b.depth && a.id < b.id);
        if better {
            best = i;
        }
    }
    Some(best)
}

fn support_hint(inst: &InverseInstance, node: &BbNode) -> Vec<usize> {
    let mut hint: Vec<usize> = Vec::new();
    if let Some(w) = &node.warm {
        let slacks = inst.cons.slacks(&w.x.view());
        for i in 0..inst.cons.m() {
            if w.u[i] > 0.0 || slacks[i].abs() <= 1e-8 * (1.0 + inst.cons.b[i].abs()) {
                hint.push(i);
            }
        }
    }
    hint
}

fn push_children(
    inst: &InverseInstance,
    queue: &mut Vec<BbNode>,
    node: &BbNode,
    relaxed: &NodeSol,
    row: usize,
    pairs: &[(usize, usize)],
    next_id: &mut usize,
) {
    let mut up = node.pat.clone();
    up.z1[row] = true;
    // An active lower bound forces its opposing upper bound's slack to 1,
    // which only a zero binary can absorb once M >= 1.
    if inst.big_m >= 1.0 {
        for &(a, b) in pairs {
            let partner = if a == row {
                Some(b)
            } else if b == row {
                Some(a)
            } else {
                None
            };
            if let Some(p) = partner {
                if !up.z1[p] {
                    up.z0[p] = true;
                }
            }
        }
    }
    let mut down = node.pat.clone();
    down.z0[row] = true;

    for pat in [up, down] {
        queue.push(BbNode {
            pat,
            bound: relaxed.value,
            depth: node.depth + 1,
            id: {
                *next_id += 1;
                *next_id - 1
            },
            warm: Some(relaxed.clone()),
        });
    }
}

fn finish(
    inst: &InverseInstance,
    inc: Incumbent,
    status: IpoStatus,
    root_bound: f64,
    nodes: usize,
) -> InverseSolution {
    let slacks = inst.cons.slacks(&inc.sol.x.view());
    let mut binding_m = false;
    for i in 0..inst.cons.m() {
        if inc.sol.u[i] >= 0.99 * inst.big_m || slacks[i] >= 0.99 * inst.big_m {
            binding_m = true;
        }
    }
    let clamped = inc.sol.r <= 1e-10 && inc.sol.r_bound_dual > 1e-10;
    let d = &inst.y - &inc.sol.x;
    InverseSolution {
        r: inc.sol.r,
        x: inc.sol.x,
        u: inc.sol.u,
        z: inc.z,
        objective: inc.sol.value,
        loss: d.dot(&d),
        status,
        clamped,
        binding_m,
        root_bound,
        nodes,
    }
}

/// Exhaustive oracle: tries every binary pattern (after pruning mutually
/// exclusive bound pairs and fixing the always-active budget rows), solving
/// the exact fixed-pattern QP for each. Tractable for `m <= 24`.
pub fn enumerate_active_sets(inst: &InverseInstance) -> Result<InverseSolution> {
    inst.validate()?;
    let m = inst.cons.m();
    if m > 24 {
        return Err(Error::InvalidInput(format!(
            "pattern enumeration supports at most 24 rows, got {m}"
        )));
    }
    let pairs = inst.cons.complementary_pairs();
    let forced: Vec<usize> = inst.cons.always_active_rows();
    let undecided: Vec<usize> = (0..m).filter(|i| !forced.contains(i)).collect();
    let k = undecided.len();

    let mut best: Option<Incumbent> = None;
    'patterns: for bits in 0..(1u32 << k) {
        let mut active: Vec<usize> = forced.clone();
        for (pos, &row) in undecided.iter().enumerate() {
            if bits >> pos & 1 == 1 {
                active.push(row);
            }
        }
        for &(a, b) in &pairs {
            if active.contains(&a) && active.contains(&b) {
                continue 'patterns;
            }
        }
        active.sort_unstable();
        if let Some(cand) = try_pattern(inst, &active, None)? {
            accept(&mut best, cand);
        }
    }
    match best {
        Some(inc) => Ok(finish(inst, inc, IpoStatus::Optimal, f64::NEG_INFINITY, 1 << k)),
        None => Err(Error::IpoInfeasible { big_m: inst.big_m }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn simple_instance(y: Array1<f64>, r_prev: f64, eta: f64) -> InverseInstance {
        InverseInstance {
            q: Array2::eye(2),
            c: arr1(&[1.0, 0.0]),
            cons: ConstraintSet::long_only_budget(2),
            y,
            r_prev,
            eta,
            big_m: 1e3,
        }
    }

    /// Closed-form forward solution for Q=I, c=(1,0) on the 2-simplex.
    fn x_star(r: f64) -> (f64, f64) {
        let x1 = ((1.0 + r) / 2.0).clamp(0.0, 1.0);
        (x1, 1.0 - x1)
    }

    #[test]
    fn loss_of_optimal_observation_is_zero() {
        let inst = simple_instance(arr1(&[0.75, 0.25]), 1.0, 1.0);
        let l = loss(&inst.y.view(), &inst.q.view(), &inst.c.view(), &inst.cons, 0.5).unwrap();
        assert!(l < 1e-16);
    }

    #[test]
    fn loss_matches_forward_oracle() {
        let inst = simple_instance(arr1(&[1.0, 0.0]), 1.0, 1.0);
        let l = loss(&inst.y.view(), &inst.q.view(), &inst.c.view(), &inst.cons, 0.5).unwrap();
        assert!((l - 0.125).abs() < 1e-10);
    }

    #[test]
    fn loss_rejects_gross_violation() {
        let inst = simple_instance(arr1(&[0.8, 0.8]), 1.0, 1.0);
        assert!(loss(&inst.y.view(), &inst.q.view(), &inst.c.view(), &inst.cons, 0.5).is_err());
    }

    #[test]
    fn loss_uses_solution_set_when_q_is_singular() {
        // Q = 0, c = (1, 1): every simplex point is optimal, so the distance
        // from any feasible y to the optimal set is zero.
        let cons = ConstraintSet::long_only_budget(2);
        let q = Array2::zeros((2, 2));
        let c = arr1(&[1.0, 1.0]);
        let y = arr1(&[0.9, 0.1]);
        let l = loss(&y.view(), &q.view(), &c.view(), &cons, 1.0).unwrap();
        assert!(l < 1e-12, "distance to the whole simplex should vanish, got {l}");
    }

    #[test]
    fn fixed_point_returns_prior() {
        let inst = simple_instance(arr1(&[0.75, 0.25]), 0.5, 1e4);
        let sol = solve_ipo(&inst).unwrap();
        assert!((sol.r - 0.5).abs() < 1e-7, "r = {}", sol.r);
        assert!(sol.objective < 1e-9);
        assert!(sol.loss < 1e-9);
    }

    #[test]
    fn contract_example_recovers_half() {
        let inst = simple_instance(arr1(&[0.75, 0.25]), 1.0, 1e4);
        let sol = solve_ipo(&inst).unwrap();
        assert!(sol.r >= 0.4999 && sol.r <= 0.5001, "r = {}", sol.r);

        // Independent oracle: brute-force grid over r with the closed-form
        // forward solution, step 1e-5.
        let mut best_r = 0.0;
        let mut best_v = f64::INFINITY;
        let mut k = 0u64;
        loop {
            let r = k as f64 * 1e-5;
            if r > 2.0 {
                break;
            }
            let (x1, x2) = x_star(r);
            let v = 0.5 * (r - 1.0).powi(2)
                + 1e4 * ((x1 - 0.75).powi(2) + (x2 - 0.25).powi(2));
            if v < best_v {
                best_v = v;
                best_r = r;
            }
            k += 1;
        }
        assert!((sol.r - best_r).abs() <= 2e-5, "solver {} vs oracle {}", sol.r, best_r);
        assert!(sol.objective <= best_v + 1e-9);
    }

    #[test]
    fn zero_learning_weight_keeps_prior() {
        let inst = simple_instance(arr1(&[1.0, 0.0]), 0.7, 0.0);
        let sol = solve_ipo(&inst).unwrap();
        assert_eq!(sol.r, 0.7);
        let (x1, _) = x_star(0.7);
        assert!((sol.x[0] - x1).abs() < 1e-9);
        assert_eq!(sol.status, IpoStatus::Optimal);
    }

    #[test]
    fn certificate_holds_by_substitution() {
        let inst = simple_instance(arr1(&[0.9, 0.1]), 2.0, 500.0);
        let sol = solve_ipo(&inst).unwrap();
        let cert = sol.certificate(&inst);
        assert!(cert.stationarity <= 1e-7, "{cert:?}");
        assert!(cert.feasibility <= 1e-8, "{cert:?}");
        assert!(cert.dual_feasibility <= 1e-9, "{cert:?}");
        assert!(cert.big_m <= 1e-8, "{cert:?}");
    }

    #[test]
    fn root_relaxation_bounds_the_optimum() {
        let inst = simple_instance(arr1(&[0.8, 0.2]), 1.5, 100.0);
        let sol = solve_ipo(&inst).unwrap();
        assert!(sol.root_bound <= sol.objective + 1e-12);
    }

    #[test]
    fn objective_never_beats_the_prior_point() {
        let inst = simple_instance(arr1(&[0.6, 0.4]), 3.0, 250.0);
        let prior_loss = loss(
            &inst.y.view(),
            &inst.q.view(),
            &inst.c.view(),
            &inst.cons,
            inst.r_prev,
        )
        .unwrap();
        let sol = solve_ipo(&inst).unwrap();
        assert!(sol.objective <= inst.eta * prior_loss + 1e-9);
    }

    #[test]
    fn one_asset_budget_only_closed_form() {
        // x = 1 is forced, loss is constant, so the optimum sits at the
        // prior.
        let inst = InverseInstance {
            q: arr2(&[[2.0]]),
            c: arr1(&[1.0]),
            cons: ConstraintSet::custom(arr2(&[[1.0], [-1.0]]), arr1(&[1.0, -1.0])).unwrap(),
            y: arr1(&[1.0]),
            r_prev: 3.0,
            eta: 5.0,
            big_m: 100.0,
        };
        let sol = solve_ipo(&inst).unwrap();
        assert!((sol.r - 3.0).abs() < 1e-7);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!(sol.loss < 1e-16);
        let enumerated = enumerate_active_sets(&inst).unwrap();
        assert!((enumerated.objective - sol.objective).abs() <= 1e-9);
    }

    #[test]
    fn enumeration_agrees_with_branch_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..30 {
            let a: f64 = rng.random_range(0.4..2.0);
            let b: f64 = rng.random_range(0.4..2.0);
            let rho = rng.random_range(-0.5..0.5) * (a * b).sqrt();
            let q = arr2(&[[a, rho], [rho, b]]);
            let c = arr1(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
            let w = rng.random_range(0.0..1.0);
            let inst = InverseInstance {
                q,
                c,
                cons: ConstraintSet::long_only_budget(2),
                y: arr1(&[w, 1.0 - w]),
                r_prev: rng.random_range(0.1..5.0),
                eta: *[1.0, 100.0, 1e4].choose(&mut rng).unwrap(),
                big_m: 1e3,
            };
            let bb = solve_ipo(&inst).unwrap();
            let en = enumerate_active_sets(&inst).unwrap();
            assert!(
                (bb.objective - en.objective).abs() <= 1e-9,
                "trial {trial}: bb {} vs enumeration {}",
                bb.objective,
                en.objective
            );
        }
    }

    #[test]
    fn learning_weight_sharpens_recovery() {
        // Noiseless observation at r_true = 0.6 (interior, identifiable);
        // larger eta must pull the estimate at least as close, up to the
        // stated 10x slack.
        let r_true = 0.6;
        let (x1, x2) = x_star(r_true);
        let err_at = |eta: f64| {
            let inst = simple_instance(arr1(&[x1, x2]), 5.0, eta);
            (solve_ipo(&inst).unwrap().r - r_true).abs()
        };
        let coarse = err_at(1e2);
        let fine = err_at(1e6);
        assert!(fine <= 10.0 * coarse, "fine {fine} vs coarse {coarse}");
        assert!(fine < 1e-3);
    }

    #[test]
    fn binding_m_is_flagged() {
        // Optimum sits at the vertex (1, 0), whose free lower-bound row has
        // slack 1 and whose dual rebalancing pushes a multiplier onto the
        // cap once M barely exceeds 1.
        let mut inst = simple_instance(arr1(&[1.0, 0.0]), 3.0, 1e4);
        inst.big_m = 1.005;
        let sol = solve_ipo(&inst).unwrap();
        assert!((sol.r - 3.0).abs() < 1e-6, "fixed point expected, r = {}", sol.r);
        assert!(sol.binding_m, "slack within 1% of M should trip the flag");
    }

    #[test]
    fn negative_pull_is_clamped_at_zero() {
        // y sits below the minimum-variance point in return, so the
        // unregularized fit wants r < 0.
        let inst = simple_instance(arr1(&[0.25, 0.75]), 0.05, 1e5);
        let sol = solve_ipo(&inst).unwrap();
        assert!(sol.r.abs() < 1e-9, "r = {}", sol.r);
        assert!(sol.clamped);
    }

    #[test]
    fn infeasible_for_tiny_m() {
        // M far below the slack scale makes every pattern infeasible: the
        // upper-bound rows have slack 0.75 > M on any simplex point near y.
        let mut inst = simple_instance(arr1(&[0.75, 0.25]), 1.0, 10.0);
        inst.big_m = 1e-4;
        match solve_ipo(&inst) {
            Err(Error::IpoInfeasible { big_m }) => assert_eq!(big_m, 1e-4),
            other => panic!("expected IpoInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_bad_observations() {
        let inst = simple_instance(arr1(&[0.7, 0.7]), 1.0, 1.0);
        assert!(inst.validate().is_err());
        let ok = simple_instance(arr1(&[0.5, 0.5]), 1.0, 1.0);
        assert!(ok.validate().is_ok());
        assert!(ok.m_heuristic_ok());
    }
}
