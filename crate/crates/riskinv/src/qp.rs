//! Dense convex quadratic programming by a primal active-set method.
//!
//! Solves `min ½ wᵀH w + gᵀw` subject to `A_eq w = b_eq` and `A_in w ≥ b_in`
//! with H symmetric positive semidefinite. The same engine backs the forward
//! portfolio solver, the inverse-problem node relaxations, and the
//! exhaustive pattern enumeration, so determinism matters more than raw
//! speed: ties in blocking and dropping rules always resolve to the lowest
//! row index.
//!
//! Semidefinite H (zero curvature along some directions) is supported by a
//! small ridge added to the KKT systems only; objective values and reported
//! residuals always use the caller's matrices.

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric PSD Hessian, `dim x dim`.
    pub h: Array2<f64>,
    /// Linear objective term, length `dim`.
    pub g: Array1<f64>,
    /// Equality rows `A_eq w = b_eq`.
    pub a_eq: Array2<f64>,
    pub b_eq: Array1<f64>,
    /// Inequality rows `A_in w >= b_in`.
    pub a_in: Array2<f64>,
    pub b_in: Array1<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    /// Ridge added to the Hessian block inside KKT solves only.
    pub ridge: f64,
    /// Feasibility tolerance on returned points.
    pub feas_tol: f64,
    /// Multipliers above `-dual_tol` count as nonnegative.
    pub dual_tol: f64,
    /// Working-set iteration cap; `None` selects `50 * (dim + m_in)`.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            ridge: 1e-10,
            feas_tol: 1e-8,
            dual_tol: 1e-9,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: Array1<f64>,
    /// `½ wᵀH w + gᵀw` at the returned point.
    pub objective: f64,
    /// Multipliers for the equality rows.
    pub eq_duals: Array1<f64>,
    /// Multipliers for the inequality rows; nonzero only on the final
    /// working set and nonnegative up to `dual_tol`.
    pub in_duals: Array1<f64>,
    /// Inequality rows in the final working set, ascending.
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, w: &ArrayView1<f64>) -> f64 {
        0.5 * w.dot(&self.h.dot(w)) + self.g.dot(w)
    }

    /// Largest violation of equalities and inequalities at `w`.
    pub fn max_violation(&self, w: &ArrayView1<f64>) -> f64 {
        let mut v = 0.0f64;
        if self.a_eq.nrows() > 0 {
            let r = self.a_eq.dot(w) - &self.b_eq;
            v = r.iter().fold(v, |m, x| m.max(x.abs()));
        }
        if self.a_in.nrows() > 0 {
            let r = self.a_in.dot(w) - &self.b_in;
            v = r.iter().fold(v, |m, x| m.max(-x));
        }
        v.max(0.0)
    }
}

/// Solves the QP. `warm` seeds the search; it does not have to be feasible,
/// a phase-1 subproblem restores feasibility or proves that none exists.
/// Without a warm start the phase-1 runs from the origin.
pub fn solve_qp(
    problem: &QpProblem,
    warm: Option<&ArrayView1<f64>>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let dim = problem.dim();
    debug_assert_eq!(problem.h.nrows(), dim);
    debug_assert_eq!(problem.a_eq.ncols().max(dim), dim);
    let w_ref = match warm {
        Some(w) => w.to_owned(),
        None => Array1::zeros(dim),
    };
    let w0 = find_feasible(problem, w_ref, opts)?;
    active_set_loop(problem, w0, opts)
}

/// Phase 1: returns a point satisfying all constraints within `feas_tol`,
/// or `Error::Infeasible`. Rows already satisfied at `w_ref` are kept as
/// hard constraints; violated rows get an elastic slack whose squared norm
/// is minimized.
fn find_feasible(problem: &QpProblem, w_ref: Array1<f64>, opts: &QpOptions) -> Result<Array1<f64>> {
    let dim = problem.dim();
    let p_eq = problem.a_eq.nrows();
    let m_in = problem.a_in.nrows();

    let mut eq_viol: Vec<usize> = Vec::new();
    for i in 0..p_eq {
        let r = problem.a_eq.row(i).dot(&w_ref) - problem.b_eq[i];
        if r.abs() > 1e-10 {
            eq_viol.push(i);
        }
    }
    let mut in_viol: Vec<usize> = Vec::new();
    for i in 0..m_in {
        let r = problem.a_in.row(i).dot(&w_ref) - problem.b_in[i];
        if r < -1e-10 {
            in_viol.push(i);
        }
    }
    if eq_viol.is_empty() && in_viol.is_empty() {
        return Ok(w_ref);
    }

    let n_slack = eq_viol.len() + in_viol.len();
    let aux_dim = dim + n_slack;
    let mut h = Array2::zeros((aux_dim, aux_dim));
    for k in 0..n_slack {
        h[[dim + k, dim + k]] = 1.0;
    }
    let g = Array1::zeros(aux_dim);

    let mut a_eq = Array2::zeros((p_eq, aux_dim));
    let mut b_eq = Array1::zeros(p_eq);
    for i in 0..p_eq {
        a_eq.slice_mut(s![i, ..dim]).assign(&problem.a_eq.row(i));
        b_eq[i] = problem.b_eq[i];
    }
    for (k, &i) in eq_viol.iter().enumerate() {
        a_eq[[i, dim + k]] = 1.0;
    }
    let mut a_in = Array2::zeros((m_in, aux_dim));
    let mut b_in = Array1::zeros(m_in);
    for i in 0..m_in {
        a_in.slice_mut(s![i, ..dim]).assign(&problem.a_in.row(i));
        b_in[i] = problem.b_in[i];
    }
    for (k, &i) in in_viol.iter().enumerate() {
        a_in[[i, dim + eq_viol.len() + k]] = 1.0;
    }

    let aux = QpProblem {
        h,
        g,
        a_eq,
        b_eq,
        a_in,
        b_in,
    };
    let mut w0 = Array1::zeros(aux_dim);
    w0.slice_mut(s![..dim]).assign(&w_ref);
    for (k, &i) in eq_viol.iter().enumerate() {
        w0[dim + k] = problem.b_eq[i] - problem.a_eq.row(i).dot(&w_ref);
    }
    for (k, &i) in in_viol.iter().enumerate() {
        w0[dim + eq_viol.len() + k] = problem.b_in[i] - problem.a_in.row(i).dot(&w_ref);
    }

    let aux_sol = active_set_loop(&aux, w0, opts)?;
    let w = aux_sol.w.slice(s![..dim]).to_owned();
    let max_violation = problem.max_violation(&w.view());
    if max_violation > opts.feas_tol {
        return Err(Error::Infeasible { max_violation });
    }
    Ok(w)
}

/// Phase 2: primal active-set iteration from a feasible point.
fn active_set_loop(
    problem: &QpProblem,
    mut w: Array1<f64>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let dim = problem.dim();
    let m_in = problem.a_in.nrows();
    let max_iter = opts.max_iter.unwrap_or(50 * (dim + m_in));

    // Working set starts with every row tight at w.
    let mut in_working = vec![false; m_in];
    let mut working: Vec<usize> = Vec::new();
    for i in 0..m_in {
        let slack = problem.a_in.row(i).dot(&w) - problem.b_in[i];
        if slack.abs() <= 1e-10 * (1.0 + problem.b_in[i].abs()) {
            in_working[i] = true;
            working.push(i);
        }
    }

    let scale_w = |w: &Array1<f64>| 1.0 + w.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // Degenerate vertices can cycle the working set while the objective
    // stalls; after enough iterations without measurable decrease,
    // selection switches to Bland's rule (lowest index in, lowest index
    // out). Rows dropped on the current plateau go on a tabu list so a
    // re-added row is not dropped again; instead a zero-multiplier blocker
    // gets exchanged out. Real progress clears both escalations. The limit
    // exceeds `m_in` because a vertex buildup adds one row per iteration
    // without moving the objective.
    let mut stall = 0usize;
    let stall_limit = 2 * (m_in + dim) + 4;
    let mut best_obj = f64::INFINITY;
    let mut bland = false;
    let mut tabu: Vec<usize> = Vec::new();
    // Working-set history for short-cycle detection on a plateau.
    let mut recent: Vec<u64> = Vec::new();

    for iter in 0..max_iter {
        let (p, eq_duals, in_duals_w, noise, dependent) =
            solve_working_kkt(problem, &w, &working, opts)?;
        let p_norm = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let obj = problem.objective(&w.view());
        if obj < best_obj - 1e-9 * (1.0 + best_obj.abs()) {
            stall = 0;
            bland = false;
            tabu.clear();
        } else {
            stall += 1;
            if stall > stall_limit {
                bland = true;
            }
        }
        best_obj = best_obj.min(obj);

        let mut set_hash = 0xcbf29ce484222325u64;
        for &i in &working {
            set_hash ^= i as u64 + 1;
            set_hash = set_hash.wrapping_mul(0x100000001b3);
        }
        recent.push(set_hash);
        if recent.len() > 8 {
            recent.remove(0);
        }
        let cycling = bland
            && (1..=3).any(|pd| {
                recent.len() >= 2 * pd
                    && (recent.len() - 2 * pd..recent.len() - pd)
                        .all(|i| recent[i] == recent[i + pd])
            });

        // A stalled repeating working set inside a micro-scale
        // neighborhood means selection cannot resolve a degenerate corner;
        // the iterate itself is as good as the data allows, so a feasible
        // one is accepted with least-squares multipliers instead of
        // failing the solve.
        if bland
            && (cycling || stall > 2 * stall_limit)
            && p_norm <= 1e-6 * scale_w(&w)
            && problem.max_violation(&w.view()) <= opts.feas_tol
        {
            let repaired = repair_gauge_duals(problem, &w, &working, opts.dual_tol);
            let mut in_duals = Array1::zeros(m_in);
            let mut eq = eq_duals;
            match repaired {
                Some((mu, lam)) => {
                    for (k, &row) in working.iter().enumerate() {
                        in_duals[row] = lam[k];
                    }
                    eq = mu;
                }
                None => {
                    for (k, &row) in working.iter().enumerate() {
                        in_duals[row] = in_duals_w[k].max(0.0);
                    }
                }
            }
            let mut active = working.clone();
            active.sort_unstable();
            return Ok(QpSolution {
                objective: problem.objective(&w.view()),
                w,
                eq_duals: eq,
                in_duals,
                active,
                iterations: iter,
            });
        }

        // In stalled mode a micro step is degeneracy chatter, not descent;
        // probing lets the multiplier test run and drop a row. A probe can
        // only drop, never declare optimality: termination keeps the tight
        // gate so feasibility verdicts stay exact.
        let tight = p_norm <= 1e-11 * scale_w(&w) + 16.0 * noise;
        let probe = bland && p_norm <= 1e-6 * scale_w(&w);
        if tight || probe {
            // Stationary on the working set: check multiplier signs. A
            // dual-shifted (dependent-row) solve spreads multipliers over
            // the dependency arbitrarily; a negative there may be pure
            // gauge, resolvable by shifting it into the equality
            // multipliers, and only a verified repair ends the iteration.
            let has_negative = in_duals_w.iter().any(|&d| d < -opts.dual_tol);
            if tight && has_negative && (bland || dependent) {
                if let Some((mu, lam)) = repair_gauge_duals(problem, &w, &working, opts.dual_tol)
                {
                    let mut in_duals = Array1::zeros(m_in);
                    for (k, &row) in working.iter().enumerate() {
                        in_duals[row] = lam[k];
                    }
                    let mut active = working.clone();
                    active.sort_unstable();
                    return Ok(QpSolution {
                        objective: problem.objective(&w.view()),
                        w,
                        eq_duals: mu,
                        in_duals,
                        active,
                        iterations: iter,
                    });
                }
            }
            let mut drop_idx: Option<usize> = None;
            if bland || dependent {
                for (k, &d) in in_duals_w.iter().enumerate() {
                    if d < -opts.dual_tol
                        && !tabu.contains(&working[k])
                        && drop_idx.is_none_or(|best: usize| working[k] < working[best])
                    {
                        drop_idx = Some(k);
                    }
                }
                // A tabu negative with only zero-multiplier companions is
                // the degenerate-exchange case: the companion blocks the
                // move onto the negative row's face, so it leaves instead.
                if drop_idx.is_none() && bland && has_negative {
                    for (k, &d) in in_duals_w.iter().enumerate() {
                        if d <= opts.dual_tol
                            && !tabu.contains(&working[k])
                            && drop_idx.is_none_or(|best: usize| working[k] < working[best])
                        {
                            drop_idx = Some(k);
                        }
                    }
                }
                if drop_idx.is_none() && has_negative {
                    tabu.clear();
                    for (k, &d) in in_duals_w.iter().enumerate() {
                        if d < -opts.dual_tol
                            && drop_idx.is_none_or(|best: usize| working[k] < working[best])
                        {
                            drop_idx = Some(k);
                        }
                    }
                }
            } else {
                let mut drop_val = -opts.dual_tol;
                for (k, &d) in in_duals_w.iter().enumerate() {
                    if d < drop_val {
                        drop_val = d;
                        drop_idx = Some(k);
                    }
                }
            }
            if let Some(k) = drop_idx {
                tabu.push(working[k]);
                in_working[working[k]] = false;
                working.remove(k);
                continue;
            }
            if tight {
                let mut in_duals = Array1::zeros(m_in);
                for (k, &row) in working.iter().enumerate() {
                    in_duals[row] = in_duals_w[k].max(0.0);
                }
                let mut active = working.clone();
                active.sort_unstable();
                return Ok(QpSolution {
                    objective: problem.objective(&w.view()),
                    w,
                    eq_duals,
                    in_duals,
                    active,
                    iterations: iter,
                });
            }
        }

        // Ratio test against rows outside the working set.
        let mut alpha = 1.0f64;
        let mut blocker: Option<usize> = None;
        for i in 0..m_in {
            if in_working[i] {
                continue;
            }
            let speed = problem.a_in.row(i).dot(&p);
            if speed >= -1e-13 * p_norm.max(1.0) {
                continue;
            }
            let slack = (problem.a_in.row(i).dot(&w) - problem.b_in[i]).max(0.0);
            // Ascending row order makes this lowest-index on exact ties.
            let cand = slack / (-speed);
            if cand < alpha {
                alpha = cand;
                blocker = Some(i);
            }
        }
        if alpha > 0.0 {
            w.scaled_add(alpha, &p);
        }
        if let Some(i) = blocker {
            in_working[i] = true;
            working.push(i);
        }
    }

    let feasibility = problem.max_violation(&w.view());
    Err(Error::NumericalFailure {
        iterations: max_iter,
        stationarity: f64::NAN,
        feasibility,
    })
}

/// At a stationary point with nearly dependent active rows, the KKT solve
/// can report a negative working multiplier that is a decomposition
/// artifact: the same gradient may admit a decomposition with nonnegative
/// working multipliers once the load is shifted onto other active rows or
/// the sign-free equality multipliers. Searches for one by least squares
/// over the active rows, greedily discarding working rows whose multiplier
/// comes out negative. Returns `(equality, working)` multipliers when a
/// sign-feasible decomposition reproduces the gradient, `None` when the
/// negative multiplier is real.
fn repair_gauge_duals(
    problem: &QpProblem,
    w: &Array1<f64>,
    working: &[usize],
    dual_tol: f64,
) -> Option<(Array1<f64>, Vec<f64>)> {
    let stat_guard = scopeguard(&STAT_REPAIR_NANOS, std::time::Instant::now());
    let _ = &stat_guard;
    let dim = problem.dim();
    let p_eq = problem.a_eq.nrows();
    let grad = problem.h.dot(w) + &problem.g;
    let grad_inf = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * (1.0 + grad_inf);

    let mut passive: Vec<usize> = (0..working.len()).collect();
    loop {
        let ncols = p_eq + passive.len();
        let mut basis = Array2::zeros((dim, ncols));
        for r in 0..p_eq {
            basis.column_mut(r).assign(&problem.a_eq.row(r));
        }
        for (j, &k) in passive.iter().enumerate() {
            basis
                .column_mut(p_eq + j)
                .assign(&problem.a_in.row(working[k]));
        }

        let mut theta = Array1::zeros(ncols);
        if ncols > 0 {
            // Dependent rows make the Gram singular; a Tikhonov ridge keeps
            // the factorization alive and, like the min-norm solution,
            // spreads load evenly over exact duplicates. The residual check
            // below vouches for the decomposition either way.
            let mut gram = basis.t().dot(&basis);
            let gmax = gram.diag().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let delta = 1e-12 * (1.0 + gmax);
            for j in 0..ncols {
                gram[[j, j]] += delta;
            }
            let proj = basis.t().dot(&grad);
            theta = crate::linalg::solve_refined(&gram.view(), &proj.view()).ok()?;
        }

        let worst = passive
            .iter()
            .enumerate()
            .min_by(|a, b| theta[p_eq + a.0].total_cmp(&theta[p_eq + b.0]))
            .filter(|&(j, _)| theta[p_eq + j] < -dual_tol)
            .map(|(j, _)| j);
        if let Some(j) = worst {
            passive.remove(j);
            continue;
        }

        let resid = &grad - &basis.dot(&theta);
        let resid_inf = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if resid_inf > tol {
            return None;
        }
        let mu = theta.slice(s![..p_eq]).to_owned();
        let mut lam = vec![0.0; working.len()];
        for (j, &k) in passive.iter().enumerate() {
            lam[k] = theta[p_eq + j].max(0.0);
        }
        return Some((mu, lam));
    }
}

/// Solves the equality-constrained subproblem on the current working set:
/// direction `p` plus multipliers for the equality and working rows.
/// Right-hand sides use constraint residuals, so small feasibility drift is
/// pulled back instead of accumulating.
fn solve_working_kkt(
    problem: &QpProblem,
    w: &Array1<f64>,
    working: &[usize],
    opts: &QpOptions,
) -> Result<(Array1<f64>, Array1<f64>, Vec<f64>, f64, bool)> {
    let stat_t0 = std::time::Instant::now();
    let stat_guard = scopeguard(&STAT_KKT_NANOS, stat_t0);
    let _ = &stat_guard;
    let dim = problem.dim();
    let p_eq = problem.a_eq.nrows();
    let k = working.len();
    let size = dim + p_eq + k;

    let mut kkt = Array2::zeros((size, size));
    let mut rhs = Array1::zeros(size);

    for i in 0..dim {
        for j in 0..dim {
            kkt[[i, j]] = problem.h[[i, j]];
        }
        kkt[[i, i]] += opts.ridge;
    }
    let grad = problem.h.dot(w) + &problem.g;
    for i in 0..dim {
        rhs[i] = -grad[i];
    }
    for r in 0..p_eq {
        for j in 0..dim {
            kkt[[dim + r, j]] = problem.a_eq[[r, j]];
            kkt[[j, dim + r]] = problem.a_eq[[r, j]];
        }
        rhs[dim + r] = problem.b_eq[r] - problem.a_eq.row(r).dot(w);
    }
    for (idx, &row) in working.iter().enumerate() {
        for j in 0..dim {
            kkt[[dim + p_eq + idx, j]] = problem.a_in[[row, j]];
            kkt[[j, dim + p_eq + idx]] = problem.a_in[[row, j]];
        }
        rhs[dim + p_eq + idx] = problem.b_in[row] - problem.a_in.row(row).dot(w);
    }

    let (sol, dependent) = match crate::linalg::solve_refined(&kkt.view(), &rhs.view()) {
        Ok(sol) => (sol, false),
        Err(Error::Singular { .. }) => {
            // Dependent rows in the working set (degenerate vertex) or a
            // flat unconstrained coordinate: fall back to a quasi-definite
            // system (positive shift on the primal diagonal, negative on
            // the dual), then refine against the unshifted matrix. The
            // constraint rows are consistent (their right-hand sides come
            // from the same w), so refinement removes the shift's leak and
            // the step stays on the working manifold.
            let delta = 1e-12 * (1.0 + kkt.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let mut reg = kkt.clone();
            for i in 0..dim {
                reg[[i, i]] += delta;
            }
            for i in dim..size {
                reg[[i, i]] = -delta;
            }
            let lu = crate::linalg::LuFactors::factor(&reg.view())?;
            let mut sol = lu.solve(&rhs.view());
            for _ in 0..3 {
                let resid = &rhs - &kkt.dot(&sol);
                sol += &lu.solve(&resid.view());
            }
            (sol, true)
        }
        Err(e) => return Err(e),
    };

    let p = sol.slice(s![..dim]).to_owned();
    let eq_duals = sol.slice(s![dim..dim + p_eq]).mapv(|v| -v);
    let in_duals_w: Vec<f64> = (0..k).map(|i| -sol[dim + p_eq + i]).collect();
    // Whatever part of the constraint equations the solve failed to meet
    // shows up as drift off the manifold when the step is taken; report it
    // so the caller can tell a phantom direction from a real one.
    let mut leak = 0.0f64;
    for r in 0..(p_eq + k) {
        let i = dim + r;
        leak = leak.max((kkt.row(i).dot(&sol) - rhs[i]).abs());
    }
    Ok((p, eq_duals, in_duals_w, leak, dependent))
}
