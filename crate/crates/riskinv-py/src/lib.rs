//! Python bindings: plain-list interface over the core solvers. Matrices
//! are lists of rows; all functions use long-only budget constraints, the
//! same default as the command-line tool.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use riskinv::{ConstraintSet, Error};

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        3 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what} has ragged rows")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

#[pyclass(get_all, frozen)]
struct ForwardResult {
    x: Vec<f64>,
    u: Vec<f64>,
    objective: f64,
    risk: f64,
    ret: f64,
    active_set: Vec<usize>,
    kkt_worst: f64,
}

#[pymethods]
impl ForwardResult {
    fn __repr__(&self) -> String {
        format!(
            "ForwardResult(risk={:.6e}, ret={:.6e}, kkt_worst={:.3e})",
            self.risk, self.ret, self.kkt_worst
        )
    }
}

impl From<riskinv::ForwardSolution> for ForwardResult {
    fn from(sol: riskinv::ForwardSolution) -> Self {
        ForwardResult {
            kkt_worst: sol.kkt.worst(),
            x: sol.x.to_vec(),
            u: sol.u.to_vec(),
            objective: sol.objective,
            risk: sol.risk,
            ret: sol.ret,
            active_set: sol.active_set,
        }
    }
}

#[pyclass(get_all, frozen)]
struct InverseResult {
    r: f64,
    x: Vec<f64>,
    u: Vec<f64>,
    z: Vec<bool>,
    objective: f64,
    loss: f64,
    status: String,
    binding_m: bool,
    nodes: usize,
}

#[pymethods]
impl InverseResult {
    fn __repr__(&self) -> String {
        format!(
            "InverseResult(r={:.6e}, loss={:.3e}, status={})",
            self.r, self.loss, self.status
        )
    }
}

impl From<riskinv::InverseSolution> for InverseResult {
    fn from(sol: riskinv::InverseSolution) -> Self {
        let status = match sol.status {
            riskinv::inverse::IpoStatus::Optimal => "optimal",
            riskinv::inverse::IpoStatus::GapTolerance => "gap_tolerance",
            riskinv::inverse::IpoStatus::Infeasible => "infeasible",
        };
        InverseResult {
            r: sol.r,
            x: sol.x.to_vec(),
            u: sol.u.to_vec(),
            z: sol.z,
            objective: sol.objective,
            loss: sol.loss,
            status: status.into(),
            binding_m: sol.binding_m,
            nodes: sol.nodes,
        }
    }
}

#[pyclass(get_all, frozen)]
struct FactorModel {
    f: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    epsilon: f64,
    truncation: f64,
}

#[pymethods]
impl FactorModel {
    fn __repr__(&self) -> String {
        format!(
            "FactorModel(n_assets={}, n_factors={}, truncation={:.3e})",
            self.f.len(),
            self.sigma.len(),
            self.truncation
        )
    }
}

#[pyclass(get_all, frozen)]
struct RankComparison {
    labels: Vec<String>,
    rank_a: Vec<f64>,
    rank_b: Vec<f64>,
    spearman: Option<f64>,
    kendall: Option<f64>,
    exact_match: bool,
}

#[pymethods]
impl RankComparison {
    fn __repr__(&self) -> String {
        format!(
            "RankComparison(n={}, spearman={:?}, exact_match={})",
            self.labels.len(),
            self.spearman,
            self.exact_match
        )
    }
}

/// Optimal long-only allocation at risk tolerance `r`.
#[pyfunction]
fn solve_po(q: Vec<Vec<f64>>, c: Vec<f64>, r: f64) -> PyResult<ForwardResult> {
    let q = matrix(q, "q")?;
    let c = Array1::from_vec(c);
    let cons = ConstraintSet::long_only_budget(c.len());
    riskinv::solve_po(&q.view(), &c.view(), r, &cons)
        .map(ForwardResult::from)
        .map_err(py_err)
}

/// Minimum-variance long-only allocation with expected return `z`.
#[pyfunction]
fn solve_po_target(q: Vec<Vec<f64>>, c: Vec<f64>, z: f64) -> PyResult<ForwardResult> {
    let q = matrix(q, "q")?;
    let c = Array1::from_vec(c);
    let cons = ConstraintSet::long_only_budget(c.len());
    riskinv::solve_po_target(&q.view(), &c.view(), z, &cons)
        .map(ForwardResult::from)
        .map_err(py_err)
}

/// Sweep `(r, risk, ret, x)` frontier rows over an ascending tolerance grid
/// (defaults to the standard 100-point logarithmic grid).
#[pyfunction]
#[pyo3(signature = (q, c, r_grid=None))]
fn efficient_frontier(
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    r_grid: Option<Vec<f64>>,
) -> PyResult<Vec<(f64, f64, f64, Vec<f64>)>> {
    let q = matrix(q, "q")?;
    let c = Array1::from_vec(c);
    let cons = ConstraintSet::long_only_budget(c.len());
    let grid = r_grid.unwrap_or_else(riskinv::forward::default_frontier_grid);
    let points = riskinv::efficient_frontier(&q.view(), &c.view(), &cons, &grid).map_err(py_err)?;
    Ok(points
        .into_iter()
        .map(|p| (p.r, p.risk, p.ret, p.x.to_vec()))
        .collect())
}

/// Recover the risk tolerance that best rationalizes the observed
/// allocation `y`, regularized toward `r_prev` with weight `eta`.
#[pyfunction]
fn solve_ipo(
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    y: Vec<f64>,
    r_prev: f64,
    eta: f64,
    big_m: f64,
) -> PyResult<InverseResult> {
    let q = matrix(q, "q")?;
    let c = Array1::from_vec(c);
    let cons = ConstraintSet::long_only_budget(c.len());
    let inst = riskinv::InverseInstance {
        q,
        c,
        cons,
        y: Array1::from_vec(y),
        r_prev,
        eta,
        big_m,
    };
    riskinv::solve_ipo(&inst)
        .map(InverseResult::from)
        .map_err(py_err)
}

/// Online estimates from feeding the same observation for `rounds` rounds
/// with learning rate `lambda/sqrt(t)`; returns the r trajectory.
#[pyfunction]
fn learn_repeated(
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    y: Vec<f64>,
    r0: f64,
    lambda: f64,
    big_m: f64,
    rounds: usize,
) -> PyResult<Vec<f64>> {
    let q = matrix(q, "q")?;
    let c = Array1::from_vec(c);
    let cons = ConstraintSet::long_only_budget(c.len());
    let y = Array1::from_vec(y);
    riskinv::learn_repeated(&q, &c, &cons, &y, r0, lambda, big_m, rounds)
        .map(|sols| sols.into_iter().map(|s| s.r).collect())
        .map_err(py_err)
}

/// Rank-`k` eigendecomposition factor model of a covariance matrix.
#[pyfunction]
fn fit_factors(q: Vec<Vec<f64>>, k: usize, epsilon: f64) -> PyResult<FactorModel> {
    let q = matrix(q, "q")?;
    let model = riskinv::fit_factors(&q.view(), k, epsilon).map_err(py_err)?;
    Ok(FactorModel {
        f: model.f.rows().into_iter().map(|r| r.to_vec()).collect(),
        sigma: model.sigma.to_vec(),
        epsilon: model.epsilon,
        truncation: model.truncation,
    })
}

/// Allocation variance divided by expected return.
#[pyfunction]
fn inverse_sharpe(x: Vec<f64>, q: Vec<Vec<f64>>, c: Vec<f64>) -> PyResult<f64> {
    let q = matrix(q, "q")?;
    riskinv::inverse_sharpe(&Array1::from_vec(x), &q, &Array1::from_vec(c)).map_err(py_err)
}

/// Compare the rank order of two label->value maps over shared labels.
#[pyfunction]
fn rank_compare(
    a: BTreeMap<String, f64>,
    b: BTreeMap<String, f64>,
) -> PyResult<RankComparison> {
    let cmp = riskinv::rank_compare(&a, &b).map_err(py_err)?;
    Ok(RankComparison {
        labels: cmp.labels,
        rank_a: cmp.rank_a,
        rank_b: cmp.rank_b,
        spearman: cmp.spearman,
        kendall: cmp.kendall,
        exact_match: cmp.exact_match,
    })
}

#[pymodule]
fn riskinv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ForwardResult>()?;
    m.add_class::<InverseResult>()?;
    m.add_class::<FactorModel>()?;
    m.add_class::<RankComparison>()?;
    m.add_function(wrap_pyfunction!(solve_po, m)?)?;
    m.add_function(wrap_pyfunction!(solve_po_target, m)?)?;
    m.add_function(wrap_pyfunction!(efficient_frontier, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ipo, m)?)?;
    m.add_function(wrap_pyfunction!(learn_repeated, m)?)?;
    m.add_function(wrap_pyfunction!(fit_factors, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_sharpe, m)?)?;
    m.add_function(wrap_pyfunction!(rank_compare, m)?)?;
    Ok(())
}
