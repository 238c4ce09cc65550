//! Polyhedral constraint sets `A x >= b` for the allocation problems.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Structural flavor of a constraint set. The solvers work off `(A, b)`
/// alone; the kind drives presolve shortcuts (pair pruning, rows known to
/// hold with equality at every feasible point).
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// Long-only, fully-invested simplex: `x_i >= 0`, `x_i <= 1`, `1ᵀx = 1`
    /// written as two opposing inequalities.
    LongOnlyBudget,
    /// Dense factor-space variant with an `epsilon`-relaxed lower bound on
    /// the re-projected asset weights.
    FactorDense { epsilon: f64 },
    Custom,
}

#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub kind: ConstraintKind,
}

impl ConstraintSet {
    /// `A = [I; -I; 1ᵀ; -1ᵀ]`, `b = [0; -1; 1; -1]`: the no-shorting,
    /// fully-invested polytope with `m = 2n + 2` rows.
    pub fn long_only_budget(n: usize) -> Self {
        let m = 2 * n + 2;
        let mut a = Array2::zeros((m, n));
        let mut b = Array1::zeros(m);
        for i in 0..n {
            a[[i, i]] = 1.0;
            a[[n + i, i]] = -1.0;
            b[n + i] = -1.0;
        }
        for j in 0..n {
            a[[2 * n, j]] = 1.0;
            a[[2 * n + 1, j]] = -1.0;
        }
        b[2 * n] = 1.0;
        b[2 * n + 1] = -1.0;
        ConstraintSet {
            a,
            b,
            kind: ConstraintKind::LongOnlyBudget,
        }
    }

    /// Wraps a caller-supplied `(A, b)` pair.
    pub fn custom(a: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows in b", a.nrows()),
                actual: format!("{}", b.len()),
                context: "custom constraint set".into(),
            });
        }
        if a.nrows() == 0 {
            return Err(Error::InvalidInput(
                "constraint set needs at least one row".into(),
            ));
        }
        Ok(ConstraintSet {
            a,
            b,
            kind: ConstraintKind::Custom,
        })
    }

    /// Dense factor-space rows; built by `projections::factor_constraints`.
    pub(crate) fn factor_dense(a: Array2<f64>, b: Array1<f64>, epsilon: f64) -> Self {
        ConstraintSet {
            a,
            b,
            kind: ConstraintKind::FactorDense { epsilon },
        }
    }

    /// Number of constraint rows `m`.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Variable dimension `n`.
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Row slacks `A x - b` (nonnegative on feasible points).
    pub fn slacks(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.a.dot(x) - &self.b
    }

    /// Largest violation `max(0, max_i (b - A x)_i)`.
    pub fn max_violation(&self, x: &ArrayView1<f64>) -> f64 {
        self.slacks(x)
            .iter()
            .fold(0.0f64, |m, &s| m.max(-s))
            .max(0.0)
    }

    /// Rows that form mutually exclusive lower/upper pairs: both cannot be
    /// active at once, so binary patterns selecting both are pruned.
    pub fn complementary_pairs(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ConstraintKind::LongOnlyBudget => {
                let n = self.n();
                (0..n).map(|i| (i, n + i)).collect()
            }
            ConstraintKind::FactorDense { .. } => {
                // Rows 0..N and N..2N bound the re-projected asset weights
                // between epsilon and 1.
                let big_n = (self.m() - 2) / 2;
                (0..big_n).map(|i| (i, big_n + i)).collect()
            }
            ConstraintKind::Custom => Vec::new(),
        }
    }

    /// Rows that hold with equality at every feasible point (the opposing
    /// budget rows). Fixing their binaries to 1 upfront shrinks the search.
    pub fn always_active_rows(&self) -> Vec<usize> {
        match self.kind {
            ConstraintKind::LongOnlyBudget | ConstraintKind::FactorDense { .. } => {
                vec![self.m() - 2, self.m() - 1]
            }
            ConstraintKind::Custom => Vec::new(),
        }
    }

    /// A strictly feasible starting point when one is cheap to construct.
    pub(crate) fn cheap_interior_point(&self) -> Option<Array1<f64>> {
        match self.kind {
            ConstraintKind::LongOnlyBudget => {
                let n = self.n();
                Some(Array1::from_elem(n, 1.0 / n as f64))
            }
            _ => None,
        }
    }
}
