//! Validation protocols for the inverse pipeline: a hyperparameter grid
//! search scored by relative squared estimation error, ordered recovery of
//! tolerance samples along the efficient frontier, and a seeded
//! multi-period fixture generator for end-to-end runs.

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::forward::{solve_po, solve_po_target};
use crate::linalg::symmetric_eigen;
use crate::market_data::{rolling_annual_returns, PortfolioSeries, PricePanel, ReturnPanel};
use crate::metrics::{kendall_tau_b, spearman};
use crate::online::learn_repeated;
use crate::projections::{factor_constraints, factor_moments, fit_factors};

/// Hyperparameter grid and sampling protocol for the point-estimation
/// search. Defaults follow the published protocol: M and λ sweep
/// {100, 500, 1000, 5000, 10000}, the weight floor sweeps
/// {0.005, 0.01, 0.05, 0.1} in factor space, tolerances are sampled in
/// [0.5, 20] and estimation starts from each integer guess in 1..=10.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub big_m_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub r_range: (f64, f64),
    pub r_guesses: Vec<f64>,
    pub n_samples: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            big_m_grid: vec![100.0, 500.0, 1000.0, 5000.0, 10000.0],
            lambda_grid: vec![100.0, 500.0, 1000.0, 5000.0, 10000.0],
            epsilon_grid: vec![0.005, 0.01, 0.05, 0.1],
            r_range: (0.5, 20.0),
            r_guesses: (1..=10).map(|g| g as f64).collect(),
            n_samples: 10,
            rounds: 20,
            seed: 2020,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.big_m_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::InvalidInput("grid axes must be non-empty".into()));
        }
        if self.r_guesses.is_empty() || self.n_samples == 0 || self.rounds == 0 {
            return Err(Error::InvalidInput(
                "grid search needs guesses, samples and rounds".into(),
            ));
        }
        let (lo, hi) = self.r_range;
        if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
            return Err(Error::InvalidInput(format!(
                "tolerance sample range ({lo}, {hi}) must be positive and ordered"
            )));
        }
        Ok(())
    }

    fn sample_tolerances(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = self.r_range;
        (0..self.n_samples)
            .map(|_| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// One grid cell's aggregate relative squared error. `epsilon` is set only
/// for factor-space searches.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub big_m: f64,
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub error: f64,
}

/// Result of the ordered-recovery protocol: tolerance samples, their
/// estimates, both induced orders, and rank agreement.
#[derive(Debug, Clone)]
pub struct OrderResult {
    pub true_r: Vec<f64>,
    pub estimated_r: Vec<f64>,
    pub true_order: Vec<usize>,
    pub estimated_order: Vec<usize>,
    pub exact_match: bool,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    pub seed: u64,
}

/// Outcome of a validation run: the per-cell error table (in grid
/// iteration order), the winning cell, the sampled tolerances, and the
/// order protocol's result when it ran.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub cells: Vec<CellResult>,
    pub best: usize,
    pub r_samples: Vec<f64>,
    pub r_guesses: Vec<f64>,
    pub rounds: usize,
    pub seed: u64,
    pub order: Option<OrderResult>,
}

impl ValidationReport {
    pub fn best_cell(&self) -> &CellResult {
        &self.cells[self.best]
    }
}

/// Mean relative squared error of one cell over every (sample, guess)
/// pair: the estimate after `rounds` repeated observations of `x*(r_s)` is
/// scored as `(r_s − r_e)² / r_s²`. Any solver failure inside the cell
/// scores it infinite.
fn cell_error(
    q: &Array2<f64>,
    c: &Array1<f64>,
    cons: &ConstraintSet,
    observations: &[(f64, Array1<f64>)],
    guesses: &[f64],
    lambda: f64,
    big_m: f64,
    rounds: usize,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (r_s, y) in observations {
        for &r_g in guesses {
            match learn_repeated(q, c, cons, y, r_g, lambda, big_m, rounds) {
                Ok(sols) => {
                    let r_e = sols.last().expect("rounds >= 1").r;
                    let rel = (r_s - r_e) / r_s;
                    total += rel * rel;
                    count += 1;
                }
                Err(_) => return f64::INFINITY,
            }
        }
    }
    total / count as f64
}

/// Sweeps the (M, λ) grid on a fixed problem. For every cell, every
/// sampled tolerance is observed noiselessly for `spec.rounds` rounds from
/// every guess, and the relative squared errors are averaged. Cells run in
/// parallel; results keep grid iteration order and the best cell is the
/// first minimum.
pub fn point_estimation_error(
    q: &Array2<f64>,
    c: &Array1<f64>,
    cons: &ConstraintSet,
    spec: &GridSpec,
) -> Result<ValidationReport> {
    spec.validate()?;
    let r_samples = spec.sample_tolerances();
    let mut observations = Vec::with_capacity(r_samples.len());
    for &r_s in &r_samples {
        let sol = solve_po(&q.view(), &c.view(), r_s, cons).map_err(|e| Error::Context {
            context: format!("forward generation at r={r_s}"),
            source: Box::new(e),
        })?;
        observations.push((r_s, sol.x));
    }

    let mut grid = Vec::new();
    for &big_m in &spec.big_m_grid {
        for &lambda in &spec.lambda_grid {
            grid.push((big_m, lambda));
        }
    }
    let cells: Vec<CellResult> = grid
        .par_iter()
        .map(|&(big_m, lambda)| CellResult {
            big_m,
            lambda,
            epsilon: None,
            error: cell_error(
                q,
                c,
                cons,
                &observations,
                &spec.r_guesses,
                lambda,
                big_m,
                spec.rounds,
            ),
        })
        .collect();
    let best = argmin(&cells);
    Ok(ValidationReport {
        cells,
        best,
        r_samples,
        r_guesses: spec.r_guesses.clone(),
        rounds: spec.rounds,
        seed: spec.seed,
        order: None,
    })
}

/// Factor-space variant of the grid search: every cell additionally sweeps
/// the weight floor, refits the factor model at that floor, and both
/// generates and estimates in factor coordinates.
pub fn point_estimation_error_factor(
    q: &Array2<f64>,
    c: &Array1<f64>,
    factors: usize,
    spec: &GridSpec,
) -> Result<ValidationReport> {
    spec.validate()?;
    if spec.epsilon_grid.is_empty() {
        return Err(Error::InvalidInput(
            "factor grid search needs a weight-floor axis".into(),
        ));
    }
    let r_samples = spec.sample_tolerances();

    // Per-floor problem data is shared across the (M, λ) cells under it.
    struct FloorData {
        epsilon: f64,
        q_f: Array2<f64>,
        c_f: Array1<f64>,
        cons: ConstraintSet,
        observations: Vec<(f64, Array1<f64>)>,
    }
    let mut floors = Vec::with_capacity(spec.epsilon_grid.len());
    for &epsilon in &spec.epsilon_grid {
        let model = fit_factors(q, factors, epsilon)?;
        let (q_f, c_f) = factor_moments(&model, c)?;
        let cons = factor_constraints(&model);
        let mut observations = Vec::with_capacity(r_samples.len());
        for &r_s in &r_samples {
            let sol = solve_po(&q_f.view(), &c_f.view(), r_s, &cons).map_err(|e| Error::Context {
                context: format!("forward generation at r={r_s}, epsilon={epsilon}"),
                source: Box::new(e),
            })?;
            observations.push((r_s, sol.x));
        }
        floors.push(FloorData {
            epsilon,
            q_f,
            c_f,
            cons,
            observations,
        });
    }

    let mut grid = Vec::new();
    for (fi, _) in floors.iter().enumerate() {
        for &big_m in &spec.big_m_grid {
            for &lambda in &spec.lambda_grid {
                grid.push((fi, big_m, lambda));
            }
        }
    }
    let cells: Vec<CellResult> = grid
        .par_iter()
        .map(|&(fi, big_m, lambda)| {
            let f = &floors[fi];
            CellResult {
                big_m,
                lambda,
                epsilon: Some(f.epsilon),
                error: cell_error(
                    &f.q_f,
                    &f.c_f,
                    &f.cons,
                    &f.observations,
                    &spec.r_guesses,
                    lambda,
                    big_m,
                    spec.rounds,
                ),
            }
        })
        .collect();
    let best = argmin(&cells);
    Ok(ValidationReport {
        cells,
        best,
        r_samples,
        r_guesses: spec.r_guesses.clone(),
        rounds: spec.rounds,
        seed: spec.seed,
        order: None,
    })
}

fn argmin(cells: &[CellResult]) -> usize {
    let mut best = 0;
    for (i, cell) in cells.iter().enumerate() {
        if cell.error < cells[best].error {
            best = i;
        }
    }
    best
}

/// Sampling protocol for ordered recovery. Tolerances are drawn
/// log-uniformly from `10^log_range`, sorted ascending, and each is
/// estimated by an independent repeated-observation run.
#[derive(Debug, Clone)]
pub struct OrderSpec {
    pub n_samples: usize,
    pub log_range: (f64, f64),
    pub seed: u64,
    pub rounds: usize,
    pub lambda: f64,
    pub big_m: f64,
    pub r_guess: f64,
}

impl Default for OrderSpec {
    fn default() -> Self {
        OrderSpec {
            n_samples: 30,
            log_range: (-5.0, 1.0),
            seed: 2020,
            rounds: 25,
            lambda: 1e4,
            big_m: 1e3,
            r_guess: 1.0,
        }
    }
}

/// Ascending argsort with index tie-breaking.
fn order_of(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));
    idx
}

/// Samples tolerances along the frontier, regenerates each one's optimal
/// allocation, estimates the tolerance back independently, and compares
/// the two orders. All-equal samples degenerate to an exact match with
/// undefined correlation.
pub fn ordered_recovery(
    q: &Array2<f64>,
    c: &Array1<f64>,
    cons: &ConstraintSet,
    spec: &OrderSpec,
) -> Result<OrderResult> {
    if spec.n_samples < 2 {
        return Err(Error::InvalidInput(
            "ordered recovery needs at least two samples".into(),
        ));
    }
    let (lo, hi) = spec.log_range;
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::InvalidInput(format!(
            "log range ({lo}, {hi}) must be ordered and finite"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut true_r: Vec<f64> = (0..spec.n_samples)
        .map(|_| 10f64.powf(lo + (hi - lo) * rng.random::<f64>()))
        .collect();
    true_r.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let estimated_r: Vec<f64> = true_r
        .par_iter()
        .enumerate()
        .map(|(i, &r_s)| {
            let tag = |e: Error| Error::Context {
                context: format!("order sample {i} (r={r_s})"),
                source: Box::new(e),
            };
            let y = solve_po(&q.view(), &c.view(), r_s, cons).map_err(tag)?.x;
            let sols = learn_repeated(
                q,
                c,
                cons,
                &y,
                spec.r_guess,
                spec.lambda,
                spec.big_m,
                spec.rounds,
            )
            .map_err(tag)?;
            Ok(sols.last().expect("rounds >= 1").r)
        })
        .collect::<Result<Vec<f64>>>()?;

    let true_order = order_of(&true_r);
    let estimated_order = order_of(&estimated_r);
    Ok(OrderResult {
        exact_match: true_order == estimated_order,
        spearman: spearman(&true_r, &estimated_r),
        kendall: kendall_tau_b(&true_r, &estimated_r),
        true_r,
        estimated_r,
        true_order,
        estimated_order,
        seed: spec.seed,
    })
}

/// Observation spacing and window length of generated fixtures.
const FIXTURE_GAP: usize = 10;
const FIXTURE_WINDOW: usize = 30;
const FIXTURE_DAILY_NOISE: f64 = 0.01;

/// A generated multi-period dataset: a seeded price panel plus portfolio
/// observations rebalanced to a fixed target return. `window` is the
/// rolling-return window the observations were built against.
#[derive(Debug, Clone)]
pub struct MultiperiodFixture {
    pub prices: PricePanel,
    pub portfolios: PortfolioSeries,
    pub returns: ReturnPanel,
    pub window: usize,
}

/// Generates `periods` portfolio observations over a seeded geometric
/// random walk. Per-asset drifts follow `c`; daily shocks share the
/// correlation structure of `q`. Each observation solves the
/// target-return problem against the moments visible at that date, so the
/// fixture is noiseless for a learner using the same lookback. An
/// unattainable target surfaces the offending period index.
pub fn generate_multiperiod_fixture(
    c: &Array1<f64>,
    q: &Array2<f64>,
    target_return: f64,
    periods: usize,
    seed: u64,
) -> Result<MultiperiodFixture> {
    let n = c.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} covariance"),
            actual: format!("{}x{}", q.nrows(), q.ncols()),
            context: "fixture generation".into(),
        });
    }
    if periods == 0 {
        return Err(Error::InvalidInput("fixture needs at least one period".into()));
    }
    if c.iter().any(|v| !v.is_finite() || *v <= -1.0) {
        return Err(Error::InvalidInput(
            "fixture drifts must be finite returns above -1".into(),
        ));
    }

    // Correlation factor of the daily shocks.
    let (vals, vecs) = symmetric_eigen(&q.view());
    let mut factor = vecs;
    for j in 0..n {
        let s = vals[j].max(0.0).sqrt();
        factor.column_mut(j).mapv_inplace(|v| v * s);
    }
    let scale = factor
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);

    let days = FIXTURE_WINDOW + FIXTURE_GAP * periods + 1;
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let mut dates = Vec::with_capacity(days);
    let mut level = vec![100.0f64; n];
    let mut prices = Array2::zeros((days, n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Per-day growth that compounds to the annual drift over one window.
    let growth: Vec<f64> = c
        .iter()
        .map(|&cj| (1.0 + cj).powf(1.0 / (FIXTURE_WINDOW as f64 - 1.0)))
        .collect();
    for t in 0..days {
        dates.push(start + chrono::Days::new(t as u64));
        if t > 0 {
            let shock: Vec<f64> = (0..n)
                .map(|_| {
                    // Box-Muller keeps the dependency surface small.
                    let u1: f64 = rng.random::<f64>().max(1e-12);
                    let u2: f64 = rng.random::<f64>();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            for j in 0..n {
                let mut corr = 0.0;
                for k in 0..n {
                    corr += factor[[j, k]] * shock[k];
                }
                let daily = growth[j] * (FIXTURE_DAILY_NOISE * corr / scale).exp();
                level[j] *= daily;
            }
        }
        for j in 0..n {
            prices[[t, j]] = level[j];
        }
    }
    let tickers: Vec<String> = (0..n).map(|j| format!("SYN{j:02}")).collect();
    let observed = Array2::from_elem((days, n), true);
    let panel = PricePanel::new(
        dates,
        tickers.clone(),
        prices.clone(),
        prices,
        observed,
    )?;
    let returns = rolling_annual_returns(&panel, FIXTURE_WINDOW)?;

    let mut obs_dates = Vec::with_capacity(periods);
    let mut holdings = Vec::with_capacity(periods * n);
    for p in 0..periods {
        let row = FIXTURE_GAP * (p + 1);
        let date = returns.dates[row];
        let m = crate::market_data::moments(&returns, date, 1).map_err(|e| Error::Context {
            context: format!("period {p}"),
            source: Box::new(e),
        })?;
        let sol = solve_po_target(&m.q.view(), &m.c.view(), target_return, &ConstraintSet::long_only_budget(n))
            .map_err(|e| Error::Context {
                context: format!("period {p}"),
                source: Box::new(e),
            })?;
        obs_dates.push(date);
        holdings.extend(sol.x.iter().copied());
    }
    let portfolios = PortfolioSeries::new(
        obs_dates,
        tickers,
        Array2::from_shape_vec((periods, n), holdings).expect("rectangular holdings"),
    )?;
    Ok(MultiperiodFixture {
        prices: panel,
        portfolios,
        returns,
        window: FIXTURE_WINDOW,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::align;
    use crate::online::{learn_sequence, LearnInputs, LearnerConfig, Space};
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;

    fn small_problem() -> (Array2<f64>, Array1<f64>, ConstraintSet) {
        // Interior optima across r in [0, ~8]: x*(r) = 1/3 + r (c - mean c)
        // stays inside the simplex for the sampled range.
        let q = Array2::eye(3);
        let c = arr1(&[0.05, 0.03, 0.01]);
        (q, c, ConstraintSet::long_only_budget(3))
    }

    #[test]
    fn zero_lambda_cell_matches_closed_form() {
        let (q, c, cons) = small_problem();
        let spec = GridSpec {
            big_m_grid: vec![1000.0],
            lambda_grid: vec![0.0],
            r_guesses: vec![1.0, 4.0],
            n_samples: 3,
            rounds: 5,
            seed: 11,
            ..GridSpec::default()
        };
        let report = point_estimation_error(&q, &c, &cons, &spec).unwrap();
        assert_eq!(report.cells.len(), 1);
        // With no learning weight the estimate never leaves the guess.
        let mut expect = 0.0;
        for &r_s in &report.r_samples {
            for &r_g in &spec.r_guesses {
                expect += ((r_s - r_g) / r_s).powi(2);
            }
        }
        expect /= (report.r_samples.len() * spec.r_guesses.len()) as f64;
        assert_abs_diff_eq!(report.cells[0].error, expect, epsilon = 1e-12);
    }

    #[test]
    fn learning_cell_beats_static_guess() {
        let (q, c, cons) = small_problem();
        let spec = GridSpec {
            big_m_grid: vec![1000.0],
            lambda_grid: vec![0.0, 1e4],
            r_guesses: vec![2.0],
            n_samples: 3,
            rounds: 10,
            seed: 5,
            ..GridSpec::default()
        };
        let report = point_estimation_error(&q, &c, &cons, &spec).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report.best_cell().lambda, 1e4);
        assert!(report.best_cell().error < 1e-10);
        assert!(report.cells[0].error > 1e-3);
    }

    #[test]
    fn infeasible_cell_scores_infinite_and_search_continues() {
        let (q, c, cons) = small_problem();
        let spec = GridSpec {
            // A big-M far below the simplex slack scale leaves no feasible
            // activity pattern.
            big_m_grid: vec![1e-4, 1000.0],
            lambda_grid: vec![1e4],
            r_guesses: vec![2.0],
            n_samples: 2,
            rounds: 5,
            seed: 5,
            ..GridSpec::default()
        };
        let report = point_estimation_error(&q, &c, &cons, &spec).unwrap();
        assert!(report.cells[0].error.is_infinite());
        assert!(report.cells[1].error.is_finite());
        assert_eq!(report.best, 1);
    }

    #[test]
    fn grid_reports_are_deterministic() {
        let (q, c, cons) = small_problem();
        let spec = GridSpec {
            big_m_grid: vec![500.0, 1000.0],
            lambda_grid: vec![100.0, 1e4],
            r_guesses: vec![1.0],
            n_samples: 2,
            rounds: 5,
            seed: 42,
            ..GridSpec::default()
        };
        let a = point_estimation_error(&q, &c, &cons, &spec).unwrap();
        let b = point_estimation_error(&q, &c, &cons, &spec).unwrap();
        assert_eq!(a.r_samples, b.r_samples);
        for (x, y) in a.cells.iter().zip(b.cells.iter()) {
            assert_eq!(x.error.to_bits(), y.error.to_bits());
        }
        let (lo, hi) = spec.r_range;
        assert!(a.r_samples.iter().all(|&r| r >= lo && r <= hi));
    }

    #[test]
    fn factor_grid_sweeps_the_floor_axis() {
        let (q, c, _) = small_problem();
        let spec = GridSpec {
            big_m_grid: vec![1000.0],
            lambda_grid: vec![1e4],
            epsilon_grid: vec![0.005, 0.01],
            r_guesses: vec![2.0],
            n_samples: 2,
            rounds: 8,
            seed: 9,
            ..GridSpec::default()
        };
        let report = point_estimation_error_factor(&q, &c, 3, &spec).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report.cells[0].epsilon, Some(0.005));
        assert_eq!(report.cells[1].epsilon, Some(0.01));
        // Full-basis factor estimation stays accurate for both floors.
        for cell in &report.cells {
            assert!(cell.error < 1e-8, "cell error {}", cell.error);
        }
    }

    #[test]
    fn ordered_recovery_on_identifiable_problem_is_exact() {
        let (q, c, cons) = small_problem();
        let spec = OrderSpec {
            n_samples: 8,
            log_range: (-3.0, 0.5),
            seed: 17,
            ..OrderSpec::default()
        };
        let result = ordered_recovery(&q, &c, &cons, &spec).unwrap();
        assert_eq!(result.true_order, (0..8).collect::<Vec<_>>());
        assert!(result.exact_match, "estimates {:?}", result.estimated_r);
        assert_eq!(result.spearman, Some(1.0));
        assert_eq!(result.kendall, Some(1.0));
        for (t, e) in result.true_r.iter().zip(result.estimated_r.iter()) {
            assert!((t - e).abs() <= 1e-6 * (1.0 + t), "true {t}, estimated {e}");
        }
    }

    #[test]
    fn ordered_recovery_degenerate_samples_match_with_null_correlation() {
        let (q, c, cons) = small_problem();
        let spec = OrderSpec {
            n_samples: 4,
            // A collapsed log range makes every sample exactly 1.
            log_range: (0.0, 0.0),
            seed: 3,
            ..OrderSpec::default()
        };
        let result = ordered_recovery(&q, &c, &cons, &spec).unwrap();
        assert!(result.true_r.iter().all(|&r| r == 1.0));
        assert!(result.exact_match);
        assert_eq!(result.spearman, None);
    }

    #[test]
    fn ordered_recovery_failure_names_the_sample() {
        let (q, c, cons) = small_problem();
        let spec = OrderSpec {
            n_samples: 2,
            log_range: (0.0, 0.1),
            seed: 3,
            big_m: 1e-4,
            ..OrderSpec::default()
        };
        match ordered_recovery(&q, &c, &cons, &spec) {
            Err(Error::Context { context, .. }) => {
                assert!(context.starts_with("order sample"), "context {context}");
            }
            other => panic!("expected a tagged sample failure, got {other:?}"),
        }
    }

    fn fixture_inputs() -> (Array1<f64>, Array2<f64>) {
        // The low-return asset carries the least variance, so the
        // minimum-variance return sits near its drift and every tested
        // target lies on the increasing branch. The top drift leaves the
        // realized per-period maximum mean above 0.3 even after several
        // sigmas of simulation noise, keeping every target attainable.
        let c = arr1(&[0.02, 0.25, 0.60]);
        let q = Array2::from_diag(&arr1(&[0.2, 1.0, 2.0]));
        (c, q)
    }

    #[test]
    fn fixture_is_deterministic_and_well_formed() {
        let (c, q) = fixture_inputs();
        let a = generate_multiperiod_fixture(&c, &q, 0.2, 3, 99).unwrap();
        let b = generate_multiperiod_fixture(&c, &q, 0.2, 3, 99).unwrap();
        assert_eq!(a.portfolios.dates, b.portfolios.dates);
        assert!(a
            .portfolios
            .holdings
            .iter()
            .zip(b.portfolios.holdings.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.portfolios.holdings.nrows(), 3);
        // Different seeds move the path.
        let other = generate_multiperiod_fixture(&c, &q, 0.2, 3, 100).unwrap();
        assert!(a
            .prices
            .close
            .iter()
            .zip(other.prices.close.iter())
            .any(|(x, y)| x != y));
    }

    #[test]
    fn single_period_fixture_is_one_forward_solve() {
        let (c, q) = fixture_inputs();
        let f = generate_multiperiod_fixture(&c, &q, 0.2, 1, 7).unwrap();
        assert_eq!(f.portfolios.holdings.nrows(), 1);
        let m = crate::market_data::moments(&f.returns, f.portfolios.dates[0], 1).unwrap();
        let sol = solve_po_target(&m.q.view(), &m.c.view(), 0.2, &ConstraintSet::long_only_budget(3)).unwrap();
        for (a, b) in f.portfolios.holdings.row(0).iter().zip(sol.x.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unattainable_target_names_the_period() {
        let (c, q) = fixture_inputs();
        match generate_multiperiod_fixture(&c, &q, 5.0, 2, 7) {
            Err(Error::Context { context, source }) => {
                assert_eq!(context, "period 0");
                assert!(matches!(*source, Error::InfeasibleTarget { .. }));
            }
            other => panic!("expected a period-tagged failure, got {other:?}"),
        }
    }

    #[test]
    fn higher_targets_learn_higher_tolerance() {
        let (c, q) = fixture_inputs();
        let mut means = Vec::new();
        for &z in &[0.10, 0.20, 0.30] {
            let f = generate_multiperiod_fixture(&c, &q, z, 4, 123).unwrap();
            let aligned = align(
                &f.portfolios,
                &f.returns,
                f.portfolios.dates[0],
                *f.portfolios.dates.last().unwrap(),
            )
            .unwrap();
            let inputs = LearnInputs {
                aligned: &aligned,
                portfolios: &f.portfolios,
                returns: &f.returns,
                sector_map: None,
            };
            let cfg = LearnerConfig {
                r0: 1.0,
                lambda: 1e4,
                big_m: 1e3,
                epsilon: None,
                factors: 5,
                lookbacks: vec![1],
                space: Space::Asset,
            };
            let records = learn_sequence(&inputs, &cfg, 1).unwrap();
            let mean = records.iter().map(|r| r.r).sum::<f64>() / records.len() as f64;
            means.push(mean);
        }
        assert!(
            means[0] < means[1] && means[1] < means[2],
            "learned means {means:?}"
        );
    }
}
