//! Online risk-tolerance learning over an aligned time series. Each
//! observed portfolio produces one inverse-optimization round; the prior
//! estimate chains forward and the learning weight decays as `λ/√t`.

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::inverse::{solve_ipo, InverseInstance, InverseSolution};
use crate::market_data::{moments, AlignedDataset, PortfolioSeries, ReturnPanel};
use crate::projections::{
    factor_constraints, factor_moments, fit_factors, sector_holdings, sector_returns, to_factor,
    SectorMap,
};

/// Space the learner works in. Sector and factor runs project observations
/// and moments before each round; the recovered tolerance is specific to
/// the chosen space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Asset,
    Sector,
    Factor,
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asset" => Ok(Space::Asset),
            "sector" => Ok(Space::Sector),
            "factor" => Ok(Space::Factor),
            other => Err(Error::BadValue {
                key: "space".into(),
                value: other.into(),
                reason: "expected one of asset, sector, factor".into(),
            }),
        }
    }
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Space::Asset => "asset",
            Space::Sector => "sector",
            Space::Factor => "factor",
        };
        f.write_str(s)
    }
}

/// Parameters of one learning run.
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    /// Initial tolerance estimate; every lookback sweep restarts here.
    pub r0: f64,
    /// Learning-weight scale: round `t` uses `η_t = λ/√t`.
    pub lambda: f64,
    /// Big-M bound on duals and slacks inside the inverse solver.
    pub big_m: f64,
    /// Reconstructed-weight floor; required in factor space, unused
    /// otherwise.
    pub epsilon: Option<f64>,
    /// Number of factors kept when `space` is `Factor`.
    pub factors: usize,
    /// One-based start rows of the moment windows to sweep.
    pub lookbacks: Vec<usize>,
    pub space: Space,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, value: String, reason: &str| {
            Err(Error::BadValue {
                key: key.into(),
                value,
                reason: reason.into(),
            })
        };
        if !self.r0.is_finite() || self.r0 <= 0.0 {
            return bad("r0", self.r0.to_string(), "initial tolerance must be positive");
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad("lambda", self.lambda.to_string(), "weight scale must be non-negative");
        }
        if !self.big_m.is_finite() || self.big_m <= 0.0 {
            return bad("big_m", self.big_m.to_string(), "big-M bound must be positive");
        }
        if self.lookbacks.is_empty() {
            return bad("lookbacks", "[]".into(), "at least one lookback is required");
        }
        if self.lookbacks.iter().any(|&l| l == 0) {
            return bad(
                "lookbacks",
                format!("{:?}", self.lookbacks),
                "lookback offsets are one-based",
            );
        }
        match (self.space, self.epsilon) {
            (Space::Factor, None) => {
                return Err(Error::MissingKey("epsilon".into()));
            }
            (Space::Factor, Some(e)) if !e.is_finite() || e <= 0.0 => {
                return bad("epsilon", e.to_string(), "weight floor must be positive");
            }
            _ => {}
        }
        if self.space == Space::Factor && self.factors == 0 {
            return bad("factors", "0".into(), "factor count must be positive");
        }
        Ok(())
    }

    /// Learning weight for one-based round `t`.
    pub fn eta(&self, t: usize) -> f64 {
        self.lambda / (t as f64).sqrt()
    }
}

/// Everything one learning run reads: the alignment bookkeeping plus the
/// raw series it indexes into. The sector map is only consulted for
/// sector-space runs.
#[derive(Debug, Clone, Copy)]
pub struct LearnInputs<'a> {
    pub aligned: &'a AlignedDataset,
    pub portfolios: &'a PortfolioSeries,
    pub returns: &'a ReturnPanel,
    pub sector_map: Option<&'a SectorMap>,
}

/// Outcome of a single learning round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub date: NaiveDate,
    pub r: f64,
    pub loss: f64,
    pub eta: f64,
    /// The inverse solution pressed against the big-M bound; the estimate
    /// stands but a larger bound may change it.
    pub binding_m: bool,
}

/// Learned tolerance per observation date, across lookback sweeps.
/// `per_lookback` and `per_round_loss` are lookback-major `(L, T)` arrays;
/// `r_mean`/`r_std` are exact per-date statistics over the lookback axis
/// (population standard deviation, so a single sweep reports zero).
#[derive(Debug, Clone)]
pub struct RiskTrace {
    pub dates: Vec<NaiveDate>,
    pub lookbacks: Vec<usize>,
    pub r_mean: Vec<f64>,
    pub r_std: Vec<f64>,
    pub per_lookback: Array2<f64>,
    pub per_round_loss: Array2<f64>,
    pub binding: Array2<bool>,
}

/// One round's problem data in the learner's chosen space.
struct RoundProblem {
    q: Array2<f64>,
    c: Array1<f64>,
    cons: ConstraintSet,
    y: Array1<f64>,
}

/// Per-space data prepared once per run.
enum SpaceData {
    Asset,
    Sector {
        holdings: PortfolioSeries,
        panel: ReturnPanel,
    },
    Factor {
        epsilon: f64,
        k: usize,
    },
}

impl SpaceData {
    fn prepare(inputs: &LearnInputs<'_>, cfg: &LearnerConfig, panel: &ReturnPanel) -> Result<Self> {
        match cfg.space {
            Space::Asset => Ok(SpaceData::Asset),
            Space::Sector => {
                let map = inputs.sector_map.ok_or_else(|| {
                    Error::MissingKey("sector_map".into())
                })?;
                Ok(SpaceData::Sector {
                    holdings: sector_holdings(inputs.portfolios, map)?,
                    panel: sector_returns(inputs.portfolios, panel, map)?,
                })
            }
            Space::Factor => {
                let k = cfg.factors;
                let n = inputs.aligned.tickers.len();
                if k > n {
                    return Err(Error::InvalidInput(format!(
                        "factor count {k} exceeds asset count {n}"
                    )));
                }
                Ok(SpaceData::Factor {
                    epsilon: cfg.epsilon.expect("validated"),
                    k,
                })
            }
        }
    }

    fn round_problem(
        &self,
        panel: &ReturnPanel,
        y_asset: &Array1<f64>,
        obs_row: usize,
        date: NaiveDate,
        lookback: usize,
    ) -> Result<RoundProblem> {
        match self {
            SpaceData::Asset => {
                let m = moments(panel, date, lookback)?;
                Ok(RoundProblem {
                    cons: ConstraintSet::long_only_budget(m.c.len()),
                    q: m.q,
                    c: m.c,
                    y: y_asset.clone(),
                })
            }
            SpaceData::Sector { holdings, panel } => {
                let m = moments(panel, date, lookback)?;
                Ok(RoundProblem {
                    cons: ConstraintSet::long_only_budget(m.c.len()),
                    q: m.q,
                    c: m.c,
                    y: holdings.holdings.row(obs_row).to_owned(),
                })
            }
            SpaceData::Factor { epsilon, k } => {
                let m = moments(panel, date, lookback)?;
                let model = fit_factors(&m.q, *k, *epsilon)?;
                let (q_f, c_f) = factor_moments(&model, &m.c)?;
                let y_f = to_factor(&model, y_asset)?;
                Ok(RoundProblem {
                    cons: factor_constraints(&model),
                    q: q_f,
                    c: c_f,
                    y: y_f,
                })
            }
        }
    }
}

/// Runs one learning sweep over the aligned observations with a fixed
/// moment-window start row. Round indices are one-based within the run and
/// any failure aborts with the offending round and date attached.
pub fn learn_sequence(
    inputs: &LearnInputs<'_>,
    cfg: &LearnerConfig,
    lookback: usize,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    if lookback == 0 {
        return Err(Error::BadValue {
            key: "lookback".into(),
            value: "0".into(),
            reason: "lookback offsets are one-based".into(),
        });
    }
    let panel = inputs
        .returns
        .select_columns(&inputs.aligned.price_columns)?;
    let space = SpaceData::prepare(inputs, cfg, &panel)?;

    let mut records = Vec::with_capacity(inputs.aligned.observation_times.len());
    let mut r_prev = cfg.r0;
    for (i, &date) in inputs.aligned.observation_times.iter().enumerate() {
        let t = i + 1;
        let round = |e: Error| Error::LearnRound {
            round: t,
            date,
            source: Box::new(e),
        };
        let obs_row = *inputs
            .aligned
            .portfolio_index_of
            .get(&date)
            .expect("observation dates come from the alignment");
        let y_asset = inputs.portfolios.holdings.row(obs_row).to_owned();
        let problem = space
            .round_problem(&panel, &y_asset, obs_row, date, lookback)
            .map_err(round)?;
        let eta = cfg.eta(t);
        let inst = InverseInstance {
            q: problem.q,
            c: problem.c,
            cons: problem.cons,
            y: problem.y,
            r_prev,
            eta,
            big_m: cfg.big_m,
        };
        let sol = solve_ipo(&inst).map_err(round)?;
        r_prev = sol.r;
        records.push(RoundRecord {
            date,
            r: sol.r,
            loss: sol.loss,
            eta,
            binding_m: sol.binding_m,
        });
    }
    Ok(records)
}

/// Sweeps every configured lookback independently (each restarts from
/// `r0`) and assembles the per-date spread. Sweeps run in parallel; the
/// result and the choice of reported error are deterministic.
pub fn learn_with_bands(inputs: &LearnInputs<'_>, cfg: &LearnerConfig) -> Result<RiskTrace> {
    cfg.validate()?;
    let outcomes: Vec<Result<Vec<RoundRecord>>> = cfg
        .lookbacks
        .par_iter()
        .map(|&l| {
            learn_sequence(inputs, cfg, l).map_err(|e| Error::Context {
                context: format!("lookback {l}"),
                source: Box::new(e),
            })
        })
        .collect();
    let mut runs = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        runs.push(outcome?);
    }

    let dates = inputs.aligned.observation_times.clone();
    let t_len = dates.len();
    let l_len = runs.len();
    let mut per_lookback = Array2::zeros((l_len, t_len));
    let mut per_round_loss = Array2::zeros((l_len, t_len));
    let mut binding = Array2::from_elem((l_len, t_len), false);
    for (li, run) in runs.iter().enumerate() {
        for (ti, rec) in run.iter().enumerate() {
            per_lookback[[li, ti]] = rec.r;
            per_round_loss[[li, ti]] = rec.loss;
            binding[[li, ti]] = rec.binding_m;
        }
    }
    let mut r_mean = Vec::with_capacity(t_len);
    let mut r_std = Vec::with_capacity(t_len);
    for ti in 0..t_len {
        let col = per_lookback.column(ti);
        let mean = col.sum() / l_len as f64;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / l_len as f64;
        r_mean.push(mean);
        r_std.push(var.sqrt());
    }
    Ok(RiskTrace {
        dates,
        lookbacks: cfg.lookbacks.clone(),
        r_mean,
        r_std,
        per_lookback,
        per_round_loss,
        binding,
    })
}

/// Repeated-observation learning: the same `(Q, c, y)` is presented for
/// `rounds` rounds. This is the stationary core of the online loop and the
/// workhorse of the validation protocols.
pub fn learn_repeated(
    q: &Array2<f64>,
    c: &Array1<f64>,
    cons: &ConstraintSet,
    y: &Array1<f64>,
    r0: f64,
    lambda: f64,
    big_m: f64,
    rounds: usize,
) -> Result<Vec<InverseSolution>> {
    let mut out = Vec::with_capacity(rounds);
    let mut r_prev = r0;
    for t in 1..=rounds {
        let inst = InverseInstance {
            q: q.clone(),
            c: c.clone(),
            cons: cons.clone(),
            y: y.clone(),
            r_prev,
            eta: lambda / (t as f64).sqrt(),
            big_m,
        };
        let sol = solve_ipo(&inst)?;
        r_prev = sol.r;
        out.push(sol);
    }
    Ok(out)
}
