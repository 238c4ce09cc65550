//! Estimation of time-varying risk tolerance from observed portfolio
//! allocations by inverse optimization over the mean-variance model.
//!
//! The crate solves the forward Markowitz allocation problem
//! `min ½xᵀQx − r·cᵀx` over long-only budget constraints, inverts it — given
//! an observed allocation, recover the risk tolerance `r` that best
//! rationalizes it via a KKT/big-M mixed-integer QP — and runs an online
//! learning loop over aligned price/portfolio time series. Sector and
//! factor projections, validation protocols (point-estimation grid search,
//! ordered recovery along the efficient frontier), and comparison metrics
//! (inverse Sharpe, beta rank order) round out the pipeline. The `riskinv`
//! binary exposes it all as subcommands.
//!
//! All solvers are deterministic: fixed tie-breaking rules, seeded RNG
//! everywhere, no wall-clock dependence.

pub mod config;
pub mod constraints;
pub mod error;
pub mod forward;
pub mod inverse;
pub mod linalg;
pub mod market_data;
pub mod metrics;
pub mod online;
pub mod projections;
pub mod qp;
pub mod report;
pub mod validation;

pub mod cli;

pub use constraints::{ConstraintKind, ConstraintSet};
pub use error::{Error, Result};
pub use forward::{
    efficient_frontier, risk_return_equivalence, solve_po, solve_po_target, ForwardSolution,
    FrontierPoint,
};
pub use inverse::{enumerate_active_sets, loss, solve_ipo, InverseInstance, InverseSolution};
pub use market_data::{
    align, load_portfolios, load_prices, moments, rolling_annual_returns, AlignedDataset,
    MarketMoments, PortfolioSeries, PricePanel, ReturnPanel,
};
pub use metrics::{capm_beta, inverse_sharpe, rank_compare, RankComparison};
pub use online::{
    learn_repeated, learn_sequence, learn_with_bands, LearnInputs, LearnerConfig, RiskTrace,
    RoundRecord, Space,
};
pub use projections::{
    factor_constraints, factor_moments, fit_factors, from_factor, sector_holdings, sector_returns,
    to_factor, to_sector, FactorModel, SectorMap, SectorView, STANDARD_SECTORS,
};
pub use validation::{
    generate_multiperiod_fixture, ordered_recovery, point_estimation_error,
    point_estimation_error_factor, CellResult, GridSpec, MultiperiodFixture, OrderResult,
    OrderSpec, ValidationReport,
};
