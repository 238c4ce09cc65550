//! Command-line front end. Every subcommand takes one structured-text
//! config file; the only environment override is `RISKINV_OUT` for the
//! output directory. Exit codes: 0 success, 1 configuration error, 2 data
//! error, 3 solver failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use ndarray::Array1;

use crate::config::RunConfig;
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::forward::{
    default_frontier_grid, efficient_frontier, solve_po, solve_po_target, FrontierPoint,
};
use crate::inverse::solve_ipo;
use crate::market_data::{
    align, load_portfolios, load_prices, moments, rolling_annual_returns, PortfolioSchema,
    PricePanel, PriceSchema,
};
use crate::metrics::{inverse_sharpe, load_beta_table, rank_compare, RankComparison};
use crate::online::{learn_with_bands, LearnInputs, LearnerConfig, Space};
use crate::projections::SectorMap;
use crate::report::{
    read_instance_json, read_moments_json, read_trace_mean, write_comparison_csv,
    write_forward_json, write_frontier_csv, write_grid_csv, write_instance_json,
    write_inverse_json, write_metrics_json, write_moments_json, write_order_json,
    write_returns_csv, write_trace_csv, write_validation_json, OutputMeta,
};
use crate::validation::{
    ordered_recovery, point_estimation_error, point_estimation_error_factor, GridSpec, OrderSpec,
};

#[derive(Parser)]
#[command(
    name = "riskinv",
    version,
    about = "Learns risk-tolerance parameters from observed portfolio allocations",
    disable_help_subcommand = true
)]
struct Cli {
    /// Worker threads for grid cells and lookback sweeps (1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Report failures as one machine-readable JSON line on stderr.
    #[arg(long, global = true)]
    error_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a rolling return panel (and optionally moments) from prices.
    Ingest { config: PathBuf },
    /// Solve one allocation at a fixed risk tolerance or target return.
    Forward { config: PathBuf },
    /// Sweep the efficient frontier over a risk-tolerance grid.
    Frontier { config: PathBuf },
    /// Solve one inverse instance from JSON.
    Invert { config: PathBuf },
    /// Run the online learner over aligned prices and holdings.
    Learn { config: PathBuf },
    /// Sweep the big-M / lambda (/ epsilon) hyperparameter grid.
    Gridsearch { config: PathBuf },
    /// Check ordered recovery of log-uniform tolerance samples.
    ValidateOrder { config: PathBuf },
    /// Compare learned tolerances against published risk metrics.
    Metrics { config: PathBuf },
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.jobs == 0 {
        report_failure(&Error::Config("--jobs must be at least 1".into()), cli.error_json);
        return 1;
    }
    // The global pool can only be sized once per process; later calls keep
    // the existing pool, which is harmless because reductions are ordered.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global();

    let outcome = match &cli.command {
        Command::Ingest { config } => cmd_ingest(config),
        Command::Forward { config } => cmd_forward(config),
        Command::Frontier { config } => cmd_frontier(config),
        Command::Invert { config } => cmd_invert(config),
        Command::Learn { config } => cmd_learn(config),
        Command::Gridsearch { config } => cmd_gridsearch(config),
        Command::ValidateOrder { config } => cmd_validate_order(config),
        Command::Metrics { config } => cmd_metrics(config),
    };
    match outcome {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            0
        }
        Err(e) => {
            let code = e.exit_code();
            report_failure(&e, cli.error_json);
            code
        }
    }
}

fn report_failure(e: &Error, as_json: bool) {
    if as_json {
        let doc = serde_json::json!({
            "kind": e.kind(),
            "message": e.to_string(),
            "exit_code": e.exit_code(),
        });
        eprintln!("{doc}");
    } else {
        eprintln!("error: {e}");
    }
}

/// Output directory: config key `out_dir` (default `.`), overridden by the
/// `RISKINV_OUT` environment variable when set.
fn out_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os("RISKINV_OUT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(cfg.get("out_dir").unwrap_or(".")),
    }
}

fn price_schema(cfg: &RunConfig) -> PriceSchema {
    let mut schema = PriceSchema::default();
    if let Some(v) = cfg.get("price_date_col") {
        schema.date = v.into();
    }
    if let Some(v) = cfg.get("price_ticker_col") {
        schema.ticker = v.into();
    }
    if let Some(v) = cfg.get("price_open_col") {
        schema.open = v.into();
    }
    if let Some(v) = cfg.get("price_close_col") {
        schema.close = v.into();
    }
    schema
}

fn portfolio_schema(cfg: &RunConfig) -> PortfolioSchema {
    let mut schema = PortfolioSchema::default();
    if let Some(v) = cfg.get("portfolio_date_col") {
        schema.date = v.into();
    }
    if let Some(v) = cfg.get("portfolio_ticker_col") {
        schema.ticker = v.into();
    }
    if let Some(v) = cfg.get("portfolio_weight_col") {
        schema.weight = v.into();
    }
    schema
}

fn load_price_panel(cfg: &RunConfig) -> Result<PricePanel> {
    let path = PathBuf::from(cfg.require("prices")?);
    let panel = load_prices(&path, &price_schema(cfg))?;
    if cfg.get_bool("monthly")?.unwrap_or(false) {
        panel.select_dates(&panel.monthly_indices())
    } else {
        Ok(panel)
    }
}

fn cmd_ingest(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);
    let panel = load_price_panel(&cfg)?;
    let window = cfg.get_usize("window")?.unwrap_or(253);
    let returns = rolling_annual_returns(&panel, window)?;
    let returns_path = out.join("returns.csv");
    write_returns_csv(&returns_path, &returns, &meta)?;
    let mut written = vec![returns_path];
    if let Some(as_of) = cfg.get_date("moments_as_of")? {
        let lookback = cfg.get_usize("moments_lookback")?.unwrap_or(1);
        let m = moments(&returns, as_of, lookback)?;
        let moments_path = out.join("moments.json");
        write_moments_json(&moments_path, &m, &meta)?;
        written.push(moments_path);
    }
    Ok(written)
}

fn cmd_forward(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);
    let r_key = cfg.get_f64("r")?;
    let target_key = cfg.get_f64("target")?;
    if r_key.is_some() == target_key.is_some() {
        return Err(Error::Config(
            "specify exactly one of `r` and `target`".into(),
        ));
    }
    let m = read_moments_json(&PathBuf::from(cfg.require("moments")?))?;
    let cons = ConstraintSet::long_only_budget(m.c.len());
    let (r, sol) = match (r_key, target_key) {
        (Some(r), _) => (r, solve_po(&m.q.view(), &m.c.view(), r, &cons)?),
        (None, Some(z)) => {
            let sol = solve_po_target(&m.q.view(), &m.c.view(), z, &cons)?;
            // The return-constraint dual is the tolerance that rationalizes
            // this allocation.
            let dual = sol.target_dual.expect("target solve records its dual");
            (dual, sol)
        }
        (None, None) => unreachable!("validated above"),
    };
    let json_path = out.join("forward.json");
    write_forward_json(&json_path, r, &sol, &meta)?;
    let csv_path = out.join("forward.csv");
    let point = FrontierPoint {
        r,
        risk: sol.risk,
        ret: sol.ret,
        x: sol.x.clone(),
    };
    write_frontier_csv(&csv_path, std::slice::from_ref(&point), &meta)?;
    Ok(vec![json_path, csv_path])
}

fn cmd_frontier(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);
    let m = read_moments_json(&PathBuf::from(cfg.require("moments")?))?;
    let cons = ConstraintSet::long_only_budget(m.c.len());
    let grid = match cfg.get_list_f64("r_grid")? {
        Some(grid) => grid,
        None => default_frontier_grid(),
    };
    let points = efficient_frontier(&m.q.view(), &m.c.view(), &cons, &grid)?;
    let path = out.join("frontier.csv");
    write_frontier_csv(&path, &points, &meta)?;
    Ok(vec![path])
}

fn cmd_invert(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);
    let inst = read_instance_json(&PathBuf::from(cfg.require("instance")?))?;
    let sol = solve_ipo(&inst)?;
    let path = out.join("inverse.json");
    write_inverse_json(&path, &inst, &sol, &meta)?;
    let echo = cfg.get_bool("echo_instance")?.unwrap_or(false);
    if echo {
        let inst_path = out.join("instance.json");
        write_instance_json(&inst_path, &inst, &meta)?;
        return Ok(vec![path, inst_path]);
    }
    Ok(vec![path])
}

fn learner_config(cfg: &RunConfig) -> Result<LearnerConfig> {
    let big_m = match cfg.get_f64("big_m")? {
        Some(v) => v,
        None => cfg
            .get_f64("m")?
            .ok_or_else(|| Error::MissingKey("big_m".into()))?,
    };
    let space = match cfg.get("space") {
        Some(s) => s.parse::<Space>()?,
        None => Space::Asset,
    };
    Ok(LearnerConfig {
        r0: cfg.require_f64("r0")?,
        lambda: cfg.require_f64("lambda")?,
        big_m,
        epsilon: cfg.get_f64("epsilon")?,
        factors: cfg.get_usize("factors")?.unwrap_or(1),
        lookbacks: cfg.get_list_usize("lookbacks")?.unwrap_or_else(|| vec![1]),
        space,
    })
}

fn cmd_learn(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);
    let lc = learner_config(&cfg)?;
    let panel = load_price_panel(&cfg)?;
    let portfolios = load_portfolios(
        &PathBuf::from(cfg.require("portfolios")?),
        &portfolio_schema(&cfg),
    )?;
    let window = cfg.get_usize("window")?.unwrap_or(253);
    let returns = rolling_annual_returns(&panel, window)?;
    let t_s = cfg.require_date("learn_start")?;
    let t_e = cfg.require_date("learn_end")?;
    let aligned = align(&portfolios, &returns, t_s, t_e)?;
    let sector_map = match cfg.get("sectors") {
        Some(path) => Some(SectorMap::from_csv(&PathBuf::from(path))?),
        None => None,
    };
    let inputs = LearnInputs {
        aligned: &aligned,
        portfolios: &portfolios,
        returns: &returns,
        sector_map: sector_map.as_ref(),
    };
    let trace = learn_with_bands(&inputs, &lc)?;
    let path = out.join("trace.csv");
    write_trace_csv(&path, &trace, &meta)?;
    Ok(vec![path])
}

fn grid_spec(cfg: &RunConfig) -> Result<GridSpec> {
    let mut spec = GridSpec::default();
    if let Some(v) = cfg.get_list_f64("big_m_grid")? {
        spec.big_m_grid = v;
    }
    if let Some(v) = cfg.get_list_f64("lambda_grid")? {
        spec.lambda_grid = v;
    }
    if let Some(v) = cfg.get_list_f64("epsilon_grid")? {
        spec.epsilon_grid = v;
    }
    if let Some(v) = cfg.get_f64("r_min")? {
        spec.r_range.0 = v;
    }
    if let Some(v) = cfg.get_f64("r_max")? {
        spec.r_range.1 = v;
    }
    if let Some(v) = cfg.get_list_f64("r_guesses")? {
        spec.r_guesses = v;
    }
    if let Some(v) = cfg.get_usize("n_samples")? {
        spec.n_samples = v;
    }
    if let Some(v) = cfg.get_usize("rounds")? {
        spec.rounds = v;
    }
    if let Some(v) = cfg.get_u64("seed")? {
        spec.seed = v;
    }
    Ok(spec)
}

fn cmd_gridsearch(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);
    let m = read_moments_json(&PathBuf::from(cfg.require("moments")?))?;
    let spec = grid_spec(&cfg)?;
    let space = cfg.get("space").unwrap_or("asset");
    let report = match space {
        "asset" | "sector" => {
            let cons = ConstraintSet::long_only_budget(m.c.len());
            point_estimation_error(&m.q, &m.c, &cons, &spec)?
        }
        "factor" => {
            let factors = cfg.require_usize("factors")?;
            point_estimation_error_factor(&m.q, &m.c, factors, &spec)?
        }
        other => {
            return Err(Error::BadValue {
                key: "space".into(),
                value: other.into(),
                reason: "expected asset, sector, or factor".into(),
            })
        }
    };
    let json_path = out.join("validation.json");
    write_validation_json(&json_path, &report, &meta)?;
    let csv_path = out.join("grid.csv");
    write_grid_csv(&csv_path, &report, &meta)?;
    Ok(vec![json_path, csv_path])
}

fn order_spec(cfg: &RunConfig) -> Result<OrderSpec> {
    let mut spec = OrderSpec::default();
    if let Some(v) = cfg.get_usize("n_samples")? {
        spec.n_samples = v;
    }
    if let Some(v) = cfg.get_f64("log_min")? {
        spec.log_range.0 = v;
    }
    if let Some(v) = cfg.get_f64("log_max")? {
        spec.log_range.1 = v;
    }
    if let Some(v) = cfg.get_u64("seed")? {
        spec.seed = v;
    }
    if let Some(v) = cfg.get_usize("rounds")? {
        spec.rounds = v;
    }
    if let Some(v) = cfg.get_f64("lambda")? {
        spec.lambda = v;
    }
    if let Some(v) = cfg.get_f64("big_m")? {
        spec.big_m = v;
    }
    if let Some(v) = cfg.get_f64("r_guess")? {
        spec.r_guess = v;
    }
    Ok(spec)
}

fn cmd_validate_order(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);
    let m = read_moments_json(&PathBuf::from(cfg.require("moments")?))?;
    let spec = order_spec(&cfg)?;
    let cons = ConstraintSet::long_only_budget(m.c.len());
    let result = ordered_recovery(&m.q, &m.c, &cons, &spec)?;
    let path = out.join("order.json");
    write_order_json(&path, &result, &meta)?;
    Ok(vec![path])
}

/// `traces = label:path[,label:path...]`
fn parse_trace_list(raw: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for item in raw.split(',') {
        let item = item.trim();
        let (label, path) = item.split_once(':').ok_or_else(|| Error::BadValue {
            key: "traces".into(),
            value: item.into(),
            reason: "expected label:path".into(),
        })?;
        if label.is_empty() || path.is_empty() {
            return Err(Error::BadValue {
                key: "traces".into(),
                value: item.into(),
                reason: "label and path must be non-empty".into(),
            });
        }
        out.push((label.to_owned(), PathBuf::from(path)));
    }
    Ok(out)
}

fn cmd_metrics(config: &Path) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?;
    let meta = OutputMeta::from_config_text(cfg.raw());
    let out = out_dir(&cfg);

    let mut mean_r: BTreeMap<String, f64> = BTreeMap::new();
    if let Some(raw) = cfg.get("traces") {
        for (label, path) in parse_trace_list(raw)? {
            let rows = read_trace_mean(&path)?;
            if rows.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "trace `{label}` ({}) has no rows",
                    path.display()
                )));
            }
            let mean = rows.iter().map(|(_, r)| r).sum::<f64>() / rows.len() as f64;
            if mean_r.insert(label.clone(), mean).is_some() {
                return Err(Error::BadValue {
                    key: "traces".into(),
                    value: label,
                    reason: "duplicate label".into(),
                });
            }
        }
    }

    let mut comparisons: Vec<(i32, RankComparison)> = Vec::new();
    if let Some(path) = cfg.get("betas") {
        if mean_r.is_empty() {
            return Err(Error::Config(
                "`betas` needs `traces` to rank against".into(),
            ));
        }
        let tables = load_beta_table(&PathBuf::from(path))?;
        for (year, table) in &tables {
            comparisons.push((*year, rank_compare(&mean_r, table)?));
        }
    }

    let sharpe = match (cfg.get("moments"), cfg.get_list_f64("weights")?) {
        (Some(mpath), Some(weights)) => {
            let m = read_moments_json(&PathBuf::from(mpath))?;
            let x = Array1::from_vec(weights);
            Some(inverse_sharpe(&x, &m.q, &m.c)?)
        }
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "inverse Sharpe needs both `moments` and `weights`".into(),
            ))
        }
    };

    if mean_r.is_empty() && sharpe.is_none() {
        return Err(Error::Config(
            "metrics needs `traces` and/or `moments` + `weights`".into(),
        ));
    }

    let json_path = out.join("metrics.json");
    write_metrics_json(&json_path, &mean_r, &comparisons, sharpe, &meta)?;
    let mut written = vec![json_path];
    if !comparisons.is_empty() {
        let csv_path = out.join("comparison.csv");
        write_comparison_csv(&csv_path, &comparisons, &meta)?;
        written.push(csv_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<OsString> {
        list.iter().map(OsString::from).collect()
    }

    #[test]
    fn unknown_subcommand_exits_one() {
        assert_eq!(run(args(&["riskinv", "frobnicate"])), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(args(&["riskinv", "--help"])), 0);
    }

    #[test]
    fn unreadable_config_file_is_a_data_error() {
        let code = run(args(&["riskinv", "forward", "/nonexistent/cfg.txt"]));
        assert_eq!(code, 2);
    }

    #[test]
    fn trace_list_parses_labels_and_paths() {
        let list = parse_trace_list("a:/tmp/a.csv, b:/tmp/b.csv").unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(list[0].0, "a");
        assert_eq!(list[1].1, PathBuf::from("/tmp/b.csv"));
        assert!(parse_trace_list("nopath").is_err());
        assert!(parse_trace_list(":x").is_err());
    }

    #[test]
    fn forward_rejects_ambiguous_tolerance_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.txt");
        std::fs::write(
            &cfg,
            "schema_version = 1\nmoments = /tmp/none.json\nr = 1\ntarget = 0.2\n",
        )
        .unwrap();
        let err = cmd_forward(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
