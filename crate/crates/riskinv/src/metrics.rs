//! Comparison metrics: inverse Sharpe ratio, mean-excess-return beta, and
//! rank-order comparison between labeled score tables.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Risk per unit of expected return of an allocation: `xᵀQx / cᵀx`.
pub fn inverse_sharpe(x: &Array1<f64>, q: &Array2<f64>, c: &Array1<f64>) -> Result<f64> {
    let n = x.len();
    if q.nrows() != n || q.ncols() != n || c.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} covariance and length-{n} returns"),
            actual: format!("{}x{} and length {}", q.nrows(), q.ncols(), c.len()),
            context: "inverse Sharpe".into(),
        });
    }
    let denom = c.dot(x);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "inverse Sharpe needs a nonzero expected return".into(),
        ));
    }
    Ok(x.dot(&q.dot(x)) / denom)
}

/// Beta as the ratio of mean excess returns.
pub fn capm_beta(asset_excess_mean: f64, market_excess_mean: f64) -> Result<f64> {
    if market_excess_mean == 0.0 {
        return Err(Error::UndefinedMetric(
            "beta needs a nonzero market excess return".into(),
        ));
    }
    Ok(asset_excess_mean / market_excess_mean)
}

/// Beta from raw return series and a risk-free rate (default zero at call
/// sites that have none).
pub fn capm_beta_from_returns(asset: &[f64], market: &[f64], risk_free: f64) -> Result<f64> {
    if asset.is_empty() || market.is_empty() {
        return Err(Error::UndefinedMetric("beta needs non-empty returns".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    capm_beta(mean(asset) - risk_free, mean(market) - risk_free)
}

/// Rank-order comparison between two label-to-score tables.
#[derive(Debug, Clone)]
pub struct RankComparison {
    /// Shared labels, alphabetical.
    pub labels: Vec<String>,
    /// Average ranks of the first table's scores, ascending (1-based).
    pub rank_a: Vec<f64>,
    pub rank_b: Vec<f64>,
    /// Tie-adjusted Spearman correlation; `None` when either side has no
    /// rank variance.
    pub spearman: Option<f64>,
    /// Kendall tau-b; `None` when a tie correction empties a side.
    pub kendall: Option<f64>,
    /// The two rank vectors coincide exactly.
    pub exact_match: bool,
}

/// Average ranks (1-based) of the values, ascending; ties share the mean
/// of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));
    let mut ranks = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j + 1 < n && values[idx[j + 1]] == values[idx[k]] {
            j += 1;
        }
        let avg = (k + j + 2) as f64 / 2.0;
        for &i in &idx[k..=j] {
            ranks[i] = avg;
        }
        k = j + 1;
    }
    ranks
}

/// Tie-adjusted Spearman correlation of two value slices, or `None` when a
/// side has no rank variance.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Kendall tau-b of two value slices, or `None` when a tie correction
/// leaves no comparable pairs on a side.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_a = 0i64;
    let mut ties_b = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 && db == 0.0 {
                continue;
            } else if da == 0.0 {
                ties_a += 1;
            } else if db == 0.0 {
                ties_b += 1;
            } else if (da > 0.0) == (db > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    // Pairs tied on both sides count against neither margin.
    let tied_both = n0 - concordant - discordant - ties_a - ties_b;
    let denom_a = n0 - ties_a - tied_both;
    let denom_b = n0 - ties_b - tied_both;
    if denom_a <= 0 || denom_b <= 0 {
        return None;
    }
    Some((concordant - discordant) as f64 / ((denom_a as f64) * (denom_b as f64)).sqrt())
}

/// Compares the rank orders induced by two score tables over their shared
/// labels. At least two shared labels are required.
pub fn rank_compare(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<RankComparison> {
    let labels: Vec<String> = a
        .keys()
        .filter(|k| b.contains_key(*k))
        .cloned()
        .collect();
    if labels.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "rank comparison needs at least two shared labels, found {}",
            labels.len()
        )));
    }
    let va: Vec<f64> = labels.iter().map(|l| a[l]).collect();
    let vb: Vec<f64> = labels.iter().map(|l| b[l]).collect();
    if va.iter().chain(vb.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "rank comparison scores must be finite".into(),
        ));
    }
    let rank_a = average_ranks(&va);
    let rank_b = average_ranks(&vb);
    let exact_match = rank_a == rank_b;
    Ok(RankComparison {
        spearman: pearson(&rank_a, &rank_b),
        kendall: kendall_tau_b(&va, &vb),
        labels,
        rank_a,
        rank_b,
        exact_match,
    })
}

/// A per-date metric series for one labeled portfolio; `None` marks dates
/// where the metric is undefined.
#[derive(Debug, Clone)]
pub struct RiskMetricSeries {
    pub label: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
}

/// Loads a `label,year,beta` CSV into per-year score tables.
pub fn load_beta_table(path: &Path) -> Result<BTreeMap<i32, BTreeMap<String, f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: 1,
                reason: format!("missing column {name:?}"),
            })
    };
    let label_col = col("label")?;
    let year_col = col("year")?;
    let beta_col = col("beta")?;
    let mut table: BTreeMap<i32, BTreeMap<String, f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) as usize;
        let parse_err = |reason: String| Error::Parse {
            path: path.display().to_string(),
            line,
            reason,
        };
        let get = |c: usize| {
            record
                .get(c)
                .ok_or_else(|| parse_err("short record".into()))
        };
        let label = get(label_col)?.to_string();
        let year: i32 = get(year_col)?
            .parse()
            .map_err(|e| parse_err(format!("bad year: {e}")))?;
        let beta: f64 = get(beta_col)?
            .parse()
            .map_err(|e| parse_err(format!("bad beta: {e}")))?;
        if !beta.is_finite() {
            return Err(parse_err(format!("beta must be finite, got {beta}")));
        }
        if table.entry(year).or_default().insert(label.clone(), beta).is_some() {
            return Err(parse_err(format!("duplicate entry for {label} in {year}")));
        }
    }
    Ok(table)
}
