//! Dimension-reduction maps for large portfolios: sector aggregation driven
//! by a ticker classification, and a PCA factor model fitted per covariance
//! snapshot. Both produce the (y, Q, c, constraints) bundle the inverse
//! solver consumes, just in a smaller space.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::market_data::{moments, MarketMoments, PortfolioSeries, ReturnPanel};

/// The standard eleven industry sectors, in canonical (alphabetical) order.
/// Sector-space vectors produced by this module always use this ordering
/// unless a map is built with a custom sector list.
pub const STANDARD_SECTORS: [&str; 11] = [
    "Basic Materials",
    "Communication Services",
    "Consumer Cyclical",
    "Consumer Defensive",
    "Energy",
    "Financial Services",
    "Healthcare",
    "Industrials",
    "Real Estate",
    "Technology",
    "Utilities",
];

/// Assignment of tickers to a fixed, ordered sector list. The sector list
/// fixes the dimension of every sector-space vector; sectors with no
/// assigned ticker still occupy a coordinate.
#[derive(Debug, Clone)]
pub struct SectorMap {
    sectors: Vec<String>,
    index_of_ticker: BTreeMap<String, usize>,
}

impl SectorMap {
    /// Builds a map over the standard eleven sectors. Every assignment must
    /// name one of the standard sector labels.
    pub fn new<I, S, T>(assignments: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        Self::with_sectors(
            STANDARD_SECTORS.iter().map(|s| s.to_string()).collect(),
            assignments,
        )
    }

    /// Builds a map over a caller-supplied ordered sector list.
    pub fn with_sectors<I, S, T>(sectors: Vec<String>, assignments: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        if sectors.is_empty() {
            return Err(Error::InvalidInput("sector list must be non-empty".into()));
        }
        let mut order = BTreeMap::new();
        for (i, s) in sectors.iter().enumerate() {
            if order.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate sector label {s:?}")));
            }
        }
        let mut index_of_ticker = BTreeMap::new();
        for (ticker, sector) in assignments {
            let ticker = ticker.into();
            let sector = sector.as_ref();
            let Some(&idx) = order.get(sector) else {
                return Err(Error::InvalidInput(format!(
                    "ticker {ticker} assigned to unknown sector {sector:?}"
                )));
            };
            if index_of_ticker.insert(ticker.clone(), idx).is_some() {
                return Err(Error::InvalidInput(format!(
                    "ticker {ticker} classified more than once"
                )));
            }
        }
        Ok(SectorMap {
            sectors,
            index_of_ticker,
        })
    }

    /// Loads a `ticker,sector` CSV (header required) over the standard
    /// sector list.
    pub fn from_csv(path: &Path) -> Result<Self> {
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
        let ticker_col = col("ticker")?;
        let sector_col = col("sector")?;
        let mut assignments = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0) as usize;
            let field = |c: usize| {
                record.get(c).ok_or_else(|| Error::Parse {
                    path: path.display().to_string(),
                    line,
                    reason: "short record".into(),
                })
            };
            assignments.push((field(ticker_col)?.to_string(), field(sector_col)?.to_string()));
        }
        Self::new(assignments)
    }

    /// Ordered sector labels; the coordinate system of sector space.
    pub fn sectors(&self) -> &[String] {
        &self.sectors
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    /// Sector coordinate of a ticker, if classified.
    pub fn sector_index(&self, ticker: &str) -> Option<usize> {
        self.index_of_ticker.get(ticker).copied()
    }

    /// Sector coordinate for every name in `tickers`, or the full list of
    /// unclassified names.
    fn resolve(&self, tickers: &[String]) -> Result<Vec<usize>> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(tickers.len());
        for t in tickers {
            match self.sector_index(t) {
                Some(i) => out.push(i),
                None => missing.push(t.clone()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::UnresolvedTickers(missing))
        }
    }
}

/// One observation projected to sector space: aggregated holdings plus the
/// moments of the sector-level return history.
#[derive(Debug, Clone)]
pub struct SectorView {
    pub y: Array1<f64>,
    pub moments: MarketMoments,
    pub sectors: Vec<String>,
}

/// Sums portfolio weights within each sector. Rows keep their dates; the
/// ticker axis becomes the sector label axis.
pub fn sector_holdings(series: &PortfolioSeries, map: &SectorMap) -> Result<PortfolioSeries> {
    let sector_of = map.resolve(&series.tickers)?;
    let k = map.n_sectors();
    let mut holdings = Array2::zeros((series.dates.len(), k));
    for (t, row) in series.holdings.rows().into_iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            holdings[[t, sector_of[j]]] += w;
        }
    }
    PortfolioSeries::new(
        series.dates.clone(),
        map.sectors.clone(),
        holdings,
    )
}

/// Collapses an asset return panel to sector returns. The sector return on
/// each date is the holdings-weighted average of member asset returns, with
/// weights renormalized within the sector. A sector the portfolio does not
/// currently hold keeps its most recent within-sector weights; if it has
/// never been held (or no observation precedes the date), members weigh
/// equally. Sectors with no member column at all get a constant zero row.
pub fn sector_returns(
    series: &PortfolioSeries,
    panel: &ReturnPanel,
    map: &SectorMap,
) -> Result<ReturnPanel> {
    let sector_of_panel = map.resolve(&panel.tickers)?;
    map.resolve(&series.tickers)?;
    let k = map.n_sectors();

    // Panel column for each held ticker; a held name without return history
    // cannot be weighted.
    let panel_col: BTreeMap<&str, usize> = panel
        .tickers
        .iter()
        .enumerate()
        .map(|(j, t)| (t.as_str(), j))
        .collect();
    let mut missing = Vec::new();
    let mut held_col = Vec::with_capacity(series.tickers.len());
    for t in &series.tickers {
        match panel_col.get(t.as_str()) {
            Some(&j) => held_col.push(j),
            None => missing.push(t.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnresolvedTickers(missing));
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (j, &s) in sector_of_panel.iter().enumerate() {
        members[s].push(j);
    }

    // carried[i] holds the last within-sector weights seen with positive
    // sector mass, indexed by member position.
    let mut carried: Vec<Option<Vec<f64>>> = vec![None; k];
    let mut held_weight = vec![0.0f64; panel.tickers.len()];
    let mut rows = Array2::zeros((panel.dates.len(), k));
    for (t, &date) in panel.dates.iter().enumerate() {
        // Latest portfolio observation on or before this return date.
        let obs = series.dates.partition_point(|&d| d <= date);
        let obs = obs.checked_sub(1);
        held_weight.iter_mut().for_each(|w| *w = 0.0);
        if let Some(o) = obs {
            for (j, &col) in held_col.iter().enumerate() {
                held_weight[col] += series.holdings[[o, j]];
            }
        }
        for (i, m) in members.iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            let mass: f64 = m.iter().map(|&j| held_weight[j]).sum();
            let value = if mass > 0.0 {
                let w: Vec<f64> = m.iter().map(|&j| held_weight[j] / mass).collect();
                let v = m
                    .iter()
                    .zip(&w)
                    .map(|(&j, &wj)| wj * panel.returns[[t, j]])
                    .sum();
                carried[i] = Some(w);
                v
            } else if let Some(w) = &carried[i] {
                m.iter()
                    .zip(w)
                    .map(|(&j, &wj)| wj * panel.returns[[t, j]])
                    .sum()
            } else {
                let eq = 1.0 / m.len() as f64;
                m.iter().map(|&j| eq * panel.returns[[t, j]]).sum()
            };
            rows[[t, i]] = value;
        }
    }
    ReturnPanel::new(panel.dates.clone(), map.sectors.clone(), rows)
}

/// Projects one observation to sector space: aggregated holdings at the
/// latest observation on or before `as_of`, plus sector-level moments over
/// the window starting at row `lookback_offset` (one-based).
pub fn to_sector(
    series: &PortfolioSeries,
    panel: &ReturnPanel,
    map: &SectorMap,
    as_of: NaiveDate,
    lookback_offset: usize,
) -> Result<SectorView> {
    let aggregated = sector_holdings(series, map)?;
    let obs = series.dates.partition_point(|&d| d <= as_of);
    let Some(obs) = obs.checked_sub(1) else {
        return Err(Error::InvalidInput(format!(
            "no portfolio observation on or before {as_of}"
        )));
    };
    let sector_panel = sector_returns(series, panel, map)?;
    let m = moments(&sector_panel, as_of, lookback_offset)?;
    Ok(SectorView {
        y: aggregated.holdings.row(obs).to_owned(),
        moments: m,
        sectors: map.sectors.clone(),
    })
}

/// Truncated eigendecomposition of one covariance snapshot: `f` holds the
/// top-`k` eigenvectors as orthonormal columns, `sigma` the matching
/// eigenvalues in descending order. `epsilon` is the lower bound imposed on
/// reconstructed asset weights, and `truncation` records the Frobenius norm
/// of the discarded part of the covariance.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub f: Array2<f64>,
    pub sigma: Array1<f64>,
    pub epsilon: f64,
    pub truncation: f64,
}

impl FactorModel {
    pub fn n_assets(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.f.ncols()
    }

    /// The rank-`k` covariance the model represents.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.f * &self.sigma;
        scaled.dot(&self.f.t())
    }
}

/// Fits a `k`-factor model to a covariance matrix by keeping the dominant
/// eigenpairs. Eigenvector signs follow a fixed convention (largest-magnitude
/// component positive), so refitting the same matrix is bit-reproducible.
pub fn fit_factors(q: &Array2<f64>, k: usize, epsilon: f64) -> Result<FactorModel> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} covariance"),
            actual: format!("{}x{}", q.nrows(), q.ncols()),
            context: "factor fit".into(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "factor count {k} must lie in 1..={n}"
        )));
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "factor weight floor must be positive, got {epsilon}"
        )));
    }
    let (vals, vecs) = symmetric_eigen(&q.view());
    let mut sigma = Array1::zeros(k);
    let mut f = Array2::zeros((n, k));
    for j in 0..k {
        sigma[j] = vals[j].max(0.0);
        f.column_mut(j).assign(&vecs.column(j));
    }
    let model = FactorModel {
        f,
        sigma,
        epsilon,
        truncation: 0.0,
    };
    let recon = model.reconstruct();
    let truncation = q
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(FactorModel { truncation, ..model })
}

/// Coordinates of an asset-space vector in factor space: `Fᵀ v`.
pub fn to_factor(model: &FactorModel, v: &Array1<f64>) -> Result<Array1<f64>> {
    if v.len() != model.n_assets() {
        return Err(Error::DimensionMismatch {
            expected: format!("length {}", model.n_assets()),
            actual: format!("length {}", v.len()),
            context: "factor projection".into(),
        });
    }
    Ok(model.f.t().dot(v))
}

/// Asset-space reconstruction of a factor-space vector: `F v_f`.
pub fn from_factor(model: &FactorModel, v_f: &Array1<f64>) -> Result<Array1<f64>> {
    if v_f.len() != model.n_factors() {
        return Err(Error::DimensionMismatch {
            expected: format!("length {}", model.n_factors()),
            actual: format!("length {}", v_f.len()),
            context: "factor reconstruction".into(),
        });
    }
    Ok(model.f.dot(v_f))
}

/// Factor-space moments: the diagonal factor covariance and the projected
/// mean return `Fᵀ c`.
pub fn factor_moments(
    model: &FactorModel,
    c: &Array1<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let c_f = to_factor(model, c)?;
    Ok((Array2::from_diag(&model.sigma), c_f))
}

/// Long-only budget constraints expressed on factor coordinates: every
/// reconstructed asset weight stays in `[epsilon, 1]` and the reconstructed
/// weights sum to one. Rows come in the order lower bounds, upper bounds,
/// budget, negated budget, so the complementary big-M pairs line up the same
/// way as in asset space.
pub fn factor_constraints(model: &FactorModel) -> ConstraintSet {
    let n = model.n_assets();
    let k = model.n_factors();
    let mut a = Array2::zeros((2 * n + 2, k));
    let mut b = Array1::zeros(2 * n + 2);
    for i in 0..n {
        for j in 0..k {
            a[[i, j]] = model.f[[i, j]];
            a[[n + i, j]] = -model.f[[i, j]];
        }
        b[i] = model.epsilon;
        b[n + i] = -1.0;
    }
    for j in 0..k {
        let s: f64 = model.f.column(j).sum();
        a[[2 * n, j]] = s;
        a[[2 * n + 1, j]] = -s;
    }
    b[2 * n] = 1.0;
    b[2 * n + 1] = -1.0;
    ConstraintSet::factor_dense(a, b, model.epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_po;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2, array};

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn two_sector_map() -> SectorMap {
        SectorMap::new([
            ("AA", "Energy"),
            ("BB", "Energy"),
            ("CC", "Utilities"),
        ])
        .unwrap()
    }

    #[test]
    fn standard_sector_order_is_fixed() {
        assert_eq!(STANDARD_SECTORS.len(), 11);
        assert_eq!(STANDARD_SECTORS[0], "Basic Materials");
        assert_eq!(STANDARD_SECTORS[10], "Utilities");
        let map = SectorMap::new([("AA", "Technology")]).unwrap();
        assert_eq!(map.n_sectors(), 11);
        assert_eq!(map.sectors()[9], "Technology");
    }

    #[test]
    fn weighted_sector_return_matches_hand_value() {
        let map = SectorMap::new([("AA", "Technology"), ("BB", "Technology")]).unwrap();
        let series = PortfolioSeries::new(
            vec![d("2020-01-31")],
            vec!["AA".into(), "BB".into()],
            arr2(&[[0.6, 0.4]]),
        )
        .unwrap();
        let panel = ReturnPanel::new(
            vec![d("2020-01-31")],
            vec!["AA".into(), "BB".into()],
            arr2(&[[0.10, 0.20]]),
        )
        .unwrap();
        let s = sector_returns(&series, &panel, &map).unwrap();
        let tech = 9;
        assert_abs_diff_eq!(s.returns[[0, tech]], 0.14, epsilon = 1e-15);
        for (i, label) in map.sectors().iter().enumerate() {
            if label != "Technology" {
                assert_eq!(s.returns[[0, i]], 0.0);
            }
        }
    }

    #[test]
    fn one_sector_portfolio_aggregates_to_one_hot() {
        let map = SectorMap::new([("AA", "Healthcare"), ("BB", "Healthcare")]).unwrap();
        let series = PortfolioSeries::new(
            vec![d("2020-01-31")],
            vec!["AA".into(), "BB".into()],
            arr2(&[[0.3, 0.7]]),
        )
        .unwrap();
        let agg = sector_holdings(&series, &map).unwrap();
        let mut expected = Array1::zeros(11);
        expected[6] = 1.0;
        assert_abs_diff_eq!(agg.holdings.row(0).to_owned(), expected, epsilon = 1e-15);
    }

    #[test]
    fn reported_fund_column_aggregates_exactly() {
        // Eleven sector weights of a large index fund as publicly reported
        // (percent, renormalized to a full budget), with the technology
        // sleeve split across two tickers to exercise multi-asset sums.
        let reported = [
            2.0585, 10.6418, 9.5455, 8.0814, 2.6315, 13.8400, 15.1290, 8.0863, 2.9809, 21.4863,
            3.5461,
        ];
        let total: f64 = reported.iter().sum();
        let mut tickers = Vec::new();
        let mut weights = Vec::new();
        let mut assignments = Vec::new();
        for (i, (&w, &label)) in reported.iter().zip(STANDARD_SECTORS.iter()).enumerate() {
            if label == "Technology" {
                tickers.push(format!("T{i}A"));
                tickers.push(format!("T{i}B"));
                weights.push(0.6 * w / total);
                weights.push(0.4 * w / total);
                assignments.push((format!("T{i}A"), label));
                assignments.push((format!("T{i}B"), label));
            } else {
                tickers.push(format!("T{i}"));
                weights.push(w / total);
                assignments.push((format!("T{i}"), label));
            }
        }
        let map = SectorMap::new(assignments).unwrap();
        let series = PortfolioSeries::new(
            vec![d("2020-03-31")],
            tickers,
            Array2::from_shape_vec((1, weights.len()), weights).unwrap(),
        )
        .unwrap();
        let agg = sector_holdings(&series, &map).unwrap();
        for (i, &w) in reported.iter().enumerate() {
            assert_abs_diff_eq!(agg.holdings[[0, i]], w / total, epsilon = 1e-12);
        }
    }

    #[test]
    fn dropped_sector_carries_previous_weights_then_equal_before_history() {
        let map = two_sector_map();
        let series = PortfolioSeries::new(
            vec![d("2020-01-10"), d("2020-01-20")],
            vec!["AA".into(), "BB".into(), "CC".into()],
            arr2(&[[0.5, 0.25, 0.25], [0.0, 0.0, 1.0]]),
        )
        .unwrap();
        let panel = ReturnPanel::new(
            vec![d("2020-01-05"), d("2020-01-10"), d("2020-01-20")],
            vec!["AA".into(), "BB".into(), "CC".into()],
            arr2(&[[0.30, 0.00, 0.05], [0.12, 0.06, 0.02], [0.09, 0.03, 0.01]]),
        )
        .unwrap();
        let s = sector_returns(&series, &panel, &map).unwrap();
        let energy = 4;
        let utilities = 10;
        // Before any observation the two energy members weigh equally.
        assert_abs_diff_eq!(s.returns[[0, energy]], 0.15, epsilon = 1e-15);
        // First observation renormalizes (0.5, 0.25) to (2/3, 1/3).
        assert_abs_diff_eq!(
            s.returns[[1, energy]],
            (2.0 / 3.0) * 0.12 + (1.0 / 3.0) * 0.06,
            epsilon = 1e-15
        );
        // Energy drops to zero weight; its last within-sector mix carries.
        assert_abs_diff_eq!(
            s.returns[[2, energy]],
            (2.0 / 3.0) * 0.09 + (1.0 / 3.0) * 0.03,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(s.returns[[2, utilities]], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn unclassified_ticker_is_reported() {
        let map = SectorMap::new([("AA", "Energy")]).unwrap();
        let series = PortfolioSeries::new(
            vec![d("2020-01-10")],
            vec!["AA".into(), "ZZZ".into()],
            arr2(&[[0.5, 0.5]]),
        )
        .unwrap();
        match sector_holdings(&series, &map) {
            Err(Error::UnresolvedTickers(t)) => assert_eq!(t, vec!["ZZZ".to_string()]),
            other => panic!("expected unresolved tickers, got {other:?}"),
        }
    }

    #[test]
    fn to_sector_bundles_holdings_and_moments() {
        let map = two_sector_map();
        let series = PortfolioSeries::new(
            vec![d("2020-01-10")],
            vec!["AA".into(), "BB".into(), "CC".into()],
            arr2(&[[0.5, 0.25, 0.25]]),
        )
        .unwrap();
        let panel = ReturnPanel::new(
            vec![d("2020-01-10"), d("2020-01-20"), d("2020-01-30")],
            vec!["AA".into(), "BB".into(), "CC".into()],
            arr2(&[[0.12, 0.06, 0.02], [0.06, 0.12, 0.04], [0.09, 0.09, 0.03]]),
        )
        .unwrap();
        let view = to_sector(&series, &panel, &map, d("2020-01-30"), 1).unwrap();
        assert_abs_diff_eq!(view.y[4], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(view.y[10], 0.25, epsilon = 1e-15);
        // Energy rows: 0.10, 0.08, 0.09 (two thirds / one third mix).
        let expect_mean = (0.10 + 0.08 + 0.09) / 3.0;
        assert_abs_diff_eq!(view.moments.c[4], expect_mean, epsilon = 1e-12);
        assert_eq!(view.moments.as_of, d("2020-01-30"));
        // Unpopulated sectors stay at weight zero with zero return history.
        assert_eq!(view.y[0], 0.0);
        assert_eq!(view.moments.c[0], 0.0);
        assert_eq!(view.moments.q[[0, 0]], 0.0);
    }

    #[test]
    fn to_sector_requires_an_observation() {
        let map = two_sector_map();
        let series = PortfolioSeries::new(
            vec![d("2020-02-10")],
            vec!["AA".into(), "BB".into(), "CC".into()],
            arr2(&[[0.5, 0.25, 0.25]]),
        )
        .unwrap();
        let panel = ReturnPanel::new(
            vec![d("2020-01-10"), d("2020-01-20")],
            vec!["AA".into(), "BB".into(), "CC".into()],
            arr2(&[[0.12, 0.06, 0.02], [0.06, 0.12, 0.04]]),
        )
        .unwrap();
        assert!(to_sector(&series, &panel, &map, d("2020-01-20"), 1).is_err());
    }

    #[test]
    fn sector_map_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("sectors.csv");
        std::fs::write(&good, "ticker,sector\nAA,Energy\nBB,Technology\n").unwrap();
        let map = SectorMap::from_csv(&good).unwrap();
        assert_eq!(map.sector_index("AA"), Some(4));
        assert_eq!(map.sector_index("BB"), Some(9));

        let dup = dir.path().join("dup.csv");
        std::fs::write(&dup, "ticker,sector\nAA,Energy\nAA,Energy\n").unwrap();
        assert!(SectorMap::from_csv(&dup).is_err());

        let unknown = dir.path().join("unknown.csv");
        std::fs::write(&unknown, "ticker,sector\nAA,Made Up\n").unwrap();
        assert!(SectorMap::from_csv(&unknown).is_err());
    }

    #[test]
    fn diagonal_covariance_keeps_leading_axes() {
        let q = Array2::from_diag(&arr1(&[3.0, 2.0, 1.0]));
        let model = fit_factors(&q, 2, 0.01).unwrap();
        assert_abs_diff_eq!(model.sigma, arr1(&[3.0, 2.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(
            model.f,
            arr2(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
            epsilon = 1e-12
        );
        // The discarded tail is exactly the unit eigenvalue.
        assert_abs_diff_eq!(model.truncation, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn full_rank_fit_reconstructs_and_is_orthonormal() {
        let g = arr2(&[
            [1.0, 0.3, -0.2, 0.5],
            [0.0, 1.2, 0.4, -0.1],
            [0.7, -0.3, 0.9, 0.2],
            [0.1, 0.6, -0.5, 1.1],
        ]);
        let q = g.dot(&g.t());
        let model = fit_factors(&q, 4, 0.01).unwrap();
        let recon = model.reconstruct();
        for (a, b) in q.iter().zip(recon.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(model.truncation <= 1e-10);
        let gram = model.f.t().dot(&model.f);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[[i, j]], expect, epsilon = 1e-10);
            }
        }
        for j in 0..3 {
            assert!(model.sigma[j] >= model.sigma[j + 1]);
        }
    }

    #[test]
    fn repeated_eigenvalues_give_a_unique_projection() {
        // The top eigenspace of diag(2, 2, 1) is two dimensional; any
        // orthonormal basis of it reconstructs the same rank-two matrix.
        let q = Array2::from_diag(&arr1(&[2.0, 2.0, 1.0]));
        let model = fit_factors(&q, 2, 0.01).unwrap();
        let recon = model.reconstruct();
        let expect = Array2::from_diag(&arr1(&[2.0, 2.0, 0.0]));
        for (a, b) in recon.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn factor_count_and_floor_are_validated() {
        let q = Array2::eye(3);
        assert!(fit_factors(&q, 4, 0.01).is_err());
        assert!(fit_factors(&q, 0, 0.01).is_err());
        assert!(fit_factors(&q, 2, 0.0).is_err());
        assert!(fit_factors(&q, 2, f64::NAN).is_err());
    }

    #[test]
    fn factor_round_trip_is_projection_onto_span() {
        let g = arr2(&[[1.0, 0.2, 0.1], [0.0, 0.8, 0.3], [0.4, -0.2, 1.1]]);
        let q = g.dot(&g.t());
        let v = arr1(&[0.5, 0.3, 0.2]);

        let full = fit_factors(&q, 3, 0.01).unwrap();
        let back = from_factor(&full, &to_factor(&full, &v).unwrap()).unwrap();
        assert_abs_diff_eq!(back, v, epsilon = 1e-10);

        // With k < n the round trip is the orthogonal projection, so
        // applying it twice changes nothing.
        let partial = fit_factors(&q, 2, 0.01).unwrap();
        let once = from_factor(&partial, &to_factor(&partial, &v).unwrap()).unwrap();
        let twice = from_factor(&partial, &to_factor(&partial, &once).unwrap()).unwrap();
        assert_abs_diff_eq!(once, twice, epsilon = 1e-12);
    }

    #[test]
    fn factor_constraint_block_layout() {
        let q = Array2::from_diag(&arr1(&[2.0, 1.0]));
        let model = fit_factors(&q, 2, 0.05).unwrap();
        let cons = factor_constraints(&model);
        assert_eq!(cons.m(), 6);
        assert_eq!(cons.n(), 2);
        // With an identity loading matrix the rows reduce to a plain box
        // plus the budget pair.
        let expect_a = arr2(&[
            [1.0, 0.0],
            [0.0, 1.0],
            [-1.0, 0.0],
            [0.0, -1.0],
            [1.0, 1.0],
            [-1.0, -1.0],
        ]);
        let expect_b = arr1(&[0.05, 0.05, -1.0, -1.0, 1.0, -1.0]);
        assert_abs_diff_eq!(cons.a, expect_a, epsilon = 1e-12);
        assert_abs_diff_eq!(cons.b, expect_b, epsilon = 1e-12);
        assert_eq!(cons.complementary_pairs(), vec![(0, 2), (1, 3)]);
        assert_eq!(cons.always_active_rows(), vec![4, 5]);
    }

    #[test]
    fn full_basis_factor_solve_matches_asset_solve() {
        let q = array![[1.0, 0.1, 0.0], [0.1, 1.0, 0.1], [0.0, 0.1, 1.0]];
        let c = arr1(&[0.30, 0.20, 0.10]);
        let r = 0.8;
        let asset = solve_po(&q.view(), &c.view(), r, &ConstraintSet::long_only_budget(3)).unwrap();
        // Interior optimum with every weight above the factor floor, so the
        // epsilon bound stays slack and the two problems coincide.
        assert!(asset.x.iter().all(|&w| w > 0.01));

        let model = fit_factors(&q, 3, 0.005).unwrap();
        let (q_f, c_f) = factor_moments(&model, &c).unwrap();
        let factor = solve_po(&q_f.view(), &c_f.view(), r, &factor_constraints(&model)).unwrap();
        let back = from_factor(&model, &factor.x).unwrap();
        assert_abs_diff_eq!(back, asset.x, epsilon = 1e-8);
        assert_abs_diff_eq!(factor.ret, asset.ret, epsilon = 1e-8);
        assert_abs_diff_eq!(factor.risk, asset.risk, epsilon = 1e-8);
    }

    #[test]
    fn factor_risk_matches_reconstructed_covariance() {
        let g = arr2(&[[1.0, 0.2, 0.1], [0.0, 0.8, 0.3], [0.4, -0.2, 1.1]]);
        let q = g.dot(&g.t());
        let model = fit_factors(&q, 2, 0.005).unwrap();
        let x_f = arr1(&[0.4, -0.1]);
        let factor_risk = 0.5 * x_f.dot(&Array2::from_diag(&model.sigma).dot(&x_f));
        let back = from_factor(&model, &x_f).unwrap();
        let recon_risk = 0.5 * back.dot(&model.reconstruct().dot(&back));
        assert_abs_diff_eq!(factor_risk, recon_risk, epsilon = 1e-10);
    }

    #[test]
    fn refitting_is_bit_reproducible() {
        let g = arr2(&[[1.0, 0.2], [0.3, 0.9]]);
        let q = g.dot(&g.t());
        let a = fit_factors(&q, 2, 0.01).unwrap();
        let b = fit_factors(&q, 2, 0.01).unwrap();
        assert!(a.f.iter().zip(b.f.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a
            .sigma
            .iter()
            .zip(b.sigma.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
