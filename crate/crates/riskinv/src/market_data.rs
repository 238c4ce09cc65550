//! Price/portfolio ingestion, rolling annual returns, time-series alignment,
//! and per-observation market moments `(Q_t, c_t)`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

/// Longest run of missing trading days an asset may forward-fill over.
pub const MAX_FILL_DAYS: usize = 5;

/// Column names for a price CSV. Defaults match `date,ticker,open,close`.
#[derive(Debug, Clone)]
pub struct PriceSchema {
    pub date: String,
    pub ticker: String,
    pub open: String,
    pub close: String,
}

impl Default for PriceSchema {
    fn default() -> Self {
        PriceSchema {
            date: "date".into(),
            ticker: "ticker".into(),
            open: "open".into(),
            close: "close".into(),
        }
    }
}

/// Column names for a portfolio-holdings CSV.
#[derive(Debug, Clone)]
pub struct PortfolioSchema {
    pub date: String,
    pub ticker: String,
    pub weight: String,
}

impl Default for PortfolioSchema {
    fn default() -> Self {
        PortfolioSchema {
            date: "date".into(),
            ticker: "ticker".into(),
            weight: "weight".into(),
        }
    }
}

/// Dated open/close prices on a union trading calendar.
///
/// `observed[[t, j]]` is true only where the input file carried a real row;
/// cells bridged by forward-fill hold values but stay flagged false. Cells
/// before an asset's first observation hold NaN.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub open: Array2<f64>,
    pub close: Array2<f64>,
    pub observed: Array2<bool>,
}

impl PricePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        open: Array2<f64>,
        close: Array2<f64>,
        observed: Array2<bool>,
    ) -> Result<Self> {
        let (d, n) = (dates.len(), tickers.len());
        for m in [&open, &close] {
            if m.nrows() != d || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("{d}x{n} price matrix"),
                    actual: format!("{}x{}", m.nrows(), m.ncols()),
                    context: "price panel".into(),
                });
            }
        }
        if observed.nrows() != d || observed.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{d}x{n} observation mask"),
                actual: format!("{}x{}", observed.nrows(), observed.ncols()),
                context: "price panel".into(),
            });
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "price panel dates must be strictly increasing".into(),
            ));
        }
        for t in 0..d {
            for j in 0..n {
                let (o, c) = (open[[t, j]], close[[t, j]]);
                if o.is_nan() != c.is_nan() {
                    return Err(Error::InvalidInput(format!(
                        "open/close presence differs for {} on {}",
                        tickers[j], dates[t]
                    )));
                }
                if !o.is_nan() && (o <= 0.0 || c <= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "non-positive price for {} on {}",
                        tickers[j], dates[t]
                    )));
                }
            }
        }
        Ok(PricePanel {
            dates,
            tickers,
            open,
            close,
            observed,
        })
    }

    /// True where a usable (observed or filled) value exists.
    pub fn usable(&self, t: usize, j: usize) -> bool {
        !self.open[[t, j]].is_nan()
    }

    /// Indices of the last trading day in each calendar month, ascending.
    pub fn monthly_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for t in 0..self.dates.len() {
            let last_of_month = match self.dates.get(t + 1) {
                Some(next) => {
                    next.year() != self.dates[t].year() || next.month() != self.dates[t].month()
                }
                None => true,
            };
            if last_of_month {
                out.push(t);
            }
        }
        out
    }

    /// Panel restricted to the given date indices (ascending).
    pub fn select_dates(&self, indices: &[usize]) -> Result<PricePanel> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "date indices must be strictly increasing".into(),
            ));
        }
        if indices.iter().any(|&i| i >= self.dates.len()) {
            return Err(Error::InvalidInput("date index out of range".into()));
        }
        let d = indices.len();
        let n = self.tickers.len();
        let mut open = Array2::from_elem((d, n), f64::NAN);
        let mut close = Array2::from_elem((d, n), f64::NAN);
        let mut observed = Array2::from_elem((d, n), false);
        for (row, &t) in indices.iter().enumerate() {
            open.row_mut(row).assign(&self.open.row(t));
            close.row_mut(row).assign(&self.close.row(t));
            for j in 0..n {
                observed[[row, j]] = self.observed[[t, j]];
            }
        }
        PricePanel::new(
            indices.iter().map(|&t| self.dates[t]).collect(),
            self.tickers.clone(),
            open,
            close,
            observed,
        )
    }
}

/// Annualized simple returns derived from a price panel by a rolling window.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: Array2<f64>,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: Array2<f64>) -> Result<Self> {
        if returns.nrows() != dates.len() || returns.ncols() != tickers.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} return matrix", dates.len(), tickers.len()),
                actual: format!("{}x{}", returns.nrows(), returns.ncols()),
                context: "return panel".into(),
            });
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "return panel dates must be strictly increasing".into(),
            ));
        }
        if returns.iter().any(|&r| !(r > -1.0) || !r.is_finite()) {
            return Err(Error::InvalidInput(
                "returns must be finite and greater than -1".into(),
            ));
        }
        Ok(ReturnPanel {
            dates,
            tickers,
            returns,
        })
    }

    /// Panel with columns permuted/subset to `cols`.
    pub fn select_columns(&self, cols: &[usize]) -> Result<ReturnPanel> {
        if cols.iter().any(|&j| j >= self.tickers.len()) {
            return Err(Error::InvalidInput("column index out of range".into()));
        }
        let mut returns = Array2::zeros((self.dates.len(), cols.len()));
        for (k, &j) in cols.iter().enumerate() {
            returns.column_mut(k).assign(&self.returns.column(j));
        }
        ReturnPanel::new(
            self.dates.clone(),
            cols.iter().map(|&j| self.tickers[j].clone()).collect(),
            returns,
        )
    }
}

/// Observed portfolio weights at a sequence of observation dates.
#[derive(Debug, Clone)]
pub struct PortfolioSeries {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub holdings: Array2<f64>,
}

impl PortfolioSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        holdings: Array2<f64>,
    ) -> Result<Self> {
        if holdings.nrows() != dates.len() || holdings.ncols() != tickers.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} holdings matrix", dates.len(), tickers.len()),
                actual: format!("{}x{}", holdings.nrows(), holdings.ncols()),
                context: "portfolio series".into(),
            });
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "portfolio dates must be strictly increasing".into(),
            ));
        }
        for (t, row) in holdings.rows().into_iter().enumerate() {
            if row.iter().any(|&w| w < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "negative weight in portfolio row for {}",
                    dates[t]
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "portfolio weights for {} sum to {sum}, expected 1",
                    dates[t]
                )));
            }
        }
        Ok(PortfolioSeries {
            dates,
            tickers,
            holdings,
        })
    }
}

/// Overlap bookkeeping between a portfolio series and a return panel:
/// observation dates, index maps into each series, the learning window, and
/// the reconciled asset ordering (portfolio order, with the matching return
/// panel column per ticker).
#[derive(Debug, Clone)]
pub struct AlignedDataset {
    pub observation_times: Vec<NaiveDate>,
    pub portfolio_index_of: BTreeMap<NaiveDate, usize>,
    pub price_index_of: BTreeMap<NaiveDate, usize>,
    pub learn_start: NaiveDate,
    pub learn_end: NaiveDate,
    pub tickers: Vec<String>,
    pub price_columns: Vec<usize>,
}

/// Covariance matrix and mean return vector over one lookback window.
#[derive(Debug, Clone)]
pub struct MarketMoments {
    pub q: Array2<f64>,
    pub c: Array1<f64>,
    pub as_of: NaiveDate,
    pub lookback_offset: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: &csv::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        reason: format!("{e}"),
    }
}

struct CsvTable {
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_err(path, io),
            other => Error::Parse {
                path: path.display().to_string(),
                line: 0,
                reason: format!("{other:?}"),
            },
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(path, &e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, &e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(CsvTable { headers, rows })
}

impl CsvTable {
    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            reason: format!("missing column `{name}` (found {:?})", self.headers),
        })
    }
}

fn parse_date(path: &Path, line: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("bad ISO-8601 date `{s}`"),
    })
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("bad numeric value `{s}` in column `{field}`"),
    })
}

fn field<'a>(path: &Path, line: usize, record: &'a csv::StringRecord, col: usize) -> Result<&'a str> {
    record.get(col).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("row has no column index {col}"),
    })
}

/// Reads a long-format price CSV into a panel on the union calendar.
/// Interior and trailing gaps of at most [`MAX_FILL_DAYS`] trading days are
/// forward-filled per asset; longer gaps fail hard. Dates before an asset's
/// first row stay missing.
pub fn load_prices(path: &Path, schema: &PriceSchema) -> Result<PricePanel> {
    let table = read_csv(path)?;
    let date_col = table.column(path, &schema.date)?;
    let ticker_col = table.column(path, &schema.ticker)?;
    let open_col = table.column(path, &schema.open)?;
    let close_col = table.column(path, &schema.close)?;

    let mut cells: BTreeMap<(NaiveDate, String), (f64, f64)> = BTreeMap::new();
    let mut dates: HashSet<NaiveDate> = HashSet::new();
    let mut tickers: HashSet<String> = HashSet::new();
    for (line, record) in &table.rows {
        let line = *line;
        let date = parse_date(path, line, field(path, line, record, date_col)?)?;
        let ticker = field(path, line, record, ticker_col)?.to_owned();
        let open = parse_f64(path, line, &schema.open, field(path, line, record, open_col)?)?;
        let close = parse_f64(path, line, &schema.close, field(path, line, record, close_col)?)?;
        if open <= 0.0 || close <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "non-positive price for {ticker} on {date} ({}:{line})",
                path.display()
            )));
        }
        if cells.insert((date, ticker.clone()), (open, close)).is_some() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                reason: format!("duplicate (date, ticker) row: {date}, {ticker}"),
            });
        }
        dates.insert(date);
        tickers.insert(ticker);
    }
    if cells.is_empty() {
        return Err(Error::InvalidInput(format!(
            "price file {} contains no data rows",
            path.display()
        )));
    }

    let mut dates: Vec<NaiveDate> = dates.into_iter().collect();
    dates.sort_unstable();
    let mut tickers: Vec<String> = tickers.into_iter().collect();
    tickers.sort_unstable();
    let (d, n) = (dates.len(), tickers.len());

    let mut open = Array2::from_elem((d, n), f64::NAN);
    let mut close = Array2::from_elem((d, n), f64::NAN);
    let mut observed = Array2::from_elem((d, n), false);
    for (t, date) in dates.iter().enumerate() {
        for (j, ticker) in tickers.iter().enumerate() {
            if let Some(&(o, c)) = cells.get(&(*date, ticker.clone())) {
                open[[t, j]] = o;
                close[[t, j]] = c;
                observed[[t, j]] = true;
            }
        }
    }

    // Forward-fill short gaps after each asset's first observation.
    for j in 0..n {
        let first = (0..d).find(|&t| observed[[t, j]]);
        let first = match first {
            Some(t) => t,
            None => continue,
        };
        let mut t = first + 1;
        while t < d {
            if observed[[t, j]] {
                t += 1;
                continue;
            }
            let run_start = t;
            while t < d && !observed[[t, j]] {
                t += 1;
            }
            let gap = t - run_start;
            if gap > MAX_FILL_DAYS {
                return Err(Error::PriceGap {
                    ticker: tickers[j].clone(),
                    date: dates[t.min(d) - 1],
                    gap,
                    limit: MAX_FILL_DAYS,
                });
            }
            for k in run_start..run_start + gap {
                open[[k, j]] = open[[run_start - 1, j]];
                close[[k, j]] = close[[run_start - 1, j]];
            }
        }
    }

    PricePanel::new(dates, tickers, open, close, observed)
}

/// Reads a long-format holdings CSV `(date, ticker, weight)`. Tickers absent
/// on a date get weight zero; every row of the resulting matrix must sum
/// to 1.
pub fn load_portfolios(path: &Path, schema: &PortfolioSchema) -> Result<PortfolioSeries> {
    let table = read_csv(path)?;
    let date_col = table.column(path, &schema.date)?;
    let ticker_col = table.column(path, &schema.ticker)?;
    let weight_col = table.column(path, &schema.weight)?;

    let mut cells: BTreeMap<(NaiveDate, String), f64> = BTreeMap::new();
    let mut dates: HashSet<NaiveDate> = HashSet::new();
    let mut tickers: HashSet<String> = HashSet::new();
    for (line, record) in &table.rows {
        let line = *line;
        let date = parse_date(path, line, field(path, line, record, date_col)?)?;
        let ticker = field(path, line, record, ticker_col)?.to_owned();
        let weight = parse_f64(path, line, &schema.weight, field(path, line, record, weight_col)?)?;
        if weight < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative weight {weight} for {ticker} on {date} ({}:{line})",
                path.display()
            )));
        }
        if cells.insert((date, ticker.clone()), weight).is_some() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                reason: format!("duplicate (date, ticker) row: {date}, {ticker}"),
            });
        }
        dates.insert(date);
        tickers.insert(ticker);
    }
    if cells.is_empty() {
        return Err(Error::InvalidInput(format!(
            "portfolio file {} contains no data rows",
            path.display()
        )));
    }

    let mut dates: Vec<NaiveDate> = dates.into_iter().collect();
    dates.sort_unstable();
    let mut tickers: Vec<String> = tickers.into_iter().collect();
    tickers.sort_unstable();
    let mut holdings = Array2::zeros((dates.len(), tickers.len()));
    for (t, date) in dates.iter().enumerate() {
        for (j, ticker) in tickers.iter().enumerate() {
            if let Some(&w) = cells.get(&(*date, ticker.clone())) {
                holdings[[t, j]] = w;
            }
        }
    }
    PortfolioSeries::new(dates, tickers, holdings)
}

/// `return[t] = (close[t] − open[t−window+1]) / open[t−window+1]` per asset.
/// Every asset must have usable prices across the whole panel.
pub fn rolling_annual_returns(panel: &PricePanel, window: usize) -> Result<ReturnPanel> {
    if window < 2 {
        return Err(Error::InvalidInput(
            "rolling window must be at least 2 trading days".into(),
        ));
    }
    let d = panel.dates.len();
    let n = panel.tickers.len();
    if d < window {
        return Err(Error::InsufficientHistory(format!(
            "need at least {window} trading days, panel has {d}"
        )));
    }
    for j in 0..n {
        if let Some(t) = (0..d).find(|&t| !panel.usable(t, j)) {
            return Err(Error::InsufficientHistory(format!(
                "no usable price for {} on {}; rolling returns need full coverage",
                panel.tickers[j], panel.dates[t]
            )));
        }
    }
    let rows = d - window + 1;
    let mut returns = Array2::zeros((rows, n));
    for t in 0..rows {
        for j in 0..n {
            let base = panel.open[[t, j]];
            returns[[t, j]] = (panel.close[[t + window - 1, j]] - base) / base;
        }
    }
    ReturnPanel::new(panel.dates[window - 1..].to_vec(), panel.tickers.clone(), returns)
}

/// Builds the index maps tying portfolio observations to return-panel rows
/// over the learning window `[t_s, t_e]`. Observation dates resolve to the
/// most recent return-panel row at or before them.
pub fn align(
    y: &PortfolioSeries,
    p: &ReturnPanel,
    t_s: NaiveDate,
    t_e: NaiveDate,
) -> Result<AlignedDataset> {
    if t_s > t_e {
        return Err(Error::InvalidInput(format!(
            "learn window start {t_s} is after end {t_e}"
        )));
    }
    let first_y = *y.dates.first().expect("portfolio series is non-empty");
    if t_s < first_y {
        return Err(Error::InvalidInput(format!(
            "learn start {t_s} precedes first portfolio observation {first_y}"
        )));
    }
    let last_common = (*y.dates.last().unwrap()).min(*p.dates.last().unwrap());
    if t_e > last_common {
        return Err(Error::InvalidInput(format!(
            "learn end {t_e} exceeds last common date {last_common}"
        )));
    }

    let missing: Vec<String> = y
        .tickers
        .iter()
        .filter(|t| !p.tickers.contains(t))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnresolvedTickers(missing));
    }
    let price_columns: Vec<usize> = y
        .tickers
        .iter()
        .map(|t| p.tickers.iter().position(|pt| pt == t).unwrap())
        .collect();

    let mut observation_times = Vec::new();
    let mut portfolio_index_of = BTreeMap::new();
    let mut price_index_of = BTreeMap::new();
    for (i, &date) in y.dates.iter().enumerate() {
        if date < t_s || date > t_e {
            continue;
        }
        let price_idx = match p.dates.partition_point(|&d| d <= date) {
            0 => {
                return Err(Error::InsufficientHistory(format!(
                    "no return history at or before observation {date}"
                )))
            }
            k => k - 1,
        };
        observation_times.push(date);
        portfolio_index_of.insert(date, i);
        price_index_of.insert(date, price_idx);
    }
    if observation_times.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no portfolio observations inside [{t_s}, {t_e}]"
        )));
    }
    Ok(AlignedDataset {
        observation_times,
        portfolio_index_of,
        price_index_of,
        learn_start: t_s,
        learn_end: t_e,
        tickers: y.tickers.clone(),
        price_columns,
    })
}

/// Sample moments of the return rows `lookback_offset-1 ..= row(as_of)`
/// (1-based offset, so `lookback_offset = 1` uses the whole history).
/// The covariance uses divisor `count − 1` and is clamped to the PSD cone.
pub fn moments(p: &ReturnPanel, as_of: NaiveDate, lookback_offset: usize) -> Result<MarketMoments> {
    if lookback_offset == 0 {
        return Err(Error::InvalidInput("lookback offset is 1-based".into()));
    }
    let t = match p.dates.partition_point(|&d| d <= as_of) {
        0 => {
            return Err(Error::InsufficientHistory(format!(
                "no return rows at or before {as_of}"
            )))
        }
        k => k - 1,
    };
    let start = lookback_offset - 1;
    if start + 1 > t {
        return Err(Error::InsufficientHistory(format!(
            "window [{lookback_offset}, {}] holds fewer than 2 return rows",
            t + 1
        )));
    }
    let rows = p.returns.slice(s![start..=t, ..]);
    let count = rows.nrows();
    let n = rows.ncols();
    let c: Array1<f64> = rows.mean_axis(ndarray::Axis(0)).expect("count >= 2");
    let mut q = Array2::zeros((n, n));
    for row in rows.rows() {
        let dev = &row - &c;
        for i in 0..n {
            for j in i..n {
                q[[i, j]] += dev[i] * dev[j];
            }
        }
    }
    let denom = (count - 1) as f64;
    for i in 0..n {
        for j in i..n {
            q[[i, j]] /= denom;
            q[[j, i]] = q[[i, j]];
        }
    }
    let (q, _min_eig) = linalg::clamp_psd(&q.view());
    Ok(MarketMoments {
        q,
        c,
        as_of: p.dates[t],
        lookback_offset,
    })
}
