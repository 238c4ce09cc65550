use ndarray::Array2;
use riskinv::{align, learn_sequence, moments, solve_po, ConstraintSet, LearnInputs, LearnerConfig,
              PortfolioSeries, ReturnPanel, SectorMap, Space};
use chrono::NaiveDate;
use std::time::Instant;

fn d(s: &str) -> NaiveDate { s.parse().unwrap() }

#[test]
fn probe_sector_time() {
    let tickers = vec!["AA".to_string(), "BB".to_string()];
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    let start = d("2020-01-01");
    let mut day = 0u64;
    for b in 0..3usize {
        let a = 0.20 + 0.01 * b as f64;
        for (da, db) in [(a, 0.0), (-a, 0.0), (0.0, a), (0.0, -a)] {
            dates.push(start + chrono::Days::new(day));
            rows.push([0.012 + da, 0.008 + db]);
            day += 1;
        }
    }
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.to_vec()).collect();
    let returns = Array2::from_shape_vec((dates.len(), 2), flat).unwrap();
    let panel = ReturnPanel::new(dates.clone(), tickers.clone(), returns).unwrap();
    let mut obs_dates = Vec::new();
    let mut holdings = Vec::new();
    for b in 1..=2usize {
        let date = dates[4 * (b + 1) - 1];
        let m = moments(&panel, date, 1).unwrap();
        let sol = solve_po(&m.q.view(), &m.c.view(), 1.0, &ConstraintSet::long_only_budget(2)).unwrap();
        obs_dates.push(date);
        holdings.extend(sol.x.iter().copied());
    }
    let series = PortfolioSeries::new(obs_dates.clone(), tickers,
        Array2::from_shape_vec((2, 2), holdings).unwrap()).unwrap();
    let aligned = align(&series, &panel, obs_dates[0], *obs_dates.last().unwrap()).unwrap();

    let map = SectorMap::new([("AA", "Energy"), ("BB", "Utilities")]).unwrap();
    let inputs = LearnInputs { aligned: &aligned, portfolios: &series, returns: &panel, sector_map: Some(&map) };
    let mut cfg = LearnerConfig { r0: 1.0, lambda: 1e4, big_m: 1e3, epsilon: None, factors: 5, lookbacks: vec![1], space: Space::Sector };
    let t0 = Instant::now();
    let records = learn_sequence(&inputs, &cfg, 1).unwrap();
    eprintln!("learn_sequence(sector): {:?} records={}", t0.elapsed(), records.len());
    cfg.space = Space::Asset;
    let t1 = Instant::now();
    let _ = learn_sequence(&inputs, &cfg, 1).unwrap();
    eprintln!("learn_sequence(asset): {:?}", t1.elapsed());
}
