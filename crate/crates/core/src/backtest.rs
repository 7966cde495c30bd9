//! k-fold out-of-sample evaluation and portfolio metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{
    build_curves, estimate_mode, state_vectors, CurveSeries, StateSeries, MODE_MIN_SAMPLES,
    TRADING_DAYS,
};
use crate::dynamics::{center_states, fit_var, stream_rng, CurveReturns, EconomicParams, VarModel};
use crate::error::{Error, Result};
use crate::ingest::FuturesPanel;
use crate::network::{build_training_set, train, InputNorm, OutputNorm, QNetwork, TrainConfig};
use crate::signal::{policy, run_path, CostModel, PortfolioPath};
use crate::utility::{Action, UtilitySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldConfiguration {
    /// Train on every fold but the test fold.
    Contiguous,
    /// Also leave out the test fold's neighbours, wrapping around the ends.
    NonAdjacent,
}

impl FromStr for FoldConfiguration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "contiguous" => Ok(FoldConfiguration::Contiguous),
            "non-adjacent" | "nonadjacent" => Ok(FoldConfiguration::NonAdjacent),
            other => Err(Error::Config(format!(
                "unknown fold configuration {other:?}"
            ))),
        }
    }
}

impl fmt::Display for FoldConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldConfiguration::Contiguous => "contiguous",
            FoldConfiguration::NonAdjacent => "non-adjacent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Row ranges into the sample, in date order.
    pub folds: Vec<Range<usize>>,
    /// First and last date of each fold.
    pub bounds: Vec<(NaiveDate, NaiveDate)>,
}

impl FoldPlan {
    pub fn fold_of(&self, row: usize) -> Option<usize> {
        self.folds.iter().position(|f| f.contains(&row))
    }
}

/// `k` contiguous folds whose sizes differ by at most one, the longer folds first.
pub fn make_folds(dates: &[NaiveDate], k: usize) -> Result<FoldPlan> {
    if k == 0 || dates.len() < k {
        return Err(Error::TooFewDates {
            needed: k.max(1),
            got: dates.len(),
            k,
        });
    }
    let base = dates.len() / k;
    let extra = dates.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(start..start + len);
        start += len;
    }
    let bounds = folds
        .iter()
        .map(|r| (dates[r.start], dates[r.end - 1]))
        .collect();
    Ok(FoldPlan { k, folds, bounds })
}

/// Fold indices used for training when `test` is held out.
pub fn training_folds(k: usize, test: usize, configuration: FoldConfiguration) -> Vec<usize> {
    let excluded: BTreeSet<usize> = match configuration {
        FoldConfiguration::Contiguous => [test].into(),
        FoldConfiguration::NonAdjacent if k >= 3 => {
            [(test + k - 1) % k, test, (test + 1) % k].into()
        }
        FoldConfiguration::NonAdjacent => [test].into(),
    };
    (0..k).filter(|f| !excluded.contains(f)).collect()
}

/// Training rows and the positions in that list after which the next row is
/// not the following sample date. Those junction transitions are excluded
/// from estimation.
pub fn training_transitions(
    plan: &FoldPlan,
    test: usize,
    configuration: FoldConfiguration,
) -> (Vec<usize>, BTreeSet<usize>) {
    let rows: Vec<usize> = training_folds(plan.k, test, configuration)
        .into_iter()
        .flat_map(|f| plan.folds[f].clone())
        .collect();
    let breaks = junctions(&rows);
    (rows, breaks)
}

fn junctions(rows: &[usize]) -> BTreeSet<usize> {
    rows.windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] != w[0] + 1)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Mean daily excess return × 252.
    pub mean_return: f64,
    /// Sample std of daily excess returns × √252.
    pub volatility: f64,
    /// Compounded annualised excess return.
    pub annualized_excess: f64,
    pub profit_pct: f64,
    /// NaN when the volatility is zero.
    pub sharpe: f64,
    pub max_drawdown: f64,
    /// Portfolio-unit P&L per day with a position change; NaN without trades.
    pub pnl_per_transaction: f64,
    pub days: usize,
    pub transactions: usize,
}

pub fn max_drawdown(p: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in p {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

/// Metrics of a series of daily excess returns.
pub fn metrics_from_returns(returns: &[f64], econ: &EconomicParams) -> Result<Metrics> {
    let t = returns.len();
    if t < 2 {
        return Err(Error::TooFewDates {
            needed: 3,
            got: t + 1,
            k: 1,
        });
    }
    let n = t as f64;
    let growth: f64 = returns.iter().map(|r| 1.0 + r).product();
    let annualized_excess = growth.powf(TRADING_DAYS / n) - (1.0 + econ.r);
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let volatility = var.sqrt() * TRADING_DAYS.sqrt();
    let sharpe = if volatility > 0.0 {
        annualized_excess / volatility
    } else {
        f64::NAN
    };
    let mut p = Vec::with_capacity(t + 1);
    p.push(1.0);
    for r in returns {
        p.push(p.last().unwrap() * (1.0 + r + econ.r * econ.dt));
    }
    Ok(Metrics {
        mean_return: mean * TRADING_DAYS,
        volatility,
        annualized_excess,
        profit_pct: 100.0 * (p[t] / p[0] - 1.0),
        sharpe,
        max_drawdown: max_drawdown(&p),
        pnl_per_transaction: f64::NAN,
        days: t,
        transactions: 0,
    })
}

pub fn compute_metrics(path: &PortfolioPath, econ: &EconomicParams) -> Result<Metrics> {
    let mut m = metrics_from_returns(&path.excess_returns(econ), econ)?;
    let p0 = path.p[0];
    let pt = *path.p.last().expect("non-empty path");
    m.profit_pct = 100.0 * (pt / p0 - 1.0);
    m.max_drawdown = max_drawdown(&path.p);
    m.transactions = path.transactions();
    m.pnl_per_transaction = if m.transactions > 0 {
        (pt - p0) / m.transactions as f64
    } else {
        f64::NAN
    };
    Ok(m)
}

/// Metrics of an external daily return series (`date,return`) restricted to
/// `fold` dates. Every date of the fold must be covered.
pub fn reference_series_metrics(
    returns_file: &Path,
    dates: &[NaiveDate],
    econ: &EconomicParams,
) -> Result<Metrics> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(returns_file)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(returns_file, std::io::Error::other(e.to_string())),
            _ => Error::from(e),
        })?;
    let mut series = std::collections::BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |reason: &str| Error::MalformedRow {
            file: returns_file.display().to_string(),
            line: line + 2,
            reason: reason.to_string(),
        };
        let date: NaiveDate = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad date"))?;
        let r: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad return"))?;
        series.insert(date, r);
    }
    let returns = dates
        .iter()
        .map(|d| {
            series
                .get(d)
                .copied()
                .ok_or(Error::DateCoverage { date: *d })
        })
        .collect::<Result<Vec<f64>>>()?;
    metrics_from_returns(&returns, econ)
}

/// Everything a fold run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub k: usize,
    pub configuration: FoldConfiguration,
    pub utility: UtilitySpec,
    pub train: TrainConfig,
    pub costs: CostModel,
    pub econ: EconomicParams,
    pub integer_contracts: bool,
    pub seed: u64,
    pub mode_min_samples: usize,
}

impl BacktestConfig {
    pub fn new(utility: UtilitySpec, train: TrainConfig, seed: u64) -> Self {
        BacktestConfig {
            k: 10,
            configuration: FoldConfiguration::Contiguous,
            utility,
            train,
            costs: CostModel::default(),
            econ: EconomicParams::default(),
            integer_contracts: false,
            seed,
            mode_min_samples: MODE_MIN_SAMPLES,
        }
    }
}

/// Seed for fold `fold`, independent of how many folds run.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    stream_rng(seed, 1_000 + fold as u64).gen()
}

/// The inputs shared by every fold.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub panel: FuturesPanel,
    pub curves: CurveSeries,
    pub states: StateSeries,
    pub plan: FoldPlan,
}

pub fn prepare(panel: &FuturesPanel, k: usize, econ: &EconomicParams) -> Result<Prepared> {
    let curves = build_curves(panel, econ.dt)?;
    let states = state_vectors(&curves)?;
    let plan = make_folds(&panel.dates, k)?;
    Ok(Prepared {
        panel: panel.clone(),
        curves,
        states,
        plan,
    })
}

/// Mode-centred VAR fitted on the training folds of `test`.
pub fn fit_fold_model(prep: &Prepared, test: usize, cfg: &BacktestConfig) -> Result<VarModel> {
    let (rows, _) = training_transitions(&prep.plan, test, cfg.configuration);
    let wanted: BTreeSet<usize> = rows.into_iter().collect();
    let mut used_rows = Vec::new();
    let mut states = Vec::new();
    for (row, x) in prep.states.rows.iter().zip(&prep.states.states) {
        if wanted.contains(row) {
            used_rows.push(*row);
            states.push(x.clone());
        }
    }
    let mode = estimate_mode(&states, cfg.mode_min_samples)?;
    let psi = center_states(&states, &mode)?;
    let fit = fit_var(&psi, &junctions(&used_rows))?;
    VarModel::from_fit(mode, fit)
}

/// Rows of the test fold that carry a state; the path trades all but the last.
pub fn test_rows(prep: &Prepared, test: usize) -> Range<usize> {
    let fold = prep.plan.folds[test].clone();
    let first = prep.states.rows.first().copied().unwrap_or(usize::MAX);
    fold.start.max(first)..fold.end
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub strategy: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub metrics: Metrics,
    pub path: PortfolioPath,
}

/// Out-of-sample run of the trained signal on one fold.
pub fn run_fold(
    prep: &Prepared,
    test: usize,
    cfg: &BacktestConfig,
) -> Result<(FoldResult, QNetwork)> {
    let seed = fold_seed(cfg.seed, test);
    let model = fit_fold_model(prep, test, cfg)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let set = build_training_set(
        &model,
        &CurveReturns(cfg.econ),
        &cfg.econ,
        &cfg.utility,
        &train_cfg,
    )?;
    let net = QNetwork::new(train_cfg.architecture.clone(), seed)?
        .with_input_norm(InputNorm::fit(&set.inputs))?
        .with_output_norm(OutputNorm::fit(&set.targets))?;
    let outcome = train(&net, &set, &train_cfg)?;
    log::info!("fold {test}: training loss {:.4e}", outcome.final_loss);
    let net = outcome.net;

    let row_state: std::collections::HashMap<usize, usize> = prep
        .states
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (*r, i))
        .collect();
    let decide = |t: usize| -> Result<Action> {
        let i = row_state[&t];
        policy(&net, &prep.states.states[i])
    };
    let rows = test_rows(prep, test);
    let path = run_path(
        &prep.panel,
        &prep.curves,
        rows,
        decide,
        &cfg.econ,
        &cfg.costs,
        cfg.integer_contracts,
    )?;
    let metrics = compute_metrics(&path, &cfg.econ)?;
    let (start, end) = prep.plan.bounds[test];
    Ok((
        FoldResult {
            fold: test,
            strategy: "signal".into(),
            start,
            end,
            metrics,
            path,
        },
        net,
    ))
}

/// The same accounting with one action held throughout the fold.
pub fn fixed_action_backtest(
    prep: &Prepared,
    test: usize,
    action: Action,
    cfg: &BacktestConfig,
) -> Result<FoldResult> {
    let rows = test_rows(prep, test);
    let path = run_path(
        &prep.panel,
        &prep.curves,
        rows,
        |_| Ok(action),
        &cfg.econ,
        &cfg.costs,
        cfg.integer_contracts,
    )?;
    let metrics = compute_metrics(&path, &cfg.econ)?;
    let (start, end) = prep.plan.bounds[test];
    Ok(FoldResult {
        fold: test,
        strategy: action.to_string(),
        start,
        end,
        metrics,
        path,
    })
}

/// Every fold, in parallel on the current rayon pool, merged in fold order.
pub fn run_all_folds(prep: &Prepared, cfg: &BacktestConfig) -> Result<Vec<FoldResult>> {
    (0..prep.plan.k)
        .into_par_iter()
        .map(|f| run_fold(prep, f, cfg).map(|(r, _)| r))
        .collect()
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.10}")
    }
}

pub const METRICS_HEADER: [&str; 13] = [
    "fold",
    "strategy",
    "start",
    "end",
    "mean_return",
    "volatility",
    "annualized_excess",
    "profit_pct",
    "sharpe",
    "max_drawdown",
    "pnl_per_transaction",
    "days",
    "transactions",
];

/// One row per fold and strategy.
pub fn write_metrics(results: &[FoldResult], path: &Path, comment: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(c) = comment {
        buf.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(METRICS_HEADER)?;
        for r in results {
            let m = &r.metrics;
            w.write_record([
                r.fold.to_string(),
                r.strategy.clone(),
                r.start.to_string(),
                r.end.to_string(),
                fmt_num(m.mean_return),
                fmt_num(m.volatility),
                fmt_num(m.annualized_excess),
                fmt_num(m.profit_pct),
                fmt_num(m.sharpe),
                fmt_num(m.max_drawdown),
                fmt_num(m.pnl_per_transaction),
                m.days.to_string(),
                m.transactions.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Every fold's portfolio path, stacked with fold and strategy columns.
pub fn write_paths(results: &[FoldResult], path: &Path, comment: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(c) = comment {
        buf.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "fold", "strategy", "date", "p", "action", "n1", "n2", "n5", "n6", "cost",
        ])?;
        for r in results {
            let p = &r.path;
            for t in 0..p.len() {
                let mut rec = vec![
                    r.fold.to_string(),
                    r.strategy.clone(),
                    p.dates[t].to_string(),
                    p.p[t].to_string(),
                ];
                match p.actions.get(t) {
                    Some(a) => {
                        rec.push(a.to_string());
                        rec.extend(p.positions[t].legs().iter().map(|v| v.to_string()));
                        rec.push(p.costs[t].to_string());
                    }
                    None => rec.extend(std::iter::repeat_n(String::new(), 6)),
                }
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::Duration;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let d0: NaiveDate = "2020-01-01".parse().unwrap();
        (0..n).map(|i| d0 + Duration::days(i as i64)).collect()
    }

    #[test]
    fn fold_sizes() {
        let plan = make_folds(&dates(10), 5).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 2));
        let plan = make_folds(&dates(11), 10).unwrap();
        assert_eq!(plan.folds[0].len(), 2);
        assert!(plan.folds[1..].iter().all(|f| f.len() == 1));
        let plan = make_folds(&dates(3165), 10).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes, [317, 317, 317, 317, 317, 316, 316, 316, 316, 316]);
        assert!(matches!(
            make_folds(&dates(3), 4),
            Err(Error::TooFewDates { .. })
        ));
    }

    #[test]
    fn folds_partition_the_sample() {
        for (n, k) in [(10, 3), (97, 10), (200, 10)] {
            let plan = make_folds(&dates(n), k).unwrap();
            let mut seen = vec![0; n];
            for f in &plan.folds {
                for r in f.clone() {
                    seen[r] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn training_configurations() {
        let plan = make_folds(&dates(100), 10).unwrap();
        let (rows, breaks) = training_transitions(&plan, 5, FoldConfiguration::Contiguous);
        assert_eq!(rows.len(), 90);
        // The only junction is fold 4 → fold 6.
        assert_eq!(breaks.into_iter().collect::<Vec<_>>(), vec![49]);
        assert_eq!(rows[49], 49);
        assert_eq!(rows[50], 60);

        let (rows, breaks) = training_transitions(&plan, 0, FoldConfiguration::Contiguous);
        assert_eq!(rows.first(), Some(&10));
        assert!(breaks.is_empty());

        assert_eq!(
            training_folds(10, 0, FoldConfiguration::NonAdjacent),
            (2..=8).collect::<Vec<_>>()
        );
        assert_eq!(
            training_folds(10, 1, FoldConfiguration::NonAdjacent),
            (3..=9).collect::<Vec<_>>()
        );
        assert_eq!(
            training_folds(10, 2, FoldConfiguration::NonAdjacent),
            vec![0, 4, 5, 6, 7, 8, 9]
        );
        let (_, breaks) = training_transitions(&plan, 2, FoldConfiguration::NonAdjacent);
        assert_eq!(breaks.len(), 1);
    }

    #[test]
    fn breaks_never_straddle_excluded_days() {
        let plan = make_folds(&dates(57), 7).unwrap();
        for cfg in [
            FoldConfiguration::Contiguous,
            FoldConfiguration::NonAdjacent,
        ] {
            for test in 0..7 {
                let (rows, breaks) = training_transitions(&plan, test, cfg);
                for j in 0..rows.len() - 1 {
                    if !breaks.contains(&j) {
                        assert_eq!(rows[j + 1], rows[j] + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn drawdown_examples() {
        assert_relative_eq!(
            max_drawdown(&[100.0, 110.0, 99.0, 120.0]),
            -0.1,
            epsilon = 1e-12
        );
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn metrics_match_the_oracle_script() {
        // tests/oracle/metrics_oracle.py
        let m = metrics_from_returns(&[0.01, -0.01], &EconomicParams::default()).unwrap();
        assert!((m.annualized_excess - -0.01252157450152347).abs() < 1e-9);
        assert!((m.volatility - 0.2244994432064367).abs() < 1e-9);
        assert!((m.sharpe - -0.055775525866268424).abs() < 1e-9);
        assert_eq!(m.mean_return, 0.0);
    }

    #[test]
    fn flat_returns_have_undefined_sharpe() {
        let m = metrics_from_returns(&[0.0; 20], &EconomicParams::default()).unwrap();
        assert!(m.sharpe.is_nan());
        assert_eq!(m.profit_pct, 0.0);
        assert_eq!(m.max_drawdown, 0.0);
        assert_eq!(m.volatility, 0.0);
    }

    #[test]
    fn prepending_flat_days_keeps_drawdown_and_daily_spread() {
        let econ = EconomicParams::default();
        let r = [0.02, -0.03, 0.01, 0.005, -0.012];
        let mut padded = vec![0.0; 4];
        padded.extend_from_slice(&r);
        let a = metrics_from_returns(&r, &econ).unwrap();
        let b = metrics_from_returns(&padded, &econ).unwrap();
        assert_relative_eq!(a.max_drawdown, b.max_drawdown, epsilon = 1e-15);
        assert_relative_eq!(a.profit_pct, b.profit_pct, epsilon = 1e-12);
    }

    #[test]
    fn reference_series_requires_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("spy.csv");
        std::fs::write(
            &file,
            "date,return\n2020-01-01,0.01\n2020-01-02,-0.01\n2020-01-03,0.0\n",
        )
        .unwrap();
        let d = dates(3);
        let econ = EconomicParams::default();
        let m = reference_series_metrics(&file, &d, &econ).unwrap();
        assert_eq!(
            format!("{m:?}"),
            format!("{:?}", reference_series_metrics(&file, &d, &econ).unwrap())
        );
        assert!(matches!(
            reference_series_metrics(&file, &dates(4), &econ),
            Err(Error::DateCoverage { .. })
        ));
    }

    #[test]
    fn fold_seeds_are_distinct() {
        let seeds: BTreeSet<u64> = (0..10).map(|f| fold_seed(7, f)).collect();
        assert_eq!(seeds.len(), 10);
        assert_eq!(fold_seed(7, 3), fold_seed(7, 3));
    }
}
