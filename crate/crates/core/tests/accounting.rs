use vix_signals::backtest::{fixed_action_backtest, prepare, BacktestConfig, Prepared};
use vix_signals::dynamics::EconomicParams;
use vix_signals::network::TrainConfig;
use vix_signals::signal::CostModel;
use vix_signals::synthetic::{generate_panel, FixtureSpec};
use vix_signals::utility::{Action, UtilitySpec};

fn setup(epsilon_bps: f64) -> (Prepared, BacktestConfig) {
    let panel = generate_panel(&FixtureSpec::bundled()).unwrap();
    let mut cfg = BacktestConfig::new(UtilitySpec::piecewise_linear(), TrainConfig::default(), 0);
    cfg.econ = EconomicParams::new(0.0, cfg.econ.dt).unwrap();
    cfg.costs = if epsilon_bps == 0.0 {
        CostModel::free()
    } else {
        CostModel::with_epsilon(epsilon_bps)
    };
    let prep = prepare(&panel, 5, &cfg.econ).unwrap();
    (prep, cfg)
}

fn daily_returns(p: &[f64]) -> Vec<f64> {
    p.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

#[test]
fn flat_book_without_costs_or_rates_keeps_its_value() {
    let (prep, cfg) = setup(0.0);
    for fold in 0..5 {
        let r =
            fixed_action_backtest(&prep, fold, Action::from_weights(0, 0).unwrap(), &cfg).unwrap();
        assert!(r.path.p.iter().all(|&p| p == r.path.p[0]));
        assert_eq!(r.metrics.profit_pct, 0.0);
        assert!(r.metrics.sharpe.is_nan());
    }
}

#[test]
fn opposite_spreads_earn_opposite_daily_returns() {
    let (prep, cfg) = setup(0.0);
    for fold in 0..5 {
        let long =
            fixed_action_backtest(&prep, fold, Action::from_weights(1, -1).unwrap(), &cfg).unwrap();
        let short =
            fixed_action_backtest(&prep, fold, Action::from_weights(-1, 1).unwrap(), &cfg).unwrap();
        for (a, b) in daily_returns(&long.path.p)
            .iter()
            .zip(daily_returns(&short.path.p))
        {
            assert!((a + b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn costs_only_ever_lower_the_path() {
    let (prep, free) = setup(0.0);
    let (_, costly) = setup(30.0);
    let action = Action::from_weights(-1, 2).unwrap();
    for fold in 0..5 {
        let a = fixed_action_backtest(&prep, fold, action, &free).unwrap();
        let b = fixed_action_backtest(&prep, fold, action, &costly).unwrap();
        assert!(b.path.costs.iter().all(|&c| c > 0.0));
        assert!(a.path.costs.iter().all(|&c| c == 0.0));
        assert!(b.path.p.last() < a.path.p.last());
    }
}
