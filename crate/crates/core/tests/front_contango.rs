//! On a panel where short front / long back is optimal every day, the
//! trained signal should learn to hold that spread.

use vix_signals::backtest::{fixed_action_backtest, prepare, run_fold, BacktestConfig};
use vix_signals::network::TrainConfig;
use vix_signals::synthetic::{generate_panel, FixtureKind, FixtureSpec};
use vix_signals::utility::{Action, UtilitySpec};

#[test]
fn trained_signal_holds_the_dominant_spread() {
    let spec = FixtureSpec {
        days: 1000,
        kind: FixtureKind::FrontContango,
        ..FixtureSpec::bundled()
    };
    let panel = generate_panel(&spec).unwrap();
    let train = TrainConfig {
        n_states: 10_000,
        m_inner: 100,
        epochs: 5,
        ..TrainConfig::default()
    };
    let cfg = BacktestConfig::new(UtilitySpec::piecewise_linear(), train, 1);
    let prep = prepare(&panel, 5, &cfg.econ).unwrap();
    let (result, _) = run_fold(&prep, 2, &cfg).unwrap();

    let spread = Action { a1: -1, a5: 1 };
    let days = result.path.actions.len();
    let held = result.path.actions.iter().filter(|a| **a == spread).count();
    assert!(held as f64 >= 0.95 * days as f64, "{held}/{days}");

    let fixed = fixed_action_backtest(&prep, 2, spread, &cfg).unwrap();
    let flat = fixed_action_backtest(&prep, 2, Action { a1: 0, a5: 0 }, &cfg).unwrap();
    assert!(fixed.metrics.annualized_excess > 0.0);
    assert!(result.metrics.annualized_excess > flat.metrics.annualized_excess);
    assert!(
        result.metrics.sharpe > 0.5 * fixed.metrics.sharpe,
        "{} vs {}",
        result.metrics.sharpe,
        fixed.metrics.sharpe
    );
}
