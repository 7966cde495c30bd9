//! Trading decisions, contract mapping and portfolio accounting.
//!
//! Positions are held per contract (keyed by expiry), so the daily rebalance
//! across a roll only pays for the net change in each listed contract.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::curve::{rolling_return_from_futures, CurveSeries, N_CMF};
use crate::dynamics::EconomicParams;
use crate::error::{Error, Result};
use crate::ingest::{FuturesPanel, N_CONTRACTS};
use crate::network::QNetwork;
use crate::utility::{trade_return, Action, ACTIONS, N_ACTIONS};
use crate::StateVector;

/// Q-values closer than this count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Index of the best action; near-ties go to `(0,0)`, then the lowest index.
pub fn argmax_action(q: &[f64]) -> Action {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best - q[0] <= TIE_TOLERANCE {
        return Action::FLAT;
    }
    let idx = q
        .iter()
        .position(|&v| best - v <= TIE_TOLERANCE)
        .expect("non-empty Q vector");
    ACTIONS[idx]
}

pub fn policy(net: &QNetwork, x: &StateVector) -> Result<Action> {
    let q = net.forward(x)?;
    if q.len() != N_ACTIONS {
        return Err(Error::DimensionMismatch {
            expected: N_ACTIONS,
            got: q.len(),
        });
    }
    Ok(argmax_action(q.as_slice()))
}

/// `P (1 + R(a) + rΔt)`.
pub fn portfolio_step(
    p: f64,
    action: Action,
    returns: &[f64; N_CMF],
    econ: &EconomicParams,
) -> Result<f64> {
    let next = p * (1.0 + trade_return(action, returns, econ) + econ.r * econ.dt);
    if next.is_nan() || next <= 0.0 {
        return Err(Error::Bankrupt {
            step: 0,
            value: next,
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Proportional cost, basis points of the futures price.
    pub epsilon_bps: f64,
    /// Index points per contract per side.
    pub half_tick: f64,
    /// Currency per index point.
    pub multiplier: f64,
    /// Currency value of one unit of `P`, in multiples of `multiplier`.
    pub notional_per_unit: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            epsilon_bps: 0.0,
            half_tick: 0.025,
            multiplier: 1000.0,
            notional_per_unit: 1.0,
        }
    }
}

impl CostModel {
    pub fn free() -> Self {
        CostModel {
            epsilon_bps: 0.0,
            half_tick: 0.0,
            ..CostModel::default()
        }
    }

    pub fn with_epsilon(epsilon_bps: f64) -> Self {
        CostModel {
            epsilon_bps,
            ..CostModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_bps >= 0.0) || !(self.half_tick >= 0.0) {
            return Err(Error::Config("cost parameters must be non-negative".into()));
        }
        if !(self.multiplier > 0.0) || !(self.notional_per_unit > 0.0) {
            return Err(Error::Config(
                "multiplier and notional must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Currency charged per contract traded at `price`.
    pub fn per_contract(&self, price: f64) -> f64 {
        (self.half_tick + self.epsilon_bps / 1e4 * price) * self.multiplier
    }

    /// Currency converted to portfolio units.
    pub fn to_units(&self, currency: f64) -> f64 {
        currency / (self.multiplier * self.notional_per_unit)
    }
}

/// Contracts held in `F¹, F², F⁵, F⁶`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractPosition {
    pub n1: f64,
    pub n2: f64,
    pub n5: f64,
    pub n6: f64,
}

/// Which listed contracts the four legs refer to.
pub const LEG_CONTRACTS: [usize; 4] = [0, 1, 4, 5];

impl ContractPosition {
    pub fn legs(&self) -> [f64; 4] {
        [self.n1, self.n2, self.n5, self.n6]
    }

    pub fn net(&self) -> f64 {
        self.legs().iter().sum()
    }

    pub fn delta(&self, prev: &ContractPosition) -> ContractPosition {
        ContractPosition {
            n1: self.n1 - prev.n1,
            n2: self.n2 - prev.n2,
            n5: self.n5 - prev.n5,
            n6: self.n6 - prev.n6,
        }
    }
}

pub fn contracts_from_action(
    p: f64,
    omega: f64,
    action: Action,
    v1: f64,
    v5: f64,
    integer: bool,
) -> ContractPosition {
    let a1 = f64::from(action.a1);
    let a5 = f64::from(action.a5);
    let pos = ContractPosition {
        n1: omega * a1 * p / v1,
        n2: (1.0 - omega) * a1 * p / v1,
        n5: omega * a5 * p / v5,
        n6: (1.0 - omega) * a5 * p / v5,
    };
    if !integer {
        return pos;
    }
    // f64::round is half away from zero.
    ContractPosition {
        n1: pos.n1.round(),
        n2: pos.n2.round(),
        n5: pos.n5.round(),
        n6: pos.n6.round(),
    }
}

/// Currency cost of changing the four legs by `delta` at `prices`.
pub fn transaction_cost(delta: &ContractPosition, prices: [f64; 4], cm: &CostModel) -> f64 {
    delta
        .legs()
        .iter()
        .zip(prices)
        .map(|(d, f)| d.abs() * cm.per_contract(f))
        .sum()
}

/// Contract counts keyed by expiry.
pub type Holdings = BTreeMap<NaiveDate, f64>;

/// Everything the accounting needs about one trading date and the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TradingDay {
    pub date: NaiveDate,
    pub omega: f64,
    pub v1: f64,
    pub v5: f64,
    pub expiries: [NaiveDate; N_CONTRACTS],
    pub prices: [f64; N_CONTRACTS],
    /// Settlement change of each contract to the next date; zero for a
    /// contract that is no longer listed.
    pub price_change: [f64; N_CONTRACTS],
    /// Realised rolling-strategy returns to the next date.
    pub returns: [f64; N_CMF],
}

impl TradingDay {
    /// Row `t` of the panel paired with row `t + 1`.
    pub fn from_panel(
        panel: &FuturesPanel,
        curves: &CurveSeries,
        t: usize,
        econ: &EconomicParams,
    ) -> TradingDay {
        let expiries = panel.expiries[t];
        let prices = panel.futures[t];
        let mut price_change = [0.0; N_CONTRACTS];
        for (k, exp) in expiries.iter().enumerate() {
            if let Some(j) = panel.expiries[t + 1].iter().position(|e| e == exp) {
                price_change[k] = panel.futures[t + 1][j] - prices[k];
            }
        }
        let omega = curves.omega[t];
        let mut returns = [0.0; N_CMF];
        for i in 0..N_CMF {
            let pair_t = [prices[i], prices[i + 1]];
            let pair_next = [pair_t[0] + price_change[i], pair_t[1] + price_change[i + 1]];
            returns[i] = rolling_return_from_futures(omega, pair_t, pair_next, econ.r, econ.dt);
        }
        TradingDay {
            date: panel.dates[t],
            omega,
            v1: curves.cmf[t][1],
            v5: curves.cmf[t][N_CMF],
            expiries,
            prices,
            price_change,
            returns,
        }
    }

    pub fn holdings(&self, pos: &ContractPosition) -> Holdings {
        let mut h = Holdings::new();
        for (n, k) in pos.legs().into_iter().zip(LEG_CONTRACTS) {
            if n != 0.0 {
                *h.entry(self.expiries[k]).or_insert(0.0) += n;
            }
        }
        h
    }

    fn price_of(&self, expiry: &NaiveDate) -> Option<f64> {
        self.expiries
            .iter()
            .position(|e| e == expiry)
            .map(|k| self.prices[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub value: f64,
    pub position: ContractPosition,
    pub holdings: Holdings,
    /// Currency paid.
    pub cost: f64,
    /// Contracts traded, summed over expiries.
    pub traded: f64,
}

/// Rebalance to the action's target position at today's prices, pay for the
/// change, then carry the portfolio to the next date.
///
/// With fractional contracts the gross return is `R(a) + rΔt`; with integer
/// contracts it is the settlement P&L of the rounded position. Contracts that
/// are no longer listed are treated as settled and closed at no charge.
pub fn portfolio_step_with_costs(
    p: f64,
    prev: &Holdings,
    action: Action,
    day: &TradingDay,
    econ: &EconomicParams,
    cm: &CostModel,
    integer: bool,
) -> Result<StepOutcome> {
    let position = contracts_from_action(p, day.omega, action, day.v1, day.v5, integer);
    let holdings = day.holdings(&position);

    let mut cost = 0.0;
    let mut traded = 0.0;
    let mut expiries: Vec<&NaiveDate> = prev.keys().chain(holdings.keys()).collect();
    expiries.sort();
    expiries.dedup();
    for exp in expiries {
        let Some(price) = day.price_of(exp) else {
            continue;
        };
        let change =
            holdings.get(exp).copied().unwrap_or(0.0) - prev.get(exp).copied().unwrap_or(0.0);
        cost += change.abs() * cm.per_contract(price);
        traded += change.abs();
    }

    let gross = if integer {
        let pnl: f64 = position
            .legs()
            .iter()
            .zip(LEG_CONTRACTS)
            .map(|(n, k)| n * day.price_change[k])
            .sum();
        p * (1.0 + econ.r * econ.dt) + pnl / cm.notional_per_unit
    } else {
        p * (1.0 + trade_return(action, &day.returns, econ) + econ.r * econ.dt)
    };
    let value = gross - cm.to_units(cost);
    if value.is_nan() || value <= 0.0 {
        return Err(Error::Bankrupt { step: 0, value });
    }
    Ok(StepOutcome {
        value,
        position,
        holdings,
        cost,
        traded,
    })
}

pub const INITIAL_VALUE: f64 = 100.0;

/// Dated portfolio values with the decision taken on each date. The last
/// date carries the terminal value only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioPath {
    pub dates: Vec<NaiveDate>,
    pub p: Vec<f64>,
    pub actions: Vec<Action>,
    pub positions: Vec<ContractPosition>,
    /// Currency paid per decision date.
    pub costs: Vec<f64>,
    /// Contracts traded per decision date.
    pub traded: Vec<f64>,
}

impl PortfolioPath {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Simple returns in excess of the risk-free carry.
    pub fn excess_returns(&self, econ: &EconomicParams) -> Vec<f64> {
        self.p
            .windows(2)
            .map(|w| w[1] / w[0] - 1.0 - econ.r * econ.dt)
            .collect()
    }

    pub fn transactions(&self) -> usize {
        self.traded.iter().filter(|&&n| n > 0.0).count()
    }

    /// `date,p,action,n1,n2,n5,n6,cost`; the terminal row has no action.
    pub fn write_csv(&self, path: &std::path::Path, comment: Option<&str>) -> Result<()> {
        let mut buf = Vec::new();
        if let Some(c) = comment {
            buf.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["date", "p", "action", "n1", "n2", "n5", "n6", "cost"])?;
            for t in 0..self.len() {
                let mut rec = vec![self.dates[t].to_string(), self.p[t].to_string()];
                match self.actions.get(t) {
                    Some(a) => {
                        let pos = &self.positions[t];
                        rec.push(a.to_string());
                        rec.extend(pos.legs().iter().map(|v| v.to_string()));
                        rec.push(self.costs[t].to_string());
                    }
                    None => rec.extend(std::iter::repeat_n(String::new(), 6)),
                }
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Trade rows `rows.start .. rows.end - 1` of the panel, choosing each day's
/// action with `decide(row)`.
pub fn run_path<F>(
    panel: &FuturesPanel,
    curves: &CurveSeries,
    rows: std::ops::Range<usize>,
    mut decide: F,
    econ: &EconomicParams,
    cm: &CostModel,
    integer: bool,
) -> Result<PortfolioPath>
where
    F: FnMut(usize) -> Result<Action>,
{
    if rows.end > panel.len() || rows.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: rows.len().min(panel.len()),
        });
    }
    let mut path = PortfolioPath {
        dates: vec![panel.dates[rows.start]],
        p: vec![INITIAL_VALUE],
        actions: Vec::new(),
        positions: Vec::new(),
        costs: Vec::new(),
        traded: Vec::new(),
    };
    let mut holdings = Holdings::new();
    for (step, t) in (rows.start..rows.end - 1).enumerate() {
        let action = decide(t)?;
        let day = TradingDay::from_panel(panel, curves, t, econ);
        let p = *path.p.last().expect("path starts with a value");
        let out = portfolio_step_with_costs(p, &holdings, action, &day, econ, cm, integer)
            .map_err(|e| match e {
                Error::Bankrupt { value, .. } => Error::Bankrupt { step, value },
                other => other,
            })?;
        holdings = out.holdings;
        path.dates.push(panel.dates[t + 1]);
        path.p.push(out.value);
        path.actions.push(action);
        path.positions.push(out.position);
        path.costs.push(out.cost);
        path.traded.push(out.traded);
    }
    Ok(path)
}
