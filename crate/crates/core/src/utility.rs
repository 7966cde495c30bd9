//! Utility functions and the trade return of a position in the one- and
//! five-month rolling strategies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curve::N_CMF;
use crate::dynamics::EconomicParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    /// `max(R, 0) + γ min(R, 0)`
    PiecewiseLinear,
    /// `−exp(−γ R) / γ`
    Exponential,
}

impl FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "piecewise_linear" | "piecewise" | "linear" => Ok(UtilityKind::PiecewiseLinear),
            "exponential" | "exp" => Ok(UtilityKind::Exponential),
            other => Err(Error::Config(format!("unknown utility kind {other:?}"))),
        }
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UtilityKind::PiecewiseLinear => "piecewise_linear",
            UtilityKind::Exponential => "exponential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub gamma: f64,
}

impl UtilitySpec {
    pub fn new(kind: UtilityKind, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!(
                "risk aversion must be positive, got {gamma}"
            )));
        }
        Ok(UtilitySpec { kind, gamma })
    }

    pub fn piecewise_linear() -> Self {
        UtilitySpec {
            kind: UtilityKind::PiecewiseLinear,
            gamma: 1.3,
        }
    }

    pub fn exponential() -> Self {
        UtilitySpec {
            kind: UtilityKind::Exponential,
            gamma: 3.0,
        }
    }

    pub fn default_for(kind: UtilityKind) -> Self {
        match kind {
            UtilityKind::PiecewiseLinear => Self::piecewise_linear(),
            UtilityKind::Exponential => Self::exponential(),
        }
    }

    pub fn evaluate(&self, r: f64) -> f64 {
        match self.kind {
            UtilityKind::PiecewiseLinear => r.max(0.0) + self.gamma * r.min(0.0),
            UtilityKind::Exponential => -(-self.gamma * r).exp() / self.gamma,
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self.kind {
            UtilityKind::PiecewiseLinear => Ok(if y >= 0.0 { y } else { y / self.gamma }),
            UtilityKind::Exponential => {
                if y >= 0.0 || y.is_nan() {
                    return Err(Error::DomainError { value: y });
                }
                Ok(-(-self.gamma * y).ln() / self.gamma)
            }
        }
    }
}

/// Weights on the one-month and five-month rolling strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub a1: i8,
    pub a5: i8,
}

/// The admissible actions, in network output order.
pub const ACTIONS: [Action; 5] = [
    Action { a1: 0, a5: 0 },
    Action { a1: -1, a5: 1 },
    Action { a1: -1, a5: 2 },
    Action { a1: 1, a5: -1 },
    Action { a1: 1, a5: -2 },
];

pub const N_ACTIONS: usize = ACTIONS.len();

impl Action {
    pub const FLAT: Action = ACTIONS[0];

    pub fn index(&self) -> usize {
        ACTIONS
            .iter()
            .position(|a| a == self)
            .expect("action is admissible")
    }

    pub fn from_weights(a1: i8, a5: i8) -> Result<Action> {
        let a = Action { a1, a5 };
        if ACTIONS.contains(&a) {
            Ok(a)
        } else {
            Err(Error::Config(format!(
                "({a1},{a5}) is not an admissible action"
            )))
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a1, self.a5)
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut parts = inner.split(',').map(str::trim);
        let parse = |p: Option<&str>| -> Result<i8> {
            p.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("cannot parse action {s:?}")))
        };
        let a1 = parse(parts.next())?;
        let a5 = parse(parts.next())?;
        Action::from_weights(a1, a5)
    }
}

/// Excess return of the position: `a¹ (ΔI¹/I¹ − rΔt) + a⁵ (ΔI⁵/I⁵ − rΔt)`.
pub fn trade_return(action: Action, returns: &[f64; N_CMF], econ: &EconomicParams) -> f64 {
    let carry = econ.r * econ.dt;
    f64::from(action.a1) * (returns[0] - carry)
        + f64::from(action.a5) * (returns[N_CMF - 1] - carry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn trade_return_examples() {
        let econ = EconomicParams::default();
        let r = [0.01, 0.0, 0.0, 0.0, 0.004];
        assert_eq!(trade_return(ACTIONS[0], &r, &econ), 0.0);
        assert_eq!(
            trade_return(ACTIONS[3], &[0.02, 0.0, 0.0, 0.0, 0.02], &econ),
            0.0
        );
        assert_relative_eq!(trade_return(ACTIONS[2], &r, &econ), -0.002, epsilon = 1e-15);
    }

    #[test]
    fn carry_is_removed() {
        let econ = EconomicParams::new(0.0252, 1.0 / 252.0).unwrap();
        let carry = 0.0001;
        let r = [0.01 + carry, 0.0, 0.0, 0.0, 0.004 + carry];
        assert_relative_eq!(trade_return(ACTIONS[2], &r, &econ), -0.002, epsilon = 1e-15);
    }

    #[test]
    fn utility_values() {
        let p = UtilitySpec::piecewise_linear();
        assert_eq!(p.evaluate(0.1), 0.1);
        assert_relative_eq!(p.evaluate(-0.1), -0.13, epsilon = 1e-15);
        let e = UtilitySpec::exponential();
        assert_relative_eq!(e.evaluate(0.0), -1.0 / 3.0);
        assert_eq!(e.inverse(-1.0 / 3.0).unwrap(), 0.0);
        assert_relative_eq!(p.inverse(-0.13).unwrap(), -0.1, epsilon = 1e-15);
        assert!(matches!(e.inverse(0.0), Err(Error::DomainError { .. })));
        assert!(matches!(e.inverse(0.5), Err(Error::DomainError { .. })));
    }

    #[test]
    fn utilities_increase_on_grid() {
        for u in [UtilitySpec::piecewise_linear(), UtilitySpec::exponential()] {
            let values: Vec<f64> = (-100..=100).map(|k| u.evaluate(k as f64 * 0.01)).collect();
            assert!(values.windows(2).all(|w| w[1] > w[0]), "{u:?}");
        }
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(UtilitySpec::new(UtilityKind::Exponential, 0.0).is_err());
        assert!(UtilitySpec::new(UtilityKind::PiecewiseLinear, -1.0).is_err());
    }

    #[test]
    fn action_parsing() {
        assert_eq!("(-1,2)".parse::<Action>().unwrap(), ACTIONS[2]);
        assert_eq!("1, -2".parse::<Action>().unwrap(), ACTIONS[4]);
        assert!("(2,2)".parse::<Action>().is_err());
        assert_eq!(ACTIONS[3].index(), 3);
    }

    proptest! {
        #[test]
        fn inverse_undoes_evaluate(x in -2.0f64..2.0, gamma in 0.1f64..5.0) {
            for kind in [UtilityKind::PiecewiseLinear, UtilityKind::Exponential] {
                let u = UtilitySpec::new(kind, gamma).unwrap();
                let back = u.inverse(u.evaluate(x)).unwrap();
                prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs()), "{kind:?} {x} {back}");
            }
        }

        #[test]
        fn utilities_are_concave(r1 in -1.0f64..1.0, r2 in -1.0f64..1.0, lambda in 0.0f64..=1.0) {
            for u in [UtilitySpec::piecewise_linear(), UtilitySpec::exponential()] {
                let lhs = u.evaluate(lambda * r1 + (1.0 - lambda) * r2);
                let rhs = lambda * u.evaluate(r1) + (1.0 - lambda) * u.evaluate(r2);
                prop_assert!(lhs >= rhs - 1e-12);
            }
        }
    }
}
