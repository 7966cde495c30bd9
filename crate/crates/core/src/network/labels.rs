use nalgebra::DMatrix;
use rayon::prelude::*;

use super::train::{LossKind, TrainConfig};
use crate::dynamics::{sample_stationary, stream_rng, EconomicParams, ScenarioReturns, VarModel};
use crate::error::{Error, Result};
use crate::utility::{trade_return, UtilitySpec, ACTIONS, N_ACTIONS};

/// Network inputs and per-action labels, one column per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != targets.ncols() {
            return Err(Error::DimensionMismatch {
                expected: inputs.ncols(),
                got: targets.ncols(),
            });
        }
        if let Some(bad) = targets.iter().find(|v| !v.is_finite()) {
            return Err(Error::DomainError { value: *bad });
        }
        Ok(TrainingSet { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.nrows()
    }
}

/// Per-action labels at one state from `m` simulated transitions. The same
/// draws are scored under every action.
pub fn state_labels<R: ScenarioReturns>(
    model: &VarModel,
    returns: &R,
    econ: &EconomicParams,
    utility: &UtilitySpec,
    loss: LossKind,
    x: &crate::StateVector,
    m: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<[f64; N_ACTIONS]> {
    let mut sums = [0.0; N_ACTIONS];
    for _ in 0..m {
        let next = model.draw_step(x, rng);
        let r = returns.strategy_returns(x, &next);
        for (s, a) in sums.iter_mut().zip(ACTIONS) {
            *s += utility.evaluate(trade_return(a, &r, econ));
        }
    }
    let mut out = [0.0; N_ACTIONS];
    for (o, s) in out.iter_mut().zip(sums) {
        let mean = s / m as f64;
        *o = match loss {
            LossKind::Quadratic => mean,
            LossKind::CertaintyEquivalent => utility.inverse(mean)?,
        };
    }
    Ok(out)
}

/// Stationary draws paired with Monte-Carlo estimates of each action's
/// expected utility (or its certainty equivalent).
pub fn build_training_set<R: ScenarioReturns>(
    model: &VarModel,
    returns: &R,
    econ: &EconomicParams,
    utility: &UtilitySpec,
    cfg: &TrainConfig,
) -> Result<TrainingSet> {
    cfg.validate(utility)?;
    let states = sample_stationary(model, cfg.n_states, cfg.seed)?;
    let labels: Vec<[f64; N_ACTIONS]> = states
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = stream_rng(cfg.seed, 1 + i as u64);
            state_labels(
                model,
                returns,
                econ,
                utility,
                cfg.loss_kind,
                x,
                cfg.m_inner,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    let dim = model.dim();
    let inputs = DMatrix::from_fn(dim, states.len(), |r, c| states[c][r]);
    let targets = DMatrix::from_fn(N_ACTIONS, states.len(), |r, c| labels[c][r]);
    TrainingSet::new(inputs, targets)
}
