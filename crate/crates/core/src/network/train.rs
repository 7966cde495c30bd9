use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Gradients, QNetwork, TrainingSet};
use crate::dynamics::stream_rng;
use crate::error::{Error, Result};
use crate::utility::{UtilityKind, UtilitySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Fit the Monte-Carlo average utility.
    Quadratic,
    /// Fit the certainty equivalent of the average utility.
    CertaintyEquivalent,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "quadratic" => Ok(LossKind::Quadratic),
            "certainty_equivalent" | "ce" => Ok(LossKind::CertaintyEquivalent),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Quadratic => "quadratic",
            LossKind::CertaintyEquivalent => "certainty_equivalent",
        })
    }
}

impl LossKind {
    pub fn default_for(kind: UtilityKind) -> Self {
        match kind {
            UtilityKind::PiecewiseLinear => LossKind::Quadratic,
            UtilityKind::Exponential => LossKind::CertaintyEquivalent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Stationary states drawn for the training set.
    pub n_states: usize,
    /// One-step scenarios per state.
    pub m_inner: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_states: 100_000,
            m_inner: 300,
            epochs: 15,
            batch_size: 160,
            optimizer: AdamConfig::default(),
            seed: 0,
            loss_kind: LossKind::Quadratic,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, utility: &UtilitySpec) -> Result<()> {
        if self.n_states == 0 || self.m_inner == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "n_states, m_inner and batch_size must be at least 1".into(),
            ));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if utility.kind == UtilityKind::Exponential
            && self.loss_kind != LossKind::CertaintyEquivalent
        {
            return Err(Error::Config(
                "exponential utility is fitted on the certainty-equivalent loss".into(),
            ));
        }
        self.architecture.validate()
    }
}

struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Gradients,
    v: Gradients,
}

fn zeros_like(net: &QNetwork) -> Gradients {
    Gradients {
        weights: net
            .layers
            .iter()
            .map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols()))
            .collect(),
        bias: net
            .layers
            .iter()
            .map(|l| DVector::zeros(l.bias.len()))
            .collect(),
    }
}

impl Adam {
    fn new(net: &QNetwork, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: zeros_like(net),
            v: zeros_like(net),
        }
    }

    fn update_slice(
        &self,
        params: &mut [f64],
        grad: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        c1: f64,
        c2: f64,
    ) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }

    fn apply(&mut self, net: &mut QNetwork, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.step);
        let c2 = 1.0 - self.cfg.beta2.powi(self.step);
        let mut m = std::mem::replace(
            &mut self.m,
            Gradients {
                weights: vec![],
                bias: vec![],
            },
        );
        let mut v = std::mem::replace(
            &mut self.v,
            Gradients {
                weights: vec![],
                bias: vec![],
            },
        );
        for (l, layer) in net.layers.iter_mut().enumerate() {
            self.update_slice(
                layer.weights.as_mut_slice(),
                grads.weights[l].as_slice(),
                m.weights[l].as_mut_slice(),
                v.weights[l].as_mut_slice(),
                c1,
                c2,
            );
            self.update_slice(
                layer.bias.as_mut_slice(),
                grads.bias[l].as_slice(),
                m.bias[l].as_mut_slice(),
                v.bias[l].as_mut_slice(),
                c1,
                c2,
            );
        }
        self.m = m;
        self.v = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    /// Mean batch loss of the last epoch, or the full-set loss when no epoch ran.
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub log: Vec<TrainLogEntry>,
}

/// Mini-batch Adam on the quadratic loss, reshuffling every epoch.
pub fn train(net: &QNetwork, set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if set.input_dim() != net.input_dim() || set.output_dim() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: set.input_dim(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut net = net.clone();
    let n = set.len();
    if cfg.epochs == 0 || n == 0 {
        let final_loss = if n == 0 {
            0.0
        } else {
            net.loss(&set.inputs, &set.targets)?
        };
        return Ok(TrainOutcome {
            net,
            final_loss,
            epoch_losses: Vec::new(),
            log: Vec::new(),
        });
    }

    let mut adam = Adam::new(&net, cfg.optimizer);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, u64::MAX - epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = set.inputs.select_columns(idx);
            let y = set.targets.select_columns(idx);
            let (loss, grads) = net.loss_and_gradients(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, batch });
            }
            adam.apply(&mut net, &grads);
            total += loss * idx.len() as f64;
            log.push(TrainLogEntry { epoch, batch, loss });
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: loss {mean:.6e}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        net,
        final_loss: *epoch_losses.last().expect("at least one epoch"),
        epoch_losses,
        log,
    })
}

/// Smallest absolute pre-activation per input column, over every layer.
pub fn kink_margins(net: &QNetwork, inputs: &DMatrix<f64>) -> Vec<f64> {
    let cache = net.forward_cached(inputs);
    (0..inputs.ncols())
        .map(|j| {
            cache
                .pre
                .iter()
                .flat_map(|z| z.column(j).iter().map(|v| v.abs()).collect::<Vec<_>>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between the backpropagated gradient and central
/// finite differences at `k` randomly chosen parameters.
pub fn gradient_check(net: &QNetwork, set: &TrainingSet, k: usize, seed: u64) -> Result<f64> {
    gradient_check_with(net, set, k, seed, |n, x, y| {
        n.loss_and_gradients(x, y).map(|(_, g)| g)
    })
}

/// As [`gradient_check`], with the analytic gradient supplied by `analytic`.
pub fn gradient_check_with<F>(
    net: &QNetwork,
    set: &TrainingSet,
    k: usize,
    seed: u64,
    analytic: F,
) -> Result<f64>
where
    F: Fn(&QNetwork, &DMatrix<f64>, &DMatrix<f64>) -> Result<Gradients>,
{
    let grads = analytic(net, &set.inputs, &set.targets)?;
    let count = net.parameter_count();
    let mut rng = stream_rng(seed, 0);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..k {
        let idx = rng.gen_range(0..count);
        let original = *probe.parameter_mut(idx);
        *probe.parameter_mut(idx) = original + FD_STEP;
        let up = probe.loss(&set.inputs, &set.targets)?;
        *probe.parameter_mut(idx) = original - FD_STEP;
        let down = probe.loss(&set.inputs, &set.targets)?;
        *probe.parameter_mut(idx) = original;

        let numeric = (up - down) / (2.0 * FD_STEP);
        let exact = grads.get(idx);
        let scale = exact.abs().max(numeric.abs());
        let err = if scale > 1e-10 {
            (exact - numeric).abs() / scale
        } else {
            (exact - numeric).abs()
        };
        worst = worst.max(err);
    }
    Ok(worst)
}
