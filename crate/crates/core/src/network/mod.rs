//! Dense feedforward network approximating per-action expected utility.
//!
//! Every layer is affine followed by PReLU, the output layer included unless
//! another output activation is configured. Batches are column-major: a batch
//! of `B` inputs is a `input_dim × B` matrix.

mod labels;
mod train;

pub use labels::{build_training_set, state_labels, TrainingSet};
pub use train::{
    gradient_check, gradient_check_with, kink_margins, train, AdamConfig, LossKind, TrainConfig,
    TrainLogEntry, TrainOutcome,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curve::STATE_DIM;
use crate::dynamics::stream_rng;
use crate::error::{Error, Result};
use crate::utility::N_ACTIONS;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_HIDDEN: [usize; 5] = [550; 5];

pub fn prelu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x
    }
}

/// Slope of [`prelu`]; taken as 1 at the kink.
pub fn prelu_derivative(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Prelu,
    Tanh,
    Linear,
}

impl FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prelu" => Ok(OutputActivation::Prelu),
            "tanh" => Ok(OutputActivation::Tanh),
            "linear" | "identity" => Ok(OutputActivation::Linear),
            other => Err(Error::Config(format!(
                "unknown output activation {other:?}"
            ))),
        }
    }
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Prelu => "prelu",
            OutputActivation::Tanh => "tanh",
            OutputActivation::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub alpha: f64,
    pub output_activation: OutputActivation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input: STATE_DIM,
            hidden: DEFAULT_HIDDEN.to_vec(),
            output: N_ACTIONS,
            alpha: DEFAULT_ALPHA,
            output_activation: OutputActivation::Prelu,
        }
    }
}

impl Architecture {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "PReLU slope must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Parse hidden layer sizes written as `550x5` or `64,32,16`.
pub fn parse_hidden(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse hidden layers {text:?}"));
    let text = text.trim();
    if let Some((w, n)) = text.split_once('x') {
        let w: usize = w.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        return Ok(vec![w; n]);
    }
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out × fan_in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Fixed affine map applied to inputs before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    /// Per-row mean and standard deviation of column inputs; constant rows
    /// keep unit scale.
    pub fn fit(inputs: &DMatrix<f64>) -> Self {
        let n = inputs.ncols().max(1) as f64;
        let mut shift = Vec::with_capacity(inputs.nrows());
        let mut scale = Vec::with_capacity(inputs.nrows());
        for row in inputs.row_iter() {
            let mean = row.sum() / n;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            shift.push(mean);
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        InputNorm { shift, scale }
    }

    fn apply(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = inputs.clone();
        for mut col in out.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = (*v - self.shift[i]) / self.scale[i];
            }
        }
        out
    }
}

/// Fixed affine map applied to the last layer's activations:
/// `Q_a = shift_a + scale · out_a`. One scale for every action keeps the
/// loss proportional to the unscaled one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputNorm {
    pub shift: Vec<f64>,
    pub scale: f64,
}

impl OutputNorm {
    /// Per-row means and the pooled standard deviation around them.
    pub fn fit(targets: &DMatrix<f64>) -> Self {
        let n = targets.ncols().max(1) as f64;
        let shift: Vec<f64> = targets.row_iter().map(|row| row.sum() / n).collect();
        let ss: f64 = targets
            .row_iter()
            .zip(&shift)
            .map(|(row, m)| row.iter().map(|v| (v - m).powi(2)).sum::<f64>())
            .sum();
        let sd = (ss / (n * targets.nrows().max(1) as f64)).sqrt();
        OutputNorm {
            shift,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    fn apply(&self, out: &mut DMatrix<f64>) {
        for mut col in out.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = self.shift[i] + self.scale * *v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
    pub input_norm: Option<InputNorm>,
    pub output_norm: Option<OutputNorm>,
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub bias: Vec<DVector<f64>>,
}

/// Pre-activations and activations from a forward pass.
pub(crate) struct ForwardCache {
    pub pre: Vec<DMatrix<f64>>,
    pub post: Vec<DMatrix<f64>>,
}

impl QNetwork {
    /// Zero biases and weights drawn from `N(0, 2 / fan_in)`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream_rng(seed, 0);
        let widths = arch.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let sd = (2.0 / w[0] as f64).sqrt();
                let weights =
                    DMatrix::from_fn(w[1], w[0], |_, _| sd * rng.sample::<f64, _>(StandardNormal));
                Layer {
                    weights,
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(QNetwork {
            arch,
            layers,
            input_norm: None,
            output_norm: None,
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Ok(QNetwork {
            arch,
            layers,
            input_norm: None,
            output_norm: None,
        })
    }

    /// Standardise inputs with `norm` before the first layer.
    pub fn with_input_norm(mut self, norm: InputNorm) -> Result<Self> {
        if norm.shift.len() != self.input_dim() || norm.scale.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: norm.shift.len(),
            });
        }
        if norm.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("input scales must be positive".into()));
        }
        self.input_norm = Some(norm);
        Ok(self)
    }

    /// Rescale the last layer's activations with `norm`.
    pub fn with_output_norm(mut self, norm: OutputNorm) -> Result<Self> {
        if norm.shift.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: norm.shift.len(),
            });
        }
        if !(norm.scale > 0.0 && norm.scale.is_finite()) {
            return Err(Error::Config("output scale must be positive".into()));
        }
        self.output_norm = Some(norm);
        Ok(self)
    }

    fn normalized<'a>(&self, inputs: &'a DMatrix<f64>) -> std::borrow::Cow<'a, DMatrix<f64>> {
        match &self.input_norm {
            Some(norm) => std::borrow::Cow::Owned(norm.apply(inputs)),
            None => std::borrow::Cow::Borrowed(inputs),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn is_output(&self, layer: usize) -> bool {
        layer + 1 == self.layers.len()
    }

    fn activate(&self, layer: usize, z: &mut DMatrix<f64>) {
        let alpha = self.arch.alpha;
        match (self.is_output(layer), self.arch.output_activation) {
            (true, OutputActivation::Linear) => {}
            (true, OutputActivation::Tanh) => z.apply(|v| *v = v.tanh()),
            _ => z.apply(|v| *v = prelu(*v, alpha)),
        }
    }

    /// Multiply `delta` in place by the activation slope at `pre`.
    fn apply_derivative(&self, layer: usize, pre: &DMatrix<f64>, delta: &mut DMatrix<f64>) {
        let alpha = self.arch.alpha;
        match (self.is_output(layer), self.arch.output_activation) {
            (true, OutputActivation::Linear) => {}
            (true, OutputActivation::Tanh) => {
                delta.zip_apply(pre, |d, z| *d *= 1.0 - z.tanh().powi(2))
            }
            _ => delta.zip_apply(pre, |d, z| *d *= prelu_derivative(z, alpha)),
        }
    }

    fn affine(layer: &Layer, input: &DMatrix<f64>) -> DMatrix<f64> {
        let cols = input.ncols();
        let mut z = DMatrix::from_fn(layer.bias.len(), cols, |i, _| layer.bias[i]);
        z.gemm(1.0, &layer.weights, input, 1.0);
        z
    }

    pub(crate) fn forward_cached(&self, inputs: &DMatrix<f64>) -> ForwardCache {
        let inputs = self.normalized(inputs);
        let inputs = inputs.as_ref();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { inputs } else { &post[l - 1] };
            let z = Self::affine(layer, input);
            let mut a = z.clone();
            self.activate(l, &mut a);
            pre.push(z);
            post.push(a);
        }
        ForwardCache { pre, post }
    }

    /// Outputs for a batch of column inputs.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.nrows(),
            });
        }
        let mut a = self.normalized(inputs).into_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            a = Self::affine(layer, &a);
            self.activate(l, &mut a);
        }
        if let Some(norm) = &self.output_norm {
            norm.apply(&mut a);
        }
        Ok(a)
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok(out.column(0).into_owned())
    }

    /// `Σ_a (1/B) Σ_i (Q(x_i, a) − y_{i,a})²` for a batch.
    pub fn loss(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
        let out = self.forward_batch(inputs)?;
        Ok((out - targets).norm_squared() / inputs.ncols() as f64)
    }

    /// Batch loss and its parameter gradients by backpropagation.
    pub fn loss_and_gradients(
        &self,
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<(f64, Gradients)> {
        if inputs.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.nrows(),
            });
        }
        if targets.nrows() != self.output_dim() || targets.ncols() != inputs.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: targets.nrows(),
            });
        }
        let batch = inputs.ncols() as f64;
        let normalized = self.normalized(inputs);
        let cache = self.forward_cached(inputs);
        let n = self.layers.len();
        let mut q = cache.post[n - 1].clone();
        let out_scale = match &self.output_norm {
            Some(norm) => {
                norm.apply(&mut q);
                norm.scale
            }
            None => 1.0,
        };
        let residual = q - targets;
        let loss = residual.norm_squared() / batch;

        let mut delta = residual * (2.0 * out_scale / batch);
        let mut weights = vec![DMatrix::zeros(0, 0); n];
        let mut bias = vec![DVector::zeros(0); n];
        for l in (0..n).rev() {
            self.apply_derivative(l, &cache.pre[l], &mut delta);
            let input = if l == 0 {
                normalized.as_ref()
            } else {
                &cache.post[l - 1]
            };
            let layer = &self.layers[l];
            let mut dw = DMatrix::zeros(layer.weights.nrows(), layer.weights.ncols());
            dw.gemm(1.0, &delta, &input.transpose(), 0.0);
            weights[l] = dw;
            bias[l] = delta.column_sum();
            if l > 0 {
                let wt = layer.weights.transpose();
                let mut next = DMatrix::zeros(wt.nrows(), delta.ncols());
                next.gemm(1.0, &wt, &delta, 0.0);
                delta = next;
            }
        }
        Ok((loss, Gradients { weights, bias }))
    }

    /// Flat view of parameter `index` (weights of each layer, column-major,
    /// followed by its bias).
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if index < nw {
                return &mut layer.weights.as_mut_slice()[index];
            }
            index -= nw;
            let nb = layer.bias.len();
            if index < nb {
                return &mut layer.bias.as_mut_slice()[index];
            }
            index -= nb;
        }
        panic!("parameter index out of range")
    }

    pub fn to_json(&self, config_hash: Option<&str>) -> String {
        serde_json::to_string(&NetworkDoc::new(self, config_hash)).expect("network serialises")
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<String>)> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        doc.into_network()
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_json(config_hash)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Gradients {
    pub fn get(&self, mut index: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.bias) {
            if index < w.len() {
                return w.as_slice()[index];
            }
            index -= w.len();
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn get_mut(&mut self, mut index: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.bias.iter_mut()) {
            if index < w.len() {
                return &mut w.as_mut_slice()[index];
            }
            index -= w.len();
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range")
    }
}

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    /// Row-major `fan_out × fan_in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkDoc {
    schema_version: u32,
    architecture: Architecture,
    layers: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_norm: Option<InputNorm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_norm: Option<OutputNorm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl NetworkDoc {
    fn new(net: &QNetwork, config_hash: Option<&str>) -> Self {
        NetworkDoc {
            schema_version: NETWORK_SCHEMA_VERSION,
            architecture: net.arch.clone(),
            layers: net
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.transpose().as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
            input_norm: net.input_norm.clone(),
            output_norm: net.output_norm.clone(),
            config_hash: config_hash.map(str::to_string),
        }
    }

    fn into_network(self) -> Result<(QNetwork, Option<String>)> {
        if self.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported network schema version {}",
                self.schema_version
            )));
        }
        self.architecture.validate()?;
        let widths = self.architecture.widths();
        if self.layers.len() + 1 != widths.len() {
            return Err(Error::Config(
                "layer count does not match architecture".into(),
            ));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (doc, w) in self.layers.into_iter().zip(widths.windows(2)) {
            if doc.rows != w[1]
                || doc.cols != w[0]
                || doc.weights.len() != w[0] * w[1]
                || doc.bias.len() != w[1]
            {
                return Err(Error::Config(format!(
                    "layer shape {}x{} does not chain",
                    doc.rows, doc.cols
                )));
            }
            layers.push(Layer {
                weights: DMatrix::from_row_slice(doc.rows, doc.cols, &doc.weights),
                bias: DVector::from_vec(doc.bias),
            });
        }
        let net = QNetwork {
            arch: self.architecture,
            layers,
            input_norm: None,
            output_norm: None,
        };
        let net = match self.input_norm {
            Some(norm) => net.with_input_norm(norm)?,
            None => net,
        };
        let net = match self.output_norm {
            Some(norm) => net.with_output_norm(norm)?,
            None => net,
        };
        Ok((net, self.config_hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(hidden: Vec<usize>) -> Architecture {
        Architecture {
            input: 3,
            hidden,
            output: 2,
            ..Architecture::default()
        }
    }

    #[test]
    fn prelu_values() {
        assert_eq!(prelu(2.0, 0.1), 2.0);
        assert_relative_eq!(prelu(-1.0, 0.1), -0.1);
        assert_eq!(prelu(0.0, 0.1), 0.0);
        assert_eq!(prelu_derivative(0.0, 0.1), 1.0);
        assert_eq!(prelu_derivative(-3.0, 0.1), 0.1);
        assert_eq!(prelu_derivative(3.0, 0.1), 1.0);
    }

    #[test]
    fn default_shape_chains() {
        let net = QNetwork::new(Architecture::default(), 1).unwrap();
        let dims: Vec<_> = net
            .layers
            .iter()
            .map(|l| (l.weights.ncols(), l.weights.nrows()))
            .collect();
        assert_eq!(
            dims,
            vec![
                (11, 550),
                (550, 550),
                (550, 550),
                (550, 550),
                (550, 550),
                (550, 5)
            ]
        );
        let q = net.forward(&DVector::from_element(11, 0.3)).unwrap();
        assert_eq!(q.len(), 5);
        assert!(q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(Architecture::default()).unwrap();
        let q = net.forward(&DVector::from_element(11, 1.7)).unwrap();
        assert_eq!(q, DVector::zeros(5));
    }

    #[test]
    fn hand_computed_two_layer_case() {
        let arch = Architecture {
            input: 2,
            hidden: vec![2],
            output: 1,
            ..Architecture::default()
        };
        let mut net = QNetwork::zeros(arch).unwrap();
        net.layers[0].weights = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 0.25, 0.75]);
        net.layers[0].bias = DVector::from_vec(vec![0.1, -0.2]);
        net.layers[1].weights = DMatrix::from_row_slice(1, 2, &[2.0, -3.0]);
        net.layers[1].bias = DVector::from_vec(vec![0.05]);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        // h1 = prelu(0.5 - 2 + 0.1) = prelu(-1.4) = -0.14
        // h2 = prelu(0.25 + 1.5 - 0.2) = 1.55
        // out = prelu(2 * -0.14 - 3 * 1.55 + 0.05) = prelu(-4.88) = -0.488
        let q = net.forward(&x).unwrap();
        assert!((q[0] - (-0.488)).abs() < 1e-12, "{}", q[0]);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = QNetwork::new(small(vec![4]), 0).unwrap();
        assert!(matches!(
            net.forward(&DVector::zeros(5)),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 5
            })
        ));
    }

    #[test]
    fn output_activations() {
        for act in [OutputActivation::Tanh, OutputActivation::Linear] {
            let arch = Architecture {
                output_activation: act,
                ..small(vec![4])
            };
            let net = QNetwork::new(arch, 5).unwrap();
            let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
            let y = DMatrix::from_element(2, 4, 0.2);
            let (loss, g) = net.loss_and_gradients(&x, &y).unwrap();
            assert!(loss.is_finite());
            assert_eq!(g.weights.len(), 2);
        }
    }

    #[test]
    fn parse_hidden_forms() {
        assert_eq!(parse_hidden("550x5").unwrap(), vec![550; 5]);
        assert_eq!(parse_hidden("64, 32").unwrap(), vec![64, 32]);
        assert!(parse_hidden("abc").is_err());
    }

    #[test]
    fn json_round_trip() {
        let net = QNetwork::new(small(vec![4, 3]), 9).unwrap();
        let (back, hash) = QNetwork::from_json(&net.to_json(Some("abc"))).unwrap();
        assert_eq!(back, net);
        assert_eq!(hash.as_deref(), Some("abc"));

        let norm = InputNorm {
            shift: vec![1.0, 2.0, 3.0],
            scale: vec![0.5, 1.0, 2.0],
        };
        let net = net.with_input_norm(norm).unwrap();
        let (back, _) = QNetwork::from_json(&net.to_json(None)).unwrap();
        assert_eq!(back, net);

        let net = net
            .with_output_norm(OutputNorm {
                shift: vec![0.1, -0.2],
                scale: 0.01,
            })
            .unwrap();
        let (back, _) = QNetwork::from_json(&net.to_json(None)).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn output_norm_rescales_and_keeps_gradients_exact() {
        let raw = QNetwork::new(small(vec![4, 3]), 5).unwrap();
        let norm = OutputNorm {
            shift: vec![0.5, -1.0],
            scale: 0.02,
        };
        let net = raw.clone().with_output_norm(norm).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let a = raw.forward(&x).unwrap();
        let q = net.forward(&x).unwrap();
        assert_relative_eq!(q[0], 0.5 + 0.02 * a[0], epsilon = 1e-15);
        assert_relative_eq!(q[1], -1.0 + 0.02 * a[1], epsilon = 1e-15);

        let inputs = DMatrix::from_fn(3, 6, |r, c| ((r * 7 + c * 3) as f64).sin());
        let targets = DMatrix::from_fn(2, 6, |r, c| 0.3 * ((r + 2 * c) as f64).cos());
        let set = TrainingSet::new(inputs, targets.clone()).unwrap();
        let err = gradient_check(&net, &set, 40, 1).unwrap();
        assert!(err < 1e-5, "{err}");

        let fitted = OutputNorm::fit(&DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 10.0, 10.0]));
        assert_eq!(fitted.shift, vec![2.0, 10.0]);
        assert_relative_eq!(fitted.scale, (2.0f64 / 4.0).sqrt());
        assert!(raw
            .with_output_norm(OutputNorm {
                shift: vec![0.0],
                scale: 1.0
            })
            .is_err());
    }

    #[test]
    fn input_norm_is_a_fixed_affine_map() {
        let raw = QNetwork::new(small(vec![4]), 3).unwrap();
        let norm = InputNorm {
            shift: vec![1.0, -2.0, 0.5],
            scale: vec![2.0, 4.0, 0.25],
        };
        let net = raw.clone().with_input_norm(norm.clone()).unwrap();
        let x = DVector::from_vec(vec![3.0, 2.0, 1.0]);
        let z = DVector::from_vec(vec![1.0, 1.0, 2.0]);
        assert_eq!(net.forward(&x).unwrap(), raw.forward(&z).unwrap());
        let set = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let fitted = InputNorm::fit(&set);
        assert_relative_eq!(fitted.shift[0], 2.0);
        assert_relative_eq!(fitted.scale[0], (2.0f64 / 3.0).sqrt());
        assert_eq!(fitted.scale[1], 1.0);
        assert!(raw
            .with_input_norm(InputNorm {
                shift: vec![0.0],
                scale: vec![1.0]
            })
            .is_err());
    }

    #[test]
    fn parameter_indexing_is_consistent() {
        let mut net = QNetwork::new(small(vec![4]), 2).unwrap();
        let x = DMatrix::from_element(3, 2, 0.5);
        let y = DMatrix::from_element(2, 2, 0.0);
        let (_, g) = net.loss_and_gradients(&x, &y).unwrap();
        let count = net.parameter_count();
        assert_eq!(count, 3 * 4 + 4 + 4 * 2 + 2);
        *net.parameter_mut(count - 1) = 42.0;
        assert_eq!(net.layers[1].bias[1], 42.0);
        assert_eq!(g.get(12), g.bias[0][0]);
    }
}
