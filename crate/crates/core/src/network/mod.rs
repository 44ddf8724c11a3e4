//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Each layer computes `z = x·Wᵀ + b`, optionally batch-normalizes `z`,
//! applies its activation, optionally min-max normalizes the result, and
//! optionally applies inverted dropout. [`Network::backward`] reverses that
//! chain exactly, except that min-max extremes are treated as constants.

mod adam;
mod dropout;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dropout::dropout;

use serde::{Deserialize, Serialize};

use crate::activations::{Activation, ActivationKind};
use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};
use crate::normalization::{
    apply_minmax, bn_backward, minmax_backward, BatchNormCache, MinMaxCache, Normalizer,
    NormalizerKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Autoencode,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Autoencode => "autoencode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    pub normalizer: NormalizerKind,
    /// Inverted-dropout probability applied to this layer's output; 0 disables it.
    #[serde(default)]
    pub dropout: f64,
}

impl LayerSpec {
    pub fn new(units: usize, activation: impl Into<Activation>) -> Self {
        LayerSpec {
            units,
            activation: activation.into(),
            normalizer: NormalizerKind::None,
            dropout: 0.0,
        }
    }

    pub fn with_normalizer(mut self, normalizer: NormalizerKind) -> Self {
        self.normalizer = normalizer;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// `hidden.len()` hidden layers of `kind` with `normalizer`, then an
    /// un-normalized output layer.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        kind: ActivationKind,
        normalizer: NormalizerKind,
        output_units: usize,
        output_activation: Activation,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&u| LayerSpec::new(u, kind).with_normalizer(normalizer))
            .collect();
        layers.push(LayerSpec::new(output_units, output_activation));
        NetworkSpec { input_dim, layers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `fan_out × fan_in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub normalizer: Normalizer,
    #[serde(default)]
    pub dropout: f64,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
}

/// Which tensor of a layer a parameter lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamTensor {
    Weights,
    Bias,
    Gamma,
    Beta,
}

/// Location of a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub tensor: ParamTensor,
    pub index: usize,
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "layer {} {:?}[{}]", self.layer, self.tensor, self.index)
    }
}

/// What one layer's forward pass leaves behind for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Matrix,
    /// Pre-activation `x·Wᵀ + b`.
    pub z: Matrix,
    pub bn: Option<BatchNormCache>,
    /// Batch-normalized `z`, the actual activation input when BN is present.
    pub z_normalized: Option<Matrix>,
    pub minmax: Option<MinMaxCache>,
    pub dropout_mask: Option<Matrix>,
}

impl LayerTrace {
    pub fn activation_input(&self) -> &Matrix {
        self.z_normalized.as_ref().unwrap_or(&self.z)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    /// Flat views in the same order as [`Network::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.push(g.weights.data());
            out.push(&g.bias[..]);
            if let (Some(gamma), Some(beta)) = (&g.gamma, &g.beta) {
                out.push(&gamma[..]);
                out.push(&beta[..]);
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for g in &mut self.layers {
            out.push(g.weights.data_mut());
            out.push(&mut g.bias[..]);
            if let (Some(gamma), Some(beta)) = (&mut g.gamma, &mut g.beta) {
                out.push(&mut gamma[..]);
                out.push(&mut beta[..]);
            }
        }
        out
    }
}

/// Mean squared error `mean(½(target − pred)²)` over every element, and its
/// gradient with respect to `pred`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "loss: prediction is {}x{} but target is {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let scale = 1.0 / pred.data().len() as f64;
    let mut grad = pred.clone();
    let mut sum = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        sum += 0.5 * diff * diff;
        *g = diff * scale;
    }
    Ok((sum * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    /// Fraction of rows whose argmax matches the target's; classification only.
    pub accuracy: Option<f64>,
}

fn divergence(layer: usize, what: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence {
            layer,
            what: what.to_string(),
        },
        other => other,
    }
}

impl Network {
    /// Glorot-normal weights, zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut Rng) -> Result<Network> {
        if spec.input_dim == 0 || spec.layers.is_empty() {
            return Err(Error::config("network needs a positive input size and at least one layer"));
        }
        let mut fan_in = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            if ls.units == 0 {
                return Err(Error::config(format!("layer {i} has zero units")));
            }
            let std = (2.0 / (fan_in + ls.units) as f64).sqrt();
            let weights = Matrix::new(ls.units, fan_in, rng.normal(ls.units * fan_in, 0.0, std))?;
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; ls.units],
                activation: ls.activation,
                normalizer: Normalizer::new(ls.normalizer, ls.units),
                dropout: ls.dropout,
            });
            fan_in = ls.units;
        }
        Network::from_layers(spec.input_dim, layers)
    }

    pub fn from_layers(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Network> {
        let net = Network { input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        let mut fan_in = self.input_dim;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.fan_in() != fan_in {
                return Err(Error::config(format!(
                    "layer {i} expects {} inputs but receives {fan_in}",
                    layer.fan_in()
                )));
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::config(format!(
                    "layer {i} bias has length {} for {} units",
                    layer.bias.len(),
                    layer.fan_out()
                )));
            }
            layer.activation.validate()?;
            match &layer.normalizer {
                Normalizer::MinMax(_) if i == last => {
                    return Err(Error::config("min-max normalization cannot follow the output layer"))
                }
                Normalizer::BatchNorm(bn) if bn.width() != layer.fan_out() => {
                    return Err(Error::config(format!(
                        "layer {i} batch norm width {} for {} units",
                        bn.width(),
                        layer.fan_out()
                    )))
                }
                _ => {}
            }
            if !(0.0..1.0).contains(&layer.dropout) {
                return Err(Error::config(format!(
                    "layer {i} dropout must be in [0, 1), got {}",
                    layer.dropout
                )));
            }
            fan_in = layer.fan_out();
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::fan_out)
    }

    pub fn param_count(&self) -> usize {
        self.param_layout().iter().map(|&(_, _, n)| n).sum()
    }

    /// `(layer, tensor, length)` for every parameter tensor, in update order.
    pub fn param_layout(&self) -> Vec<(usize, ParamTensor, usize)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((i, ParamTensor::Weights, l.weights.data().len()));
            out.push((i, ParamTensor::Bias, l.bias.len()));
            if let Normalizer::BatchNorm(bn) = &l.normalizer {
                out.push((i, ParamTensor::Gamma, bn.gamma.len()));
                out.push((i, ParamTensor::Beta, bn.beta.len()));
            }
        }
        out
    }

    /// Mutable flat views of every trainable tensor, ordered as [`Network::param_layout`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.data_mut());
            out.push(&mut l.bias[..]);
            if let Normalizer::BatchNorm(bn) = &mut l.normalizer {
                out.push(&mut bn.gamma[..]);
                out.push(&mut bn.beta[..]);
            }
        }
        out
    }

    pub fn param(&self, id: ParamId) -> f64 {
        let l = &self.layers[id.layer];
        match (id.tensor, &l.normalizer) {
            (ParamTensor::Weights, _) => l.weights.data()[id.index],
            (ParamTensor::Bias, _) => l.bias[id.index],
            (ParamTensor::Gamma, Normalizer::BatchNorm(bn)) => bn.gamma[id.index],
            (ParamTensor::Beta, Normalizer::BatchNorm(bn)) => bn.beta[id.index],
            _ => panic!("{id} does not exist"),
        }
    }

    pub fn set_param(&mut self, id: ParamId, value: f64) {
        let l = &mut self.layers[id.layer];
        match (id.tensor, &mut l.normalizer) {
            (ParamTensor::Weights, _) => l.weights.data_mut()[id.index] = value,
            (ParamTensor::Bias, _) => l.bias[id.index] = value,
            (ParamTensor::Gamma, Normalizer::BatchNorm(bn)) => bn.gamma[id.index] = value,
            (ParamTensor::Beta, Normalizer::BatchNorm(bn)) => bn.beta[id.index] = value,
            _ => panic!("{id} does not exist"),
        }
    }

    /// Forward pass. In training mode batch-norm running statistics are
    /// updated and dropout draws from `rng`; evaluation mode is deterministic.
    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<(Matrix, ForwardTrace)> {
        let (out, trace) = self.forward_with(x, mode, rng, None)?;
        if mode == Mode::Train {
            for (layer, lt) in self.layers.iter_mut().zip(&trace.layers) {
                if let (Normalizer::BatchNorm(bn), Some(cache)) = (&mut layer.normalizer, &lt.bn) {
                    bn.update_running(cache, x.rows());
                }
            }
        }
        Ok((out, trace))
    }

    /// Evaluation-mode forward pass without a trace.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        // Eval mode never draws from the generator
        let mut rng = Rng::new(0);
        Ok(self.forward_with(x, Mode::Eval, &mut rng, None)?.0)
    }

    /// Forward pass that leaves the network untouched.
    ///
    /// With `frozen`, each layer reuses that trace's min-max extremes and
    /// dropout masks instead of computing fresh ones. That makes the output
    /// the function whose exact gradient [`Network::backward`] computes.
    pub fn forward_with(
        &self,
        x: &Matrix,
        mode: Mode,
        rng: &mut Rng,
        frozen: Option<&ForwardTrace>,
    ) -> Result<(Matrix, ForwardTrace)> {
        if x.cols() != self.input_dim {
            return Err(Error::config(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        if let Some(f) = frozen {
            if f.layers.len() != self.layers.len() {
                return Err(Error::Inconsistent("frozen trace has the wrong depth".into()));
            }
        }
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.matmul_transb(&layer.weights).map_err(divergence(i, "pre-activation"))?;
            z.add_row_vector(&layer.bias);
            z.ensure_finite("pre-activation").map_err(divergence(i, "pre-activation"))?;

            let (bn_cache, z_normalized) = match &layer.normalizer {
                Normalizer::BatchNorm(bn) => {
                    let (out, cache) = bn.forward_frozen(&z, mode).map_err(divergence(i, "batch norm"))?;
                    (cache, Some(out))
                }
                _ => (None, None),
            };

            let act_in = z_normalized.as_ref().unwrap_or(&z);
            let act = layer.activation;
            let mut a = act_in.map(|v| act.forward(v)).map_err(divergence(i, "activation"))?;

            let minmax = match &layer.normalizer {
                Normalizer::MinMax(mm) => {
                    let stats = match frozen.and_then(|f| f.layers[i].minmax.as_ref()) {
                        Some(stats) => stats.clone(),
                        None => mm.forward(&a)?.1,
                    };
                    a = apply_minmax(&a, &stats).map_err(divergence(i, "min-max"))?;
                    Some(stats)
                }
                _ => None,
            };

            let dropout_mask = if layer.dropout > 0.0 && mode == Mode::Train {
                let mask = match frozen.and_then(|f| f.layers[i].dropout_mask.as_ref()) {
                    Some(m) => m.clone(),
                    None => dropout(&a, layer.dropout, mode, rng)?.1,
                };
                a.hadamard_inplace(&mask);
                Some(mask)
            } else {
                None
            };

            traces.push(LayerTrace {
                input: std::mem::replace(&mut current, a),
                z,
                bn: bn_cache,
                z_normalized,
                minmax,
                dropout_mask,
            });
        }
        Ok((current, ForwardTrace { mode, layers: traces }))
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// loss gradient with respect to the network output.
    pub fn backward(&self, trace: &ForwardTrace, d_loss: &Matrix) -> Result<Gradients> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::Inconsistent(format!(
                "trace has {} layers, network has {}",
                trace.layers.len(),
                self.layers.len()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_loss.clone();
        for (i, (layer, lt)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            if d.shape() != (lt.z.rows(), layer.fan_out()) || lt.input.cols() != layer.fan_in() {
                return Err(Error::Inconsistent(format!(
                    "layer {i}: gradient {}x{} does not fit the trace",
                    d.rows(),
                    d.cols()
                )));
            }
            if let Some(mask) = &lt.dropout_mask {
                d.hadamard_inplace(mask);
            }
            if let Some(stats) = &lt.minmax {
                d = minmax_backward(&d, stats);
            }
            let u = lt.activation_input();
            let act = layer.activation;
            for (di, &ui) in d.data_mut().iter_mut().zip(u.data()) {
                *di *= act.derivative(ui);
            }
            let (dz, gamma, beta) = match (&layer.normalizer, &lt.bn) {
                (Normalizer::BatchNorm(_), Some(cache)) => {
                    let (dz, dg, db) = bn_backward(&d, cache);
                    (dz, Some(dg), Some(db))
                }
                (Normalizer::BatchNorm(_), None) => {
                    return Err(Error::Inconsistent(format!(
                        "layer {i} has batch norm but the trace holds no batch statistics \
                         (backward needs a training-mode trace)"
                    )))
                }
                _ => (d, None, None),
            };
            let weights = dz.matmul_transa(&lt.input).map_err(divergence(i, "weight gradient"))?;
            let bias = dz.col_sums();
            if i > 0 {
                d = dz.matmul(&layer.weights).map_err(divergence(i, "input gradient"))?;
            } else {
                d = dz;
            }
            grads.push(LayerGradients {
                weights,
                bias,
                gamma,
                beta,
            });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Evaluation-mode loss, plus argmax accuracy for classification.
    pub fn evaluate(&self, x: &Matrix, target: &Matrix, task: Task) -> Result<EvalMetrics> {
        let pred = self.predict(x)?;
        let (loss, _) = mse_loss(&pred, target)?;
        let accuracy = match task {
            Task::Classify => {
                let hits = pred
                    .argmax_rows()
                    .iter()
                    .zip(target.argmax_rows())
                    .filter(|(a, b)| **a == *b)
                    .count();
                Some(hits as f64 / pred.rows() as f64)
            }
            Task::Autoencode => None,
        };
        Ok(EvalMetrics { loss, accuracy })
    }

    /// One training step: forward, loss, backward, Adam. Returns the batch loss.
    pub fn train_step(
        &mut self,
        x: &Matrix,
        target: &Matrix,
        adam: &mut AdamState,
        rng: &mut Rng,
    ) -> Result<f64> {
        let (pred, trace) = self.forward(x, Mode::Train, rng)?;
        let (loss, d_loss) = mse_loss(&pred, target)?;
        let grads = self.backward(&trace, &d_loss)?;
        adam.step(&mut self.params_mut(), &grads.slices())?;
        Ok(loss)
    }
}
