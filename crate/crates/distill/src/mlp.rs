//! The multi-layer perceptron being meta-trained, on top of the tape engine.
//!
//! Two forward paths are provided: a plain `ndarray` one for fast
//! prediction, and a tape-recorded one for training; both share the same
//! dropout-mask sampling so they agree exactly under the same random stream.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grammar::Object;
use crate::rng::Rng;

/// Clamp bound for probabilities inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Network architecture description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MLPConfig {
    /// Number of input features (one ±1 input per object feature).
    pub input_dim: usize,
    /// Number of hidden layers.
    pub depth: usize,
    /// Hidden layer width.
    pub hidden: usize,
    /// Dropout probability on hidden activations, train mode only.
    pub dropout_rate: f64,
    /// Add each hidden block's input to its output when the widths match.
    pub skip_connections: bool,
}

impl MLPConfig {
    /// The baseline architecture: hidden 128, 5 layers, dropout 0.1.
    pub fn baseline(input_dim: usize) -> MLPConfig {
        MLPConfig { input_dim, depth: 5, hidden: 128, dropout_rate: 0.1, skip_connections: false }
    }

    /// The modified architecture: hidden 256 with skip connections.
    pub fn modified(input_dim: usize) -> MLPConfig {
        MLPConfig { input_dim, depth: 5, hidden: 256, dropout_rate: 0.1, skip_connections: true }
    }

    /// A small architecture for fast experiments and tests.
    pub fn tiny(input_dim: usize) -> MLPConfig {
        MLPConfig { input_dim, depth: 3, hidden: 64, dropout_rate: 0.0, skip_connections: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.depth < 1 || self.hidden < 1 {
            return Err(Error::InvalidArgument(format!(
                "bad MLP dimensions: input {}, depth {}, hidden {}",
                self.input_dim, self.depth, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer: `depth` hidden layers then
    /// the single-logit output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.depth {
            dims.push((prev, self.hidden));
            prev = self.hidden;
        }
        dims.push((prev, 1));
        dims
    }
}

/// Forward mode: dropout is active only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// The network parameters: weight and bias pairs in layer order
/// (`W_0, b_0, W_1, b_1, ...`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    /// Fan-in-scaled uniform initialization: each weight and bias entry
    /// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(config: &MLPConfig, rng: &mut Rng) -> Result<ParamSet> {
        config.validate()?;
        let mut tensors = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Array2::zeros((fan_in, fan_out));
            for x in w.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
            let mut b = Array2::zeros((1, fan_out));
            for x in b.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
            tensors.push(w);
            tensors.push(b);
        }
        Ok(ParamSet { tensors })
    }

    /// All-zero parameters of the configured shapes.
    pub fn zeros(config: &MLPConfig) -> Result<ParamSet> {
        config.validate()?;
        let mut tensors = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            tensors.push(Array2::zeros((fan_in, fan_out)));
            tensors.push(Array2::zeros((1, fan_out)));
        }
        Ok(ParamSet { tensors })
    }

    pub fn validate(&self, config: &MLPConfig) -> Result<()> {
        let dims = config.layer_dims();
        if self.tensors.len() != 2 * dims.len() {
            return Err(Error::InvalidArgument(format!(
                "param set has {} tensors, config needs {}",
                self.tensors.len(),
                2 * dims.len()
            )));
        }
        for (i, (fan_in, fan_out)) in dims.iter().enumerate() {
            let (w, b) = (&self.tensors[2 * i], &self.tensors[2 * i + 1]);
            if w.dim() != (*fan_in, *fan_out) || b.dim() != (1, *fan_out) {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: got {:?}/{:?}, config needs ({fan_in}, {fan_out})",
                    w.dim(),
                    b.dim()
                )));
            }
        }
        if self.tensors.iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Divergence("non-finite parameter value".into()));
        }
        Ok(())
    }
}

/// ±1 encoding of a batch of objects: bit 0 -> -1, bit 1 -> +1, shape
/// `[batch, n_features]`.
pub fn encode_objects(objects: &[Object], n_features: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((objects.len(), n_features));
    for (i, o) in objects.iter().enumerate() {
        if o.len() != n_features {
            return Err(Error::InvalidArgument(format!(
                "object {} does not have {n_features} features",
                o.bitstring()
            )));
        }
        for (j, &b) in o.bits().iter().enumerate() {
            out[(i, j)] = if b == 1 { 1.0 } else { -1.0 };
        }
    }
    Ok(out)
}

/// Inverted-dropout masks for each hidden layer: entries are 0 with
/// probability `rate`, else `1/(1-rate)`. `None` per layer when dropout is
/// inactive.
fn sample_dropout_masks(
    config: &MLPConfig,
    batch: usize,
    mode: Mode,
    rng: &mut Rng,
) -> Vec<Option<Array2<f64>>> {
    let active = mode == Mode::Train && config.dropout_rate > 0.0;
    (0..config.depth)
        .map(|_| {
            if !active {
                return None;
            }
            let keep = 1.0 - config.dropout_rate;
            let mut m = Array2::zeros((batch, config.hidden));
            for x in m.iter_mut() {
                *x = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
            }
            Some(m)
        })
        .collect()
}

/// Plain forward pass: P(category A) per object in the batch.
///
/// `rng` is consumed only when `mode` is `Train` and dropout is configured.
pub fn forward(
    params: &ParamSet,
    config: &MLPConfig,
    objects: &[Object],
    mode: Mode,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    params.validate(config)?;
    let x = encode_objects(objects, config.input_dim)?;
    let masks = sample_dropout_masks(config, objects.len(), mode, rng);
    let mut h = x;
    for layer in 0..config.depth {
        let (w, b) = (&params.tensors[2 * layer], &params.tensors[2 * layer + 1]);
        let mut out = h.dot(w) + b;
        out.mapv_inplace(|v| v.max(0.0));
        if config.skip_connections && h.dim() == out.dim() {
            out += &h;
        }
        if let Some(m) = &masks[layer] {
            out *= m;
        }
        h = out;
    }
    let (w, b) = (
        &params.tensors[2 * config.depth],
        &params.tensors[2 * config.depth + 1],
    );
    let logits = h.dot(w) + b;
    Ok(logits.column(0).iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect())
}

/// Tape-recorded forward pass over already-leafed parameter variables,
/// returning the `[batch, 1]` probability node. Mirrors [`forward`] exactly,
/// including the dropout stream.
pub fn forward_on_tape(
    tape: &Tape,
    param_vars: &[Var],
    config: &MLPConfig,
    objects: &[Object],
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    if param_vars.len() != 2 * (config.depth + 1) {
        return Err(Error::InvalidArgument(format!(
            "expected {} parameter variables, got {}",
            2 * (config.depth + 1),
            param_vars.len()
        )));
    }
    let x = encode_objects(objects, config.input_dim)?;
    let masks = sample_dropout_masks(config, objects.len(), mode, rng);
    let mut h = tape.leaf(x);
    for layer in 0..config.depth {
        let (w, b) = (param_vars[2 * layer], param_vars[2 * layer + 1]);
        let pre = tape.add_row_bias(tape.matmul(h, w)?, b)?;
        let mut out = tape.relu(pre);
        if config.skip_connections && tape.value(h).dim() == tape.value(out).dim() {
            out = tape.add(out, h)?;
        }
        if let Some(m) = &masks[layer] {
            out = tape.mul(out, tape.leaf(m.clone()))?;
        }
        h = out;
    }
    let (w, b) = (param_vars[2 * config.depth], param_vars[2 * config.depth + 1]);
    let logits = tape.add_row_bias(tape.matmul(h, w)?, b)?;
    Ok(tape.sigmoid(logits))
}

/// Mean binary cross-entropy of a `[batch, 1]` probability node against
/// labels, clamping probabilities into `[1e-12, 1 - 1e-12]`.
pub fn bce_loss_on_tape(tape: &Tape, probs: Var, labels: &[u8]) -> Result<Var> {
    let n = labels.len();
    if tape.value(probs).dim() != (n, 1) {
        return Err(Error::InvalidArgument(format!(
            "bce: probabilities {:?} vs {n} labels",
            tape.value(probs).dim()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("bce over an empty batch".into()));
    }
    let y = tape.leaf(Array2::from_shape_fn((n, 1), |(i, _)| labels[i] as f64));
    let one = tape.broadcast_scalar(tape.scalar(1.0), (n, 1))?;
    let p = tape.clamp(probs, BCE_EPS, 1.0 - BCE_EPS)?;
    let pos = tape.mul(y, tape.ln(p))?;
    let neg = tape.mul(tape.sub(one, y)?, tape.ln(tape.sub(one, p)?))?;
    let total = tape.add(pos, neg)?;
    Ok(tape.neg(tape.mean_all(total)))
}

/// Plain-value mean binary cross-entropy, identical formula to
/// [`bce_loss_on_tape`].
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::InvalidArgument("bce: length mismatch or empty".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// Leaf every parameter tensor onto a tape, in order.
pub fn leaf_params(tape: &Tape, params: &ParamSet) -> Vec<Var> {
    params.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
}
