//! The residual self-attention graph encoder.
//!
//! Each layer runs a residual self-attention sub-layer (graph-convolved
//! query/key/value projections, attention logits carried over from the
//! previous layer, a graph convolution over the attended values) followed by
//! a two-convolution sub-layer, with layer normalization around both.
//!
//! Attention logits are chained across layers pre-softmax (the internal
//! residual); the attention output is added back onto the layer input (the
//! external residual). Both can be disabled for ablations, as can the whole
//! self-attention sub-layer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::mathx;
use crate::numerics::{Param, ShapeError, Tape, Tensor2, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// The configurable activation applied by graph convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Encoder-wide switches. `no_self_attention` bypasses the attention
/// sub-layer entirely; `no_residual` drops both the chained attention logits
/// and the additive skip around the attention output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncoderOptions {
    pub activation: Activation,
    pub no_self_attention: bool,
    pub no_residual: bool,
}

/// Learnable weights of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RsgnnLayerParams {
    pub w_q: Param,
    pub w_k: Param,
    pub w_v: Param,
    pub w_l: Param,
    pub gcn1: Param,
    pub gcn2: Param,
    pub ln1_gain: Param,
    pub ln1_bias: Param,
    pub ln2_gain: Param,
    pub ln2_bias: Param,
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let a = mathx::sqrt(6.0 / (rows + cols) as f64);
    Tensor2::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

impl RsgnnLayerParams {
    pub fn init(h: usize, rng: &mut ChaCha8Rng) -> Self {
        let mat = |rng: &mut ChaCha8Rng| Param::new(glorot_uniform(h, h, rng));
        let ones = || Param::new(Tensor2::from_fn(1, h, |_, _| 1.0));
        let zeros = || Param::new(Tensor2::zeros(1, h));
        Self {
            w_q: mat(rng),
            w_k: mat(rng),
            w_v: mat(rng),
            w_l: mat(rng),
            gcn1: mat(rng),
            gcn2: mat(rng),
            ln1_gain: ones(),
            ln1_bias: zeros(),
            ln2_gain: ones(),
            ln2_bias: zeros(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_q.value.rows()
    }

    /// Field names and params in a fixed order, for optimizers/checkpoints.
    pub fn fields(&self) -> [(&'static str, &Param); 10] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_l", &self.w_l),
            ("gcn1", &self.gcn1),
            ("gcn2", &self.gcn2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    pub fn fields_mut(&mut self) -> [(&'static str, &mut Param); 10] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_l", &mut self.w_l),
            ("gcn1", &mut self.gcn1),
            ("gcn2", &mut self.gcn2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }
}

/// Tape handles for one layer's registered weights.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_l: Var,
    pub gcn1: Var,
    pub gcn2: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

impl LayerVars {
    /// Vars in the same order as [`RsgnnLayerParams::fields`].
    pub fn ordered(&self) -> [Var; 10] {
        [
            self.w_q, self.w_k, self.w_v, self.w_l, self.gcn1, self.gcn2, self.ln1_gain,
            self.ln1_bias, self.ln2_gain, self.ln2_bias,
        ]
    }
}

/// Register a layer's weights as leaves on `tape`.
pub fn register_layer(tape: &mut Tape, layer: &RsgnnLayerParams) -> LayerVars {
    LayerVars {
        w_q: tape.leaf(layer.w_q.value.clone()),
        w_k: tape.leaf(layer.w_k.value.clone()),
        w_v: tape.leaf(layer.w_v.value.clone()),
        w_l: tape.leaf(layer.w_l.value.clone()),
        gcn1: tape.leaf(layer.gcn1.value.clone()),
        gcn2: tape.leaf(layer.gcn2.value.clone()),
        ln1_gain: tape.leaf(layer.ln1_gain.value.clone()),
        ln1_bias: tape.leaf(layer.ln1_bias.value.clone()),
        ln2_gain: tape.leaf(layer.ln2_gain.value.clone()),
        ln2_bias: tape.leaf(layer.ln2_bias.value.clone()),
    }
}

/// Graph convolution projection: `act(P x w)` where `P` is the
/// row-normalized adjacency with self-connections.
pub fn gcn_project(
    tape: &mut Tape,
    x: Var,
    padj: Var,
    w: Var,
    act: Activation,
) -> Result<Var, ShapeError> {
    let px = tape.matmul(padj, x)?;
    let pxw = tape.matmul(px, w)?;
    Ok(act.apply(tape, pxw))
}

/// Output of [`residual_attention`].
pub struct AttentionOut {
    /// Pre-softmax scores including the carried-over logits; what the next
    /// layer receives as `prev`.
    pub logits: Var,
    /// Row-stochastic attention matrix.
    pub attn: Var,
    /// Attention sub-layer output before the external residual.
    pub x_attn: Var,
}

/// Attention with chained scores: `attn = softmax(q kᵀ / sqrt(H) + prev)`
/// and `x_attn = act(P (attn v) w_l)`. With `use_prev` false the carried
/// logits are ignored.
pub fn residual_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    prev: Var,
    padj: Var,
    w_l: Var,
    act: Activation,
    use_prev: bool,
) -> Result<AttentionOut, ShapeError> {
    let h = tape.value(q).cols();
    let kt = tape.transpose(k);
    let qk = tape.matmul(q, kt)?;
    let scaled = tape.scale(qk, 1.0 / mathx::sqrt(h as f64));
    let logits = if use_prev {
        tape.add(scaled, prev)?
    } else {
        scaled
    };
    let attn = tape.softmax_rows(logits);
    let av = tape.matmul(attn, v)?;
    let pav = tape.matmul(padj, av)?;
    let pavw = tape.matmul(pav, w_l)?;
    let x_attn = act.apply(tape, pavw);
    Ok(AttentionOut {
        logits,
        attn,
        x_attn,
    })
}

/// Residual self-attention sub-layer. Returns its output (with the external
/// residual unless disabled) and the logits to chain into the next layer.
pub fn rsm_sublayer(
    tape: &mut Tape,
    x: Var,
    padj: Var,
    layer: &LayerVars,
    prev: Var,
    opts: &EncoderOptions,
) -> Result<(Var, Var), ShapeError> {
    let act = opts.activation;
    let q = gcn_project(tape, x, padj, layer.w_q, act)?;
    let k = gcn_project(tape, x, padj, layer.w_k, act)?;
    let v = gcn_project(tape, x, padj, layer.w_v, act)?;
    let out = residual_attention(
        tape,
        q,
        k,
        v,
        prev,
        padj,
        layer.w_l,
        act,
        !opts.no_residual,
    )?;
    let combined = if opts.no_residual {
        out.x_attn
    } else {
        tape.add(x, out.x_attn)?
    };
    Ok((combined, out.logits))
}

/// Two-convolution sub-layer with a fixed inner relu.
pub fn gcn_sublayer(
    tape: &mut Tape,
    x: Var,
    padj: Var,
    layer: &LayerVars,
    opts: &EncoderOptions,
) -> Result<Var, ShapeError> {
    let inner = gcn_project(tape, x, padj, layer.gcn1, Activation::Identity)?;
    let rectified = tape.relu(inner);
    gcn_project(tape, rectified, padj, layer.gcn2, opts.activation)
}

/// One full encoder layer: normalized attention block, then normalized
/// convolution block. Returns the layer output and the chained logits.
pub fn rsgnn_layer(
    tape: &mut Tape,
    x: Var,
    padj: Var,
    layer: &LayerVars,
    prev: Var,
    opts: &EncoderOptions,
) -> Result<(Var, Var), ShapeError> {
    let (attended, new_prev) = if opts.no_self_attention {
        (x, prev)
    } else {
        rsm_sublayer(tape, x, padj, layer, prev, opts)?
    };
    let x_tilde = tape.layer_norm_rows(attended, layer.ln1_gain, layer.ln1_bias, LAYER_NORM_EPS)?;
    let conv = gcn_sublayer(tape, x_tilde, padj, layer, opts)?;
    let summed = tape.add(x_tilde, conv)?;
    let x_next = tape.layer_norm_rows(summed, layer.ln2_gain, layer.ln2_bias, LAYER_NORM_EPS)?;
    Ok((x_next, new_prev))
}

/// Fold the layer stack over `x0`, chaining attention logits from zeros.
pub fn encode(
    tape: &mut Tape,
    x0: Var,
    padj: Var,
    layers: &[LayerVars],
    opts: &EncoderOptions,
) -> Result<Var, ShapeError> {
    let n = tape.value(x0).rows();
    if tape.value(padj).shape() != (n, n) {
        return Err(ShapeError::new(
            "encode",
            format!("adjacency {:?} for {n} nodes", tape.value(padj).shape()),
        ));
    }
    let mut x = x0;
    let mut prev = tape.constant(Tensor2::zeros(n, n));
    for layer in layers {
        let (next, new_prev) = rsgnn_layer(tape, x, padj, layer, prev, opts)?;
        x = next;
        prev = new_prev;
    }
    Ok(x)
}

/// Encode with frozen weights, returning plain values (no gradients kept).
pub fn encode_frozen(
    x0: &Tensor2,
    padj: &Tensor2,
    stack: &[RsgnnLayerParams],
    opts: &EncoderOptions,
) -> Result<Tensor2, ShapeError> {
    let mut tape = Tape::new();
    let x0v = tape.constant(x0.clone());
    let padjv = tape.constant(padj.clone());
    let layer_vars: Vec<LayerVars> = stack
        .iter()
        .map(|layer| {
            let fields = layer.fields();
            LayerVars {
                w_q: tape.constant(fields[0].1.value.clone()),
                w_k: tape.constant(fields[1].1.value.clone()),
                w_v: tape.constant(fields[2].1.value.clone()),
                w_l: tape.constant(fields[3].1.value.clone()),
                gcn1: tape.constant(fields[4].1.value.clone()),
                gcn2: tape.constant(fields[5].1.value.clone()),
                ln1_gain: tape.constant(fields[6].1.value.clone()),
                ln1_bias: tape.constant(fields[7].1.value.clone()),
                ln2_gain: tape.constant(fields[8].1.value.clone()),
                ln2_bias: tape.constant(fields[9].1.value.clone()),
            }
        })
        .collect();
    let out = encode(&mut tape, x0v, padjv, &layer_vars, opts)?;
    Ok(tape.value(out).clone())
}

/// Shape-validated encoder stack check against an input width.
pub fn validate_stack(stack: &[RsgnnLayerParams], h: usize) -> Result<(), ShapeError> {
    for (i, layer) in stack.iter().enumerate() {
        for (name, p) in layer.fields() {
            let want = if name.starts_with("ln") { (1, h) } else { (h, h) };
            if p.value.shape() != want {
                return Err(ShapeError::new(
                    "validate_stack",
                    format!(
                        "layer {i} {name} is {:?}, expected {:?}",
                        p.value.shape(),
                        want
                    ),
                ));
            }
        }
    }
    Ok(())
}

pub(crate) fn layer_param_name(layer: usize, field: &str) -> String {
    format!("encoder.{layer}.{field}")
}
