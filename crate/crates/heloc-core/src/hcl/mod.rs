//! Hierarchical contrastive pretraining.
//!
//! Two self-supervised objectives share the encoder: level prediction over
//! all nodes (cross-entropy against the depth pseudo-labels) and a triplet
//! hinge whose margin grows with the level gap of the negative. The two are
//! combined with learned log-uncertainty weights and optimized with Adam.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointError};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::{build_adjacency, sample_triplets, AstGraph, Caps, TripletBatch};
use crate::embed::{build_input_pack, EmbedderConfig};
use crate::mathx;
use crate::numerics::{Param, ShapeError, Tape, Tensor2, Var};
use crate::rsgnn::{
    encode, glorot_uniform, layer_param_name, register_layer, Activation, EncoderOptions,
    LayerVars, RsgnnLayerParams,
};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyCorpus,
    /// Nothing to optimize: level prediction disabled and no graph can
    /// produce a triplet (or both objectives disabled).
    NoTrainingSignal(String),
    LevelOutOfRange {
        level: usize,
        classes: usize,
    },
    BadCloneLabel(f64),
    Shape(ShapeError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyCorpus => write!(f, "training corpus is empty"),
            TrainError::NoTrainingSignal(msg) => write!(f, "no training signal: {msg}"),
            TrainError::LevelOutOfRange { level, classes } => write!(
                f,
                "node level {level} outside the {classes} level classes (tree deeper than max_depth)"
            ),
            TrainError::BadCloneLabel(y) => write!(f, "clone label must be 1 or -1, got {y}"),
            TrainError::Shape(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

impl From<ShapeError> for TrainError {
    fn from(e: ShapeError) -> Self {
        TrainError::Shape(e)
    }
}

/// All pretraining hyperparameters. The default is the full-scale profile;
/// [`TrainConfig::desk`] is the small profile used by the test experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Embedding and hidden dimension H.
    pub h: usize,
    /// Encoder depth N_D.
    pub layers: usize,
    pub max_depth: usize,
    pub max_paths: usize,
    pub max_nodes: usize,
    pub lr: f64,
    /// Graphs per optimization step.
    pub batch_size: usize,
    pub steps: usize,
    /// Base triplet margin added on top of the level gap.
    pub margin: f64,
    /// Triplets sampled per graph per step (capped at the node count).
    pub triplets_per_graph: usize,
    pub seed: u64,
    pub no_nep: bool,
    pub no_nro: bool,
    pub no_self_attention: bool,
    pub no_residual: bool,
    pub activation: Activation,
    pub ngram_sizes: Vec<usize>,
    pub hash_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            h: 768,
            layers: 4,
            max_depth: 30,
            max_paths: 200,
            max_nodes: 1000,
            lr: 1e-4,
            batch_size: 2048,
            steps: 1000,
            margin: 1.0,
            triplets_per_graph: 1000,
            seed: 42,
            no_nep: false,
            no_nro: false,
            no_self_attention: false,
            no_residual: false,
            activation: Activation::Relu,
            ngram_sizes: alloc::vec![3, 4],
            hash_seed: 0x48454c43,
        }
    }
}

impl TrainConfig {
    /// Small profile sized for desk experiments and the acceptance suite.
    pub fn desk() -> Self {
        Self {
            h: 32,
            layers: 2,
            max_depth: 8,
            batch_size: 16,
            steps: 500,
            lr: 1e-2,
            triplets_per_graph: 64,
            ..Self::default()
        }
    }

    /// Number of level classes C = max_depth + 1.
    pub fn classes(&self) -> usize {
        self.max_depth + 1
    }

    pub fn caps(&self) -> Caps {
        Caps {
            max_depth: self.max_depth,
            max_paths: self.max_paths,
            max_nodes: self.max_nodes,
        }
    }

    pub fn embedder(&self) -> EmbedderConfig {
        EmbedderConfig {
            dim: self.h,
            ngram_sizes: self.ngram_sizes.clone(),
            hash_seed: self.hash_seed,
        }
    }

    pub fn encoder_options(&self) -> EncoderOptions {
        EncoderOptions {
            activation: self.activation,
            no_self_attention: self.no_self_attention,
            no_residual: self.no_residual,
        }
    }

    /// Serialize as `key=value` lines (also the CLI config-file syntax).
    pub fn to_kv_text(&self) -> String {
        let sizes: Vec<String> = self.ngram_sizes.iter().map(|s| format!("{s}")).collect();
        format!(
            "h={}\nlayers={}\nmax_depth={}\nmax_paths={}\nmax_nodes={}\nlr={}\nbatch_size={}\nsteps={}\nmargin={}\ntriplets_per_graph={}\nseed={}\nno_nep={}\nno_nro={}\nno_self_attention={}\nno_residual={}\nactivation={}\nngram_sizes={}\nhash_seed={}\n",
            self.h,
            self.layers,
            self.max_depth,
            self.max_paths,
            self.max_nodes,
            self.lr,
            self.batch_size,
            self.steps,
            self.margin,
            self.triplets_per_graph,
            self.seed,
            self.no_nep,
            self.no_nro,
            self.no_self_attention,
            self.no_residual,
            self.activation.name(),
            sizes.join(","),
            self.hash_seed,
        )
    }

    /// Apply `key=value` lines over `self`. Unknown keys and unparsable
    /// values are rejected. Blank lines and `#` comments are allowed.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), String> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got `{line}`", idx + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| format!("line {}: bad {what} `{value}` for key `{key}`", idx + 1);
            match key {
                "h" => self.h = value.parse().map_err(|_| bad("integer"))?,
                "layers" => self.layers = value.parse().map_err(|_| bad("integer"))?,
                "max_depth" => self.max_depth = value.parse().map_err(|_| bad("integer"))?,
                "max_paths" => self.max_paths = value.parse().map_err(|_| bad("integer"))?,
                "max_nodes" => self.max_nodes = value.parse().map_err(|_| bad("integer"))?,
                "lr" => self.lr = value.parse().map_err(|_| bad("number"))?,
                "batch_size" => self.batch_size = value.parse().map_err(|_| bad("integer"))?,
                "steps" => self.steps = value.parse().map_err(|_| bad("integer"))?,
                "margin" => self.margin = value.parse().map_err(|_| bad("number"))?,
                "triplets_per_graph" => {
                    self.triplets_per_graph = value.parse().map_err(|_| bad("integer"))?
                }
                "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
                "no_nep" => self.no_nep = value.parse().map_err(|_| bad("boolean"))?,
                "no_nro" => self.no_nro = value.parse().map_err(|_| bad("boolean"))?,
                "no_self_attention" => {
                    self.no_self_attention = value.parse().map_err(|_| bad("boolean"))?
                }
                "no_residual" => self.no_residual = value.parse().map_err(|_| bad("boolean"))?,
                "activation" => {
                    self.activation =
                        Activation::parse(value).ok_or_else(|| bad("activation name"))?
                }
                "ngram_sizes" => {
                    let sizes: Result<Vec<usize>, _> =
                        value.split(',').map(|s| s.trim().parse()).collect();
                    let sizes = sizes.map_err(|_| bad("size list"))?;
                    if sizes.is_empty() {
                        return Err(bad("size list"));
                    }
                    self.ngram_sizes = sizes;
                }
                "hash_seed" => self.hash_seed = value.parse().map_err(|_| bad("integer"))?,
                other => return Err(format!("line {}: unknown key `{other}`", idx + 1)),
            }
        }
        Ok(())
    }
}

/// Every learnable weight: the encoder stack, the level classifier, and the
/// two log-uncertainty scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct HclParams {
    pub encoder: Vec<RsgnnLayerParams>,
    pub w_ast: Param,
    pub b_ast: Param,
    pub theta_p: Param,
    pub tau_p: Param,
}

impl HclParams {
    pub fn init(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let encoder = (0..cfg.layers)
            .map(|_| RsgnnLayerParams::init(cfg.h, rng))
            .collect();
        Self {
            encoder,
            w_ast: Param::new(glorot_uniform(cfg.h, cfg.classes(), rng)),
            b_ast: Param::new(Tensor2::zeros(1, cfg.classes())),
            theta_p: Param::new(Tensor2::scalar(0.0)),
            tau_p: Param::new(Tensor2::scalar(0.0)),
        }
    }

    /// Zero-valued parameters of the shapes implied by `cfg` (used when
    /// loading checkpoints).
    pub fn zeros(cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = Self::init(cfg, &mut rng);
        for (_, p) in params.named_params_mut() {
            p.value.fill(0.0);
        }
        params
    }

    /// `(name, param)` pairs in the canonical walk order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.iter().enumerate() {
            for (field, p) in layer.fields() {
                out.push((layer_param_name(i, field), p));
            }
        }
        out.push((String::from("w_ast"), &self.w_ast));
        out.push((String::from("b_ast"), &self.b_ast));
        out.push((String::from("theta_p"), &self.theta_p));
        out.push((String::from("tau_p"), &self.tau_p));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            for (field, p) in layer.fields_mut() {
                out.push((layer_param_name(i, field), p));
            }
        }
        out.push((String::from("w_ast"), &mut self.w_ast));
        out.push((String::from("b_ast"), &mut self.b_ast));
        out.push((String::from("theta_p"), &mut self.theta_p));
        out.push((String::from("tau_p"), &mut self.tau_p));
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta_p.value.item()
    }

    pub fn tau(&self) -> f64 {
        self.tau_p.value.item()
    }
}

/// Registered tape handles for the whole model, ordered like
/// [`HclParams::named_params`].
pub struct ModelVars {
    pub layers: Vec<LayerVars>,
    pub w_ast: Var,
    pub b_ast: Var,
    pub theta_p: Var,
    pub tau_p: Var,
}

impl ModelVars {
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.ordered());
        }
        out.push(self.w_ast);
        out.push(self.b_ast);
        out.push(self.theta_p);
        out.push(self.tau_p);
        out
    }
}

pub fn register_model(tape: &mut Tape, params: &HclParams) -> ModelVars {
    ModelVars {
        layers: params
            .encoder
            .iter()
            .map(|layer| register_layer(tape, layer))
            .collect(),
        w_ast: tape.leaf(params.w_ast.value.clone()),
        b_ast: tape.leaf(params.b_ast.value.clone()),
        theta_p: tape.leaf(params.theta_p.value.clone()),
        tau_p: tape.leaf(params.tau_p.value.clone()),
    }
}

/// Level logits from encoded nodes: `x W_ast + b_ast` per row.
pub fn nep_logits(tape: &mut Tape, x_nd: Var, w_ast: Var, b_ast: Var) -> Result<Var, ShapeError> {
    let xw = tape.matmul(x_nd, w_ast)?;
    tape.add_row_broadcast(xw, b_ast)
}

/// Frozen-path level logits.
pub fn nep_logits_frozen(x_nd: &Tensor2, params: &HclParams) -> Result<Tensor2, ShapeError> {
    let mut tape = Tape::new();
    let x = tape.constant(x_nd.clone());
    let w = tape.constant(params.w_ast.value.clone());
    let b = tape.constant(params.b_ast.value.clone());
    let logits = nep_logits(&mut tape, x, w, b)?;
    Ok(tape.value(logits).clone())
}

/// Summed cross-entropy of per-node level logits against the level
/// pseudo-labels. Errors when a level is outside the class range (the tree
/// exceeded the depth cap upstream).
pub fn nep_loss(logits: &Tensor2, levels: &[usize]) -> Result<f64, TrainError> {
    if let Some(&bad) = levels.iter().find(|&&l| l >= logits.cols()) {
        return Err(TrainError::LevelOutOfRange {
            level: bad,
            classes: logits.cols(),
        });
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy_rows(l, levels, 0.0)?;
    Ok(tape.value(loss).item())
}

/// Summed triplet hinge over encoded nodes: for each triple,
/// `[ d(anc,pos)^2 - d(anc,neg)^2 + delta_l + margin ]_+`.
pub fn nro_loss(x_nd: &Tensor2, batch: &TripletBatch, margin: f64) -> Result<f64, TrainError> {
    let deltas: Vec<f64> = batch.delta_l.iter().map(|&d| d as f64).collect();
    let mut tape = Tape::new();
    let x = tape.constant(x_nd.clone());
    let loss = tape.triplet_hinge(x, &batch.triples, &deltas, margin)?;
    Ok(tape.value(loss).item())
}

/// Uncertainty-weighted combination of the two losses:
/// `exp(-2 theta') l_h + exp(-2 tau') l_t + theta' + tau'`.
pub fn joint_loss(l_h: f64, l_t: f64, theta_p: f64, tau_p: f64) -> f64 {
    mathx::exp(-2.0 * theta_p) * l_h + mathx::exp(-2.0 * tau_p) * l_t + theta_p + tau_p
}

/// Bias-corrected Adam over the canonical parameter walk.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update in place from each param's accumulated `grad`.
    pub fn step(&mut self, params: &mut [(String, &mut Param)]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|(_, p)| Tensor2::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state mismatch");
        self.t += 1;
        let bc1 = 1.0 - pow_int(self.beta1, self.t);
        let bc2 = 1.0 - pow_int(self.beta2, self.t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.value.data().len() {
                let g = p.grad.data()[j];
                let mj = self.beta1 * m.data()[j] + (1.0 - self.beta1) * g;
                let vj = self.beta2 * v.data()[j] + (1.0 - self.beta2) * g * g;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                p.value.data_mut()[j] -= self.lr * mhat / (mathx::sqrt(vhat) + self.eps);
            }
        }
    }
}

fn pow_int(base: f64, exp: u64) -> f64 {
    let mut out = 1.0;
    let mut b = base;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            out *= b;
        }
        b *= b;
        e >>= 1;
    }
    out
}

/// Per-graph precomputation shared by pretraining and the downstream tasks.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub x0_ast: Tensor2,
    /// Row-normalized adjacency with self-connections.
    pub padj: Tensor2,
    pub levels: Vec<usize>,
    /// Whether any triplet anchor exists in this graph.
    pub has_anchors: bool,
}

impl PreparedGraph {
    pub fn node_count(&self) -> usize {
        self.levels.len()
    }
}

pub fn prepare_graph(graph: &AstGraph, embedder: &EmbedderConfig) -> PreparedGraph {
    let pack = build_input_pack(graph, embedder);
    let padj = build_adjacency(graph).normalized();
    let (_, no_anchor) = sample_triplets(graph, 0, 0);
    PreparedGraph {
        x0_ast: pack.x0_ast,
        padj,
        levels: graph.levels().to_vec(),
        has_anchors: !no_anchor,
    }
}

/// One graph's contribution to a training step.
#[derive(Debug, Clone, Copy)]
pub struct GraphJob {
    pub graph: usize,
    pub triplet_seed: u64,
}

/// Loss values and ordered parameter gradients from one graph.
pub struct GraphGrad {
    pub l_h: f64,
    pub l_t: f64,
    /// The weighted per-graph loss `exp(-2 theta') l_h + exp(-2 tau') l_t`.
    pub weighted: f64,
    pub grads: Vec<Option<Tensor2>>,
}

/// Shared read-only state for the jobs of one step.
pub struct StepContext<'a> {
    pub params: &'a HclParams,
    pub prepared: &'a [PreparedGraph],
    pub cfg: &'a TrainConfig,
}

/// Strategy for evaluating a batch of graph jobs. Results must line up with
/// `jobs` by index; gradient reduction happens in job order either way, so
/// any execution schedule produces identical training runs.
pub trait BatchRunner {
    fn run(&self, ctx: &StepContext<'_>, jobs: &[GraphJob]) -> Result<Vec<GraphGrad>, TrainError>;
}

/// In-order, single-threaded runner.
pub struct SequentialRunner;

impl BatchRunner for SequentialRunner {
    fn run(&self, ctx: &StepContext<'_>, jobs: &[GraphJob]) -> Result<Vec<GraphGrad>, TrainError> {
        jobs.iter().map(|job| grad_one_graph(ctx, job)).collect()
    }
}

/// Forward and backward for a single graph: encode, apply the enabled
/// objectives, and return the uncertainty-weighted loss gradients.
pub fn grad_one_graph(ctx: &StepContext<'_>, job: &GraphJob) -> Result<GraphGrad, TrainError> {
    let prepared = &ctx.prepared[job.graph];
    let cfg = ctx.cfg;
    let classes = cfg.classes();
    if let Some(&bad) = prepared.levels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::LevelOutOfRange {
            level: bad,
            classes,
        });
    }

    let mut tape = Tape::new();
    let model = register_model(&mut tape, ctx.params);
    let x0 = tape.constant(prepared.x0_ast.clone());
    let padj = tape.constant(prepared.padj.clone());
    let opts = cfg.encoder_options();
    let x_nd = encode(&mut tape, x0, padj, &model.layers, &opts)?;

    let mut l_h = 0.0;
    let mut l_t = 0.0;
    let mut terms: Vec<Var> = Vec::new();
    if !cfg.no_nep {
        let logits = nep_logits(&mut tape, x_nd, model.w_ast, model.b_ast)?;
        let lh = tape.cross_entropy_rows(logits, &prepared.levels, 0.0)?;
        l_h = tape.value(lh).item();
        let neg2 = tape.scale(model.theta_p, -2.0);
        let weight = tape.exp(neg2);
        terms.push(tape.hadamard(weight, lh)?);
    }
    if !cfg.no_nro {
        let count = prepared.node_count().min(cfg.triplets_per_graph);
        let (batch, _) = crate::ast::sample_triplets_from_levels(
            &prepared.levels,
            count,
            job.triplet_seed,
        );
        let deltas: Vec<f64> = batch.delta_l.iter().map(|&d| d as f64).collect();
        let lt = tape.triplet_hinge(x_nd, &batch.triples, &deltas, cfg.margin)?;
        l_t = tape.value(lt).item();
        let neg2 = tape.scale(model.tau_p, -2.0);
        let weight = tape.exp(neg2);
        terms.push(tape.hadamard(weight, lt)?);
    }
    let loss = match terms.len() {
        0 => {
            return Err(TrainError::NoTrainingSignal(String::from(
                "both objectives disabled",
            )))
        }
        1 => terms[0],
        _ => tape.add(terms[0], terms[1])?,
    };

    let grads = tape.backward(loss, Tensor2::scalar(1.0))?;
    let ordered = model.ordered();
    Ok(GraphGrad {
        l_h,
        l_t,
        weighted: tape.value(loss).item(),
        grads: ordered.iter().map(|&v| grads.wrt(v).cloned()).collect(),
    })
}

/// One row of the training log (values as of the start of the step).
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub l_h: f64,
    pub l_t: f64,
    pub theta_p: f64,
    pub tau_p: f64,
}

#[derive(Debug)]
pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

pub fn pretrain(corpus: &[AstGraph], cfg: &TrainConfig) -> Result<PretrainOutput, TrainError> {
    pretrain_with(corpus, cfg, &SequentialRunner)
}

/// Pretrain on a corpus. Deterministic for a given config and seed under any
/// `BatchRunner`: job seeds are drawn before dispatch and gradients reduce
/// in job order.
pub fn pretrain_with(
    corpus: &[AstGraph],
    cfg: &TrainConfig,
    runner: &dyn BatchRunner,
) -> Result<PretrainOutput, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let embedder = cfg.embedder();
    let prepared: Vec<PreparedGraph> = corpus
        .iter()
        .map(|g| prepare_graph(g, &embedder))
        .collect();
    let classes = cfg.classes();
    for p in &prepared {
        if let Some(&bad) = p.levels.iter().find(|&&l| l >= classes) {
            return Err(TrainError::LevelOutOfRange {
                level: bad,
                classes,
            });
        }
    }

    let any_anchors = prepared.iter().any(|p| p.has_anchors);
    if cfg.no_nep && cfg.no_nro {
        return Err(TrainError::NoTrainingSignal(String::from(
            "both objectives disabled",
        )));
    }
    if cfg.no_nep && !any_anchors {
        return Err(TrainError::NoTrainingSignal(String::from(
            "level prediction disabled and no graph yields triplets",
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = HclParams::init(cfg, &mut rng);
    let mut adam = Adam::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.steps);

    let mut pool: Vec<usize> = (0..corpus.len()).collect();
    for step in 0..cfg.steps {
        let batch = draw_batch(&mut pool, cfg.batch_size, &mut rng);
        let jobs: Vec<GraphJob> = batch
            .iter()
            .map(|&graph| GraphJob {
                graph,
                triplet_seed: rng.random::<u64>(),
            })
            .collect();
        let ctx = StepContext {
            params: &params,
            prepared: &prepared,
            cfg,
        };
        let results = runner.run(&ctx, &jobs)?;

        params.zero_grads();
        let mut loss = 0.0;
        let mut l_h = 0.0;
        let mut l_t = 0.0;
        {
            let mut named = params.named_params_mut();
            for res in &results {
                loss += res.weighted;
                l_h += res.l_h;
                l_t += res.l_t;
                for (slot, grad) in named.iter_mut().zip(&res.grads) {
                    if let Some(g) = grad {
                        slot.1.grad.add_assign(g);
                    }
                }
            }
        }
        // The uncertainty regularizers enter the step loss once.
        if !cfg.no_nep {
            loss += params.theta();
            let g = params.theta_p.grad.get(0, 0) + 1.0;
            params.theta_p.grad.set(0, 0, g);
        }
        if !cfg.no_nro {
            loss += params.tau();
            let g = params.tau_p.grad.get(0, 0) + 1.0;
            params.tau_p.grad.set(0, 0, g);
        }
        log.push(StepLog {
            step,
            loss,
            l_h,
            l_t,
            theta_p: params.theta(),
            tau_p: params.tau(),
        });
        adam.step(&mut params.named_params_mut());
    }

    params.zero_grads();
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        params,
        rng_seed: rng.get_seed(),
        rng_word_pos: rng.get_word_pos(),
    };
    Ok(PretrainOutput { checkpoint, log })
}

/// Draw `k` distinct graph indices (all of them when the corpus is small),
/// by partial Fisher-Yates over a persistent pool.
fn draw_batch(pool: &mut [usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = pool.len();
    if k >= n {
        return pool.to_vec();
    }
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool[..k].to_vec()
}

#[cfg(test)]
mod tests;
