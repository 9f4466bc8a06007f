//! Downstream applications of the pretrained encoder: pooled code vectors,
//! classification fine-tuning, clone detection, clustering, and the metrics
//! used to evaluate them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hcl::{register_model, Adam, HclParams, PreparedGraph, TrainConfig};
use crate::mathx;
use crate::numerics::{Param, ShapeError, Tape, Tensor2};
use crate::rsgnn::{encode, encode_frozen, glorot_uniform, EncoderOptions};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskError {
    EmptyInput,
    ZeroVector,
    LabelOutOfRange { label: usize, classes: usize },
    BadCloneLabel(f64),
    KTooLarge { k: usize, count: usize },
    LengthMismatch { left: usize, right: usize },
    Shape(ShapeError),
}

impl fmt::Display for TaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskError::EmptyInput => write!(f, "empty input"),
            TaskError::ZeroVector => write!(f, "zero vector has no direction"),
            TaskError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} outside 0..{classes}")
            }
            TaskError::BadCloneLabel(y) => write!(f, "clone label must be 1 or -1, got {y}"),
            TaskError::KTooLarge { k, count } => {
                write!(f, "k = {k} exceeds the {count} available points")
            }
            TaskError::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            TaskError::Shape(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TaskError {}

impl From<ShapeError> for TaskError {
    fn from(e: ShapeError) -> Self {
        TaskError::Shape(e)
    }
}

/// Pooled snippet representation.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeVector {
    pub r: Vec<f64>,
}

/// Elementwise mean over node rows.
pub fn pool(x_nd: &Tensor2) -> Result<CodeVector, TaskError> {
    if x_nd.rows() == 0 {
        return Err(TaskError::EmptyInput);
    }
    let n = x_nd.rows() as f64;
    let mut r = vec![0.0; x_nd.cols()];
    for i in 0..x_nd.rows() {
        for (acc, v) in r.iter_mut().zip(x_nd.row(i)) {
            *acc += v;
        }
    }
    for v in &mut r {
        *v /= n;
    }
    Ok(CodeVector { r })
}

/// Encode a prepared graph with frozen weights and pool it.
pub fn code_vector(
    prepared: &PreparedGraph,
    params: &HclParams,
    opts: &EncoderOptions,
) -> Result<CodeVector, TaskError> {
    let x_nd = encode_frozen(&prepared.x0_ast, &prepared.padj, &params.encoder, opts)?;
    pool(&x_nd)
}

/// Linear classification head over code vectors with label smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w0: Param,
    pub b0: Param,
    pub smoothing: f64,
}

impl ClassifierHead {
    pub fn init(h: usize, classes: usize, smoothing: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&smoothing));
        Self {
            w0: Param::new(glorot_uniform(h, classes, rng)),
            b0: Param::new(Tensor2::zeros(1, classes)),
            smoothing,
        }
    }

    pub fn classes(&self) -> usize {
        self.w0.value.cols()
    }

    pub fn logits(&self, r: &CodeVector) -> Result<Vec<f64>, TaskError> {
        let x = Tensor2::from_vec(1, r.r.len(), r.r.clone()).map_err(TaskError::Shape)?;
        let y = x.matmul(&self.w0.value)?;
        Ok(y
            .row(0)
            .iter()
            .zip(self.b0.value.row(0))
            .map(|(a, b)| a + b)
            .collect())
    }
}

/// Smoothed cross-entropy of the head's softmax against `label`.
pub fn classify_loss(
    r: &CodeVector,
    label: usize,
    head: &ClassifierHead,
) -> Result<f64, TaskError> {
    let c = head.classes();
    if label >= c {
        return Err(TaskError::LabelOutOfRange { label, classes: c });
    }
    let logits = head.logits(r)?;
    let t = Tensor2::from_vec(1, c, logits).map_err(TaskError::Shape)?;
    let mut tape = Tape::new();
    let l = tape.constant(t);
    let loss = tape.cross_entropy_rows(l, &[label], head.smoothing)?;
    Ok(tape.value(loss).item())
}

/// Argmax over head logits; ties resolve to the lowest class index.
pub fn classify_predict(r: &CodeVector, head: &ClassifierHead) -> Result<usize, TaskError> {
    let logits = head.logits(r)?;
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Cosine similarity of two code vectors.
pub fn relatedness(r1: &CodeVector, r2: &CodeVector) -> Result<f64, TaskError> {
    if r1.r.len() != r2.r.len() {
        return Err(TaskError::LengthMismatch {
            left: r1.r.len(),
            right: r2.r.len(),
        });
    }
    let dot: f64 = r1.r.iter().zip(&r2.r).map(|(a, b)| a * b).sum();
    let n1 = mathx::sqrt(r1.r.iter().map(|v| v * v).sum());
    let n2 = mathx::sqrt(r2.r.iter().map(|v| v * v).sum());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(TaskError::ZeroVector);
    }
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloneVerdict {
    pub p: f64,
    pub is_clone: bool,
}

/// Squared error of the relatedness against a {1, -1} clone label.
pub fn clone_loss(r1: &CodeVector, r2: &CodeVector, y: f64) -> Result<f64, TaskError> {
    if y != 1.0 && y != -1.0 {
        return Err(TaskError::BadCloneLabel(y));
    }
    let p = relatedness(r1, r2)?;
    Ok((y - p) * (y - p))
}

/// Clone verdict by thresholding relatedness at zero (`p <= 0` is not a
/// clone).
pub fn clone_predict(r1: &CodeVector, r2: &CodeVector) -> Result<CloneVerdict, TaskError> {
    let p = relatedness(r1, r2)?;
    Ok(CloneVerdict { p, is_clone: p > 0.0 })
}

/// Affine rescaling of the relatedness score, fitted by least squares on
/// labeled pairs. Reproduces the secondary linear layer of the clone task;
/// the verdict rule stays `p > 0` on the calibrated score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloneCalibration {
    pub scale: f64,
    pub offset: f64,
}

impl CloneCalibration {
    pub fn identity() -> Self {
        Self { scale: 1.0, offset: 0.0 }
    }

    /// Ordinary least squares of `y ~ scale * p + offset`.
    pub fn fit(ps: &[f64], ys: &[f64]) -> Result<Self, TaskError> {
        if ps.len() != ys.len() {
            return Err(TaskError::LengthMismatch {
                left: ps.len(),
                right: ys.len(),
            });
        }
        if ps.is_empty() {
            return Err(TaskError::EmptyInput);
        }
        let n = ps.len() as f64;
        let mean_p = ps.iter().sum::<f64>() / n;
        let mean_y = ys.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (&p, &y) in ps.iter().zip(ys) {
            cov += (p - mean_p) * (y - mean_y);
            var += (p - mean_p) * (p - mean_p);
        }
        if var == 0.0 {
            return Ok(Self {
                scale: 0.0,
                offset: mean_y,
            });
        }
        let scale = cov / var;
        Ok(Self {
            scale,
            offset: mean_y - scale * mean_p,
        })
    }

    pub fn apply(&self, p: f64) -> f64 {
        (self.scale * p + self.offset).clamp(-1.0, 1.0)
    }

    pub fn predict(&self, r1: &CodeVector, r2: &CodeVector) -> Result<CloneVerdict, TaskError> {
        let p = self.apply(relatedness(r1, r2)?);
        Ok(CloneVerdict { p, is_clone: p > 0.0 })
    }
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Inertia after each assignment pass.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Lloyd's algorithm with k-means++ style seeding. Ties in the assignment
/// step go to the lowest centroid index; the run stops when assignments are
/// stable or after `max_iters` passes. Deterministic for a given seed.
pub fn kmeans(
    points: &[CodeVector],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansResult, TaskError> {
    let count = points.len();
    if count == 0 {
        return Err(TaskError::EmptyInput);
    }
    if k == 0 || k > count {
        return Err(TaskError::KTooLarge { k, count });
    }
    let dim = points[0].r.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding: first uniform, then proportional to the squared
    // distance from the nearest chosen centroid.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; count];
    let first = rng.random_range(0..count);
    centroids.push(points[first].r.clone());
    chosen[first] = true;
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(&p.r, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = count - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining mass at chosen points (duplicates); take the
            // lowest unchosen index.
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[next] = true;
        centroids.push(points[next].r.clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(&p.r, centroids.last().unwrap());
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }

    let mut assignments = vec![0usize; count];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = sq_dist(&p.r, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(&p.r, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            inertia += best_d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        inertia_trace.push(inertia);
        if !changed && iterations > 1 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (acc, v) in sums[assignments[i]].iter_mut().zip(&p.r) {
                *acc += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue; // empty cluster keeps its previous centroid
            }
            for (dst, s) in centroids[c].iter_mut().zip(&sums[c]) {
                *dst = s / counts[c] as f64;
            }
        }
    }
    Ok(KmeansResult {
        assignments,
        centroids,
        iterations,
        inertia_trace,
    })
}

fn choose2(n: i128) -> i128 {
    n * (n - 1) / 2
}

/// Adjusted Rand index between a predicted and a reference partition.
/// Computed exactly from the integer contingency table, with one final
/// division.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64, TaskError> {
    if pred.len() != truth.len() {
        return Err(TaskError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let n = pred.len() as i128;
    if n == 0 {
        return Err(TaskError::EmptyInput);
    }
    let mut table: BTreeMap<(usize, usize), i128> = BTreeMap::new();
    let mut rows: BTreeMap<usize, i128> = BTreeMap::new();
    let mut cols: BTreeMap<usize, i128> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_insert(0) += 1;
        *rows.entry(p).or_insert(0) += 1;
        *cols.entry(t).or_insert(0) += 1;
    }
    let sum_cells: i128 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: i128 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: i128 = cols.values().map(|&c| choose2(c)).sum();
    let pairs = choose2(n);
    let num = 2 * (pairs * sum_cells - sum_rows * sum_cols);
    let den = pairs * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols;
    if den == 0 {
        // Both partitions trivial (all singletons or one cluster): identical.
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Precision, recall, and F1 for boolean predictions; empty denominators
/// yield 0 by convention.
pub fn prf1(pred: &[bool], truth: &[bool]) -> Result<(f64, f64, f64), TaskError> {
    if pred.len() != truth.len() {
        return Err(TaskError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fna = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fna += 1.0,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fna > 0.0 { tp / (tp + fna) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

/// Project rows onto their two leading principal components (power iteration
/// with deflation; deterministic start and sign convention).
pub fn pca2(x: &Tensor2) -> Vec<(f64, f64)> {
    let (n, h) = x.shape();
    if n == 0 {
        return Vec::new();
    }
    let mut centered = x.clone();
    for j in 0..h {
        let mean: f64 = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            centered.set(i, j, centered.get(i, j) - mean);
        }
    }
    let cov = centered
        .transpose()
        .matmul(&centered)
        .expect("square by construction");

    let component = |cov: &Tensor2| -> (Vec<f64>, f64) {
        let h = cov.rows();
        let mut v: Vec<f64> = (0..h).map(|i| 1.0 + (i as f64) * 1e-3).collect();
        normalize(&mut v);
        let mut eigen = 0.0;
        for _ in 0..256 {
            let mut next = vec![0.0; h];
            for (i, item) in next.iter_mut().enumerate() {
                *item = cov.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            eigen = mathx::sqrt(next.iter().map(|x| x * x).sum());
            if eigen == 0.0 {
                return (v, 0.0);
            }
            for x in &mut next {
                *x /= eigen;
            }
            let delta: f64 = next
                .iter()
                .zip(&v)
                .map(|(a, b)| mathx::abs(a - b))
                .fold(0.0, f64::max);
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        // Fix the sign so the largest-magnitude entry is positive.
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| mathx::abs(*a.1).partial_cmp(&mathx::abs(*b.1)).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        (v, eigen)
    };

    let (v1, e1) = component(&cov);
    let mut deflated = cov.clone();
    for i in 0..h {
        for j in 0..h {
            deflated.set(i, j, deflated.get(i, j) - e1 * v1[i] * v1[j]);
        }
    }
    let (v2, _) = component(&deflated);

    (0..n)
        .map(|i| {
            let row = centered.row(i);
            let p1: f64 = row.iter().zip(&v1).map(|(a, b)| a * b).sum();
            let p2: f64 = row.iter().zip(&v2).map(|(a, b)| a * b).sum();
            (p1, p2)
        })
        .collect()
}

fn normalize(v: &mut [f64]) {
    let norm = mathx::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Fine-tuning hyperparameters. Defaults follow the full-scale profile;
/// [`FineTuneConfig::desk`] matches the desk experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub minibatch: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub smoothing: f64,
    pub classes: usize,
    pub seed: u64,
}

impl FineTuneConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            epochs: 100,
            lr: 1e-5,
            minibatch: 64,
            patience: 10,
            smoothing: 0.1,
            classes,
            seed: 7,
        }
    }

    pub fn desk(classes: usize) -> Self {
        Self {
            epochs: 30,
            lr: 3e-3,
            minibatch: 8,
            patience: 6,
            ..Self::new(classes)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneReport {
    pub epochs: Vec<EpochLog>,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Accuracy of frozen-path predictions over labeled graphs.
pub fn accuracy(
    data: &[(PreparedGraph, usize)],
    params: &HclParams,
    head: &ClassifierHead,
    opts: &EncoderOptions,
) -> Result<f64, TaskError> {
    if data.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let mut correct = 0usize;
    for (prepared, label) in data {
        let r = code_vector(prepared, params, opts)?;
        if classify_predict(&r, head)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Jointly update the encoder and head by Adam on the smoothed
/// cross-entropy, with early stopping on validation accuracy. The best
/// validation snapshot is restored before returning. `epochs = 0` leaves
/// everything at its input state.
pub fn fine_tune(
    params: &mut HclParams,
    head: &mut ClassifierHead,
    train: &[(PreparedGraph, usize)],
    val: &[(PreparedGraph, usize)],
    cfg: &TrainConfig,
    ft: &FineTuneConfig,
) -> Result<FineTuneReport, TaskError> {
    if train.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    for (_, label) in train.iter().chain(val) {
        if *label >= ft.classes {
            return Err(TaskError::LabelOutOfRange {
                label: *label,
                classes: ft.classes,
            });
        }
    }
    let opts = cfg.encoder_options();
    let mut report = FineTuneReport {
        epochs: Vec::new(),
        best_val_accuracy: 0.0,
        stopped_early: false,
    };
    if ft.epochs == 0 {
        return Ok(report);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ft.seed);
    let mut adam = Adam::new(ft.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, HclParams, ClassifierHead)> = None;
    let mut since_best = 0usize;

    for epoch in 0..ft.epochs {
        // Seeded shuffle per epoch.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut train_loss = 0.0;
        for chunk in order.chunks(ft.minibatch.max(1)) {
            zero_all_grads(params, head);
            for &idx in chunk {
                let (prepared, label) = &train[idx];
                train_loss += accumulate_classify_grads(params, head, prepared, *label, &opts, ft)?;
            }
            let mut named = params.named_params_mut();
            named.push((String::from("head.w0"), &mut head.w0));
            named.push((String::from("head.b0"), &mut head.b0));
            adam.step(&mut named);
        }
        let val_accuracy = if val.is_empty() {
            0.0
        } else {
            accuracy(val, params, head, &opts)?
        };
        report.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
        });
        if !val.is_empty() {
            let improved = best.as_ref().map(|(acc, _, _)| val_accuracy > *acc).unwrap_or(true);
            if improved {
                best = Some((val_accuracy, params.clone(), head.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= ft.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((acc, best_params, best_head)) = best {
        report.best_val_accuracy = acc;
        *params = best_params;
        *head = best_head;
    }
    Ok(report)
}

fn zero_all_grads(params: &mut HclParams, head: &mut ClassifierHead) {
    params.zero_grads();
    head.w0.zero_grad();
    head.b0.zero_grad();
}

/// One labeled example's forward/backward; gradients accumulate in place.
fn accumulate_classify_grads(
    params: &mut HclParams,
    head: &mut ClassifierHead,
    prepared: &PreparedGraph,
    label: usize,
    opts: &EncoderOptions,
    ft: &FineTuneConfig,
) -> Result<f64, TaskError> {
    let mut tape = Tape::new();
    let model = register_model(&mut tape, params);
    let w0 = tape.leaf(head.w0.value.clone());
    let b0 = tape.leaf(head.b0.value.clone());
    let x0 = tape.constant(prepared.x0_ast.clone());
    let padj = tape.constant(prepared.padj.clone());
    let x_nd = encode(&mut tape, x0, padj, &model.layers, opts)?;
    let r = tape.mean_rows(x_nd)?;
    let rw = tape.matmul(r, w0)?;
    let logits = tape.add_row_broadcast(rw, b0)?;
    let loss = tape.cross_entropy_rows(logits, &[label], ft.smoothing)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss, Tensor2::scalar(1.0))?;

    let ordered = model.ordered();
    let mut named = params.named_params_mut();
    for (slot, var) in named.iter_mut().zip(&ordered) {
        if let Some(g) = grads.wrt(*var) {
            slot.1.grad.add_assign(g);
        }
    }
    if let Some(g) = grads.wrt(w0) {
        head.w0.grad.add_assign(g);
    }
    if let Some(g) = grads.wrt(b0) {
        head.b0.grad.add_assign(g);
    }
    Ok(value)
}

#[cfg(test)]
mod tests;
