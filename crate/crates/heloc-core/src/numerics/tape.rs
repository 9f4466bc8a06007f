use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{ShapeError, Tensor2};
use crate::mathx;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Constant,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    AddRowBroadcast(Var, Var),
    MeanRows(Var),
    Sum(Var),
    CrossEntropyRows {
        logits: Var,
        labels: Vec<usize>,
        smoothing: f64,
    },
    TripletHinge {
        x: Var,
        triples: Vec<[usize; 3]>,
        deltas: Vec<f64>,
        margin: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor2,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient accumulated at `v`, if any reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Records forward operations so a single reverse sweep can produce the
/// gradient of any recorded scalar (or matrix) with respect to every leaf.
///
/// Values are immutable once recorded; gradients accumulate additively when
/// a value feeds several consumers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor2, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Record an input that gradients should be computed for.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Record an input that never needs a gradient.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Matmul(a, b), value, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs_grad(&[a]);
        self.push(Op::Transpose(a), value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Hadamard(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.needs_grad(&[a]);
        self.push(Op::Scale(a, c), value, rg)
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs_grad(&[a]);
        self.push(Op::Relu(a), value, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(mathx::tanh);
        let rg = self.needs_grad(&[a]);
        self.push(Op::Tanh(a), value, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(mathx::exp);
        let rg = self.needs_grad(&[a]);
        self.push(Op::Exp(a), value, rg)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.needs_grad(&[a]);
        self.push(Op::SoftmaxRows(a), value, rg)
    }

    /// Per-row standardization followed by an affine map with `gain`/`bias`
    /// (both `1 x cols`).
    pub fn layer_norm_rows(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, ShapeError> {
        let (g, b) = (self.value(gain), self.value(bias));
        let cols = self.value(x).cols();
        if g.shape() != (1, cols) || b.shape() != (1, cols) {
            return Err(ShapeError::new(
                "layer_norm_rows",
                alloc::format!(
                    "gain {:?} / bias {:?} for {} columns",
                    g.shape(),
                    b.shape(),
                    cols
                ),
            ));
        }
        let value = layer_norm_rows(self.value(x), g.row(0), b.row(0), eps);
        let rg = self.needs_grad(&[x, gain, bias]);
        Ok(self.push(Op::LayerNormRows { x, gain, bias, eps }, value, rg))
    }

    /// `x` (`n x c`) plus `row` (`1 x c`) added to every row.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Result<Var, ShapeError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.shape() != (1, xv.cols()) {
            return Err(ShapeError::new(
                "add_row_broadcast",
                alloc::format!("row {:?} against {:?}", rv.shape(), xv.shape()),
            ));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, r) in value.row_mut(i).iter_mut().zip(rv.row(0)) {
                *o += r;
            }
        }
        let rg = self.needs_grad(&[x, row]);
        Ok(self.push(Op::AddRowBroadcast(x, row), value, rg))
    }

    /// Column means: `n x h` collapses to `1 x h`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(ShapeError::new("mean_rows", alloc::format!("empty matrix")));
        }
        let n = xv.rows() as f64;
        let mut value = Tensor2::zeros(1, xv.cols());
        for i in 0..xv.rows() {
            for (o, v) in value.row_mut(0).iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        for o in value.data_mut() {
            *o /= n;
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::MeanRows(x), value, rg))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor2::scalar(self.value(x).sum());
        let rg = self.needs_grad(&[x]);
        self.push(Op::Sum(x), value, rg)
    }

    /// Summed cross-entropy of row-wise softmax against integer labels,
    /// with optional label smoothing mass `smoothing` spread over the
    /// non-target classes.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        labels: &[usize],
        smoothing: f64,
    ) -> Result<Var, ShapeError> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(ShapeError::new(
                "cross_entropy_rows",
                alloc::format!("{} labels for {} rows", labels.len(), lv.rows()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(ShapeError::new(
                "cross_entropy_rows",
                alloc::format!("label {bad} out of range for {} classes", lv.cols()),
            ));
        }
        let value = Tensor2::scalar(cross_entropy_rows_value(lv, labels, smoothing));
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            Op::CrossEntropyRows {
                logits,
                labels: labels.to_vec(),
                smoothing,
            },
            value,
            rg,
        ))
    }

    /// Summed hinge loss over (anchor, positive, negative) row triples of
    /// `x`, with a per-triple extra margin `deltas[i]` on top of `margin`.
    pub fn triplet_hinge(
        &mut self,
        x: Var,
        triples: &[[usize; 3]],
        deltas: &[f64],
        margin: f64,
    ) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        if triples.len() != deltas.len() {
            return Err(ShapeError::new(
                "triplet_hinge",
                alloc::format!("{} triples vs {} deltas", triples.len(), deltas.len()),
            ));
        }
        if let Some(t) = triples.iter().find(|t| t.iter().any(|&i| i >= xv.rows())) {
            return Err(ShapeError::new(
                "triplet_hinge",
                alloc::format!("triple {t:?} out of range for {} rows", xv.rows()),
            ));
        }
        let mut total = 0.0;
        for (t, &d) in triples.iter().zip(deltas) {
            let z = Tensor2::row_sq_dist(xv, t[0], xv, t[1])
                - Tensor2::row_sq_dist(xv, t[0], xv, t[2])
                + d
                + margin;
            if z > 0.0 {
                total += z;
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Op::TripletHinge {
                x,
                triples: triples.to_vec(),
                deltas: deltas.to_vec(),
                margin,
            },
            Tensor2::scalar(total),
            rg,
        ))
    }

    /// Run the reverse sweep from `of`, seeded with `seed_grad`.
    ///
    /// Visits operations in strict reverse recording order; gradients
    /// accumulate additively at shared inputs. Only nodes that (transitively)
    /// depend on a leaf receive gradients.
    pub fn backward(&self, of: Var, seed_grad: Tensor2) -> Result<Gradients, ShapeError> {
        if seed_grad.shape() != self.value(of).shape() {
            return Err(ShapeError::new(
                "backward",
                alloc::format!(
                    "seed {:?} vs output {:?}",
                    seed_grad.shape(),
                    self.value(of).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        if self.nodes[of.0].requires_grad {
            grads[of.0] = Some(seed_grad);
        }
        for idx in (0..=of.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.apply_vjp(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn apply_vjp(&self, idx: usize, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let accumulate = |grads: &mut [Option<Tensor2>], v: Var, delta: Tensor2| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = g.matmul(&bv.transpose()).expect("recorded shapes conform");
                let gb = av.transpose().matmul(g).expect("recorded shapes conform");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Hadamard(a, b) => {
                let ga = g.hadamard(self.value(*b)).expect("shapes conform");
                let gb = g.hadamard(self.value(*a)).expect("shapes conform");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c)),
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut ga = g.clone();
                for (gv, &xv) in ga.data_mut().iter_mut().zip(av.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let yv = &self.nodes[idx].value;
                let ga = Tensor2::from_fn(g.rows(), g.cols(), |i, j| {
                    let y = yv.get(i, j);
                    g.get(i, j) * (1.0 - y * y)
                });
                accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.hadamard(&self.nodes[idx].value).expect("shapes conform");
                accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut ga = Tensor2::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for j in 0..g.cols() {
                        ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (n, h) = xv.shape();
                let hf = h as f64;
                let mut gx = Tensor2::zeros(n, h);
                let mut ggain = Tensor2::zeros(1, h);
                let mut gbias = Tensor2::zeros(1, h);
                for i in 0..n {
                    let row = xv.row(i);
                    let mean = row.iter().sum::<f64>() / hf;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hf;
                    let inv = 1.0 / mathx::sqrt(var + eps);
                    // dxhat from dy; reductions feed the standard LN input rule.
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..h {
                        let xhat = (row[j] - mean) * inv;
                        let dy = g.get(i, j);
                        let dxhat = dy * gv.get(0, j);
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        ggain.set(0, j, ggain.get(0, j) + dy * xhat);
                        gbias.set(0, j, gbias.get(0, j) + dy);
                    }
                    for j in 0..h {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = g.get(i, j) * gv.get(0, j);
                        gx.set(
                            i,
                            j,
                            inv * (dxhat - sum_dxhat / hf - xhat * sum_dxhat_xhat / hf),
                        );
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, ggain);
                accumulate(grads, *bias, gbias);
            }
            Op::AddRowBroadcast(x, row) => {
                accumulate(grads, *x, g.clone());
                let mut grow = Tensor2::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, v) in grow.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(grads, *row, grow);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let n = xv.rows() as f64;
                let gx = Tensor2::from_fn(xv.rows(), xv.cols(), |_, j| g.get(0, j) / n);
                accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let s = g.item();
                accumulate(grads, *x, Tensor2::from_fn(xv.rows(), xv.cols(), |_, _| s));
            }
            Op::CrossEntropyRows {
                logits,
                labels,
                smoothing,
            } => {
                let lv = self.value(*logits);
                let s = g.item();
                let c = lv.cols();
                let p = softmax_rows(lv);
                let off = if c > 1 { smoothing / (c as f64 - 1.0) } else { 0.0 };
                let mut gl = Tensor2::zeros(lv.rows(), c);
                for i in 0..lv.rows() {
                    for j in 0..c {
                        let target = if j == labels[i] { 1.0 - smoothing } else { off };
                        gl.set(i, j, s * (p.get(i, j) - target));
                    }
                }
                accumulate(grads, *logits, gl);
            }
            Op::TripletHinge {
                x,
                triples,
                deltas,
                margin,
            } => {
                let xv = self.value(*x);
                let s = g.item();
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                for (t, &d) in triples.iter().zip(deltas) {
                    let z = Tensor2::row_sq_dist(xv, t[0], xv, t[1])
                        - Tensor2::row_sq_dist(xv, t[0], xv, t[2])
                        + d
                        + margin;
                    if z <= 0.0 {
                        continue;
                    }
                    let (anc, pos, neg) = (t[0], t[1], t[2]);
                    for j in 0..xv.cols() {
                        let a = xv.get(anc, j);
                        let p = xv.get(pos, j);
                        let n = xv.get(neg, j);
                        gx.set(anc, j, gx.get(anc, j) + s * 2.0 * (n - p));
                        gx.set(pos, j, gx.get(pos, j) + s * 2.0 * (p - a));
                        gx.set(neg, j, gx.get(neg, j) + s * 2.0 * (a - n));
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
    }
}

/// Row-wise softmax of a plain matrix (per-row max subtracted).
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = mathx::exp(*v - max);
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out
}

/// Row-wise layer normalization of a plain matrix.
pub fn layer_norm_rows(x: &Tensor2, gain: &[f64], bias: &[f64], eps: f64) -> Tensor2 {
    let (n, h) = x.shape();
    debug_assert_eq!(gain.len(), h);
    debug_assert_eq!(bias.len(), h);
    let hf = h as f64;
    let mut out = Tensor2::zeros(n, h);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / hf;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hf;
        let inv = 1.0 / mathx::sqrt(var + eps);
        for j in 0..h {
            out.set(i, j, (row[j] - mean) * inv * gain[j] + bias[j]);
        }
    }
    out
}

fn cross_entropy_rows_value(logits: &Tensor2, labels: &[usize], smoothing: f64) -> f64 {
    let c = logits.cols();
    let off = if c > 1 { smoothing / (c as f64 - 1.0) } else { 0.0 };
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + mathx::ln(row.iter().map(|&v| mathx::exp(v - max)).sum::<f64>());
        for j in 0..c {
            let target = if j == label { 1.0 - smoothing } else { off };
            if target != 0.0 {
                total -= target * (row[j] - lse);
            }
        }
    }
    total
}

/// Central finite differences of `f` against the supplied analytic
/// gradients, coordinate by coordinate. Returns the largest scaled error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1)`: relative above
/// unit scale, absolute below it. The floor keeps zero-gradient coordinates
/// from dividing the method's cancellation noise (about `eps |f| / h`) by
/// an arbitrarily small denominator.
///
/// `params` is restored to its original values before returning. `analytic`
/// must hold one gradient tensor per parameter tensor, shape-matched.
pub fn finite_diff_check(
    params: &mut [Tensor2],
    analytic: &[Tensor2],
    mut f: impl FnMut(&[Tensor2]) -> f64,
    h: f64,
) -> f64 {
    assert!(h > 0.0, "step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        assert_eq!(params[p].shape(), analytic[p].shape());
        for i in 0..params[p].data().len() {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + h;
            let plus = f(params);
            params[p].data_mut()[i] = orig - h;
            let minus = f(params);
            params[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[p].data()[i];
            let denom = mathx::abs(exact).max(mathx::abs(numeric)).max(1.0);
            worst = worst.max(mathx::abs(exact - numeric) / denom);
        }
    }
    worst
}
