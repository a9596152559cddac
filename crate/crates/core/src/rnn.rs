//! Stacked bidirectional LSTM with a per-step softmax head, trained by full
//! backpropagation through time and ADAM.
//!
//! Gate pre-activations are computed as one stacked product
//! `z = W x + U h + b` with row blocks in the order `i, f, o, g`:
//!
//! ```text
//! i = σ(z_i)  f = σ(z_f)  o = σ(z_o)  g = tanh(z_g)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```
//!
//! Each layer runs one cell forward and one backward in time from zero state
//! and concatenates `[h_fwd, h_bwd]` per step as the next layer's input.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classify::ClassificationRule;
use crate::error::{Error, Result};
use crate::seed;

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Gate block order within the stacked weight matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect(),
        }
    }

    /// `out += self · x`
    fn mul_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · y`
    fn mul_t_acc(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yr;
            }
        }
    }

    /// `self += y xᵀ`
    fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (o, b) in row.iter_mut().zip(x) {
                *o += yr * b;
            }
        }
    }
}

/// One LSTM cell: `w` is 4H×in, `u` is 4H×H, `b` has 4H entries.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(4 * hidden, input),
            u: Tensor::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols
    }

    pub fn input(&self) -> usize {
        self.w.cols
    }

    /// Uniform ±1/√(in + H) weights, zero biases except the forget gate at 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        Self {
            w: Tensor::uniform(4 * hidden, input, bound, rng),
            u: Tensor::uniform(4 * hidden, hidden, bound, rng),
            b,
        }
    }

    /// Bias slice of one gate.
    pub fn gate_bias_mut(&mut self, g: Gate) -> &mut [f64] {
        let h = self.hidden();
        &mut self.b[g as usize * h..(g as usize + 1) * h]
    }
}

/// What one cell step keeps for the backward pass.
#[derive(Clone, Debug)]
pub struct CellCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One time step of `p`; returns `(h, c, cache)`.
pub fn cell_forward(p: &LstmCell, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, CellCache)> {
    let h = p.hidden();
    let check = |context, expected, found| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { context, expected, found })
        }
    };
    check("LSTM input", p.input(), x.len())?;
    check("LSTM hidden state", h, h_prev.len())?;
    check("LSTM cell state", h, c_prev.len())?;
    let cache = cell_step(p, x, h_prev.to_vec(), c_prev.to_vec());
    let c = cache.c.clone();
    let out = cache.o.iter().zip(&cache.tanh_c).map(|(o, t)| o * t).collect();
    Ok((out, c, cache))
}

fn cell_step(p: &LstmCell, x: &[f64], h_prev: Vec<f64>, c_prev: Vec<f64>) -> CellCache {
    let h = p.hidden();
    let mut z = p.b.clone();
    p.w.mul_acc(x, &mut z);
    p.u.mul_acc(&h_prev, &mut z);
    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * h..].iter().map(|v| v.tanh()).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c = c.iter().map(|v| v.tanh()).collect();
    CellCache { h_prev, c_prev, i, f, o, g, c, tanh_c }
}

impl CellCache {
    pub fn h(&self) -> Vec<f64> {
        self.o.iter().zip(&self.tanh_c).map(|(o, t)| o * t).collect()
    }
}

/// `layers[ℓ] = [forward cell, backward cell]`; `head_w` is C×2H.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<[LstmCell; 2]>,
    pub head_w: Tensor,
    pub head_b: Vec<f64>,
}

impl LstmStack {
    pub fn init(input: usize, hidden: usize, num_layers: usize, num_classes: usize, seed: u64) -> Self {
        assert!(num_layers >= 1 && hidden >= 1 && num_classes >= 1 && input >= 1);
        let mut rng = seed::component_rng(seed, "rnn/init");
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                [LstmCell::init(inp, hidden, &mut rng), LstmCell::init(inp, hidden, &mut rng)]
            })
            .collect();
        let bound = 1.0 / ((2 * hidden) as f64).sqrt();
        Self {
            layers,
            head_w: Tensor::uniform(num_classes, 2 * hidden, bound, &mut rng),
            head_b: vec![0.0; num_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|[a, b]| {
                    [LstmCell::zeros(a.input(), a.hidden()), LstmCell::zeros(b.input(), b.hidden())]
                })
                .collect(),
            head_w: Tensor::zeros(self.head_w.rows, self.head_w.cols),
            head_b: vec![0.0; self.head_b.len()],
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0][0].hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0][0].input()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    /// Exchanges the forward and backward cell of every layer, along with the
    /// matching halves of each consumer's input weights.
    pub fn swapped_directions(&self) -> Self {
        let h = self.hidden();
        let swap_cols = |t: &Tensor| {
            let mut out = t.clone();
            for r in 0..t.rows {
                let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
                row[..h].copy_from_slice(&t.data[r * t.cols + h..(r + 1) * t.cols]);
                row[h..].copy_from_slice(&t.data[r * t.cols..r * t.cols + h]);
            }
            out
        };
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, [f, b])| {
                let (mut f, mut b) = (b.clone(), f.clone());
                if l > 0 {
                    f.w = swap_cols(&f.w);
                    b.w = swap_cols(&b.w);
                }
                [f, b]
            })
            .collect();
        Self {
            layers,
            head_w: swap_cols(&self.head_w),
            head_b: self.head_b.clone(),
        }
    }

    /// Every parameter buffer in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for pair in &self.layers {
            for c in pair {
                out.extend([c.w.data.as_slice(), c.u.data.as_slice(), c.b.as_slice()]);
            }
        }
        out.push(&self.head_w.data);
        out.push(&self.head_b);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for pair in &mut self.layers {
            for c in pair {
                out.push(c.w.data.as_mut_slice());
                out.push(c.u.data.as_mut_slice());
                out.push(c.b.as_mut_slice());
            }
        }
        out.push(&mut self.head_w.data);
        out.push(&mut self.head_b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }
}

/// Activations of one [`stack_forward`] call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `[ℓ][t]` input to layer ℓ at step t
    inputs: Vec<Vec<Vec<f64>>>,
    /// `[ℓ][dir][t]`, indexed by time, not processing order
    cells: Vec<[Vec<CellCache>; 2]>,
    /// `[t]` concatenated top-layer output
    top: Vec<Vec<f64>>,
}

fn run_direction(cell: &LstmCell, xs: &[Vec<f64>], reverse: bool) -> Vec<CellCache> {
    let (t_len, h) = (xs.len(), cell.hidden());
    let mut caches: Vec<Option<CellCache>> = vec![None; t_len];
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let cache = cell_step(cell, &xs[t], hs, cs);
        hs = cache.h();
        cs = cache.c.clone();
        caches[t] = Some(cache);
    }
    caches.into_iter().map(|c| c.expect("every step visited")).collect()
}

/// Per-step class probabilities (`T×C`) and the activations needed by
/// [`backward`].
pub fn stack_forward(m: &LstmStack, xs: &[Vec<f64>]) -> Result<(DMatrix<f64>, ForwardCache)> {
    if xs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != m.input_dim()) {
        return Err(Error::DimensionMismatch { context: "RNN input features", expected: m.input_dim(), found: bad.len() });
    }
    let t_len = xs.len();
    let mut inputs = Vec::with_capacity(m.num_layers());
    let mut cells = Vec::with_capacity(m.num_layers());
    let mut cur: Vec<Vec<f64>> = xs.to_vec();
    for [fwd, bwd] in &m.layers {
        let f = run_direction(fwd, &cur, false);
        let b = run_direction(bwd, &cur, true);
        let next: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let mut y = f[t].h();
                y.extend(b[t].h());
                y
            })
            .collect();
        inputs.push(std::mem::replace(&mut cur, next));
        cells.push([f, b]);
    }
    let c = m.num_classes();
    let mut probs = DMatrix::zeros(t_len, c);
    for (t, y) in cur.iter().enumerate() {
        let mut logits = m.head_b.clone();
        m.head_w.mul_acc(y, &mut logits);
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for k in 0..c {
            probs[(t, k)] = e[k] / z;
        }
    }
    Ok((probs, ForwardCache { inputs, cells, top: cur }))
}

/// Mean over steps of `−ln max(p[t][label_t], PROB_FLOOR)`.
pub fn loss(probs: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.nrows() {
        return Err(Error::DimensionMismatch { context: "per-step labels", expected: probs.nrows(), found: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::EmptySequence);
    }
    let c = probs.ncols();
    let mut total = 0.0;
    for (t, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidLabel { label: y, classes: c });
        }
        total -= probs[(t, y)].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

fn cell_backward(
    p: &LstmCell,
    grad: &mut LstmCell,
    x: &[f64],
    cache: &CellCache,
    dh: &[f64],
    dc_next: &[f64],
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let h = p.hidden();
    let mut dz = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for k in 0..h {
        let (i, f, o, g, tc) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
        let d_o = dh[k] * tc;
        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dc * g * i * (1.0 - i);
        dz[h + k] = dc * cache.c_prev[k] * f * (1.0 - f);
        dz[2 * h + k] = d_o * o * (1.0 - o);
        dz[3 * h + k] = dc * i * (1.0 - g * g);
        dc_prev[k] = dc * f;
    }
    grad.w.outer_acc(&dz, x);
    grad.u.outer_acc(&dz, &cache.h_prev);
    for (gb, d) in grad.b.iter_mut().zip(&dz) {
        *gb += d;
    }
    p.w.mul_t_acc(&dz, dx);
    let mut dh_prev = vec![0.0; h];
    p.u.mul_t_acc(&dz, &mut dh_prev);
    (dh_prev, dc_prev)
}

/// Exact gradient of [`loss`] with respect to every parameter, accumulated
/// into `grad` (scaled by `weight`).
pub fn backward_into(
    m: &LstmStack,
    cache: &ForwardCache,
    probs: &DMatrix<f64>,
    labels: &[usize],
    weight: f64,
    grad: &mut LstmStack,
) -> Result<()> {
    let t_len = probs.nrows();
    if labels.len() != t_len || cache.top.len() != t_len {
        return Err(Error::DimensionMismatch { context: "backward labels", expected: t_len, found: labels.len() });
    }
    let (c, h) = (m.num_classes(), m.hidden());
    let scale = weight / t_len as f64;
    let mut dy: Vec<Vec<f64>> = vec![vec![0.0; 2 * h]; t_len];
    for t in 0..t_len {
        let y = labels[t];
        if y >= c {
            return Err(Error::InvalidLabel { label: y, classes: c });
        }
        if probs[(t, y)] < PROB_FLOOR {
            continue;
        }
        let dl: Vec<f64> = (0..c)
            .map(|k| scale * (probs[(t, k)] - if k == y { 1.0 } else { 0.0 }))
            .collect();
        grad.head_w.outer_acc(&dl, &cache.top[t]);
        for (gb, d) in grad.head_b.iter_mut().zip(&dl) {
            *gb += d;
        }
        m.head_w.mul_t_acc(&dl, &mut dy[t]);
    }
    for l in (0..m.num_layers()).rev() {
        let xs = &cache.inputs[l];
        let mut dx: Vec<Vec<f64>> = vec![vec![0.0; xs[0].len()]; t_len];
        for dir in 0..2 {
            let cell = &m.layers[l][dir];
            let g = &mut grad.layers[l][dir];
            let caches = &cache.cells[l][dir];
            let (mut dh_carry, mut dc_carry) = (vec![0.0; h], vec![0.0; h]);
            for step in 0..t_len {
                // reverse of processing order
                let t = if dir == 0 { t_len - 1 - step } else { step };
                let dh: Vec<f64> = (0..h).map(|k| dy[t][dir * h + k] + dh_carry[k]).collect();
                (dh_carry, dc_carry) = cell_backward(cell, g, &xs[t], &caches[t], &dh, &dc_carry, &mut dx[t]);
            }
        }
        dy = dx;
    }
    Ok(())
}

/// Gradient of [`loss`] for one sequence.
pub fn backward(m: &LstmStack, cache: &ForwardCache, probs: &DMatrix<f64>, labels: &[usize]) -> Result<LstmStack> {
    let mut grad = m.zeros_like();
    backward_into(m, cache, probs, labels, 1.0, &mut grad)?;
    Ok(grad)
}

/// ADAM moments and hyperparameters for a list of parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_stack(m: &LstmStack, lr: f64) -> Self {
        let sizes: Vec<usize> = m.buffers().iter().map(|b| b.len()).collect();
        Self::new(&sizes, lr)
    }
}

/// One bias-corrected ADAM update.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) {
    assert_eq!(params.len(), state.m.len(), "parameter buffer count");
    assert_eq!(grads.len(), state.m.len(), "gradient buffer count");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.len(), g.len(), "parameter/gradient shape");
        for k in 0..p.len() {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            p[k] -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip: f64,
    pub hidden: usize,
    pub num_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 110,
            batch_size: 1,
            seed: 0,
            learning_rate: 1e-4,
            grad_clip: 5.0,
            hidden: 32,
            num_layers: 3,
        }
    }
}

/// A feature sequence with its single class label.
pub type LabelledFeatures = (Vec<Vec<f64>>, usize);

fn clip_global(grad: &mut LstmStack, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad
        .buffers()
        .iter()
        .flat_map(|b| b.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for b in grad.buffers_mut() {
            b.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Trains from a seeded initialisation. Each epoch visits the sequences in a
/// seeded shuffled order and takes one ADAM step per `batch_size`
/// sequences. Returns the model and the mean training loss of each epoch.
pub fn train(train_set: &[LabelledFeatures], num_classes: usize, cfg: &TrainConfig) -> Result<(LstmStack, Vec<f64>)> {
    if train_set.is_empty() {
        return Err(Error::EmptySequence);
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0 || cfg.num_layers == 0 {
        return Err(Error::InvalidParameter("epochs, batch size, hidden size and layers must be ≥ 1".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.grad_clip >= 0.0) {
        return Err(Error::InvalidParameter("learning rate must be positive and clip non-negative".into()));
    }
    let input = train_set[0].0.first().map(Vec::len).ok_or(Error::EmptySequence)?;
    if let Some((_, bad)) = train_set.iter().find(|(_, y)| *y >= num_classes) {
        return Err(Error::InvalidLabel { label: *bad, classes: num_classes });
    }
    let mut model = LstmStack::init(input, cfg.hidden, cfg.num_layers, num_classes, cfg.seed);
    let mut adam = AdamState::for_stack(&model, cfg.learning_rate);
    let mut order_rng = seed::component_rng(cfg.seed, "rnn/shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = model.zeros_like();
            let w = 1.0 / batch.len() as f64;
            for &idx in batch {
                let (xs, y) = &train_set[idx];
                let labels = vec![*y; xs.len()];
                let (probs, cache) = stack_forward(&model, xs)?;
                epoch_loss += loss(&probs, &labels)?;
                backward_into(&model, &cache, &probs, &labels, w, &mut grad)?;
            }
            clip_global(&mut grad, cfg.grad_clip);
            let grads = grad.buffers();
            adam_step(&mut adam, &mut model.buffers_mut(), &grads);
        }
        history.push(epoch_loss / train_set.len() as f64);
    }
    Ok((model, history))
}

/// Runs the stack and aggregates its softmax rows into one label.
pub fn classify(m: &LstmStack, xs: &[Vec<f64>], rule: ClassificationRule) -> Result<(usize, DMatrix<f64>)> {
    let (probs, _) = stack_forward(m, xs)?;
    Ok((rule.aggregate(&probs), probs))
}
