//! Fully connected ReLU networks mapping loads to non-slack dispatch:
//! evaluation, training with magnitude pruning, and slack completion.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledDataset;
use crate::grid::GridCase;
use crate::linalg::Matrix;
use crate::math::{abs, sqrt};

pub const FORMAT_VERSION: u32 = 1;

/// Per-feature min-max scaling: `normalized = (x - min) / range`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self {
            min: vec![0.0; n],
            range: vec![1.0; n],
        }
    }

    /// Fits to the columns of `rows`; constant columns get range 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Self {
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for r in rows {
            for j in 0..n {
                lo[j] = lo[j].min(r[j]);
                hi[j] = hi[j].max(r[j]);
            }
        }
        let mut range = vec![1.0; n];
        for j in 0..n {
            if !lo[j].is_finite() {
                lo[j] = 0.0;
            } else if hi[j] > lo[j] {
                range[j] = hi[j] - lo[j];
            }
        }
        Self { min: lo, range }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(v, (m, r))| (v - m) / r)
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(v, (m, r))| m + v * r)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("network needs at least an input and an output layer")]
    TooFewLayers,
    #[error("layer {layer}: {what} has the wrong shape")]
    Shape { layer: usize, what: &'static str },
    #[error("layer {0}: a pruned weight is non-zero")]
    MaskViolated(usize),
    #[error("scaler dimensions do not match the network")]
    Scaler,
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
}

/// ReLU network `[n_in, N_1, ..., N_K, n_out]`. Weights are `out x in`;
/// `masks[k][i]` is `false` for pruned entries (row-major like the weights).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layers: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub x_scale: Scaler,
    pub y_scale: Scaler,
}

impl MlpNetwork {
    /// He-uniform weights, zero biases, identity scaling.
    pub fn random(layers: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut masks = Vec::new();
        for w in layers.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let a = sqrt(6.0 / n_in.max(1) as f64);
            let data = (0..n_in * n_out).map(|_| rng.random_range(-a..a)).collect();
            weights.push(Matrix::from_row_major(n_out, n_in, data));
            biases.push(vec![0.0; n_out]);
            masks.push(vec![true; n_in * n_out]);
        }
        Self {
            layers: layers.to_vec(),
            weights,
            biases,
            masks,
            x_scale: Scaler::identity(layers[0]),
            y_scale: Scaler::identity(*layers.last().unwrap()),
        }
    }

    /// Network from explicit parameters with all entries unpruned.
    pub fn from_parameters(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self, NetError> {
        let mut layers = Vec::new();
        if let Some(w) = weights.first() {
            layers.push(w.cols());
        }
        layers.extend(weights.iter().map(Matrix::rows));
        let masks = weights.iter().map(|w| vec![true; w.rows() * w.cols()]).collect();
        let n_in = layers.first().copied().unwrap_or(0);
        let n_out = layers.last().copied().unwrap_or(0);
        let net = Self {
            layers,
            weights,
            biases,
            masks,
            x_scale: Scaler::identity(n_in),
            y_scale: Scaler::identity(n_out),
        };
        net.validate()?;
        Ok(net)
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layers.last().unwrap()
    }

    /// Hidden layer widths `N_1..N_K`.
    pub fn hidden(&self) -> &[usize] {
        &self.layers[1..self.layers.len() - 1]
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.layers.len() < 2 {
            return Err(NetError::TooFewLayers);
        }
        let n = self.layers.len() - 1;
        if self.weights.len() != n || self.biases.len() != n || self.masks.len() != n {
            return Err(NetError::Shape {
                layer: 0,
                what: "parameter list",
            });
        }
        for k in 0..n {
            let (n_in, n_out) = (self.layers[k], self.layers[k + 1]);
            let w = &self.weights[k];
            if w.rows() != n_out || w.cols() != n_in {
                return Err(NetError::Shape {
                    layer: k,
                    what: "weight matrix",
                });
            }
            if self.biases[k].len() != n_out {
                return Err(NetError::Shape {
                    layer: k,
                    what: "bias",
                });
            }
            if self.masks[k].len() != n_in * n_out {
                return Err(NetError::Shape {
                    layer: k,
                    what: "mask",
                });
            }
            if w.as_slice().iter().chain(&self.biases[k]).any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite(k));
            }
            if w.as_slice()
                .iter()
                .zip(&self.masks[k])
                .any(|(v, keep)| !keep && *v != 0.0)
            {
                return Err(NetError::MaskViolated(k));
            }
        }
        if self.x_scale.len() != self.n_inputs()
            || self.y_scale.len() != self.n_outputs()
            || self
                .x_scale
                .range
                .iter()
                .chain(&self.y_scale.range)
                .any(|r| !(*r > 0.0))
        {
            return Err(NetError::Scaler);
        }
        Ok(())
    }

    /// Forward pass on normalized inputs, returning normalized outputs.
    pub fn forward_normalized(&self, x: &[f64]) -> Vec<f64> {
        let last = self.weights.len() - 1;
        let mut a = x.to_vec();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.mul_vec(&a);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
                if k < last && *zi < 0.0 {
                    *zi = 0.0;
                }
            }
            a = z;
        }
        a
    }

    /// Predicted non-slack dispatch in MW for a load vector in MW.
    pub fn forward(&self, load: &[f64]) -> Vec<f64> {
        let y = self.forward_normalized(&self.x_scale.normalize(load));
        self.y_scale.denormalize(&y)
    }

    /// Pre-activations of every hidden layer for a load vector in MW.
    pub fn pre_activations(&self, load: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.weights.len() - 1);
        let mut a = self.x_scale.normalize(load);
        for (w, b) in self.weights.iter().zip(&self.biases).take(self.weights.len() - 1) {
            let mut z = w.mul_vec(&a);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            a = z.iter().map(|v| v.max(0.0)).collect();
            out.push(z);
        }
        out
    }

    /// Affine maps with the input and output scaling composed in, so the
    /// first layer takes MW and the last produces MW.
    pub fn folded(&self) -> Vec<(Matrix, Vec<f64>)> {
        let n = self.weights.len();
        let mut out: Vec<(Matrix, Vec<f64>)> = self
            .weights
            .iter()
            .cloned()
            .zip(self.biases.iter().cloned())
            .collect();
        {
            let (w, b) = &mut out[0];
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    let v = w[(i, j)] / self.x_scale.range[j];
                    w[(i, j)] = v;
                    b[i] -= v * self.x_scale.min[j];
                }
            }
        }
        {
            let (w, b) = &mut out[n - 1];
            for i in 0..w.rows() {
                let r = self.y_scale.range[i];
                for v in w.row_mut(i) {
                    *v *= r;
                }
                b[i] = self.y_scale.min[i] + r * b[i];
            }
        }
        out
    }

    /// Fraction of zero entries in each weight matrix.
    pub fn sparsity(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let n = w.as_slice().len().max(1);
                w.as_slice().iter().filter(|v| **v == 0.0).count() as f64 / n as f64
            })
            .collect()
    }

    fn apply_masks(&mut self) {
        for (w, m) in self.weights.iter_mut().zip(&self.masks) {
            for (v, keep) in w.as_mut_slice().iter_mut().zip(m) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }

    /// Zeroes and freezes the smallest-magnitude weights of every matrix
    /// until at least `target` of its entries are pruned.
    pub fn prune_to(&mut self, target: f64) {
        for (w, mask) in self.weights.iter_mut().zip(self.masks.iter_mut()) {
            let len = mask.len();
            let want = libm::ceil(target * len as f64 - 1e-9).max(0.0) as usize;
            let want = want.min(len);
            let mut order: Vec<usize> = (0..len).collect();
            // Already-pruned entries first, then by magnitude, then index.
            order.sort_by(|&a, &b| {
                let ka = (mask[a], abs(w.as_slice()[a]));
                let kb = (mask[b], abs(w.as_slice()[b]));
                ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
            });
            for &i in order.iter().take(want) {
                mask[i] = false;
                w.as_mut_slice()[i] = 0.0;
            }
        }
    }
}

/// Full dispatch from a network prediction: the slack generator covers the
/// difference between total load and the predicted non-slack dispatch.
pub fn complete_dispatch(case: &GridCase, predicted: &[f64], load: &[f64]) -> Vec<f64> {
    let slack = case.slack_gen();
    let mut full = vec![0.0; case.n_gens()];
    let mut it = predicted.iter();
    let mut others = 0.0;
    for (g, slot) in full.iter_mut().enumerate() {
        if g != slack {
            *slot = *it.next().expect("one prediction per non-slack generator");
            others += *slot;
        }
    }
    full[slack] = load.iter().sum::<f64>() - others;
    full
}

/// Gradients with the shapes of the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn new(net: &MlpNetwork) -> Self {
        Self {
            acts: net.layers.iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::new(),
            next: Vec::new(),
        }
    }
}

/// Adds the gradient of `sum (f(x) - y)^2` to `grad`; returns the sum.
fn accumulate(net: &MlpNetwork, x: &[f64], y: &[f64], ws: &mut Workspace, grad: &mut Gradients) -> f64 {
    let last = net.weights.len() - 1;
    ws.acts[0].copy_from_slice(x);
    for k in 0..=last {
        let (prev, rest) = ws.acts.split_at_mut(k + 1);
        let a = &prev[k];
        let z = &mut rest[0];
        let w = &net.weights[k];
        for (i, zi) in z.iter_mut().enumerate() {
            let mut s = net.biases[k][i];
            for (wij, aj) in w.row(i).iter().zip(a.iter()) {
                s += wij * aj;
            }
            *zi = if k < last && s < 0.0 { 0.0 } else { s };
        }
    }
    let out = &ws.acts[last + 1];
    ws.delta.clear();
    let mut loss = 0.0;
    for (o, t) in out.iter().zip(y) {
        let d = o - t;
        loss += d * d;
        ws.delta.push(2.0 * d);
    }
    for k in (0..=last).rev() {
        let a = &ws.acts[k];
        let gw = &mut grad.weights[k];
        for (i, di) in ws.delta.iter().enumerate() {
            if *di == 0.0 {
                continue;
            }
            grad.biases[k][i] += di;
            for (g, aj) in gw.row_mut(i).iter_mut().zip(a.iter()) {
                *g += di * aj;
            }
        }
        if k > 0 {
            let w = &net.weights[k];
            ws.next.clear();
            ws.next.resize(a.len(), 0.0);
            for (i, di) in ws.delta.iter().enumerate() {
                if *di == 0.0 {
                    continue;
                }
                for (n, wij) in ws.next.iter_mut().zip(w.row(i)) {
                    *n += di * wij;
                }
            }
            for (n, aj) in ws.next.iter_mut().zip(a.iter()) {
                if *aj <= 0.0 {
                    *n = 0.0;
                }
            }
            core::mem::swap(&mut ws.delta, &mut ws.next);
        }
    }
    loss
}

/// Mean squared error over all rows and outputs of normalized data, and its
/// gradient with respect to the unpruned parameters.
pub fn loss_and_gradient(net: &MlpNetwork, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, Gradients) {
    let mut grad = Gradients::zeros_like(net);
    let mut ws = Workspace::new(net);
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        loss += accumulate(net, x, y, &mut ws, &mut grad);
    }
    let scale = 1.0 / (xs.len() * net.n_outputs()).max(1) as f64;
    scale_and_mask(net, &mut grad, scale);
    (loss * scale, grad)
}

fn scale_and_mask(net: &MlpNetwork, grad: &mut Gradients, scale: f64) {
    for ((g, m), b) in grad
        .weights
        .iter_mut()
        .zip(&net.masks)
        .zip(grad.biases.iter_mut())
    {
        for (v, keep) in g.as_mut_slice().iter_mut().zip(m) {
            *v = if *keep { *v * scale } else { 0.0 };
        }
        b.iter_mut().for_each(|v| *v *= scale);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Plain minibatch gradient descent with a fixed step.
    Sgd,
    /// Adaptive moment estimation (beta1 0.9, beta2 0.999).
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// `(epoch, target sparsity)` checkpoints, applied after that epoch.
    pub prune_schedule: Vec<(usize, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 40,
            learning_rate: 0.1,
            optimizer: Optimizer::Sgd,
            prune_schedule: linear_prune_schedule(50, 200, 10, 0.8),
            seed: 0,
        }
    }
}

/// Sparsity ramped linearly from 0 after epoch `start` to `target` at epoch
/// `end` in `steps` equal increments.
pub fn linear_prune_schedule(start: usize, end: usize, steps: usize, target: f64) -> Vec<(usize, f64)> {
    (1..=steps)
        .map(|k| {
            let epoch = start + (end - start) * k / steps;
            (epoch, target * k as f64 / steps as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("the training split is empty")]
    EmptyTrainingSet,
    #[error("the test split is empty")]
    EmptyTestSet,
    #[error("layer sizes do not match the dataset: {0}")]
    Shape(&'static str),
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("training diverged (non-finite loss) in epoch {0}")]
    Diverged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    /// Fraction of pruned weights over all matrices.
    pub sparsity: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpNetwork,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_test_mse: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive"));
        }
        let mut prev = (0usize, 0.0f64);
        for &(e, s) in &self.prune_schedule {
            if e < prev.0 || s < prev.1 || !(0.0..1.0).contains(&s) {
                return Err(TrainError::Config(
                    "prune schedule must be nondecreasing in [0, 1)",
                ));
            }
            if e > self.epochs {
                return Err(TrainError::Config("prune checkpoint after the last epoch"));
            }
            prev = (e, s);
        }
        Ok(())
    }
}

/// Network input rows and non-slack target rows, normalized by `net`.
fn normalized_rows(
    net: &MlpNetwork,
    data: &LabeledDataset,
    outputs: &[usize],
    idx: &[usize],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xs = idx
        .iter()
        .map(|&i| net.x_scale.normalize(data.inputs.row(i)))
        .collect();
    let ys = idx
        .iter()
        .map(|&i| {
            let t: Vec<f64> = outputs.iter().map(|&g| data.targets[(i, g)]).collect();
            net.y_scale.normalize(&t)
        })
        .collect();
    (xs, ys)
}

fn mse(net: &MlpNetwork, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        for (o, t) in net.forward_normalized(x).iter().zip(y) {
            s += (o - t) * (o - t);
        }
    }
    s / (xs.len() * net.n_outputs()).max(1) as f64
}

struct AdamState {
    t: i32,
    m: Gradients,
    v: Gradients,
}

fn step(net: &mut MlpNetwork, grad: &Gradients, cfg: &TrainConfig, adam: &mut Option<AdamState>) {
    let lr = cfg.learning_rate;
    match adam {
        None => {
            for (w, g) in net.weights.iter_mut().zip(&grad.weights) {
                for (p, d) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *p -= lr * d;
                }
            }
            for (b, g) in net.biases.iter_mut().zip(&grad.biases) {
                for (p, d) in b.iter_mut().zip(g) {
                    *p -= lr * d;
                }
            }
        }
        Some(st) => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            st.t += 1;
            let c1 = 1.0 - libm::pow(B1, st.t as f64);
            let c2 = 1.0 - libm::pow(B2, st.t as f64);
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= lr * (*m / c1) / (sqrt(*v / c2) + 1e-8);
            };
            for k in 0..net.weights.len() {
                let w = net.weights[k].as_mut_slice();
                let g = grad.weights[k].as_slice();
                let m = st.m.weights[k].as_mut_slice();
                let v = st.v.weights[k].as_mut_slice();
                for i in 0..w.len() {
                    update(&mut w[i], g[i], &mut m[i], &mut v[i]);
                }
                let b = &mut net.biases[k];
                for i in 0..b.len() {
                    update(
                        &mut b[i],
                        grad.biases[k][i],
                        &mut st.m.biases[k][i],
                        &mut st.v.biases[k][i],
                    );
                }
            }
        }
    }
    net.apply_masks();
}

fn total_sparsity(net: &MlpNetwork) -> f64 {
    let total: usize = net.masks.iter().map(Vec::len).sum();
    let pruned: usize = net.masks.iter().map(|m| m.iter().filter(|k| !**k).count()).sum();
    pruned as f64 / total.max(1) as f64
}

/// Trains a network `[n_loads, hidden..., n_gens - 1]` on the dataset's
/// training split and returns the snapshot with the lowest test MSE among
/// the epochs after the final pruning checkpoint.
pub fn train(
    case: &GridCase,
    data: &LabeledDataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if data.test.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    if data.inputs.cols() != case.n_loads() || data.targets.cols() != case.n_gens() {
        return Err(TrainError::Shape("dataset columns differ from the case"));
    }
    let outputs = case.non_slack_gens();
    let mut layers = vec![case.n_loads()];
    layers.extend_from_slice(hidden);
    layers.push(outputs.len());

    let mut net = MlpNetwork::random(&layers, cfg.seed);
    net.x_scale = Scaler::fit(data.train.iter().map(|&i| data.inputs.row(i)), case.n_loads());
    let train_targets: Vec<Vec<f64>> = data
        .train
        .iter()
        .map(|&i| outputs.iter().map(|&g| data.targets[(i, g)]).collect())
        .collect();
    net.y_scale = Scaler::fit(train_targets.iter().map(Vec::as_slice), outputs.len());

    let (train_x, train_y) = normalized_rows(&net, data, &outputs, &data.train);
    let (test_x, test_y) = normalized_rows(&net, data, &outputs, &data.test);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut grad = Gradients::zeros_like(&net);
    let mut ws = Workspace::new(&net);
    let mut adam = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam => Some(AdamState {
            t: 0,
            m: Gradients::zeros_like(&net),
            v: Gradients::zeros_like(&net),
        }),
    };
    let eligible_from = cfg.prune_schedule.last().map_or(1, |c| c.0.max(1));
    let mut best: Option<(usize, f64, MlpNetwork)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let norm = 1.0 / net.n_outputs().max(1) as f64;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.clear();
            for &i in batch {
                train_loss += accumulate(&net, &train_x[i], &train_y[i], &mut ws, &mut grad);
            }
            scale_and_mask(&net, &mut grad, norm / batch.len() as f64);
            step(&mut net, &grad, cfg, &mut adam);
        }
        let train_mse = train_loss * norm / train_x.len() as f64;
        for &(e, s) in &cfg.prune_schedule {
            if e == epoch {
                net.prune_to(s);
                if let Some(st) = adam.as_mut() {
                    for (k, m) in net.masks.iter().enumerate() {
                        for (i, keep) in m.iter().enumerate() {
                            if !keep {
                                st.m.weights[k].as_mut_slice()[i] = 0.0;
                                st.v.weights[k].as_mut_slice()[i] = 0.0;
                            }
                        }
                    }
                }
            }
        }
        let test_mse = mse(&net, &test_x, &test_y);
        if !train_mse.is_finite() || !test_mse.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        log.push(EpochLog {
            epoch,
            train_mse,
            test_mse,
            sparsity: total_sparsity(&net),
        });
        if epoch >= eligible_from && best.as_ref().is_none_or(|b| test_mse < b.1) {
            best = Some((epoch, test_mse, net.clone()));
        }
    }
    let (best_epoch, best_test_mse, net) = best.expect("at least one eligible epoch");
    Ok(TrainOutcome {
        net,
        log,
        best_epoch,
        best_test_mse,
    })
}

/// Mean absolute error on the test split over the network outputs, in % of
/// each generator's output range (generators with zero range are skipped).
pub fn test_mae_pct(case: &GridCase, data: &LabeledDataset, net: &MlpNetwork) -> f64 {
    let outputs = case.non_slack_gens();
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in &data.test {
        let pred = net.forward(data.inputs.row(i));
        for (k, &g) in outputs.iter().enumerate() {
            let gen = &case.gens[g];
            let range = gen.p_max - gen.p_min;
            if range > 0.0 {
                sum += abs(pred[k] - data.targets[(i, g)]) / range;
                count += 1;
            }
        }
    }
    100.0 * sum / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Straight-line evaluation written independently of `forward`.
    fn reference_forward(net: &MlpNetwork, x: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = (0..x.len())
            .map(|j| (x[j] - net.x_scale.min[j]) / net.x_scale.range[j])
            .collect();
        let n = net.weights.len();
        for k in 0..n {
            let w = &net.weights[k];
            let mut z = Vec::new();
            for i in 0..w.rows() {
                let mut s = net.biases[k][i];
                for j in 0..w.cols() {
                    s += w[(i, j)] * h[j];
                }
                z.push(if k + 1 < n { s.max(0.0) } else { s });
            }
            h = z;
        }
        (0..h.len())
            .map(|i| net.y_scale.min[i] + net.y_scale.range[i] * h[i])
            .collect()
    }

    #[test]
    fn zero_weights_output_the_bias() {
        let w = vec![Matrix::zeros(2, 3), Matrix::zeros(1, 2)];
        let b = vec![vec![1.0, -1.0], vec![0.25]];
        let mut net = MlpNetwork::from_parameters(w, b).unwrap();
        net.y_scale = Scaler {
            min: vec![10.0],
            range: vec![4.0],
        };
        assert_eq!(net.forward(&[5.0, 7.0, -2.0]), vec![11.0]);
    }

    #[test]
    fn relu_kills_negative_input() {
        let w = vec![Matrix::from_rows(&[vec![1.0]]), Matrix::from_rows(&[vec![3.0]])];
        let b = vec![vec![-0.5], vec![0.5]];
        let net = MlpNetwork::from_parameters(w, b).unwrap();
        assert_eq!(net.forward(&[0.2]), vec![0.5]);
        assert_eq!(net.forward(&[1.5]), vec![3.5]);
    }

    #[test]
    fn forward_matches_reference_and_folding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = MlpNetwork::random(&[2, 3, 1], 9);
        net.biases[0] = vec![0.1, -0.2, 0.3];
        net.x_scale = Scaler {
            min: vec![5.0, -1.0],
            range: vec![2.0, 0.5],
        };
        net.y_scale = Scaler {
            min: vec![20.0],
            range: vec![30.0],
        };
        let folded = net.folded();
        for _ in 0..100 {
            let x = [rng.random_range(0.0..10.0), rng.random_range(-2.0..2.0)];
            let a = net.forward(&x);
            let b = reference_forward(&net, &x);
            assert!((a[0] - b[0]).abs() < 1e-12);
            // The folded maps work directly in physical units.
            let mut h = x.to_vec();
            for (k, (w, bias)) in folded.iter().enumerate() {
                let mut z = w.mul_vec(&h);
                for (zi, bi) in z.iter_mut().zip(bias) {
                    *zi += bi;
                }
                if k + 1 < folded.len() {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                h = z;
            }
            assert!((h[0] - a[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for draw in 0..20 {
            let mut net = MlpNetwork::random(&[2, 3, 2], draw);
            for b in &mut net.biases {
                b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
            let xs: Vec<Vec<f64>> = (0..8)
                .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            let ys: Vec<Vec<f64>> = (0..8)
                .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect();
            let (_, g) = loss_and_gradient(&net, &xs, &ys);
            let h = 1e-5;
            let check = |analytic: f64, numeric: f64| {
                let err = (analytic - numeric).abs();
                assert!(
                    err <= 1e-4 * analytic.abs().max(numeric.abs()).max(1e-6),
                    "draw {draw}: {analytic} vs {numeric}"
                );
            };
            for k in 0..net.weights.len() {
                for i in 0..net.weights[k].as_slice().len() {
                    let mut p = net.clone();
                    p.weights[k].as_mut_slice()[i] += h;
                    let mut q = net.clone();
                    q.weights[k].as_mut_slice()[i] -= h;
                    let num =
                        (loss_and_gradient(&p, &xs, &ys).0 - loss_and_gradient(&q, &xs, &ys).0) / (2.0 * h);
                    check(g.weights[k].as_slice()[i], num);
                }
                for i in 0..net.biases[k].len() {
                    let mut p = net.clone();
                    p.biases[k][i] += h;
                    let mut q = net.clone();
                    q.biases[k][i] -= h;
                    let num =
                        (loss_and_gradient(&p, &xs, &ys).0 - loss_and_gradient(&q, &xs, &ys).0) / (2.0 * h);
                    check(g.biases[k][i], num);
                }
            }
        }
    }

    #[test]
    fn pruning_hits_the_target_per_matrix() {
        let mut net = MlpNetwork::random(&[3, 50, 50, 2], 1);
        net.prune_to(0.8);
        for s in net.sparsity() {
            assert!(s >= 0.8);
        }
        net.validate().unwrap();
    }

    #[test]
    fn schedule_is_linear() {
        let s = linear_prune_schedule(50, 200, 10, 0.8);
        assert_eq!(s.len(), 10);
        assert_eq!(s[0].0, 65);
        assert_eq!(s[9], (200, 0.8));
    }

    proptest! {
        #[test]
        fn prop_piecewise_affine(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let net = MlpNetwork::random(&[2, 4, 4, 1], seed);
            let x0 = [a, b];
            let x1 = [a + 1e-3, b - 1e-3];
            let pattern = |x: &[f64]| -> Vec<bool> {
                net.pre_activations(x).iter().flatten().map(|v| *v > 0.0).collect()
            };
            let mid = [(x0[0] + x1[0]) / 2.0, (x0[1] + x1[1]) / 2.0];
            if pattern(&x0) == pattern(&x1) && pattern(&x0) == pattern(&mid) {
                let y0 = net.forward(&x0)[0];
                let y1 = net.forward(&x1)[0];
                let ym = net.forward(&mid)[0];
                prop_assert!((ym - (y0 + y1) / 2.0).abs() < 1e-12);
            }
        }
    }
}
