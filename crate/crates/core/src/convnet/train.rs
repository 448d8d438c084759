//! Backpropagation, ADAM and the early-stopped training loop.

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{semi_orth_project, sigmoid, Conv1DNet};
use crate::error::{Error, Result};
use crate::inversion::transpose_conv1d;
use crate::resample::smoteenn;
use crate::signal::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Minimum decrease of the validation loss that counts as improvement.
    pub min_delta: f64,
    /// Projection steps applied to every conv layer after each update.
    pub projection_iters: usize,
    /// Rebalance the training portion with SMOTEENN before fitting.
    pub resample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 1e-7,
            max_epochs: 10_000,
            patience: 5,
            batch_size: 32,
            seed: 0,
            min_delta: 1e-6,
            projection_iters: 4,
            resample: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !(self.decay >= 0.0) {
            return Err(Error::InvalidArgument("lr0 must be positive and decay nonnegative".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs, patience and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 / (1.0 + self.decay * epoch as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub convs: Vec<Array3<f64>>,
    pub head: Array1<f64>,
    pub bias: f64,
}

impl NetGradient {
    pub fn zeros_like(net: &Conv1DNet) -> Self {
        Self {
            convs: net.convs.iter().map(|c| Array3::zeros(c.weights().dim())).collect(),
            head: Array1::zeros(net.head_weights.len()),
            bias: 0.0,
        }
    }

    fn add_assign(&mut self, other: &NetGradient) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            *a += b;
        }
        self.head += &other.head;
        self.bias += other.bias;
    }

    fn scale(&mut self, s: f64) {
        self.convs.iter_mut().for_each(|c| c.mapv_inplace(|v| v * s));
        self.head.mapv_inplace(|v| v * s);
        self.bias *= s;
    }

    /// All entries in parameter order: conv layers, head, bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.convs.iter().flat_map(|c| c.iter().copied()).collect();
        out.extend(self.head.iter().copied());
        out.push(self.bias);
        out
    }
}

/// Binary cross-entropy computed from the logit.
pub fn bce_logit(z: f64, y: bool) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - if y { z } else { 0.0 }
}

/// Binary cross-entropy of a probability, clipped away from 0 and 1.
pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn example_gradient(net: &Conv1DNet, x: ArrayView2<f64>, y: bool) -> Result<(f64, NetGradient)> {
    let (_, trace) = net.forward(x)?;
    let z = trace.logit;
    let loss = bce_logit(z, y);
    let dz = sigmoid(z) - if y { 1.0 } else { 0.0 };
    let mut grad = NetGradient::zeros_like(net);
    grad.bias = dz;
    let deepest = trace.deepest_pooled();
    grad.head = Array1::from_iter(deepest.iter().map(|v| v * dz));
    let mut d_pooled = net
        .head_weights
        .mapv(|w| w * dz)
        .into_shape_with_order(deepest.dim())
        .map_err(|e| Error::Shape(e.to_string()))?;

    for b in (0..net.convs.len()).rev() {
        let block = &trace.blocks[b];
        let layer = &net.convs[b];
        let (f, n) = block.activated.dim();
        let mut d_pre = Array2::<f64>::zeros((f, n));
        for c in 0..f {
            for j in 0..d_pooled.ncols() {
                let pos = 2 * j + block.switches[[c, j]] as usize;
                if pos < n && block.pre_activation[[c, pos]] > 0.0 {
                    d_pre[[c, pos]] += d_pooled[[c, j]];
                }
            }
        }
        let input = if b == 0 { x.view() } else { trace.blocks[b - 1].pooled.view() };
        let input = input.as_standard_layout();
        let xs = input.as_slice().expect("standard layout");
        let half = layer.half_width() as isize;
        let gw = &mut grad.convs[b];
        for i in 0..f {
            let di = d_pre.row(i);
            let di = di.as_slice().expect("owned row");
            for r in 0..layer.taps() {
                let off = r as isize - half;
                let lo = (-off).max(0) as usize;
                let hi = (n as isize - off).clamp(0, n as isize) as usize;
                if lo >= hi {
                    continue;
                }
                for k in 0..layer.in_features() {
                    let src = &xs[k * n + (lo as isize + off) as usize..k * n + (hi as isize + off) as usize];
                    gw[[i, r, k]] += di[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if b > 0 {
            d_pooled = transpose_conv1d(d_pre.view(), layer)?;
        }
    }
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch and its gradient.
pub fn batch_gradient(net: &Conv1DNet, xs: &[ArrayView2<f64>], ys: &[bool]) -> Result<(f64, NetGradient)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} inputs and {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let parts = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, y)| example_gradient(net, x.view(), *y))
        .collect::<Result<Vec<_>>>()?;
    let mut total = NetGradient::zeros_like(net);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    let inv = 1.0 / xs.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

pub fn batch_loss(net: &Conv1DNet, xs: &[ArrayView2<f64>], ys: &[bool]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidArgument("empty or mismatched batch".into()));
    }
    let losses = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, y)| net.forward(x.view()).map(|(_, t)| bce_logit(t.logit, *y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Conv1DNet, grad: &NetGradient, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        let mut apply = |p: &mut f64, g: f64| {
            m[idx] = b1 * m[idx] + (1.0 - b1) * g;
            v[idx] = b2 * v[idx] + (1.0 - b2) * g * g;
            *p -= lr * (m[idx] / c1) / ((v[idx] / c2).sqrt() + eps);
            idx += 1;
        };
        for (layer, g) in net.convs.iter_mut().zip(&grad.convs) {
            for (p, g) in layer.weights_mut().iter_mut().zip(g.iter()) {
                apply(p, *g);
            }
        }
        for (p, g) in net.head_weights.iter_mut().zip(grad.head.iter()) {
            apply(p, *g);
        }
        apply(&mut net.head_bias, grad.bias);
    }
}

/// Trains on explicit arrays; returns the weights of the best validation epoch.
pub fn fit(
    mut net: Conv1DNet,
    train_x: &[ArrayView2<f64>],
    train_y: &[bool],
    val_x: &[ArrayView2<f64>],
    val_y: &[bool],
    cfg: &TrainConfig,
) -> Result<(Conv1DNet, TrainHistory)> {
    cfg.validate()?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.n_params());
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut best = net.clone();
    let mut history = TrainHistory {
        best_val_loss: batch_loss(&net, val_x, val_y)?,
        ..Default::default()
    };
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<ArrayView2<f64>> = chunk.iter().map(|&i| train_x[i].view()).collect();
            let ys: Vec<bool> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, grad) = batch_gradient(&net, &xs, &ys)?;
            train_loss += loss * chunk.len() as f64;
            adam.step(&mut net, &grad, lr);
            for layer in net.convs.iter_mut() {
                *layer = semi_orth_project(layer, cfg.projection_iters)?;
            }
        }
        train_loss /= train_x.len() as f64;
        let val_loss = batch_loss(&net, val_x, val_y)?;
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
        });
        if val_loss < history.best_val_loss - cfg.min_delta {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = net.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, history))
}

/// Flattens each instance matrix into one row.
pub(crate) fn flatten_rows(xs: &[ArrayView2<f64>]) -> Array2<f64> {
    let d = xs.first().map(|x| x.len()).unwrap_or(0);
    let mut out = Array2::zeros((xs.len(), d));
    for (mut row, x) in out.outer_iter_mut().zip(xs) {
        row.assign(&Array1::from_iter(x.iter().copied()));
    }
    out
}

/// Trains on the given CNN fold: every other fold is training data.
pub fn train(net: Conv1DNet, data: &Dataset, cfg: &TrainConfig, fold: usize) -> Result<(Conv1DNet, TrainHistory)> {
    let (train_idx, val_idx) = data.fold_indices(fold);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidArgument(format!("fold {fold} has an empty partition")));
    }
    let tx: Vec<ArrayView2<f64>> = train_idx.iter().map(|&i| data.instances[i].values.view()).collect();
    let ty: Vec<bool> = train_idx.iter().map(|&i| data.instances[i].label).collect();
    let vx: Vec<ArrayView2<f64>> = val_idx.iter().map(|&i| data.instances[i].values.view()).collect();
    let vy: Vec<bool> = val_idx.iter().map(|&i| data.instances[i].label).collect();
    if !cfg.resample {
        return fit(net, &tx, &ty, &vx, &vy, cfg);
    }
    let shape = tx[0].dim();
    let (rx, ry) = smoteenn(flatten_rows(&tx).view(), &ty, cfg.seed)?;
    let rx: Vec<ArrayView2<f64>> = rx
        .outer_iter()
        .map(|r| r.into_shape_with_order(shape).map_err(|e| Error::Shape(e.to_string())))
        .collect::<Result<_>>()?;
    fit(net, &rx, &ry, &vx, &vy, cfg)
}
