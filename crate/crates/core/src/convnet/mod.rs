//! Semi-orthogonal 1-D CNN: `deepness` blocks of conv -> ReLU -> max-pool(2),
//! then flatten and a single sigmoid unit.

mod grid;
mod ortho;
mod train;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{
    grid_search, init_seed, run_fold, score_all, select_best, train_fold, CellResult, GridResult, GridSpec,
    MetricSummary,
};
pub use ortho::{
    semi_orth_project, semi_orth_project_traced, semi_orth_residual, spectral_norm,
    PROJECTION_STEP, PROJECTION_TOL,
};
pub use train::{
    batch_gradient, batch_loss, bce, bce_logit, fit, train, Adam, EpochRecord, NetGradient, TrainConfig,
    TrainHistory,
};

/// Convolution kernel indexed `[output feature][tap][input feature]`, taps
/// running over offsets `-R..=R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1DLayer {
    weights: Array3<f64>,
}

impl Conv1DLayer {
    pub fn new(weights: Array3<f64>) -> Result<Self> {
        let (out, taps, inp) = weights.dim();
        if out == 0 || inp == 0 || taps % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel shape ({out}, {taps}, {inp}) needs odd taps and nonzero features"
            )));
        }
        Ok(Self { weights })
    }

    pub fn random<R: Rng>(out: usize, taps: usize, inp: usize, rng: &mut R) -> Result<Self> {
        let w = Array3::from_shape_simple_fn((out, taps, inp), || rng.sample(StandardNormal));
        Self::new(w)
    }

    /// Kernel that copies input feature `i` to output feature `i` (R = 0).
    pub fn identity(features: usize) -> Self {
        let w = Array3::from_shape_fn((features, 1, features), |(i, _, k)| (i == k) as u8 as f64);
        Self { weights: w }
    }

    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array3<f64> {
        &mut self.weights
    }

    pub fn out_features(&self) -> usize {
        self.weights.dim().0
    }

    pub fn taps(&self) -> usize {
        self.weights.dim().1
    }

    pub fn in_features(&self) -> usize {
        self.weights.dim().2
    }

    pub fn half_width(&self) -> usize {
        self.taps() / 2
    }

    /// `M[i, r * in + k] = w[i, r, k]`.
    pub fn matricize(&self) -> Array2<f64> {
        let (out, taps, inp) = self.weights.dim();
        self.weights
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((out, taps * inp))
            .expect("contiguous kernel")
    }

    pub fn from_matrix(m: Array2<f64>, taps: usize) -> Result<Self> {
        let (out, cols) = m.dim();
        if taps == 0 || cols % taps != 0 {
            return Err(Error::Shape(format!("{cols} columns not divisible by {taps} taps")));
        }
        let w = m
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((out, taps, cols / taps))
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(w)
    }
}

/// Same-length convolution with `R` zeros of padding on each side:
/// `y[i, j] = sum_{r,k} w[i, r, k] * x[k, j + r - R]`.
pub fn conv1d_forward(x: ArrayView2<f64>, layer: &Conv1DLayer) -> Result<Array2<f64>> {
    let (n_in, n) = x.dim();
    if n_in != layer.in_features() {
        return Err(Error::Shape(format!(
            "input has {n_in} features, layer expects {}",
            layer.in_features()
        )));
    }
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let half = layer.half_width() as isize;
    let mut y = Array2::zeros((layer.out_features(), n));
    for (i, mut yi) in y.outer_iter_mut().enumerate() {
        let yi = yi.as_slice_mut().expect("owned row");
        for r in 0..layer.taps() {
            let off = r as isize - half;
            let lo = (-off).max(0) as usize;
            let hi = (n as isize - off).clamp(0, n as isize) as usize;
            if lo >= hi {
                continue;
            }
            for k in 0..n_in {
                let w = layer.weights[[i, r, k]];
                if w == 0.0 {
                    continue;
                }
                let src = &xs[k * n + (lo as isize + off) as usize..k * n + (hi as isize + off) as usize];
                for (d, s) in yi[lo..hi].iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    Ok(y)
}

/// Result of a size-2 max-pool over the sample axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Array2<f64>,
    /// 0 or 1: which element of each window held the maximum.
    pub switches: Array2<u8>,
    /// Whether a trailing zero was appended to make the length even.
    pub padded: bool,
}

/// Max-pool with window and stride 2; ties resolve to the first element.
pub fn maxpool_forward(x: ArrayView2<f64>) -> Pooled {
    let (f, n) = x.dim();
    let padded = n % 2 == 1;
    let m = n.div_ceil(2);
    let mut values = Array2::zeros((f, m));
    let mut switches = Array2::zeros((f, m));
    for c in 0..f {
        for j in 0..m {
            let a = x[[c, 2 * j]];
            let b = if 2 * j + 1 < n { x[[c, 2 * j + 1]] } else { 0.0 };
            if b > a {
                values[[c, j]] = b;
                switches[[c, j]] = 1;
            } else {
                values[[c, j]] = a;
            }
        }
    }
    Pooled {
        values,
        switches,
        padded,
    }
}

/// Feature maps of one conv -> ReLU -> pool block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub pre_activation: Array2<f64>,
    pub activated: Array2<f64>,
    pub pooled: Array2<f64>,
    pub switches: Array2<u8>,
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub blocks: Vec<BlockTrace>,
    pub logit: f64,
}

impl ForwardTrace {
    pub fn deepest_pooled(&self) -> &Array2<f64> {
        &self.blocks.last().expect("at least one block").pooled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_leads: usize,
    pub n_samples: usize,
    pub n_filters: usize,
    pub kernel_size: usize,
    pub deepness: usize,
}

impl NetConfig {
    /// Sample length after each pooling stage, ending with the head input.
    pub fn pooled_len(&self) -> usize {
        (0..self.deepness).fold(self.n_samples, |n, _| n.div_ceil(2))
    }

    pub fn head_len(&self) -> usize {
        self.n_filters * self.pooled_len()
    }

    pub fn n_params(&self) -> usize {
        let first = self.n_filters * self.kernel_size * self.n_leads;
        let rest = (self.deepness.saturating_sub(1)) * self.n_filters * self.kernel_size * self.n_filters;
        first + rest + self.head_len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1DNet {
    pub config: NetConfig,
    pub convs: Vec<Conv1DLayer>,
    pub head_weights: Array1<f64>,
    pub head_bias: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Conv1DNet {
    /// Gaussian kernels projected onto the semi-orthogonal set, Glorot-scaled head.
    pub fn init<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self> {
        if config.deepness == 0 || config.n_filters == 0 || config.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid network config {config:?}: need deepness >= 1, filters >= 1, odd kernel"
            )));
        }
        let mut convs = Vec::with_capacity(config.deepness);
        for b in 0..config.deepness {
            let inp = if b == 0 { config.n_leads } else { config.n_filters };
            let layer = Conv1DLayer::random(config.n_filters, config.kernel_size, inp, rng)?;
            convs.push(semi_orth_project(&layer, 30)?);
        }
        let head_len = config.head_len();
        let scale = (1.0 / head_len as f64).sqrt();
        let head_weights =
            Array1::from_shape_simple_fn(head_len, || scale * rng.sample::<f64, _>(StandardNormal));
        Ok(Self {
            config,
            convs,
            head_weights,
            head_bias: 0.0,
        })
    }

    /// Network with all-zero parameters of the given shape.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        let convs = (0..config.deepness)
            .map(|b| {
                let inp = if b == 0 { config.n_leads } else { config.n_filters };
                Conv1DLayer::new(Array3::zeros((config.n_filters, config.kernel_size, inp)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            convs,
            head_weights: Array1::zeros(config.head_len()),
            head_bias: 0.0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.convs.iter().map(|c| c.weights.len()).sum::<usize>() + self.head_weights.len() + 1
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        let (l, n) = x.dim();
        if l != self.config.n_leads || n != self.config.n_samples {
            return Err(Error::Shape(format!(
                "input is {l}x{n}, network expects {}x{}",
                self.config.n_leads, self.config.n_samples
            )));
        }
        Ok(())
    }

    /// Forward pass recording every block's maps and pooling switches.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(f64, ForwardTrace)> {
        self.check_input(&x)?;
        let mut blocks: Vec<BlockTrace> = Vec::with_capacity(self.convs.len());
        for layer in &self.convs {
            let input = match blocks.last() {
                None => x.view(),
                Some(t) => t.pooled.view(),
            };
            let pre_activation = conv1d_forward(input, layer)?;
            let activated = pre_activation.mapv(|v| v.max(0.0));
            let Pooled {
                values,
                switches,
                padded,
            } = maxpool_forward(activated.view());
            blocks.push(BlockTrace {
                pre_activation,
                activated,
                pooled: values,
                switches,
                padded,
            });
        }
        let deepest = &blocks.last().unwrap().pooled;
        let logit = deepest
            .iter()
            .zip(self.head_weights.iter())
            .map(|(a, w)| a * w)
            .sum::<f64>()
            + self.head_bias;
        Ok((sigmoid(logit), ForwardTrace { blocks, logit }))
    }

    pub fn score(&self, x: ArrayView2<f64>) -> Result<f64> {
        Ok(self.forward(x)?.0)
    }
}

/// Score plus trace for an instance.
pub fn model_forward(
    net: &Conv1DNet,
    x: &crate::signal::TimeSeriesInstance,
) -> Result<(f64, ForwardTrace)> {
    net.forward(x.values.view())
}
