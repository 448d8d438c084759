//! Cross-validated grid search over filters, kernel size and depth.

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Conv1DNet, NetConfig, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, isotonic_calibrate, mean_sd, Metrics};
use crate::signal::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub deepness: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            filters: vec![8, 16, 32],
            kernels: vec![3, 5, 9],
            deepness: vec![2, 3, 4],
        }
    }
}

impl GridSpec {
    pub fn single(filters: usize, kernel: usize, deepness: usize) -> Self {
        Self {
            filters: vec![filters],
            kernels: vec![kernel],
            deepness: vec![deepness],
        }
    }

    pub fn configs(&self, n_leads: usize, n_samples: usize) -> Vec<NetConfig> {
        let mut out = Vec::new();
        for &n_filters in &self.filters {
            for &kernel_size in &self.kernels {
                for &deepness in &self.deepness {
                    out.push(NetConfig {
                        n_leads,
                        n_samples,
                        n_filters,
                        kernel_size,
                        deepness,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Metrics,
    pub sd: Metrics,
}

impl MetricSummary {
    pub fn from_folds(folds: &[Metrics]) -> Self {
        let stat = |f: fn(&Metrics) -> f64| mean_sd(&folds.iter().map(f).collect::<Vec<_>>());
        let (a, sa) = stat(|m| m.auroc);
        let (p, sp) = stat(|m| m.auprc);
        let (c, sc) = stat(|m| m.mcc);
        let (t, st) = stat(|m| m.three_mcs);
        Self {
            mean: Metrics { auroc: a, auprc: p, mcc: c, three_mcs: t },
            sd: Metrics { auroc: sa, auprc: sp, mcc: sc, three_mcs: st },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: NetConfig,
    pub n_params: usize,
    /// Why the cell was skipped, if it was.
    pub skipped: Option<String>,
    pub folds: Vec<Metrics>,
    pub summary: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &CellResult {
        &self.cells[self.best]
    }
}

/// Scores every input with the network.
pub fn score_all(net: &Conv1DNet, xs: &[ArrayView2<f64>]) -> Result<Vec<f64>> {
    xs.par_iter().map(|x| net.score(x.view())).collect()
}

/// Seed for initialising a network of `config` on `fold`.
pub fn init_seed(base: u64, config: &NetConfig, fold: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((config.n_filters as u64) << 40)
        ^ ((config.kernel_size as u64) << 24)
        ^ ((config.deepness as u64) << 16)
        ^ fold as u64
}

/// Initialises a network of `config` and trains it on `fold`.
pub fn train_fold(data: &Dataset, config: NetConfig, cfg: &TrainConfig, fold: usize) -> Result<(Conv1DNet, TrainHistory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed(cfg.seed, &config, fold));
    let net = Conv1DNet::init(config, &mut rng)?;
    let fold_cfg = TrainConfig {
        seed: cfg.seed.wrapping_add(fold as u64),
        ..cfg.clone()
    };
    train(net, data, &fold_cfg, fold)
}

/// Trains on one fold and evaluates on its validation part. Returns the
/// trained net and its validation metrics.
pub fn run_fold(data: &Dataset, config: NetConfig, cfg: &TrainConfig, fold: usize) -> Result<(Conv1DNet, Metrics)> {
    let (net, _) = train_fold(data, config, cfg, fold)?;
    let (_, val) = data.fold_indices(fold);
    let xs: Vec<ArrayView2<f64>> = val.iter().map(|&i| data.instances[i].values.view()).collect();
    let ys: Vec<bool> = val.iter().map(|&i| data.instances[i].label).collect();
    let scores = score_all(&net, &xs)?;
    let cal = isotonic_calibrate(&scores, &ys)?;
    Ok((net, evaluate(&scores, &ys, &cal)?))
}

/// Index of the best evaluated cell: highest mean 3MCS, then fewer
/// parameters, then smaller kernel.
pub fn select_best(cells: &[CellResult]) -> Option<usize> {
    cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.summary.map(|s| (i, s.mean.three_mcs, c.n_params, c.config.kernel_size)))
        .filter(|(_, t, _, _)| !t.is_nan())
        .min_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        })
        .map(|(i, ..)| i)
}

pub fn grid_search(data: &Dataset, grid: &GridSpec, cfg: &TrainConfig) -> Result<GridResult> {
    let first = data
        .instances
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let configs = grid.configs(first.n_leads(), first.n_samples());
    if configs.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let n_folds = data.n_folds();
    if n_folds == 0 {
        return Err(Error::Split("dataset has no CNN folds; run the split first".into()));
    }
    let cells = configs
        .par_iter()
        .map(|config| {
            let n_params = config.n_params();
            let cols = config.kernel_size * config.n_leads;
            if config.n_filters > cols {
                log::info!("skipping {config:?}: {} filters exceed {cols} kernel columns", config.n_filters);
                return Ok(CellResult {
                    config: *config,
                    n_params,
                    skipped: Some(format!(
                        "semi-orthogonality infeasible: {} rows > {cols} columns",
                        config.n_filters
                    )),
                    folds: Vec::new(),
                    summary: None,
                });
            }
            let folds = (0..n_folds)
                .into_par_iter()
                .map(|f| run_fold(data, *config, cfg, f).map(|(_, m)| m))
                .collect::<Result<Vec<_>>>()?;
            let summary = MetricSummary::from_folds(&folds);
            log::info!("{config:?}: mean 3MCS {:.4}", summary.mean.three_mcs);
            Ok(CellResult {
                config: *config,
                n_params,
                skipped: None,
                folds,
                summary: Some(summary),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&cells)
        .ok_or_else(|| Error::InvalidArgument("no feasible grid cell".into()))?;
    Ok(GridResult { cells, best })
}
