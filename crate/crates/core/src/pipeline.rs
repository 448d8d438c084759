//! Glue between stages: salient segments from a trained network, and
//! cross-validated presence + kernel-PCA logistic regression.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{Conv1DNet, MetricSummary};
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, isotonic_calibrate, IsotonicCalibrator, Metrics};
use crate::glm::{lr_fit, lr_predict_rows, lrt, LRModel, LrtResult};
use crate::resample::smoteenn;
use crate::saliency::instance_saliency;
use crate::shapefeat::{most_salient_segment, KernelPca};
use crate::signal::TimeSeriesInstance;

/// Most salient window of every instance under `net`.
pub fn salient_segments(net: &Conv1DNet, instances: &[&TimeSeriesInstance], l_samples: usize) -> Result<Vec<Array2<f64>>> {
    instances
        .par_iter()
        .map(|inst| {
            let (_, _, map) = instance_saliency(net, inst.values.view())?;
            most_salient_segment(inst.values.view(), map.phi.view(), l_samples).map(|(_, s)| s)
        })
        .collect()
}

/// Stratified assignment of rows to `n_folds` folds.
pub fn stratified_folds(labels: &[bool], n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument("n_folds must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < n_folds {
            return Err(Error::Split(format!(
                "class {} has {} rows, fewer than {n_folds} folds",
                class as u8,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next;
            next = (next + 1) % n_folds;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    /// Ridge strengths tried; the best mean 3MCS wins.
    pub lambdas: Vec<f64>,
    pub n_folds: usize,
    /// Rebalance each training fold with SMOTEENN on presence features.
    pub resample: bool,
    /// RBF width; `None` picks it from the median pairwise distance.
    pub gamma: Option<f64>,
    pub seed: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.01, 0.1, 1.0, 10.0],
            n_folds: 5,
            resample: true,
            gamma: None,
            seed: 0,
        }
    }
}

pub fn kpca_names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("kpca{j}")).collect()
}

/// Everything fitted on one training portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFit {
    pub kpca: KernelPca,
    pub model: LRModel,
    pub calibrator: IsotonicCalibrator,
}

impl LrFit {
    pub fn scores(&self, presence: ArrayView2<f64>) -> Result<Vec<f64>> {
        lr_predict_rows(&self.model, self.kpca.transform_rows(presence)?.view())
    }
}

/// Resamples the training rows, fits kernel PCA and the ridge model on them,
/// and calibrates on the original training rows.
pub fn fit_lr(presence: ArrayView2<f64>, y: &[bool], lambda: f64, cfg: &LrConfig, seed: u64) -> Result<LrFit> {
    let (fx, fy) = if cfg.resample {
        smoteenn(presence, y, seed)?
    } else {
        (presence.to_owned(), y.to_vec())
    };
    let k = presence.ncols();
    let kpca = KernelPca::fit(fx.view(), cfg.gamma, k)?;
    let z = kpca.transform_rows(fx.view())?;
    let model = lr_fit(z.view(), &fy, lambda, kpca_names(k))?;
    let train_scores = lr_predict_rows(&model, kpca.transform_rows(presence)?.view())?;
    let calibrator = isotonic_calibrate(&train_scores, y)?;
    Ok(LrFit { kpca, model, calibrator })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    pub folds: Vec<Metrics>,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrCvResult {
    pub per_lambda: Vec<LambdaResult>,
    /// Index into `per_lambda` of the highest mean 3MCS.
    pub best: usize,
    pub fold_of_row: Vec<usize>,
}

impl LrCvResult {
    pub fn best(&self) -> &LambdaResult {
        &self.per_lambda[self.best]
    }
}

fn rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn fold_parts(fold_of_row: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    let train = (0..fold_of_row.len()).filter(|&i| fold_of_row[i] != f).collect();
    let test = (0..fold_of_row.len()).filter(|&i| fold_of_row[i] == f).collect();
    (train, test)
}

/// Stratified cross-validation of the presence features over the ridge grid.
pub fn lr_cross_validate(presence: ArrayView2<f64>, y: &[bool], cfg: &LrConfig) -> Result<LrCvResult> {
    if presence.nrows() != y.len() {
        return Err(Error::Shape(format!("{} presence rows but {} labels", presence.nrows(), y.len())));
    }
    if cfg.lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let fold_of_row = stratified_folds(y, cfg.n_folds, cfg.seed)?;
    let per_lambda = cfg
        .lambdas
        .iter()
        .map(|&lambda| {
            let folds = (0..cfg.n_folds)
                .into_par_iter()
                .map(|f| {
                    let (train, test) = fold_parts(&fold_of_row, f);
                    let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
                    let vy: Vec<bool> = test.iter().map(|&i| y[i]).collect();
                    let fit = fit_lr(rows(presence, &train).view(), &ty, lambda, cfg, cfg.seed.wrapping_add(f as u64))?;
                    let scores = fit.scores(rows(presence, &test).view())?;
                    evaluate(&scores, &vy, &fit.calibrator)
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = MetricSummary::from_folds(&folds);
            Ok(LambdaResult { lambda, folds, summary })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = (0..per_lambda.len())
        .max_by(|&a, &b| {
            per_lambda[a]
                .summary
                .mean
                .three_mcs
                .total_cmp(&per_lambda[b].summary.mean.three_mcs)
                .then(b.cmp(&a))
        })
        .expect("nonempty grid");
    Ok(LrCvResult { per_lambda, best, fold_of_row })
}

/// Per-fold test of whether age and sex (the two columns of `covariates`) add to the kernel-PCA features.
/// Both models are fitted without penalty on the training rows of each fold.
pub fn lrt_folds(
    presence: ArrayView2<f64>,
    y: &[bool],
    covariates: ArrayView2<f64>,
    cfg: &LrConfig,
    alpha: f64,
) -> Result<Vec<LrtResult>> {
    if covariates.nrows() != y.len() || presence.nrows() != y.len() || covariates.ncols() != 2 {
        return Err(Error::Shape("expected presence rows, age and sex columns, and labels to agree".into()));
    }
    let fold_of_row = stratified_folds(y, cfg.n_folds, cfg.seed)?;
    let k = presence.ncols();
    (0..cfg.n_folds)
        .into_par_iter()
        .map(|f| {
            let (train, _) = fold_parts(&fold_of_row, f);
            let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let kpca = KernelPca::fit(rows(presence, &train).view(), cfg.gamma, k)?;
            let z = kpca.transform_rows(rows(presence, &train).view())?;
            let cov = standardize_columns(rows(covariates, &train).view());
            let full_x = ndarray::concatenate(Axis(1), &[z.view(), cov.view()]).map_err(|e| Error::Shape(e.to_string()))?;
            let mut names = kpca_names(k);
            let reduced = lr_fit(z.view(), &ty, 0.0, names.clone())?;
            names.extend(["age".to_string(), "sex".to_string()]);
            let full = lr_fit(full_x.view(), &ty, 0.0, names)?;
            lrt(&reduced, &full, full_x.view(), &ty, alpha, cfg.n_folds)
        })
        .collect()
}

/// Z-scores each column with its population standard deviation (1 if zero).
pub fn standardize_columns(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut col in out.columns_mut() {
        let mean = col.mean().unwrap_or(0.0);
        let sd = col.std(0.0);
        let sd = if sd > 0.0 { sd } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) / sd);
    }
    out
}

/// Age and sex of each instance as two columns; missing values are an error.
pub fn baseline_covariates(instances: &[&TimeSeriesInstance]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((instances.len(), 2));
    for (i, inst) in instances.iter().enumerate() {
        let (Some(age), Some(sex)) = (inst.age, inst.sex) else {
            return Err(Error::InvalidArgument(format!("instance {} lacks age or sex", inst.id)));
        };
        out[[i, 0]] = age;
        out[[i, 1]] = f64::from(sex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified() {
        let y: Vec<bool> = (0..23).map(|i| i % 3 == 0).collect();
        let f = stratified_folds(&y, 4, 1).unwrap();
        for k in 0..4 {
            let pos = (0..y.len()).filter(|&i| f[i] == k && y[i]).count();
            assert!((1..=3).contains(&pos), "{pos}");
        }
        assert_eq!(f, stratified_folds(&y, 4, 1).unwrap());
        assert!(stratified_folds(&y[..4], 4, 0).is_err());
    }

    #[test]
    fn standardized_columns() {
        let x = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        assert_eq!(standardize_columns(x.view()), ndarray::array![[-1.0, 0.0], [1.0, 0.0]]);
    }
}
