//! Chi-squared saliency from reconstruction discrepancy, and occlusion tests.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::Conv1DNet;
use crate::error::{Error, Result};
use crate::evalmetrics::auroc;
use crate::inversion::reconstruct;
use crate::signal::TimeSeriesInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    /// Survival probability of each standardized discrepancy, in `[0, 1]`.
    pub phi: Array2<f64>,
    /// Pooled discrepancy scale; zero when the reconstruction is exact.
    pub sigma_hat: f64,
}

/// Survival function of a chi-squared variable with one degree of freedom
/// evaluated at `z^2`.
pub fn chi2_1_survival_at(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

pub fn saliency_map(x: ArrayView2<f64>, x_rec: ArrayView2<f64>) -> Result<SaliencyMap> {
    if x.dim() != x_rec.dim() {
        return Err(Error::Shape(format!(
            "input {:?} and reconstruction {:?} differ",
            x.dim(),
            x_rec.dim()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Shape("saliency needs at least two entries".into()));
    }
    let diff = &x - &x_rec;
    let ss: f64 = diff.iter().map(|d| d * d).sum();
    let sigma_hat = (ss / (n - 1) as f64).sqrt();
    if sigma_hat == 0.0 {
        return Ok(SaliencyMap {
            phi: Array2::ones(x.dim()),
            sigma_hat,
        });
    }
    Ok(SaliencyMap {
        phi: diff.mapv(|d| chi2_1_survival_at(d / sigma_hat)),
        sigma_hat,
    })
}

/// Forward pass, reconstruction and saliency of one input.
pub fn instance_saliency(net: &Conv1DNet, x: ArrayView2<f64>) -> Result<(f64, Array2<f64>, SaliencyMap)> {
    let (score, trace) = net.forward(x)?;
    let rec = reconstruct(net, &trace)?;
    let map = saliency_map(x, rec.view())?;
    Ok((score, rec, map))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    Salient,
    Random,
}

/// Flat (row-major) indices of the entries to occlude.
pub fn occlusion_set(phi: &SaliencyMap, fraction: f64, mode: OcclusionMode, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let n = phi.phi.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    Ok(match mode {
        OcclusionMode::Salient => {
            let flat: Vec<f64> = phi.phi.iter().copied().collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]));
            idx.truncate(k);
            idx
        }
        OcclusionMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, n, k).into_vec()
        }
    })
}

pub fn occlude_values(
    x: ArrayView2<f64>,
    phi: &SaliencyMap,
    fraction: f64,
    mode: OcclusionMode,
    seed: u64,
) -> Result<Array2<f64>> {
    if x.dim() != phi.phi.dim() {
        return Err(Error::Shape(format!(
            "instance {:?} and saliency {:?} differ",
            x.dim(),
            phi.phi.dim()
        )));
    }
    let mut out = x.as_standard_layout().into_owned();
    let flat = out.as_slice_mut().expect("standard layout");
    for i in occlusion_set(phi, fraction, mode, seed)? {
        flat[i] = 0.0;
    }
    Ok(out)
}

/// Copy of `x` with the selected entries set to zero.
pub fn occlude(
    x: &TimeSeriesInstance,
    phi: &SaliencyMap,
    fraction: f64,
    mode: OcclusionMode,
    seed: u64,
) -> Result<TimeSeriesInstance> {
    Ok(x.with_values(occlude_values(x.values.view(), phi, fraction, mode, seed)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoarRow {
    pub fraction: f64,
    pub auroc_salient: f64,
    pub auroc_random: f64,
}

/// AUROC of the unchanged model on occluded copies, per fraction and mode.
pub fn roar_curve(
    net: &Conv1DNet,
    instances: &[&TimeSeriesInstance],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<RoarRow>> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("ROAR needs at least one instance".into()));
    }
    let labels: Vec<bool> = instances.iter().map(|i| i.label).collect();
    let maps = instances
        .par_iter()
        .map(|inst| instance_saliency(net, inst.values.view()).map(|(_, _, m)| m))
        .collect::<Result<Vec<_>>>()?;
    fractions
        .iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let scores = |mode: OcclusionMode| -> Result<Vec<f64>> {
                instances
                    .par_iter()
                    .zip(maps.par_iter())
                    .enumerate()
                    .map(|(i, (inst, map))| {
                        let s = seed ^ ((fi as u64) << 32) ^ i as u64;
                        let occ = occlude_values(inst.values.view(), map, fraction, mode, s)?;
                        net.score(occ.view())
                    })
                    .collect()
            };
            Ok(RoarRow {
                fraction,
                auroc_salient: auroc(&scores(OcclusionMode::Salient)?, &labels)?,
                auroc_random: auroc(&scores(OcclusionMode::Random)?, &labels)?,
            })
        })
        .collect()
}
