//! Synthetic multi-lead ECG: each beat is a sum of Gaussian bumps (P, Q, R,
//! S, T) with per-lead amplitudes from a fixed lead-projection table.
//! Output is in microvolts, so the 1e-3 preprocessing rescale lands in mV.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TimeSeriesInstance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wave {
    P = 0,
    Q = 1,
    R = 2,
    S = 3,
    T = 4,
}

/// Offset of each wave's peak from the R peak, seconds.
const WAVE_OFFSETS_S: [f64; 5] = [-0.16, -0.035, 0.0, 0.035, 0.28];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pathology {
    #[default]
    None,
    /// No P wave, RR jitter of at least 15%.
    AbsentPIrregularRr,
    /// RR interval of at least 1.2 s.
    SlowRate,
    /// Inverted T wave and a depressed S-T segment.
    StDepressTInvert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub powerline_hz: f64,
    pub powerline_amp: f64,
    pub wander_hz: f64,
    pub wander_amp: f64,
    pub white_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            powerline_hz: 50.0,
            powerline_amp: 0.0,
            wander_hz: 0.2,
            wander_amp: 0.0,
            white_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rr_interval_s: f64,
    pub rr_jitter: f64,
    /// Per lead, amplitudes of P, Q, R, S, T in microvolts.
    pub wave_amplitudes: Vec<[f64; 5]>,
    /// Gaussian widths (standard deviations) of P, Q, R, S, T in seconds.
    pub wave_widths_s: [f64; 5],
    pub pathology: Pathology,
    pub noise: NoiseConfig,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

/// Frontal/precordial lead axes in degrees, in standard 12-lead order.
const LEAD_AXES_DEG: [f64; 12] = [
    0.0, 60.0, 120.0, -150.0, -30.0, 90.0, 120.0, 100.0, 80.0, 60.0, 30.0, 0.0,
];

const LEAD_NAMES: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

pub fn standard_lead_names(n: usize) -> Vec<String> {
    if n <= 12 {
        LEAD_NAMES[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("lead{i}")).collect()
    }
}

impl SynthConfig {
    /// Normal sinus rhythm at 75 bpm on `n_leads` leads.
    pub fn normal(n_leads: usize, sample_rate_hz: f64, seed: u64) -> Self {
        // base amplitudes and electrical axes for P, QRS and T
        let base = [150.0, -120.0, 1200.0, -300.0, 320.0];
        let axes = [50.0, 60.0, 60.0, 60.0, 45.0];
        let wave_amplitudes = (0..n_leads)
            .map(|l| {
                let lead_axis = LEAD_AXES_DEG[l % 12];
                let mut amps = [0.0; 5];
                for w in 0..5 {
                    let proj = ((lead_axis - axes[w]) * PI / 180.0).cos();
                    // keep every lead visibly non-degenerate
                    let proj = if proj.abs() < 0.3 { 0.3f64.copysign(proj) } else { proj };
                    amps[w] = base[w] * proj;
                }
                amps
            })
            .collect();
        Self {
            rr_interval_s: 0.8,
            rr_jitter: 0.05,
            wave_amplitudes,
            wave_widths_s: [0.022, 0.010, 0.011, 0.011, 0.045],
            pathology: Pathology::None,
            noise: NoiseConfig::default(),
            sample_rate_hz,
            seed,
        }
    }

    pub fn n_leads(&self) -> usize {
        self.wave_amplitudes.len()
    }

    fn validate(&self, duration_s: f64) -> Result<()> {
        if !(self.rr_interval_s > 0.0) {
            return Err(Error::InvalidArgument("rr_interval_s must be positive".into()));
        }
        if self.wave_widths_s.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("wave widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rr_jitter) {
            return Err(Error::InvalidArgument("rr_jitter must lie in [0, 1)".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument("sample_rate_hz must be positive".into()));
        }
        if self.wave_amplitudes.is_empty() {
            return Err(Error::InvalidArgument("at least one lead is required".into()));
        }
        if !(self.noise.wander_hz <= 0.3) {
            return Err(Error::InvalidArgument("wander_hz must be <= 0.3 Hz".into()));
        }
        if duration_s < 2.0 * self.effective_rr() {
            return Err(Error::InvalidArgument(format!(
                "duration {duration_s} s shorter than two RR intervals"
            )));
        }
        Ok(())
    }

    /// RR interval after pathology adjustments.
    pub fn effective_rr(&self) -> f64 {
        match self.pathology {
            Pathology::SlowRate => self.rr_interval_s.max(1.2),
            _ => self.rr_interval_s,
        }
    }

    pub fn effective_jitter(&self) -> f64 {
        match self.pathology {
            Pathology::AbsentPIrregularRr => self.rr_jitter.max(0.15),
            _ => self.rr_jitter,
        }
    }
}

fn gaussian(t: f64, center: f64, width: f64) -> f64 {
    let z = (t - center) / width;
    (-0.5 * z * z).exp()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates one labelled record; label is true for any pathology.
pub fn synth_ecg(cfg: &SynthConfig, duration_s: f64) -> Result<TimeSeriesInstance> {
    cfg.validate(duration_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fs = cfg.sample_rate_hz;
    let n = (duration_s * fs).round() as usize;
    let rr = cfg.effective_rr();
    let jitter = cfg.effective_jitter();

    // beat times start one interval before the record so the first samples
    // are not artificially flat
    let mut beats = Vec::new();
    let mut t = rng.gen_range(0.0..rr) - rr;
    while t < duration_s + rr {
        beats.push(t);
        let u: f64 = rng.gen_range(-1.0..1.0);
        t += rr * (1.0 + jitter * u);
    }

    let mut amps = cfg.wave_amplitudes.clone();
    match cfg.pathology {
        Pathology::AbsentPIrregularRr => amps.iter_mut().for_each(|a| a[Wave::P as usize] = 0.0),
        Pathology::StDepressTInvert => {
            amps.iter_mut().for_each(|a| a[Wave::T as usize] = -a[Wave::T as usize])
        }
        _ => {}
    }
    let st_depth: Vec<f64> = cfg
        .wave_amplitudes
        .iter()
        .map(|a| match cfg.pathology {
            Pathology::StDepressTInvert => 0.15 * a[Wave::R as usize].abs(),
            _ => 0.0,
        })
        .collect();
    let widths = cfg.wave_widths_s;
    let st_start = WAVE_OFFSETS_S[Wave::S as usize] + 2.0 * widths[Wave::S as usize];
    let st_end = WAVE_OFFSETS_S[Wave::T as usize];
    let st_edge = 0.01;

    let phase_line = rng.gen_range(0.0..2.0 * PI);
    let phase_wander = rng.gen_range(0.0..2.0 * PI);
    let white = Normal::new(0.0, cfg.noise.white_sigma.max(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let n_leads = cfg.n_leads();
    let mut values = Array2::zeros((n_leads, n));
    for i in 0..n {
        let ti = i as f64 / fs;
        let near: Vec<f64> = beats
            .iter()
            .map(|b| ti - b)
            .filter(|d| (-0.6..0.8).contains(d))
            .collect();
        let line = cfg.noise.powerline_amp
            * (2.0 * PI * cfg.noise.powerline_hz * ti + phase_line).sin();
        let wander =
            cfg.noise.wander_amp * (2.0 * PI * cfg.noise.wander_hz * ti + phase_wander).sin();
        for l in 0..n_leads {
            let mut v = 0.0;
            for d in &near {
                for w in 0..5 {
                    v += amps[l][w] * gaussian(*d, WAVE_OFFSETS_S[w], widths[w]);
                }
                if st_depth[l] > 0.0 {
                    let plateau = logistic((d - st_start) / st_edge) * logistic((st_end - d) / st_edge);
                    v -= st_depth[l] * plateau;
                }
            }
            values[[l, i]] = v + line + wander;
        }
    }
    if cfg.noise.white_sigma > 0.0 {
        values.iter_mut().for_each(|v| *v += white.sample(&mut rng));
    }

    Ok(TimeSeriesInstance {
        id: format!("synth-{}", cfg.seed),
        values,
        sample_rate_hz: fs,
        lead_names: standard_lead_names(n_leads),
        label: cfg.pathology != Pathology::None,
        age: None,
        sex: None,
    })
}

/// Labelled cohort of synthetic records with per-record rate and amplitude
/// variation and uninformative age/sex covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_instances: usize,
    pub positive_fraction: f64,
    pub pathology: Pathology,
    pub n_leads: usize,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Range of the RR interval of normal records, seconds.
    pub normal_rr_s: [f64; 2],
    /// Range of the RR interval of slow-rate records, seconds.
    pub slow_rr_s: [f64; 2],
    /// Records scale all wave amplitudes by a factor drawn from this range.
    pub amplitude_scale: [f64; 2],
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_instances: 400,
            positive_fraction: 0.25,
            pathology: Pathology::SlowRate,
            n_leads: 2,
            sample_rate_hz: 200.0,
            duration_s: 10.0,
            normal_rr_s: [0.65, 0.95],
            slow_rr_s: [1.2, 1.5],
            amplitude_scale: [0.8, 1.2],
            noise: NoiseConfig {
                powerline_amp: 20.0,
                wander_amp: 60.0,
                white_sigma: 10.0,
                ..NoiseConfig::default()
            },
            seed: 0,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Generates `n_instances` records; `round(positive_fraction * n)` of them
/// carry the pathology, in shuffled order. Ids are `rec00000`, `rec00001`, ...
pub fn synth_cohort(cfg: &CohortConfig) -> Result<Vec<TimeSeriesInstance>> {
    if !(0.0..=1.0).contains(&cfg.positive_fraction) {
        return Err(Error::InvalidArgument("positive_fraction must lie in [0, 1]".into()));
    }
    if cfg.n_leads == 0 {
        return Err(Error::InvalidArgument("n_leads must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_pos = (cfg.positive_fraction * cfg.n_instances as f64).round() as usize;
    let mut labels: Vec<bool> = (0..cfg.n_instances).map(|i| i < n_pos).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let mut out = Vec::with_capacity(cfg.n_instances);
    for (i, positive) in labels.into_iter().enumerate() {
        let mut sc = SynthConfig::normal(cfg.n_leads, cfg.sample_rate_hz, rng.gen());
        sc.noise = cfg.noise.clone();
        let scale = uniform(&mut rng, cfg.amplitude_scale);
        sc.wave_amplitudes.iter_mut().flatten().for_each(|a| *a *= scale);
        sc.rr_interval_s = uniform(&mut rng, cfg.normal_rr_s);
        if positive {
            sc.pathology = cfg.pathology;
            if cfg.pathology == Pathology::SlowRate {
                sc.rr_interval_s = uniform(&mut rng, cfg.slow_rr_s);
            }
        }
        let mut inst = synth_ecg(&sc, cfg.duration_s)?;
        inst.id = format!("rec{i:05}");
        inst.age = Some(rng.gen_range(30.0..80.0f64).round());
        inst.sex = Some(rng.gen_range(0..2));
        out.push(inst);
    }
    Ok(out)
}
