//! The pipeline stages. Each reads its inputs from the work directory and
//! writes its outputs back there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use salient_core::convnet::{grid_search, score_all, train_fold, Conv1DNet, GridResult, NetConfig, TrainHistory};
use salient_core::evalmetrics::{evaluate, isotonic_calibrate, IsotonicCalibrator, Metrics};
use salient_core::glm::{permutation_importance, spearman, LrtResult};
use salient_core::inversion::reconstruct_input;
use salient_core::pipeline::{
    baseline_covariates, fit_lr, lr_cross_validate, lrt_folds, salient_segments, LrCvResult, LrFit,
};
use salient_core::saliency::{instance_saliency, roar_curve};
use salient_core::shapefeat::{kshape_fit, most_salient_segment, presence_matrix, KShapeModel};
use salient_core::signal::{
    load_dataset, load_split_tags, preprocess_dataset, save_dataset, save_split_tags, split_dataset, synth_cohort,
    write_matrix_csv, Dataset, DatasetFormat, SplitTag, TimeSeriesInstance, SPLITS_FILE,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::CliError;
use crate::svg::{self, Series};

pub type CliResult<T> = Result<T, CliError>;

trait At<T> {
    fn at(self, stage: Stage) -> CliResult<T>;
}

impl<T> At<T> for salient_core::Result<T> {
    fn at(self, stage: Stage) -> CliResult<T> {
        self.map_err(|e| CliError::core(stage.name(), e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Preprocess,
    Split,
    GridSearch,
    TrainCnn,
    Invert,
    Saliency,
    Roar,
    Kshape,
    Extract,
    FitLr,
    Importance,
    Lrt,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 14] = [
        Stage::Synth,
        Stage::Preprocess,
        Stage::Split,
        Stage::GridSearch,
        Stage::TrainCnn,
        Stage::Invert,
        Stage::Saliency,
        Stage::Roar,
        Stage::Kshape,
        Stage::Extract,
        Stage::FitLr,
        Stage::Importance,
        Stage::Lrt,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Split => "split",
            Stage::GridSearch => "grid-search",
            Stage::TrainCnn => "train-cnn",
            Stage::Invert => "invert",
            Stage::Saliency => "saliency",
            Stage::Roar => "roar",
            Stage::Kshape => "kshape",
            Stage::Extract => "extract",
            Stage::FitLr => "fit-lr",
            Stage::Importance => "importance",
            Stage::Lrt => "lrt",
            Stage::Report => "report",
        }
    }

    /// The seed this stage draws from, if any.
    pub fn seed_mut(self, cfg: &mut Config) -> Option<&mut u64> {
        match self {
            Stage::Synth => Some(&mut cfg.synth.seed),
            Stage::Split => Some(&mut cfg.seeds.split),
            Stage::GridSearch | Stage::TrainCnn => Some(&mut cfg.seeds.train),
            Stage::Roar => Some(&mut cfg.seeds.roar),
            Stage::Kshape => Some(&mut cfg.seeds.kshape),
            Stage::FitLr | Stage::Lrt => Some(&mut cfg.seeds.lr),
            Stage::Importance => Some(&mut cfg.seeds.importance),
            Stage::Preprocess | Stage::Invert | Stage::Saliency | Stage::Extract | Stage::Report => None,
        }
    }
}

pub const RAW: &str = "raw.json";
pub const DATA: &str = "data.json";
pub const GRID_JSON: &str = "grid.json";
pub const GRID_CSV: &str = "grid.csv";
pub const MODEL: &str = "model.json";
pub const HISTORY: &str = "train_history.csv";
pub const CNN_METRICS: &str = "cnn_metrics.csv";
pub const CNN_SCORES: &str = "cnn_scores.csv";
pub const RECONSTRUCTIONS: &str = "reconstructions.csv";
pub const SALIENCY: &str = "saliency.csv";
pub const SALIENCY_DIR: &str = "saliency";
pub const SALIENCY_SVG: &str = "saliency_example.svg";
pub const ROAR_CSV: &str = "roar.csv";
pub const ROAR_SVG: &str = "roar.svg";
pub const KSHAPE: &str = "kshape.json";
pub const CENTROIDS_DIR: &str = "centroids";
pub const PRESENCE: &str = "presence.csv";
pub const LR_CV: &str = "lr_cv.csv";
pub const LR_MODEL: &str = "lr_model.json";
pub const LR_COEFFICIENTS: &str = "lr_coefficients.csv";
pub const KPCA_FEATURES: &str = "kpca_features.csv";
pub const IMPORTANCE_CSV: &str = "importance.csv";
pub const IMPORTANCE_SVG: &str = "importance.svg";
pub const SPEARMAN_CSV: &str = "spearman.csv";
pub const SPEARMAN_SVG: &str = "spearman.svg";
pub const LRT: &str = "lrt.csv";
pub const PROVENANCE: &str = "provenance.json";
pub const REPORT_DIR: &str = "report";

/// Trained network with its calibration and scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnArtifact {
    pub net: Conv1DNet,
    pub fold: usize,
    pub calibrator: IsotonicCalibrator,
    pub validation: Metrics,
    pub test: Metrics,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrArtifact {
    pub lambda: f64,
    pub cv_mean: Metrics,
    pub cv_sd: Metrics,
    pub centroid_names: Vec<String>,
    pub fit: LrFit,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StageLog {
    stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRecord {
    config_hash: String,
    seed: Option<u64>,
}

pub struct Ctx {
    pub cfg: Config,
    pub dir: PathBuf,
}

fn io_err(stage: Stage, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(stage.name(), path, e)
}

fn csv_err(stage: Stage, path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| io_err(stage, path, e)
}

fn fmt_f(v: f64) -> String {
    v.to_string()
}

fn write_table(stage: Stage, path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(stage, path))?;
    w.write_record(header).map_err(csv_err(stage, path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(stage, path))?;
    }
    w.flush().map_err(|e| io_err(stage, path, e))
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn floats(&self, stage: Stage, path: &Path, name: &str) -> CliResult<Vec<f64>> {
        let j = self
            .col(name)
            .ok_or_else(|| CliError::new(stage.name(), "parse", format!("{}: no column {name}", path.display())))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[j].parse().map_err(|_| {
                    CliError::new(stage.name(), "parse", format!("{} row {}: bad number '{}'", path.display(), i + 1, r[j]))
                })
            })
            .collect()
    }
}

fn write_text(stage: Stage, path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(stage, path, e))
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(stage.name(), "serde", e.to_string()))?;
    write_text(stage, path, &text)
}

fn fresh_dir(stage: Stage, path: &Path) -> CliResult<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| io_err(stage, path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| io_err(stage, path, e))
}

fn check_range(stage: Stage, ok: bool, what: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::new(stage.name(), "config", what))
    }
}

fn metric_row(label: &str, m: &Metrics) -> Vec<String> {
    vec![label.to_string(), fmt_f(m.auroc), fmt_f(m.auprc), fmt_f(m.mcc), fmt_f(m.three_mcs)]
}

const METRIC_HEADER: [&str; 5] = ["partition", "auroc", "auprc", "mcc", "three_mcs"];

impl Ctx {
    pub fn new(cfg: Config, dir: PathBuf) -> Self {
        Self { cfg, dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of an upstream artifact, or an error naming the stage that makes it.
    fn need(&self, stage: Stage, name: &str, producer: Stage) -> CliResult<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::missing(stage.name(), &p, producer.name()))
        }
    }

    fn read_json<T: DeserializeOwned>(&self, stage: Stage, name: &str, producer: Stage) -> CliResult<T> {
        let p = self.need(stage, name, producer)?;
        let text = fs::read_to_string(&p).map_err(|e| io_err(stage, &p, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::new(stage.name(), "serde", format!("{}: {e}", p.display())))
    }

    fn read_table(&self, stage: Stage, name: &str, producer: Stage) -> CliResult<(PathBuf, Table)> {
        let p = self.need(stage, name, producer)?;
        let mut rdr = csv::Reader::from_path(&p).map_err(csv_err(stage, &p))?;
        let header = rdr
            .headers()
            .map_err(csv_err(stage, &p))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(csv_err(stage, &p))?;
        Ok((p, Table { header, rows }))
    }

    fn data(&self, stage: Stage) -> CliResult<Dataset> {
        let p = self.need(stage, DATA, Stage::Preprocess)?;
        load_dataset(&p, DatasetFormat::Bundle).at(stage)
    }

    fn tagged_data(&self, stage: Stage) -> CliResult<Dataset> {
        let splits = self.need(stage, SPLITS_FILE, Stage::Split)?;
        let mut ds = self.data(stage)?;
        load_split_tags(&mut ds, &splits).at(stage)?;
        Ok(ds)
    }

    fn cnn(&self, stage: Stage) -> CliResult<CnnArtifact> {
        self.read_json(stage, MODEL, Stage::TrainCnn)
    }

    fn record(&self, stage: Stage) -> CliResult<()> {
        let p = self.path(PROVENANCE);
        let mut log: StageLog = match fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => StageLog::default(),
        };
        let mut cfg = self.cfg.clone();
        let seed = stage.seed_mut(&mut cfg).map(|s| *s);
        log.stages.insert(
            stage.name().to_string(),
            StageRecord {
                config_hash: self.cfg.hash(),
                seed,
            },
        );
        write_json(stage, &p, &log)
    }

    pub fn run(&self, stage: Stage) -> CliResult<()> {
        fs::create_dir_all(&self.dir).map_err(|e| io_err(stage, &self.dir, e))?;
        let msg = match stage {
            Stage::Synth => self.synth(),
            Stage::Preprocess => self.preprocess(),
            Stage::Split => self.split(),
            Stage::GridSearch => self.grid_search(),
            Stage::TrainCnn => self.train_cnn(),
            Stage::Invert => self.invert(),
            Stage::Saliency => self.saliency(),
            Stage::Roar => self.roar(),
            Stage::Kshape => self.kshape(),
            Stage::Extract => self.extract(),
            Stage::FitLr => self.fit_lr(),
            Stage::Importance => self.importance(),
            Stage::Lrt => self.lrt(),
            Stage::Report => self.report(),
        }?;
        self.record(stage)?;
        println!("{}: {msg}", stage.name());
        Ok(())
    }

    fn synth(&self) -> CliResult<String> {
        let st = Stage::Synth;
        let instances = synth_cohort(&self.cfg.synth).at(st)?;
        let ds = Dataset::new(instances);
        save_dataset(&ds, &self.path(RAW), DatasetFormat::Bundle).at(st)?;
        Ok(format!("{} instances -> {RAW}", ds.len()))
    }

    fn preprocess(&self) -> CliResult<String> {
        let st = Stage::Preprocess;
        let raw = match &self.cfg.data.input {
            Some(input) => {
                if !input.exists() {
                    return Err(CliError::io(st.name(), input, "input does not exist"));
                }
                load_dataset(input, self.cfg.data.format).at(st)?
            }
            None => load_dataset(&self.need(st, RAW, Stage::Synth)?, DatasetFormat::Bundle).at(st)?,
        };
        if raw.is_empty() {
            return Err(CliError::new(st.name(), "invalid-argument", "dataset is empty"));
        }
        let ds = preprocess_dataset(&raw, &self.cfg.data.preprocess).at(st)?;
        save_dataset(&Dataset::new(ds.instances), &self.path(DATA), DatasetFormat::Bundle).at(st)?;
        Ok(format!("{} instances -> {DATA}", raw.len()))
    }

    fn split(&self) -> CliResult<String> {
        let st = Stage::Split;
        check_range(st, self.cfg.data.n_folds >= 2, "data.n_folds must be at least 2")?;
        let ds = self.data(st)?;
        let tagged = split_dataset(&ds, self.cfg.seeds.split, self.cfg.data.n_folds).at(st)?;
        save_split_tags(&tagged, &self.path(SPLITS_FILE)).at(st)?;
        let count = |f: fn(&SplitTag) -> bool| tagged.split_tags.iter().filter(|t| f(t)).count();
        Ok(format!(
            "{} cnn validation, {} cnn test, {} lr -> {SPLITS_FILE}",
            count(|t| matches!(t, SplitTag::CnnVal(_))),
            count(|t| *t == SplitTag::CnnTest),
            count(|t| *t == SplitTag::LrHalf)
        ))
    }

    fn grid_search(&self) -> CliResult<String> {
        let st = Stage::GridSearch;
        let ds = self.tagged_data(st)?;
        let tc = self.cfg.cnn.train_config(self.cfg.seeds.train);
        tc.validate().at(st)?;
        let res = grid_search(&ds, &self.cfg.cnn.grid(), &tc).at(st)?;
        write_json(st, &self.path(GRID_JSON), &res)?;
        let rows: Vec<Vec<String>> = res
            .cells
            .iter()
            .map(|c| {
                let m = |f: fn(&Metrics) -> f64| c.summary.map(|s| fmt_f(f(&s.mean))).unwrap_or_default();
                let sd = c.summary.map(|s| fmt_f(s.sd.three_mcs)).unwrap_or_default();
                vec![
                    c.config.n_filters.to_string(),
                    c.config.kernel_size.to_string(),
                    c.config.deepness.to_string(),
                    c.n_params.to_string(),
                    c.skipped.clone().unwrap_or_default(),
                    m(|x| x.auroc),
                    m(|x| x.auprc),
                    m(|x| x.mcc),
                    m(|x| x.three_mcs),
                    sd,
                ]
            })
            .collect();
        write_table(
            st,
            &self.path(GRID_CSV),
            &[
                "filters", "kernel", "deepness", "n_params", "skipped", "auroc", "auprc", "mcc", "three_mcs", "three_mcs_sd",
            ],
            &rows,
        )?;
        let best = res.best_cell();
        Ok(format!(
            "{} cells, best filters={} kernel={} deepness={} -> {GRID_JSON}",
            res.cells.len(),
            best.config.n_filters,
            best.config.kernel_size,
            best.config.deepness
        ))
    }

    fn net_config(&self, st: Stage, ds: &Dataset) -> CliResult<NetConfig> {
        let first = &ds.instances[0];
        let (n_leads, n_samples) = (first.n_leads(), first.n_samples());
        if let Some(m) = self.cfg.cnn.model {
            return Ok(NetConfig {
                n_leads,
                n_samples,
                n_filters: m.filters,
                kernel_size: m.kernel,
                deepness: m.deepness,
            });
        }
        let feasible: Vec<NetConfig> = self
            .cfg
            .cnn
            .grid()
            .configs(n_leads, n_samples)
            .into_iter()
            .filter(|c| c.n_filters <= c.kernel_size * c.n_leads)
            .collect();
        if feasible.len() == 1 && !self.path(GRID_JSON).exists() {
            return Ok(feasible[0]);
        }
        let grid: GridResult = self.read_json(st, GRID_JSON, Stage::GridSearch)?;
        Ok(grid.best_cell().config)
    }

    fn train_cnn(&self) -> CliResult<String> {
        let st = Stage::TrainCnn;
        let ds = self.tagged_data(st)?;
        let config = self.net_config(st, &ds)?;
        let tc = self.cfg.cnn.train_config(self.cfg.seeds.train);
        tc.validate().at(st)?;
        let fold = 0;
        let (net, history) = train_fold(&ds, config, &tc, fold).at(st)?;
        let (_, val) = ds.fold_indices(fold);
        let test = ds.indices_where(|t| t == SplitTag::CnnTest);
        let scores_of = |idx: &[usize]| -> CliResult<(Vec<f64>, Vec<bool>)> {
            let xs: Vec<ArrayView2<f64>> = idx.iter().map(|&i| ds.instances[i].values.view()).collect();
            Ok((score_all(&net, &xs).at(st)?, idx.iter().map(|&i| ds.instances[i].label).collect()))
        };
        let (vs, vy) = scores_of(&val)?;
        let (ts, ty) = scores_of(&test)?;
        let calibrator = isotonic_calibrate(&vs, &vy).at(st)?;
        let validation = evaluate(&vs, &vy, &calibrator).at(st)?;
        let test_metrics = evaluate(&ts, &ty, &calibrator).at(st)?;

        let hist_rows: Vec<Vec<String>> = history
            .epochs
            .iter()
            .map(|e| vec![e.epoch.to_string(), fmt_f(e.learning_rate), fmt_f(e.train_loss), fmt_f(e.val_loss)])
            .collect();
        write_table(st, &self.path(HISTORY), &["epoch", "learning_rate", "train_loss", "val_loss"], &hist_rows)?;
        write_table(
            st,
            &self.path(CNN_METRICS),
            &METRIC_HEADER,
            &[metric_row("validation", &validation), metric_row("test", &test_metrics)],
        )?;
        let mut score_rows = Vec::new();
        for (part, idx, scores) in [("validation", &val, &vs), ("test", &test, &ts)] {
            for (&i, &s) in idx.iter().zip(scores) {
                let x = &ds.instances[i];
                score_rows.push(vec![
                    x.id.clone(),
                    part.to_string(),
                    (x.label as u8).to_string(),
                    fmt_f(s),
                    fmt_f(calibrator.apply(s)),
                ]);
            }
        }
        write_table(st, &self.path(CNN_SCORES), &["id", "partition", "label", "score", "calibrated"], &score_rows)?;
        let art = CnnArtifact {
            net,
            fold,
            calibrator,
            validation,
            test: test_metrics,
            history,
        };
        write_json(st, &self.path(MODEL), &art)?;
        Ok(format!(
            "filters={} kernel={} deepness={}, test auroc {:.4}, 3MCS {:.4} -> {MODEL}",
            config.n_filters, config.kernel_size, config.deepness, test_metrics.auroc, test_metrics.three_mcs
        ))
    }

    fn test_instances<'a>(&self, ds: &'a Dataset) -> Vec<&'a TimeSeriesInstance> {
        ds.subset(&ds.indices_where(|t| t == SplitTag::CnnTest))
    }

    fn invert(&self) -> CliResult<String> {
        let st = Stage::Invert;
        let ds = self.tagged_data(st)?;
        let art = self.cnn(st)?;
        let mut rows = Vec::new();
        let mut gap = 0.0;
        let test = self.test_instances(&ds);
        for x in &test {
            let rec = reconstruct_input(&art.net, x.values.view()).at(st)?;
            let s = art.net.score(x.values.view()).at(st)?;
            let sr = art.net.score(rec.view()).at(st)?;
            let norm = x.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = (&x.values - &rec).iter().map(|v| v * v).sum::<f64>().sqrt();
            gap += (s - sr).abs();
            rows.push(vec![
                x.id.clone(),
                (x.label as u8).to_string(),
                fmt_f(s),
                fmt_f(sr),
                fmt_f((s - sr).abs()),
                fmt_f(if norm > 0.0 { diff / norm } else { 0.0 }),
            ]);
        }
        write_table(
            st,
            &self.path(RECONSTRUCTIONS),
            &["id", "label", "score", "score_reconstructed", "abs_score_gap", "relative_l2_error"],
            &rows,
        )?;
        Ok(format!(
            "mean score gap {:.4} over {} test instances -> {RECONSTRUCTIONS}",
            gap / test.len().max(1) as f64,
            test.len()
        ))
    }

    fn l_samples(&self, st: Stage, fs_hz: f64, n_samples: usize) -> CliResult<usize> {
        let l = self.cfg.kshape.l_seconds;
        check_range(st, l > 0.0 && l.is_finite(), "kshape.l_seconds must be positive")?;
        let len = (l * fs_hz).round() as usize;
        check_range(
            st,
            len >= 2 && len <= n_samples,
            &format!("kshape.l_seconds gives {len} samples; need 2..={n_samples}"),
        )?;
        Ok(len)
    }

    fn saliency(&self) -> CliResult<String> {
        let st = Stage::Saliency;
        let ds = self.tagged_data(st)?;
        let art = self.cnn(st)?;
        let test = self.test_instances(&ds);
        let first = test[0];
        let len = self.l_samples(st, first.sample_rate_hz, first.n_samples())?;
        let dir = self.path(SALIENCY_DIR);
        fresh_dir(st, &dir)?;
        let mut rows = Vec::new();
        let mut example = None;
        for x in &test {
            let (score, _, map) = instance_saliency(&art.net, x.values.view()).at(st)?;
            let (start, _) = most_salient_segment(x.values.view(), map.phi.view(), len).at(st)?;
            write_matrix_csv(&x.lead_names, &map.phi, &dir.join(format!("{}.csv", x.id))).at(st)?;
            rows.push(vec![
                x.id.clone(),
                (x.label as u8).to_string(),
                fmt_f(score),
                fmt_f(map.sigma_hat),
                fmt_f(map.phi.mean().unwrap_or(f64::NAN)),
                start.to_string(),
            ]);
            if example.is_none() && x.label {
                example = Some((*x, map.phi.row(0).to_vec(), start));
            }
        }
        write_table(
            st,
            &self.path(SALIENCY),
            &["id", "label", "score", "sigma_hat", "mean_phi", "segment_start"],
            &rows,
        )?;
        if let Some((x, phi, start)) = example {
            let t: Vec<f64> = (0..x.n_samples()).map(|i| i as f64 / x.sample_rate_hz).collect();
            let lead = x.values.row(0);
            let (lo, hi) = lead.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let scaled: Vec<f64> = lead.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect();
            let window: Vec<f64> = (0..x.n_samples()).map(|i| if i >= start && i < start + len { 1.0 } else { 0.0 }).collect();
            let name = format!("{} (scaled)", x.lead_names[0]);
            let chart = svg::line_chart(
                &format!("saliency of {}", x.id),
                "time (s)",
                "value",
                &[
                    Series { name: &name, x: &t, y: &scaled },
                    Series { name: "phi", x: &t, y: &phi },
                    Series { name: "salient window", x: &t, y: &window },
                ],
            );
            write_text(st, &self.path(SALIENCY_SVG), &chart)?;
        }
        Ok(format!("{} maps -> {SALIENCY_DIR}/", test.len()))
    }

    fn roar(&self) -> CliResult<String> {
        let st = Stage::Roar;
        let fractions = &self.cfg.saliency.roar_fractions;
        check_range(
            st,
            !fractions.is_empty() && fractions.iter().all(|f| (0.0..=1.0).contains(f)),
            "saliency.roar_fractions must be nonempty and within [0, 1]",
        )?;
        let ds = self.tagged_data(st)?;
        let art = self.cnn(st)?;
        let curve = roar_curve(&art.net, &self.test_instances(&ds), fractions, self.cfg.seeds.roar).at(st)?;
        let rows: Vec<Vec<String>> = curve
            .iter()
            .map(|r| vec![fmt_f(r.fraction), fmt_f(r.auroc_salient), fmt_f(r.auroc_random)])
            .collect();
        write_table(st, &self.path(ROAR_CSV), &["fraction", "auroc_salient", "auroc_random"], &rows)?;
        let x: Vec<f64> = curve.iter().map(|r| r.fraction).collect();
        let ys: Vec<f64> = curve.iter().map(|r| r.auroc_salient).collect();
        let yr: Vec<f64> = curve.iter().map(|r| r.auroc_random).collect();
        let chart = svg::line_chart(
            "AUROC under occlusion",
            "fraction occluded",
            "AUROC",
            &[
                Series { name: "salient", x: &x, y: &ys },
                Series { name: "random", x: &x, y: &yr },
            ],
        );
        write_text(st, &self.path(ROAR_SVG), &chart)?;
        Ok(format!("{} fractions -> {ROAR_CSV}", curve.len()))
    }

    fn kshape(&self) -> CliResult<String> {
        let st = Stage::Kshape;
        let ks = &self.cfg.kshape;
        check_range(st, ks.k >= 1, "kshape.k must be positive")?;
        check_range(st, ks.max_iter >= 1, "kshape.max_iter must be positive")?;
        let ds = self.tagged_data(st)?;
        let art = self.cnn(st)?;
        let test = self.test_instances(&ds);
        let len = self.l_samples(st, test[0].sample_rate_hz, test[0].n_samples())?;
        let segments = salient_segments(&art.net, &test, len).at(st)?;
        let model = kshape_fit(&segments, ks.k, self.cfg.seeds.kshape, ks.max_iter, ks.l_seconds).at(st)?;
        write_json(st, &self.path(KSHAPE), &model)?;
        let dir = self.path(CENTROIDS_DIR);
        fresh_dir(st, &dir)?;
        let lead_names = &test[0].lead_names;
        let fs_hz = test[0].sample_rate_hz;
        for c in &model.centroids {
            let stem = format!("centroid_{:02}", c.cluster_id);
            write_matrix_csv(lead_names, &c.values, &dir.join(format!("{stem}.csv"))).at(st)?;
            let t: Vec<f64> = (0..c.values.ncols()).map(|i| i as f64 / fs_hz).collect();
            let leads: Vec<Vec<f64>> = c.values.outer_iter().map(|r| r.to_vec()).collect();
            let series: Vec<Series> = lead_names
                .iter()
                .zip(&leads)
                .map(|(n, y)| Series { name: n, x: &t, y })
                .collect();
            let chart = svg::line_chart(
                &format!("centroid {} ({} members)", c.cluster_id, c.member_count),
                "time (s)",
                "z-normalised value",
                &series,
            );
            write_text(st, &dir.join(format!("{stem}.svg")), &chart)?;
        }
        Ok(format!(
            "{} centroids from {} segments in {} iterations -> {CENTROIDS_DIR}/",
            model.centroids.len(),
            segments.len(),
            model.iterations
        ))
    }

    fn extract(&self) -> CliResult<String> {
        let st = Stage::Extract;
        let ds = self.tagged_data(st)?;
        let model: KShapeModel = self.read_json(st, KSHAPE, Stage::Kshape)?;
        let lr = ds.subset(&ds.indices_where(|t| t == SplitTag::LrHalf));
        let views: Vec<ArrayView2<f64>> = lr.iter().map(|x| x.values.view()).collect();
        let p = presence_matrix(&views, &model.centroids).at(st)?;
        let names = centroid_names(&model);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend(names);
        let rows: Vec<Vec<String>> = lr
            .iter()
            .zip(p.outer_iter())
            .map(|(x, r)| {
                let mut row = vec![x.id.clone(), (x.label as u8).to_string()];
                row.extend(r.iter().map(|v| fmt_f(*v)));
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(st, &self.path(PRESENCE), &header, &rows)?;
        Ok(format!("{} x {} presence matrix -> {PRESENCE}", p.nrows(), p.ncols()))
    }

    /// Ids, labels, presence matrix and centroid names from `presence.csv`.
    fn presence(&self, st: Stage) -> CliResult<(Vec<String>, Vec<bool>, Array2<f64>, Vec<String>)> {
        let (path, t) = self.read_table(st, PRESENCE, Stage::Extract)?;
        let names: Vec<String> = t.header.iter().skip(2).cloned().collect();
        if t.header.len() < 3 || t.header[0] != "id" || t.header[1] != "label" {
            return Err(CliError::new(st.name(), "parse", format!("{}: unexpected header", path.display())));
        }
        let ids = t.rows.iter().map(|r| r[0].clone()).collect();
        let labels = t.rows.iter().map(|r| r[1] == "1").collect();
        let mut m = Array2::zeros((t.rows.len(), names.len()));
        for (j, n) in names.iter().enumerate() {
            for (i, v) in t.floats(st, &path, n)?.into_iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        Ok((ids, labels, m, names))
    }

    fn fit_lr(&self) -> CliResult<String> {
        let st = Stage::FitLr;
        let lr = &self.cfg.lr;
        check_range(
            st,
            !lr.lambdas.is_empty() && lr.lambdas.iter().all(|l| *l >= 0.0 && l.is_finite()),
            "lr.lambdas must be nonempty and nonnegative",
        )?;
        let (ids, y, p, names) = self.presence(st)?;
        let cfg = lr.lr_config(self.cfg.seeds.lr);
        let cv: LrCvResult = lr_cross_validate(p.view(), &y, &cfg).at(st)?;
        let mut rows = Vec::new();
        for res in &cv.per_lambda {
            for (f, m) in res.folds.iter().enumerate() {
                let mut r = vec![fmt_f(res.lambda)];
                r.extend(metric_row(&f.to_string(), m));
                rows.push(r);
            }
            for (label, m) in [("mean", &res.summary.mean), ("sd", &res.summary.sd)] {
                let mut r = vec![fmt_f(res.lambda)];
                r.extend(metric_row(label, m));
                rows.push(r);
            }
        }
        write_table(st, &self.path(LR_CV), &["lambda", "fold", "auroc", "auprc", "mcc", "three_mcs"], &rows)?;
        let best = cv.best();
        let fit = fit_lr(p.view(), &y, best.lambda, &cfg, self.cfg.seeds.lr).at(st)?;
        let mut coef = vec![vec!["intercept".to_string(), fmt_f(fit.model.intercept)]];
        coef.extend(
            fit.model
                .feature_names
                .iter()
                .zip(&fit.model.weights)
                .map(|(n, w)| vec![n.clone(), fmt_f(*w)]),
        );
        write_table(st, &self.path(LR_COEFFICIENTS), &["feature", "weight"], &coef)?;
        let z = fit.kpca.transform_rows(p.view()).at(st)?;
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend(fit.model.feature_names.iter().cloned());
        let zrows: Vec<Vec<String>> = ids
            .iter()
            .zip(&y)
            .zip(z.outer_iter())
            .map(|((id, l), r)| {
                let mut row = vec![id.clone(), (*l as u8).to_string()];
                row.extend(r.iter().map(|v| fmt_f(*v)));
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(st, &self.path(KPCA_FEATURES), &header, &zrows)?;
        let art = LrArtifact {
            lambda: best.lambda,
            cv_mean: best.summary.mean,
            cv_sd: best.summary.sd,
            centroid_names: names,
            fit,
        };
        write_json(st, &self.path(LR_MODEL), &art)?;
        Ok(format!(
            "best lambda {} with mean 3MCS {:.4} -> {LR_MODEL}",
            best.lambda, best.summary.mean.three_mcs
        ))
    }

    fn importance(&self) -> CliResult<String> {
        let st = Stage::Importance;
        check_range(st, self.cfg.lr.importance_repeats >= 1, "lr.importance_repeats must be positive")?;
        let art: LrArtifact = self.read_json(st, LR_MODEL, Stage::FitLr)?;
        let (_, y, p, names) = self.presence(st)?;
        let z = art.fit.kpca.transform_rows(p.view()).at(st)?;
        let model = &art.fit.model;
        let imp = permutation_importance(model, z.view(), &y, self.cfg.lr.importance_repeats, self.cfg.seeds.importance)
            .at(st)?;
        let rows: Vec<Vec<String>> = model
            .feature_names
            .iter()
            .zip(&imp)
            .map(|(n, v)| vec![n.clone(), fmt_f(*v)])
            .collect();
        write_table(st, &self.path(IMPORTANCE_CSV), &["feature", "importance"], &rows)?;
        write_text(
            st,
            &self.path(IMPORTANCE_SVG),
            &svg::bar_chart("permutation importance", "relative log-loss increase", &model.feature_names, &imp),
        )?;

        let mut srows = Vec::new();
        let mut grid = Vec::new();
        for (j, f) in model.feature_names.iter().enumerate() {
            let mut line = Vec::new();
            for (c, cn) in names.iter().enumerate() {
                let zc = z.column(j).to_vec();
                let pc = p.column(c).to_vec();
                let (rho, pv) = spearman(&zc, &pc).unwrap_or((f64::NAN, f64::NAN));
                srows.push(vec![f.clone(), cn.clone(), fmt_f(rho), fmt_f(pv)]);
                line.push(rho);
            }
            grid.push(line);
        }
        write_table(st, &self.path(SPEARMAN_CSV), &["feature", "centroid", "rho", "p_value"], &srows)?;
        write_text(
            st,
            &self.path(SPEARMAN_SVG),
            &svg::heatmap("Spearman rho: kernel-PCA features vs presence", &model.feature_names, &names, &grid),
        )?;
        let top = imp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| model.feature_names[j].clone())
            .unwrap_or_default();
        Ok(format!("most important feature {top} -> {IMPORTANCE_CSV}"))
    }

    fn lrt(&self) -> CliResult<String> {
        let st = Stage::Lrt;
        let alpha = self.cfg.lr.alpha;
        check_range(st, alpha > 0.0 && alpha < 1.0, "lr.alpha must lie in (0, 1)")?;
        let (ids, y, p, _) = self.presence(st)?;
        let ds = self.data(st)?;
        let by_id: BTreeMap<&str, &TimeSeriesInstance> = ds.instances.iter().map(|x| (x.id.as_str(), x)).collect();
        let inst = ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| CliError::new(st.name(), "invalid-argument", format!("instance {id} not in {DATA}")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let cov = baseline_covariates(&inst).at(st)?;
        let res: Vec<LrtResult> =
            lrt_folds(p.view(), &y, cov.view(), &self.cfg.lr.lr_config(self.cfg.seeds.lr), alpha).at(st)?;
        let rows: Vec<Vec<String>> = res
            .iter()
            .enumerate()
            .map(|(f, r)| {
                vec![
                    f.to_string(),
                    fmt_f(r.lambda_lr),
                    r.df.to_string(),
                    fmt_f(r.p_value),
                    fmt_f(r.alpha_adjusted),
                    r.reject.to_string(),
                    fmt_f(r.ll_reduced),
                    fmt_f(r.ll_full),
                ]
            })
            .collect();
        write_table(
            st,
            &self.path(LRT),
            &["fold", "lambda_lr", "df", "p_value", "alpha_adjusted", "reject", "ll_reduced", "ll_full"],
            &rows,
        )?;
        let rejected = res.iter().filter(|r| r.reject).count();
        Ok(format!("{rejected} of {} folds reject the reduced model -> {LRT}", res.len()))
    }

    fn report(&self) -> CliResult<String> {
        let st = Stage::Report;
        let files: [(&str, Stage); 24] = [
            (SPLITS_FILE, Stage::Split),
            (GRID_CSV, Stage::GridSearch),
            (MODEL, Stage::TrainCnn),
            (HISTORY, Stage::TrainCnn),
            (CNN_METRICS, Stage::TrainCnn),
            (CNN_SCORES, Stage::TrainCnn),
            (RECONSTRUCTIONS, Stage::Invert),
            (SALIENCY, Stage::Saliency),
            (SALIENCY_SVG, Stage::Saliency),
            (ROAR_CSV, Stage::Roar),
            (ROAR_SVG, Stage::Roar),
            (KSHAPE, Stage::Kshape),
            (PRESENCE, Stage::Extract),
            (LR_CV, Stage::FitLr),
            (LR_MODEL, Stage::FitLr),
            (LR_COEFFICIENTS, Stage::FitLr),
            (KPCA_FEATURES, Stage::FitLr),
            (IMPORTANCE_CSV, Stage::Importance),
            (IMPORTANCE_SVG, Stage::Importance),
            (SPEARMAN_CSV, Stage::Importance),
            (SPEARMAN_SVG, Stage::Importance),
            (LRT, Stage::Lrt),
            (CENTROIDS_DIR, Stage::Kshape),
            (PROVENANCE, Stage::Synth),
        ];
        let optional = [GRID_CSV, SALIENCY_SVG];
        for (name, producer) in files {
            if !optional.contains(&name) {
                self.need(st, name, producer)?;
            }
        }
        let out = self.path(REPORT_DIR);
        fresh_dir(st, &out)?;
        for (name, _) in files {
            let src = self.path(name);
            if name == PROVENANCE || !src.exists() {
                continue;
            }
            if src.is_dir() {
                let dst = out.join(name);
                fs::create_dir_all(&dst).map_err(|e| io_err(st, &dst, e))?;
                let mut entries: Vec<PathBuf> = fs::read_dir(&src)
                    .map_err(|e| io_err(st, &src, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .collect();
                entries.sort();
                for e in entries {
                    let d = dst.join(e.file_name().expect("file entry"));
                    fs::copy(&e, &d).map_err(|err| io_err(st, &e, err))?;
                }
            } else {
                fs::copy(&src, out.join(name)).map_err(|e| io_err(st, &src, e))?;
            }
        }
        write_text(st, &out.join("config.toml"), &self.cfg.to_toml())?;
        let log: StageLog = self.read_json(st, PROVENANCE, Stage::Synth)?;
        let prov = serde_json::json!({
            "config_hash": self.cfg.hash(),
            "seeds": {
                "synth": self.cfg.synth.seed,
                "split": self.cfg.seeds.split,
                "train": self.cfg.seeds.train,
                "kshape": self.cfg.seeds.kshape,
                "lr": self.cfg.seeds.lr,
                "roar": self.cfg.seeds.roar,
                "importance": self.cfg.seeds.importance,
            },
            "stages": log.stages,
        });
        write_json(st, &out.join(PROVENANCE), &prov)?;

        let summary = self.summary(st)?;
        let rows: Vec<Vec<String>> = summary.iter().map(|(k, v)| vec![k.clone(), fmt_f(*v)]).collect();
        write_table(st, &out.join("summary.csv"), &["metric", "value"], &rows)?;
        Ok(format!("{} summary rows -> {REPORT_DIR}/", rows.len()))
    }

    fn summary(&self, st: Stage) -> CliResult<Vec<(String, f64)>> {
        let mut s = Vec::new();
        let cnn = self.cnn(st)?;
        for (label, m) in [("cnn_validation", cnn.validation), ("cnn_test", cnn.test)] {
            s.push((format!("{label}_auroc"), m.auroc));
            s.push((format!("{label}_auprc"), m.auprc));
            s.push((format!("{label}_mcc"), m.mcc));
            s.push((format!("{label}_three_mcs"), m.three_mcs));
        }
        let (path, t) = self.read_table(st, RECONSTRUCTIONS, Stage::Invert)?;
        let gap = t.floats(st, &path, "abs_score_gap")?;
        s.push(("reconstruction_score_gap_mean".into(), mean(&gap)));
        let (path, t) = self.read_table(st, ROAR_CSV, Stage::Roar)?;
        let fr = t.floats(st, &path, "fraction")?;
        let sal = t.floats(st, &path, "auroc_salient")?;
        let rnd = t.floats(st, &path, "auroc_random")?;
        let positive = |v: &[f64]| -> Vec<f64> { fr.iter().zip(v).filter(|(f, _)| **f > 0.0).map(|(_, x)| *x).collect() };
        s.push(("roar_salient_auroc_mean".into(), mean(&positive(&sal))));
        s.push(("roar_random_auroc_mean".into(), mean(&positive(&rnd))));
        let ks: KShapeModel = self.read_json(st, KSHAPE, Stage::Kshape)?;
        s.push(("kshape_centroids".into(), ks.centroids.len() as f64));
        s.push(("kshape_iterations".into(), ks.iterations as f64));
        let lr: LrArtifact = self.read_json(st, LR_MODEL, Stage::FitLr)?;
        s.push(("lr_lambda".into(), lr.lambda));
        s.push(("lr_cv_auroc".into(), lr.cv_mean.auroc));
        s.push(("lr_cv_auprc".into(), lr.cv_mean.auprc));
        s.push(("lr_cv_mcc".into(), lr.cv_mean.mcc));
        s.push(("lr_cv_three_mcs".into(), lr.cv_mean.three_mcs));
        s.push((
            "lr_vs_cnn_relative_three_mcs".into(),
            (lr.cv_mean.three_mcs - cnn.test.three_mcs) / cnn.test.three_mcs,
        ));
        let (path, t) = self.read_table(st, LRT, Stage::Lrt)?;
        let p = t.floats(st, &path, "p_value")?;
        let j = t.col("reject").expect("lrt header");
        s.push(("lrt_folds".into(), p.len() as f64));
        s.push(("lrt_rejections".into(), t.rows.iter().filter(|r| r[j] == "true").count() as f64));
        s.push(("lrt_min_p_value".into(), p.iter().copied().fold(f64::INFINITY, f64::min)));
        Ok(s)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn centroid_names(model: &KShapeModel) -> Vec<String> {
    model
        .centroids
        .iter()
        .map(|c| format!("centroid_{:02}", c.cluster_id))
        .collect()
}
