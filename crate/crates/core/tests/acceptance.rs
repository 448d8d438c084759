//! Acceptance criteria. Each test prints one PASS/FAIL line straight to
//! stdout (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use salient_core::convnet::*;
use salient_core::evalmetrics::*;
use salient_core::glm::*;
use salient_core::inversion::{reconstruct_input, transpose_conv1d};
use salient_core::pipeline::*;
use salient_core::resample::smote_with;
use salient_core::saliency::*;
use salient_core::shapefeat::*;
use salient_core::signal::*;

fn report(id: u32, ok: bool, what: &str, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id:>2} {} | {what} | {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

#[test]
fn c01_three_mcs_oracle() {
    let af = three_mcs(0.95, 0.98, 0.77);
    let sb = three_mcs(0.95, 0.94, 0.85);
    let ok = (af - 0.8239).abs() < 1e-4
        && (sb - 0.8261).abs() < 1e-4
        && (af - 0.82).abs() <= 0.01
        && (sb - 0.83).abs() <= 0.01;
    report(1, ok, "3MCS oracle", &format!("AF {af:.6} (table 0.82), SB {sb:.6} (table 0.83)"));
    assert!(ok);
}

/// Kernel whose taps are mutually orthogonal blocks of an orthogonal matrix,
/// scaled so that the taps' Gram matrices sum to the identity. With one tap
/// this is a plain orthogonal matrix.
fn per_tap_orthogonal(n_in: usize, taps: usize, rng: &mut ChaCha8Rng) -> Conv1DLayer {
    let n = n_in * taps;
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let scale = 1.0 / (taps as f64).sqrt();
    let m = Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)] * scale);
    Conv1DLayer::from_matrix(m, taps).unwrap()
}

#[test]
fn c02_exact_inversion_certificate() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_rt, mut worst_adj) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let n_in = 1 + i % 3;
        let taps = [1, 3, 5, 9][i % 4];
        let layer = per_tap_orthogonal(n_in, taps, &mut rng);
        let n = 64;
        let x = gaussian(&mut rng, n_in, n);
        let y = conv1d_forward(x.view(), &layer).unwrap();
        let back = transpose_conv1d(y.view(), &layer).unwrap();
        let r = 2 * layer.half_width();
        for l in 0..n_in {
            for t in r..n - r {
                worst_rt = worst_rt.max((back[[l, t]] - x[[l, t]]).abs());
            }
        }
        let g = gaussian(&mut rng, layer.out_features(), n);
        let lhs: f64 = (&y * &g).sum();
        let rhs: f64 = (&x * &transpose_conv1d(g.view(), &layer).unwrap()).sum();
        worst_adj = worst_adj.max((lhs - rhs).abs());
    }
    let ok = worst_rt < 1e-10 && worst_adj < 1e-10;
    report(
        2,
        ok,
        "exact inversion",
        &format!("max interior error {worst_rt:.2e}, max adjoint gap {worst_adj:.2e}, {:?}", t.elapsed()),
    );
    assert!(ok);
}

#[test]
fn c03_semi_orthogonal_projection() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes = [(8, 5, 2), (16, 9, 2), (8, 3, 8), (16, 5, 16), (32, 9, 16)];
    let (mut worst, mut monotone, mut max_iters) = (0.0f64, true, 0usize);
    for &(out, taps, inp) in &shapes {
        for _ in 0..10 {
            let w = Array2::from_shape_simple_fn((out, taps * inp), || rng.sample::<f64, _>(StandardNormal));
            let w = &w / spectral_norm(&w);
            let layer = Conv1DLayer::from_matrix(w, taps).unwrap();
            let (_, hist) = semi_orth_project_traced(&layer, 20).unwrap();
            let used = hist.iter().position(|r| *r < 1e-6).unwrap_or(usize::MAX);
            max_iters = max_iters.max(used);
            worst = worst.max(*hist.last().unwrap());
            monotone &= hist.windows(2).all(|p| p[1] <= p[0]);
        }
    }
    let ok = worst < 1e-6 && monotone && max_iters <= 20;
    report(
        3,
        ok,
        "semi-orthogonal projection",
        &format!("final residual <= {worst:.2e}, iterations to 1e-6 <= {max_iters}, monotone {monotone}, {:?}", t.elapsed()),
    );
    assert!(ok);
}

/// Regularized upper incomplete gamma Q(a, x): series below a + 1,
/// Lentz continued fraction above.
fn gamma_q(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let front = (-x + a * x.ln() - ln_gamma_a).exp();
    if x < a + 1.0 {
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * front
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-17 {
                break;
            }
        }
        front * h
    }
}

#[test]
fn c04_saliency_survival() {
    let ln_gamma_half = std::f64::consts::PI.sqrt().ln();
    let mut worst = 0.0f64;
    for i in -800..=800 {
        let z = i as f64 / 100.0;
        let oracle = gamma_q(0.5, z * z / 2.0, ln_gamma_half);
        worst = worst.max((chi2_1_survival_at(z) - oracle).abs());
    }
    // same check through the map: discrepancies with a known pooled scale
    let x = Array2::from_shape_fn((2, 50), |(l, t)| ((l * 50 + t) as f64 * 0.37).sin());
    let rec = Array2::from_shape_fn((2, 50), |(l, t)| x[[l, t]] + 0.3 * ((l * 50 + t) as f64 * 1.3).cos());
    let map = saliency_map(x.view(), rec.view()).unwrap();
    for ((a, b), p) in x.iter().zip(rec.iter()).zip(map.phi.iter()) {
        let z = (a - b) / map.sigma_hat;
        worst = worst.max((p - gamma_q(0.5, z * z / 2.0, ln_gamma_half)).abs());
    }
    let at_zero = chi2_1_survival_at(0.0);
    let ok = worst < 1e-9 && at_zero == 1.0;
    report(4, ok, "saliency survival", &format!("max deviation from incomplete gamma {worst:.2e}, phi(0) = {at_zero}"));
    assert!(ok);
}

fn param_mut(net: &mut Conv1DNet, mut idx: usize) -> &mut f64 {
    for layer in net.convs.iter_mut() {
        let len = layer.weights().len();
        if idx < len {
            return layer.weights_mut().iter_mut().nth(idx).unwrap();
        }
        idx -= len;
    }
    if idx < net.head_weights.len() {
        return &mut net.head_weights[idx];
    }
    &mut net.head_bias
}

#[test]
fn c05_gradient_check() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let configs = [(2, 33, 4, 3, 2), (3, 40, 6, 5, 3), (1, 25, 3, 3, 1)];
    for (seed, &(leads, n, filters, kernel, deep)) in configs.iter().enumerate() {
        let cfg = NetConfig { n_leads: leads, n_samples: n, n_filters: filters, kernel_size: kernel, deepness: deep };
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed as u64);
        let mut net = Conv1DNet::init(cfg, &mut rng).unwrap();
        net.head_bias = -0.2;
        let xs: Vec<Array2<f64>> = (0..4).map(|_| gaussian(&mut rng, leads, n)).collect();
        let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
        let ys = [true, false, false, true];
        let (_, grad) = batch_gradient(&net, &views, &ys).unwrap();
        let h = 1e-5;
        for (i, a) in grad.flat().iter().enumerate() {
            let mut plus = net.clone();
            *param_mut(&mut plus, i) += h;
            let mut minus = net.clone();
            *param_mut(&mut minus, i) -= h;
            let numeric = (batch_loss(&plus, &views, &ys).unwrap() - batch_loss(&minus, &views, &ys).unwrap()) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    let ok = worst < 1e-4;
    report(5, ok, "gradient check", &format!("worst relative error {worst:.2e}, {:?}", t.elapsed()));
    assert!(ok);
}

/// One seeded desk-scale run shared by criteria 6 and 7.
struct Desk {
    best: NetConfig,
    net: Conv1DNet,
    test: Vec<TimeSeriesInstance>,
    cnn_test: Metrics,
    recon_gap: f64,
    lr_three_mcs: f64,
    lr_lambda: f64,
    elapsed: std::time::Duration,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let t = Instant::now();
        let cohort = CohortConfig {
            n_instances: 400,
            n_leads: 2,
            positive_fraction: 0.25,
            pathology: Pathology::SlowRate,
            ..CohortConfig::default()
        };
        let raw = synth_cohort(&cohort).unwrap();
        assert_eq!(raw[0].n_samples(), 2000);
        let data = preprocess_dataset(&Dataset::new(raw), &PreprocessParams::default()).unwrap();
        let data = split_dataset(&data, 0, 5).unwrap();
        let train_cfg = TrainConfig::default();
        let grid = grid_search(&data, &GridSpec::default(), &train_cfg).unwrap();
        let best = grid.best_cell().config;
        let (net, _) = run_fold(&data, best, &train_cfg, 0).unwrap();

        let (_, val) = data.fold_indices(0);
        let vx: Vec<ArrayView2<f64>> = val.iter().map(|&i| data.instances[i].values.view()).collect();
        let vy: Vec<bool> = val.iter().map(|&i| data.instances[i].label).collect();
        let cal = isotonic_calibrate(&score_all(&net, &vx).unwrap(), &vy).unwrap();

        let test_idx = data.indices_where(|t| t == SplitTag::CnnTest);
        let test: Vec<TimeSeriesInstance> = test_idx.iter().map(|&i| data.instances[i].clone()).collect();
        let tx: Vec<ArrayView2<f64>> = test.iter().map(|x| x.values.view()).collect();
        let ty: Vec<bool> = test.iter().map(|x| x.label).collect();
        let scores = score_all(&net, &tx).unwrap();
        let cnn_test = evaluate(&scores, &ty, &cal).unwrap();
        let recon: Vec<Array2<f64>> = tx.iter().map(|x| reconstruct_input(&net, *x).unwrap()).collect();
        let rv: Vec<ArrayView2<f64>> = recon.iter().map(|x| x.view()).collect();
        let rscores = score_all(&net, &rv).unwrap();
        let recon_gap = scores.iter().zip(&rscores).map(|(a, b)| (a - b).abs()).sum::<f64>() / scores.len() as f64;

        let l_seconds = 2.0;
        let l_samples = (l_seconds * test[0].sample_rate_hz).round() as usize;
        let refs: Vec<&TimeSeriesInstance> = test.iter().collect();
        let segments = salient_segments(&net, &refs, l_samples).unwrap();
        let shapes = kshape_fit(&segments, 32, 0, 100, l_seconds).unwrap();
        let lr_idx = data.indices_where(|t| t == SplitTag::LrHalf);
        let lx: Vec<ArrayView2<f64>> = lr_idx.iter().map(|&i| data.instances[i].values.view()).collect();
        let ly: Vec<bool> = lr_idx.iter().map(|&i| data.instances[i].label).collect();
        let presence = presence_matrix(&lx, &shapes.centroids).unwrap();
        let cv = lr_cross_validate(presence.view(), &ly, &LrConfig::default()).unwrap();

        Desk {
            best,
            net,
            test,
            cnn_test,
            recon_gap,
            lr_three_mcs: cv.best().summary.mean.three_mcs,
            lr_lambda: cv.best().lambda,
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn c06_desk_pipeline() {
    let d = desk();
    let rel = (d.cnn_test.three_mcs - d.lr_three_mcs) / d.cnn_test.three_mcs;
    let ok_auc = d.cnn_test.auroc >= 0.90;
    let ok_rec = d.recon_gap < 0.15;
    let ok_lr = rel <= 0.15;
    let ok_time = d.elapsed.as_secs() <= 600;
    let ok = ok_auc && ok_rec && ok_lr && ok_time;
    report(
        6,
        ok,
        "desk pipeline",
        &format!(
            "grid best {}x{}x{}, test AUROC {:.3}, mean |score gap| after inversion {:.4}, CNN 3MCS {:.3}, LR 3MCS {:.3} (lambda {}), shortfall {:.1}%, {:?}",
            d.best.n_filters,
            d.best.kernel_size,
            d.best.deepness,
            d.cnn_test.auroc,
            d.recon_gap,
            d.cnn_test.three_mcs,
            d.lr_three_mcs,
            d.lr_lambda,
            100.0 * rel,
            d.elapsed
        ),
    );
    assert!(ok_auc, "test AUROC {}", d.cnn_test.auroc);
    assert!(ok_rec, "reconstruction score gap {}", d.recon_gap);
    assert!(ok_lr, "LR 3MCS {} vs CNN {}", d.lr_three_mcs, d.cnn_test.three_mcs);
    assert!(ok_time, "runtime {:?}", d.elapsed);
}

#[test]
fn c07_roar() {
    let d = desk();
    let t = Instant::now();
    let fractions: Vec<f64> = (0..=9).map(|i| i as f64 / 10.0).collect();
    let refs: Vec<&TimeSeriesInstance> = d.test.iter().collect();
    let rows = roar_curve(&d.net, &refs, &fractions, 7).unwrap();
    let tx: Vec<ArrayView2<f64>> = d.test.iter().map(|x| x.values.view()).collect();
    let ty: Vec<bool> = d.test.iter().map(|x| x.label).collect();
    let baseline = auroc(&score_all(&d.net, &tx).unwrap(), &ty).unwrap();
    let salient = rows[1..].iter().map(|r| r.auroc_salient).sum::<f64>() / 9.0;
    let random = rows[1..].iter().map(|r| r.auroc_random).sum::<f64>() / 9.0;
    let ok_zero = rows[0].auroc_salient == baseline && rows[0].auroc_random == baseline;
    let ok_order = salient <= random;
    let curve: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.1}:{:.3}/{:.3}", r.fraction, r.auroc_salient, r.auroc_random))
        .collect();
    report(
        7,
        ok_zero && ok_order,
        "ROAR",
        &format!(
            "mean AUROC salient {salient:.4} vs random {random:.4}, baseline {baseline:.4}, curve [{}], {:?}",
            curve.join(" "),
            t.elapsed()
        ),
    );
    assert!(ok_zero, "fraction 0 differs from baseline");
    assert!(ok_order, "salient {salient} > random {random}");
}

fn oracle_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

fn oracle_auprc(s: &[f64], y: &[bool]) -> f64 {
    let pos = y.iter().filter(|v| **v).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for th in thresholds {
        let tp = (0..s.len()).filter(|&i| s[i] >= th && y[i]).count() as f64;
        let called = (0..s.len()).filter(|&i| s[i] >= th).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / called);
        prev_recall = recall;
    }
    ap
}

fn oracle_mcc(p: &[bool], y: &[bool]) -> f64 {
    let c = |a: bool, b: bool| (0..p.len()).filter(|&i| p[i] == a && y[i] == b).count() as f64;
    let (tp, tn, fp, fn_) = (c(true, true), c(false, false), c(true, false), c(false, true));
    let d = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if d == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / d.sqrt()
    }
}

#[test]
fn c08_metric_oracles() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut cases) = (0.0f64, 0usize);
    for n in 1..=8usize {
        for trial in 0..3 {
            // trial 2 rounds scores to create ties
            let s: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = rng.gen();
                    if trial == 2 {
                        (v * 4.0).round() / 4.0
                    } else {
                        v
                    }
                })
                .collect();
            let pred: Vec<bool> = s.iter().map(|v| *v >= 0.5).collect();
            for mask in 0u32..(1 << n) {
                let y: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let pos = y.iter().filter(|v| **v).count();
                let m = mcc(&pred, &y).unwrap().value;
                worst = worst.max((m - oracle_mcc(&pred, &y)).abs());
                if pos > 0 {
                    worst = worst.max((auprc(&s, &y).unwrap() - oracle_auprc(&s, &y)).abs());
                }
                if pos > 0 && pos < n {
                    worst = worst.max((auroc(&s, &y).unwrap() - oracle_auroc(&s, &y)).abs());
                }
                cases += 1;
            }
        }
    }
    let ok = worst < 1e-12;
    report(8, ok, "metric oracles", &format!("{cases} labelings, max deviation {worst:.1e}, {:?}", t.elapsed()));
    assert!(ok);
}

fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kb]; ka];
    for (x, y) in a.iter().zip(b) {
        table[*x][*y] += 1;
    }
    let c2 = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = sum_a * sum_b / c2(a.len());
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

fn brute_presence(x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    let (l, n) = x.dim();
    let len = c.ncols();
    let mut best = f64::INFINITY;
    for t in 0..=n - len {
        let mut acc = 0.0;
        for r in 0..l {
            for j in 0..len {
                acc += (x[[r, t + j]] - c[[r, j]]).abs();
            }
        }
        best = best.min(acc);
    }
    best
}

#[test]
fn c09_kshape_and_presence() {
    let t = Instant::now();
    let m = 64;
    let bump = |t: f64| (-(t - 32.0).powi(2) / 20.0).exp();
    let chirp = |t: f64| ((t - 32.0) * (t - 32.0) / 60.0).sin() * (-(t - 32.0).powi(2) / 400.0).exp();
    let mut aris = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let mut segments = Vec::new();
        let mut planted = Vec::new();
        for i in 0..24 {
            let class = i % 2;
            let shift: f64 = rng.gen_range(-6..=6) as f64;
            let seg = Array2::from_shape_fn((2, m), |(l, t)| {
                let u = t as f64 - shift;
                let v = if class == 0 { bump(u) } else { chirp(u) };
                v * (1.0 + 0.5 * l as f64) + 0.02 * rng.sample::<f64, _>(StandardNormal)
            });
            segments.push(seg);
            planted.push(class);
        }
        let model = kshape_fit(&segments, 2, seed, 100, 1.0).unwrap();
        aris.push(adjusted_rand_index(&planted, &model.assignments));
    }
    let ari_ok = aris.iter().all(|a| *a == 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut presence_ok = true;
    for trial in 0..200 {
        let leads = 1 + trial % 3;
        let n = 10 + trial % 40;
        let len = 1 + trial % n.min(12);
        let x = gaussian(&mut rng, leads, n);
        let c = gaussian(&mut rng, leads, len);
        presence_ok &= presence(x.view(), c.view()).unwrap() == brute_presence(&x, &c);
    }
    let ok = ari_ok && presence_ok;
    report(
        9,
        ok,
        "K-shape recovery and presence",
        &format!("ARI over 10 seeds {aris:?}, presence equals brute force {presence_ok}, {:?}", t.elapsed()),
    );
    assert!(ok);
}

/// Unpenalized null simulation: age and sex carry no signal.
fn lrt_null_rejections(n_sims: usize) -> usize {
    (0..n_sims)
        .filter(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + s as u64);
            let n = 500;
            let f = gaussian(&mut rng, n, 2);
            let y: Vec<bool> = (0..n)
                .map(|i| {
                    let z = 0.8 * f[[i, 0]] - 0.5 * f[[i, 1]];
                    rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp())
                })
                .collect();
            let age: Vec<f64> = (0..n).map(|_| rng.gen_range(30.0..80.0)).collect();
            let sex: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
            let cov = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { age[i] } else { sex[i] });
            let cov = standardize_columns(cov.view());
            let full_x = ndarray::concatenate(ndarray::Axis(1), &[f.view(), cov.view()]).unwrap();
            let names: Vec<String> = ["ecg0", "ecg1", "age", "sex"].iter().map(|s| s.to_string()).collect();
            let reduced = lr_fit(f.view(), &y, 0.0, names[..2].to_vec()).unwrap();
            let full = lr_fit(full_x.view(), &y, 0.0, names).unwrap();
            lrt(&reduced, &full, full_x.view(), &y, 0.05, 5).unwrap().reject
        })
        .count()
}

#[test]
fn c10_statistics() {
    let t = Instant::now();
    // isotonic: random inputs give a monotone map; two inverted points pool to 1/2
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut monotone = true;
    for _ in 0..50 {
        let s: Vec<f64> = (0..40).map(|_| rng.gen()).collect();
        let y: Vec<bool> = s.iter().map(|v| rng.gen::<f64>() < *v).collect();
        let cal = isotonic_calibrate(&s, &y).unwrap();
        let mut grid: Vec<f64> = s.clone();
        grid.sort_by(f64::total_cmp);
        monotone &= grid.windows(2).all(|w| cal.apply(w[0]) <= cal.apply(w[1]));
    }
    let two = isotonic_calibrate(&[0.2, 0.8], &[true, false]).unwrap();
    let pooled = two.apply(0.2) == 0.5 && two.apply(0.8) == 0.5;

    // likelihood-ratio test
    let f = gaussian(&mut rng, 200, 3);
    let y: Vec<bool> = (0..200).map(|i| f[[i, 0]] + 0.3 * rng.sample::<f64, _>(StandardNormal) > 0.0).collect();
    let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    let m = lr_fit(f.view(), &y, 0.0, names).unwrap();
    let same = lrt(&m, &m, f.view(), &y, 0.05, 5).unwrap();
    let same_ok = same.lambda_lr == 0.0 && same.p_value == 1.0;
    let p5991 = chi2_sf(5.991, 2);
    let p_ok = (p5991 - 0.05).abs() < 1e-4;
    let sims = 200;
    let rejections = lrt_null_rejections(sims);
    let alpha_adj = 0.05 / 5.0;
    let band = alpha_adj + 1.96 * (alpha_adj * (1.0 - alpha_adj) / sims as f64).sqrt();
    let rate = rejections as f64 / sims as f64;
    let null_ok = rate <= band;

    // SMOTE synthetics on segments between two minority points
    let mut seg_ok = true;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, 14, 3);
        let y: Vec<bool> = (0..14).map(|i| i < 4).collect();
        let (out, _) = smote_with(x.view(), &y, 5, None, &mut rng).unwrap();
        for s in 14..out.nrows() {
            let p = out.row(s);
            let on_some = (0..4).any(|a| {
                (0..4).any(|b| {
                    let (ra, rb) = (x.row(a), x.row(b));
                    let d = &rb - &ra;
                    let dd = d.dot(&d);
                    if dd == 0.0 {
                        return false;
                    }
                    let u = (&p - &ra).dot(&d) / dd;
                    let resid = (&p - &ra - &(&d * u)).iter().map(|v| v.abs()).fold(0.0, f64::max);
                    (-1e-12..=1.0 + 1e-12).contains(&u) && resid < 1e-12
                })
            });
            seg_ok &= on_some;
        }
    }
    let ok = monotone && pooled && same_ok && p_ok && null_ok && seg_ok;
    report(
        10,
        ok,
        "statistics",
        &format!(
            "PAVA monotone {monotone}, two-point pool {pooled}, identical-model LRT {same_ok}, p(5.991) = {p5991:.5}, \
             null rejections {rejections}/{sims} (band {band:.4}), SMOTE segment test {seg_ok}, {:?}",
            t.elapsed()
        ),
    );
    assert!(ok);
}
