use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn salient(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salient"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("SALIENT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn prepare(dir: &Path) {
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    for stage in ["synth", "preprocess"] {
        let o = salient(dir, &["--config", cfg, stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
}

#[test]
fn full_pipeline_report_is_complete_and_reproducible() {
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let o = salient(d, &["--config", cfg, "all"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let report = a.path().join("report");
    for f in [
        "summary.csv",
        "cnn_metrics.csv",
        "roar.csv",
        "roar.svg",
        "importance.csv",
        "importance.svg",
        "spearman.csv",
        "spearman.svg",
        "lrt.csv",
        "config.toml",
        "provenance.json",
    ] {
        assert!(report.join(f).is_file(), "missing {f}");
    }
    let svgs = fs::read_dir(report.join("centroids"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 3);

    let prov: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);
    assert!(prov["seeds"]["split"].is_u64());

    let lrt = fs::read_to_string(report.join("lrt.csv")).unwrap();
    assert_eq!(lrt.lines().count(), 3);
    assert!(lrt.starts_with("fold,lambda_lr,df,p_value"));

    for f in fs::read_dir(&report).unwrap() {
        let p = f.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv" || x == "svg") {
            let name = p.file_name().unwrap();
            assert_eq!(
                fs::read(&p).unwrap(),
                fs::read(b.path().join("report").join(name)).unwrap(),
                "{name:?} differs between identical runs"
            );
        }
    }
}

#[test]
fn split_is_deterministic_per_seed() {
    let d = tempfile::tempdir().unwrap();
    prepare(d.path());
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let tags = |seed: &str| {
        let o = salient(d.path(), &["--config", cfg, "--seed", seed, "split"]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(d.path().join("splits.csv")).unwrap()
    };
    let first = tags("7");
    assert_eq!(first, tags("7"));
    assert_ne!(first, tags("8"));
}

#[test]
fn stage_order_is_enforced() {
    let d = tempfile::tempdir().unwrap();
    prepare(d.path());
    let o = salient(d.path(), &["train-cnn"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: stage=train-cnn kind=missing-artifact"), "{err}");
    assert!(err.contains("run stage split first"), "{err}");

    let e = tempfile::tempdir().unwrap();
    let o = salient(e.path(), &["preprocess"]);
    assert!(stderr(&o).contains("run stage synth first"));
}

#[test]
fn unknown_config_key_is_named() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, "[kshape]\nk = 4\nwidth = 3\n").unwrap();
    let o = salient(d.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error: stage=config kind=config"), "{err}");
    assert!(err.contains("width"), "{err}");
}

#[test]
fn type_mismatch_names_the_key() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, "[lr]\nalpha = \"small\"\n").unwrap();
    let o = salient(d.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    let err = stderr(&o);
    assert!(!o.status.success());
    assert!(err.contains("alpha") || err.contains("line 2"), "{err}");
}
