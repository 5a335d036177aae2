use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fuzzyssvep"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

/// Three subjects, one trial per class, 2 s trials, tiny model, two epochs.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "synthesis": {
            "stimulus": {
                "frequencies": [10.0, 11.0, 12.0, 13.0],
                "phases": [0.0, 1.5707963267948966, 3.141592653589793, 4.71238898038469],
                "n_harmonics": 3,
                "harmonic_amplitudes": [1.0, 0.5, 0.25],
                "harmonic_phases": [0.0, 0.0, 0.0]
            },
            "n_subjects": 3,
            "trials_per_class": 1,
            "n_channels": 4,
            "fs": 128.0,
            "duration": 2.0,
            "snr_db": 5.0,
            "seed": 3
        },
        "model": { "rules": 3, "hidden": 8 },
        "train": {
            "max_epochs": 2,
            "warmup_epochs": 1,
            "windows_per_epoch": 32,
            "batch_size": 16,
            "window_seconds": 1.0,
            "test_windows_per_trial": 3
        },
        "eval": { "window_seconds": [1.0], "seed": 5 }
    });
    let p = dir.join("tiny.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn gen_header_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "synthesis": {
            "stimulus": {
                "frequencies": [10.0, 11.0, 12.0, 13.0],
                "phases": [0.0, 1.5707963267948966, 3.141592653589793, 4.71238898038469],
                "n_harmonics": 3,
                "harmonic_amplitudes": [1.0, 0.5, 0.25],
                "harmonic_phases": [0.0, 0.0, 0.0]
            },
            "n_subjects": 6,
            "trials_per_class": 7,
            "n_channels": 8,
            "fs": 256.0,
            "duration": 4.0,
            "snr_db": 0.0,
            "seed": 1
        }
    });
    let cfg_path = dir.path().join("gen.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let mut files = Vec::new();
    for run_dir in ["a", "b"] {
        let out = dir.path().join(run_dir);
        let o = run(&["gen", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        files.push(fs::read(out.join("dataset.ssvp")).unwrap());
    }
    let b = &files[0];
    assert_eq!(&b[..4], b"SSVP");
    let header: Vec<u32> = (0..5).map(|i| u32_at(b, 6 + 4 * i)).collect();
    assert_eq!(header, vec![6, 28, 8, 1024, 4]);
    assert_eq!(files[0], files[1]);

    let manifest = read_json(dir.path().join("a/manifest.json"));
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["seeds"]["synthesis"], 1);
    let art = &manifest["artifacts"][0];
    assert_eq!(art["path"], "dataset.ssvp");
    assert_eq!(art["bytes"].as_u64().unwrap(), b.len() as u64);
    assert_eq!(art["sha256"].as_str().unwrap().len(), 64);

    let o = run(&[
        "gen",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(dir.path().join("c/dataset.ssvp")).unwrap(), files[0]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("o");
    let o = run(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--window-seconds",
        "3",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("eval.window_seconds"));

    let o = run(&["gen", "--config", cfg.to_str().unwrap(), "--set", "synthesis.n_subjects=0"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("synthesis.n_subjects"));

    let o = run(&["train", "--set", "train.nonsense=1"]);
    assert_eq!(code(&o), 1);

    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--set", "dataset=\"x.ssvp\""]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_reports_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = run(&["gradcheck", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(out.join("gradcheck.json"));
    let runs = report.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for r in runs {
        let rep = &r["report"];
        assert_eq!(rep["h"], 1e-5);
        assert_eq!(rep["precision"], "f64");
        for g in rep["groups"].as_array().unwrap() {
            assert!(g["max_rel_error"].as_f64().unwrap() < 1e-4, "{g}");
            assert!(g["worst_index"].is_array());
        }
    }

    // A tolerance no finite-difference estimate can meet fails with exit 3.
    let o = run(&[
        "gradcheck",
        "--out",
        dir.path().join("strict").to_str().unwrap(),
        "--set",
        "gradcheck.check.tolerance=1e-300",
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn loso_layout_summary_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut summaries = Vec::new();
    for name in ["r1", "r2"] {
        let out = dir.path().join(name);
        let o = run(&["loso", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for k in 0..3 {
            let fold = out.join(format!("fold_{k}"));
            assert!(fold.join("checkpoint_1s.ifzt").exists());
            let trace = fs::read_to_string(fold.join("trace_1s.csv")).unwrap();
            assert_eq!(trace.lines().next(), Some("epoch,lr,mean_loss"));
            assert_eq!(trace.lines().count(), 3);
            let eval = read_json(fold.join("eval_1s.json"));
            assert_eq!(eval["t_selection"], 1.5);
            assert_eq!(eval["n_windows"], 12);
        }
        assert!(!out.join("fold_3").exists());
        summaries.push(fs::read(out.join("summary.json")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
    let s: Value = serde_json::from_slice(&summaries[0]).unwrap();
    let w = &s["windows"][0];
    let accs: Vec<f64> = w["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["accuracy"].as_f64().unwrap())
        .collect();
    assert_eq!(accs.len(), 3);
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((w["accuracy_mean"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn train_eval_explain_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    let train_dir = dir.path().join("train");
    let o = run(&["train", "--config", cfg_s, "--out", train_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = train_dir.join("checkpoint.ifzt");
    let ckpt_s = ckpt.to_str().unwrap();

    let eval_dir = dir.path().join("eval");
    let o = run(&[
        "eval", "--config", cfg_s, "--checkpoint", ckpt_s, "--subjects", "1", "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval = read_json(eval_dir.join("eval_1s.json"));
    let windows = eval["subjects"][0]["report"]["windows"].as_array().unwrap().clone();

    for (trial, idx) in [(0usize, 0usize), (2, 1), (3, 2)] {
        let ex_dir = dir.path().join(format!("explain_{trial}_{idx}"));
        let o = run(&[
            "explain",
            "--config",
            cfg_s,
            "--checkpoint",
            ckpt_s,
            "--subject",
            "1",
            "--trial",
            &trial.to_string(),
            "--window",
            &idx.to_string(),
            "--normalize",
            "tokens",
            "--out",
            ex_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let rep = read_json(ex_dir.join("explain.json"));
        let w = &windows[trial * 3 + idx];
        assert_eq!(rep["predicted_class"], w["predicted"]);
        assert_eq!(rep["true_class"], w["label"]);

        let spectra = fs::read_to_string(ex_dir.join("rule_spectra.csv")).unwrap();
        assert_eq!(spectra.lines().count(), 1 + 3);
        let centers = fs::read_to_string(ex_dir.join("recovered_spatial_centers.csv")).unwrap();
        let rows: Vec<&str> = centers.lines().collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.split(',').count() == 128));
        assert!(ex_dir.join("temporal_firing_minmax_tokens.csv").exists());
        assert!(ex_dir.join("manifest.json").exists());
    }

    let o = run(&[
        "explain", "--config", cfg_s, "--checkpoint", ckpt_s, "--subject", "7", "--trial", "0",
        "--out", dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("subject"));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let bad = dir.path().join("bad.ifzt");
    fs::write(&bad, b"NOPE....").unwrap();
    let o = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}
