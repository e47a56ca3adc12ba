mod common;

use std::fs;
use std::path::Path;

use common::*;
use daenr::cli::{
    analyze, execute_run, main_with_args, sweep, Grid, GridRun, RunConfig, SWEEP_HEADER,
};
use daenr::data::{load_region, RegionDataset};
use daenr::models::{checkpoint, Backbone, ReadoutKind};
use daenr::presets::PresetTable;
use daenr::training::TrainConfig;

fn run_config(backbone: Backbone, readout: ReadoutKind, tap: usize, neurons: usize) -> RunConfig {
    RunConfig {
        model: small_config(backbone, readout, tap, neurons),
        train: TrainConfig {
            batch_size: 8,
            max_steps: 20,
            patience_steps: 20,
            eval_every: 10,
            ..TrainConfig::default()
        },
        p_threshold: 0.05,
    }
}

fn saved_region(dir: &Path) -> (RegionDataset, std::path::PathBuf) {
    let ds = tiny_region(7, 5, 40);
    let manifest = ds.save(dir.join("data")).unwrap();
    (ds, manifest)
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("daenr")
        .chain(list.iter().copied())
        .map(String::from)
        .collect()
}

fn pgm_count(dir: &Path, prefix: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with(prefix)
        })
        .count()
}

#[test]
fn run_directory_has_every_artifact_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, manifest) = saved_region(tmp.path());
    let cfg = run_config(Backbone::Cae, ReadoutKind::Fr, 2, 5);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let sa = execute_run(&cfg, &ds, &manifest, &a, |_| {}).unwrap();
    execute_run(&cfg, &ds, &manifest, &b, |_| {}).unwrap();
    for f in [
        "config.json",
        "run_manifest.json",
        "history.csv",
        "losses.csv",
        "report.json",
        "neurons.csv",
    ] {
        assert!(a.join(f).is_file(), "{f}");
    }
    for f in ["history.csv", "report.json", "losses.csv", "neurons.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let rec = a.join("reconstructions");
    assert_eq!(pgm_count(&rec, "original_"), 10);
    assert_eq!(pgm_count(&rec, "reconstructed_"), 10);
    let pgm = fs::read(rec.join("original_00.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 1024);
    assert_eq!(sa.config_hash, cfg.hash());
    assert_eq!(
        fs::read_to_string(a.join("losses.csv"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
        "step,recon,neural,kl,vq,sparsity,total"
    );

    // Evaluating the checkpoint again reproduces the report.
    let before = fs::read(a.join("report.json")).unwrap();
    let code = main_with_args(args(&[
        "eval",
        "--run",
        a.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    assert_eq!(fs::read(a.join("report.json")).unwrap(), before);
}

#[test]
fn cnm_runs_write_originals_only() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, manifest) = saved_region(tmp.path());
    let mut cfg = run_config(Backbone::Cae, ReadoutKind::Fc, 1, 5);
    cfg.model.alpha = 0.0;
    cfg.model.beta = 1.0;
    let s = execute_run(&cfg, &ds, &manifest, &tmp.path().join("cnm"), |_| {}).unwrap();
    assert!(s.report.mse.is_none());
    let rec = tmp.path().join("cnm/reconstructions");
    assert_eq!(
        (
            pgm_count(&rec, "original_"),
            pgm_count(&rec, "reconstructed_")
        ),
        (10, 0)
    );
}

#[test]
fn synth_train_analyze_through_the_binary_entry_point() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("region");
    let code = main_with_args(args(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--preset",
        "region3",
        "--seed",
        "4",
        "--informative-fraction",
        "0",
        "--n-train",
        "30",
    ]));
    assert_eq!(code, 0);
    let manifest = data.join("manifest.json");
    let ds = load_region(&manifest).unwrap();
    assert_eq!((ds.n_neurons(), ds.n_test(), ds.repeats()), (102, 50, 12));
    assert!(ds
        .ground_truth_informative
        .as_ref()
        .unwrap()
        .iter()
        .all(|&b| !b));

    let run = tmp.path().join("run");
    let code = main_with_args(args(&[
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--arch",
        SMALL_ARCH,
        "--latent-dim",
        "6",
        "--tap",
        "2",
        "--preset-table",
        "ir-variants",
        "--max-steps",
        "10",
        "--eval-every",
        "5",
        "--batch-size",
        "8",
    ]));
    assert_eq!(code, 0);
    let cfg: RunConfig =
        serde_json::from_slice(&fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!((cfg.model.alpha, cfg.model.beta), (1.0, 5e-3));

    for (p, all) in [("1.0", true), ("0.0", false)] {
        let code = main_with_args(args(&[
            "analyze",
            "--run",
            run.to_str().unwrap(),
            "--data",
            manifest.to_str().unwrap(),
            "--p",
            p,
        ]));
        assert_eq!(code, 0);
        let a: serde_json::Value =
            serde_json::from_slice(&fs::read(run.join("analysis.json")).unwrap()).unwrap();
        let sig = a["significant_ids"].as_array().unwrap().len();
        assert_eq!(sig, if all { 102 } else { 0 });
    }
}

#[test]
fn invalid_combinations_fail_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = saved_region(tmp.path());
    let m = manifest.to_str().unwrap();
    for extra in [
        &["--alpha", "0", "--beta", "0"][..],
        &["--tap", "5"],
        &["--backbone", "vae", "--preset-table", "ir"],
        &["--arch", "4C23-bogus"],
    ] {
        let out = tmp.path().join("bad");
        let mut a = vec!["train", "--data", m, "--out", out.to_str().unwrap()];
        a.extend_from_slice(extra);
        assert_eq!(main_with_args(args(&a)), 1, "{extra:?}");
        assert!(!out.exists(), "{extra:?} created a run directory");
    }
    let missing = tmp.path().join("nothing");
    assert_eq!(
        main_with_args(args(&[
            "eval",
            "--run",
            missing.to_str().unwrap(),
            "--data",
            m
        ])),
        1
    );
}

#[test]
fn sweep_records_partial_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, manifest) = saved_region(tmp.path());
    let grid = Grid {
        base: run_config(Backbone::Cae, ReadoutKind::Fr, 1, 5),
        master_seed: Some(3),
        runs: vec![
            GridRun {
                name: Some("ok".into()),
                ..GridRun::default()
            },
            GridRun {
                name: Some("vq".into()),
                backbone: Some(Backbone::Vqvae),
                tap: Some(4),
                ..GridRun::default()
            },
            GridRun {
                name: Some("bad".into()),
                preset_table: Some(PresetTable::Ir),
                backbone: Some(Backbone::Vae),
                ..GridRun::default()
            },
        ],
    };
    let out = tmp.path().join("sweep");
    let failed = sweep(&grid, &ds, &manifest, &out, 2).unwrap();
    assert_eq!(failed, 1);
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("ok,cae,fr,1,") && lines[1].contains(",ok,"));
    assert!(lines[2].starts_with("vq,vqvae,fr,4,"));
    assert!(lines[3].starts_with("bad,") && lines[3].contains(",failed,"));
    assert!(out.join("ok/report.json").is_file());

    // A one-element grid is the same as a direct run with the resolved config.
    let single = Grid {
        runs: vec![grid.runs[0].clone()],
        ..grid.clone()
    };
    let cfg = single.resolve(&single.runs[0], &ds).unwrap();
    sweep(&single, &ds, &manifest, &tmp.path().join("one"), 1).unwrap();
    execute_run(&cfg, &ds, &manifest, &tmp.path().join("direct"), |_| {}).unwrap();
    assert_eq!(
        fs::read(tmp.path().join("one/ok/report.json")).unwrap(),
        fs::read(tmp.path().join("direct/report.json")).unwrap()
    );
}

#[test]
fn analysis_reports_ground_truth_recall() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, manifest) = saved_region(tmp.path());
    let cfg = run_config(Backbone::Cae, ReadoutKind::Fr, 2, 5);
    let dir = tmp.path().join("r");
    execute_run(&cfg, &ds, &manifest, &dir, |_| {}).unwrap();
    let (model, _) = checkpoint::load::<f32>(dir.join("checkpoint")).unwrap();
    let a = analyze(&cfg, &model, &ds, 1.0, false).unwrap();
    assert_eq!(a.informative_recall, Some(1.0));
    assert!(a.retrain_significant.is_none());
    let a = analyze(&cfg, &model, &ds, 0.05, true).unwrap();
    assert_eq!(a.significant_ids.len() + a.insignificant_ids.len(), 5);
    assert_eq!(
        a.retrain_significant.is_some(),
        !a.significant_ids.is_empty()
    );
}
