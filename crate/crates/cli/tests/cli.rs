use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dressing_core::env::EnvConfig;
use dressing_core::harness::ExperimentConfig;
use dressing_core::nets::PointNetConfig;
use dressing_core::sac::SacConfig;

fn dress(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dress"));
    cmd.args(args).env_remove("DRESS_OUTPUT_ROOT").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dress(args, &[]);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn tiny_config(dir: &Path, garments: usize) -> PathBuf {
    let mut cfg = ExperimentConfig::desk();
    cfg.env = EnvConfig { garments: EnvConfig::default().garments, ..cfg.env };
    cfg.env.garments.truncate(garments);
    cfg.env.subranges = vec![13];
    cfg.env.episode_length = 5;
    cfg.env.settle_steps = 10;
    cfg.env.poses_per_subrange = 4;
    cfg.env.train_poses_per_subrange = 2;
    cfg.net = PointNetConfig::tiny();
    cfg.sac = SacConfig { batch: 4, start_steps: 4, eval_every: 8, ..SacConfig::default() };
    cfg.eval.episodes_during_training = 1;
    cfg.seeds = vec![0, 1];
    cfg.steps = 8;
    let p = dir.join("tiny.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn edit(cfg: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cfg).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(cfg, v.to_string()).unwrap();
}

fn csv_rows(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display())).lines().map(String::from).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn three_seed_train_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out = dir.path().join("run");
    edit(&cfg, |v| v["seeds"] = serde_json::json!([0, 1, 2]));
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    for seed in 0..3 {
        let m = csv_rows(&out.join(format!("seed_{seed}/metrics.csv")));
        assert_eq!(m.len(), 2, "header plus one eval row");
        assert!(out.join(format!("seed_{seed}/manifest.json")).exists());
    }
    let summary = csv_rows(&out.join("summary.csv"));
    assert!(summary[0].contains("upper_ratio_mean") && summary[0].contains("upper_ratio_std"));
    assert!(summary[1].starts_with("8,3,"), "{}", summary[1]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["code_version"].as_str().unwrap().starts_with("dressing-core"));
}

#[test]
fn eval_emits_one_row_per_pose_and_garment_without_touching_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 5);
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run), "--seed", "0"]);
    let ckpt = run.join("seed_0/checkpoint.bin");
    let before = std::fs::read(&ckpt).unwrap();
    let ev = dir.path().join("eval");
    ok(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);
    let rows = csv_rows(&ev.join("eval.csv"));
    assert_eq!(rows[0], "pose_id,garment,upper_ratio,whole_ratio,success");
    // 2 held-out poses of one sub-range times 5 garments.
    assert_eq!(rows.len() - 1, 10);
    assert!(rows[1].starts_with("13-0,tee_short,"));
    assert!(ev.join("manifest.json").exists());
}

#[test]
fn eval_over_five_poses_and_five_garments_has_25_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 5);
    edit(&cfg, |v| {
        v["env"]["poses_per_subrange"] = 50.into();
        v["env"]["train_poses_per_subrange"] = 45.into();
    });
    let ev = dir.path().join("eval");
    ok(&["eval", "--config", s(&cfg), "--mode", "heuristic", "--out", s(&ev)]);
    assert_eq!(csv_rows(&ev.join("eval.csv")).len() - 1, 25);
}

#[test]
fn perturb_eval_labels_rows_with_the_delta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out = dir.path().join("p");
    ok(&[
        "perturb-eval", "--config", s(&cfg), "--mode", "heuristic", "--deltas", "0,8.6", "--joints", "elbow-down", "--out", s(&out),
    ]);
    let rows = csv_rows(&out.join("perturb.csv"));
    assert_eq!(rows[0], "pose_id,garment,joint,delta_deg,upper_ratio,whole_ratio,success");
    assert_eq!(rows.len() - 1, 4);
    assert!(rows[3].contains(",elbow-down,8.6,"), "{}", rows[3]);
    let curves = csv_rows(&out.join("perturb_curves.csv"));
    assert_eq!(curves.len() - 1, 2);
}

#[test]
fn render_writes_one_frame_and_one_log_line_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out = dir.path().join("r");
    ok(&["render", "--config", s(&cfg), "--out", s(&out)]);
    let frames: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".ply"))
        .collect();
    let lines = csv_rows(&out.join("steps.jsonl"));
    assert_eq!(frames.len(), lines.len());
    assert!(!frames.is_empty());
    for l in &lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let parts: f64 = ["r_m", "r_f", "r_c", "r_d"].iter().map(|k| v[k].as_f64().unwrap()).sum();
        assert!((v["r_total"].as_f64().unwrap() - parts).abs() < 1e-12);
    }
    let again = dir.path().join("r2");
    ok(&["render", "--from-log", s(&out.join("episode.json")), "--out", s(&again)]);
    assert_eq!(std::fs::read(out.join("frame_0000.ply")).unwrap(), std::fs::read(again.join("frame_0000.ply")).unwrap());
}

#[test]
fn teachers_then_distill() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out = dir.path().join("d");
    let missing = dress(&["distill", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("teacher"));

    let teachers = dir.path().join("t");
    ok(&["train", "--teachers", "--config", s(&cfg), "--subranges", "4,13", "--out", s(&teachers)]);
    let manifest = teachers.join("teachers.json");
    assert!(teachers.join("teacher_4/policy.bin").exists() && teachers.join("teacher_13/policy.bin").exists());
    ok(&["distill", "--config", s(&cfg), "--subranges", "4,13", "--teacher-manifest", s(&manifest), "--seed", "0", "--out", s(&out)]);
    assert_eq!(csv_rows(&out.join("seed_0/metrics.csv")).len(), 2);
    let kl = dir.path().join("kl");
    ok(&[
        "baseline", "--mode", "kl-distill", "--config", s(&cfg), "--subranges", "4,13", "--teacher-manifest", s(&manifest), "--seed", "0",
        "--out", s(&kl),
    ]);
    assert!(kl.join("summary.csv").exists());
}

#[test]
fn heuristic_baseline_summarizes_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out = dir.path().join("h");
    ok(&["baseline", "--mode", "heuristic", "--config", s(&cfg), "--out", s(&out)]);
    assert!(out.join("seed_0/eval.csv").exists() && out.join("seed_1/eval.csv").exists());
    let summary = csv_rows(&out.join("eval_summary.csv"));
    assert!(summary[1].starts_with("2,2,"), "{}", summary[1]);
}

#[test]
fn gen_garment_output_loads_as_a_registry() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("garments");
    ok(&["gen-garment", "--out", s(&g)]);
    for n in ["tee_short", "hospital_gown", "cardigan"] {
        assert!(g.join(format!("{n}.obj")).exists() && g.join(format!("{n}.json")).exists());
    }
    let cfg = tiny_config(dir.path(), 1);
    edit(&cfg, |v| v["garment_registry"] = "garments/registry.json".into());
    let ev = dir.path().join("e");
    ok(&["eval", "--config", s(&cfg), "--mode", "heuristic", "--garments", "cardigan", "--out", s(&ev)]);
    let rows = csv_rows(&ev.join("eval.csv"));
    assert_eq!(rows.len() - 1, 2);
    assert!(rows[1].contains(",cardigan,"));

    let one = dir.path().join("one");
    ok(&["gen-garment", "--out", s(&one), "--name", "wide", "--sleeve-radius", "0.09"]);
    assert!(one.join("wide.obj").exists());
}

#[test]
fn output_root_env_var_prefixes_relative_output_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let root = dir.path().join("root");
    let out = dress(&["eval", "--config", s(&cfg), "--mode", "heuristic"], &[("DRESS_OUTPUT_ROOT", &root)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("runs/eval.csv").exists());
}

#[test]
fn bad_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "steps = 10\nlearning_rate_typo = 3\n").unwrap();
    let out = dress(&["train", "--config", s(&cfg)], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate_typo"));
    assert!(!dress(&["fly"], &[]).status.success());
    assert!(!dress(&["train", "--subranges", "27"], &[]).status.success());
    assert!(!dress(&["baseline", "--config", s(&tiny_config(dir.path(), 1))], &[]).status.success());
}

#[test]
fn artifacts_regenerate_from_their_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let first = dir.path().join("a");
    ok(&["train", "--config", s(&cfg), "--seed", "1", "--out", s(&first)]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("seed_1/manifest.json")).unwrap()).unwrap();
    let replay_cfg = dir.path().join("replay.json");
    std::fs::write(&replay_cfg, manifest["config"].to_string()).unwrap();
    let second = dir.path().join("b");
    let seed = manifest["seed"].to_string();
    ok(&["train", "--config", s(&replay_cfg), "--seed", &seed, "--out", s(&second)]);
    let again: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(second.join("seed_1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], again["config_sha256"]);
    assert_eq!(manifest["artifacts"], again["artifacts"]);
}
