use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inclusive-gen")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn grid(dir: &Path) {
    ok(&["data", "synth-grid", "--rows", "3", "--cols", "3", "--std", "0.05", "--n", "600", "--minority-modes", "0,8", "--seed", "1", "--out", s(dir)]);
}

const CONFIG: &str = "epochs = 4\nrematch_period = 2\npool_multiplier = 1\nlambda = 1.0\nlatent_dim = 4\nwidth = 16\ndepth = 2\n";

fn checksum(stdout: &str) -> String {
    stdout.rsplit("checksum ").next().unwrap().trim().to_string()
}

#[test]
fn synthesizes_datasets_with_recipes() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("grid");
    grid(&g);
    assert!(g.join("data.bin").exists());
    let recipe: Value = serde_json::from_slice(&std::fs::read(g.join("recipe.json")).unwrap()).unwrap();
    assert_eq!(recipe["type"], "grid");
    assert_eq!(recipe["minority_modes"], serde_json::json!([0, 8]));
    let m = tmp.path().join("stacked");
    ok(&["data", "synth-stacked-mnist", "--n", "50", "--per-class", "3", "--out", s(&m)]);
    assert!(m.join("data.bin").exists());
}

#[test]
fn train_eval_resume_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    grid(&data);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let run = tmp.path().join("run");
    let full = ok(&["train", "--dataset", s(&data), "--config", s(&cfg), "--seed", "5", "--out", s(&run)]);
    for k in [2, 4] {
        assert!(run.join(format!("checkpoints/epoch_{k}.ckpt")).exists());
        assert!(run.join(format!("samples/epoch_{k}.png")).exists());
    }
    let log = std::fs::read_to_string(run.join("logs/train.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["adv_G", "adv_D", "rec", "itp", "total"] {
        assert!(first[key].is_number(), "{key}");
    }
    assert_eq!(log.lines().count(), 4 * 10);

    let resumed_dir = tmp.path().join("resumed");
    let ckpt = run.join("checkpoints/epoch_2.ckpt");
    let resumed = ok(&["train", "--dataset", s(&data), "--resume", s(&ckpt), "--out", s(&resumed_dir)]);
    assert_eq!(checksum(&resumed), checksum(&full));
    let clash = cli(&["train", "--dataset", s(&data), "--resume", s(&ckpt), "--seed", "6", "--out", s(&resumed_dir)]);
    assert_eq!(clash.status.code(), Some(1));

    let last = run.join("checkpoints/epoch_4.ckpt");
    let report = tmp.path().join("reports/modes.json");
    ok(&["eval", "modes", "--checkpoint", s(&last), "--dataset", s(&data), "--samples", "900", "--out", s(&report)]);
    let json: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(json["modes_covered"].as_u64().unwrap() <= 9);
    assert!(json["kl_to_uniform"].as_f64().unwrap() >= 0.0);
    assert_eq!(json["config.seed"], 5);
    assert_eq!(json["config.epochs"], 4);
    assert_eq!(json["epoch"], 4);
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);

    let all = tmp.path().join("all.json");
    ok(&["eval", "all", "--checkpoint", s(&last), "--dataset", s(&data), "--samples", "900", "--queries", "12", "--out", s(&all)]);
    let json: Value = serde_json::from_slice(&std::fs::read(&all).unwrap()).unwrap();
    for key in ["modes_covered", "precision", "recall", "ivom_mean", "ivom_std", "bias_correlation"] {
        assert!(json[key].is_number(), "{key} missing from {json}");
    }

    let matches = tmp.path().join("matches");
    let shown = ok(&["inspect-matches", "--checkpoint", s(&last), "--dataset", s(&data), "--count", "3", "--out", s(&matches)]);
    assert_eq!(shown.lines().count(), 3);
    assert!(matches.join("match_00002.png").exists());
    let records: Value = serde_json::from_slice(&std::fs::read(matches.join("matches.json")).unwrap()).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 3);
}

#[test]
fn experiment_records_every_arm_and_exits_nonzero_on_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "name": "cli",
        "dataset": {"type": "grid", "rows": 2, "cols": 2, "std": 0.05, "n": 256, "seed": 0},
        "config": {"epochs": 2, "latent_dim": 4, "width": 8, "depth": 1, "rematch_period": 1, "pool_multiplier": 1},
        "arms": [
            {"name": "gan_only", "overrides": {"lambda": 0.0, "beta": 0.0}},
            {"name": "imle_gan", "overrides": {"lambda": 1.0}}
        ],
        "eval": {"metrics": ["modes"], "mode_samples": 400},
        "replicates": 2,
        "seed": 10
    });
    let path = tmp.path().join("spec.json");
    std::fs::write(&path, serde_json::to_vec(&spec).unwrap()).unwrap();
    let out = tmp.path().join("exp");
    let table = ok(&["experiment", "--config", s(&path), "--out", s(&out)]);
    assert!(table.contains("config_hash"));
    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let arms = manifest["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 4);
    let seeds: std::collections::BTreeSet<u64> = arms.iter().map(|a| a["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds.len(), 4);
    assert!(out.join("results.csv").exists());
    assert!(out.join("arms/imle_gan/rep_1/report.json").exists());

    let mut broken = spec.clone();
    broken["arms"][1]["overrides"]["feature"] = "embedding".into();
    std::fs::write(&path, serde_json::to_vec(&broken).unwrap()).unwrap();
    let out2 = tmp.path().join("exp2");
    let res = cli(&["experiment", "--config", s(&path), "--out", s(&out2)]);
    assert_eq!(res.status.code(), Some(2));
    let manifest: Value = serde_json::from_slice(&std::fs::read(out2.join("manifest.json")).unwrap()).unwrap();
    let statuses: Vec<&str> = manifest["arms"].as_array().unwrap().iter().map(|a| a["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["ok", "failed", "ok", "failed"]);
}

#[test]
fn usage_errors_fail() {
    assert_eq!(cli(&["data", "synth-grid", "--rows", "2", "--cols", "2", "--std", "0.1", "--n", "10"]).status.code(), Some(1));
    assert_ne!(cli(&["train"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let missing = cli(&["train", "--dataset", s(&tmp.path().join("nope")), "--out", s(tmp.path())]);
    assert_eq!(missing.status.code(), Some(1));
}
