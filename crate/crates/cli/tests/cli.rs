use std::fs;
use std::path::Path;

use ambigzsl::eval::MetricsRecord;
use ambigzsl_cli::run;

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["ambigzsl"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        "epochs = 2\nbatch_size = 16\nhidden_dim = 16\nn_critic = 2\nsynth_per_unseen = 10\nclf_epochs = 2\n",
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["aggregate", "--help"]), 0);
    assert_eq!(cli(&[]), 2);
    assert_eq!(cli(&["train", "--bogus"]), 2);
    assert_eq!(cli(&["train", "--data", "x", "--out", "y", "--mode", "sideways"]), 2);
    assert_eq!(cli(&["train", "--data", "x", "--out", "y", "--lambda-policy", "gamma:1"]), 2);
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(cli(&["train", "--data", s(&tmp.path().join("missing")), "--out", s(&out)]), 1);
    assert_eq!(cli(&["aggregate", "--scores", s(&tmp.path().join("none.csv"))]), 1);
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(cli(&["gen-data", "--out", s(&a), "--seed", "4"]), 0);
    assert_eq!(cli(&["gen-data", "--out", s(&b), "--seed", "4"]), 0);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["params"]["n_seen"], 5);
}

#[test]
fn train_synth_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let cfg = tiny_config(p);
    assert_eq!(cli(&["gen-data", "--out", s(&p.join("data")), "--samples-per-class", "10"]), 0);
    assert_eq!(
        cli(&[
            "train", "--data", s(&p.join("data")), "--out", s(&p.join("run")), "--config", &cfg,
            "--mode", "transductive", "--lambda-policy", "beta:0.3:0.3", "--pool", "unseen",
        ]),
        0
    );
    for f in ["checkpoint.json", "loss_log.csv", "config.json", "manifest.json"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("run/config.json")).unwrap()).unwrap();
    assert_eq!(resolved["mode"], "transductive");
    assert_eq!(resolved["pool"], "unseen");
    assert_eq!(resolved["lambda_policy"]["kind"], "beta");

    let ck = p.join("run/checkpoint.json");
    assert_eq!(
        cli(&["synth", "--checkpoint", s(&ck), "--data", s(&p.join("data")), "--out", s(&p.join("syn")), "--per-class", "4"]),
        0
    );
    let labels = fs::read_to_string(p.join("syn/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 3 * 4);
    let features = fs::read_to_string(p.join("syn/features.csv")).unwrap();
    assert!(features.lines().all(|l| l.split(',').count() == 16));

    assert_eq!(cli(&["eval", "--checkpoint", s(&ck), "--data", s(&p.join("data")), "--out", s(&p.join("ev"))]), 0);
    let recs: Vec<MetricsRecord> = serde_json::from_str(&fs::read_to_string(p.join("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| r.validate().is_ok()));
    assert!(p.join("ev/report.txt").exists());

    // fine-tuning from the checkpoint
    assert_eq!(
        cli(&["train", "--data", s(&p.join("data")), "--out", s(&p.join("ft")), "--config", &cfg, "--finetune", s(&ck)]),
        0
    );
}

#[test]
fn aggregate_published_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/published_scores.csv");
    let out = tmp.path().join("agg");
    assert_eq!(cli(&["aggregate", "--scores", s(&scores), "--setting", "ZSL-TR", "--out", s(&out)]), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let ours = report["aggregates"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["method"] == "Ours")
        .unwrap();
    assert!((ours["mnrg"].as_f64().unwrap() - 22.7).abs() < 1e-9);
    let table = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(table.contains("22.70"));

    // leaving out a dataset changes the median
    let out2 = tmp.path().join("agg2");
    assert_eq!(
        cli(&["aggregate", "--scores", s(&scores), "--setting", "ZSL-TR", "--exclude", "FLO", "--out", s(&out2)]),
        0
    );
    assert!(!fs::read_to_string(out2.join("report.txt")).unwrap().contains("FLO"));
}

#[test]
fn ablation_grids_write_one_directory_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let cfg = tiny_config(p);
    assert_eq!(cli(&["gen-data", "--out", s(&p.join("data")), "--samples-per-class", "8"]), 0);
    assert_eq!(
        cli(&[
            "ablate-pool", "--data", s(&p.join("data")), "--out", s(&p.join("pool")), "--config", &cfg,
            "--pools", "seen,both",
        ]),
        0
    );
    let mut dirs: Vec<String> = fs::read_dir(p.join("pool"))
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["00_pool_seen", "01_pool_both"]);

    assert_eq!(
        cli(&[
            "ablate-lambda", "--data", s(&p.join("data")), "--out", s(&p.join("lam")), "--config", &cfg,
            "--policies", "fixed:0.5,uniform:0:1",
        ]),
        0
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("lam/report.json")).unwrap()).unwrap();
    let methods: Vec<&str> = report["records"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert!(methods.contains(&"lambda=fixed:0.5"));
    assert!(methods.contains(&"lambda=uniform:0:1"));
}
