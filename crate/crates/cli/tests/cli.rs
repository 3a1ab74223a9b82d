//! End-to-end runs of the `fairlatent` binary on a small synthetic problem.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 3

[data]
source = "synth"

[data.synth]
n = 600
d_a = 1
d_z_latent = 2
d_r = 3
d_z_obs = 3
bias_strength = 1.5
relevance_strength = 2.0
seed = 5

[estimator]
d_a = 1
d_z = 4
hidden = 6
epochs = 6
batch_size = 64

[classifier]
lambda = 0.01
epochs = 8
batch_size = 64
patience = 3
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    path
}

fn fairlatent(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairlatent"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn metrics(r: &Value) -> [f64; 3] {
    ["accuracy", "delta_eo", "delta_dp"].map(|k| r[k].as_f64().unwrap())
}

#[test]
fn pipeline_writes_artifacts_and_a_valid_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let stdout = ok(fairlatent(&cfg, &out, &["pipeline"]));
    assert!(stdout.contains("accuracy="));
    for f in [
        "config.toml",
        "estimator.fmdl",
        "classifier.fmdl",
        "estimator_log.json",
        "classifier_log.json",
        "report.json",
        "report.txt",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let r = report(&out);
    for v in metrics(&r) {
        assert!((0.0..=1.0).contains(&v));
    }
    let auc = r["estimation_auc"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&auc));
    assert_eq!(r["metadata"]["seed"], 3);
    assert_eq!(r["metadata"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_gives_identical_reports() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(fairlatent(&cfg, &a, &["pipeline"]));
    ok(fairlatent(&cfg, &b, &["pipeline"]));
    assert_eq!(report(&a), report(&b));
    assert_eq!(
        std::fs::read(a.join("classifier.fmdl")).unwrap(),
        std::fs::read(b.join("classifier.fmdl")).unwrap()
    );
}

#[test]
fn mi_off_lambda_zero_matches_vanilla() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let fair = tmp.path().join("fair");
    ok(fairlatent(&cfg, &fair, &["--mi", "off", "--lambda", "0", "pipeline"]));

    let vcfg_dir = tmp.path().join("v");
    std::fs::create_dir(&vcfg_dir).unwrap();
    let text = std::fs::read_to_string(&cfg).unwrap().replacen("seed = 3", "seed = 3\nmethod = \"vanilla\"", 1);
    let vcfg = vcfg_dir.join("run.toml");
    std::fs::write(&vcfg, text).unwrap();
    let vanilla = tmp.path().join("vanilla");
    ok(fairlatent(&vcfg, &vanilla, &["pipeline"]));

    assert_eq!(metrics(&report(&fair)), metrics(&report(&vanilla)));
}

#[test]
fn staged_commands_reproduce_the_pipeline() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    ok(fairlatent(&cfg, &whole, &["pipeline"]));
    let est = ok(fairlatent(&cfg, &staged, &["estimate"]));
    assert!(est.contains("estimation_auc="));
    assert!(staged.join("estimation.json").exists());
    ok(fairlatent(&cfg, &staged, &["train"]));
    ok(fairlatent(&cfg, &staged, &["evaluate"]));
    assert_eq!(report(&whole), report(&staged));
}

#[test]
fn evaluate_rejects_models_from_another_dataset() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    ok(fairlatent(&cfg, &out, &["pipeline"]));
    let text = std::fs::read_to_string(&cfg).unwrap().replace("seed = 5", "seed = 6");
    std::fs::write(&cfg, text).unwrap();
    let res = fairlatent(&cfg, &out, &["evaluate"]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn synth_writes_a_loadable_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    ok(fairlatent(&cfg, &out, &["synth"]));
    let text = std::fs::read_to_string(out.join("synthetic.csv")).unwrap();
    assert_eq!(text.lines().count(), 601);
}

#[test]
fn invalid_configuration_exits_with_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let res = fairlatent(&cfg, &out, &["--beta=-1", "pipeline"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error: config"));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nunknown_key = 2\n").unwrap();
    assert_eq!(fairlatent(&bad, &out, &["pipeline"]).status.code(), Some(2));
}

#[test]
fn missing_data_file_exits_with_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("csv.toml");
    std::fs::write(
        &cfg,
        r#"
[data]
source = "csv"
path = "does/not/exist.csv"

[data.roles]
s = "sensitive"
y = "label"
r = "relevant"
"#,
    )
    .unwrap();
    let res = fairlatent(&cfg, &tmp.path().join("run"), &["pipeline"]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn non_finite_loss_exits_with_4() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let res = fairlatent(&cfg, &tmp.path().join("run"), &["--lambda", "1e308", "pipeline"]);
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn lambda_sweep_writes_one_row_per_grid_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    ok(fairlatent(&cfg, &out, &["sweep", "--param", "lambda", "--grid", "0,0.02,0.05"]));
    let csv = std::fs::read_to_string(out.join("sweep_lambda.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,accuracy,delta_eo,delta_dp,estimation_auc,seed,config_hash");
    assert_eq!(lines.len(), 4);
    let firsts: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(firsts, [0.0, 0.02, 0.05]);
    // the estimator is fixed, so every row shares one latent AUC
    let aucs: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(4).unwrap()).collect();
    assert!(aucs.iter().all(|a| *a == aucs[0]));
}

#[test]
fn beta_sweep_retrains_the_estimator() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    ok(fairlatent(&cfg, &out, &["sweep", "--param", "beta", "--grid", "0.01,5"]));
    let csv = std::fs::read_to_string(out.join("sweep_beta.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("beta,"));
}

#[test]
fn sweep_rejects_bad_grids() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\nlambda_grid = []\n");
    let out = tmp.path().join("run");
    assert_eq!(fairlatent(&cfg, &out, &["sweep", "--param", "lambda"]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "");
    let res = fairlatent(&cfg, &out, &["sweep", "--param", "beta", "--grid", "0,1"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn ablation_reports_every_mode() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let stdout = ok(fairlatent(&cfg, &out, &["ablate"]));
    for mode in ["fair_ws", "random", "top1", "noisy", "gm"] {
        assert!(stdout.lines().any(|l| l.starts_with(mode)), "{mode} missing:\n{stdout}");
    }
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "mode,relevant,estimation_auc,seed,config_hash");
    assert_eq!(csv.lines().count(), 6);
}
