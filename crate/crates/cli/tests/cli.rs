use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biasadapt::data::{class_counts, load_csv_dataset, ImbalanceKind, ImbalanceProfile};
use biasadapt_cli::ExperimentConfig;

const SMALL: &str = r#"
seed = 3

[data]
num_classes = 3

[data.synth]
dim = 4
separation = 3.0
labeled = { kind = "longtail", gamma = 5, n1 = 20 }
unlabeled = { kind = "uniform", n1 = 30 }
test = { kind = "uniform", n1 = 20 }

[model]
hidden = [8]
feature_dim = 6
attractor_hidden = 5

[train]
mode = { kind = "l2ac" }
alpha = 0.05
eta = 1.0
iters = 40
batch_labeled = 9
batch_unlabeled = 12
tau = 0.7
ema_decay = 0.9

[eval]
interval = 10
last = 3
checkpoint_interval = 20
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_biasadapt"));
    c.env_remove(biasadapt_cli::OUTPUT_ROOT_ENV);
    c
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn train(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut c = bin();
    c.arg("train").arg("--config").arg(config).arg("--out").arg(out).args(extra);
    c.output().unwrap()
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = ExperimentConfig::from_toml(SMALL).unwrap();
    let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
    assert_eq!(c, again);
    let bad = SMALL.replace("ema_decay = 0.9", "ema_decay = 0.9\nmomentum = 0.5");
    assert!(ExperimentConfig::from_toml(&bad).is_err());
    let both = format!("{SMALL}\n[data.csv]\nlabeled = \"a\"\nunlabeled = \"b\"\ntest = \"c\"\n");
    assert!(ExperimentConfig::from_toml(&both).is_err());
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, SMALL.replace("alpha = 0.05", "alpha = -1.0")).unwrap();
    let out = train(&p, &dir.path().join("run"), &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train(&cfg, &a, &[]).status.success());
    assert!(train(&cfg, &b, &[]).status.success());
    for f in ["trace.csv", "metrics.json", "confusion.csv", "final.json", "config.toml"] {
        let fa = std::fs::read(a.join(f)).unwrap();
        assert_eq!(fa, std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 41);
    assert!(trace.starts_with("iter,alpha,eta,lower_loss"));
    assert!(a.join("timings.csv").exists());
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["mode"], "l2ac");
    assert!(metrics["final_eval"]["pseudo_recall"].is_array());
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    assert!(train(&cfg, &out, &["--iters", "5"]).status.success());
    let again = train(&cfg, &out, &["--iters", "5"]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert!(train(&cfg, &out, &["--iters", "5", "--force"]).status.success());
}

#[test]
fn default_run_directory_uses_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let root = dir.path().join("root");
    let mut c = bin();
    c.env(biasadapt_cli::OUTPUT_ROOT_ENV, &root);
    c.args(["train", "--iters", "3", "--seed", "9", "--mode", "baseline", "--config"]).arg(&cfg);
    run_ok(&mut c);
    assert!(root.join("baseline").join("seed_9").join("metrics.json").exists());
}

#[test]
fn gen_data_profile_matches_class_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let res = run_ok(bin().args(["gen-data", "--profile", "longtail", "--n1", "1500", "--gamma", "100", "--classes", "10", "--out"]).arg(&out));
    let expect = class_counts(&ImbalanceProfile::new(ImbalanceKind::Longtail, 100.0, 1500, 10).unwrap()).unwrap();
    let printed: Vec<usize> = String::from_utf8(res.stdout).unwrap().trim().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(printed, expect);
    let data = load_csv_dataset(out.join("dataset.csv"), 10).unwrap();
    assert_eq!(data.class_histogram(), expect);
    assert_eq!((data.class_histogram()[0], data.class_histogram()[9]), (1500, 15));
}

#[test]
fn gen_data_from_config_writes_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("splits");
    run_ok(bin().args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let lab = load_csv_dataset(out.join("labeled.csv"), 3).unwrap();
    let unl = load_csv_dataset(out.join("unlabeled.csv"), 3).unwrap();
    assert_eq!(lab.class_histogram(), [20, 8, 4]);
    assert_eq!(unl.class_histogram(), [30, 30, 30]);
    assert!(unl.labels().iter().all(|&l| l < 0));
}

#[test]
fn eval_scores_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    assert!(train(&cfg, &run, &[]).status.success());
    let splits = dir.path().join("splits");
    run_ok(bin().args(["gen-data", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(&splits));
    let ckpt = std::fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("checkpoint_"))
        .expect("checkpoint written");
    let report = dir.path().join("report.json");
    run_ok(bin().arg("eval").arg("--ckpt").arg(&ckpt).arg("--test").arg(splits.join("test.csv")).arg("--out").arg(&report));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let bacc = v["bacc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&bacc));
    assert_eq!(v["per_class_recall"].as_array().unwrap().len(), 3);
}

#[test]
fn compare_groups_runs_by_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut runs = Vec::new();
    for mode in ["baseline", "l2ac"] {
        for seed in ["0", "1", "2"] {
            let out = dir.path().join(format!("{mode}_{seed}"));
            assert!(train(&cfg, &out, &["--iters", "10", "--mode", mode, "--seed", seed]).status.success());
            runs.push(out);
        }
    }
    let csv = dir.path().join("cmp.csv");
    let out = run_ok(bin().arg("compare").args(&runs).arg("--csv").arg(&csv));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("baseline") && table.contains("l2ac"));
    let rows: Vec<String> = std::fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);

    // The same run twice has zero spread.
    let rows = biasadapt_cli::compare::compare(&[runs[0].clone(), runs[0].clone()]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].runs, rows[0].bacc_std, rows[0].gm_std), (2, 0.0, 0.0));

    let missing = dir.path().join("nothing");
    std::fs::create_dir(&missing).unwrap();
    let out = bin().arg("compare").arg(&runs[0]).arg(&missing).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing metrics file"));
}

#[test]
fn selfcheck_passes() {
    let out = run_ok(bin().args(["selfcheck", "--seed", "5", "--trials", "10"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn bench_overhead_reports_a_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run_ok(bin().args(["bench-overhead", "--reps", "3", "--config"]).arg(&cfg));
    assert!(String::from_utf8(out.stdout).unwrap().contains("ratio"));
}
