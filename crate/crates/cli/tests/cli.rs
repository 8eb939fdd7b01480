use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[data.synth]
n_train = 10
n_novel_val = 5
n_novel_test = 6
d_attr = 4
d_in = 8
per_class = 24

[model]
variant = "pn_plus"

[model.base]
d_in = 8
d = 8

[model.base.extractor]
type = "mlp"
hidden = [16]

[train]
epochs = 2
episodes_per_epoch = 10
n_val_episodes = 5
lr_init = 0.05

[eval]
n_episodes = 20

[sweep]
ks = [1, 3]

[gradcheck]
variants = ["pn_plus", "gcgpn-aux"]
"#;

fn gcgpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcgpn")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = gcgpn(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) -> String {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    cfg.to_str().unwrap().to_string()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn train_then_eval_writes_six_metric_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    run_ok(&["train", "--config", &cfg, "--out", run_s]);
    assert!(run.join("model.ckpt").is_file());
    assert!(run.join("config.toml").is_file());
    let history = lines(&run.join("history.csv"));
    assert_eq!(history.len(), 3, "{history:?}");

    let eval = tmp.path().join("eval");
    let ckpt = run.join("model.ckpt");
    run_ok(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", eval.to_str().unwrap()]);
    let rows = lines(&eval.join("metrics.csv"));
    assert_eq!(rows[0], "measure,mean,ci95");
    assert_eq!(rows.len(), 7);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["n_episodes"], 20);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let a = tmp.path().join("a");
    run_ok(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]);
    // The echo names its own output directory; redirect only that.
    let b = tmp.path().join("b");
    let echoed = a.join("config.toml");
    run_ok(&["train", "--config", echoed.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
}

#[test]
fn ablate_with_two_variants_writes_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("ablate.toml");
    fs::write(&cfg, format!("{SMALL}\n[ablate]\nvariants = [\"pn_plus\", \"gcgpn-aux\"]\n")).unwrap();
    let out = tmp.path().join("out");
    run_ok(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let rows = lines(&out.join("ablation.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("variant,seen_seen"));
    assert!(rows[1].starts_with("pn_plus,"));
    assert!(rows[2].starts_with("gcgpn-aux,"));
}

#[test]
fn sweep_k_writes_one_row_per_shot_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let out = tmp.path().join("out");
    run_ok(&["sweep-k", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let rows = lines(&out.join("k_sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,") && rows[2].starts_with("3,"));
}

#[test]
fn gradcheck_passes_and_prints_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let out = tmp.path().join("out");
    let stdout = run_ok(&["gradcheck", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("max rel. error"), "{stdout}");
    assert_eq!(lines(&out.join("gradcheck.csv")).len(), 3);
}

#[test]
fn gradcheck_fails_with_an_impossible_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("strict.toml");
    fs::write(&cfg, "[gradcheck]\nvariants = [\"gcgpn-aux\"]\ntolerance = 0.0\n").unwrap();
    let out = gcgpn(&["gradcheck", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn synth_and_build_operator_round_trip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    run_ok(&["synth", "--config", &cfg, "--out", out_s]);
    assert!(out.join("dataset").join("meta.json").is_file());

    let from_dir = tmp.path().join("from_dir.toml");
    let dataset = out.join("dataset");
    fs::write(&from_dir, format!("[data]\npath = {:?}\n", dataset.to_str().unwrap())).unwrap();
    run_ok(&["build-operator", "--config", from_dir.to_str().unwrap(), "--out", out_s]);
    let rows = lines(&out.join("similarity.csv"));
    // Header plus one row per class: 10 + 5 + 6.
    assert_eq!(rows.len(), 22);
}

#[test]
fn taxonomy_operator_uses_path_lengths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let synth = tmp.path().join("synth.toml");
    fs::write(
        &synth,
        "[data.synth]\nn_train = 2\nn_novel_val = 1\nn_novel_test = 1\nd_attr = 2\nd_in = 3\nper_class = 8\n",
    )
    .unwrap();
    run_ok(&["synth", "--config", synth.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("dataset/meta.json")).unwrap()).unwrap();
    let ids: Vec<String> = meta["classes"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids.len(), 4);
    let tax = tmp.path().join("tree.tsv");
    let edges: String = ids.iter().map(|id| format!("root\t{id}\n")).collect();
    fs::write(&tax, edges).unwrap();
    let cfg = tmp.path().join("tax.toml");
    fs::write(
        &cfg,
        format!(
            "[data]\npath = {:?}\n[operator]\nkind = \"taxonomy_path\"\ntaxonomy = {:?}\n",
            out.join("dataset").to_str().unwrap(),
            tax.to_str().unwrap()
        ),
    )
    .unwrap();
    run_ok(&["build-operator", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let rows = lines(&out.join("similarity.csv"));
    // Siblings are two hops apart: 1 / (1 + 2).
    let first: Vec<f64> = rows[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 1.0);
    assert!((first[1] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn unknown_key_is_reported_and_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("typo.toml");
    fs::write(&cfg, "[train]\nlr_inti = 0.1\n").unwrap();
    let out = gcgpn(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lr_inti"), "{err}");
}

#[test]
fn unknown_variant_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[model]\nvariant = \"gcgpn-wat\"\n").unwrap();
    let o = tmp.path().join("o");
    let out = gcgpn(&["train", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gcgpn-wat"));
    assert!(!o.exists());
}

#[test]
fn eval_without_a_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gcgpn(&["eval", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}
