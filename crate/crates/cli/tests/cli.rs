use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
data.synthetic.shift=0.1,0.5,0.9
data.synthetic.examples_per_domain=120
data.synthetic.vocab_size=200
target=d2
output_dir=run
seed=4
model.shared_dim=8
model.private_dim=4
model.head_hidden=8
model.feature_dim=150
stage1.epochs=2
stage1.learning_rate=0.001
proxy.max_epochs=5
sda.iter1=5
sda.iter2=5
toe.k_sources=2
toe.finetune_iter=5
";

fn msda(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msda"))
        .args(args)
        .env("MSDA_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("msda runs")
}

fn config(dir: &Path, extra: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn staged_commands_share_artifacts_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("root");

    let o = msda(&out, &["pretrain", "-c", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("zero_private_accuracy"));
    assert!(out.join("run/d2/stage1/best.ckpt").is_file());

    let o = msda(&out, &["adist", "-c", &cfg]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("domain,d0,d1,d2\n"));

    let o = msda(&out, &["sda", "-c", &cfg, "--iter2", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let preds = fs::read_to_string(out.join("run/d2/sda/predictions.tsv")).unwrap();
    assert!(preds.starts_with("example_id\tpredicted_label\tp_positive\n"));

    let o = msda(&out, &["toe", "-c", &cfg, "--delta0", "0.9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("run/d2/toe/pseudo_labels.tsv").is_file());
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "mechanism=baselines\n");
    let root = dir.path().join("root");
    let o = msda(&root, &["run", "-c", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("run/manifest.json").is_file());

    let o = msda(&root, &["report", root.join("run").to_str().unwrap(), "-f", "csv"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert_eq!(csv.lines().next(), Some("target,ZERO,A-Ens,L-Ens,T-Ens"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let bad = config(dir.path(), "toe.delta0=1.5\n");
    let o = msda(&root, &["run", "-c", &bad]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta0"));

    let o = msda(&root, &["run", "-c", "/nonexistent.cfg"]);
    assert!(!o.status.success());

    // SDA before Stage 1 has no checkpoint to start from.
    let cfg = config(dir.path(), "");
    let o = msda(&root, &["sda", "-c", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("pretrain"));

    let o = msda(&root, &["report", dir.path().join("missing.json").to_str().unwrap()]);
    assert!(!o.status.success());
}
