use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hitsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitsr")).args(args).current_dir(dir).output().expect("spawn hitsr")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tiny4")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hitsr(tmp.path(), &["eval", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hitsr(tmp.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["train", "eval", "robustness", "gradcheck", "inspect-checkpoint", "export-attn", "ablate"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_config_file_exits_1_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hitsr(tmp.path(), &["train", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.cfg"), "{}", stderr(&o));
}

#[test]
fn bad_config_key_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "preset = overfit\nwindwo = 4\n").unwrap();
    let o = hitsr(tmp.path(), &["--config", "bad.cfg", "eval", "--zero-weights"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("windwo"), "{}", stderr(&o));
}

#[test]
fn eval_without_data_is_a_contract_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hitsr(tmp.path(), &["eval", "--zero-weights"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_on_the_fixture_writes_one_row_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture();
    std::fs::write(tmp.path().join("run.cfg"), "preset = overfit\n").unwrap();
    let o = hitsr(
        tmp.path(),
        &["--config", "run.cfg", "--out-dir", "out", "eval", "--zero-weights", "--data", data.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("out/eval.csv")).unwrap();
    let ids: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["checks", "rings", "shapes", "stripes"]);
    assert!(tmp.path().join("out/eval_summary.csv").exists());
}

#[test]
fn short_training_run_resumes_and_inspects() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "preset = overfit\ndata = {}\nmax_steps = 6\ncheckpoint_interval = 3\neval_interval = 3\n",
        fixture().display()
    );
    std::fs::write(tmp.path().join("run.cfg"), cfg).unwrap();
    let o = hitsr(tmp.path(), &["--config", "run.cfg", "--out-dir", "full", "train"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["losses.csv", "gates.csv", "evals.csv", "config.txt", "pool_eval.csv", "checkpoint-000006.ckpt"] {
        assert!(tmp.path().join("full").join(f).exists(), "{f}");
    }
    let o = hitsr(
        tmp.path(),
        &["--config", "run.cfg", "--out-dir", "resumed", "train", "--resume", "full/checkpoint-000003.ckpt"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = std::fs::read(tmp.path().join("full/checkpoint-000006.ckpt")).unwrap();
    let b = std::fs::read(tmp.path().join("resumed/checkpoint-000006.ckpt")).unwrap();
    assert!(a == b, "resumed run diverged");

    let o = hitsr(tmp.path(), &["inspect-checkpoint", "full/checkpoint-000006.ckpt"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("step: 6"), "{text}");
    assert!(text.contains("parameters: 67619"), "{text}");
}

#[test]
fn inspecting_garbage_is_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = hitsr(tmp.path(), &["inspect-checkpoint", "junk.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
}
