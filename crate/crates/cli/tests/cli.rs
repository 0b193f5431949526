use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mspac(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspac"))
        .args(args)
        .env("MSPAC_OUT", root)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_succeeds_and_bad_usage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mspac(dir.path(), &["--help"])), 0);
    assert_eq!(code(&mspac(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&mspac(dir.path(), &["ablate"])), 1);
    assert_eq!(code(&mspac(dir.path(), &["ablate", "--axis", "colour"])), 1);
    let o = mspac(dir.path(), &["gen-data", "--set", "data.nope=3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("data.nope"));
    assert_eq!(code(&mspac(dir.path(), &["gen-data", "--set", "no-equals-sign"])), 1);
}

#[test]
fn missing_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspac(dir.path(), &["train", "--manifest", "/definitely/not/here.csv"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(code(&mspac(dir.path(), &["eval", "--checkpoint", "/definitely/not/here"])), 3);
    assert_eq!(code(&mspac(dir.path(), &["train", "--config", "/definitely/not/here.txt"])), 3);
}

#[test]
fn gen_train_eval_under_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let o = mspac(root, &["gen-data", "--ids", "8", "--per-id", "6", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(root.join("data/manifest.csv").is_file());

    let cfg = root.join("run.txt");
    fs::write(&cfg, "# short run\ntrain.epochs = 1\n").unwrap();
    let o = mspac(root, &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(root.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(root.join("checkpoints/epoch_001").is_dir());

    let o = mspac(root, &["eval", "--shot", "single", "--trials", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(root.join("report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("all,single,"));
}

#[test]
fn root_flag_overrides_the_environment() {
    let env_root = tempfile::tempdir().unwrap();
    let flag_root = tempfile::tempdir().unwrap();
    let o = mspac(
        env_root.path(),
        &["--root", flag_root.path().to_str().unwrap(), "gen-data", "--ids", "2", "--per-id", "3"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(flag_root.path().join("data/manifest.csv").is_file());
    assert!(!env_root.path().join("data").exists());
}

#[test]
fn gradcheck_passes_and_lists_every_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspac(dir.path(), &["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    for name in ["stem.rgb.w", "stem.ir.w", "trunk.0.w", "mspac.0.fc1.w", "embed.w", "head.0.w", "centers"] {
        assert!(out.lines().any(|l| l.starts_with(name)), "{name} missing:\n{out}");
    }
    assert!(!out.contains("FAIL"));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(&mspac(root, &["gen-data", "--ids", "8", "--per-id", "6"])), 0);
    let o = mspac(root, &["ablate", "--axis", "scales", "--set", "train.epochs=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(root.join("ablate_scales.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,variant,mode,shot,r1,r5,r10,r20,mAP,intra_class_dist,final_loss,status");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("scales,normal {1},"));
    assert!(lines[4].starts_with("scales,\"hierarchical {1,3}\","));
}
