use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
max_training_steps = 40
model_update_frequency = 20
ensemble_size = 4
episode_length = 20

[cem]
horizon = 6
population = 30
elite_count = 4
iterations = 2
particles = 2
";

fn uduc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uduc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = uduc(&["train", "--config", s(&cfg), "--out", s(&out), "--checkpoint-every", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.resolved", "checkpoint.bin", "train_log.csv", "checkpoints/event_2.bin"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 41);
    let header = log.lines().next().unwrap();
    assert!(header.starts_with("step,episode,action,reward,episode_return"));
    assert!(header.contains("m3_grad_norm"));

    // The resolved snapshot reproduces the run byte for byte.
    let again = tmp.path().join("again");
    let o = uduc(&["train", "--config", s(&out.join("config.resolved")), "--out", s(&again)]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(out.join("checkpoint.bin")).unwrap(),
        std::fs::read(again.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn eval_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = tmp.path().join("run");
    assert!(uduc(&["train", "--config", s(&cfg), "--out", s(&run)]).status.success());
    let ckpt = run.join("checkpoint.bin");
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = uduc(&[
            "eval", "--checkpoint", s(&ckpt), "--parameter", "pole_length", "--points", "3",
            "--episodes", "2", "--out", s(&out), "--method", "m", "--config", s(&cfg),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(out);
    }
    for f in ["summary.json", "curves/m_pole_length.csv"] {
        assert_eq!(
            std::fs::read(outs[0].join(f)).unwrap(),
            std::fs::read(outs[1].join(f)).unwrap(),
            "{f} differs"
        );
    }
    let merged = tmp.path().join("merged.csv");
    let o = uduc(&["export-curves", "--from", s(&outs[0]), "--out", s(&merged)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(merged).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().starts_with("m,pole_length,0.3,"));
}

#[test]
fn invalid_config_exits_1_and_names_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tau = -1.0\nrho = 3.0\n");
    let o = uduc(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("tau") && err.contains("rho"), "{err}");
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn input_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "unknown_key = 1\n");
    let o = uduc(&["train", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));

    let missing = tmp.path().join("nope.bin");
    let o = uduc(&["eval", "--checkpoint", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));

    let junk = tmp.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = uduc(&["inspect-checkpoint", s(&junk)]);
    assert_eq!(o.status.code(), Some(1));

    let o = uduc(&["eval", "--checkpoint", s(&junk), "--points", "1", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("≥ 2 grid points"));

    assert_eq!(uduc(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(uduc(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failure_exits_2() {
    // A learning rate this large drives the MLP loss to a non-finite value.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &SMALL.replace(
            "ensemble_size = 4",
            "ensemble_size = 2\nmodel = \"mlp\"\nhidden_units = 8\nmodel_learning_rate = 1e300",
        ),
    );
    let o = uduc(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ablate_self_reg_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("abl");
    let o = uduc(&[
        "ablate", "--study", "self-reg", "--config", s(&cfg), "--out", s(&out), "--points", "2",
        "--episodes", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "self_regularization,auc,nominal_median");
    assert!(rows[1].starts_with("on,") && rows[2].starts_with("off,"));
    assert!(out.join("self_reg_off/checkpoint.bin").exists());
}

#[test]
fn inspect_lists_members() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = tmp.path().join("run");
    assert!(uduc(&["train", "--config", s(&cfg), "--out", s(&run)]).status.success());
    let o = uduc(&["inspect-checkpoint", s(&run.join("checkpoint.bin"))]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("members 4") && text.contains("[3] pole_mass"), "{text}");
}
