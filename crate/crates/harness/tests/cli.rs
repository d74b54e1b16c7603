use std::path::Path;
use std::process::{Command, Output};

fn vsod(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_vsod")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "vsod {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn commands_chain_from_generation_to_inference() {
    let dir = tempfile::tempdir().unwrap();
    let (data, runs) = (dir.path().join("data"), dir.path().join("run"));
    vsod(&["gen-data", "--out", s(&data), "--sequences", "2", "--seed", "3"]);
    let config = dir.path().join("train.toml");
    std::fs::write(
        &config,
        "batch_size = 2\ninput_size = 32\nbase_channels = 4\nwidth_multipliers = [1, 1, 2, 2, 2]\n",
    )
    .unwrap();

    let out = vsod(&[
        "train", "--config", s(&config), "--data", s(&data), "--out", s(&runs), "--steps", "2",
        "--fusion-mode", "cat", "--seed", "4",
    ]);
    let log = String::from_utf8(out.stdout).unwrap();
    assert_eq!(log.lines().count(), 2);
    let echo = String::from_utf8(out.stderr).unwrap();
    for key in ["learning_rate = 0.00001", "max_steps = 2", "fusion_mode = \"concat\"", "seed = 4", "gate_loss = true", "# eval_data unset"] {
        assert!(echo.contains(key), "missing {key} in\n{echo}");
    }

    let ckpt = runs.join("checkpoint.bin");
    let eval_dir = dir.path().join("eval");
    std::fs::create_dir_all(&eval_dir).unwrap();
    let out = vsod(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&eval_dir)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["frame_count"], 16);
    assert!(eval_dir.join("report.json").is_file());

    let seq = data.join("seq03000");
    let maps = dir.path().join("maps");
    vsod(&[
        "infer", "--checkpoint", s(&ckpt), "--rgb", s(&seq.join("rgb")), "--flow", s(&seq.join("flow")), "--out", s(&maps),
    ]);
    assert_eq!(std::fs::read_dir(&maps).unwrap().count(), 8);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "learning_rat = 1e-4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vsod"))
        .args(["train", "--config", s(&config), "--data", "."])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}
