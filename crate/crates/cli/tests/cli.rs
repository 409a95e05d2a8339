//! End-to-end tests of the `avfusion` binary: subcommand workflow, exit
//! codes, output schemas, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_avfusion")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("AVFUSION_LOG", "quiet")
        .output()
        .expect("failed to launch avfusion")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("avf-cli-{}-{}", tag, std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Tiny configuration that exercises every phase in seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let text = format!(
        "\
[run]
preset = desk
seed = 11
runs = 2
out = {}

[data]
classes = 2
subjects = 3
utterances_per_subject = 2
train_subjects = 1
val_subjects = 1
test_subjects = 1
min_duration_s = 0.3
max_duration_s = 0.4

[model]
encoder = 8,6
bottleneck = 3
stream_hidden = 4
fusion_hidden = 4

[train]
max_epochs = 2

[pretrain]
epochs = 1
frame_cap = 300

[eval]
snr_levels = 10,0
",
        dir.join("out").display()
    );
    let path = dir.join("tiny.conf");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn usage_without_arguments() {
    let out = run(&[]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("usage:"));
}

#[test]
fn unknown_command_is_config_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn desk_preset_synth_counts() {
    let dir = temp_dir("desk-synth");
    let out = run(&["synth", "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    // 3 classes x 9 subjects x 10 utterances, subject splits 5/2/2.
    let text = stdout(&out);
    assert!(text.contains("270 utterances"), "{}", text);
    assert!(text.contains("splits 150/60/60"), "{}", text);
    let manifest = std::fs::read_to_string(dir.join("out/dataset/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 271); // header + rows
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn synth_determinism_and_force() {
    let dir = temp_dir("synth-det");
    let cfg = tiny_config(&dir);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(exit_code(&run(&["synth", "--config", cfg])), 0);
    let manifest_path = dir.join("out/dataset/manifest.csv");
    let first = std::fs::read(&manifest_path).unwrap();
    let first_wav = std::fs::read(dir.join("out/dataset/utt_00000/audio.wav")).unwrap();

    // Refuses to overwrite without --force.
    let refused = run(&["synth", "--config", cfg]);
    assert_eq!(exit_code(&refused), 2, "stderr: {}", stderr(&refused));

    // Identical bytes after a forced regeneration with the same seed.
    assert_eq!(exit_code(&run(&["synth", "--config", cfg, "--force"])), 0);
    assert_eq!(std::fs::read(&manifest_path).unwrap(), first);
    assert_eq!(
        std::fs::read(dir.join("out/dataset/utt_00000/audio.wav")).unwrap(),
        first_wav
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unwritable_output_path_fails_cleanly() {
    let dir = temp_dir("unwritable");
    let blocker = dir.join("blocker");
    std::fs::write(&blocker, b"file, not a directory").unwrap();
    let out = run(&[
        "synth",
        "--out",
        blocker.join("nested").to_str().unwrap(),
    ]);
    assert_ne!(exit_code(&out), 0);
    assert!(!stderr(&out).is_empty());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fusion_requires_stream_checkpoints() {
    let dir = temp_dir("dep");
    let cfg = tiny_config(&dir);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(exit_code(&run(&["synth", "--config", cfg])), 0);
    let out = run(&["train-fusion", "--config", cfg]);
    assert_eq!(exit_code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("train-stream"), "{}", stderr(&out));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_config_file_is_config_error() {
    let dir = temp_dir("badcfg");
    let path = dir.join("bad.conf");
    std::fs::write(&path, "[model]\nbottleneck = 0\n").unwrap();
    let out = run(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn full_tiny_pipeline_with_reports() {
    let dir = temp_dir("pipeline");
    let cfg_path = tiny_config(&dir);
    let cfg = cfg_path.to_str().unwrap();

    assert_eq!(exit_code(&run(&["synth", "--config", cfg])), 0);
    assert_eq!(exit_code(&run(&["pretrain", "--config", cfg])), 0);
    let out = run(&["train-stream", "--config", cfg, "--modality", "audio"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let out = run(&["train-stream", "--config", cfg, "--modality", "video"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let out = run(&["train-fusion", "--config", cfg]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));

    // The resolved config is echoed for provenance.
    let echoed = std::fs::read_to_string(dir.join("out/config-resolved.conf")).unwrap();
    assert!(echoed.contains("seed = 11"));

    // Evaluation: clean + 5 levels over 3 streams = 18 rows + header.
    let out = run(&["eval", "--config", cfg, "--snr", "20,15,10,5,0"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let report = std::fs::read_to_string(dir.join("out/report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "snr_db,stream,cr_mean,cr_std,uar_mean,uar_std,f1_mean,f1_std"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 18);
    // 6-row table per stream, clean first.
    assert_eq!(rows.iter().filter(|r| r.starts_with("clean,")).count(), 3);
    assert_eq!(rows.iter().filter(|r| r.contains(",audio,")).count(), 6);

    // Repeating the evaluation with the same seed yields identical bytes.
    let before = std::fs::read(dir.join("out/report.csv")).unwrap();
    assert_eq!(exit_code(&run(&["eval", "--config", cfg, "--snr", "20,15,10,5,0"])), 0);
    assert_eq!(std::fs::read(dir.join("out/report.csv")).unwrap(), before);

    // Stream subset selection.
    let out = run(&["eval", "--config", cfg, "--streams", "audio", "--snr", "0"]);
    assert_eq!(exit_code(&out), 0);
    let report = std::fs::read_to_string(dir.join("out/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3); // header + clean + 0 dB
    assert!(report.contains(",audio,"));
    assert!(!report.contains(",fusion,"));

    // A corrupted checkpoint is a data error (exit 4).
    let ckpt = dir.join("out/stream-audio.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    std::fs::write(&ckpt, &bytes).unwrap();
    let out = run(&["eval", "--config", cfg, "--streams", "audio"]);
    assert_eq!(exit_code(&out), 4, "stderr: {}", stderr(&out));

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn pretrain_zero_epochs_writes_random_init_checkpoint() {
    let dir = temp_dir("pretrain0");
    let text = std::fs::read_to_string(tiny_config(&dir)).unwrap();
    let path = dir.join("zero.conf");
    std::fs::write(&path, text.replace("epochs = 1", "epochs = 0")).unwrap();
    let cfg = path.to_str().unwrap();
    assert_eq!(exit_code(&run(&["synth", "--config", cfg])), 0);
    assert_eq!(exit_code(&run(&["pretrain", "--config", cfg])), 0);
    for name in ["pretrain-audio.ckpt", "pretrain-video.ckpt"] {
        let bytes = std::fs::read(dir.join("out").join(name)).unwrap();
        avfusion_core::checkpoint::Checkpoint::from_bytes(&bytes).unwrap();
    }
    std::fs::remove_dir_all(&dir).ok();
}
