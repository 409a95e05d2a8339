//! Declarative run-configuration file: `[section]` headers with
//! `key = value` entries, `#` comments, and comma-separated lists. Unknown
//! sections or keys are rejected before any work starts. The fully resolved
//! configuration can be rendered back out for provenance.

use std::path::{Path, PathBuf};

use avfusion_core::error::{Error, Result};
use avfusion_core::workflow::RunConfig;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(format!("bad value for {}: `{}`", key, value)))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_num::<T>(key, v))
        .collect()
}

/// Parses the file and applies it on top of the preset it names
/// (`[run] preset`, default `desk`). Returns the resolved configuration.
pub fn load_config(path: &Path, out_override: Option<&Path>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {}", path.display(), e)))?;
    parse_config(&text, out_override)
}

pub fn parse_config(text: &str, out_override: Option<&Path>) -> Result<RunConfig> {
    // First pass: find the preset and output directory so defaults exist.
    let entries = tokenize(text)?;
    let mut preset = "desk".to_string();
    let mut out_dir: Option<PathBuf> = None;
    for (section, key, value) in &entries {
        if section == "run" && key == "preset" {
            preset = value.clone();
        }
        if section == "run" && key == "out" {
            out_dir = Some(PathBuf::from(value));
        }
    }
    let out_dir = out_override
        .map(|p| p.to_path_buf())
        .or(out_dir)
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}", preset)));
    let mut cfg = match preset.as_str() {
        "desk" => RunConfig::desk(out_dir.clone()),
        "paper" => RunConfig::paper(out_dir.clone()),
        other => return Err(config_err(format!("unknown preset `{}`", other))),
    };
    // Fix the data dir default once the out dir is final.
    cfg.data_dir = out_dir.join("dataset");

    for (section, key, value) in &entries {
        apply_entry(&mut cfg, section, key, value)?;
    }
    if let Some(out) = out_override {
        cfg.out_dir = out.to_path_buf();
        cfg.data_dir = out.join("dataset");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn tokenize(text: &str) -> Result<Vec<(String, String, String)>> {
    let mut section = String::new();
    let mut entries = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(idx) => &raw[..idx],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| config_err(format!("line {}: unterminated section", no + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`", no + 1)))?;
        if section.is_empty() {
            return Err(config_err(format!(
                "line {}: entry before any [section]",
                no + 1
            )));
        }
        entries.push((
            section.clone(),
            key.trim().to_string(),
            value.trim().trim_matches('"').to_string(),
        ));
    }
    Ok(entries)
}

fn apply_entry(cfg: &mut RunConfig, section: &str, key: &str, value: &str) -> Result<()> {
    match (section, key) {
        ("run", "preset") => cfg.preset = value.to_string(), // consumed in pass one
        ("run", "seed") => cfg.seed = parse_num(key, value)?,
        ("run", "runs") => cfg.runs = parse_num(key, value)?,
        ("run", "out") => {} // consumed in pass one
        ("run", "data_dir") => cfg.data_dir = PathBuf::from(value),

        ("data", "classes") => cfg.synth.classes = parse_num(key, value)?,
        ("data", "subjects") => cfg.synth.subjects = parse_num(key, value)?,
        ("data", "utterances_per_subject") => {
            cfg.synth.utterances_per_subject = parse_num(key, value)?
        }
        ("data", "image_width") => cfg.synth.image_width = parse_num(key, value)?,
        ("data", "image_height") => cfg.synth.image_height = parse_num(key, value)?,
        ("data", "video_fps") => cfg.synth.video_fps = parse_num(key, value)?,
        ("data", "sample_rate") => cfg.synth.sample_rate = parse_num(key, value)?,
        ("data", "min_duration_s") => cfg.synth.min_duration_s = parse_num(key, value)?,
        ("data", "max_duration_s") => cfg.synth.max_duration_s = parse_num(key, value)?,
        ("data", "video_informativeness") => {
            cfg.synth.video_informativeness = parse_num(key, value)?
        }
        ("data", "audio_informativeness") => {
            cfg.synth.audio_informativeness = parse_num(key, value)?
        }
        ("data", "train_subjects") => cfg.synth.train_subjects = parse_num(key, value)?,
        ("data", "val_subjects") => cfg.synth.val_subjects = parse_num(key, value)?,
        ("data", "test_subjects") => cfg.synth.test_subjects = parse_num(key, value)?,

        ("model", "encoder") => cfg.encoder_sizes = parse_list(key, value)?,
        ("model", "bottleneck") => cfg.bottleneck = parse_num(key, value)?,
        ("model", "stream_hidden") => cfg.stream_hidden = parse_num(key, value)?,
        ("model", "fusion_hidden") => cfg.fusion_hidden = parse_num(key, value)?,
        ("model", "delta_window") => cfg.delta_window = parse_num(key, value)?,

        ("spectrogram", "window_ms") => cfg.spectrogram.window_ms = parse_num(key, value)?,
        ("spectrogram", "hop_ms") => cfg.spectrogram.hop_ms = parse_num(key, value)?,
        ("spectrogram", "fft_size") => cfg.spectrogram.fft_size = Some(parse_num(key, value)?),

        ("train", "batch_utterances") => cfg.train.batch_utterances = parse_num(key, value)?,
        ("train", "lr_stream") => cfg.train.lr_stream = parse_num(key, value)?,
        ("train", "lr_fusion") => cfg.train.lr_fusion = parse_num(key, value)?,
        ("train", "early_stop_delay") => cfg.train.early_stop_delay = parse_num(key, value)?,
        ("train", "clip_threshold") => cfg.train.clip_threshold = parse_num(key, value)?,
        ("train", "max_epochs") => cfg.train.max_epochs = parse_num(key, value)?,

        ("pretrain", "epochs") => cfg.pretrain.epochs = parse_num(key, value)?,
        ("pretrain", "batch_size") => cfg.pretrain.batch_size = parse_num(key, value)?,
        ("pretrain", "l2") => cfg.pretrain.l2 = parse_num(key, value)?,
        ("pretrain", "learning_rate") => cfg.pretrain.learning_rate = parse_num(key, value)?,
        ("pretrain", "frame_cap") => cfg.pretrain_frame_cap = parse_num(key, value)?,

        ("eval", "snr_levels") => cfg.snr_levels = parse_list(key, value)?,
        ("eval", "noise_wav") => cfg.noise_wav = Some(PathBuf::from(value)),

        _ => {
            return Err(config_err(format!(
                "unknown configuration key [{}] {}",
                section, key
            )))
        }
    }
    Ok(())
}

fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Renders the fully resolved configuration in the same file format, in a
/// canonical key order.
pub fn render_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str("[run]\n");
    s.push_str(&format!("preset = {}\n", cfg.preset));
    s.push_str(&format!("seed = {}\n", cfg.seed));
    s.push_str(&format!("runs = {}\n", cfg.runs));
    s.push_str(&format!("out = {}\n", cfg.out_dir.display()));
    s.push_str(&format!("data_dir = {}\n", cfg.data_dir.display()));
    s.push_str("\n[data]\n");
    s.push_str(&format!("classes = {}\n", cfg.synth.classes));
    s.push_str(&format!("subjects = {}\n", cfg.synth.subjects));
    s.push_str(&format!(
        "utterances_per_subject = {}\n",
        cfg.synth.utterances_per_subject
    ));
    s.push_str(&format!("image_width = {}\n", cfg.synth.image_width));
    s.push_str(&format!("image_height = {}\n", cfg.synth.image_height));
    s.push_str(&format!("video_fps = {}\n", cfg.synth.video_fps));
    s.push_str(&format!("sample_rate = {}\n", cfg.synth.sample_rate));
    s.push_str(&format!("min_duration_s = {}\n", cfg.synth.min_duration_s));
    s.push_str(&format!("max_duration_s = {}\n", cfg.synth.max_duration_s));
    s.push_str(&format!(
        "video_informativeness = {}\n",
        cfg.synth.video_informativeness
    ));
    s.push_str(&format!(
        "audio_informativeness = {}\n",
        cfg.synth.audio_informativeness
    ));
    s.push_str(&format!("train_subjects = {}\n", cfg.synth.train_subjects));
    s.push_str(&format!("val_subjects = {}\n", cfg.synth.val_subjects));
    s.push_str(&format!("test_subjects = {}\n", cfg.synth.test_subjects));
    s.push_str("\n[model]\n");
    s.push_str(&format!("encoder = {}\n", join_list(&cfg.encoder_sizes)));
    s.push_str(&format!("bottleneck = {}\n", cfg.bottleneck));
    s.push_str(&format!("stream_hidden = {}\n", cfg.stream_hidden));
    s.push_str(&format!("fusion_hidden = {}\n", cfg.fusion_hidden));
    s.push_str(&format!("delta_window = {}\n", cfg.delta_window));
    s.push_str("\n[spectrogram]\n");
    s.push_str(&format!("window_ms = {}\n", cfg.spectrogram.window_ms));
    s.push_str(&format!("hop_ms = {}\n", cfg.spectrogram.hop_ms));
    if let Some(fft) = cfg.spectrogram.fft_size {
        s.push_str(&format!("fft_size = {}\n", fft));
    }
    s.push_str("\n[train]\n");
    s.push_str(&format!("batch_utterances = {}\n", cfg.train.batch_utterances));
    s.push_str(&format!("lr_stream = {}\n", cfg.train.lr_stream));
    s.push_str(&format!("lr_fusion = {}\n", cfg.train.lr_fusion));
    s.push_str(&format!("early_stop_delay = {}\n", cfg.train.early_stop_delay));
    s.push_str(&format!("clip_threshold = {}\n", cfg.train.clip_threshold));
    s.push_str(&format!("max_epochs = {}\n", cfg.train.max_epochs));
    s.push_str("\n[pretrain]\n");
    s.push_str(&format!("epochs = {}\n", cfg.pretrain.epochs));
    s.push_str(&format!("batch_size = {}\n", cfg.pretrain.batch_size));
    s.push_str(&format!("l2 = {}\n", cfg.pretrain.l2));
    s.push_str(&format!("learning_rate = {}\n", cfg.pretrain.learning_rate));
    s.push_str(&format!("frame_cap = {}\n", cfg.pretrain_frame_cap));
    s.push_str("\n[eval]\n");
    s.push_str(&format!("snr_levels = {}\n", join_list(&cfg.snr_levels)));
    if let Some(path) = &cfg.noise_wav {
        s.push_str(&format!("noise_wav = {}\n", path.display()));
    }
    s
}
