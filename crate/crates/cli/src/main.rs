//! `avfusion` command-line entry point.
//!
//! Subcommands: `synth`, `pretrain`, `train-stream --modality {audio|video}`,
//! `train-fusion`, `eval [--snr <list>] [--streams <list>]`. Common flags:
//! `--config <path>`, `--seed <u64>`, `--out <dir>`, `--force`. The
//! `AVFUSION_LOG` environment variable (`quiet|info|debug`) controls
//! verbosity. Exit codes: 0 success, 1 usage, 2 configuration error,
//! 3 missing phase dependency, 4 data error, 5 training divergence.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use avfusion_core::error::Error;
use avfusion_core::eval::SweepRow;
use avfusion_core::workflow::{
    run_eval, run_pretrain, run_synth, run_train_fusion, run_train_stream, Modality, RunConfig,
    StreamSelection, Verbosity,
};

use config::{load_config, render_config};

const USAGE: &str = "\
usage: avfusion <command> [options]

commands:
  synth                       generate the synthetic dataset and manifest
  pretrain                    RBM-pretrain both encoders on the train split
  train-stream --modality M   train one stream end-to-end (M: audio|video)
  train-fusion                assemble and fine-tune the fusion model
  eval                        evaluate checkpoints clean and under noise

options:
  --config <path>             configuration file (key = value sections)
  --seed <u64>                override the run seed
  --out <dir>                 override the output directory
  --force                     allow overwriting a non-empty dataset dir
  --random-init               (train-stream) skip the pretraining checkpoint
  --modality <audio|video>    (train-stream) which stream to train
  --snr <list>                (eval) comma-separated SNR levels in dB
  --streams <list>            (eval) subset of audio,video,fusion

environment:
  AVFUSION_LOG = quiet|info|debug   console verbosity (default info)
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    force: bool,
    random_init: bool,
    modality: Option<String>,
    snr: Option<Vec<f64>>,
    streams: Option<Vec<String>>,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    if argv.is_empty() {
        return Err("missing command".into());
    }
    let mut args = Args {
        command: argv[0].clone(),
        config: None,
        seed: None,
        out: None,
        force: false,
        random_init: false,
        modality: None,
        snr: None,
        streams: None,
    };
    let mut i = 1;
    let value = |i: &mut usize, flag: &str| -> Result<String, String> {
        *i += 1;
        argv.get(*i)
            .cloned()
            .ok_or_else(|| format!("{} needs a value", flag))
    };
    while i < argv.len() {
        match argv[i].as_str() {
            "--config" => args.config = Some(PathBuf::from(value(&mut i, "--config")?)),
            "--seed" => {
                args.seed = Some(
                    value(&mut i, "--seed")?
                        .parse()
                        .map_err(|_| "bad --seed value".to_string())?,
                )
            }
            "--out" => args.out = Some(PathBuf::from(value(&mut i, "--out")?)),
            "--force" => args.force = true,
            "--random-init" => args.random_init = true,
            "--modality" => args.modality = Some(value(&mut i, "--modality")?),
            "--snr" => {
                let list = value(&mut i, "--snr")?;
                let levels: Result<Vec<f64>, _> =
                    list.split(',').map(|v| v.trim().parse::<f64>()).collect();
                args.snr = Some(levels.map_err(|_| "bad --snr list".to_string())?);
            }
            "--streams" => {
                let list = value(&mut i, "--streams")?;
                args.streams = Some(list.split(',').map(|s| s.trim().to_string()).collect());
            }
            other => return Err(format!("unknown option `{}`", other)),
        }
        i += 1;
    }
    Ok(args)
}

fn verbosity_from_env() -> Verbosity {
    match std::env::var("AVFUSION_LOG").as_deref() {
        Ok("quiet") => Verbosity::Quiet,
        Ok("debug") => Verbosity::Debug,
        _ => Verbosity::Info,
    }
}

fn resolve_config(args: &Args) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path, args.out.as_deref())?,
        None => {
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs/desk"));
            RunConfig::desk(out)
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.verbosity = verbosity_from_env();
    cfg.validate()?;
    Ok(cfg)
}

/// Every command leaves the fully resolved configuration next to its
/// outputs.
fn echo_config(cfg: &RunConfig) -> Result<(), Error> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config-resolved.conf"), render_config(cfg))?;
    Ok(())
}

fn print_sweep_table(rows: &[SweepRow]) {
    println!(
        "{:>8} {:>8} {:>16} {:>16} {:>16}",
        "snr_db", "stream", "cr", "uar", "mean_f1"
    );
    for row in rows {
        let snr = match row.snr_db {
            None => "clean".to_string(),
            Some(db) => format!("{}", db),
        };
        println!(
            "{:>8} {:>8} {:>7.3} ({:.3}) {:>7.3} ({:.3}) {:>7.3} ({:.3})",
            snr,
            row.stream.as_str(),
            row.report.mean.cr,
            row.report.std.cr,
            row.report.mean.uar,
            row.report.std.uar,
            row.report.mean.mean_f1,
            row.report.std.mean_f1,
        );
    }
}

const COMMANDS: [&str; 5] = ["synth", "pretrain", "train-stream", "train-fusion", "eval"];

fn run(args: &Args) -> Result<(), Error> {
    if !COMMANDS.contains(&args.command.as_str()) {
        return Err(Error::Config(format!("unknown command `{}`", args.command)));
    }
    let cfg = resolve_config(args)?;
    echo_config(&cfg)?;
    match args.command.as_str() {
        "synth" => {
            let summary = run_synth(&cfg, args.force)?;
            println!(
                "wrote {} utterances ({} classes, {} subjects; splits {}/{}/{}) to {}",
                summary.utterances,
                summary.classes,
                summary.subjects,
                summary.split_counts.0,
                summary.split_counts.1,
                summary.split_counts.2,
                cfg.data_dir.display()
            );
            Ok(())
        }
        "pretrain" => {
            run_pretrain(&cfg)?;
            println!(
                "wrote {} and {}",
                cfg.pretrain_ckpt(Modality::Audio).display(),
                cfg.pretrain_ckpt(Modality::Video).display()
            );
            Ok(())
        }
        "train-stream" => {
            let modality = match args.modality.as_deref() {
                Some("audio") => Modality::Audio,
                Some("video") => Modality::Video,
                Some(other) => {
                    return Err(Error::Config(format!("unknown modality `{}`", other)))
                }
                None => {
                    return Err(Error::Config(
                        "train-stream requires --modality audio|video".into(),
                    ))
                }
            };
            let log = run_train_stream(&cfg, modality, args.random_init)?;
            if let Some(last) = log.iter().rev().find(|r| r.split == "validation") {
                println!(
                    "trained {} stream: {} epochs, best-epoch validation loss {:.4}, CR {:.3}",
                    modality.as_str(),
                    last.epoch,
                    log.iter()
                        .filter(|r| r.split == "validation")
                        .map(|r| r.loss)
                        .fold(f64::INFINITY, f64::min),
                    last.cr
                );
            } else {
                println!("trained {} stream (no epochs run)", modality.as_str());
            }
            println!("wrote {}", cfg.stream_ckpt(modality).display());
            Ok(())
        }
        "train-fusion" => {
            let log = run_train_fusion(&cfg)?;
            if let Some(last) = log.iter().rev().find(|r| r.split == "validation") {
                println!(
                    "trained fusion model: {} epochs, best validation loss {:.4}, CR {:.3}",
                    last.epoch,
                    log.iter()
                        .filter(|r| r.split == "validation")
                        .map(|r| r.loss)
                        .fold(f64::INFINITY, f64::min),
                    last.cr
                );
            } else {
                println!("trained fusion model (no epochs run)");
            }
            println!("wrote {}", cfg.fusion_ckpt().display());
            Ok(())
        }
        "eval" => {
            let selection = match &args.streams {
                None => StreamSelection::default(),
                Some(list) => {
                    let mut sel = StreamSelection {
                        audio: false,
                        video: false,
                        fusion: false,
                    };
                    for s in list {
                        match s.as_str() {
                            "audio" => sel.audio = true,
                            "video" => sel.video = true,
                            "fusion" => sel.fusion = true,
                            other => {
                                return Err(Error::Config(format!(
                                    "unknown stream `{}` (expected audio,video,fusion)",
                                    other
                                )))
                            }
                        }
                    }
                    sel
                }
            };
            let rows = run_eval(&cfg, &selection, args.snr.as_deref())?;
            print_sweep_table(&rows);
            println!("wrote {}", cfg.report_path().display());
            Ok(())
        }
        _ => unreachable!("command validated above"),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Dependency { .. } => 3,
        Error::Data(_)
        | Error::Io(_)
        | Error::Format(_)
        | Error::Checksum
        | Error::Shape { .. }
        | Error::Synchronization(_) => 4,
        Error::Training(_) => 5,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() || argv[0] == "--help" || argv[0] == "-h" || argv[0] == "help" {
        eprint!("{}", USAGE);
        return ExitCode::from(if argv.is_empty() { 1 } else { 0 });
    }
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {}", msg);
            eprint!("{}", USAGE);
            return ExitCode::from(1);
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}
