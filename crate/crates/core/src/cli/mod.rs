//! Command-line front end: layered configuration, subcommands and exit codes.
//!
//! Configuration is resolved from built-in defaults, then `--config <file>`,
//! then command-line overrides. Any dotted key can be overridden with
//! `--section.key value` or `--section.key=value`, anywhere after the
//! subcommand.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use config::{ConfigBuilder, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "semlink",
    version,
    about = "Multi-user semantic image communication simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Signal-to-noise ratio in dB.
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    snr_db: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the codec in phases and write checkpoints and the loss log.
    Train {
        /// codec, channel, whole or all.
        #[arg(long)]
        phase: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Start from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare adaptive and random masking on held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write originals and reconstructions for every trial.
        #[arg(long)]
        dump: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Region quality across masking ratios.
    SweepPr {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Bandwidth savings across user counts and thresholds.
    SweepUsers {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Charge one symbol per shared index for the index map.
        #[arg(long = "count-side-info")]
        count_side_info: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Detection error across channel kinds, SNR and CSI error.
    ChannelBench {
        #[command(flatten)]
        common: Common,
    },
    /// Write synthetic annotated scenes.
    GenScenes {
        #[command(flatten)]
        common: Common,
    },
}

/// Splits dotted `--a.b v`, `--a.b=v` and bare `--a.b` overrides out of
/// `args`, returning the remaining arguments and the key/value pairs.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut pairs = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let key = match arg.strip_prefix("--") {
            Some(k) if k.split('=').next().is_some_and(|name| name.contains('.')) => k.to_string(),
            _ => {
                rest.push(arg);
                continue;
            }
        };
        if let Some((k, v)) = key.split_once('=') {
            pairs.push((k.to_string(), v.to_string()));
        } else if let Some(v) = it.next_if(|next| !next.starts_with("--")) {
            pairs.push((key, v));
        } else {
            pairs.push((key, "true".to_string()));
        }
    }
    (rest, pairs)
}

fn builder(
    common: &Common,
    extra: &[(&str, Option<String>)],
    overrides: &[(String, String)],
) -> Result<ConfigBuilder, Error> {
    let mut b = ConfigBuilder::new();
    if let Some(path) = &common.config {
        b.merge_file(path)?;
    }
    if let Some(seed) = common.seed {
        b.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &common.out {
        b.set("out", &out.to_string_lossy())?;
    }
    if let Some(snr) = &common.snr_db {
        b.set("channel.snr_db", snr)?;
    }
    for (k, v) in extra {
        if let Some(v) = v {
            b.set(k, v)?;
        }
    }
    for (k, v) in overrides {
        b.set(k, v)?;
    }
    Ok(b)
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.to_string_lossy().into_owned())
}

fn flag(on: bool) -> Option<String> {
    on.then(|| "true".to_string())
}

fn resolve(command: &Command, overrides: &[(String, String)]) -> Result<RunConfig, Error> {
    let b = match command {
        Command::Train {
            phase,
            epochs,
            checkpoint,
            common,
        } => builder(
            common,
            &[
                ("train.phase", phase.clone()),
                ("train.epochs", epochs.map(|e| e.to_string())),
                ("train.init", path_str(checkpoint)),
            ],
            overrides,
        )?,
        Command::Eval {
            checkpoint,
            dump,
            common,
        } => builder(
            common,
            &[("eval.checkpoint", path_str(checkpoint)), ("eval.dump", flag(*dump))],
            overrides,
        )?,
        Command::SweepPr { checkpoint, common } => {
            builder(common, &[("eval.checkpoint", path_str(checkpoint))], overrides)?
        }
        Command::SweepUsers {
            checkpoint,
            count_side_info,
            common,
        } => builder(
            common,
            &[
                ("eval.checkpoint", path_str(checkpoint)),
                ("mss.count_side_info", flag(*count_side_info)),
            ],
            overrides,
        )?,
        Command::ChannelBench { common } | Command::GenScenes { common } => builder(common, &[], overrides)?,
    };
    b.build()
}

fn execute(command: &Command, cfg: &RunConfig) -> crate::Result<String> {
    Ok(match command {
        Command::Train { .. } => {
            let r = commands::train(cfg)?;
            let last = r.records.last().map(|l| l.loss).unwrap_or(f64::NAN);
            format!("trained {} batches, final loss {last:.6}", r.records.len())
        }
        Command::Eval { .. } => commands::eval(cfg)?.render(),
        Command::SweepPr { .. } => commands::sweep_pr(cfg)?.render(),
        Command::SweepUsers { .. } => commands::sweep_users(cfg)?.render(),
        Command::ChannelBench { .. } => commands::channel_bench(cfg)?.render(),
        Command::GenScenes { .. } => {
            let files = commands::gen_scenes(cfg)?;
            format!("wrote {} scenes to {}", files.len(), cfg.out.join("scenes").display())
        }
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Vocabulary(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("SEMLINK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let (args, overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let cfg = match resolve(&cli.command, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match execute(&cli.command, &cfg) {
        Ok(text) => {
            println!("{}", text.trim_end());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn override_forms() {
        let (rest, got) = split_overrides(s(&[
            "semlink",
            "eval",
            "--mss.k",
            "2..4",
            "--mask.p_r=0.5",
            "--eval.dump",
            "--seed",
            "3",
            "--channel.snr_db",
            "-3",
        ]));
        assert_eq!(rest, s(&["semlink", "eval", "--seed", "3"]));
        assert_eq!(
            got,
            vec![
                ("mss.k".into(), "2..4".into()),
                ("mask.p_r".into(), "0.5".into()),
                ("eval.dump".into(), "true".into()),
                ("channel.snr_db".into(), "-3".into()),
            ]
        );
    }
}
