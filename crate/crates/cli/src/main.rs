//! `usrgr` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Unsupervised MRI super-resolution with a k-space consistency prior.
#[derive(Parser, Debug)]
#[command(name = "usrgr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus `--set key=value` overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generates a synthetic phantom dataset with train/val/test manifests.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        /// Training phantoms.
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 20)]
        val: usize,
        #[arg(long, default_value_t = 20)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Applies Fourier cropping (2x) and optional Gaussian noise to a raster.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrains the Sinc-compensation network g.
    PretrainG {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Trains the super-resolution network f.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pretrained g checkpoint (required unless --no-sinc).
        #[arg(long)]
        g: Option<PathBuf>,
        #[arg(long)]
        no_fid: bool,
        #[arg(long)]
        no_sinc: bool,
        #[arg(long)]
        plain_blocks: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Super-resolves one raster (2x).
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluates a trained f on a dataset split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "synthetic")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Runs a baseline: bicubic upscaling or separately trained deGibbs + SR.
    Baseline {
        #[arg(long)]
        method: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Trains and evaluates several methods over several seeds.
    Suite {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        /// Comma-separated methods: bicubic, usrgr, no-fid, no-sinc, plain, deg-sr, or all.
        #[arg(long, default_value = "all")]
        methods: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Runs the finite-difference gradient checks.
    Gradcheck {
        /// Only cases whose name contains this string.
        #[arg(long)]
        op: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Phantom { out, count, val, test, size, seed } => {
            commands::phantom(&out, count, val, test, size, seed)
        }
        Command::Degrade { input, out, noise, seed } => commands::degrade(&input, &out, noise, seed),
        Command::PretrainG { data, out, cfg } => commands::pretrain_g(&data, &out, &cfg),
        Command::Train { data, out, g, no_fid, no_sinc, plain_blocks, cfg } => {
            let mut cfg = cfg;
            for (flag, key) in [(no_fid, "no_fid"), (no_sinc, "no_sinc"), (plain_blocks, "plain_blocks")] {
                if flag {
                    cfg.overrides.push(format!("{key}=true"));
                }
            }
            commands::train(&data, &out, g.as_deref(), &cfg)
        }
        Command::Infer { model, input, out } => commands::infer(&model, &input, &out),
        Command::Eval { model, data, mode, out, split } => {
            commands::eval(&model, &data, &mode, &out, &split)
        }
        Command::Baseline { method, data, out, split, cfg } => {
            commands::baseline(&method, &data, &out, &split, &cfg)
        }
        Command::Suite { data, out, seeds, methods, cfg } => {
            commands::suite(&data, &out, &seeds, &methods, &cfg)
        }
        Command::Gradcheck { op } => commands::gradcheck(op.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
