//! Subcommand implementations.
//!
//! Run directories use a fixed layout: `config.echo`, `train.log`, `ckpt/`,
//! `reports/` and `images/`.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use usrgr::data::{self, load_raster, load_split, save_raster, DatasetSpec, EvalMode, Manifest};
use usrgr::kspace::{self, DegradeConfig};
use usrgr::models::{checkpoint_header, NetKind};
use usrgr::train::{self, EvalReport, Method, StepRecord, TrainConfig};
use usrgr::{Checkpoint, DType, Error, GNet, Scalar, SrNet, Tensor};

use crate::config::{Precision, RunConfig};
use crate::ConfigArgs;

/// Failure classes, mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidArgument(_) | Error::Config(_) => CliError::Usage(msg),
            Error::Diverged { .. } => CliError::Numerical(msg),
            Error::Shape(_) | Error::Format { .. } | Error::Io { .. } => CliError::Data(msg),
        }
    }
}

type CliResult = Result<(), CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    RunConfig::load(args.config.as_deref(), &args.overrides).map_err(CliError::Usage)
}

/// Creates the run directory and writes the effective configuration.
fn start_run(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    for sub in ["ckpt", "reports", "images"] {
        mkdir(&out.join(sub))?;
    }
    write(&out.join("config.echo"), &cfg.echo())
}

fn samples<T: Scalar>(m: &Manifest) -> Result<Vec<(String, Tensor<T>)>, CliError> {
    let imgs = m.load_images::<T>()?;
    Ok(m.entries.iter().map(|e| e.id.clone()).zip(imgs).collect())
}

pub fn phantom(out: &Path, count: usize, val: usize, test: usize, size: usize, seed: u64) -> CliResult {
    let spec = DatasetSpec {
        size,
        train: count,
        val,
        test,
        seed,
    };
    let made = data::generate_dataset(out, &spec)?;
    let total: usize = made.iter().map(|m| m.entries.len()).sum();
    println!("wrote {total} phantoms ({size}x{size}) to {}", out.display());
    Ok(())
}

pub fn degrade(input: &Path, out: &Path, noise: f64, seed: u64) -> CliResult {
    let img: Tensor<f32> = load_raster(input)?;
    let cfg = DegradeConfig {
        noise_sigma: noise,
        seed,
        ..DegradeConfig::default()
    };
    let y = kspace::degrade(&img, &cfg)?;
    save_raster(out, &y)?;
    println!("{:?} -> {:?}", img.shape(), y.shape());
    Ok(())
}

pub fn pretrain_g(data: &Path, out: &Path, args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    match cfg.precision {
        Precision::F32 => pretrain_g_as::<f32>(data, out, &cfg),
        Precision::F64 => pretrain_g_as::<f64>(data, out, &cfg),
    }
}

fn pretrain_g_as<T: Scalar>(data: &Path, out: &Path, cfg: &RunConfig) -> CliResult {
    let train_set = load_split(data, "train")?.load_images::<T>()?;
    start_run(out, cfg)?;
    let tc = &cfg.train;
    let mut g = GNet::<T>::new(&tc.effective_model(), data::derive_seed(tc.seed, 11))?;
    let mut log = String::from("step\tg_loss\n");
    let result = train::pretrain_g(&train_set, &mut g, tc, &mut |s| {
        log.push_str(&format!("{}\t{:?}\n", s.step, s.loss));
    });
    write(&out.join("train.log"), &log)?;
    g.save(&out.join("ckpt").join("g.usrm"))?;
    result?;
    println!("g pretrained for {} steps", tc.g_pretrain_steps);
    Ok(())
}

pub fn train(data: &Path, out: &Path, g: Option<&Path>, args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    if !cfg.train.flags.no_sinc && g.is_none() {
        return Err(CliError::Usage("--g is required unless --no-sinc is given".into()));
    }
    match cfg.precision {
        Precision::F32 => train_as::<f32>(data, out, g, &cfg),
        Precision::F64 => train_as::<f64>(data, out, g, &cfg),
    }
}

fn train_as<T: Scalar>(data: &Path, out: &Path, g_path: Option<&Path>, cfg: &RunConfig) -> CliResult {
    let tc = &cfg.train;
    let train_set = load_split(data, "train")?.load_images::<T>()?;
    let val = samples::<T>(&load_split(data, "val")?)?;
    let mut g = match g_path.filter(|_| !tc.flags.no_sinc) {
        Some(p) => Some(GNet::<T>::load(p)?),
        None => None,
    };
    start_run(out, cfg)?;
    let ckpt = out.join("ckpt");
    let log_path = out.join("train.log");
    let mut log = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    writeln!(log, "{}", StepRecord::TSV_HEADER).map_err(|e| io_err(&log_path, e))?;

    let mut f = SrNet::<T>::new(&tc.effective_model(), data::derive_seed(tc.seed, 10))?;
    let every = tc.checkpoint_every;
    let result = train::train_usrgr(&train_set, &mut f, g.as_mut(), tc, &mut |r, f, _| {
        writeln!(log, "{}", r.tsv_row()).map_err(|e| Error::Config(format!("train.log: {e}")))?;
        if every > 0 && (r.step + 1) % every == 0 {
            f.save(&ckpt.join(format!("f-step{:06}.usrm", r.step + 1)))?;
        }
        Ok(())
    });
    // the networks hold their last finite state even after a divergence
    f.save(&ckpt.join("f.usrm"))?;
    if let Some(g) = &g {
        g.save(&ckpt.join("g.usrm"))?;
    }
    result?;

    let predict = |x: &Tensor<T>| train::infer(&f, x);
    let (report, _) = train::evaluate(&predict, &val, EvalMode::Synthetic, method_label(tc), "val")?;
    report.save(out.join("reports"), "val")?;
    print_summary(&report);
    Ok(())
}

fn method_label(tc: &TrainConfig) -> &'static str {
    match (tc.flags.no_fid, tc.flags.no_sinc, tc.flags.plain_blocks) {
        (false, false, false) => Method::Usrgr.label(),
        (true, false, false) => Method::NoFid.label(),
        (false, true, false) => Method::NoSinc.label(),
        (false, false, true) => Method::Plain.label(),
        _ => "uSRGR-custom",
    }
}

fn print_summary(r: &EvalReport) {
    match (&r.psnr, &r.ssim, &r.fidelity_psnr) {
        (Some(p), Some(s), Some(f)) => println!(
            "{} on {}: PSNR {:.3} +- {:.3} dB, SSIM {:.4}, fidelity PSNR {:.3} dB ({} images)",
            r.method,
            r.dataset,
            p.mean,
            p.std,
            s.mean,
            f.mean,
            r.rows.len()
        ),
        _ => println!("{} on {}: {} images", r.method, r.dataset, r.rows.len()),
    }
}

fn sr_dtype(model: &Path) -> Result<DType, CliError> {
    let (kind, dtype) = checkpoint_header(model)?;
    if kind != NetKind::Sr {
        return Err(CliError::Usage(format!(
            "{} holds a g network, expected an f checkpoint",
            model.display()
        )));
    }
    Ok(dtype)
}

pub fn infer(model: &Path, input: &Path, out: &Path) -> CliResult {
    match sr_dtype(model)? {
        DType::F32 => infer_as::<f32>(model, input, out),
        DType::F64 => infer_as::<f64>(model, input, out),
    }
}

fn infer_as<T: Scalar>(model: &Path, input: &Path, out: &Path) -> CliResult {
    let f = SrNet::<T>::load(model)?;
    let img: Tensor<T> = load_raster(input)?;
    let y = train::infer(&f, &img)?;
    save_raster(out, &y)?;
    println!("{:?} -> {:?}", img.shape(), y.shape());
    Ok(())
}

pub fn eval(model: &Path, data: &Path, mode: &str, out: &Path, split: &str) -> CliResult {
    let mode = EvalMode::parse(mode)?;
    match sr_dtype(model)? {
        DType::F32 => eval_as::<f32>(model, data, mode, out, split),
        DType::F64 => eval_as::<f64>(model, data, mode, out, split),
    }
}

fn save_images<T: Scalar>(dir: &Path, ids: &[(String, Tensor<T>)], preds: &[Tensor<T>]) -> CliResult {
    mkdir(dir)?;
    for ((id, _), p) in ids.iter().zip(preds) {
        save_raster(dir.join(format!("{id}.usrt")), p)?;
    }
    Ok(())
}

fn eval_as<T: Scalar>(model: &Path, data: &Path, mode: EvalMode, out: &Path, split: &str) -> CliResult {
    let f = SrNet::<T>::load(model)?;
    let set = samples::<T>(&load_split(data, split)?)?;
    let predict = |x: &Tensor<T>| train::infer(&f, x);
    let (report, preds) = train::evaluate(&predict, &set, mode, "uSRGR", split)?;
    save_images(&out.join("images"), &set, &preds)?;
    if mode == EvalMode::Synthetic {
        report.save(out.join("reports"), "eval")?;
        print_summary(&report);
    } else {
        println!("wrote {} super-resolved images", preds.len());
    }
    Ok(())
}

pub fn baseline(method: &str, data: &Path, out: &Path, split: &str, args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    match cfg.precision {
        Precision::F32 => baseline_as::<f32>(method, data, out, split, &cfg),
        Precision::F64 => baseline_as::<f64>(method, data, out, split, &cfg),
    }
}

fn baseline_as<T: Scalar>(method: &str, data: &Path, out: &Path, split: &str, cfg: &RunConfig) -> CliResult {
    let set = samples::<T>(&load_split(data, split)?)?;
    let report = match method {
        "bicubic" => train::run_baseline_bicubic(&set, split)?,
        "deg-sr" => {
            let train_set = load_split(data, "train")?.load_images::<T>()?;
            train::run_deg_sr(&train_set, &set, &cfg.train, split)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown baseline {other:?}; expected bicubic or deg-sr"
            )))
        }
    };
    start_run(out, cfg)?;
    report.save(out.join("reports"), method)?;
    print_summary(&report);
    Ok(())
}

fn parse_methods(s: &str) -> Result<Vec<Method>, CliError> {
    if s == "all" {
        return Ok(Method::ALL.to_vec());
    }
    s.split(',')
        .map(|m| match m.trim() {
            "bicubic" => Ok(Method::Bicubic),
            "usrgr" => Ok(Method::Usrgr),
            "no-fid" => Ok(Method::NoFid),
            "no-sinc" => Ok(Method::NoSinc),
            "plain" => Ok(Method::Plain),
            "deg-sr" => Ok(Method::DegSr),
            other => Err(CliError::Usage(format!("unknown method {other:?}"))),
        })
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad seed {v:?}")))
        })
        .collect()
}

pub fn suite(data: &Path, out: &Path, seeds: &str, methods: &str, args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    let seeds = parse_seeds(seeds)?;
    let methods = parse_methods(methods)?;
    match cfg.precision {
        Precision::F32 => suite_as::<f32>(data, out, &seeds, &methods, &cfg),
        Precision::F64 => suite_as::<f64>(data, out, &seeds, &methods, &cfg),
    }
}

fn suite_as<T: Scalar>(data: &Path, out: &Path, seeds: &[u64], methods: &[Method], cfg: &RunConfig) -> CliResult {
    let train_set = load_split(data, "train")?.load_images::<T>()?;
    let test = samples::<T>(&load_split(data, "test")?)?;
    start_run(out, cfg)?;
    let summary_path: PathBuf = out.join("reports").join("summary.tsv");
    let mut summary = fs::File::create(&summary_path).map_err(|e| io_err(&summary_path, e))?;
    writeln!(summary, "method\tseed\tpsnr\tssim\tfidelity_psnr\tseconds")
        .map_err(|e| io_err(&summary_path, e))?;
    for &seed in seeds {
        let base = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mut pretrained = Vec::new();
        for &m in methods {
            let t0 = Instant::now();
            let report = train::run_method(m, &train_set, &test, &base, &mut pretrained)?;
            let secs = t0.elapsed().as_secs_f64();
            let stem = format!("{}-seed{seed}", m.label());
            report.save(out.join("reports"), &stem)?;
            let mean = |a: Option<train::Aggregate>| a.map(|a| format!("{:?}", a.mean)).unwrap_or_default();
            writeln!(
                summary,
                "{}\t{seed}\t{}\t{}\t{}\t{secs:.1}",
                m.label(),
                mean(report.psnr),
                mean(report.ssim),
                mean(report.fidelity_psnr)
            )
            .map_err(|e| io_err(&summary_path, e))?;
            summary.flush().map_err(|e| io_err(&summary_path, e))?;
            eprint!("seed {seed} ({secs:.0} s): ");
            print_summary(&report);
        }
    }
    Ok(())
}

pub fn gradcheck(op: Option<&str>) -> CliResult {
    let reports = usrgr::gradcheck::run(op)?;
    if reports.is_empty() {
        return Err(CliError::Usage(format!("no gradient check matches {op:?}")));
    }
    let mut failed = 0;
    for r in &reports {
        println!(
            "{:<16} max rel err {:.2e} over {:>3} probes  {}",
            r.name,
            r.max_rel_err,
            r.probes,
            if r.passed { "ok" } else { "FAIL" }
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} of {} gradient checks failed",
            reports.len()
        )));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}
