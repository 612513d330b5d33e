//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key maps onto a
//! field of the training, loss, model or degradation configuration; unknown
//! keys are rejected. Command-line `--set key=value` pairs override the file.

use std::fmt::Write as _;
use std::path::Path;

use usrgr::kspace::DegradeConfig;
use usrgr::losses::MsSsimConfig;
use usrgr::models::BlockVariant;
use usrgr::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub precision: Precision,
    pub train: TrainConfig,
    pub degrade: DegradeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            precision: Precision::F32,
            train: TrainConfig::desk(),
            degrade: DegradeConfig::default(),
        }
    }
}

/// Documented keys, in echo order.
pub const KEYS: &[&str] = &[
    "precision",
    "seed",
    "lr",
    "batch",
    "steps",
    "patch",
    "g_pretrain_steps",
    "g_finetune_per_step",
    "checkpoint_every",
    "no_fid",
    "no_sinc",
    "plain_blocks",
    "n_feats",
    "n_blocks",
    "variant",
    "global_skip",
    "slope",
    "alpha",
    "beta",
    "gamma",
    "hinge_floor",
    "msssim_scales",
    "msssim_window",
    "msssim_sigma",
    "ssim_k1",
    "ssim_k2",
    "dynamic_range",
    "msssim_normalize",
    "sinc_taps",
    "noise_sigma",
    "noise_seed",
];

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, String> {
    value
        .parse()
        .map_err(|_| format!("key {key:?}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("key {key:?}: expected true or false, got {value:?}")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("key \"precision\": expected f32 or f64, got {value:?}")),
                }
            }
            "seed" => t.seed = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "batch" => t.batch = parse_num(key, value)?,
            "steps" => t.steps = parse_num(key, value)?,
            "patch" => t.patch = parse_num(key, value)?,
            "g_pretrain_steps" => t.g_pretrain_steps = parse_num(key, value)?,
            "g_finetune_per_step" => t.g_finetune_per_step = parse_num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, value)?,
            "no_fid" => t.flags.no_fid = parse_bool(key, value)?,
            "no_sinc" => t.flags.no_sinc = parse_bool(key, value)?,
            "plain_blocks" => t.flags.plain_blocks = parse_bool(key, value)?,
            "n_feats" => t.model.n_feats = parse_num(key, value)?,
            "n_blocks" => t.model.n_blocks = parse_num(key, value)?,
            "variant" => {
                t.model.variant = match value {
                    "wide" => BlockVariant::Wide,
                    "plain" => BlockVariant::Plain,
                    _ => return Err(format!("key \"variant\": expected wide or plain, got {value:?}")),
                }
            }
            "global_skip" => t.model.global_skip = parse_bool(key, value)?,
            "slope" => t.model.slope = parse_num(key, value)?,
            "alpha" => t.loss.alpha = parse_num(key, value)?,
            "beta" => t.loss.beta = parse_num(key, value)?,
            "gamma" => t.loss.gamma = parse_num(key, value)?,
            "hinge_floor" => t.loss.hinge_floor = parse_num(key, value)?,
            "msssim_scales" => {
                let m = &t.loss.ms_ssim;
                let fresh = MsSsimConfig::with_scales(parse_num(key, value)?, m.window)
                    .map_err(|e| format!("key \"msssim_scales\": {e}"))?;
                t.loss.ms_ssim = MsSsimConfig {
                    sigma: m.sigma,
                    k1: m.k1,
                    k2: m.k2,
                    dynamic_range: m.dynamic_range,
                    normalize_terms: m.normalize_terms,
                    ..fresh
                };
            }
            "msssim_window" => t.loss.ms_ssim.window = parse_num(key, value)?,
            "msssim_sigma" => t.loss.ms_ssim.sigma = parse_num(key, value)?,
            "ssim_k1" => t.loss.ms_ssim.k1 = parse_num(key, value)?,
            "ssim_k2" => t.loss.ms_ssim.k2 = parse_num(key, value)?,
            "dynamic_range" => t.loss.ms_ssim.dynamic_range = parse_num(key, value)?,
            "msssim_normalize" => t.loss.ms_ssim.normalize_terms = parse_bool(key, value)?,
            "sinc_taps" => {
                t.loss.sinc_taps = parse_num(key, value)?;
                self.degrade.sinc_taps = t.loss.sinc_taps;
            }
            "noise_sigma" => self.degrade.noise_sigma = parse_num(key, value)?,
            "noise_seed" => self.degrade.seed = parse_num(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        let m = &t.loss.ms_ssim;
        match key {
            "precision" => match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "seed" => t.seed.to_string(),
            "lr" => format!("{:?}", t.lr),
            "batch" => t.batch.to_string(),
            "steps" => t.steps.to_string(),
            "patch" => t.patch.to_string(),
            "g_pretrain_steps" => t.g_pretrain_steps.to_string(),
            "g_finetune_per_step" => t.g_finetune_per_step.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "no_fid" => t.flags.no_fid.to_string(),
            "no_sinc" => t.flags.no_sinc.to_string(),
            "plain_blocks" => t.flags.plain_blocks.to_string(),
            "n_feats" => t.model.n_feats.to_string(),
            "n_blocks" => t.model.n_blocks.to_string(),
            "variant" => match t.model.variant {
                BlockVariant::Wide => "wide".into(),
                BlockVariant::Plain => "plain".into(),
            },
            "global_skip" => t.model.global_skip.to_string(),
            "slope" => format!("{:?}", t.model.slope),
            "alpha" => format!("{:?}", t.loss.alpha),
            "beta" => format!("{:?}", t.loss.beta),
            "gamma" => format!("{:?}", t.loss.gamma),
            "hinge_floor" => format!("{:?}", t.loss.hinge_floor),
            "msssim_scales" => m.scales.to_string(),
            "msssim_window" => m.window.to_string(),
            "msssim_sigma" => format!("{:?}", m.sigma),
            "ssim_k1" => format!("{:?}", m.k1),
            "ssim_k2" => format!("{:?}", m.k2),
            "dynamic_range" => format!("{:?}", m.dynamic_range),
            "msssim_normalize" => m.normalize_terms.to_string(),
            "sinc_taps" => t.loss.sinc_taps.to_string(),
            "noise_sigma" => format!("{:?}", self.degrade.noise_sigma),
            "noise_seed" => self.degrade.seed.to_string(),
            _ => unreachable!("undocumented key {key}"),
        }
    }

    /// Parses a config file body. Later keys override earlier ones.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            cfg.set(k, v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, String> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("{}: {e}", p.display()))?;
                Self::parse(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => RunConfig::default(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| format!("override {o:?}: expected key=value"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.train.validate().map_err(|e| e.to_string())?;
        cfg.degrade.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Effective configuration, one `key = value` per line, readable by
    /// [`RunConfig::parse`].
    pub fn echo(&self) -> String {
        let mut s = format!("# usrgr {}\n", env!("CARGO_PKG_VERSION"));
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k));
        }
        s
    }
}
