//! Pretraining of `g`, joint training of `f` with online fine-tuning of `g`,
//! baselines and evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{derive_seed, make_eval_pair, normalize, denormalize, sample_batch, EvalMode};
use crate::error::{Error, Result};
use crate::kspace::{self, bicubic_resize};
use crate::losses::{self, Ablation, LossConfig, Objective};
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::models::{BlockVariant, Bound, GNet, ModelConfig, Network, SrNet, MIN_EXTENT, UPSCALE};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flags {
    pub no_fid: bool,
    pub no_sinc: bool,
    pub plain_blocks: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Optimizer steps on `f`.
    pub steps: usize,
    pub patch: usize,
    pub seed: u64,
    pub flags: Flags,
    pub g_pretrain_steps: usize,
    pub g_finetune_per_step: usize,
    pub loss: LossConfig,
    pub model: ModelConfig,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 4,
            steps: 2000,
            patch: 64,
            seed: 0,
            flags: Flags::default(),
            g_pretrain_steps: 1000,
            g_finetune_per_step: 1,
            loss: LossConfig::desk(),
            model: ModelConfig::desk(),
            checkpoint_every: 500,
        }
    }

    pub fn full() -> Self {
        TrainConfig {
            patch: 160,
            loss: LossConfig::full(),
            model: ModelConfig::full(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if !self.patch.is_multiple_of(4) || self.patch / 2 < MIN_EXTENT {
            return Err(Error::invalid(format!(
                "patch must be a multiple of 4 and >= {}, got {}",
                2 * MIN_EXTENT,
                self.patch
            )));
        }
        let smallest = self.patch / 2;
        let need = self.loss.ms_ssim.min_extent();
        if self.loss.alpha > 0.0 && smallest < need {
            return Err(Error::invalid(format!(
                "patch {} compares {smallest}x{smallest} images but ms-ssim needs {need}",
                self.patch
            )));
        }
        self.loss.validate()?;
        self.model.validate()?;
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Model actually trained: the plain-block ablation swaps the block type
    /// and widens `N` to the closest parameter count of the wide model.
    pub fn effective_model(&self) -> ModelConfig {
        if self.flags.plain_blocks {
            plain_matched(&self.model)
        } else {
            self.model.clone()
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_fid: self.flags.no_fid,
            no_sinc: self.flags.no_sinc,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Plain-block configuration whose `f` parameter count is closest to the
/// wide configuration with the same number of blocks.
pub fn plain_matched(wide: &ModelConfig) -> ModelConfig {
    let count = |cfg: &ModelConfig| {
        SrNet::<f32>::zeros(cfg)
            .map(|n| n.param_count())
            .unwrap_or(usize::MAX)
    };
    let target = count(&ModelConfig {
        variant: BlockVariant::Wide,
        ..wide.clone()
    }) as i64;
    (1..=4 * wide.n_feats.max(1))
        .map(|n| ModelConfig {
            n_feats: n,
            variant: BlockVariant::Plain,
            ..wide.clone()
        })
        .min_by_key(|c| (count(c) as i64 - target).abs())
        .expect("non-empty range")
}

fn check_finite(value: f64, what: &str, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            what: what.to_string(),
            step,
        })
    }
}

/// One Adam update of `net` from the gradient of `loss` on `tape`.
fn apply<T: Scalar, N: Network<T>>(
    tape: &Tape<T>,
    loss: crate::autodiff::Var,
    bound: &Bound,
    net: &mut N,
    adam: &mut Adam<T>,
) -> Result<()> {
    let mut grads = tape.backward(loss)?;
    let shapes: Vec<Vec<usize>> = net.params().iter().map(|p| p.shape().to_vec()).collect();
    let g: Vec<Tensor<T>> = bound
        .vars
        .iter()
        .zip(&shapes)
        .map(|(v, s)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(s)))
        .collect();
    adam.step(&mut net.params_mut(), &g)
}

/// Per-step record of the pretraining loss of `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GStep {
    pub step: usize,
    pub loss: f64,
}

/// Minimizes `L_g` on patches of `images`, updating `g` in place. On a
/// non-finite loss the update is skipped and `Diverged` is returned, so `g`
/// keeps its last finite state.
pub fn pretrain_g<T: Scalar>(
    images: &[Tensor<T>],
    g: &mut GNet<T>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&GStep),
) -> Result<()> {
    cfg.validate()?;
    if cfg.g_pretrain_steps == 0 {
        return Ok(());
    }
    check_dataset(images, cfg.patch, 2)?;
    let obj = Objective::new(cfg.loss.clone())?;
    let mut adam = Adam::new(cfg.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 13));
    for step in 0..cfg.g_pretrain_steps {
        let batch = sample_batch(images, cfg.patch, cfg.batch, &mut rng)?;
        let mut tape = Tape::new();
        let gb = g.bind(&mut tape, true);
        let loss = obj.loss_g(&mut tape, g, &gb, &[&batch])?;
        let value = tape.scalar(loss).as_f64();
        check_finite(value, "g pretraining loss", step)?;
        apply(&tape, loss, &gb, g, &mut adam)?;
        log(&GStep { step, loss: value });
    }
    Ok(())
}

fn check_dataset<T: Scalar>(images: &[Tensor<T>], patch: usize, divisor: usize) -> Result<()> {
    if images.is_empty() {
        return Err(Error::invalid("training needs at least one image"));
    }
    for img in images {
        let (h, w) = img.dims2()?;
        if h % divisor != 0 || w % divisor != 0 || h < patch || w < patch {
            return Err(Error::shape(format!(
                "training image {h}x{w} must cover patch {patch} with extents divisible by {divisor}"
            )));
        }
    }
    Ok(())
}

/// Logged values of one training step; absent terms are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_ss: f64,
    pub l_f: Option<f64>,
    pub l_sinc: Option<f64>,
    pub total: f64,
    pub g_loss: Option<f64>,
}

impl StepRecord {
    pub const TSV_HEADER: &'static str = "step\tl_ss\tl_f\tl_sinc\ttotal\tg_loss";

    pub fn tsv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{}\t{:?}\t{}\t{}\t{:?}\t{}",
            self.step,
            self.l_ss,
            opt(self.l_f),
            opt(self.l_sinc),
            self.total,
            opt(self.g_loss)
        )
    }

    pub fn parse_tsv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Config(format!("bad train log row {line:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(StepRecord {
            step: f[0].parse().map_err(|_| bad())?,
            l_ss: num(f[1])?,
            l_f: opt(f[2])?,
            l_sinc: opt(f[3])?,
            total: num(f[4])?,
            g_loss: opt(f[5])?,
        })
    }

    /// `|l_ss + beta l_f + gamma l_sinc - total|`.
    pub fn imbalance(&self, loss: &LossConfig) -> f64 {
        let sum = self.l_ss
            + loss.beta * self.l_f.unwrap_or(0.0)
            + loss.gamma * self.l_sinc.unwrap_or(0.0);
        (sum - self.total).abs()
    }
}

/// Per-step callback of [`train_usrgr`].
pub type Observer<'a, T> = dyn FnMut(&StepRecord, &SrNet<T>, Option<&GNet<T>>) -> Result<()> + 'a;

/// Joint training of `f` (and online fine-tuning of `g` unless the Sinc term
/// is ablated). `observe` runs after every step with the updated networks.
/// A non-finite loss aborts before the offending update.
pub fn train_usrgr<T: Scalar>(
    images: &[Tensor<T>],
    f: &mut SrNet<T>,
    mut g: Option<&mut GNet<T>>,
    cfg: &TrainConfig,
    observe: &mut Observer<'_, T>,
) -> Result<()> {
    cfg.validate()?;
    check_dataset(images, cfg.patch, 4)?;
    let ablation = cfg.ablation();
    if !ablation.no_sinc && g.is_none() {
        return Err(Error::invalid("training with the Sinc term needs a pretrained g"));
    }
    let obj = Objective::new(cfg.loss.clone())?;
    let mut adam_f = Adam::new(cfg.adam())?;
    let mut adam_g = Adam::new(cfg.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 12));
    for step in 0..cfg.steps {
        let batch = sample_batch(images, cfg.patch, cfg.batch, &mut rng)?;
        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        let terms = obj.loss_total(&mut tape, f, &fb, g.as_deref(), &batch, ablation)?;
        check_finite(terms.total_value, "training loss", step)?;
        apply(&tape, terms.total, &fb, f, &mut adam_f)?;
        drop(tape);

        let mut g_loss = None;
        if let Some(g) = g.as_deref_mut().filter(|_| !ablation.no_sinc) {
            for _ in 0..cfg.g_finetune_per_step {
                let hr = f.infer(&batch)?;
                let mut tape = Tape::new();
                let gb = g.bind(&mut tape, true);
                let loss = obj.loss_g(&mut tape, g, &gb, &[&batch, &hr])?;
                let value = tape.scalar(loss).as_f64();
                check_finite(value, "g fine-tuning loss", step)?;
                apply(&tape, loss, &gb, g, &mut adam_g)?;
                g_loss = Some(value);
            }
        }
        let record = StepRecord {
            step,
            l_ss: terms.ss,
            l_f: terms.fid,
            l_sinc: terms.sinc,
            total: terms.total_value,
            g_loss,
        };
        observe(&record, f, g.as_deref())?;
    }
    Ok(())
}

/// Trains `f` with the self-supervision term only, feeding it `prepare`d
/// inputs: `L_d(f(prepare(d_fc(I))), I)`.
fn train_ss_with<T: Scalar>(
    images: &[Tensor<T>],
    f: &mut SrNet<T>,
    cfg: &TrainConfig,
    prepare: &dyn Fn(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<()> {
    check_dataset(images, cfg.patch, 4)?;
    let obj = Objective::new(cfg.loss.clone())?;
    let mut adam = Adam::new(cfg.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 12));
    for step in 0..cfg.steps {
        let batch = sample_batch(images, cfg.patch, cfg.batch, &mut rng)?;
        let input = prepare(&kspace::f_crop(&batch, UPSCALE)?)?;
        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        let x = tape.constant(input);
        let target = tape.constant(batch);
        let pred = f.forward(&mut tape, &fb, x)?;
        let loss = losses::l_d(&mut tape, pred, target, &obj.config)?;
        check_finite(tape.scalar(loss).as_f64(), "sr training loss", step)?;
        apply(&tape, loss, &fb, f, &mut adam)?;
    }
    Ok(())
}

/// Trains a de-Gibbs network on `(d_fc(I), d_cubic(I))` patch pairs.
pub fn train_degibbs<T: Scalar>(images: &[Tensor<T>], g: &mut GNet<T>, cfg: &TrainConfig) -> Result<()> {
    check_dataset(images, cfg.patch, 2)?;
    let obj = Objective::new(cfg.loss.clone())?;
    let mut adam = Adam::new(cfg.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 14));
    let half = cfg.patch / UPSCALE;
    for step in 0..cfg.g_pretrain_steps {
        let batch = sample_batch(images, cfg.patch, cfg.batch, &mut rng)?;
        let target = bicubic_resize(&batch, half, half)?;
        let mut tape = Tape::new();
        let gb = g.bind(&mut tape, true);
        let x = tape.constant(kspace::f_crop(&batch, UPSCALE)?);
        let t = tape.constant(target);
        let pred = g.forward(&mut tape, &gb, x)?;
        let loss = losses::l_d(&mut tape, pred, t, &obj.config)?;
        check_finite(tape.scalar(loss).as_f64(), "de-Gibbs training loss", step)?;
        apply(&tape, loss, &gb, g, &mut adam)?;
    }
    Ok(())
}

/// Separately trained de-Gibbs and SR networks, chained as `f(g(x))`.
#[derive(Clone, Debug)]
pub struct DegSr<T> {
    pub degibbs: GNet<T>,
    pub sr: SrNet<T>,
}

impl<T: Scalar> DegSr<T> {
    pub fn train(images: &[Tensor<T>], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.effective_model();
        let mut degibbs = GNet::new(&model, derive_seed(cfg.seed, 11))?;
        train_degibbs(images, &mut degibbs, cfg)?;
        let mut sr = SrNet::new(&model, derive_seed(cfg.seed, 10))?;
        let g = degibbs.clone();
        train_ss_with(images, &mut sr, cfg, &|x| g.infer(x))?;
        Ok(DegSr { degibbs, sr })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.sr.infer(&self.degibbs.infer(x)?)
    }
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

/// Applies `net` (`[B, 1, H, W]` batches) to one image after max
/// normalization, returning the output in the input's units.
pub fn infer_image<T: Scalar>(
    img: &Tensor<T>,
    net: &dyn Fn(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let (h, w) = img.dims2()?;
    if h % 2 != 0 || w % 2 != 0 || h < MIN_EXTENT || w < MIN_EXTENT {
        return Err(Error::shape(format!(
            "inference needs even extents >= {MIN_EXTENT}, got {h}x{w}"
        )));
    }
    let (x, stat) = normalize(img);
    let y = net(&x.reshape(&[1, 1, h, w])?)?;
    let (_, _, oh, ow) = y.dims4()?;
    Ok(denormalize(&y.reshape(&[oh, ow])?, stat))
}

/// Whole-image 2x super-resolution with `f`.
pub fn infer<T: Scalar>(f: &SrNet<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
    infer_image(img, &|x| f.infer(x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub fidelity_psnr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (0 for a single row).
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Aggregate { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub rows: Vec<EvalRow>,
    pub psnr: Option<Aggregate>,
    pub ssim: Option<Aggregate>,
    pub fidelity_psnr: Option<Aggregate>,
}

impl EvalReport {
    pub fn new(method: &str, dataset: &str, rows: Vec<EvalRow>) -> Self {
        let col = |get: fn(&EvalRow) -> Option<f64>| {
            Aggregate::of(&rows.iter().filter_map(get).collect::<Vec<_>>())
        };
        EvalReport {
            method: method.to_string(),
            dataset: dataset.to_string(),
            psnr: col(|r| r.psnr),
            ssim: col(|r| r.ssim),
            fidelity_psnr: col(|r| r.fidelity_psnr),
            rows,
        }
    }

    pub const TSV_HEADER: &'static str = "id\tpsnr\tssim\tfidelity_psnr";

    /// Tab-separated rows with `#` comment lines for labels and aggregates.
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut s = format!("# method\t{}\n# dataset\t{}\n", self.method, self.dataset);
        s.push_str(Self::TSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                r.id,
                opt(r.psnr),
                opt(r.ssim),
                opt(r.fidelity_psnr)
            );
        }
        for (name, get) in [
            ("mean", (|a: &Aggregate| a.mean) as fn(&Aggregate) -> f64),
            ("std", |a: &Aggregate| a.std),
        ] {
            let _ = writeln!(
                s,
                "# {name}\t{}\t{}\t{}",
                opt(self.psnr.as_ref().map(get)),
                opt(self.ssim.as_ref().map(get)),
                opt(self.fidelity_psnr.as_ref().map(get))
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.tsv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, body) in [("tsv", self.to_tsv()), ("json", self.to_json())] {
            let p = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Evaluates a 2x predictor on `(id, image)` pairs. In synthetic mode the
/// input is `f_crop(image)` and the image is the reference; in real mode the
/// rows carry no metrics. Returns the report and the predictions.
pub fn evaluate<T: Scalar>(
    predict: &dyn Fn(&Tensor<T>) -> Result<Tensor<T>>,
    samples: &[(String, Tensor<T>)],
    mode: EvalMode,
    method: &str,
    dataset: &str,
) -> Result<(EvalReport, Vec<Tensor<T>>)> {
    let ssim_cfg = SsimConfig::default();
    let mut rows = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    for (id, img) in samples {
        let (input, reference) = make_eval_pair(img, mode)?;
        let pred = predict(&input)?;
        let (ih, iw) = input.dims2()?;
        if pred.shape() != [UPSCALE * ih, UPSCALE * iw] {
            return Err(Error::shape(format!(
                "{id}: predictor returned {:?} for a {ih}x{iw} input",
                pred.shape()
            )));
        }
        let row = match reference {
            Some(r) => EvalRow {
                id: id.clone(),
                psnr: Some(psnr(&pred, &r)?),
                ssim: Some(ssim(&pred, &r, &ssim_cfg)?),
                fidelity_psnr: Some(psnr(&kspace::f_crop(&pred, UPSCALE)?, &input)?),
            },
            None => EvalRow {
                id: id.clone(),
                psnr: None,
                ssim: None,
                fidelity_psnr: None,
            },
        };
        rows.push(row);
        preds.push(pred);
    }
    Ok((EvalReport::new(method, dataset, rows), preds))
}

/// 2x bicubic upscaling.
pub fn bicubic_up<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = x.dims2()?;
    bicubic_resize(x, UPSCALE * h, UPSCALE * w)
}

pub fn run_baseline_bicubic<T: Scalar>(
    samples: &[(String, Tensor<T>)],
    dataset: &str,
) -> Result<EvalReport> {
    Ok(evaluate(&bicubic_up, samples, EvalMode::Synthetic, "bicubic", dataset)?.0)
}

pub fn run_deg_sr<T: Scalar>(
    train: &[Tensor<T>],
    samples: &[(String, Tensor<T>)],
    cfg: &TrainConfig,
    dataset: &str,
) -> Result<EvalReport> {
    let model = DegSr::train(train, cfg)?;
    let predict = |x: &Tensor<T>| infer_image(x, &|b| model.infer(b));
    Ok(evaluate(&predict, samples, EvalMode::Synthetic, "deG+SR", dataset)?.0)
}

// ---------------------------------------------------------------------------
// Desk-scale experiments
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Bicubic,
    Usrgr,
    NoFid,
    NoSinc,
    Plain,
    DegSr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bicubic,
        Method::Usrgr,
        Method::NoFid,
        Method::NoSinc,
        Method::Plain,
        Method::DegSr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Bicubic => "bicubic",
            Method::Usrgr => "uSRGR",
            Method::NoFid => "uSRGR-fid",
            Method::NoSinc => "uSRGR-sinc",
            Method::Plain => "uSRGR-1Dconv",
            Method::DegSr => "deG+SR",
        }
    }

    fn flags(self) -> Flags {
        Flags {
            no_fid: self == Method::NoFid,
            no_sinc: self == Method::NoSinc,
            plain_blocks: self == Method::Plain,
        }
    }
}

/// Trains (where needed) and evaluates one method on one seed. The `g`
/// pretraining result is cached in `pretrained` and shared between methods
/// that use the same model configuration.
pub fn run_method<T: Scalar>(
    method: Method,
    train: &[Tensor<T>],
    test: &[(String, Tensor<T>)],
    base: &TrainConfig,
    pretrained: &mut Vec<(ModelConfig, GNet<T>)>,
) -> Result<EvalReport> {
    let cfg = TrainConfig {
        flags: method.flags(),
        ..base.clone()
    };
    let dataset = "test";
    match method {
        Method::Bicubic => run_baseline_bicubic(test, dataset),
        Method::DegSr => run_deg_sr(train, test, &cfg, dataset),
        _ => {
            let model = cfg.effective_model();
            let mut f = SrNet::new(&model, derive_seed(cfg.seed, 10))?;
            let mut g = None;
            if !cfg.flags.no_sinc {
                let cached = pretrained.iter().find(|(m, _)| *m == model).map(|(_, g)| g.clone());
                let g0 = match cached {
                    Some(g) => g,
                    None => {
                        let mut g = GNet::new(&model, derive_seed(cfg.seed, 11))?;
                        pretrain_g(train, &mut g, &cfg, &mut |_| {})?;
                        pretrained.push((model.clone(), g.clone()));
                        g
                    }
                };
                g = Some(g0);
            }
            train_usrgr(train, &mut f, g.as_mut(), &cfg, &mut |_, _, _| Ok(()))?;
            let predict = |x: &Tensor<T>| infer(&f, x);
            Ok(evaluate(&predict, test, EvalMode::Synthetic, method.label(), dataset)?.0)
        }
    }
}
