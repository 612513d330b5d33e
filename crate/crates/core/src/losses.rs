//! Image distance `L_d` and the training objectives.
//!
//! * self-supervision: `L_ss = mean L_d(f(d_fc(I_LR)), I_LR)`
//! * fidelity: `L_f = mean L_d(d_fc(f(I_LR)), I_LR)`
//! * auxiliary: `L_g = mean L_d(g(d_fc(I)), d_sinc(I))`
//! * Sinc hinge: `L_sinc = mean max(L_d(d_sinc(f(I)), g(I)), a)` over `I` drawn
//!   from both `I_LR` and `d_fc(I_LR)`
//! * total: `L_ss + beta L_f + gamma L_sinc`
//!
//! Targets produced by `g` or by `d_sinc` on data are constants: no gradient
//! flows into them.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kspace::{self, build_sinc_kernel, SincKernel};
use crate::models::{Bound, GNet, Network, SrNet, UPSCALE};
use crate::ops::gaussian_window;
use crate::tensor::{Scalar, Tensor};

/// Conventional five-scale MS-SSIM weights (finest first).
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Per-scale similarity values are floored here before exponentiation so
/// non-positive terms cannot produce NaN.
const SIMILARITY_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MsSsimConfig {
    pub scales: usize,
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Maps each per-scale term `s` in `[-1, 1]` to `(s + 1) / 2` before
    /// exponentiation, so anti-correlated scales keep a gradient.
    pub normalize_terms: bool,
}

impl MsSsimConfig {
    /// The first `scales` conventional weights, renormalized to sum to 1.
    pub fn with_scales(scales: usize, window: usize) -> Result<Self> {
        if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
            return Err(Error::invalid(format!(
                "ms-ssim scales must be in 1..=5, got {scales}"
            )));
        }
        let head = &MS_SSIM_WEIGHTS[..scales];
        let s: f64 = head.iter().sum();
        Ok(MsSsimConfig {
            scales,
            weights: head.iter().map(|w| w / s).collect(),
            window,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            normalize_terms: false,
        })
    }

    /// Smallest image extent the configuration accepts.
    pub fn min_extent(&self) -> usize {
        self.window << (self.scales - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.scales || self.scales == 0 {
            return Err(Error::invalid(format!(
                "ms-ssim needs {} weights, got {}",
                self.scales,
                self.weights.len()
            )));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("ms-ssim weights sum to {s}, not 1")));
        }
        if self.window.is_multiple_of(2) || self.sigma <= 0.0 || self.dynamic_range <= 0.0 {
            return Err(Error::invalid(
                "ms-ssim window must be odd with positive sigma and dynamic range",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of `1 - MS-SSIM` in `L_d`; `1 - alpha` goes to L1.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Hinge floor `a` of the Sinc constraint.
    pub hinge_floor: f64,
    pub ms_ssim: MsSsimConfig,
    pub sinc_taps: usize,
}

impl LossConfig {
    /// 64-pixel patches: the smallest compared tensors are 32x32.
    pub fn desk() -> Self {
        LossConfig {
            alpha: 0.84,
            beta: 1.0,
            gamma: 0.5,
            hinge_floor: 0.001,
            ms_ssim: MsSsimConfig::with_scales(3, 7).expect("valid scales"),
            sinc_taps: 31,
        }
    }

    /// 160-pixel patches.
    pub fn full() -> Self {
        LossConfig {
            ms_ssim: MsSsimConfig::with_scales(5, 5).expect("valid scales"),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.beta < 0.0 || self.gamma < 0.0 || self.hinge_floor < 0.0 {
            return Err(Error::invalid("beta, gamma and the hinge floor must be >= 0"));
        }
        self.ms_ssim.validate()
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn check_pair<T: Scalar>(tape: &Tape<T>, x: Var, y: Var) -> Result<()> {
    tape.value(x).expect_same_shape(tape.value(y))?;
    tape.value(x).dims4()?;
    Ok(())
}

/// Mean absolute difference per batch item, `[B]`.
pub fn l1_items<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    check_pair(tape, x, y)?;
    let d = tape.sub(x, y)?;
    let a = tape.abs(d);
    tape.mean_per_item(a)
}

/// Mean absolute difference over all elements.
pub fn l1<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    tape.value(x).expect_same_shape(tape.value(y))?;
    let d = tape.sub(x, y)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// MS-SSIM per batch item, `[B]`, on `[B, C, H, W]` inputs.
pub fn ms_ssim_items<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    y: Var,
    cfg: &MsSsimConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_pair(tape, x, y)?;
    let (_, _, h, w) = tape.value(x).dims4()?;
    let need = cfg.min_extent();
    if h < need || w < need {
        return Err(Error::shape(format!(
            "ms-ssim with {} scales and window {} needs extents >= {need}, got {h}x{w}",
            cfg.scales, cfg.window
        )));
    }
    let window: Arc<[f64]> = gaussian_window(cfg.window, cfg.sigma)?.into();
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let (mut x, mut y) = (x, y);
    let mut product: Option<Var> = None;
    for (j, &weight) in cfg.weights.iter().enumerate() {
        let last = j + 1 == cfg.scales;
        let mu_x = tape.blur_valid(x, &window)?;
        let mu_y = tape.blur_valid(y, &window)?;
        let mu_xx = tape.mul(mu_x, mu_x)?;
        let mu_yy = tape.mul(mu_y, mu_y)?;
        let mu_xy = tape.mul(mu_x, mu_y)?;
        let xx = tape.mul(x, x)?;
        let yy = tape.mul(y, y)?;
        let xy = tape.mul(x, y)?;
        let e_xx = tape.blur_valid(xx, &window)?;
        let e_yy = tape.blur_valid(yy, &window)?;
        let e_xy = tape.blur_valid(xy, &window)?;
        let s_xx = tape.sub(e_xx, mu_xx)?;
        let s_yy = tape.sub(e_yy, mu_yy)?;
        let s_xy = tape.sub(e_xy, mu_xy)?;

        let cs_num = tape.scale(s_xy, 2.0);
        let cs_num = tape.add_scalar(cs_num, c2);
        let cs_den = tape.add(s_xx, s_yy)?;
        let cs_den = tape.add_scalar(cs_den, c2);
        let mut map = tape.div(cs_num, cs_den)?;
        if last {
            let l_num = tape.scale(mu_xy, 2.0);
            let l_num = tape.add_scalar(l_num, c1);
            let l_den = tape.add(mu_xx, mu_yy)?;
            let l_den = tape.add_scalar(l_den, c1);
            let lum = tape.div(l_num, l_den)?;
            // a negative luminance times a negative cs would score as similar
            let lum = tape.clamp_min(lum, 0.0);
            map = tape.mul(lum, map)?;
        }
        let mut v = tape.mean_per_item(map)?;
        if cfg.normalize_terms {
            v = tape.scale(v, 0.5);
            v = tape.add_scalar(v, 0.5);
        }
        let v = tape.clamp_min(v, SIMILARITY_FLOOR);
        let v = tape.powf(v, weight);
        product = Some(match product {
            None => v,
            Some(p) => tape.mul(p, v)?,
        });
        if !last {
            x = tape.avg_pool2(x)?;
            y = tape.avg_pool2(y)?;
        }
    }
    Ok(product.expect("at least one scale"))
}

/// Mean MS-SSIM over the batch.
pub fn ms_ssim<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var, cfg: &MsSsimConfig) -> Result<Var> {
    let items = ms_ssim_items(tape, x, y, cfg)?;
    Ok(tape.mean(items))
}

/// `L_d` per batch item: `alpha (1 - MS-SSIM) + (1 - alpha) L1`.
pub fn l_d_items<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    if cfg.alpha == 0.0 {
        return l1_items(tape, x, y);
    }
    let ms = ms_ssim_items(tape, x, y, &cfg.ms_ssim)?;
    let dissim = tape.scale(ms, -1.0);
    let dissim = tape.add_scalar(dissim, 1.0);
    if cfg.alpha == 1.0 {
        return Ok(dissim);
    }
    let l1 = l1_items(tape, x, y)?;
    let a = tape.scale(dissim, cfg.alpha);
    let b = tape.scale(l1, 1.0 - cfg.alpha);
    tape.add(a, b)
}

/// Batch-mean `L_d`.
pub fn l_d<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    let items = l_d_items(tape, x, y, cfg)?;
    Ok(tape.mean(items))
}

/// Evaluates `L_d` on plain tensors (rank 2 images or NCHW batches).
pub fn l_d_value<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let (xv, yv) = (tape.constant(as_batch(x)?), tape.constant(as_batch(y)?));
    let v = l_d(&mut tape, xv, yv, cfg)?;
    Ok(tape.scalar(v).as_f64())
}

/// Evaluates MS-SSIM on plain tensors.
pub fn ms_ssim_value<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, cfg: &MsSsimConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let (xv, yv) = (tape.constant(as_batch(x)?), tape.constant(as_batch(y)?));
    let v = ms_ssim(&mut tape, xv, yv, cfg)?;
    Ok(tape.scalar(v).as_f64())
}

/// Views a rank-2 image as a `[1, 1, H, W]` batch; NCHW passes through.
pub fn as_batch<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    match x.rank() {
        2 => {
            let (h, w) = x.dims2()?;
            x.clone().reshape(&[1, 1, h, w])
        }
        4 => Ok(x.clone()),
        _ => Err(Error::shape(format!(
            "expected an image or NCHW batch, got {:?}",
            x.shape()
        ))),
    }
}

/// Which terms of the total objective are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_fid: bool,
    pub no_sinc: bool,
}

/// Values of the objective terms after one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub total: Var,
    pub ss: f64,
    pub fid: Option<f64>,
    pub sinc: Option<f64>,
    pub total_value: f64,
}

/// Loss configuration plus the prepared Sinc kernel.
#[derive(Clone, Debug)]
pub struct Objective {
    pub config: LossConfig,
    pub kernel: Arc<SincKernel>,
}

impl Objective {
    pub fn new(config: LossConfig) -> Result<Self> {
        config.validate()?;
        let kernel = Arc::new(build_sinc_kernel(config.sinc_taps, UPSCALE, None)?);
        Ok(Objective { config, kernel })
    }

    /// Uses `kernel` for `d_sinc` instead of the aperiodic default.
    pub fn with_kernel(config: LossConfig, kernel: SincKernel) -> Result<Self> {
        config.validate()?;
        Ok(Objective {
            config,
            kernel: Arc::new(kernel),
        })
    }

    fn check_batch<T: Scalar>(batch: &Tensor<T>, divisor: usize) -> Result<()> {
        let (_, _, h, w) = batch.dims4()?;
        if h % divisor != 0 || w % divisor != 0 {
            return Err(Error::shape(format!(
                "batch extents {h}x{w} must be divisible by {divisor}"
            )));
        }
        Ok(())
    }

    /// Self-supervision loss on a batch of `I_LR`.
    pub fn loss_ss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        f: &SrNet<T>,
        fb: &Bound,
        batch: &Tensor<T>,
    ) -> Result<Var> {
        Self::check_batch(batch, 4)?;
        let lower = tape.constant(kspace::f_crop(batch, UPSCALE)?);
        let target = tape.constant(batch.clone());
        let pred = f.forward(tape, fb, lower)?;
        l_d(tape, pred, target, &self.config)
    }

    /// Fidelity loss on a batch of `I_LR`.
    pub fn loss_fid<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        f: &SrNet<T>,
        fb: &Bound,
        batch: &Tensor<T>,
    ) -> Result<Var> {
        Self::check_batch(batch, 4)?;
        let input = tape.constant(batch.clone());
        let hr = f.forward(tape, fb, input)?;
        let down = tape.f_crop(hr, UPSCALE)?;
        l_d(tape, down, input, &self.config)
    }

    fn g_items<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        g: &GNet<T>,
        gb: &Bound,
        images: &Tensor<T>,
    ) -> Result<Var> {
        Self::check_batch(images, 2)?;
        let input = tape.constant(kspace::f_crop(images, UPSCALE)?);
        let target = tape.constant(kspace::sinc_downsample(images, &self.kernel)?);
        let pred = g.forward(tape, gb, input)?;
        l_d_items(tape, pred, target, &self.config)
    }

    /// Auxiliary loss over one or more batches (possibly of different
    /// extents); every image counts once in the mean.
    pub fn loss_g<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        g: &GNet<T>,
        gb: &Bound,
        batches: &[&Tensor<T>],
    ) -> Result<Var> {
        let mut items = Vec::with_capacity(batches.len());
        for b in batches {
            items.push(self.g_items(tape, g, gb, b)?);
        }
        let all = tape.concat(&items)?;
        Ok(tape.mean(all))
    }

    /// Per-item hinge `max(L_d(d_sinc(pred_hr), target), a)`.
    pub fn sinc_hinge_items<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        pred_hr: Var,
        target: Tensor<T>,
    ) -> Result<Var> {
        let down = tape.sinc_downsample(pred_hr, &self.kernel)?;
        let target = tape.constant(target);
        let inner = l_d_items(tape, down, target, &self.config)?;
        Ok(tape.clamp_min(inner, self.config.hinge_floor))
    }

    /// Sinc hinge loss over the given batches of `I` (callers pass both the
    /// `I_LR` and `I_LR'` populations).
    pub fn loss_sinc<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        f: &SrNet<T>,
        fb: &Bound,
        g: &GNet<T>,
        batches: &[&Tensor<T>],
    ) -> Result<Var> {
        let mut items = Vec::with_capacity(batches.len());
        for b in batches {
            let input = tape.constant((*b).clone());
            let hr = f.forward(tape, fb, input)?;
            items.push(self.sinc_hinge_items(tape, hr, g.infer(b)?)?);
        }
        let all = tape.concat(&items)?;
        Ok(tape.mean(all))
    }

    /// `L_ss + beta L_f + gamma L_sinc`, sharing the two forward passes of
    /// `f` between terms. `g` is required unless the Sinc term is ablated.
    pub fn loss_total<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        f: &SrNet<T>,
        fb: &Bound,
        g: Option<&GNet<T>>,
        batch: &Tensor<T>,
        ablation: Ablation,
    ) -> Result<LossTerms> {
        Self::check_batch(batch, 4)?;
        let cfg = &self.config;
        let use_fid = !ablation.no_fid && cfg.beta != 0.0;
        let use_sinc = !ablation.no_sinc && cfg.gamma != 0.0;
        let lower_t = kspace::f_crop(batch, UPSCALE)?;
        let lower = tape.constant(lower_t.clone());
        let input = tape.constant(batch.clone());

        let from_lower = f.forward(tape, fb, lower)?;
        let ss = l_d(tape, from_lower, input, cfg)?;
        let mut total = ss;

        let hr = if use_fid || use_sinc {
            Some(f.forward(tape, fb, input)?)
        } else {
            None
        };

        let mut fid_value = None;
        if use_fid {
            let down = tape.f_crop(hr.expect("hr computed"), UPSCALE)?;
            let fid = l_d(tape, down, input, cfg)?;
            fid_value = Some(tape.scalar(fid).as_f64());
            let weighted = tape.scale(fid, cfg.beta);
            total = tape.add(total, weighted)?;
        }

        let mut sinc_value = None;
        if use_sinc {
            let g = g.ok_or_else(|| Error::invalid("the Sinc term needs a g network"))?;
            let a = self.sinc_hinge_items(tape, hr.expect("hr computed"), g.infer(batch)?)?;
            let b = self.sinc_hinge_items(tape, from_lower, g.infer(&lower_t)?)?;
            let both = tape.concat(&[a, b])?;
            let sinc = tape.mean(both);
            sinc_value = Some(tape.scalar(sinc).as_f64());
            let weighted = tape.scale(sinc, cfg.gamma);
            total = tape.add(total, weighted)?;
        }

        Ok(LossTerms {
            total,
            ss: tape.scalar(ss).as_f64(),
            fid: fid_value,
            sinc: sinc_value,
            total_value: tape.scalar(total).as_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    fn tiny_cfg() -> LossConfig {
        LossConfig {
            ms_ssim: MsSsimConfig::with_scales(2, 3).unwrap(),
            sinc_taps: 7,
            ..LossConfig::desk()
        }
    }

    fn img(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        Tensor::from_fn(shape, |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn l1_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2]));
        let y = tape.constant(Tensor::from_f64(&[2], &[1.0, 3.0]).unwrap());
        let v = l1(&mut tape, x, y).unwrap();
        assert_eq!(tape.scalar(v), 2.0);
        let z = l1(&mut tape, y, y).unwrap();
        assert_eq!(tape.scalar(z), 0.0);
        let bad = tape.constant(Tensor::zeros(&[3]));
        assert!(l1(&mut tape, x, bad).is_err());
    }

    #[test]
    fn ms_ssim_identity_and_symmetry() {
        let cfg = MsSsimConfig::with_scales(3, 7).unwrap();
        let x = img(1, &[2, 1, 32, 32]);
        let y = img(2, &[2, 1, 32, 32]);
        assert_eq!(ms_ssim_value(&x, &x, &cfg).unwrap(), 1.0);
        let a = ms_ssim_value(&x, &y, &cfg).unwrap();
        let b = ms_ssim_value(&y, &x, &cfg).unwrap();
        assert!((a - b).abs() <= 1e-9);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn ms_ssim_rejects_small_inputs() {
        let cfg = MsSsimConfig::with_scales(3, 11).unwrap();
        let x = img(1, &[1, 1, 40, 40]);
        let err = ms_ssim_value(&x, &x, &cfg).unwrap_err();
        assert!(err.to_string().contains("44"), "{err}");
    }

    #[test]
    fn ms_ssim_of_inverted_halves_is_low() {
        let cfg = MsSsimConfig::with_scales(3, 11).unwrap();
        let x = Tensor::<f64>::from_fn(&[64, 64], |i| if i % 64 < 32 { 0.0 } else { 1.0 });
        let y = x.map(|v| 1.0 - v);
        assert!(ms_ssim_value(&x, &y, &cfg).unwrap() < 0.2);
    }

    #[test]
    fn negated_image_is_not_similar() {
        let cfg = MsSsimConfig::with_scales(1, 7).unwrap();
        let x = img(3, &[1, 1, 16, 16]).map(|v| v + 0.2);
        let y = x.map(|v| -v);
        assert!(ms_ssim_value(&x, &y, &cfg).unwrap() < 0.01);
    }

    #[test]
    fn ms_ssim_tolerates_small_offsets() {
        let cfg = MsSsimConfig::with_scales(3, 7).unwrap();
        let x = img(4, &[1, 1, 32, 32]);
        let y = x.map(|v| v + 0.01);
        assert!(ms_ssim_value(&x, &y, &cfg).unwrap() >= 0.99);
    }

    #[test]
    fn l_d_mixing_limits() {
        let x = img(5, &[1, 1, 24, 24]);
        let y = img(6, &[1, 1, 24, 24]);
        let base = tiny_cfg();
        assert_eq!(l_d_value(&x, &x, &base).unwrap(), 0.0);

        let l1_only = LossConfig { alpha: 0.0, ..base.clone() };
        let mean_abs = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / x.numel() as f64;
        assert!((l_d_value(&x, &y, &l1_only).unwrap() - mean_abs).abs() < 1e-15);

        let ms_only = LossConfig { alpha: 1.0, ..base.clone() };
        let ms = ms_ssim_value(&x, &y, &base.ms_ssim).unwrap();
        assert!((l_d_value(&x, &y, &ms_only).unwrap() - (1.0 - ms)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = LossConfig::desk();
        cfg.ms_ssim.weights = vec![0.5, 0.4, 0.05];
        assert!(cfg.validate().is_err());
        assert!(LossConfig { alpha: 1.5, ..LossConfig::desk() }.validate().is_err());
        assert!(LossConfig::full().validate().is_ok());
        let w = &LossConfig::desk().ms_ssim.weights;
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn nets() -> (SrNet<f64>, GNet<f64>) {
        let m = ModelConfig {
            n_feats: 4,
            n_blocks: 1,
            ..ModelConfig::desk()
        };
        (SrNet::new(&m, 1).unwrap(), GNet::new(&m, 2).unwrap())
    }

    #[test]
    fn zero_networks_give_positive_losses() {
        let m = ModelConfig {
            n_feats: 4,
            n_blocks: 1,
            ..ModelConfig::desk()
        };
        let f = SrNet::<f64>::zeros(&m).unwrap();
        let g = GNet::<f64>::zeros(&m).unwrap();
        let obj = Objective::new(tiny_cfg()).unwrap();
        let batch = img(3, &[2, 1, 24, 24]);
        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        let gb = g.bind(&mut tape, true);
        let ss = obj.loss_ss(&mut tape, &f, &fb, &batch).unwrap();
        let lg = obj.loss_g(&mut tape, &g, &gb, &[&batch]).unwrap();
        assert!(tape.scalar(ss) > 0.0);
        assert!(tape.scalar(lg) > 0.0);
    }

    #[test]
    fn loss_total_decomposes() {
        let (f, g) = nets();
        let obj = Objective::new(tiny_cfg()).unwrap();
        let batch = img(7, &[2, 1, 24, 24]);
        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        let terms = obj
            .loss_total(&mut tape, &f, &fb, Some(&g), &batch, Ablation::default())
            .unwrap();
        let cfg = &obj.config;
        let recomposed = terms.ss + cfg.beta * terms.fid.unwrap() + cfg.gamma * terms.sinc.unwrap();
        assert!((recomposed - terms.total_value).abs() <= 1e-9);

        // beta = gamma = 0 leaves the self-supervision term alone
        let obj0 = Objective::new(LossConfig { beta: 0.0, gamma: 0.0, ..tiny_cfg() }).unwrap();
        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        let t0 = obj0
            .loss_total(&mut tape, &f, &fb, None, &batch, Ablation::default())
            .unwrap();
        let ss = obj0.loss_ss(&mut tape, &f, &fb, &batch).unwrap();
        assert_eq!(t0.total_value, tape.scalar(ss));
        assert!(t0.fid.is_none() && t0.sinc.is_none());
    }

    #[test]
    fn loss_total_matches_separate_terms() {
        let (f, g) = nets();
        let obj = Objective::new(tiny_cfg()).unwrap();
        let batch = img(8, &[2, 1, 24, 24]);
        let lower = kspace::f_crop(&batch, 2).unwrap();
        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        let terms = obj
            .loss_total(&mut tape, &f, &fb, Some(&g), &batch, Ablation::default())
            .unwrap();
        let ss = obj.loss_ss(&mut tape, &f, &fb, &batch).unwrap();
        let fid = obj.loss_fid(&mut tape, &f, &fb, &batch).unwrap();
        let sinc = obj.loss_sinc(&mut tape, &f, &fb, &g, &[&batch, &lower]).unwrap();
        assert_eq!(terms.ss, tape.scalar(ss));
        assert_eq!(terms.fid.unwrap(), tape.scalar(fid));
        assert!((terms.sinc.unwrap() - tape.scalar(sinc)).abs() < 1e-15);
    }

    #[test]
    fn sinc_hinge_floor_and_passthrough() {
        let (f, _) = nets();
        let obj = Objective::new(tiny_cfg()).unwrap();
        let x = img(9, &[1, 1, 24, 24]);

        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let hr = f.forward(&mut tape, &fb, xv).unwrap();
        let target = kspace::sinc_downsample(tape.value(hr), &obj.kernel).unwrap();
        let h = obj.sinc_hinge_items(&mut tape, hr, target).unwrap();
        let loss = tape.mean(h);
        assert_eq!(tape.scalar(loss), 0.001);
        let grads = tape.backward(loss).unwrap();
        for v in &fb.vars {
            assert!(grads.get_or_zeros(*v, &[1]).data().iter().all(|&g| g == 0.0));
        }

        // an inactive hinge passes the inner value through
        let mut tape = Tape::<f64>::new();
        let v = tape.param(Tensor::from_f64(&[1], &[0.5]).unwrap());
        let c = tape.clamp_min(v, 0.001);
        assert_eq!(tape.scalar(c), 0.5);
    }

    #[test]
    fn losses_reject_bad_extents() {
        let (f, _) = nets();
        let obj = Objective::new(tiny_cfg()).unwrap();
        let mut tape = Tape::new();
        let fb = f.bind(&mut tape, true);
        assert!(obj.loss_ss(&mut tape, &f, &fb, &img(1, &[1, 1, 26, 26])).is_err());
    }
}
