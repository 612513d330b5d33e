//! Fourier-domain degradation operators.
//!
//! Conventions used throughout:
//!
//! * The 2D DFT is unitary (`1/sqrt(HW)` in both directions).
//! * [`ComplexGrid`] stores spectra in centered order: DC sits at
//!   `(H/2, W/2)`.
//! * Cropping an even-sized block keeps shifted indices `[-n/2, n/2)` per axis
//!   and then zeroes the unpaired `-n/2` line, so the cropped spectrum is
//!   Hermitian and the low-resolution image is exactly real.
//! * The cropped image is rescaled by `sqrt(hw / HW)`, which preserves the
//!   image mean.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unitary 2D FFT on a row-major `h x w` buffer (natural order).
fn fft2_in_place(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let row_fft = plan(w, inverse);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = plan(h, inverse);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= norm;
    }
}

/// 2D complex spectrum in centered order (DC at `(height/2, width/2)`).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn shift(data: &[Complex64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    // fftshift moves index i to (i + n/2) mod n; ifftshift undoes it.
    let (sh, sw) = if inverse {
        (h - h / 2, w - w / 2)
    } else {
        (h / 2, w / 2)
    };
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for y in 0..h {
        for x in 0..w {
            out[((y + sh) % h) * w + (x + sw) % w] = data[y * w + x];
        }
    }
    out
}

/// Unitary 2D DFT of a real image, returned in centered order.
pub fn dft2<T: Scalar>(img: &Tensor<T>) -> Result<ComplexGrid> {
    let (h, w) = img.dims2()?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("dft2 needs extents >= 2, got {h}x{w}")));
    }
    let mut buf: Vec<Complex64> = img
        .data()
        .iter()
        .map(|&v| Complex64::new(v.as_f64(), 0.0))
        .collect();
    fft2_in_place(&mut buf, h, w, false);
    Ok(ComplexGrid {
        height: h,
        width: w,
        data: shift(&buf, h, w, false),
    })
}

/// Inverse of [`dft2`]. Returns the real part and the largest discarded
/// imaginary magnitude.
pub fn idft2<T: Scalar>(grid: &ComplexGrid) -> Result<(Tensor<T>, f64)> {
    let (h, w) = (grid.height, grid.width);
    if grid.data.len() != h * w {
        return Err(Error::shape("complex grid data does not match its extents"));
    }
    let mut buf = shift(&grid.data, h, w, true);
    fft2_in_place(&mut buf, h, w, true);
    let max_imag = buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    let img = Tensor::new(&[h, w], buf.iter().map(|c| T::from_f64(c.re)).collect())?;
    Ok((img, max_imag))
}

fn check_crop(h: usize, w: usize, factor: usize) -> Result<()> {
    if factor < 2 {
        return Err(Error::invalid(format!("downsampling factor must be >= 2, got {factor}")));
    }
    if !h.is_multiple_of(2 * factor) || !w.is_multiple_of(2 * factor) {
        return Err(Error::shape(format!(
            "f_crop: extents {h}x{w} must be divisible by {}",
            2 * factor
        )));
    }
    Ok(())
}

/// Natural-order index into an `n`-point grid of signed frequency `k`.
fn wrap(k: isize, n: usize) -> usize {
    k.rem_euclid(n as isize) as usize
}

/// Signed frequency of natural-order index `i` of the small grid, or `None`
/// for the zeroed `-n/2` line.
fn kept_frequency(i: usize, n: usize) -> Option<isize> {
    let k = if i < n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    };
    (k != -(n as isize / 2)).then_some(k)
}

fn f_crop_plane(src: &[f64], h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (sh, sw) = (h / factor, w / factor);
    let mut big: Vec<Complex64> = src.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut big, h, w, false);
    let mut small = vec![Complex64::new(0.0, 0.0); sh * sw];
    for p in 0..sh {
        let Some(kp) = kept_frequency(p, sh) else { continue };
        for q in 0..sw {
            let Some(kq) = kept_frequency(q, sw) else { continue };
            small[p * sw + q] = big[wrap(kp, h) * w + wrap(kq, w)];
        }
    }
    fft2_in_place(&mut small, sh, sw, true);
    let scale = ((sh * sw) as f64 / (h * w) as f64).sqrt();
    small.iter().map(|c| c.re * scale).collect()
}

fn f_crop_adjoint_plane(src: &[f64], sh: usize, sw: usize, factor: usize) -> Vec<f64> {
    let (h, w) = (sh * factor, sw * factor);
    let mut small: Vec<Complex64> = src.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut small, sh, sw, false);
    let mut big = vec![Complex64::new(0.0, 0.0); h * w];
    for p in 0..sh {
        let Some(kp) = kept_frequency(p, sh) else { continue };
        for q in 0..sw {
            let Some(kq) = kept_frequency(q, sw) else { continue };
            big[wrap(kp, h) * w + wrap(kq, w)] = small[p * sw + q];
        }
    }
    fft2_in_place(&mut big, h, w, true);
    let scale = ((sh * sw) as f64 / (h * w) as f64).sqrt();
    big.iter().map(|c| c.re * scale).collect()
}

/// Applies `f` to every trailing `h x w` plane of a rank-2 or rank-4 tensor.
fn map_planes<T: Scalar>(
    x: &Tensor<T>,
    out_hw: (usize, usize),
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Tensor<T>> {
    let shape = x.shape();
    let (h, w) = match shape.len() {
        2 | 4 => (shape[shape.len() - 2], shape[shape.len() - 1]),
        _ => {
            return Err(Error::shape(format!(
                "expected an image or NCHW batch, got shape {shape:?}"
            )))
        }
    };
    let mut out = Vec::with_capacity(x.numel() / (h * w) * out_hw.0 * out_hw.1);
    let mut plane = vec![0.0f64; h * w];
    for chunk in x.data().chunks_exact(h * w) {
        for (d, s) in plane.iter_mut().zip(chunk) {
            *d = s.as_f64();
        }
        out.extend(f(&plane).into_iter().map(T::from_f64));
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = out_hw.0;
    out_shape[n - 1] = out_hw.1;
    Tensor::new(&out_shape, out)
}

fn plane_extents<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let s = x.shape();
    match s.len() {
        2 | 4 => Ok((s[s.len() - 2], s[s.len() - 1])),
        _ => Err(Error::shape(format!(
            "expected an image or NCHW batch, got shape {s:?}"
        ))),
    }
}

/// k-space center-crop downsampling `d_fc`.
///
/// Accepts a single `[H, W]` image or an `[B, C, H, W]` batch (every plane is
/// cropped independently).
pub fn f_crop<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w) = plane_extents(x)?;
    check_crop(h, w, factor)?;
    map_planes(x, (h / factor, w / factor), |p| f_crop_plane(p, h, w, factor))
}

/// Adjoint of [`f_crop`]: maps a low-resolution plane back to `factor` times
/// its extents.
pub fn f_crop_adjoint<T: Scalar>(y: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (sh, sw) = plane_extents(y)?;
    check_crop(sh * factor, sw * factor, factor)?;
    map_planes(y, (sh * factor, sw * factor), |p| {
        f_crop_adjoint_plane(p, sh, sw, factor)
    })
}

/// Finite, even-symmetric low-pass kernel for factor-`f` decimation.
#[derive(Clone, Debug, PartialEq)]
pub struct SincKernel {
    values: Vec<f64>,
    factor: usize,
    period: Option<usize>,
}

impl SincKernel {
    pub fn taps(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn period(&self) -> Option<usize> {
        self.period
    }

    fn radius(&self) -> usize {
        (self.values.len() - 1) / 2
    }
}

/// Raw (unnormalized) aperiodic kernel value `sin(pi t / f) / (pi t)`.
pub fn sinc_tap(t: isize, factor: usize) -> f64 {
    if t == 0 {
        1.0 / factor as f64
    } else {
        let t = t as f64;
        (PI * t / factor as f64).sin() / (PI * t)
    }
}

/// Raw periodic (Dirichlet) tap realizing the f-crop passband on a
/// `period`-point grid.
pub fn dirichlet_tap(t: isize, factor: usize, period: usize) -> f64 {
    let kmax = (period / (2 * factor)) as isize - 1;
    let mut acc = 1.0;
    for k in 1..=kmax {
        acc += 2.0 * (2.0 * PI * k as f64 * t as f64 / period as f64).cos();
    }
    acc / period as f64
}

/// Builds a half-band (for `factor = 2`) Sinc kernel with `taps` coefficients,
/// renormalized to unit DC gain.
///
/// With `period = Some(P)` the taps sample the Dirichlet kernel that exactly
/// reproduces [`f_crop`] on a `P`-point axis. `taps = P + 1` covers a full
/// period; the two end taps then alias onto the same pixel and share its
/// weight.
pub fn build_sinc_kernel(taps: usize, factor: usize, period: Option<usize>) -> Result<SincKernel> {
    if taps.is_multiple_of(2) {
        return Err(Error::invalid(format!("sinc kernel taps must be odd, got {taps}")));
    }
    if factor < 2 {
        return Err(Error::invalid(format!("downsampling factor must be >= 2, got {factor}")));
    }
    let r = (taps / 2) as isize;
    let raw: Vec<f64> = match period {
        None => (-r..=r).map(|t| sinc_tap(t, factor)).collect(),
        Some(p) => {
            if p % (2 * factor) != 0 {
                return Err(Error::invalid(format!(
                    "kernel period {p} must be divisible by {}",
                    2 * factor
                )));
            }
            if taps > p + 1 {
                return Err(Error::invalid(format!(
                    "periodic kernel with {taps} taps exceeds one period of {p}"
                )));
            }
            (-r..=r)
                .map(|t| {
                    let v = dirichlet_tap(t, factor, p);
                    if t.unsigned_abs() * 2 == p {
                        0.5 * v
                    } else {
                        v
                    }
                })
                .collect()
        }
    };
    let sum: f64 = raw.iter().sum();
    Ok(SincKernel {
        values: raw.into_iter().map(|v| v / sum).collect(),
        factor,
        period,
    })
}

fn check_sinc(h: usize, w: usize, kernel: &SincKernel) -> Result<()> {
    let f = kernel.factor;
    if !h.is_multiple_of(f) || !w.is_multiple_of(f) {
        return Err(Error::shape(format!(
            "sinc_downsample: extents {h}x{w} not divisible by {f}"
        )));
    }
    if kernel.taps() > h.min(w) + 1 {
        return Err(Error::invalid(format!(
            "sinc kernel with {} taps exceeds image extent {}",
            kernel.taps(),
            h.min(w)
        )));
    }
    Ok(())
}

fn sinc_plane(src: &[f64], h: usize, w: usize, k: &SincKernel) -> Vec<f64> {
    let f = k.factor;
    let r = k.radius() as isize;
    let (oh, ow) = (h / f, w / f);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for j in 0..ow {
            let c = (f * j) as isize - r;
            tmp[y * ow + j] = k
                .values
                .iter()
                .enumerate()
                .map(|(t, &kv)| kv * row[wrap(c + t as isize, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        let c = (f * i) as isize - r;
        for (t, &kv) in k.values.iter().enumerate() {
            let line = &tmp[wrap(c + t as isize, h) * ow..][..ow];
            for (o, &v) in out[i * ow..(i + 1) * ow].iter_mut().zip(line) {
                *o += kv * v;
            }
        }
    }
    out
}

fn sinc_adjoint_plane(src: &[f64], oh: usize, ow: usize, k: &SincKernel) -> Vec<f64> {
    let f = k.factor;
    let r = k.radius() as isize;
    let (h, w) = (oh * f, ow * f);
    let mut tmp = vec![0.0; h * ow];
    for i in 0..oh {
        let c = (f * i) as isize - r;
        for (t, &kv) in k.values.iter().enumerate() {
            let y = wrap(c + t as isize, h);
            for j in 0..ow {
                tmp[y * ow + j] += kv * src[i * ow + j];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for j in 0..ow {
            let c = (f * j) as isize - r;
            let g = tmp[y * ow + j];
            for (t, &kv) in k.values.iter().enumerate() {
                out[y * w + wrap(c + t as isize, w)] += kv * g;
            }
        }
    }
    out
}

/// Separable circular convolution with `kernel` along width then height,
/// followed by decimation keeping indices `0, f, 2f, ...` per axis (`d_sinc`).
pub fn sinc_downsample<T: Scalar>(x: &Tensor<T>, kernel: &SincKernel) -> Result<Tensor<T>> {
    let (h, w) = plane_extents(x)?;
    check_sinc(h, w, kernel)?;
    let f = kernel.factor;
    map_planes(x, (h / f, w / f), |p| sinc_plane(p, h, w, kernel))
}

/// Adjoint of [`sinc_downsample`].
pub fn sinc_downsample_adjoint<T: Scalar>(y: &Tensor<T>, kernel: &SincKernel) -> Result<Tensor<T>> {
    let (oh, ow) = plane_extents(y)?;
    let f = kernel.factor;
    check_sinc(oh * f, ow * f, kernel)?;
    map_planes(y, (oh * f, ow * f), |p| sinc_adjoint_plane(p, oh, ow, kernel))
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-index source taps and weights for resampling `n_in -> n_out`
/// with half-pixel aligned grids. Downscaling widens the kernel (antialiasing).
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    let stretch = scale.min(1.0);
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|i| {
                    let wgt = keys((center - i as f64) * stretch);
                    (wgt != 0.0).then(|| (i.clamp(0, n_in as isize - 1) as usize, wgt))
                })
                .collect();
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= sum;
            }
            taps
        })
        .collect()
}

/// Separable bicubic resampling (Keys, `a = -0.5`, edge clamped).
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bicubic output extents must be positive"));
    }
    let (h, w) = plane_extents(x)?;
    let tx = cubic_taps(w, out_w);
    let ty = cubic_taps(h, out_h);
    map_planes(x, (out_h, out_w), |p| {
        let mut tmp = vec![0.0; h * out_w];
        for y in 0..h {
            for (j, taps) in tx.iter().enumerate() {
                tmp[y * out_w + j] = taps.iter().map(|&(i, wt)| wt * p[y * w + i]).sum();
            }
        }
        let mut out = vec![0.0; out_h * out_w];
        for (i, taps) in ty.iter().enumerate() {
            for &(y, wt) in taps {
                for j in 0..out_w {
                    out[i * out_w + j] += wt * tmp[y * out_w + j];
                }
            }
        }
        out
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeConfig {
    pub factor: usize,
    pub noise_sigma: f64,
    pub sinc_taps: usize,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            factor: 2,
            noise_sigma: 0.0,
            sinc_taps: 31,
            seed: 0,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor < 2 {
            return Err(Error::invalid(format!("factor must be >= 2, got {}", self.factor)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.sinc_taps.is_multiple_of(2) {
            return Err(Error::invalid(format!("sinc taps must be odd, got {}", self.sinc_taps)));
        }
        Ok(())
    }
}

/// `I_LR = d_fc(I_HR) + eps` with seeded Gaussian `eps`.
pub fn degrade<T: Scalar>(img: &Tensor<T>, cfg: &DegradeConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mut out = f_crop(img, cfg.factor)?;
    if cfg.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
        for v in out.data_mut() {
            *v += T::from_f64(normal.sample(&mut rng));
        }
    }
    Ok(out)
}
