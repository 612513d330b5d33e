//! PSNR and single-scale SSIM on normalized images.

use crate::error::{Error, Result};
use crate::ops::{self, gaussian_window};
use crate::tensor::{Scalar, Tensor};

/// Reported for identical images instead of infinity.
pub const PSNR_CEILING_DB: f64 = 99.0;

/// `10 log10(peak^2 / MSE)` with peak 1, capped at [`PSNR_CEILING_DB`].
pub fn psnr<T: Scalar>(x: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    x.expect_same_shape(reference)?;
    let mse = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / x.numel() as f64;
    if !mse.is_finite() {
        return Err(Error::invalid("non-finite values in psnr input"));
    }
    if mse == 0.0 {
        return Ok(PSNR_CEILING_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CEILING_DB))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

/// Mean SSIM over all window positions fully inside the image, with
/// Gaussian weighting and population (biased) moments.
pub fn ssim<T: Scalar>(x: &Tensor<T>, reference: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    x.expect_same_shape(reference)?;
    let (h, w) = x.dims2()?;
    if h < cfg.window || w < cfg.window {
        return Err(Error::shape(format!(
            "ssim window {} exceeds image {h}x{w}",
            cfg.window
        )));
    }
    let kernel = gaussian_window(cfg.window, cfg.sigma)?;
    let as4 = |t: &Tensor<T>| -> Result<Tensor<f64>> { t.cast::<f64>().reshape(&[1, 1, h, w]) };
    let (a, b) = (as4(x)?, as4(reference)?);
    let blur = |t: &Tensor<f64>| ops::blur_valid(t, &kernel);
    let mu_a = blur(&a)?;
    let mu_b = blur(&b)?;
    let e_aa = blur(&a.zip_map(&a, |p, q| p * q)?)?;
    let e_bb = blur(&b.zip_map(&b, |p, q| p * q)?)?;
    let e_ab = blur(&a.zip_map(&b, |p, q| p * q)?)?;
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let n = mu_a.numel();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let vaa = e_aa.data()[i] - ma * ma;
        let vbb = e_bb.data()[i] - mb * mb;
        let vab = e_ab.data()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
            / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
    }
    Ok(total / n as f64)
}
