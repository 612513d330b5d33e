//! Forward and backward kernels for the network and loss operations.
//!
//! The free functions at the top are the plain (non-recording) forms; the
//! autodiff tape in [`crate::autodiff`] wraps the same kernels.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Spatial axis of an NCHW tensor for 1D convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Height,
    Width,
}

impl Axis {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "height" | "h" => Ok(Axis::Height),
            "width" | "w" => Ok(Axis::Width),
            other => Err(Error::invalid(format!(
                "invalid axis {other:?}, expected height or width"
            ))),
        }
    }

    /// Kernel extents (kh, kw) of a length-`k` 1D kernel along this axis.
    pub fn kernel_extents(self, k: usize) -> (usize, usize) {
        match self {
            Axis::Height => (k, 1),
            Axis::Width => (1, k),
        }
    }
}

/// 2D cross-correlation with zero "same" padding and stride 1.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let geom = ConvGeom::conv2d(x, w, bias)?;
    Ok(conv_forward(x, w.data(), bias.data(), &geom))
}

/// 1D cross-correlation along one spatial axis, mixing channels.
pub fn conv1d_axis<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    axis: Axis,
) -> Result<Tensor<T>> {
    let geom = ConvGeom::conv1d(x, w, bias, axis)?;
    Ok(conv_forward(x, w.data(), bias.data(), &geom))
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Result<Tensor<T>> {
    check_slope(slope)?;
    let s = T::from_f64(slope);
    Ok(x.map(|v| if v >= T::zero() { v } else { v * s }))
}

pub(crate) fn check_slope(slope: f64) -> Result<()> {
    if !(slope > 0.0 && slope <= 1.0) {
        return Err(Error::invalid(format!(
            "leaky relu slope must lie in (0, 1], got {slope}"
        )));
    }
    Ok(())
}

/// `[B, C*r*r, H, W] -> [B, C, r*H, r*W]` with
/// `out[b, c, r*h + i, r*w + j] = in[b, c*r*r + i*r + j, h, w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c_in, h, w) = x.dims4()?;
    if r == 0 || c_in % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: {c_in} channels not divisible by r^2 = {}",
            r * r
        )));
    }
    let c = c_in / (r * r);
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    let (oh, ow) = (h * r, w * r);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let in_plane = ((bi * c_in) + ci * r * r + i * r + j) * h * w;
                    let out_plane = (bi * c + ci) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            out[out_plane + (r * y + i) * ow + r * xx + j] =
                                src[in_plane + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, oh, ow) = x.dims4()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: extents {oh}x{ow} not divisible by {r}"
        )));
    }
    let (h, w) = (oh / r, ow / r);
    let c_out = c * r * r;
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let out_plane = ((bi * c_out) + ci * r * r + i * r + j) * h * w;
                    let in_plane = (bi * c + ci) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            out[out_plane + y * w + xx] =
                                src[in_plane + (r * y + i) * ow + r * xx + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c_out, h, w], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Self> {
        let (batch, cin, h, wd) = x.dims4()?;
        let [cout, wcin, kh, kw] = *w.shape() else {
            return Err(Error::shape(format!(
                "conv2d weight must be [Cout, Cin, k, k], got {:?}",
                w.shape()
            )));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape(format!(
                "conv2d kernel must be square and odd, got {kh}x{kw}"
            )));
        }
        Self::finish(batch, cin, h, wd, cout, wcin, kh, kw, bias)
    }

    pub fn conv1d<T: Scalar>(
        x: &Tensor<T>,
        w: &Tensor<T>,
        bias: &Tensor<T>,
        axis: Axis,
    ) -> Result<Self> {
        let (batch, cin, h, wd) = x.dims4()?;
        let [cout, wcin, k] = *w.shape() else {
            return Err(Error::shape(format!(
                "conv1d weight must be [Cout, Cin, k], got {:?}",
                w.shape()
            )));
        };
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv1d kernel length {k} must be odd")));
        }
        let (kh, kw) = axis.kernel_extents(k);
        Self::finish(batch, cin, h, wd, cout, wcin, kh, kw, bias)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish<T: Scalar>(
        batch: usize,
        cin: usize,
        h: usize,
        w: usize,
        cout: usize,
        wcin: usize,
        kh: usize,
        kw: usize,
        bias: &Tensor<T>,
    ) -> Result<Self> {
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv input has {cin} channels but weight expects {wcin}"
            )));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv bias must be [{cout}], got {:?}",
                bias.shape()
            )));
        }
        Ok(ConvGeom {
            batch,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Lays out the receptive fields of one batch item as a `[cin*kh*kw, h*w]`
/// matrix (zero outside the image).
fn im2col<T: Scalar>(src: &[T], g: &ConvGeom, col: &mut [T]) {
    let (h, w) = (g.h, g.w);
    let hw = h * w;
    let (ph, pw) = ((g.kh - 1) / 2, (g.kw - 1) / 2);
    for ci in 0..g.cin {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dx = j as isize - pw as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + i as isize - ph as isize;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let s = sy as usize * w;
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    let a = (x_lo as isize + dx) as usize;
                    line[x_lo..x_hi].copy_from_slice(&plane[s + a..s + a + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix into an image.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dst: &mut [T]) {
    let (h, w) = (g.h, g.w);
    let hw = h * w;
    let (ph, pw) = ((g.kh - 1) / 2, (g.kw - 1) / 2);
    for ci in 0..g.cin {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let src = &col[row * hw..(row + 1) * hw];
                let dx = j as isize - pw as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + i as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s = sy as usize * w;
                    let a = (x_lo as isize + dx) as usize;
                    let out = &mut plane[s + a..s + a + (x_hi - x_lo)];
                    for (o, &v) in out.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    g: &ConvGeom,
) -> Tensor<T> {
    let hw = g.hw();
    let k = g.k();
    let mut out = vec![T::zero(); g.batch * g.cout * hw];
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * hw]
    };
    let wmat = MatRef::new(weight, g.cout, k);
    for bi in 0..g.batch {
        let src = &x.data()[bi * g.cin * hw..(bi + 1) * g.cin * hw];
        let dst = &mut out[bi * g.cout * hw..(bi + 1) * g.cout * hw];
        for (co, plane) in dst.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        let rhs = if g.pointwise() {
            src
        } else {
            im2col(src, g, &mut col);
            &col
        };
        gemm(wmat, MatRef::new(rhs, k, hw), T::one(), dst);
    }
    Tensor::new(&[g.batch, g.cout, g.h, g.w], out).expect("conv output shape")
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads<T> {
    let hw = g.hw();
    let k = g.k();
    let mut dw = vec![T::zero(); g.cout * k];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * g.cin * hw]);
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * hw]
    };
    let wmat = MatRef::new(weight, g.cout, k);
    for bi in 0..g.batch {
        let src = &x.data()[bi * g.cin * hw..(bi + 1) * g.cin * hw];
        let gy = &dy.data()[bi * g.cout * hw..(bi + 1) * g.cout * hw];
        for (co, plane) in gy.chunks_exact(hw).enumerate() {
            db[co] += plane.iter().copied().sum::<T>();
        }
        let gmat = MatRef::new(gy, g.cout, hw);
        let rhs = if g.pointwise() {
            src
        } else {
            im2col(src, g, &mut col);
            &col
        };
        gemm(gmat, MatRef::new(rhs, k, hw).t(), T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[bi * g.cin * hw..(bi + 1) * g.cin * hw];
            if g.pointwise() {
                gemm(wmat.t(), gmat, T::zero(), dst);
            } else {
                gemm(wmat.t(), gmat, T::zero(), &mut col);
                col2im(&col, g, dst);
            }
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::new(x.shape(), d).expect("conv dx shape")),
        dw,
        db,
    }
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size == 0 || size.is_multiple_of(2) || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "gaussian window needs odd size and positive sigma, got {size}, {sigma}"
        )));
    }
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / s).collect())
}

/// Separable filtering with "valid" support on every plane of an NCHW tensor.
pub(crate) fn blur_valid<T: Scalar>(x: &Tensor<T>, kernel: &[T]) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let k = kernel.len();
    if h < k || w < k {
        return Err(Error::shape(format!(
            "blur window {k} larger than plane {h}x{w}"
        )));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![T::zero(); h * ow];
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for xx in 0..ow {
                let mut acc = T::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * row[xx + t];
                }
                tmp[y * ow + xx] = acc;
            }
        }
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = T::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[(y + t) * ow + xx];
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub(crate) fn blur_valid_backward<T: Scalar>(
    dy: &Tensor<T>,
    kernel: &[T],
    in_shape: &[usize],
) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    let mut dtmp = vec![T::zero(); h * ow];
    for (gplane, dplane) in dy.data().chunks_exact(oh * ow).zip(dx.chunks_exact_mut(h * w)) {
        dtmp.fill(T::zero());
        for y in 0..oh {
            for xx in 0..ow {
                let gv = gplane[y * ow + xx];
                for (t, &kv) in kernel.iter().enumerate() {
                    dtmp[(y + t) * ow + xx] += kv * gv;
                }
            }
        }
        for y in 0..h {
            let row = &mut dplane[y * w..(y + 1) * w];
            for xx in 0..ow {
                let gv = dtmp[y * ow + xx];
                for (t, &kv) in kernel.iter().enumerate() {
                    row[xx + t] += kv * gv;
                }
            }
        }
    }
    Tensor::new(in_shape, dx).expect("blur dx shape")
}

/// 2x2 mean pooling; odd trailing rows/columns are dropped.
pub(crate) fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::shape(format!("cannot pool a {h}x{w} plane")));
    }
    let q = T::from_f64(0.25);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..oh {
            for xx in 0..ow {
                let s = plane[2 * y * w + 2 * xx]
                    + plane[2 * y * w + 2 * xx + 1]
                    + plane[(2 * y + 1) * w + 2 * xx]
                    + plane[(2 * y + 1) * w + 2 * xx + 1];
                out.push(s * q);
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub(crate) fn avg_pool2_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let q = T::from_f64(0.25);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for (gplane, dplane) in dy.data().chunks_exact(oh * ow).zip(dx.chunks_exact_mut(h * w)) {
        for y in 0..oh {
            for xx in 0..ow {
                let v = gplane[y * ow + xx] * q;
                dplane[2 * y * w + 2 * xx] = v;
                dplane[2 * y * w + 2 * xx + 1] = v;
                dplane[(2 * y + 1) * w + 2 * xx] = v;
                dplane[(2 * y + 1) * w + 2 * xx + 1] = v;
            }
        }
    }
    Tensor::new(in_shape, dx).expect("pool dx shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct zero-padded sliding-window sum, independent of im2col/GEMM.
    fn conv_oracle(x: &Tensor<f64>, w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (ph, pw) = ((g.kh - 1) as isize / 2, (g.kw - 1) as isize / 2);
        let mut out = vec![0.0; g.batch * g.cout * g.h * g.w];
        for bi in 0..g.batch {
            for co in 0..g.cout {
                for y in 0..g.h {
                    for xx in 0..g.w {
                        let mut acc = b[co];
                        for ci in 0..g.cin {
                            for i in 0..g.kh {
                                for j in 0..g.kw {
                                    let sy = y as isize + i as isize - ph;
                                    let sx = xx as isize + j as isize - pw;
                                    if sy < 0 || sx < 0 || sy >= g.h as isize || sx >= g.w as isize {
                                        continue;
                                    }
                                    acc += w[((co * g.cin + ci) * g.kh + i) * g.kw + j]
                                        * x.get(&[bi, ci, sy as usize, sx as usize]);
                                }
                            }
                        }
                        out[((bi * g.cout + co) * g.h + y) * g.w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: u64) -> impl FnMut(usize) -> f64 {
        let mut s = seed;
        move |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn one_by_one_identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 3, 5], lcg(1));
        let w = Tensor::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn three_by_three_ones_on_two_by_two() {
        // every output sees the whole 2x2 image through the zero padding
        let x = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn conv_matches_direct_summation() {
        for (kh, kw) in [(3, 3), (1, 1), (1, 7), (7, 1), (5, 5)] {
            let x = Tensor::<f64>::from_fn(&[2, 3, 6, 5], lcg(kh as u64 * 10 + kw as u64));
            let wt = Tensor::<f64>::from_fn(&[4, 3, kh, kw], lcg(99));
            let b = Tensor::<f64>::from_fn(&[4], lcg(7));
            let g = ConvGeom {
                batch: 2,
                cin: 3,
                cout: 4,
                h: 6,
                w: 5,
                kh,
                kw,
            };
            let got = conv_forward(&x, wt.data(), b.data(), &g);
            let want = conv_oracle(&x, wt.data(), b.data(), &g);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={kh}x{kw}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(conv2d(&x, &w, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv1d_impulse_response() {
        // Cross-correlation: an impulse at column c produces w[t] at column c - (t - p),
        // i.e. the kernel reversed around the impulse, truncated by the grid.
        let mut x = Tensor::<f64>::zeros(&[1, 1, 7, 7]);
        x.set(&[0, 0, 3, 3], 1.0);
        let kv: Vec<f64> = (0..15).map(|i| (i as f64 + 1.0) * 0.1).collect();
        let w = Tensor::from_f64(&[1, 1, 15], &kv).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv1d_axis(&x, &w, &b, Axis::Width).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                let want = if r == 3 { kv[(3 + 7) - c] } else { 0.0 };
                assert_eq!(y.get(&[0, 0, r, c]), want, "({r},{c})");
            }
        }
        let yh = conv1d_axis(&x, &w, &b, Axis::Height).unwrap();
        for r in 0..7 {
            assert_eq!(yh.get(&[0, 0, r, 3]), kv[10 - r]);
        }
    }

    #[test]
    fn conv1d_length_one_identity() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 4, 6], lcg(3));
        let w = Tensor::from_f64(&[2, 2, 1], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        for axis in [Axis::Width, Axis::Height] {
            assert_eq!(conv1d_axis(&x, &w, &b, axis).unwrap(), x);
        }
    }

    #[test]
    fn separable_conv1d_equals_outer_product_conv2d() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 9, 11], lcg(5));
        let w1: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let w2: Vec<f64> = (0..5).map(|i| (i as f64 * 0.3).cos()).collect();
        let b = Tensor::zeros(&[1]);
        let a = conv1d_axis(&x, &Tensor::from_f64(&[1, 1, 5], &w1).unwrap(), &b, Axis::Width)
            .unwrap();
        let a = conv1d_axis(&a, &Tensor::from_f64(&[1, 1, 5], &w2).unwrap(), &b, Axis::Height)
            .unwrap();
        let outer: Vec<f64> = w2.iter().flat_map(|&r| w1.iter().map(move |&c| r * c)).collect();
        let c = conv2d(&x, &Tensor::from_f64(&[1, 1, 5, 5], &outer).unwrap(), &b).unwrap();
        let scale = c.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(a.max_abs_diff(&c).unwrap() / scale <= 1e-5);
    }

    #[test]
    fn conv1d_rejects_bad_axis_name() {
        assert!(Axis::parse("depth").is_err());
        assert_eq!(Axis::parse("width").unwrap(), Axis::Width);
    }

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::<f64>::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap();
        let y = leaky_relu(&x, 0.1).unwrap();
        assert_eq!(y.data(), &[-0.1, 0.0, 2.0]);
        let r = Tensor::<f64>::from_fn(&[20], lcg(8));
        assert_eq!(leaky_relu(&r, 1.0).unwrap(), r);
        assert!(leaky_relu(&r, 0.0).is_err());
    }

    #[test]
    fn pixel_shuffle_layout() {
        let x = Tensor::<f64>::from_f64(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = Tensor::<f64>::from_fn(&[2, 3, 4, 5], lcg(2));
        assert_eq!(pixel_shuffle(&r, 1).unwrap(), r);
        assert!(pixel_shuffle(&Tensor::<f32>::zeros(&[1, 3, 2, 2]), 2).is_err());
    }

    #[test]
    fn blur_and_pool_backward_are_adjoints() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 12, 10], lcg(11));
        let k = gaussian_window(5, 1.5).unwrap();
        let y = blur_valid(&x, &k).unwrap();
        let r = Tensor::<f64>::from_fn(y.shape(), lcg(12));
        let lhs = y.dot(&r).unwrap();
        let rhs = x.dot(&blur_valid_backward(&r, &k, x.shape())).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);

        let p = avg_pool2(&x).unwrap();
        let r = Tensor::<f64>::from_fn(p.shape(), lcg(13));
        let lhs = p.dot(&r).unwrap();
        let rhs = x.dot(&avg_pool2_backward(&r, x.shape())).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gaussian_window_is_normalized_and_symmetric() {
        let g = gaussian_window(11, 1.5).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(g[i], g[10 - i]);
        }
        assert!(gaussian_window(4, 1.0).is_err());
    }
}
