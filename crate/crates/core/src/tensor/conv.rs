//! 2-D convolution and transposed convolution (im2col + GEMM).
//!
//! Weight layouts follow the usual convention: a convolution stores
//! `(out, in, kh, kw)`, a transposed convolution stores `(in, out, kh, kw)`,
//! which makes the transposed forward pass exactly the input-gradient of the
//! convolution with the same weights and geometry.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{map_indexed, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub transposed: bool,
}

impl ConvSpec {
    /// Square kernel, "same"-style padding of `k / 2`.
    pub fn conv(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (stride, stride),
            padding: (k / 2, k / 2),
            transposed: false,
        }
    }

    /// The stride-2, 4x4, padding-1 upsampling layer.
    pub fn up2(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (4, 4),
            stride: (2, 2),
            padding: (1, 1),
            transposed: true,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let (kh, kw) = self.kernel;
        if self.transposed {
            [self.in_channels, self.out_channels, kh, kw]
        } else {
            [self.out_channels, self.in_channels, kh, kw]
        }
    }

    pub fn bias_shape(&self) -> [usize; 4] {
        [1, self.out_channels, 1, 1]
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    /// Output spatial size for an input of `(h, w)`, if non-empty.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if self.transposed {
            let oh = ((h.checked_sub(1)?) * sh + kh).checked_sub(2 * ph)?;
            let ow = ((w.checked_sub(1)?) * sw + kw).checked_sub(2 * pw)?;
            (oh > 0 && ow > 0).then_some((oh, ow))
        } else {
            let oh = (h + 2 * ph).checked_sub(kh)? / sh + 1;
            let ow = (w + 2 * pw).checked_sub(kw)? / sw + 1;
            Some((oh, ow))
        }
    }
}

/// Sliding-window geometry between an "image side" (`c, h, w`) and a
/// "column side" of `oh * ow` window positions.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Output positions `ox` with `0 <= ox*s - p + j < n`.
    #[inline]
    fn valid_range(j: usize, s: usize, p: usize, n: usize, out: usize) -> (usize, usize) {
        // ox*s + j >= p  and  ox*s + j < n + p
        let lo = if j >= p { 0 } else { (p - j).div_ceil(s) };
        let hi = if n + p > j {
            (n + p - j).div_ceil(s).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col<'a, T: Real>(&self, img: &'a [T]) -> Cow<'a, [T]> {
        if self.is_pointwise() {
            return Cow::Borrowed(img);
        }
        let mut col = Vec::with_capacity(self.rows() * self.cols());
        let (h, w, ow) = (self.h, self.w, self.ow);
        for c in 0..self.c {
            let plane = &img[c * h * w..(c + 1) * h * w];
            for i in 0..self.kh {
                let (oy_lo, oy_hi) = Self::valid_range(i, self.sh, self.ph, h, self.oh);
                for j in 0..self.kw {
                    let (ox_lo, ox_hi) = Self::valid_range(j, self.sw, self.pw, w, self.ow);
                    col.resize(col.len() + oy_lo * ow, T::zero());
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.sh + i - self.ph;
                        let src = &plane[iy * w..(iy + 1) * w];
                        col.resize(col.len() + ox_lo, T::zero());
                        if self.sw == 1 {
                            let ix0 = ox_lo + j - self.pw;
                            col.extend_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            col.extend((ox_lo..ox_hi).map(|ox| src[ox * self.sw + j - self.pw]));
                        }
                        col.resize(col.len() + ow - ox_hi, T::zero());
                    }
                    col.resize(col.len() + (self.oh - oy_hi) * ow, T::zero());
                }
            }
        }
        debug_assert_eq!(col.len(), self.rows() * self.cols());
        Cow::Owned(col)
    }

    /// Accumulate a column matrix back onto the image (adjoint of im2col).
    fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        if self.is_pointwise() {
            for (d, &s) in img.iter_mut().zip(col) {
                *d += s;
            }
            return;
        }
        let (h, w) = (self.h, self.w);
        for c in 0..self.c {
            let plane = &mut img[c * h * w..(c + 1) * h * w];
            for i in 0..self.kh {
                let (oy_lo, oy_hi) = Self::valid_range(i, self.sh, self.ph, h, self.oh);
                for j in 0..self.kw {
                    let (ox_lo, ox_hi) = Self::valid_range(j, self.sw, self.pw, w, self.ow);
                    let row = ((c * self.kh + i) * self.kw + j) * self.cols();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.sh + i - self.ph;
                        let src = &col[row + oy * self.ow..row + (oy + 1) * self.ow];
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        if self.sw == 1 {
                            let ix0 = ox_lo + j - self.pw;
                            let d = &mut dst[ix0..ix0 + (ox_hi - ox_lo)];
                            for (d, &s) in d.iter_mut().zip(&src[ox_lo..ox_hi]) {
                                *d += s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox * self.sw + j - self.pw] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_operands<T: Real>(
    op: &'static str,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    if x.channels() != spec.in_channels {
        return Err(Error::shape(
            op,
            "input channels",
            spec.in_channels,
            x.channels(),
        ));
    }
    let ws = spec.weight_shape();
    const WDIMS: [&str; 4] = [
        "weight dim 0",
        "weight dim 1",
        "kernel height",
        "kernel width",
    ];
    for i in 0..4 {
        if weight.shape()[i] != ws[i] {
            return Err(Error::shape(op, WDIMS[i], ws[i], weight.shape()[i]));
        }
    }
    if bias.numel() != spec.out_channels {
        return Err(Error::shape(
            op,
            "bias length",
            spec.out_channels,
            bias.numel(),
        ));
    }
    if spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    spec.output_size(x.height(), x.width()).ok_or_else(|| {
        Error::invalid(
            op,
            format!(
                "input {}x{} too small for kernel {:?} with padding {:?}",
                x.height(),
                x.width(),
                spec.kernel,
                spec.padding
            ),
        )
    })
}

/// Geometry of the convolution `spec`, seen from its input side.
fn conv_geometry(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize, c: usize) -> Geometry {
    Geometry {
        c,
        h,
        w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        sh: spec.stride.0,
        sw: spec.stride.1,
        ph: spec.padding.0,
        pw: spec.padding.1,
        oh,
        ow,
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = g.shape();
    let plane = g.plane_len();
    let mut out = Tensor::zeros([1, c, 1, 1]);
    for b in 0..n {
        for ch in 0..c {
            let s: T = g.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                .iter()
                .copied()
                .sum();
            out.data_mut()[ch] += s;
        }
    }
    out
}

/// Sum per-item partial results in item order.
fn sum_ordered<T: Real>(parts: impl IntoIterator<Item = Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    if spec.transposed {
        return Err(Error::invalid(
            "conv2d",
            "spec is transposed; use transpose_conv2d",
        ));
    }
    let (oh, ow) = check_operands("conv2d", x, weight, bias, spec)?;
    let geo = conv_geometry(spec, x.height(), x.width(), oh, ow, x.channels());
    let (k, cols, cout) = (geo.rows(), geo.cols(), spec.out_channels);
    let mut out = Tensor::zeros([x.batch(), cout, oh, ow]);
    super::for_each_item(out.data_mut(), cout * cols, |b, dst| {
        let col = geo.im2col(x.item(b));
        T::gemm(
            cout,
            k,
            cols,
            T::one(),
            weight.data(),
            k as isize,
            1,
            &col,
            cols as isize,
            1,
            T::zero(),
            dst,
            cols as isize,
            1,
        );
        add_bias(dst, bias.data(), cols);
    });
    Ok(out)
}

/// Input and weight gradients of a convolution given the output gradient.
fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &Tensor<T>,
    spec: &ConvSpec,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (oh, ow) = (g.height(), g.width());
    let geo = conv_geometry(spec, x.height(), x.width(), oh, ow, x.channels());
    let (k, cols, cout) = (geo.rows(), geo.cols(), spec.out_channels);
    let parts = map_indexed(x.batch(), |b| {
        let gi = g.item(b);
        let dx = need_x.then(|| {
            let mut dcol = vec![T::zero(); k * cols];
            T::gemm(
                k,
                cout,
                cols,
                T::one(),
                weight.data(),
                1,
                k as isize,
                gi,
                cols as isize,
                1,
                T::zero(),
                &mut dcol,
                cols as isize,
                1,
            );
            let mut dx = vec![T::zero(); x.item_len()];
            geo.col2im(&dcol, &mut dx);
            dx
        });
        let dw = need_w.then(|| {
            let col = geo.im2col(x.item(b));
            let mut dw = vec![T::zero(); cout * k];
            T::gemm(
                cout,
                cols,
                k,
                T::one(),
                gi,
                cols as isize,
                1,
                &col,
                1,
                cols as isize,
                T::zero(),
                &mut dw,
                k as isize,
                1,
            );
            dw
        });
        (dx, dw)
    });
    let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let dx = need_x.then(|| {
        let data: Vec<T> = dxs.into_iter().flatten().flatten().collect();
        Tensor::from_vec(x.shape(), data).expect("conv dx shape")
    });
    let dw = need_w.then(|| {
        let data = sum_ordered(dws.into_iter().flatten(), cout * k);
        Tensor::from_vec(weight.shape(), data).expect("conv dw shape")
    });
    (dx, dw)
}

pub(crate) fn transpose_conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    if !spec.transposed {
        return Err(Error::invalid("transpose_conv2d", "spec is not transposed"));
    }
    let (oh, ow) = check_operands("transpose_conv2d", x, weight, bias, spec)?;
    let cout = spec.out_channels;
    // The adjoint view: a convolution from the (cout, oh, ow) output back onto
    // the (cin, h, w) input.
    let geo = conv_geometry(spec, oh, ow, x.height(), x.width(), cout);
    let (k, cols, cin) = (geo.rows(), geo.cols(), spec.in_channels);
    let mut out = Tensor::zeros([x.batch(), cout, oh, ow]);
    super::for_each_item(out.data_mut(), cout * oh * ow, |b, dst| {
        let mut col = vec![T::zero(); k * cols];
        T::gemm(
            k,
            cin,
            cols,
            T::one(),
            weight.data(),
            1,
            k as isize,
            x.item(b),
            cols as isize,
            1,
            T::zero(),
            &mut col,
            cols as isize,
            1,
        );
        geo.col2im(&col, dst);
        add_bias(dst, bias.data(), oh * ow);
    });
    Ok(out)
}

fn transpose_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &Tensor<T>,
    spec: &ConvSpec,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let cout = spec.out_channels;
    let geo = conv_geometry(spec, g.height(), g.width(), x.height(), x.width(), cout);
    let (k, cols, cin) = (geo.rows(), geo.cols(), spec.in_channels);
    let parts = map_indexed(x.batch(), |b| {
        let colg = geo.im2col(g.item(b));
        let dx = need_x.then(|| {
            let mut dx = vec![T::zero(); cin * cols];
            T::gemm(
                cin,
                k,
                cols,
                T::one(),
                weight.data(),
                k as isize,
                1,
                &colg,
                cols as isize,
                1,
                T::zero(),
                &mut dx,
                cols as isize,
                1,
            );
            dx
        });
        let dw = need_w.then(|| {
            let mut dw = vec![T::zero(); cin * k];
            T::gemm(
                cin,
                cols,
                k,
                T::one(),
                x.item(b),
                cols as isize,
                1,
                &colg,
                1,
                cols as isize,
                T::zero(),
                &mut dw,
                k as isize,
                1,
            );
            dw
        });
        (dx, dw)
    });
    let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let dx = need_x.then(|| {
        let data: Vec<T> = dxs.into_iter().flatten().flatten().collect();
        Tensor::from_vec(x.shape(), data).expect("transpose conv dx shape")
    });
    let dw = need_w.then(|| {
        let data = sum_ordered(dws.into_iter().flatten(), cin * k);
        Tensor::from_vec(weight.shape(), data).expect("transpose conv dw shape")
    });
    (dx, dw)
}

/// Convolution on plain tensors, without recording a graph node.
pub fn conv2d_raw<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_forward(x, weight, bias, &spec)
}

pub fn conv2d<T: Real>(
    x: &Var<T>,
    weight: &Var<T>,
    bias: &Var<T>,
    spec: ConvSpec,
) -> Result<Var<T>> {
    let out = conv2d_forward(x.value(), weight.value(), bias.value(), &spec)?;
    Var::from_op("conv2d", out, &[x, weight, bias], move |ctx| {
        let (dx, dw) = conv2d_backward(
            ctx.inputs[0],
            ctx.inputs[1],
            ctx.grad,
            &spec,
            ctx.needs[0],
            ctx.needs[1],
        );
        let db = ctx.needs[2].then(|| bias_grad(ctx.grad));
        vec![dx, dw, db]
    })
}

pub fn transpose_conv2d<T: Real>(
    x: &Var<T>,
    weight: &Var<T>,
    bias: &Var<T>,
    spec: ConvSpec,
) -> Result<Var<T>> {
    let out = transpose_conv2d_forward(x.value(), weight.value(), bias.value(), &spec)?;
    Var::from_op("transpose_conv2d", out, &[x, weight, bias], move |ctx| {
        let (dx, dw) = transpose_conv2d_backward(
            ctx.inputs[0],
            ctx.inputs[1],
            ctx.grad,
            &spec,
            ctx.needs[0],
            ctx.needs[1],
        );
        let db = ctx.needs[2].then(|| bias_grad(ctx.grad));
        vec![dx, dw, db]
    })
}
