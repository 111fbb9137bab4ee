//! Mask-weighted blend of the two warped frames plus a residual:
//!
//! `I_t = ((1 - t) M0 * I0w + t M1 * I1w) / ((1 - t) M0 + t M1) + dI`
//!
//! with the denominator floored at [`FUSION_EPS`]. Masks have one channel
//! and apply to every colour channel.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

pub const FUSION_EPS: f64 = 1e-6;

fn check(i0w: &[usize; 4], other: &[usize; 4], channels: usize, what: &'static str) -> Result<()> {
    if other[1] != channels {
        return Err(Error::shape(what, "channels", channels, other[1]));
    }
    const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
    for i in [0, 2, 3] {
        if i0w[i] != other[i] {
            return Err(Error::shape(what, DIMS[i], i0w[i], other[i]));
        }
    }
    Ok(())
}

/// Plain-tensor fusion; `t` holds one time per batch item.
pub fn fuse_raw<T: Real>(
    i0w: &Tensor<T>,
    i1w: &Tensor<T>,
    m0: &Tensor<T>,
    m1: &Tensor<T>,
    residual: &Tensor<T>,
    t: &[T],
) -> Result<Tensor<T>> {
    let s = i0w.shape();
    check(&s, &i1w.shape(), s[1], "fusion (second frame)")?;
    check(&s, &m0.shape(), 1, "fusion (mask 0)")?;
    check(&s, &m1.shape(), 1, "fusion (mask 1)")?;
    check(&s, &residual.shape(), s[1], "fusion (residual)")?;
    if t.len() != s[0] {
        return Err(Error::shape("fusion", "batch", s[0], t.len()));
    }
    let [n, c, h, w] = s;
    let plane = h * w;
    let eps = T::lit(FUSION_EPS);
    let mut out = Tensor::zeros(s);
    for b in 0..n {
        let (a0, a1) = (T::one() - t[b], t[b]);
        for p in 0..plane {
            let (w0, w1) = (a0 * m0.data()[b * plane + p], a1 * m1.data()[b * plane + p]);
            let den = (w0 + w1).max(eps);
            for ch in 0..c {
                let i = (b * c + ch) * plane + p;
                out.data_mut()[i] =
                    (w0 * i0w.data()[i] + w1 * i1w.data()[i]) / den + residual.data()[i];
            }
        }
    }
    Ok(out)
}

/// Differentiable fusion; see the module docs.
pub fn fuse<T: Real>(
    i0w: &Var<T>,
    i1w: &Var<T>,
    m0: &Var<T>,
    m1: &Var<T>,
    residual: &Var<T>,
    t: &[T],
) -> Result<Var<T>> {
    let out = fuse_raw(
        i0w.value(),
        i1w.value(),
        m0.value(),
        m1.value(),
        residual.value(),
        t,
    )?;
    let t = t.to_vec();
    Var::from_op("fusion", out, &[i0w, i1w, m0, m1, residual], move |ctx| {
        let [i0, i1, k0, k1, _] = [0, 1, 2, 3, 4].map(|i| ctx.inputs[i]);
        let [n, c, h, w] = i0.shape();
        let plane = h * w;
        let eps = T::lit(FUSION_EPS);
        let mut g0 = Tensor::zeros(i0.shape());
        let mut g1 = Tensor::zeros(i0.shape());
        let mut gm0 = Tensor::zeros(k0.shape());
        let mut gm1 = Tensor::zeros(k1.shape());
        let g = ctx.grad.data();
        for b in 0..n {
            let (a0, a1) = (T::one() - t[b], t[b]);
            for p in 0..plane {
                let m = b * plane + p;
                let (w0, w1) = (a0 * k0.data()[m], a1 * k1.data()[m]);
                let raw = w0 + w1;
                let den = raw.max(eps);
                let live = raw >= eps;
                let (mut s0, mut s1) = (T::zero(), T::zero());
                for ch in 0..c {
                    let i = (b * c + ch) * plane + p;
                    let (x0, x1) = (i0.data()[i], i1.data()[i]);
                    let blend = (w0 * x0 + w1 * x1) / den;
                    g0.data_mut()[i] = g[i] * w0 / den;
                    g1.data_mut()[i] = g[i] * w1 / den;
                    let sub = if live { blend } else { T::zero() };
                    s0 += g[i] * (x0 - sub) / den;
                    s1 += g[i] * (x1 - sub) / den;
                }
                gm0.data_mut()[m] = a0 * s0;
                gm1.data_mut()[m] = a1 * s1;
            }
        }
        vec![
            Some(g0),
            Some(g1),
            Some(gm0),
            Some(gm1),
            Some(ctx.grad.clone()),
        ]
    })
}
