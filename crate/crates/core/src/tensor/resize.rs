//! Bilinear resampling with half-pixel-centre alignment.

use super::{for_each_item, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

/// Source taps for each output index along one axis.
fn axis_taps<T: Real>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap {
                i0,
                i1,
                frac: T::lit(frac),
            }
        })
        .collect()
}

/// Bilinear resize of a plain tensor, without recording a graph.
pub fn bilinear_resize_raw<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let ty = axis_taps::<T>(h, out_h);
    let tx = axis_taps::<T>(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for_each_item(out.data_mut(), c * out_h * out_w, |b, dst| {
        let src = x.item(b);
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            let oplane = &mut dst[ch * out_h * out_w..(ch + 1) * out_h * out_w];
            for (oy, ry) in ty.iter().enumerate() {
                let r0 = &plane[ry.i0 * w..(ry.i0 + 1) * w];
                let r1 = &plane[ry.i1 * w..(ry.i1 + 1) * w];
                for (ox, rx) in tx.iter().enumerate() {
                    let top = r0[rx.i0] + (r0[rx.i1] - r0[rx.i0]) * rx.frac;
                    let bot = r1[rx.i0] + (r1[rx.i1] - r1[rx.i0]) * rx.frac;
                    oplane[oy * out_w + ox] = top + (bot - top) * ry.frac;
                }
            }
        }
    });
    out
}

fn resize_adjoint<T: Real>(g: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, out_h, out_w] = g.shape();
    let ty = axis_taps::<T>(h, out_h);
    let tx = axis_taps::<T>(w, out_w);
    let mut out = Tensor::zeros([n, c, h, w]);
    for_each_item(out.data_mut(), c * h * w, |b, dst| {
        let src = g.item(b);
        for ch in 0..c {
            let gplane = &src[ch * out_h * out_w..(ch + 1) * out_h * out_w];
            let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
            for (oy, ry) in ty.iter().enumerate() {
                for (ox, rx) in tx.iter().enumerate() {
                    let gv = gplane[oy * out_w + ox];
                    let top = gv * (T::one() - ry.frac);
                    let bot = gv * ry.frac;
                    plane[ry.i0 * w + rx.i0] += top * (T::one() - rx.frac);
                    plane[ry.i0 * w + rx.i1] += top * rx.frac;
                    plane[ry.i1 * w + rx.i0] += bot * (T::one() - rx.frac);
                    plane[ry.i1 * w + rx.i1] += bot * rx.frac;
                }
            }
        }
    });
    out
}

/// Differentiable bilinear resize to `out_h x out_w`.
pub fn bilinear_resize<T: Real>(x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "bilinear_resize",
            "target size must be at least 1x1",
        ));
    }
    let [_, _, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::invalid("bilinear_resize", "empty input"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let out = bilinear_resize_raw(x.value(), out_h, out_w);
    Var::from_op("bilinear_resize", out, &[x], move |ctx| {
        vec![Some(resize_adjoint(ctx.grad, h, w))]
    })
}

/// Resize a flow field (channel 0 horizontal, channel 1 vertical, in pixels)
/// and rescale its values to the new pixel grid.
pub fn resize_flow<T: Real>(flow: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
    let [_, c, h, w] = flow.shape();
    if c % 2 != 0 {
        return Err(Error::invalid(
            "resize_flow",
            format!("flow needs an even channel count, got {c}"),
        ));
    }
    let resized = bilinear_resize(flow, out_h, out_w)?;
    let sx = T::lit(out_w as f64 / w as f64);
    let sy = T::lit(out_h as f64 / h as f64);
    if sx == T::one() && sy == T::one() {
        return Ok(resized);
    }
    let plane = out_h * out_w;
    let apply = move |t: &Tensor<T>| {
        let mut out = t.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let s = if i % 2 == 0 { sx } else { sy };
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        out
    };
    let out = apply(resized.value());
    Var::from_op("resize_flow", out, &[&resized], move |ctx| {
        vec![Some(apply(ctx.grad))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(h: usize, w: usize, v: f64) -> Var<f64> {
        Var::constant(Tensor::full([1, 2, h, w], v))
    }

    #[test]
    fn constant_is_preserved_at_any_size() {
        for &(oh, ow) in &[(1, 1), (3, 7), (13, 5), (40, 40)] {
            let y = bilinear_resize(&constant(6, 9, 0.7), oh, ow).unwrap();
            assert!(y.value().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn up_then_down_of_constant_is_identity() {
        let x = constant(5, 8, 0.7);
        let up = bilinear_resize(&x, 10, 16).unwrap();
        let down = bilinear_resize(&up, 5, 8).unwrap();
        for &v in down.value().data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn two_by_two_upsample_matches_closed_form() {
        let x =
            Var::constant(Tensor::<f64>::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let y = bilinear_resize(&x, 4, 4).unwrap();
        // Half-pixel centres put output samples at source coordinates
        // -0.25, 0.25, 0.75, 1.25, which clamp to fractions 0, .25, .75, 1.
        let a = [0.0, 0.25, 0.75, 1.0];
        for oy in 0..4 {
            for ox in 0..4 {
                assert_eq!(
                    y.value().at(0, 0, oy, ox),
                    2.0 * a[oy] + a[ox],
                    "({oy},{ox})"
                );
            }
        }
    }

    #[test]
    fn factor_two_downsample_is_box_average() {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 6], |[_, _, y, x]| (y * 6 + x) as f64);
        let y = bilinear_resize(&Var::constant(x.clone()), 2, 3).unwrap();
        for oy in 0..2 {
            for ox in 0..3 {
                let avg = (x.at(0, 0, 2 * oy, 2 * ox)
                    + x.at(0, 0, 2 * oy, 2 * ox + 1)
                    + x.at(0, 0, 2 * oy + 1, 2 * ox)
                    + x.at(0, 0, 2 * oy + 1, 2 * ox + 1))
                    / 4.0;
                assert!((y.value().at(0, 0, oy, ox) - avg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flow_resize_scales_each_axis() {
        let mut f = Tensor::<f64>::zeros([1, 2, 4, 6]);
        for v in &mut f.data_mut()[..24] {
            *v = 3.0;
        }
        for v in &mut f.data_mut()[24..] {
            *v = -1.0;
        }
        let y = resize_flow(&Var::constant(f), 8, 3).unwrap();
        assert!(y.value().data()[..24].iter().all(|&v| v == 1.5));
        assert!(y.value().data()[24..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn zero_target_is_rejected() {
        assert!(bilinear_resize(&constant(2, 2, 1.0), 0, 3).is_err());
    }
}
