//! Elementwise arithmetic, activations, channel plumbing and reductions.

use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
    for i in 0..4 {
        if sa[i] != sb[i] {
            return Err(Error::shape(op, DIMS[i], sa[i], sb[i]));
        }
    }
    Ok(())
}

pub fn add<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("add", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x + y);
    Var::from_op("add", out, &[a, b], |ctx| {
        vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
    })
}

pub fn sub<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("sub", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x - y);
    Var::from_op("sub", out, &[a, b], |ctx| {
        vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
    })
}

pub fn mul<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("mul", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x * y);
    Var::from_op("mul", out, &[a, b], |ctx| {
        let ga = ctx.needs[0].then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y));
        let gb = ctx.needs[1].then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x));
        vec![ga, gb]
    })
}

pub fn scale<T: Real>(a: &Var<T>, s: T) -> Result<Var<T>> {
    let out = a.value().map(|x| x * s);
    Var::from_op("scale", out, &[a], move |ctx| {
        vec![Some(ctx.grad.map(|g| g * s))]
    })
}

/// Multiply batch item `i` by `factors[i]`.
pub fn scale_items<T: Real>(a: &Var<T>, factors: &[T]) -> Result<Var<T>> {
    if factors.len() != a.shape()[0] {
        return Err(Error::shape(
            "scale_items",
            "batch",
            a.shape()[0],
            factors.len(),
        ));
    }
    let factors = factors.to_vec();
    let apply = move |t: &Tensor<T>, f: &[T]| {
        let len = t.item_len();
        let mut out = t.clone();
        for (chunk, &s) in out.data_mut().chunks_mut(len.max(1)).zip(f) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        out
    };
    let out = apply(a.value(), &factors);
    Var::from_op("scale_items", out, &[a], move |ctx| {
        vec![Some(apply(ctx.grad, &factors))]
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
}

pub fn activation<T: Real>(x: &Var<T>, kind: Activation) -> Result<Var<T>> {
    match kind {
        Activation::LeakyRelu(slope) => leaky_relu(x, T::lit(slope)),
        Activation::Sigmoid => sigmoid(x),
    }
}

pub fn leaky_relu<T: Real>(x: &Var<T>, slope: T) -> Result<Var<T>> {
    let out = x.value().map(|v| if v > T::zero() { v } else { v * slope });
    Var::from_op("leaky_relu", out, &[x], move |ctx| {
        vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, v| {
            if v > T::zero() {
                g
            } else {
                g * slope
            }
        }))]
    })
}

pub fn sigmoid<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let out = x.value().map(|v| T::one() / (T::one() + (-v).exp()));
    Var::from_op("sigmoid", out, &[x], |ctx| {
        vec![Some(
            ctx.grad.zip_map(ctx.output, |g, s| g * s * (T::one() - s)),
        )]
    })
}

pub fn concat<T: Real>(parts: &[&Var<T>]) -> Result<Var<T>> {
    let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let out = Tensor::concat_channels(&values)?;
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    Var::from_op("concat", out, parts, move |ctx| {
        let mut start = 0;
        widths
            .iter()
            .zip(&ctx.needs)
            .map(|(&c, &need)| {
                let g = need.then(|| ctx.grad.channel_slice(start, c).expect("concat grad slice"));
                start += c;
                g
            })
            .collect()
    })
}

pub fn slice_channels<T: Real>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
    let out = x.value().channel_slice(start, len)?;
    let [n, c, h, w] = x.shape();
    Var::from_op("slice_channels", out, &[x], move |ctx| {
        let mut g = Tensor::zeros([n, c, h, w]);
        let plane = h * w;
        for b in 0..n {
            let dst = (b * c + start) * plane;
            let src = b * len * plane;
            g.data_mut()[dst..dst + len * plane]
                .copy_from_slice(&ctx.grad.data()[src..src + len * plane]);
        }
        vec![Some(g)]
    })
}

/// Top-left `h x w` window; the gradient is zero-padded back.
pub fn crop<T: Real>(x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
    let [n, c, ih, iw] = x.shape();
    if h > ih || w > iw {
        return Err(Error::invalid(
            "crop",
            format!("window {w}x{h} exceeds input {iw}x{ih}"),
        ));
    }
    if (h, w) == (ih, iw) {
        return Ok(x.clone());
    }
    let v = x.value();
    let out = Tensor::from_fn([n, c, h, w], |[b, ch, y, xx]| v.at(b, ch, y, xx));
    Var::from_op("crop", out, &[x], move |ctx| {
        let mut g = Tensor::zeros([n, c, ih, iw]);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        g.set(b, ch, y, xx, ctx.grad.at(b, ch, y, xx));
                    }
                }
            }
        }
        vec![Some(g)]
    })
}

/// Mean over every element, as a 1x1x1x1 tensor.
pub fn mean<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let n = T::from_usize(x.value().numel().max(1)).unwrap();
    let out = Tensor::scalar(x.value().sum() / n);
    let shape = x.shape();
    Var::from_op("mean", out, &[x], move |ctx| {
        vec![Some(Tensor::full(shape, ctx.grad.data()[0] / n))]
    })
}

pub fn sum<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let out = Tensor::scalar(x.value().sum());
    let shape = x.shape();
    Var::from_op("sum", out, &[x], move |ctx| {
        vec![Some(Tensor::full(shape, ctx.grad.data()[0]))]
    })
}
