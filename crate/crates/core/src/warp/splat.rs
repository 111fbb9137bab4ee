//! Forward warping by average splatting.
//!
//! Every source pixel is pushed along its flow vector and distributed over
//! the four integer positions around its target with bilinear weights.
//! Accumulated values are divided by accumulated weights; positions that
//! received nothing are holes and read 0.

use crate::error::{Error, Result};
use crate::tensor::{map_indexed, Real, Tensor, Var};

/// Floor of the normalising denominator.
pub const WEIGHT_EPS: f64 = 1e-6;

/// How the scatter-accumulation of one image is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplatMode {
    /// One pass over the source in raster order.
    #[default]
    Serial,
    /// Source rows split into this many bands, each accumulating into a
    /// private buffer; buffers are merged in band order, so the result is
    /// independent of how many threads run the bands.
    Banded(usize),
}

#[derive(Clone, Copy)]
struct Corner {
    idx: usize,
    w: f64,
    dwx: f64,
    dwy: f64,
}

/// Up to four in-bounds splat targets of a source pixel.
#[inline]
fn corners(x: usize, y: usize, fx: f64, fy: f64, h: usize, w: usize) -> ([Corner; 4], usize) {
    let tx = x as f64 + fx;
    let ty = y as f64 + fy;
    let x0 = tx.floor();
    let y0 = ty.floor();
    let ax = tx - x0;
    let ay = ty - y0;
    let cand = [
        (x0, y0, (1.0 - ax) * (1.0 - ay), -(1.0 - ay), -(1.0 - ax)),
        (x0 + 1.0, y0, ax * (1.0 - ay), 1.0 - ay, -ax),
        (x0, y0 + 1.0, (1.0 - ax) * ay, -ay, 1.0 - ax),
        (x0 + 1.0, y0 + 1.0, ax * ay, ay, ax),
    ];
    let mut out = [Corner {
        idx: 0,
        w: 0.0,
        dwx: 0.0,
        dwy: 0.0,
    }; 4];
    let mut n = 0;
    for (cx, cy, wt, dwx, dwy) in cand {
        if cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64 {
            out[n] = Corner {
                idx: cy as usize * w + cx as usize,
                w: wt,
                dwx,
                dwy,
            };
            n += 1;
        }
    }
    (out, n)
}

fn check<T: Real>(op: &'static str, source: Option<&Tensor<T>>, flow: &Tensor<T>) -> Result<()> {
    if flow.channels() != 2 {
        return Err(Error::shape(op, "flow channels", 2, flow.channels()));
    }
    if let Some(src) = source {
        if src.batch() != flow.batch() {
            return Err(Error::shape(op, "batch", src.batch(), flow.batch()));
        }
        if src.height() != flow.height() {
            return Err(Error::shape(op, "height", src.height(), flow.height()));
        }
        if src.width() != flow.width() {
            return Err(Error::shape(op, "width", src.width(), flow.width()));
        }
    }
    if !flow.is_finite() {
        return Err(Error::invalid(op, "flow contains non-finite values"));
    }
    Ok(())
}

/// Accumulate `(values, weights)` for source rows `rows` of one image.
fn accumulate_rows<T: Real>(
    src: Option<&[T]>,
    flow: &[T],
    c: usize,
    h: usize,
    w: usize,
    rows: std::ops::Range<usize>,
    acc: &mut [T],
    wsum: &mut [T],
) {
    let plane = h * w;
    for y in rows {
        for x in 0..w {
            let p = y * w + x;
            let fx = flow[p].to_f64().unwrap();
            let fy = flow[plane + p].to_f64().unwrap();
            let (cs, n) = corners(x, y, fx, fy, h, w);
            for corner in &cs[..n] {
                let wt = T::lit(corner.w);
                wsum[corner.idx] += wt;
                if let Some(src) = src {
                    for ch in 0..c {
                        acc[ch * plane + corner.idx] += wt * src[ch * plane + p];
                    }
                }
            }
        }
    }
}

/// Accumulated splat values and weights of one batch item.
fn accumulate<T: Real>(
    src: Option<&[T]>,
    flow: &[T],
    c: usize,
    h: usize,
    w: usize,
    mode: SplatMode,
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let acc_len = if src.is_some() { c * plane } else { 0 };
    match mode {
        SplatMode::Banded(bands) if bands > 1 && h > 1 => {
            let bands = bands.min(h);
            let parts = map_indexed(bands, |b| {
                let rows = b * h / bands..(b + 1) * h / bands;
                let mut acc = vec![T::zero(); acc_len];
                let mut wsum = vec![T::zero(); plane];
                accumulate_rows(src, flow, c, h, w, rows, &mut acc, &mut wsum);
                (acc, wsum)
            });
            let mut parts = parts.into_iter();
            let (mut acc, mut wsum) = parts.next().expect("at least one band");
            for (a, ws) in parts {
                acc.iter_mut().zip(a).for_each(|(d, s)| *d += s);
                wsum.iter_mut().zip(ws).for_each(|(d, s)| *d += s);
            }
            (acc, wsum)
        }
        _ => {
            let mut acc = vec![T::zero(); acc_len];
            let mut wsum = vec![T::zero(); plane];
            accumulate_rows(src, flow, c, h, w, 0..h, &mut acc, &mut wsum);
            (acc, wsum)
        }
    }
}

fn normalized<T: Real>(acc: &[T], wsum: &[T], c: usize, plane: usize) -> Vec<T> {
    let eps = T::lit(WEIGHT_EPS);
    let mut out = acc.to_vec();
    for ch in 0..c {
        for (v, &ws) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(wsum) {
            *v = *v / ws.max(eps);
        }
    }
    out
}

/// Forward warp without recording a graph, using the given schedule.
pub fn forward_warp_avg_raw<T: Real>(
    source: &Tensor<T>,
    flow: &Tensor<T>,
    mode: SplatMode,
) -> Result<Tensor<T>> {
    check("forward_warp_avg", Some(source), flow)?;
    let [n, c, h, w] = source.shape();
    let items = map_indexed(n, |b| {
        let (acc, wsum) = accumulate(Some(source.item(b)), flow.item(b), c, h, w, mode);
        normalized(&acc, &wsum, c, h * w)
    });
    Tensor::from_vec([n, c, h, w], items.concat())
}

/// Total bilinear weight received at each target, shape `(N, 1, H, W)`.
pub fn splat_weight_map<T: Real>(flow: &Tensor<T>) -> Result<Tensor<T>> {
    check::<T>("splat_weight_map", None, flow)?;
    let [n, _, h, w] = flow.shape();
    let items = map_indexed(n, |b| {
        accumulate::<T>(None, flow.item(b), 0, h, w, SplatMode::Serial).1
    });
    Tensor::from_vec([n, 1, h, w], items.concat())
}

fn backward_item<T: Real>(
    src: &[T],
    flow: &[T],
    out: &[T],
    grad: &[T],
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let (_, wsum) = accumulate::<T>(None, flow, 0, h, w, SplatMode::Serial);
    let eps = T::lit(WEIGHT_EPS);
    // d out / d acc = 1 / D, d out / d wsum = -out / D while wsum > eps.
    let mut dacc = vec![T::zero(); c * plane];
    let mut dw = vec![T::zero(); plane];
    for q in 0..plane {
        let d = wsum[q].max(eps);
        let mut s = T::zero();
        for ch in 0..c {
            let g = grad[ch * plane + q];
            dacc[ch * plane + q] = g / d;
            s += g * out[ch * plane + q];
        }
        if wsum[q] > eps {
            dw[q] = -s / d;
        }
    }
    let mut dsrc = vec![T::zero(); c * plane];
    let mut dflow = vec![T::zero(); 2 * plane];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let fx = flow[p].to_f64().unwrap();
            let fy = flow[plane + p].to_f64().unwrap();
            let (cs, n) = corners(x, y, fx, fy, h, w);
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for corner in &cs[..n] {
                let q = corner.idx;
                let wt = T::lit(corner.w);
                let mut dweight = dw[q];
                for ch in 0..c {
                    let da = dacc[ch * plane + q];
                    dsrc[ch * plane + p] += wt * da;
                    dweight += src[ch * plane + p] * da;
                }
                gx += dweight * T::lit(corner.dwx);
                gy += dweight * T::lit(corner.dwy);
            }
            dflow[p] = gx;
            dflow[plane + p] = gy;
        }
    }
    (dsrc, dflow)
}

/// Differentiable average splatting of `source` along `flow`.
pub fn forward_warp_avg<T: Real>(source: &Var<T>, flow: &Var<T>) -> Result<Var<T>> {
    let out = forward_warp_avg_raw(source.value(), flow.value(), SplatMode::Serial)?;
    Var::from_op("forward_warp_avg", out, &[source, flow], |ctx| {
        let (src, flow, out, grad) = (ctx.inputs[0], ctx.inputs[1], ctx.output, ctx.grad);
        let [n, c, h, w] = src.shape();
        let parts = map_indexed(n, |b| {
            backward_item(
                src.item(b),
                flow.item(b),
                out.item(b),
                grad.item(b),
                c,
                h,
                w,
            )
        });
        let (ds, df): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        vec![
            ctx.needs[0].then(|| Tensor::from_vec(src.shape(), ds.concat()).expect("splat dsrc")),
            ctx.needs[1].then(|| Tensor::from_vec(flow.shape(), df.concat()).expect("splat dflow")),
        ]
    })
}
