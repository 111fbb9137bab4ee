//! Test-side reference implementations, written as plain loops over flat
//! `f64` buffers and kept independent of the library's own kernels.

#![allow(dead_code)]

pub mod suites;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfi_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// `max |a - b| / max |b|`, the error measure of every oracle comparison.
pub fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-30);
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

fn idx(shape: [usize; 4], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * shape[1] + c) * shape[2] + y) * shape[3] + x
}

/// Cross-correlation with zero padding; weight `(out, in, kh, kw)`.
pub fn conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [cout, _, kh, kw] = w.shape();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    let os = [n, cout, oh, ow];
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as i64 - pad as i64;
                                let ix = (ox * stride + j) as i64 - pad as i64;
                                if (0..h as i64).contains(&iy) && (0..wd as i64).contains(&ix) {
                                    s += w.data()[idx(w.shape(), co, ci, i, j)]
                                        * x.data()
                                            [idx(x.shape(), bi, ci, iy as usize, ix as usize)];
                                }
                            }
                        }
                    }
                    out[idx(os, bi, co, oy, ox)] = s;
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

/// Transposed convolution in gather form: output `(oy, ox)` collects every
/// input pixel `(y, x)` and tap `(i, j)` with `y * s - p + i = oy`.
/// Weight `(in, out, kh, kw)`.
pub fn transpose_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [_, cout, kh, kw] = w.shape();
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    Tensor::from_fn([n, cout, oh, ow], |[bi, co, oy, ox]| {
        let mut s = b[co];
        for i in 0..kh {
            let ny = oy as i64 + pad as i64 - i as i64;
            if ny < 0 || ny % stride as i64 != 0 || ny / stride as i64 >= h as i64 {
                continue;
            }
            for j in 0..kw {
                let nx = ox as i64 + pad as i64 - j as i64;
                if nx < 0 || nx % stride as i64 != 0 || nx / stride as i64 >= wd as i64 {
                    continue;
                }
                let (y, xx) = ((ny / stride as i64) as usize, (nx / stride as i64) as usize);
                for ci in 0..cin {
                    s += w.at(ci, co, i, j) * x.at(bi, ci, y, xx);
                }
            }
        }
        s
    })
}

/// Cost volume with displacements in row-major order over
/// `dy, dx in -r..=r`, averaged over channels.
pub fn correlation(f0: &Tensor<f64>, f1: &Tensor<f64>, r: usize) -> Tensor<f64> {
    let [n, c, h, w] = f0.shape();
    let side = 2 * r + 1;
    let mut out = Tensor::zeros([n, side * side, h, w]);
    for b in 0..n {
        for (k, (dy, dx)) in (-(r as i64)..=r as i64)
            .flat_map(|dy| (-(r as i64)..=r as i64).map(move |dx| (dy, dx)))
            .enumerate()
        {
            for y in 0..h {
                for x in 0..w {
                    let (y1, x1) = (y as i64 + dy, x as i64 + dx);
                    if !(0..h as i64).contains(&y1) || !(0..w as i64).contains(&x1) {
                        continue;
                    }
                    let mut s = 0.0;
                    for ch in 0..c {
                        s += f0.at(b, ch, y, x) * f1.at(b, ch, y1 as usize, x1 as usize);
                    }
                    out.set(b, k, y, x, s / c as f64);
                }
            }
        }
    }
    out
}

/// Average splatting. Each source pixel spreads over the four integer
/// neighbours of its target with bilinear weights; targets divide by the
/// summed weight, floored at `eps`.
pub fn splat(src: &Tensor<f64>, flow: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let [n, c, h, w] = src.shape();
    let mut num = vec![0.0; n * c * h * w];
    let mut den = vec![0.0; n * h * w];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let tx = x as f64 + flow.at(b, 0, y, x);
                let ty = y as f64 + flow.at(b, 1, y, x);
                let (fx, fy) = (tx.floor() as i64, ty.floor() as i64);
                for qy in fy..=fy + 1 {
                    for qx in fx..=fx + 1 {
                        if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                            continue;
                        }
                        let wt = (1.0 - (tx - qx as f64).abs()) * (1.0 - (ty - qy as f64).abs());
                        let q = (qy as usize) * w + qx as usize;
                        den[b * h * w + q] += wt;
                        for ch in 0..c {
                            num[(b * c + ch) * h * w + q] += wt * src.at(b, ch, y, x);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_fn([n, c, h, w], |[b, ch, y, x]| {
        num[(b * c + ch) * h * w + y * w + x] / den[b * h * w + y * w + x].max(eps)
    })
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.shape();
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    Tensor::from_fn([n, c, oh, ow], |[b, ch, oy, ox]| {
        let (y0, y1, fy) = coord(oy, h, oh);
        let (x0, x1, fx) = coord(ox, w, ow);
        let v = |y, xx| x.at(b, ch, y, xx);
        (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
            + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1))
    })
}

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Soft census distance on luma, 7x7 patches, Charbonnier-penalised with
/// the zero offset removed, averaged over interior pixels.
pub fn census(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let [n, _, h, w] = a.shape();
    let gray = |t: &Tensor<f64>, bi: usize, y: usize, x: usize| {
        (0..3).map(|c| LUMA[c] * t.at(bi, c, y, x)).sum::<f64>()
    };
    let soft = |d: f64| d / (d * d + 0.0081).sqrt();
    let eps = 1e-3;
    let mut total = 0.0;
    let mut count = 0usize;
    for bi in 0..n {
        for y in 3..h - 3 {
            for x in 3..w - 3 {
                let (ca, cb) = (gray(a, bi, y, x), gray(b, bi, y, x));
                let mut hd = 0.0;
                for qy in y - 3..=y + 3 {
                    for qx in x - 3..=x + 3 {
                        let e = soft(gray(a, bi, qy, qx) - ca) - soft(gray(b, bi, qy, qx) - cb);
                        hd += e * e / (0.1 + e * e);
                    }
                }
                total += (hd * hd + eps * eps).sqrt() - eps;
                count += 1;
            }
        }
    }
    total / count as f64
}

/// SSIM with a direct 11x11 Gaussian window sum (no separability), valid
/// region only, averaged over channels and items.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let [n, c, h, w] = a.shape();
    let mut g = [[0.0f64; 11]; 11];
    let mut gs = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            gs += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for bi in 0..n {
        for ch in 0..c {
            let mut s = 0.0;
            let mut cnt = 0usize;
            for y in 0..=h - 11 {
                for x in 0..=w - 11 {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let k = g[i][j] / gs;
                            let p = a.at(bi, ch, y + i, x + j);
                            let q = b.at(bi, ch, y + i, x + j);
                            mx += k * p;
                            my += k * q;
                            xx += k * p * p;
                            yy += k * q * q;
                            xy += k * p * q;
                        }
                    }
                    let (vx, vy, cv) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    s += (2.0 * mx * my + c1) * (2.0 * cv + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    cnt += 1;
                }
            }
            total += s / cnt as f64;
        }
    }
    total / (n * c) as f64
}

pub fn charbonnier(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| ((q - p) * (q - p) + 1e-6).sqrt())
        .sum();
    s / a.numel() as f64
}

pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        99.0
    } else {
        (-10.0 * mse.log10()).min(99.0)
    }
}
