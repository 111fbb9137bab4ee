//! Training losses (Charbonnier plus census) and the PSNR/SSIM metrics.

use crate::error::{Error, Result};
use crate::tensor::{map_indexed, ops, Real, Tensor, Var};

pub const CHARBONNIER_EPS: f64 = 1e-3;
/// Census neighbourhood side.
pub const CENSUS_PATCH: usize = 7;
/// Soft binarisation constant, `d = diff / sqrt(diff^2 + CENSUS_SOFTNESS)`.
pub const CENSUS_SOFTNESS: f64 = 0.0081;
/// Soft Hamming constant, `h = sum e^2 / (CENSUS_HAMMING + e^2)`.
pub const CENSUS_HAMMING: f64 = 0.1;
/// Reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_pair(op: &'static str, a: &[usize; 4], b: &[usize; 4]) -> Result<()> {
    const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
    for i in 0..4 {
        if a[i] != b[i] {
            return Err(Error::shape(op, DIMS[i], a[i], b[i]));
        }
    }
    Ok(())
}

/// Mean of `sqrt(d^2 + eps^2)` over every element, `d = gt - pred`.
pub fn charbonnier<T: Real>(pred: &Var<T>, gt: &Var<T>) -> Result<Var<T>> {
    check_pair("charbonnier", &pred.shape(), &gt.shape())?;
    let eps2 = T::lit(CHARBONNIER_EPS * CHARBONNIER_EPS);
    let d = ops::sub(gt, pred)?;
    let pen = d.value().map(|v| (v * v + eps2).sqrt());
    let pen = Var::from_op("charbonnier", pen, &[&d], move |ctx| {
        vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, v| {
            g * v / (v * v + eps2).sqrt()
        }))]
    })?;
    ops::mean(&pen)
}

fn to_gray<T: Real>(t: &Tensor<T>, b: usize) -> Vec<T> {
    let plane = t.plane_len();
    let item = t.item(b);
    let l: [T; 3] = LUMA.map(T::lit);
    (0..plane)
        .map(|p| l[0] * item[p] + l[1] * item[plane + p] + l[2] * item[2 * plane + p])
        .collect()
}

struct CensusItem<T> {
    /// Summed penalty over valid pixels.
    total: T,
    grads: Option<(Vec<T>, Vec<T>)>,
}

/// Census loss of one image pair, optionally with gradients of the summed
/// penalty w.r.t. both gray images.
fn census_item<T: Real>(
    a: &[T],
    b: &[T],
    h: usize,
    w: usize,
    with_grad: bool,
    seed: T,
) -> CensusItem<T> {
    let r = CENSUS_PATCH / 2;
    let soft = T::lit(CENSUS_SOFTNESS);
    let ham = T::lit(CENSUS_HAMMING);
    let eps = T::lit(CHARBONNIER_EPS);
    let two = T::lit(2.0);
    let bin = |diff: T| diff / (diff * diff + soft).sqrt();
    let dbin = |diff: T| {
        let s = diff * diff + soft;
        soft / (s * s.sqrt())
    };
    let mut total = T::zero();
    let mut grads = with_grad.then(|| (vec![T::zero(); h * w], vec![T::zero(); h * w]));
    for y in r..h - r {
        for x in r..w - r {
            let p = y * w + x;
            let mut hsum = T::zero();
            for dy in 0..CENSUS_PATCH {
                for dx in 0..CENSUS_PATCH {
                    let q = (y + dy - r) * w + (x + dx - r);
                    let e = bin(a[q] - a[p]) - bin(b[q] - b[p]);
                    hsum += e * e / (ham + e * e);
                }
            }
            let pen = (hsum * hsum + eps * eps).sqrt();
            total += pen - eps;
            if let Some((ga, gb)) = grads.as_mut() {
                let dh = seed * hsum / pen;
                if dh == T::zero() {
                    continue;
                }
                for dy in 0..CENSUS_PATCH {
                    for dx in 0..CENSUS_PATCH {
                        let q = (y + dy - r) * w + (x + dx - r);
                        let (da, db) = (a[q] - a[p], b[q] - b[p]);
                        let e = bin(da) - bin(db);
                        let s = ham + e * e;
                        let de = dh * two * e * ham / (s * s);
                        let ga_q = de * dbin(da);
                        let gb_q = -de * dbin(db);
                        ga[q] += ga_q;
                        ga[p] -= ga_q;
                        gb[q] += gb_q;
                        gb[p] -= gb_q;
                    }
                }
            }
        }
    }
    CensusItem { total, grads }
}

/// Soft census loss on luma with 7x7 neighbourhoods, averaged over pixels
/// whose whole neighbourhood lies inside the image.
pub fn census_loss<T: Real>(pred: &Var<T>, gt: &Var<T>) -> Result<Var<T>> {
    check_pair("census_loss", &pred.shape(), &gt.shape())?;
    let [n, c, h, w] = pred.shape();
    if c != 3 {
        return Err(Error::shape("census_loss", "channels", 3, c));
    }
    if h < CENSUS_PATCH || w < CENSUS_PATCH {
        return Err(Error::invalid(
            "census_loss",
            format!("image {w}x{h} smaller than {CENSUS_PATCH}x{CENSUS_PATCH}"),
        ));
    }
    let r = CENSUS_PATCH / 2;
    let count = T::from_usize(n * (h - 2 * r) * (w - 2 * r)).unwrap();
    let (pv, gv) = (pred.value(), gt.value());
    let totals = map_indexed(n, |b| {
        census_item(&to_gray(pv, b), &to_gray(gv, b), h, w, false, T::zero()).total
    });
    let value = totals.into_iter().fold(T::zero(), |acc, v| acc + v) / count;
    Var::from_op(
        "census_loss",
        Tensor::scalar(value),
        &[pred, gt],
        move |ctx| {
            let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
            let seed = ctx.grad.data()[0] / count;
            let parts = map_indexed(n, |i| {
                census_item(&to_gray(a, i), &to_gray(b, i), h, w, true, seed)
                    .grads
                    .expect("gradients requested")
            });
            let spread = |gray: Vec<Vec<T>>| {
                let plane = h * w;
                let mut out = Tensor::zeros([n, 3, h, w]);
                for (i, g) in gray.iter().enumerate() {
                    for ch in 0..3 {
                        let l = T::lit(LUMA[ch]);
                        let off = (i * 3 + ch) * plane;
                        for p in 0..plane {
                            out.data_mut()[off + p] = l * g[p];
                        }
                    }
                }
                out
            };
            let (ga, gb): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            vec![
                ctx.needs[0].then(|| spread(ga)),
                ctx.needs[1].then(|| spread(gb)),
            ]
        },
    )
}

/// The three numbers of one loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub charbonnier: f64,
    pub census: f64,
    pub total: f64,
}

/// Charbonnier plus census, returning the differentiable total and a report.
pub fn interpolation_loss<T: Real>(pred: &Var<T>, gt: &Var<T>) -> Result<(Var<T>, LossReport)> {
    let ch = charbonnier(pred, gt)?;
    let ce = census_loss(pred, gt)?;
    let total = ops::add(&ch, &ce)?;
    let charbonnier = ch.value().data()[0].to_f64().unwrap();
    let census = ce.value().data()[0].to_f64().unwrap();
    let report = LossReport {
        charbonnier,
        census,
        total: charbonnier + census,
    };
    Ok((total, report))
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at 99 dB.
pub fn psnr<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_pair("psnr", &pred.shape(), &gt.shape())?;
    let mut se = 0.0f64;
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let d = a.to_f64().unwrap() - b.to_f64().unwrap();
        se += d * d;
    }
    let mse = se / pred.numel().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) over the
/// valid region, averaged over channels and batch items.
pub fn ssim<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_pair("ssim", &pred.shape(), &gt.shape())?;
    let [n, c, h, w] = pred.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let k = ssim_kernel();
    let plane = h * w;
    let mut total = 0.0;
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let x: Vec<f64> = pred.data()[off..off + plane]
                .iter()
                .map(|v| v.to_f64().unwrap())
                .collect();
            let y: Vec<f64> = gt.data()[off..off + plane]
                .iter()
                .map(|v| v.to_f64().unwrap())
                .collect();
            let prod =
                |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
            let mx = filter_valid(&x, h, w, &k);
            let my = filter_valid(&y, h, w, &k);
            let exx = filter_valid(&prod(&x, &x), h, w, &k);
            let eyy = filter_valid(&prod(&y, &y), h, w, &k);
            let exy = filter_valid(&prod(&x, &y), h, w, &k);
            let mut s = 0.0;
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = exx[i] - ux * ux;
                let vy = eyy[i] - uy * uy;
                let cxy = exy[i] - ux * uy;
                s += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            }
            total += s / mx.len() as f64;
        }
    }
    Ok(total / (n * c) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([1, 3, h, w], |_| rng.gen_range(0.1..0.7))
    }

    fn scalar(v: &Var<f64>) -> f64 {
        v.value().data()[0]
    }

    #[test]
    fn charbonnier_of_identical_frames_is_eps() {
        let a = Var::constant(frame(1, 8, 8));
        assert!((scalar(&charbonnier(&a, &a).unwrap()) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn charbonnier_of_constant_difference() {
        let a = Var::constant(Tensor::full([1, 3, 4, 4], 0.2));
        let b = Var::constant(Tensor::full([1, 3, 4, 4], 0.7));
        let v = scalar(&charbonnier(&a, &b).unwrap());
        assert!((v - (0.25f64 + 1e-6).sqrt()).abs() < 1e-15);
        assert!((v - 0.500001).abs() < 1e-9);
    }

    #[test]
    fn census_is_zero_for_identical_and_shifted() {
        let a = frame(2, 12, 10);
        let shifted = a.map(|v| v + 0.05);
        let av = Var::constant(a);
        assert_eq!(scalar(&census_loss(&av, &av).unwrap()), 0.0);
        assert!(scalar(&census_loss(&av, &Var::constant(shifted)).unwrap()) < 1e-6);
    }

    #[test]
    fn census_rejects_small_images() {
        let a = Var::constant(frame(3, 6, 10));
        assert!(census_loss(&a, &a).is_err());
    }

    #[test]
    fn census_sees_structure_change() {
        let a = Var::constant(frame(4, 12, 12));
        let b = Var::constant(frame(5, 12, 12));
        assert!(scalar(&census_loss(&a, &b).unwrap()) > 0.1);
    }

    #[test]
    fn psnr_formula_and_cap() {
        let a = Tensor::<f64>::full([1, 3, 4, 4], 0.5);
        let b = Tensor::<f64>::full([1, 3, 4, 4], 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = frame(6, 16, 16);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 0.0);
    }

    #[test]
    fn metrics_are_symmetric() {
        let a = frame(7, 16, 20);
        let b = frame(8, 16, 20);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn loss_report_total_is_sum() {
        let a = Var::constant(frame(9, 10, 10));
        let b = Var::constant(frame(10, 10, 10));
        let (_, r) = interpolation_loss(&a, &b).unwrap();
        assert_eq!(r.total, r.charbonnier + r.census);
        assert!(r.charbonnier > 0.0 && r.census > 0.0);
    }
}
