//! Self-checks shipped with the library: direct-loop reference operators,
//! finite-difference gradient checks and the closed-form model identities.
//! [`run_all`] is what `vfi selftest` prints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::loss::{census_loss, charbonnier, psnr, ssim, PSNR_CAP_DB};
use crate::model::config::{count_parameters, test_level_count, Variant};
use crate::model::fusion::fuse_raw;
use crate::model::{fuse, ModelConfig};
use crate::tensor::conv::{conv2d, transpose_conv2d};
use crate::tensor::gradcheck::{gradcheck, random_tensor, FD_STEP};
use crate::tensor::resize::{bilinear_resize, resize_flow};
use crate::tensor::{ConvSpec, Real, Tensor};
use crate::warp::corr::displacement;
use crate::warp::{
    corr_channels, correlation_volume, correlation_volume_raw, forward_warp_avg,
    forward_warp_avg_raw,
};
use crate::warp::{splat_weight_map, SplatMode};

pub const GRADCHECK_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-5;
pub const FUSION_TOL: f64 = 1e-6;

/// Direct-loop reference implementations in `f64`.
pub mod oracle {
    use super::*;

    pub fn conv2d(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        spec: &ConvSpec,
    ) -> Tensor<f64> {
        let [n, cin, h, wd] = x.shape();
        let (oh, ow) = spec.output_size(h, wd).expect("non-empty output");
        let (kh, kw) = spec.kernel;
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        Tensor::from_fn([n, spec.out_channels, oh, ow], |[bi, co, oy, ox]| {
            let mut s = b.data()[co];
            for ci in 0..cin {
                for i in 0..kh {
                    for j in 0..kw {
                        let iy = (oy * sh + i) as isize - ph as isize;
                        let ix = (ox * sw + j) as isize - pw as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            s += w.at(co, ci, i, j) * x.at(bi, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    /// Scatter definition: input pixel `(y, x)` adds `w[ci, co] * x` at
    /// `(y * s - p + i, x * s - p + j)`.
    pub fn transpose_conv2d(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        spec: &ConvSpec,
    ) -> Tensor<f64> {
        let [n, cin, h, wd] = x.shape();
        let (oh, ow) = spec.output_size(h, wd).expect("non-empty output");
        let (kh, kw) = spec.kernel;
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        let cout = spec.out_channels;
        let mut out = Tensor::from_fn([n, cout, oh, ow], |[_, co, _, _]| b.data()[co]);
        for bi in 0..n {
            for ci in 0..cin {
                for y in 0..h {
                    for xx in 0..wd {
                        for co in 0..cout {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let oy = (y * sh + i) as isize - ph as isize;
                                    let ox = (xx * sw + j) as isize - pw as isize;
                                    if oy >= 0
                                        && ox >= 0
                                        && (oy as usize) < oh
                                        && (ox as usize) < ow
                                    {
                                        let (oy, ox) = (oy as usize, ox as usize);
                                        let v = out.at(bi, co, oy, ox)
                                            + w.at(ci, co, i, j) * x.at(bi, ci, y, xx);
                                        out.set(bi, co, oy, ox, v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn correlation(f0: &Tensor<f64>, f1: &Tensor<f64>, radius: usize) -> Tensor<f64> {
        let [n, c, h, w] = f0.shape();
        Tensor::from_fn([n, corr_channels(radius), h, w], |[b, d, y, x]| {
            let (dy, dx) = displacement(radius, d);
            let (y1, x1) = (y as isize + dy, x as isize + dx);
            if y1 < 0 || x1 < 0 || y1 >= h as isize || x1 >= w as isize {
                return 0.0;
            }
            (0..c)
                .map(|ch| f0.at(b, ch, y, x) * f1.at(b, ch, y1 as usize, x1 as usize))
                .sum::<f64>()
                / c as f64
        })
    }

    /// Average splatting, pixel by pixel.
    pub fn splat(src: &Tensor<f64>, flow: &Tensor<f64>) -> Tensor<f64> {
        let [n, c, h, w] = src.shape();
        let mut acc = Tensor::<f64>::zeros([n, c, h, w]);
        let mut wsum = Tensor::<f64>::zeros([n, 1, h, w]);
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let tx = x as f64 + flow.at(b, 0, y, x);
                    let ty = y as f64 + flow.at(b, 1, y, x);
                    let (x0, y0) = (tx.floor(), ty.floor());
                    for (cx, cy) in [
                        (x0, y0),
                        (x0 + 1.0, y0),
                        (x0, y0 + 1.0),
                        (x0 + 1.0, y0 + 1.0),
                    ] {
                        if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
                            continue;
                        }
                        let wt = (1.0 - (tx - cx).abs()) * (1.0 - (ty - cy).abs());
                        let (qx, qy) = (cx as usize, cy as usize);
                        wsum.set(b, 0, qy, qx, wsum.at(b, 0, qy, qx) + wt);
                        for ch in 0..c {
                            acc.set(
                                b,
                                ch,
                                qy,
                                qx,
                                acc.at(b, ch, qy, qx) + wt * src.at(b, ch, y, x),
                            );
                        }
                    }
                }
            }
        }
        Tensor::from_fn([n, c, h, w], |[b, ch, y, x]| {
            acc.at(b, ch, y, x) / wsum.at(b, 0, y, x).max(crate::warp::splat::WEIGHT_EPS)
        })
    }
}

/// One line of the self-test report.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// What was measured, for example a worst relative error.
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn below(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed: measured < threshold,
            measured,
            threshold,
            detail: detail.into(),
        }
    }

    fn exact(name: &str, ok: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed: ok,
            measured: if ok { 0.0 } else { 1.0 },
            threshold: 0.0,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict}  {:<34} {:>10.3e} (limit {:.0e})  {}",
            self.name, self.measured, self.threshold, self.detail
        )
    }
}

/// Largest `|a - b|` divided by the largest `|b|`.
pub fn relative_error<A: Real, B: Real>(a: &Tensor<A>, b: &Tensor<B>) -> f64 {
    assert_eq!(
        a.shape(),
        b.shape(),
        "relative_error operands differ in shape"
    );
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        diff = diff.max((x - y).abs());
        scale = scale.max(y.abs());
    }
    diff / scale.max(1e-12)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flow whose targets keep a fractional part in `[0.15, 0.85]`, away from
/// the kinks of bilinear splatting.
pub fn smooth_flow(rng: &mut impl Rng, n: usize, h: usize, w: usize, max: f64) -> Tensor<f64> {
    Tensor::from_fn([n, 2, h, w], |_| {
        let whole = rng.gen_range(-max.floor()..=max.floor());
        whole + rng.gen_range(0.15..0.85) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
    })
}

/// Random convolution geometry: `(spec, batch, h, w)`.
fn random_conv(rng: &mut impl Rng, transposed: bool) -> (ConvSpec, usize, usize, usize) {
    let cin = rng.gen_range(1..4);
    let cout = rng.gen_range(1..4);
    let spec = if transposed {
        ConvSpec::up2(cin, cout)
    } else {
        let k = [1, 3, 3, 5][rng.gen_range(0..4)];
        ConvSpec::conv(cin, cout, k, rng.gen_range(1..3))
    };
    (
        spec,
        rng.gen_range(1..3),
        rng.gen_range(3..8),
        rng.gen_range(3..8),
    )
}

fn conv_operands(
    rng: &mut impl Rng,
    spec: &ConvSpec,
    n: usize,
    h: usize,
    w: usize,
) -> Vec<Tensor<f64>> {
    vec![
        random_tensor(rng, [n, spec.in_channels, h, w], -1.0, 1.0),
        random_tensor(rng, spec.weight_shape(), -1.0, 1.0),
        random_tensor(rng, spec.bias_shape(), -1.0, 1.0),
    ]
}

/// Worst gradcheck error of one operator over `shapes` random instances.
pub fn gradcheck_suite(op: &str, shapes: usize, seed: u64) -> crate::Result<(f64, usize)> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for s in 0..shapes {
        let case = s as u64 + seed;
        let report = match op {
            "conv2d" | "transpose_conv2d" => {
                let transposed = op == "transpose_conv2d";
                let (spec, n, h, w) = random_conv(&mut r, transposed);
                let inputs = conv_operands(&mut r, &spec, n, h, w);
                gradcheck(
                    op,
                    |v| {
                        if transposed {
                            transpose_conv2d(&v[0], &v[1], &v[2], spec)
                        } else {
                            conv2d(&v[0], &v[1], &v[2], spec)
                        }
                    },
                    &inputs,
                    FD_STEP,
                    case,
                )?
            }
            "bilinear_resize" => {
                let (h, w) = (r.gen_range(2..9), r.gen_range(2..9));
                let (oh, ow) = (r.gen_range(2..12), r.gen_range(2..12));
                let n = r.gen_range(1..3);
                let x = random_tensor(&mut r, [n, 2, h, w], -1.0, 1.0);
                gradcheck(op, |v| bilinear_resize(&v[0], oh, ow), &[x], FD_STEP, case)?
            }
            "resize_flow" => {
                let (h, w) = (r.gen_range(2..8), r.gen_range(2..8));
                let x = random_tensor(&mut r, [1, 2, h, w], -2.0, 2.0);
                gradcheck(
                    op,
                    |v| resize_flow(&v[0], 2 * h, 2 * w),
                    &[x],
                    FD_STEP,
                    case,
                )?
            }
            "forward_warp_avg" => {
                let (n, c, h, w) = (
                    r.gen_range(1..3),
                    r.gen_range(1..4),
                    r.gen_range(3..8),
                    r.gen_range(3..8),
                );
                let src = random_tensor(&mut r, [n, c, h, w], -1.0, 1.0);
                let flow = smooth_flow(&mut r, n, h, w, 2.0);
                gradcheck(
                    op,
                    |v| forward_warp_avg(&v[0], &v[1]),
                    &[src, flow],
                    1e-6,
                    case,
                )?
            }
            "correlation_volume" => {
                let (n, c, h, w) = (
                    r.gen_range(1..3),
                    r.gen_range(1..4),
                    r.gen_range(3..7),
                    r.gen_range(3..7),
                );
                let radius = r.gen_range(1..3);
                let a = random_tensor(&mut r, [n, c, h, w], -1.0, 1.0);
                let b = random_tensor(&mut r, [n, c, h, w], -1.0, 1.0);
                gradcheck(
                    op,
                    |v| correlation_volume(&v[0], &v[1], radius),
                    &[a, b],
                    FD_STEP,
                    case,
                )?
            }
            "charbonnier" => {
                let shape = [r.gen_range(1..3), 3, r.gen_range(2..7), r.gen_range(2..7)];
                let a = random_tensor(&mut r, shape, 0.0, 1.0);
                let b = random_tensor(&mut r, shape, 0.0, 1.0);
                // Differences near zero bend on the scale of the Charbonnier
                // epsilon, so the probe must be much smaller than it.
                gradcheck(op, |v| charbonnier(&v[0], &v[1]), &[a, b], 1e-6, case)?
            }
            "census_loss" => {
                let shape = [r.gen_range(1..3), 3, r.gen_range(8..12), r.gen_range(8..12)];
                let a = random_tensor(&mut r, shape, 0.0, 1.0);
                let b = random_tensor(&mut r, shape, 0.0, 1.0);
                gradcheck(op, |v| census_loss(&v[0], &v[1]), &[a, b], 1e-5, case)?
            }
            "fusion" => {
                let (n, c, h, w) = (
                    r.gen_range(1..3),
                    r.gen_range(1..4),
                    r.gen_range(2..6),
                    r.gen_range(2..6),
                );
                let t: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..0.9)).collect();
                let inputs = vec![
                    random_tensor(&mut r, [n, c, h, w], 0.0, 1.0),
                    random_tensor(&mut r, [n, c, h, w], 0.0, 1.0),
                    random_tensor(&mut r, [n, 1, h, w], 0.05, 1.0),
                    random_tensor(&mut r, [n, 1, h, w], 0.05, 1.0),
                    random_tensor(&mut r, [n, c, h, w], -0.2, 0.2),
                ];
                gradcheck(
                    op,
                    |v| fuse(&v[0], &v[1], &v[2], &v[3], &v[4], &t),
                    &inputs,
                    FD_STEP,
                    case,
                )?
            }
            other => {
                return Err(crate::Error::invalid(
                    "gradcheck_suite",
                    format!("unknown operator {other}"),
                ))
            }
        };
        worst = worst.max(report.worst());
    }
    Ok((worst, shapes))
}

pub const GRADCHECK_OPS: [&str; 9] = [
    "conv2d",
    "transpose_conv2d",
    "bilinear_resize",
    "resize_flow",
    "forward_warp_avg",
    "correlation_volume",
    "charbonnier",
    "census_loss",
    "fusion",
];

/// Worst relative error of the `f32` operator against its oracle.
pub fn oracle_suite(op: &str, instances: usize, seed: u64) -> crate::Result<f64> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let err = match op {
            "conv2d" | "transpose_conv2d" => {
                let transposed = op == "transpose_conv2d";
                let (spec, n, h, w) = random_conv(&mut r, transposed);
                let v = conv_operands(&mut r, &spec, n, h, w);
                let f: Vec<Tensor<f32>> = v.iter().map(Tensor::cast).collect();
                let x: Vec<crate::Var<f32>> = f.into_iter().map(crate::Var::constant).collect();
                if transposed {
                    let got = transpose_conv2d(&x[0], &x[1], &x[2], spec)?;
                    relative_error(
                        got.value(),
                        &oracle::transpose_conv2d(&v[0], &v[1], &v[2], &spec),
                    )
                } else {
                    let got = conv2d(&x[0], &x[1], &x[2], spec)?;
                    relative_error(got.value(), &oracle::conv2d(&v[0], &v[1], &v[2], &spec))
                }
            }
            "correlation_volume" => {
                let shape = [
                    r.gen_range(1..3),
                    r.gen_range(1..9),
                    r.gen_range(2..9),
                    r.gen_range(2..9),
                ];
                let radius = r.gen_range(0..4);
                let a = random_tensor(&mut r, shape, -1.0, 1.0);
                let b = random_tensor(&mut r, shape, -1.0, 1.0);
                let got = correlation_volume_raw(&a.cast::<f32>(), &b.cast::<f32>(), radius)?;
                relative_error(&got, &oracle::correlation(&a, &b, radius))
            }
            "forward_warp_avg" => {
                let (n, c, h, w) = (
                    r.gen_range(1..3),
                    r.gen_range(1..4),
                    r.gen_range(2..10),
                    r.gen_range(2..10),
                );
                let src = random_tensor(&mut r, [n, c, h, w], 0.0, 1.0);
                let flow = random_tensor(&mut r, [n, 2, h, w], -3.0, 3.0);
                let expect = oracle::splat(&src, &flow);
                let mut e = 0.0f64;
                for mode in [SplatMode::Serial, SplatMode::Banded(3)] {
                    let got = forward_warp_avg_raw(&src.cast::<f32>(), &flow.cast::<f32>(), mode)?;
                    e = e.max(relative_error(&got, &expect));
                }
                e
            }
            other => {
                return Err(crate::Error::invalid(
                    "oracle_suite",
                    format!("unknown operator {other}"),
                ))
            }
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

pub const ORACLE_OPS: [&str; 4] = [
    "conv2d",
    "transpose_conv2d",
    "correlation_volume",
    "forward_warp_avg",
];

/// Zero-flow identity, mass conservation and integer-collision averaging.
pub fn warp_invariants(seed: u64) -> crate::Result<Vec<Check>> {
    let mut r = rng(seed);
    let src = random_tensor(&mut r, [2, 3, 7, 9], 0.0, 1.0).cast::<f32>();
    let zero = Tensor::<f32>::zeros([2, 2, 7, 9]);
    let same = forward_warp_avg_raw(&src, &zero, SplatMode::Serial)? == src;

    // Flows that keep every corner inside: targets within the interior.
    let (h, w) = (8, 8);
    let flow = Tensor::from_fn([1, 2, h, w], |[_, c, y, x]| {
        let p = if c == 0 { x } else { y } as f64;
        let target = r.gen_range(0.0..(if c == 0 { w } else { h } - 1) as f64);
        target - p
    });
    let mass = splat_weight_map(&flow)?.sum();
    let mass_err = (mass - (h * w) as f64).abs() / (h * w) as f64;

    // Pixels 0 and 2 of one row both land on pixel 1.
    let mut collide = Tensor::<f64>::zeros([1, 2, 1, 3]);
    collide.set(0, 0, 0, 0, 1.0);
    collide.set(0, 0, 0, 2, -1.0);
    collide.set(0, 0, 0, 1, 5.0);
    let vals = Tensor::from_vec([1, 1, 1, 3], vec![0.25, 0.9, 0.75])?;
    let got = forward_warp_avg_raw(&vals, &collide, SplatMode::Serial)?;
    let mean_ok = got.at(0, 0, 0, 1) == 0.5;

    Ok(vec![
        Check::exact("warp: zero flow is identity", same, "bit-exact"),
        Check::below(
            "warp: splat mass conservation",
            mass_err,
            1e-5,
            "in-bounds flows",
        ),
        Check::exact(
            "warp: collision averages",
            mean_ok,
            format!("got {}", got.at(0, 0, 0, 1)),
        ),
    ])
}

/// Midpoint average, single source and swap symmetry of the fusion.
pub fn fusion_identities(seed: u64) -> crate::Result<f64> {
    let mut r = rng(seed);
    let shape = [1, 3, 5, 6];
    let a = random_tensor(&mut r, shape, 0.0, 1.0);
    let b = random_tensor(&mut r, shape, 0.0, 1.0);
    let m = random_tensor(&mut r, [1, 1, 5, 6], 0.1, 1.0);
    let m1 = random_tensor(&mut r, [1, 1, 5, 6], 0.1, 1.0);
    let zero_res = Tensor::zeros(shape);
    let zero_mask = Tensor::zeros([1, 1, 5, 6]);
    let t: f64 = r.gen_range(0.1..0.9);
    let mid = fuse_raw(&a, &b, &m, &m, &zero_res, &[0.5])?;
    let avg = a.zip_map(&b, |x, y| 0.5 * (x + y));
    let single = fuse_raw(&a, &b, &m, &zero_mask, &zero_res, &[t])?;
    let fwd = fuse_raw(&a, &b, &m, &m1, &zero_res, &[t])?;
    let swapped = fuse_raw(&b, &a, &m1, &m, &zero_res, &[1.0 - t])?;
    let err = |x: &Tensor<f64>, y: &Tensor<f64>| x.zip_map(y, |p, q| p - q).max_abs();
    Ok(err(&mid, &avg)
        .max(err(&single, &a))
        .max(err(&fwd, &swapped)))
}

/// The full report, in a fixed order.
pub fn run_all(seed: u64) -> crate::Result<Vec<Check>> {
    let mut out = Vec::new();
    for v in [Variant::Base, Variant::Large, Variant::XLarge] {
        let count = count_parameters(&ModelConfig::variant(v));
        let target = v.reference_parameters();
        let dev = (count as f64 - target as f64).abs() / target as f64;
        out.push(Check::below(
            &format!("parameters: {v:?}"),
            dev,
            0.1,
            format!("{count} against target {:.2}M", target as f64 / 1e6),
        ));
    }
    for (width, levels) in [(448, 3), (1280, 5), (3840, 7)] {
        let got = test_level_count(3, 448, width)?;
        out.push(Check::exact(
            &format!("level count at width {width}"),
            got == levels,
            format!("{got} levels (expected {levels})"),
        ));
    }
    for (i, op) in GRADCHECK_OPS.iter().enumerate() {
        let (worst, shapes) = gradcheck_suite(op, 5, seed + i as u64 * 101)?;
        out.push(Check::below(
            &format!("gradcheck: {op}"),
            worst,
            GRADCHECK_TOL,
            format!("{shapes} shapes, f64"),
        ));
    }
    for (i, op) in ORACLE_OPS.iter().enumerate() {
        let worst = oracle_suite(op, 20, seed + 7 + i as u64 * 31)?;
        out.push(Check::below(
            &format!("oracle: {op}"),
            worst,
            ORACLE_TOL,
            "20 instances, f32 against f64 loops",
        ));
    }
    out.extend(warp_invariants(seed)?);
    out.push(Check::below(
        "fusion identities",
        fusion_identities(seed)?,
        FUSION_TOL,
        "midpoint, single source, swap",
    ));
    let img = Tensor::from_fn([1, 3, 16, 16], |[_, c, y, x]| {
        ((c * 7 + y * 3 + x) % 11) as f32 / 10.0
    });
    let (p, s) = (psnr(&img, &img)?, ssim(&img, &img)?);
    out.push(Check::exact(
        "metric caps",
        p == PSNR_CAP_DB && s == 1.0,
        format!("psnr {p} dB, ssim {s}"),
    ));
    Ok(out)
}
