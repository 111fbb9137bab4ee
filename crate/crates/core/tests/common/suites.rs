//! Randomised gradient and oracle cases shared by the per-operator tests
//! and the acceptance report. Each case returns its worst error so callers
//! can both assert and print it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vfi_core::imaging::upsample_flow_2x;
use vfi_core::loss::{census_loss, charbonnier, interpolation_loss};
use vfi_core::model::fuse;
use vfi_core::tensor::conv::{conv2d, transpose_conv2d};
use vfi_core::tensor::gradcheck::{gradcheck, FD_STEP};
use vfi_core::tensor::ops;
use vfi_core::tensor::resize::{bilinear_resize, resize_flow};
use vfi_core::tensor::{ConvSpec, Tensor, Var};
use vfi_core::warp::splat::WEIGHT_EPS;
use vfi_core::warp::{correlation_volume, forward_warp_avg, forward_warp_avg_raw, SplatMode};

use super::{rel_err, rng, uniform};

/// Random shapes per gradient case.
pub const GRAD_SHAPES: u64 = 6;
/// Random instances per oracle case.
pub const ORACLE_INSTANCES: u64 = 20;

pub type GradFn = Box<dyn Fn(&[Var<f64>]) -> vfi_core::Result<Var<f64>>>;

/// Inputs, finite-difference step and the function under test.
pub type GradSetup = (Vec<Tensor<f64>>, f64, GradFn);

pub struct GradCase {
    pub name: &'static str,
    pub seed: u64,
    pub setup: fn(&mut ChaCha8Rng) -> GradSetup,
}

fn pick(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.gen_range(lo..hi)
}

/// Flow whose targets keep fractional parts inside `[0.15, 0.85]`, so small
/// probes never move a splat across a pixel boundary.
fn smooth_flow(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn([n, 2, h, w], |_| {
        r.gen_range(-3i32..3) as f64 + r.gen_range(0.15..0.85)
    })
}

fn conv2d_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (cin, cout, k, s) = (
        r.gen_range(1..4),
        r.gen_range(1..4),
        [1, 3, 5][r.gen_range(0..3)],
        r.gen_range(1..3),
    );
    let spec = ConvSpec::conv(cin, cout, k, s);
    let (h, w) = (r.gen_range(k..8), r.gen_range(k..8));
    let inputs = vec![
        {
            let s = [pick(r, 1, 3), cin, h, w];
            uniform(r, s, -1.0, 1.0)
        },
        uniform(r, spec.weight_shape(), -1.0, 1.0),
        uniform(r, spec.bias_shape(), -1.0, 1.0),
    ];
    (
        inputs,
        FD_STEP,
        Box::new(move |v| conv2d(&v[0], &v[1], &v[2], spec)),
    )
}

fn transpose_conv2d_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (cin, cout) = (r.gen_range(1..4), r.gen_range(1..4));
    let spec = ConvSpec::up2(cin, cout);
    let inputs = vec![
        {
            let s = [pick(r, 1, 3), cin, pick(r, 1, 5), pick(r, 1, 5)];
            uniform(r, s, -1.0, 1.0)
        },
        uniform(r, spec.weight_shape(), -1.0, 1.0),
        uniform(r, spec.bias_shape(), -1.0, 1.0),
    ];
    (
        inputs,
        FD_STEP,
        Box::new(move |v| transpose_conv2d(&v[0], &v[1], &v[2], spec)),
    )
}

fn resize_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (oh, ow) = (r.gen_range(1..12), r.gen_range(1..12));
    let x = {
        let s = [1, pick(r, 1, 3), pick(r, 1, 8), pick(r, 1, 8)];
        uniform(r, s, -1.0, 1.0)
    };
    (
        vec![x],
        FD_STEP,
        Box::new(move |v| bilinear_resize(&v[0], oh, ow)),
    )
}

fn resize_flow_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (oh, ow) = (r.gen_range(1..12), r.gen_range(1..12));
    let x = {
        let s = [pick(r, 1, 3), 2, pick(r, 1, 8), pick(r, 1, 8)];
        uniform(r, s, -3.0, 3.0)
    };
    (
        vec![x],
        FD_STEP,
        Box::new(move |v| resize_flow(&v[0], oh, ow)),
    )
}

fn upsample_flow_case(r: &mut ChaCha8Rng) -> GradSetup {
    let x = {
        let s = [1, 2, pick(r, 1, 6), pick(r, 1, 6)];
        uniform(r, s, -3.0, 3.0)
    };
    (vec![x], FD_STEP, Box::new(|v| upsample_flow_2x(&v[0])))
}

fn splat_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (n, c, h, w) = (
        r.gen_range(1..3),
        r.gen_range(1..4),
        r.gen_range(2..8),
        r.gen_range(2..8),
    );
    let inputs = vec![uniform(r, [n, c, h, w], 0.0, 1.0), smooth_flow(r, n, h, w)];
    (inputs, 1e-6, Box::new(|v| forward_warp_avg(&v[0], &v[1])))
}

fn correlation_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (n, c, h, w) = (
        r.gen_range(1..3),
        r.gen_range(1..5),
        r.gen_range(1..8),
        r.gen_range(1..8),
    );
    let radius = r.gen_range(0..4);
    let inputs = vec![
        uniform(r, [n, c, h, w], -1.0, 1.0),
        uniform(r, [n, c, h, w], -1.0, 1.0),
    ];
    (
        inputs,
        FD_STEP,
        Box::new(move |v| correlation_volume(&v[0], &v[1], radius)),
    )
}

// Differences near zero bend on the scale of the Charbonnier epsilon, so
// losses built on it take a much smaller probe.
fn charbonnier_case(r: &mut ChaCha8Rng) -> GradSetup {
    let s = [r.gen_range(1..3), 3, r.gen_range(2..7), r.gen_range(2..7)];
    let inputs = vec![uniform(r, s, 0.0, 1.0), uniform(r, s, 0.0, 1.0)];
    (inputs, 1e-6, Box::new(|v| charbonnier(&v[0], &v[1])))
}

fn census_case(r: &mut ChaCha8Rng) -> GradSetup {
    let s = [r.gen_range(1..3), 3, r.gen_range(7..11), r.gen_range(7..11)];
    let inputs = vec![uniform(r, s, 0.0, 1.0), uniform(r, s, 0.0, 1.0)];
    (inputs, 1e-5, Box::new(|v| census_loss(&v[0], &v[1])))
}

fn interpolation_loss_case(r: &mut ChaCha8Rng) -> GradSetup {
    let s = [1, 3, r.gen_range(7..10), r.gen_range(7..10)];
    let inputs = vec![uniform(r, s, 0.0, 1.0), uniform(r, s, 0.0, 1.0)];
    (
        inputs,
        1e-6,
        Box::new(|v| Ok(interpolation_loss(&v[0], &v[1])?.0)),
    )
}

fn fusion_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (n, c, h, w) = (
        r.gen_range(1..3),
        r.gen_range(1..4),
        r.gen_range(1..6),
        r.gen_range(1..6),
    );
    let t: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
    let inputs = vec![
        uniform(r, [n, c, h, w], 0.0, 1.0),
        uniform(r, [n, c, h, w], 0.0, 1.0),
        uniform(r, [n, 1, h, w], 0.05, 1.0),
        uniform(r, [n, 1, h, w], 0.05, 1.0),
        uniform(r, [n, c, h, w], -0.3, 0.3),
    ];
    (
        inputs,
        FD_STEP,
        Box::new(move |v| fuse(&v[0], &v[1], &v[2], &v[3], &v[4], &t)),
    )
}

fn sigmoid_case(r: &mut ChaCha8Rng) -> GradSetup {
    let x = {
        let s = [1, pick(r, 1, 4), pick(r, 1, 5), pick(r, 1, 5)];
        uniform(r, s, -4.0, 4.0)
    };
    (vec![x], FD_STEP, Box::new(|v| ops::sigmoid(&v[0])))
}

fn leaky_relu_case(r: &mut ChaCha8Rng) -> GradSetup {
    // Keep inputs away from the kink.
    let x = Tensor::from_fn([1, 2, r.gen_range(1..5), r.gen_range(1..5)], |_| {
        let m = r.gen_range(0.1..2.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    (vec![x], FD_STEP, Box::new(|v| ops::leaky_relu(&v[0], 0.1)))
}

fn layout_case(r: &mut ChaCha8Rng) -> GradSetup {
    let (h, w) = (r.gen_range(2..6), r.gen_range(2..6));
    let inputs = vec![
        uniform(r, [1, 2, h, w], -1.0, 1.0),
        uniform(r, [1, 3, h, w], -1.0, 1.0),
    ];
    let f: GradFn = Box::new(move |v| {
        let cat = ops::concat(&[&v[0], &v[1]])?;
        let mid = ops::slice_channels(&cat, 1, 3)?;
        ops::crop(&mid, h - 1, w - 1)
    });
    (inputs, FD_STEP, f)
}

fn scale_mul_case(r: &mut ChaCha8Rng) -> GradSetup {
    let n = r.gen_range(1..4);
    let f: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
    let inputs = vec![
        uniform(r, [n, 2, 3, 3], -1.0, 1.0),
        uniform(r, [n, 2, 3, 3], -1.0, 1.0),
    ];
    (
        inputs,
        FD_STEP,
        Box::new(move |v| ops::mul(&ops::scale_items(&v[0], &f)?, &v[1])),
    )
}

pub fn grad_cases() -> Vec<GradCase> {
    let table: [(&'static str, fn(&mut ChaCha8Rng) -> GradSetup); 15] = [
        ("conv2d", conv2d_case),
        ("transpose_conv2d", transpose_conv2d_case),
        ("bilinear_resize", resize_case),
        ("resize_flow", resize_flow_case),
        ("upsample_flow_2x", upsample_flow_case),
        ("forward_warp_avg", splat_case),
        ("correlation_volume", correlation_case),
        ("charbonnier", charbonnier_case),
        ("census_loss", census_case),
        ("interpolation_loss", interpolation_loss_case),
        ("fusion", fusion_case),
        ("sigmoid", sigmoid_case),
        ("leaky_relu", leaky_relu_case),
        ("concat+slice+crop", layout_case),
        ("scale_items+mul", scale_mul_case),
    ];
    table
        .into_iter()
        .enumerate()
        .map(|(i, (name, setup))| GradCase {
            name,
            seed: 10 * i as u64,
            setup,
        })
        .collect()
}

/// Worst relative gradient error over [`GRAD_SHAPES`] random shapes.
pub fn grad_worst(case: &GradCase) -> f64 {
    (case.seed..case.seed + GRAD_SHAPES)
        .map(|seed| {
            let (inputs, step, f) = (case.setup)(&mut rng(seed));
            let report = gradcheck(case.name, f, &inputs, step, seed).unwrap();
            report.worst()
        })
        .fold(0.0, f64::max)
}

pub fn grad_case(name: &str) -> GradCase {
    grad_cases()
        .into_iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no gradient case {name}"))
}

fn c32(t: &Tensor<f64>) -> Var<f32> {
    Var::constant(t.cast())
}

fn back(v: &Var<f32>) -> Tensor<f64> {
    v.value().cast()
}

pub fn oracle_conv2d() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..ORACLE_INSTANCES {
        let mut r = rng(seed);
        let (n, cin, cout) = (r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..5));
        let k = [1, 3, 3, 5][r.gen_range(0..4)];
        let stride = r.gen_range(1..3);
        let (h, w) = (r.gen_range(k..10), r.gen_range(k..10));
        let spec = ConvSpec::conv(cin, cout, k, stride);
        let x = uniform(&mut r, [n, cin, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, spec.weight_shape(), -1.0, 1.0);
        let b = uniform(&mut r, spec.bias_shape(), -1.0, 1.0);
        let got = conv2d(&c32(&x), &c32(&wt), &c32(&b), spec).unwrap();
        let want = super::conv2d(&x, &wt, b.data(), stride, k / 2);
        worst = worst.max(rel_err(&back(&got), &want));
    }
    worst
}

pub fn oracle_transpose_conv2d() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..ORACLE_INSTANCES {
        let mut r = rng(100 + seed);
        let (n, cin, cout) = (r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..5));
        let (h, w) = (r.gen_range(1..7), r.gen_range(1..7));
        let spec = ConvSpec::up2(cin, cout);
        let x = uniform(&mut r, [n, cin, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, spec.weight_shape(), -1.0, 1.0);
        let b = uniform(&mut r, spec.bias_shape(), -1.0, 1.0);
        let got = transpose_conv2d(&c32(&x), &c32(&wt), &c32(&b), spec).unwrap();
        assert_eq!(got.shape(), [n, cout, 2 * h, 2 * w]);
        let want = super::transpose_conv2d(&x, &wt, b.data(), 2, 1);
        worst = worst.max(rel_err(&back(&got), &want));
    }
    worst
}

pub fn oracle_correlation() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..ORACLE_INSTANCES {
        let mut r = rng(200 + seed);
        let (n, c) = (r.gen_range(1..3), r.gen_range(1..6));
        let (h, w) = (r.gen_range(1..12), r.gen_range(1..12));
        let radius = r.gen_range(0..5);
        let f0 = uniform(&mut r, [n, c, h, w], -1.0, 1.0);
        let f1 = uniform(&mut r, [n, c, h, w], -1.0, 1.0);
        let got = correlation_volume(&c32(&f0), &c32(&f1), radius).unwrap();
        worst = worst.max(rel_err(&back(&got), &super::correlation(&f0, &f1, radius)));
    }
    worst
}

/// Serial, banded and graph splatting all against the same reference.
pub fn oracle_splat() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..ORACLE_INSTANCES {
        let mut r = rng(300 + seed);
        let (n, c) = (r.gen_range(1..3), r.gen_range(1..4));
        let (h, w) = (r.gen_range(1..12), r.gen_range(1..12));
        let src = uniform(&mut r, [n, c, h, w], 0.0, 1.0);
        let flow = uniform(&mut r, [n, 2, h, w], -3.0, 3.0);
        let want = super::splat(&src, &flow, WEIGHT_EPS);
        let (s32, f32_) = (src.cast::<f32>(), flow.cast::<f32>());
        for mode in [
            SplatMode::Serial,
            SplatMode::Banded(1),
            SplatMode::Banded(3),
            SplatMode::Banded(64),
        ] {
            let got = forward_warp_avg_raw(&s32, &f32_, mode).unwrap();
            worst = worst.max(rel_err(&got.cast(), &want));
        }
        let got = forward_warp_avg(&c32(&src), &c32(&flow)).unwrap();
        worst = worst.max(rel_err(&back(&got), &want));
    }
    worst
}

pub fn oracle_resize() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..ORACLE_INSTANCES {
        let mut r = rng(400 + seed);
        let (h, w) = (r.gen_range(1..10), r.gen_range(1..10));
        let (oh, ow) = (r.gen_range(1..20), r.gen_range(1..20));
        let x = uniform(&mut r, [1, 2, h, w], -1.0, 1.0);
        let got = bilinear_resize(&c32(&x), oh, ow).unwrap();
        worst = worst.max(rel_err(&back(&got), &super::resize(&x, oh, ow)));
    }
    worst
}
