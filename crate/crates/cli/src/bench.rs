use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vfi_core::model::load_weights;
use vfi_core::tensor::conv::conv2d_raw;
use vfi_core::warp::{correlation_volume_raw, forward_warp_avg_raw, SplatMode};
use vfi_core::{Frame, Model, ModelConfig, Tensor};

use crate::exit::{CliError, CliResult};
use crate::BenchArgs;

/// Bands used by the banded splat; fixed so results match across thread counts.
const SPLAT_BANDS: usize = 16;

pub fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("--size must look like 640x480, got `{s}`"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h): (usize, usize) = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub median: Duration,
    pub p95: Duration,
}

/// Nearest-rank percentiles of the sorted samples.
pub fn summarize(mut samples: Vec<Duration>) -> Timing {
    samples.sort();
    let rank = |q: f64| {
        let i = (q * samples.len() as f64).ceil() as usize;
        samples[i.clamp(1, samples.len()) - 1]
    };
    Timing {
        median: rank(0.5),
        p95: rank(0.95),
    }
}

fn time_reps(warmup: usize, reps: usize, mut f: impl FnMut() -> CliResult) -> CliResult<Timing> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed());
    }
    Ok(summarize(samples))
}

fn random(shape: [usize; 4], lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

type Case = (String, Box<dyn FnMut() -> CliResult + Send>);

fn cases(args: &BenchArgs, w: usize, h: usize) -> CliResult<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = args.channels;
    let mut out: Vec<Case> = Vec::new();
    match args.op.as_str() {
        "splat" => {
            let src = random([1, 3, h, w], 0.0, 1.0, &mut rng);
            let flow = random([1, 2, h, w], -8.0, 8.0, &mut rng);
            let modes = [
                ("splat serial".to_string(), SplatMode::Serial),
                (
                    format!("splat banded x{SPLAT_BANDS}"),
                    SplatMode::Banded(SPLAT_BANDS),
                ),
            ];
            for (name, mode) in modes {
                let (s, f) = (src.clone(), flow.clone());
                out.push((
                    name,
                    Box::new(move || {
                        forward_warp_avg_raw(&s, &f, mode)?;
                        Ok(())
                    }),
                ));
            }
        }
        "corr" => {
            let f0 = random([1, c, h, w], -1.0, 1.0, &mut rng);
            let f1 = random([1, c, h, w], -1.0, 1.0, &mut rng);
            out.push((
                format!("corr radius 4, {c} channels"),
                Box::new(move || {
                    correlation_volume_raw(&f0, &f1, 4)?;
                    Ok(())
                }),
            ));
        }
        "conv" => {
            let spec = vfi_core::tensor::ConvSpec::conv(c, c, 3, 1);
            let x = random([1, c, h, w], -1.0, 1.0, &mut rng);
            let k = random(spec.weight_shape(), -0.1, 0.1, &mut rng);
            let b = Tensor::zeros(spec.bias_shape());
            out.push((
                format!("conv 3x3 {c}->{c}"),
                Box::new(move || {
                    conv2d_raw(&x, &k, &b, spec)?;
                    Ok(())
                }),
            ));
        }
        "e2e" => {
            let model = match &args.weights {
                Some(p) => load_weights(p, None)?,
                None => Model::new(ModelConfig::base(), 0),
            };
            let opts = args.pyramid.run_options(model.config(), h, w)?;
            let f0 = Frame::new(random([1, 3, h, w], 0.0, 1.0, &mut rng))?;
            let f1 = Frame::new(random([1, 3, h, w], 0.0, 1.0, &mut rng))?;
            out.push((
                format!("e2e {} levels", opts.levels),
                Box::new(move || {
                    model.interpolate(&f0, &f1, 0.5, &opts)?;
                    Ok(())
                }),
            ));
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown --op `{other}` (splat, corr, conv, e2e)"
            )))
        }
    }
    Ok(out)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn run(args: &BenchArgs, threads: Option<usize>) -> CliResult {
    let (w, h) = parse_size(&args.size)?;
    if args.reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let counts = if n > 1 { vec![1, n] } else { vec![1] };
    log::info!(
        "{} at {w}x{h}, {} reps after {} warmup, threads {:?}",
        args.op,
        args.reps,
        args.warmup,
        counts
    );
    println!("case,threads,median_ms,p95_ms");
    for (name, mut f) in cases(args, w, h)? {
        let mut medians = Vec::new();
        for &t in &counts {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
            let timing = pool.install(|| time_reps(args.warmup, args.reps, &mut f))?;
            println!("{name},{t},{:.3},{:.3}", ms(timing.median), ms(timing.p95));
            medians.push(timing.median);
        }
        if counts.len() == 2 {
            let speedup = medians[0].as_secs_f64() / medians[1].as_secs_f64().max(1e-12);
            println!("# {name}: speedup {speedup:.2}x on {n} threads");
        } else {
            println!("# {name}: one thread available, no speedup measured");
        }
    }
    Ok(())
}
