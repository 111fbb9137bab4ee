//! Coarse-to-fine recurrence over the image pyramid.

use std::cell::RefCell;

use super::config::{ModelConfig, SkipPolicy};
use super::network::{FeatureSet, Net, ShapeTrace};
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::imaging::{build_pyramid, pad_to_multiple, Frame};
use crate::tensor::resize::resize_flow;
use crate::tensor::{ops, Real, Tensor, Var};

/// How a pass walks the pyramid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub levels: usize,
    pub skip: SkipPolicy,
    /// Feed each level the upsampled estimate of the coarser level. When
    /// off, every level starts from the average of the warped frames.
    pub iterative: bool,
}

impl RunOptions {
    pub fn new(levels: usize) -> Self {
        RunOptions {
            levels,
            skip: SkipPolicy::none(),
            iterative: true,
        }
    }

    pub fn plain(mut self) -> Self {
        self.iterative = false;
        self
    }

    pub fn with_skip(mut self, skip: SkipPolicy) -> Self {
        self.skip = skip;
        self
    }

    /// Both sides of the padded input divide this.
    pub fn pad_multiple(&self) -> usize {
        1 << (self.levels + 1)
    }
}

/// State carried from a level to the next finer one.
#[derive(Clone, Debug)]
pub struct LevelState<T: Real = f32> {
    pub level: usize,
    pub flow01: Var<T>,
    pub flow10: Var<T>,
    pub hidden: Var<T>,
}

/// Refined flows of one level, with the features synthesis needs there.
#[derive(Clone)]
pub struct LevelFlows<T: Real = f32> {
    pub level: usize,
    pub flow01: Var<T>,
    pub flow10: Var<T>,
    /// Whether the flows were estimated here or upsampled from a coarser level.
    pub estimated: bool,
    frames: (Var<T>, Var<T>),
    feats: (FeatureSet<T>, FeatureSet<T>),
}

/// Result of the flow half of a pass, reusable for any number of times.
pub struct FlowPass<T: Real = f32> {
    /// Levels that run synthesis, coarse to fine.
    pub levels: Vec<LevelFlows<T>>,
    input_size: (usize, usize),
    /// Per-item `(mean, std)` the network input was normalised with.
    stats: Vec<(T, T)>,
}

/// Floor of the normalising standard deviation.
pub const NORM_STD_FLOOR: f64 = 1e-3;

/// Mean and standard deviation of each batch item over both frames.
fn frame_stats<T: Real>(i0: &Tensor<T>, i1: &Tensor<T>) -> Vec<(T, T)> {
    (0..i0.batch())
        .map(|b| {
            let vals = || {
                i0.item(b)
                    .iter()
                    .chain(i1.item(b))
                    .map(|v| v.to_f64().unwrap())
            };
            let n = 2.0 * i0.item_len() as f64;
            let mean = vals().sum::<f64>() / n;
            let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (T::lit(mean), T::lit(var.sqrt().max(NORM_STD_FLOOR)))
        })
        .collect()
}

fn normalize<T: Real>(x: &Tensor<T>, stats: &[(T, T)]) -> Tensor<T> {
    let mut out = x.clone();
    let len = x.item_len();
    for (chunk, &(m, s)) in out.data_mut().chunks_mut(len.max(1)).zip(stats) {
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    out
}

/// Inverse of [`normalize`] on a graph value.
fn denormalize<T: Real>(x: &Var<T>, stats: &[(T, T)]) -> Result<Var<T>> {
    let scales: Vec<T> = stats.iter().map(|s| s.1).collect();
    let scaled = ops::scale_items(x, &scales)?;
    let means = Tensor::from_fn(x.shape(), |[b, _, _, _]| stats[b].0);
    ops::add(&scaled, &Var::constant(means))
}

pub struct ForwardOutput<T: Real = f32> {
    /// Bottom-level estimate cropped to the input size, not clamped.
    pub frame: Var<T>,
    /// Estimates of every synthesised level, coarse to fine, padded size.
    pub estimates: Vec<(usize, Var<T>)>,
}

/// The model: configuration plus one shared parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let params = ParamStore::init(&config, seed);
        Model { config, params }
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let expected = config.layers();
        let ok = expected.len() == params.layers().len()
            && expected
                .iter()
                .zip(params.layers())
                .all(|((n, s), l)| *n == l.name && *s == l.spec);
        if !ok {
            return Err(Error::invalid(
                "model",
                "parameters do not match the configuration",
            ));
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_inputs(i0: &Tensor<T>, i1: &Tensor<T>, opts: &RunOptions) -> Result<()> {
        if opts.levels == 0 {
            return Err(Error::invalid(
                "interpolate",
                "need at least one pyramid level",
            ));
        }
        const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
        for i in 0..4 {
            if i0.shape()[i] != i1.shape()[i] {
                return Err(Error::shape(
                    "interpolate (frame sizes)",
                    DIMS[i],
                    i0.shape()[i],
                    i1.shape()[i],
                ));
            }
        }
        if i0.channels() != 3 {
            return Err(Error::shape("interpolate", "channels", 3, i0.channels()));
        }
        opts.skip.validate(opts.levels)
    }

    /// Estimate flows down the pyramid. Frames are `(n, 3, h, w)`.
    pub fn flow_pass(
        &self,
        params: &Bound<T>,
        i0: &Tensor<T>,
        i1: &Tensor<T>,
        opts: &RunOptions,
        trace: Option<&RefCell<ShapeTrace>>,
    ) -> Result<FlowPass<T>> {
        Self::check_inputs(i0, i1, opts)?;
        let net = Net {
            config: &self.config,
            params,
            trace,
        };
        let m = opts.pad_multiple();
        let stats = frame_stats(i0, i1);
        let p0 = build_pyramid(&pad_to_multiple(&normalize(i0, &stats), m), opts.levels)?;
        let p1 = build_pyramid(&pad_to_multiple(&normalize(i1, &stats), m), opts.levels)?;
        let n = i0.batch();
        let mut state: Option<LevelState<T>> = None;
        let mut out = Vec::new();
        for level in (0..opts.levels).rev() {
            let run_flow = !opts.skip.skips_flow(level);
            let run_synth = !opts.skip.skips_synth(level);
            if !run_flow && !run_synth {
                continue;
            }
            let f0 = Var::constant(p0.level(level).clone());
            let f1 = Var::constant(p1.level(level).clone());
            let [_, _, h, w] = f0.shape();
            net.record(|| format!("L{level}.frame"), &f0);
            let feats0 = net.encode(&f0)?;
            let feats1 = net.encode(&f1)?;
            for (k, f) in feats0.iter().enumerate() {
                net.record(|| format!("L{level}.feat.s{k}"), f);
            }
            let (init01, init10) = match &state {
                Some(s) => (resize_flow(&s.flow01, h, w)?, resize_flow(&s.flow10, h, w)?),
                None => {
                    let z = Var::constant(Tensor::zeros([n, 2, h, w]));
                    (z.clone(), z)
                }
            };
            let (flow01, flow10) = if run_flow {
                let (a, b, hidden) = net.estimate_flow(
                    level,
                    &feats0,
                    &feats1,
                    &init01,
                    &init10,
                    state.as_ref().map(|s| &s.hidden),
                )?;
                state = Some(LevelState {
                    level,
                    flow01: a.clone(),
                    flow10: b.clone(),
                    hidden,
                });
                (a, b)
            } else {
                (init01, init10)
            };
            if run_synth {
                out.push(LevelFlows {
                    level,
                    flow01,
                    flow10,
                    estimated: run_flow,
                    frames: (f0, f1),
                    feats: (feats0, feats1),
                });
            }
        }
        Ok(FlowPass {
            levels: out,
            input_size: (i0.height(), i0.width()),
            stats,
        })
    }

    /// Synthesis down the pyramid for one time per batch item.
    pub fn synthesis_pass(
        &self,
        params: &Bound<T>,
        flows: &FlowPass<T>,
        t: &[T],
        opts: &RunOptions,
        trace: Option<&RefCell<ShapeTrace>>,
    ) -> Result<ForwardOutput<T>> {
        let net = Net {
            config: &self.config,
            params,
            trace,
        };
        let mut prev: Option<Var<T>> = None;
        let mut estimates = Vec::new();
        for lf in &flows.levels {
            let (feats0, feats1) = &lf.feats;
            let (frame, _) = net.synthesize(
                lf.level,
                (&lf.frames.0, &lf.frames.1),
                feats0,
                feats1,
                (&lf.flow01, &lf.flow10),
                t,
                if opts.iterative { prev.as_ref() } else { None },
            )?;
            estimates.push((lf.level, denormalize(&frame, &flows.stats)?));
            prev = Some(frame);
        }
        let last = prev.ok_or_else(|| Error::invalid("interpolate", "no level ran synthesis"))?;
        let (h, w) = flows.input_size;
        let frame = denormalize(&ops::crop(&last, h, w)?, &flows.stats)?;
        net.record(|| "output".to_string(), &frame);
        Ok(ForwardOutput { frame, estimates })
    }

    /// Differentiable forward pass on a batch.
    pub fn forward(
        &self,
        params: &Bound<T>,
        i0: &Tensor<T>,
        i1: &Tensor<T>,
        t: &[T],
        opts: &RunOptions,
    ) -> Result<ForwardOutput<T>> {
        let flows = self.flow_pass(params, i0, i1, opts, None)?;
        self.synthesis_pass(params, &flows, t, opts, None)
    }

    /// Forward pass that also returns every named intermediate shape.
    pub fn traced_shapes(
        &self,
        i0: &Tensor<T>,
        i1: &Tensor<T>,
        t: &[T],
        opts: &RunOptions,
    ) -> Result<ShapeTrace> {
        let trace = RefCell::new(Vec::new());
        let params = self.params.bind(false);
        let flows = self.flow_pass(&params, i0, i1, opts, Some(&trace))?;
        self.synthesis_pass(&params, &flows, t, opts, Some(&trace))?;
        Ok(trace.into_inner())
    }
}

fn check_time(t: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(
            "interpolate",
            format!("t = {t} outside [0, 1]"),
        ));
    }
    Ok(())
}

impl Model<f32> {
    /// Intermediate frame at time `t`, clamped to `[0, 1]`.
    pub fn interpolate(&self, i0: &Frame, i1: &Frame, t: f32, opts: &RunOptions) -> Result<Frame> {
        Ok(self.interpolate_many(i0, i1, &[t], opts)?.remove(0))
    }

    /// Frames at several times; flows are estimated once and shared.
    pub fn interpolate_many(
        &self,
        i0: &Frame,
        i1: &Frame,
        times: &[f32],
        opts: &RunOptions,
    ) -> Result<Vec<Frame>> {
        for &t in times {
            check_time(t)?;
        }
        let params = self.params.bind(false);
        let flows = self.flow_pass(&params, i0.tensor(), i1.tensor(), opts, None)?;
        times
            .iter()
            .map(|&t| {
                let out = self.synthesis_pass(&params, &flows, &[t], opts, None)?;
                Frame::new(out.frame.value().clone()).map(|f| f.clamped())
            })
            .collect()
    }

    /// Refined flow pairs of every level, coarse to fine.
    pub fn level_flows(
        &self,
        i0: &Frame,
        i1: &Frame,
        opts: &RunOptions,
    ) -> Result<Vec<(usize, Tensor<f32>, Tensor<f32>)>> {
        let params = self.params.bind(false);
        let flows = self.flow_pass(&params, i0.tensor(), i1.tensor(), opts, None)?;
        Ok(flows
            .levels
            .iter()
            .map(|l| (l.level, l.flow01.value().clone(), l.flow10.value().clone()))
            .collect())
    }
}
