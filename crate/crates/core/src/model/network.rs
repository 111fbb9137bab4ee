//! The three weight-shared modules applied at one pyramid level.

use std::cell::RefCell;

use super::config::ModelConfig;
use super::fusion::fuse;
use super::params::Bound;
use crate::error::{Error, Result};
use crate::tensor::resize::{bilinear_resize, resize_flow};
use crate::tensor::{ops, Real, Tensor, Var};
use crate::warp::{correlation_volume, forward_warp_avg};

/// Named tensor shapes seen during a pass, in execution order.
pub type ShapeTrace = Vec<(String, [usize; 4])>;

/// Per-frame features at full, half and quarter level resolution.
pub type FeatureSet<T> = [Var<T>; 3];

pub(crate) struct Net<'a, T: Real> {
    pub config: &'a ModelConfig,
    pub params: &'a Bound<T>,
    pub trace: Option<&'a RefCell<ShapeTrace>>,
}

/// What the synthesis head produced besides the fused frame.
#[derive(Clone, Debug)]
pub struct SynthesisOutput<T: Real = f32> {
    pub warped0: Var<T>,
    pub warped1: Var<T>,
    pub mask0: Var<T>,
    pub mask1: Var<T>,
    pub residual: Var<T>,
}

impl<T: Real> Net<'_, T> {
    pub fn record(&self, name: impl FnOnce() -> String, v: &Var<T>) {
        if let Some(t) = self.trace {
            t.borrow_mut().push((name(), v.shape()));
        }
    }

    /// Four convolutions per stage; stages 1 and 2 start with a stride-2 layer.
    pub fn encode(&self, frame: &Var<T>) -> Result<FeatureSet<T>> {
        let [_, _, h, w] = frame.shape();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(
                "feature encoder",
                format!("level size {w}x{h} is not divisible by 4; pad the input first"),
            ));
        }
        let mut x = frame.clone();
        let mut feats = Vec::with_capacity(3);
        for stage in 0..3 {
            for i in 0..4 {
                x = self
                    .params
                    .apply(&format!("encoder.s{stage}.{i}"), &x, true)?;
            }
            feats.push(x.clone());
        }
        Ok(feats.try_into().expect("three stages"))
    }

    /// Refine the upsampled flow pair at one level. Returns the refined
    /// flows and the hidden feature of the fifth layer.
    pub fn estimate_flow(
        &self,
        level: usize,
        feats0: &FeatureSet<T>,
        feats1: &FeatureSet<T>,
        init01: &Var<T>,
        init10: &Var<T>,
        hidden: Option<&Var<T>>,
    ) -> Result<(Var<T>, Var<T>, Var<T>)> {
        let [n, _, h, w] = init01.shape();
        let (qh, qw) = (h / 4, w / 4);
        let c2 = feats0[2].shape();
        if c2[2] != qh {
            return Err(Error::shape(
                "flow module (stage-2 features)",
                "height",
                qh,
                c2[2],
            ));
        }
        if c2[3] != qw {
            return Err(Error::shape(
                "flow module (stage-2 features)",
                "width",
                qw,
                c2[3],
            ));
        }
        let half = T::lit(0.5);
        let q01 = resize_flow(&ops::scale(init01, half)?, qh, qw)?;
        let q10 = resize_flow(&ops::scale(init10, half)?, qh, qw)?;
        let w0 = forward_warp_avg(&feats0[2], &q01)?;
        let w1 = forward_warp_avg(&feats1[2], &q10)?;
        let corr = correlation_volume(&w0, &w1, self.config.corr_radius)?;
        let i01 = resize_flow(init01, qh, qw)?;
        let i10 = resize_flow(init10, qh, qw)?;
        let hidden_ch = self.config.flow_channels[4];
        let hid = match hidden {
            Some(hv) => {
                let s = hv.shape();
                if s[1] != hidden_ch {
                    return Err(Error::shape(
                        "flow module (hidden)",
                        "channels",
                        hidden_ch,
                        s[1],
                    ));
                }
                if (s[2], s[3]) == (qh, qw) {
                    hv.clone()
                } else {
                    bilinear_resize(hv, qh, qw)?
                }
            }
            None => Var::constant(Tensor::zeros([n, hidden_ch, qh, qw])),
        };
        let mut x = ops::concat(&[&corr, &w0, &w1, &i01, &i10, &hid])?;
        self.record(|| format!("L{level}.flow.input"), &x);
        for i in 0..5 {
            x = self.params.apply(&format!("flow.{i}"), &x, true)?;
        }
        let hidden = x.clone();
        self.record(|| format!("L{level}.flow.hidden"), &hidden);
        let out = self.params.apply("flow.5", &x, false)?;
        let delta = resize_flow(&out, h, w)?;
        let f01 = ops::add(init01, &ops::slice_channels(&delta, 0, 2)?)?;
        let f10 = ops::add(init10, &ops::slice_channels(&delta, 2, 2)?)?;
        self.record(|| format!("L{level}.flow.f01"), &f01);
        Ok((f01, f10, hidden))
    }

    /// Time-scale the flows, warp frames and features, run the U-Net and
    /// fuse. Without `prev` the estimate input is the warped-frame average.
    #[allow(clippy::too_many_arguments)]
    pub fn synthesize(
        &self,
        level: usize,
        frames: (&Var<T>, &Var<T>),
        feats0: &FeatureSet<T>,
        feats1: &FeatureSet<T>,
        flows: (&Var<T>, &Var<T>),
        t: &[T],
        prev: Option<&Var<T>>,
    ) -> Result<(Var<T>, SynthesisOutput<T>)> {
        let (i0, i1) = frames;
        let [_, _, h, w] = i0.shape();
        if let Some(bad) = t.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::invalid(
                "synthesis",
                format!("t = {bad} outside [0, 1]"),
            ));
        }
        let rev: Vec<T> = t.iter().map(|&v| T::one() - v).collect();
        let f0t = ops::scale_items(flows.0, t)?;
        let f1t = ops::scale_items(flows.1, &rev)?;
        let i0w = forward_warp_avg(i0, &f0t)?;
        let i1w = forward_warp_avg(i1, &f1t)?;
        let estimate = match prev {
            Some(p) => {
                if (p.shape()[2], p.shape()[3]) == (h, w) {
                    p.clone()
                } else {
                    bilinear_resize(p, h, w)?
                }
            }
            None => ops::scale(&ops::add(&i0w, &i1w)?, T::lit(0.5))?,
        };

        let mut warped = Vec::with_capacity(3);
        for k in 0..3 {
            let [_, _, fh, fw] = feats0[k].shape();
            let (a, b) = if k == 0 {
                (f0t.clone(), f1t.clone())
            } else {
                (resize_flow(&f0t, fh, fw)?, resize_flow(&f1t, fh, fw)?)
            };
            warped.push((
                forward_warp_avg(&feats0[k], &a)?,
                forward_warp_avg(&feats1[k], &b)?,
            ));
        }

        let x = ops::concat(&[&i0w, &i1w, &estimate, i0, i1, &f0t, &f1t])?;
        self.record(|| format!("L{level}.synth.input"), &x);
        let stage = |name: usize, x: &Var<T>| -> Result<Var<T>> {
            let mut y = x.clone();
            for i in 0..3 {
                y = self
                    .params
                    .apply(&format!("synth.enc{name}.{i}"), &y, true)?;
            }
            self.record(|| format!("L{level}.synth.e{name}"), &y);
            Ok(y)
        };
        let e1 = stage(1, &x)?;
        let e2 = stage(2, &ops::concat(&[&e1, &warped[0].0, &warped[0].1])?)?;
        let e3 = stage(3, &ops::concat(&[&e2, &warped[1].0, &warped[1].1])?)?;
        let d1 = self.params.apply(
            "synth.dec1",
            &ops::concat(&[&e3, &warped[2].0, &warped[2].1])?,
            true,
        )?;
        self.record(|| format!("L{level}.synth.d1"), &d1);
        let d2 = self
            .params
            .apply("synth.dec2", &ops::concat(&[&d1, &e2])?, true)?;
        self.record(|| format!("L{level}.synth.d2"), &d2);
        let d3 = self
            .params
            .apply("synth.dec3", &ops::concat(&[&d2, &e1])?, true)?;
        let head = self.params.apply("synth.head", &d3, false)?;
        self.record(|| format!("L{level}.synth.head"), &head);

        let mask0 = ops::sigmoid(&ops::slice_channels(&head, 0, 1)?)?;
        let mask1 = ops::sigmoid(&ops::slice_channels(&head, 1, 1)?)?;
        let residual = ops::slice_channels(&head, 2, 3)?;
        let frame = fuse(&i0w, &i1w, &mask0, &mask1, &residual, t)?;
        self.record(|| format!("L{level}.estimate"), &frame);
        Ok((
            frame,
            SynthesisOutput {
                warped0: i0w,
                warped1: i1w,
                mask0,
                mask1,
                residual,
            },
        ))
    }
}
