//! Dry-run shape planning: every named intermediate size of a pass, derived
//! from the input size, level count and config by convolution arithmetic.

use std::collections::HashMap;

use super::config::{ModelConfig, FLOW_OUT, SYNTH_IN, SYNTH_OUT};
use super::network::ShapeTrace;
use super::pipeline::RunOptions;
use crate::error::{Error, Result};
use crate::imaging::{level_size, MIN_LEVEL_SIDE};
use crate::tensor::ConvSpec;

struct Planner {
    specs: HashMap<String, ConvSpec>,
    out: ShapeTrace,
    n: usize,
}

impl Planner {
    /// Push `(c, h, w)` through layer `name`.
    fn layer(&self, name: &str, c: usize, hw: (usize, usize)) -> Result<(usize, (usize, usize))> {
        let spec = self.specs[name];
        if spec.in_channels != c {
            return Err(Error::shape("shape plan", "channels", spec.in_channels, c));
        }
        let size = spec
            .output_size(hw.0, hw.1)
            .ok_or_else(|| Error::invalid("shape plan", format!("{name} has an empty output")))?;
        Ok((spec.out_channels, size))
    }

    fn chain(
        &self,
        names: &[String],
        c: usize,
        hw: (usize, usize),
    ) -> Result<(usize, (usize, usize))> {
        names
            .iter()
            .try_fold((c, hw), |(c, hw), n| self.layer(n, c, hw))
    }

    fn push(&mut self, name: String, c: usize, (h, w): (usize, usize)) {
        self.out.push((name, [self.n, c, h, w]));
    }
}

/// Expected trace of [`super::Model::traced_shapes`] for `n` frames of
/// `h x w`.
pub fn plan_shapes(
    config: &ModelConfig,
    n: usize,
    h: usize,
    w: usize,
    opts: &RunOptions,
) -> Result<ShapeTrace> {
    if opts.levels == 0 {
        return Err(Error::invalid(
            "shape plan",
            "need at least one pyramid level",
        ));
    }
    opts.skip.validate(opts.levels)?;
    let m = opts.pad_multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let top = level_size(ph, pw, opts.levels - 1);
    if top.0.min(top.1) < MIN_LEVEL_SIDE {
        return Err(Error::invalid(
            "shape plan",
            "coarsest level below 16 px; use fewer levels",
        ));
    }
    let mut p = Planner {
        specs: config.layers().into_iter().collect(),
        out: Vec::new(),
        n,
    };
    let e = config.encoder_channels;
    let mut synth_levels = Vec::new();
    for level in (0..opts.levels).rev() {
        let run_flow = !opts.skip.skips_flow(level);
        let run_synth = !opts.skip.skips_synth(level);
        if !run_flow && !run_synth {
            continue;
        }
        let hw = level_size(ph, pw, level);
        p.push(format!("L{level}.frame"), 3, hw);
        let mut c = 3;
        let mut size = hw;
        let mut feats = Vec::new();
        for stage in 0..3 {
            let names: Vec<String> = (0..4).map(|i| format!("encoder.s{stage}.{i}")).collect();
            (c, size) = p.chain(&names, c, size)?;
            p.push(format!("L{level}.feat.s{stage}"), c, size);
            feats.push(size);
        }
        debug_assert_eq!(c, e[2]);
        if run_flow {
            let q = (hw.0 / 4, hw.1 / 4);
            if feats[2] != q {
                return Err(Error::shape(
                    "shape plan (flow module)",
                    "height",
                    q.0,
                    feats[2].0,
                ));
            }
            p.push(
                format!("L{level}.flow.input"),
                config.flow_input_channels(),
                q,
            );
            let names: Vec<String> = (0..5).map(|i| format!("flow.{i}")).collect();
            let (hc, hsize) = p.chain(&names, config.flow_input_channels(), q)?;
            p.push(format!("L{level}.flow.hidden"), hc, hsize);
            let (oc, _) = p.layer("flow.5", hc, hsize)?;
            debug_assert_eq!(oc, FLOW_OUT);
            p.push(format!("L{level}.flow.f01"), 2, hw);
        }
        if run_synth {
            synth_levels.push((level, hw, feats));
        }
    }
    for (level, hw, feats) in synth_levels {
        p.push(format!("L{level}.synth.input"), SYNTH_IN, hw);
        let stage = |p: &Planner, s: usize, c: usize, size| {
            let names: Vec<String> = (0..3).map(|i| format!("synth.enc{s}.{i}")).collect();
            p.chain(&names, c, size)
        };
        let (c1, s1) = stage(&p, 1, SYNTH_IN, hw)?;
        p.push(format!("L{level}.synth.e1"), c1, s1);
        let (c2, s2) = stage(&p, 2, c1 + 2 * e[0], s1)?;
        p.push(format!("L{level}.synth.e2"), c2, s2);
        if s2 != feats[1] {
            return Err(Error::shape(
                "shape plan (synthesis stage 2)",
                "height",
                feats[1].0,
                s2.0,
            ));
        }
        let (c3, s3) = stage(&p, 3, c2 + 2 * e[1], s2)?;
        p.push(format!("L{level}.synth.e3"), c3, s3);
        let (cd1, sd1) = p.layer("synth.dec1", c3 + 2 * e[2], s3)?;
        p.push(format!("L{level}.synth.d1"), cd1, sd1);
        let (cd2, sd2) = p.layer("synth.dec2", cd1 + c2, sd1)?;
        p.push(format!("L{level}.synth.d2"), cd2, sd2);
        let (cd3, sd3) = p.layer("synth.dec3", cd2 + c1, sd2)?;
        let (ch, sh) = p.layer("synth.head", cd3, sd3)?;
        debug_assert_eq!(ch, SYNTH_OUT);
        p.push(format!("L{level}.synth.head"), ch, sh);
        p.push(format!("L{level}.estimate"), 3, hw);
    }
    p.push("output".into(), 3, (h, w));
    Ok(p.out)
}
