//! Variant configuration, the layer table derived from it, and the
//! resolution rules (level count, level skipping).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ConvSpec;
use crate::warp::corr_channels;

pub const BASE_ENCODER: [usize; 3] = [16, 32, 64];
pub const BASE_FLOW: [usize; 5] = [160, 128, 112, 96, 64];
pub const BASE_SYNTH: [usize; 3] = [32, 64, 128];
/// Two flows of two components each.
pub const FLOW_OUT: usize = 4;
/// Two masks plus an RGB residual.
pub const SYNTH_OUT: usize = 5;
/// Warped frames, estimate, both inputs, both time-scaled flows.
pub const SYNTH_IN: usize = 3 + 3 + 3 + 3 + 3 + 2 + 2;
pub const LEAKY_SLOPE: f64 = 0.1;

/// The published variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Base,
    Large,
    XLarge,
}

impl Variant {
    pub fn channel_scale(self) -> f64 {
        match self {
            Variant::Base => 1.0,
            Variant::Large => 1.5,
            Variant::XLarge => 2.0,
        }
    }

    /// Published parameter count.
    pub fn reference_parameters(self) -> usize {
        match self {
            Variant::Base => 1_650_000,
            Variant::Large => 3_700_000,
            Variant::XLarge => 6_600_000,
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Some(Variant::Base),
            "large" => Some(Variant::Large),
            "xlarge" | "large2" => Some(Variant::XLarge),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channel_scale: f64,
    pub encoder_channels: [usize; 3],
    pub flow_channels: [usize; 5],
    pub synth_channels: [usize; 3],
    pub corr_radius: usize,
    pub train_levels: usize,
    pub train_base_width: usize,
}

fn scale_all<const N: usize>(base: [usize; N], s: f64) -> [usize; N] {
    base.map(|c| ((c as f64 * s).round() as usize).max(1))
}

impl ModelConfig {
    pub fn scaled(channel_scale: f64) -> Result<Self> {
        if !(channel_scale.is_finite() && channel_scale > 0.0) {
            return Err(Error::invalid(
                "model config",
                format!("channel scale {channel_scale} must be positive"),
            ));
        }
        Ok(ModelConfig {
            channel_scale,
            encoder_channels: scale_all(BASE_ENCODER, channel_scale),
            flow_channels: scale_all(BASE_FLOW, channel_scale),
            synth_channels: scale_all(BASE_SYNTH, channel_scale),
            corr_radius: 4,
            train_levels: 3,
            train_base_width: 448,
        })
    }

    pub fn variant(v: Variant) -> Self {
        Self::scaled(v.channel_scale()).expect("variant scales are positive")
    }

    pub fn base() -> Self {
        Self::variant(Variant::Base)
    }

    pub fn flow_input_channels(&self) -> usize {
        corr_channels(self.corr_radius)
            + 2 * self.encoder_channels[2]
            + FLOW_OUT
            + self.flow_channels[4]
    }

    /// Every convolution of the three shared modules, in a fixed order.
    pub fn layers(&self) -> Vec<(String, ConvSpec)> {
        let e = self.encoder_channels;
        let f = self.flow_channels;
        let s = self.synth_channels;
        let mut out = Vec::new();
        let mut push = |name: String, spec: ConvSpec| out.push((name, spec));

        let mut cin = 3;
        for (stage, &c) in e.iter().enumerate() {
            for i in 0..4 {
                let stride = if i == 0 && stage > 0 { 2 } else { 1 };
                push(
                    format!("encoder.s{stage}.{i}"),
                    ConvSpec::conv(cin, c, 3, stride),
                );
                cin = c;
            }
        }

        push(
            "flow.0".into(),
            ConvSpec::conv(self.flow_input_channels(), f[0], 1, 1),
        );
        for i in 1..5 {
            push(format!("flow.{i}"), ConvSpec::conv(f[i - 1], f[i], 3, 1));
        }
        push("flow.5".into(), ConvSpec::conv(f[4], FLOW_OUT, 3, 1));

        let enc_in = [SYNTH_IN, s[0] + 2 * e[0], s[1] + 2 * e[1]];
        for stage in 0..3 {
            for i in 0..3 {
                let stride = if i == 0 && stage > 0 { 2 } else { 1 };
                let cin = if i == 0 { enc_in[stage] } else { s[stage] };
                push(
                    format!("synth.enc{}.{i}", stage + 1),
                    ConvSpec::conv(cin, s[stage], 3, stride),
                );
            }
        }
        push("synth.dec1".into(), ConvSpec::up2(s[2] + 2 * e[2], s[1]));
        push("synth.dec2".into(), ConvSpec::up2(2 * s[1], s[0]));
        push("synth.dec3".into(), ConvSpec::conv(2 * s[0], s[0], 3, 1));
        push("synth.head".into(), ConvSpec::conv(s[0], SYNTH_OUT, 3, 1));
        out
    }
}

/// Total scalar parameters of the encoder, flow module and synthesis module.
pub fn count_parameters(config: &ModelConfig) -> usize {
    config.layers().iter().map(|(_, s)| s.param_count()).sum()
}

/// Pyramid levels for a test width given the training setup:
/// `ceil(train_levels + log2(test_width / train_width))`, never fewer than
/// `train_levels`.
pub fn test_level_count(
    train_levels: usize,
    train_width: usize,
    test_width: usize,
) -> Result<usize> {
    if train_width == 0 || test_width == 0 {
        return Err(Error::invalid(
            "test_level_count",
            "widths must be at least 1",
        ));
    }
    if test_width <= train_width {
        return Ok(train_levels);
    }
    let n = (test_width as f64 / train_width as f64).log2();
    Ok((train_levels as f64 + n).ceil() as usize)
}

/// Levels at which flow estimation or synthesis is replaced by upsampling
/// the state of the nearest coarser level that ran.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipPolicy {
    pub flow_skip_levels: Vec<usize>,
    pub synth_skip_levels: Vec<usize>,
}

impl SkipPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    /// Flow stops at level 2; synthesis runs at levels 2 and 0.
    pub fn preset_4k() -> Self {
        SkipPolicy {
            flow_skip_levels: vec![0, 1],
            synth_skip_levels: vec![1],
        }
    }

    pub fn skips_flow(&self, level: usize) -> bool {
        self.flow_skip_levels.contains(&level)
    }

    pub fn skips_synth(&self, level: usize) -> bool {
        self.synth_skip_levels.contains(&level)
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        for (what, list) in [
            ("flow", &self.flow_skip_levels),
            ("synthesis", &self.synth_skip_levels),
        ] {
            for &l in list {
                if l >= levels {
                    return Err(Error::invalid(
                        "skip policy",
                        format!("{what} skip level {l} outside 0..{levels}"),
                    ));
                }
                if l + 1 == levels {
                    return Err(Error::invalid(
                        "skip policy",
                        format!("top level {l} cannot skip {what}"),
                    ));
                }
            }
        }
        if self.skips_synth(0) {
            return Err(Error::invalid(
                "skip policy",
                "level 0 cannot skip synthesis",
            ));
        }
        Ok(())
    }
}
