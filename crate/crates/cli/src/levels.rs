//! Pyramid depth and level skipping shared by the inference commands.

use clap::Args;

use vfi_core::imaging::level_size;
use vfi_core::model::test_level_count;
use vfi_core::{ModelConfig, RunOptions, SkipPolicy};

use crate::exit::{CliError, CliResult};

/// Smallest side the coarsest pyramid level may have.
const MIN_TOP_SIDE: usize = 16;

#[derive(Args, Debug, Clone)]
pub struct PyramidArgs {
    /// Pyramid levels, or `auto` to scale the training depth to the input width.
    #[arg(long, default_value = "auto")]
    pub levels: String,
    /// Skip flow at levels 0 and 1 and synthesis at level 1.
    #[arg(long)]
    pub preset_4k: bool,
    /// Levels that reuse the upsampled coarser flow (overrides the preset).
    #[arg(long, value_delimiter = ',')]
    pub flow_skip: Option<Vec<usize>>,
    /// Levels that reuse the upsampled coarser estimate (overrides the preset).
    #[arg(long, value_delimiter = ',')]
    pub synth_skip: Option<Vec<usize>>,
    /// Disable iterative synthesis: every level starts from the warped-frame average.
    #[arg(long)]
    pub plain: bool,
}

/// Deepest pyramid whose padded top level keeps both sides at least 16 px.
pub fn max_levels(height: usize, width: usize) -> usize {
    let mut best = 1;
    for levels in 1..=16 {
        let m = 1usize << (levels + 1);
        let (ph, pw) = (height.div_ceil(m) * m, width.div_ceil(m) * m);
        let (th, tw) = level_size(ph, pw, levels - 1);
        if th.min(tw) >= MIN_TOP_SIDE {
            best = levels;
        }
    }
    best
}

impl PyramidArgs {
    pub fn skip_policy(&self) -> SkipPolicy {
        let mut skip = if self.preset_4k {
            SkipPolicy::preset_4k()
        } else {
            SkipPolicy::none()
        };
        if let Some(f) = &self.flow_skip {
            skip.flow_skip_levels = f.clone();
        }
        if let Some(s) = &self.synth_skip {
            skip.synth_skip_levels = s.clone();
        }
        skip
    }

    /// Level count for frames of `height x width` under `config`.
    pub fn level_count(
        &self,
        config: &ModelConfig,
        height: usize,
        width: usize,
    ) -> CliResult<usize> {
        if self.levels != "auto" {
            let n: usize = self.levels.parse().map_err(|_| {
                CliError::usage(format!(
                    "--levels must be `auto` or a count, got `{}`",
                    self.levels
                ))
            })?;
            if n == 0 {
                return Err(CliError::usage("--levels must be at least 1"));
            }
            return Ok(n);
        }
        let wanted = test_level_count(config.train_levels, config.train_base_width, width)?;
        let cap = max_levels(height, width);
        if wanted > cap {
            log::warn!(
                "{width}x{height} supports at most {cap} levels; using {cap} instead of {wanted}"
            );
            return Ok(cap);
        }
        Ok(wanted)
    }

    pub fn run_options(
        &self,
        config: &ModelConfig,
        height: usize,
        width: usize,
    ) -> CliResult<RunOptions> {
        let levels = self.level_count(config, height, width)?;
        let skip = self.skip_policy();
        skip.validate(levels)?;
        log::info!(
            "pyramid: {levels} levels for {width}x{height} (flow skip {:?}, synthesis skip {:?}, {})",
            skip.flow_skip_levels,
            skip.synth_skip_levels,
            if self.plain { "plain" } else { "iterative" }
        );
        let opts = RunOptions::new(levels).with_skip(skip);
        Ok(if self.plain { opts.plain() } else { opts })
    }
}
