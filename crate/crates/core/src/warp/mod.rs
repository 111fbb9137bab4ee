//! Forward warping (average splatting) and the partial correlation volume.

pub mod corr;
pub mod splat;

pub use corr::{corr_channels, correlation_volume, correlation_volume_raw};
pub use splat::{forward_warp_avg, forward_warp_avg_raw, splat_weight_map, SplatMode};
