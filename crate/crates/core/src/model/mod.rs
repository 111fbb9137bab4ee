//! The pyramid recurrent interpolation model: a feature encoder, a
//! bi-directional flow module and a frame synthesis module, each shared by
//! every pyramid level.

pub mod config;
pub mod fusion;
pub mod network;
pub mod params;
pub mod pipeline;
pub mod shapes;
pub mod weights;

pub use config::{count_parameters, test_level_count, ModelConfig, SkipPolicy, Variant};
pub use fusion::{fuse, fuse_raw, FUSION_EPS};
pub use network::{FeatureSet, ShapeTrace, SynthesisOutput};
pub use params::{Bound, Layer, ParamStore};
pub use pipeline::{FlowPass, ForwardOutput, LevelFlows, LevelState, Model, RunOptions};
pub use shapes::plan_shapes;
pub use weights::{load_weights, save_weights, WeightFile, WeightsError};
