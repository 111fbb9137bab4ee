//! Desk-scale training: AdamW with cosine annealing on synthetic or folder
//! triplets.

pub mod data;
pub mod optim;
pub mod trainer;

pub use data::{augment, synth_scene, synth_triplet, Batch, SceneSpec, Triplet, TripletDataset};
pub use optim::{cosine_lr, AdamW};
pub use trainer::{
    evaluate, evaluate_frame_average, frame_average, run, BatchSampler, DataSource, EvalSummary,
    StepReport, TrainConfig, Trainer,
};
