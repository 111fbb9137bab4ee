//! The optimisation loop, checkpoints and held-out evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{augment, synth_scene, Batch, SceneSpec, Triplet, TripletDataset};
use super::optim::{cosine_lr, AdamW};
use crate::error::{Error, Result};
use crate::loss::{interpolation_loss, psnr, ssim, LossReport};
use crate::model::weights::{FileHeader, WeightFile, WeightsError};
use crate::model::{Model, ParamStore, RunOptions};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub steps: u64,
    pub crop_size: usize,
    pub levels: usize,
    pub seed: u64,
    /// Largest per-layer displacement of synthetic scenes.
    pub motion_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_start: 2e-4,
            lr_end: 2e-5,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            batch_size: 4,
            steps: 2000,
            crop_size: 96,
            levels: 3,
            seed: 0,
            motion_max: 12.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_start", self.lr_start),
            ("lr_end", self.lr_end),
            ("weight_decay", self.weight_decay),
            ("beta1", self.betas.0),
            ("beta2", self.betas.1),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    "train config",
                    format!("{name} must be positive, got {v}"),
                ));
            }
        }
        if self.betas.0 >= 1.0 || self.betas.1 >= 1.0 {
            return Err(Error::invalid("train config", "betas must be below 1"));
        }
        if self.lr_end > self.lr_start {
            return Err(Error::invalid("train config", "lr_end above lr_start"));
        }
        if self.batch_size == 0 || self.crop_size == 0 || self.levels == 0 {
            return Err(Error::invalid(
                "train config",
                "batch size, crop size and levels must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions::new(self.levels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Index of the step just taken (0-based).
    pub step: u64,
    pub lr: f64,
    pub loss: LossReport,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    /// Steps taken so far; the next step uses this index for its rate.
    pub step: u64,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(model.params(), config.betas, config.weight_decay);
        Ok(Trainer {
            model,
            optimizer,
            config,
            step: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(
            self.step,
            self.config.steps,
            self.config.lr_start,
            self.config.lr_end,
        )
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Loss of the model on a batch without updating anything.
    pub fn loss(&self, batch: &Batch) -> Result<LossReport> {
        let params = self.model.params().bind(false);
        let out = self.model.forward(
            &params,
            &batch.frame0,
            &batch.frame1,
            &batch.t,
            &self.config.run_options(),
        )?;
        Ok(interpolation_loss(&out.frame, &Var::constant(batch.gt.clone()))?.1)
    }

    /// Forward, loss at the bottom level, reverse pass and one AdamW update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let params = self.model.params().bind(true);
        let out = self.model.forward(
            &params,
            &batch.frame0,
            &batch.frame1,
            &batch.t,
            &self.config.run_options(),
        )?;
        let (loss, report) = interpolation_loss(&out.frame, &Var::constant(batch.gt.clone()))?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite {
                op: "train_step",
                what: "the loss".into(),
            });
        }
        let grads = params.gradients(&loss.backward()?);
        drop(out);
        for ((name, _), g) in self.model.params().named().iter().zip(&grads) {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: "train_step",
                    what: format!("the gradient of {name}"),
                });
            }
        }
        let lr = self.lr();
        self.optimizer.step(self.model.params_mut(), &grads, lr)?;
        let report = StepReport {
            step: self.step,
            lr,
            loss: report,
        };
        self.step += 1;
        Ok(report)
    }

    /// Weights plus optimizer moments as extra named tensors; the step
    /// count and training settings go in the header.
    pub fn checkpoint(&self) -> WeightFile {
        let mut file = WeightFile::from_model(&self.model);
        let names: Vec<String> = file.tensors.iter().map(|(n, _)| n.clone()).collect();
        for (prefix, moments) in [(ADAM_M, &self.optimizer.m), (ADAM_V, &self.optimizer.v)] {
            for (n, t) in names.iter().zip(moments) {
                file.tensors.push((format!("{prefix}{n}"), t.clone()));
            }
        }
        file.header = FileHeader {
            model: self.model.config().clone(),
            step: Some(self.step),
            train: serde_json::to_value(&self.config).ok(),
        };
        file
    }

    /// Continue from a checkpoint. `config` overrides the stored settings
    /// (for example a longer schedule); otherwise they are reused.
    pub fn resume(file: &WeightFile, config: Option<TrainConfig>) -> Result<Self> {
        let config = match config {
            Some(c) => c,
            None => {
                let v = file
                    .header
                    .train
                    .clone()
                    .ok_or_else(|| Error::invalid("resume", "file has no training settings"))?;
                serde_json::from_value(v).map_err(|e| Error::invalid("resume", e.to_string()))?
            }
        };
        let params: Vec<(String, Tensor<f32>)> = file
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("adam."))
            .cloned()
            .collect();
        let store = ParamStore::from_named(&file.header.model, &params)
            .map_err(|e| WeightsError::Malformed(e.to_string()))?;
        let model = Model::from_params(file.header.model.clone(), store)?;
        let mut trainer = Trainer::new(model, config)?;
        let names: Vec<String> = trainer
            .model
            .params()
            .named()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (i, n) in names.iter().enumerate() {
            if let (Some(m), Some(v)) = (
                file.tensor(&format!("{ADAM_M}{n}")),
                file.tensor(&format!("{ADAM_V}{n}")),
            ) {
                trainer.optimizer.m[i] = m.clone();
                trainer.optimizer.v[i] = v.clone();
            }
        }
        trainer.step = file.header.step.unwrap_or(0);
        trainer.optimizer.steps = trainer.step;
        Ok(trainer)
    }
}

/// Where training triplets come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    Synthetic(SceneSpec),
    Folder(TripletDataset),
}

/// Seeded stream of augmented batches.
pub struct BatchSampler {
    source: DataSource,
    rng: ChaCha8Rng,
    crop: usize,
}

impl BatchSampler {
    /// `offset` (usually the resume step) picks an independent stream.
    pub fn new(source: DataSource, seed: u64, offset: u64, crop: usize) -> Self {
        let s = seed ^ offset.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        BatchSampler {
            source,
            rng: ChaCha8Rng::seed_from_u64(s),
            crop,
        }
    }

    pub fn sample(&mut self) -> Result<Triplet> {
        let raw = match &self.source {
            DataSource::Synthetic(spec) => synth_scene(&mut self.rng, spec)?,
            DataSource::Folder(ds) => {
                let i = self.rng.gen_range(0..ds.len());
                ds.load(i)?
            }
        };
        augment(&raw, &mut self.rng, self.crop)
    }

    pub fn next_batch(&mut self, n: usize) -> Result<Batch> {
        let items = (0..n).map(|_| self.sample()).collect::<Result<Vec<_>>>()?;
        Batch::from_triplets(&items)
    }
}

/// Train until the schedule ends, reporting every step.
pub fn run(
    trainer: &mut Trainer,
    sampler: &mut BatchSampler,
    mut on_step: impl FnMut(&StepReport),
) -> Result<()> {
    while !trainer.finished() {
        let batch = sampler.next_batch(trainer.config.batch_size)?;
        let report = trainer.train_step(&batch)?;
        on_step(&report);
    }
    Ok(())
}

/// Per-sample PSNR and SSIM.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl EvalSummary {
    pub fn push(&mut self, pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<()> {
        self.psnr.push(psnr(pred, gt)?);
        self.ssim.push(ssim(pred, gt)?);
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(I0 + I1) / 2`, the reference any interpolator should beat.
pub fn frame_average(t: &Triplet) -> Tensor<f32> {
    t.frame0.zip_map(&t.frame1, |a, b| 0.5 * (a + b))
}

/// Interpolate every triplet at its own time and score against the truth.
pub fn evaluate(
    model: &Model<f32>,
    triplets: &[Triplet],
    opts: &RunOptions,
) -> Result<EvalSummary> {
    let params = model.params().bind(false);
    let mut summary = EvalSummary::default();
    for t in triplets {
        let out = model.forward(&params, &t.frame0, &t.frame1, &[t.t], opts)?;
        let pred = out.frame.value().map(|v| v.clamp(0.0, 1.0));
        summary.push(&pred, &t.gt)?;
    }
    Ok(summary)
}

/// Scores of the frame-average baseline.
pub fn evaluate_frame_average(triplets: &[Triplet]) -> Result<EvalSummary> {
    let mut summary = EvalSummary::default();
    for t in triplets {
        summary.push(&frame_average(t), &t.gt)?;
    }
    Ok(summary)
}
