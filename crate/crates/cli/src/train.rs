use std::fs::OpenOptions;
use std::path::Path;

use vfi_core::model::weights::{load_weight_file, save_weight_file};
use vfi_core::model::{Model, ModelConfig, Variant};
use vfi_core::train::{BatchSampler, DataSource, SceneSpec, TrainConfig, Trainer, TripletDataset};

use crate::exit::{CliError, CliResult};
use crate::TrainArgs;

fn apply_overrides(c: &mut TrainConfig, a: &TrainArgs) {
    macro_rules! set {
        ($field:ident, $arg:ident) => {
            if let Some(v) = a.$arg {
                c.$field = v;
            }
        };
    }
    set!(steps, steps);
    set!(batch_size, batch);
    set!(crop_size, crop);
    set!(levels, levels);
    set!(seed, seed);
    set!(lr_start, lr_start);
    set!(lr_end, lr_end);
    set!(weight_decay, weight_decay);
    set!(motion_max, motion_max);
}

fn model_config(a: &TrainArgs, levels: usize) -> CliResult<ModelConfig> {
    let mut config = match (&a.variant, a.channel_scale) {
        (Some(v), _) => ModelConfig::variant(
            Variant::parse(v).ok_or_else(|| CliError::usage(format!("unknown variant `{v}`")))?,
        ),
        (None, Some(s)) => ModelConfig::scaled(s)?,
        (None, None) => ModelConfig::base(),
    };
    config.train_levels = levels;
    Ok(config)
}

fn new_trainer(a: &TrainArgs) -> CliResult<Trainer> {
    if let Some(path) = &a.resume {
        if a.variant.is_some() || a.channel_scale.is_some() {
            return Err(CliError::usage(
                "the model size of a resumed run comes from its checkpoint",
            ));
        }
        let file = load_weight_file(path)?;
        let mut trainer = match file.header.train {
            Some(_) => Trainer::resume(&file, None)?,
            None => Trainer::resume(&file, Some(TrainConfig::default()))?,
        };
        apply_overrides(&mut trainer.config, a);
        trainer.config.validate()?;
        log::info!(
            "resuming {} at step {} of {} (lr {:.3e})",
            path.display(),
            trainer.step,
            trainer.config.steps,
            trainer.lr()
        );
        return Ok(trainer);
    }
    let mut config = TrainConfig::default();
    apply_overrides(&mut config, a);
    let model = Model::new(model_config(a, config.levels)?, config.seed);
    log::info!(
        "new model: channel scale {}, {} parameters",
        model.config().channel_scale,
        model.params().count()
    );
    Ok(Trainer::new(model, config)?)
}

fn data_source(a: &TrainArgs, c: &TrainConfig) -> CliResult<DataSource> {
    if a.data == "synthetic" {
        let size = a.scene_size.unwrap_or(c.crop_size);
        if size < c.crop_size {
            return Err(CliError::usage(format!(
                "scene size {size} below crop {}",
                c.crop_size
            )));
        }
        return Ok(DataSource::Synthetic(SceneSpec::new(size, c.motion_max)));
    }
    let root = Path::new(&a.data);
    let index = a.index.clone().unwrap_or_else(|| root.join("index.txt"));
    Ok(DataSource::Folder(TripletDataset::open(root, index)?))
}

fn save(trainer: &Trainer, path: &Path) -> CliResult {
    save_weight_file(&trainer.checkpoint(), path)?;
    log::info!("wrote {} at step {}", path.display(), trainer.step);
    Ok(())
}

pub fn run(a: &TrainArgs) -> CliResult {
    let mut trainer = new_trainer(a)?;
    let source = data_source(a, &trainer.config)?;
    let mut sampler = BatchSampler::new(
        source,
        trainer.config.seed,
        trainer.step,
        trainer.config.crop_size,
    );
    let mut curve = match &a.loss_csv {
        Some(p) => {
            // A resumed run extends an existing curve.
            let append = a.resume.is_some() && p.exists();
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(p)
                .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            let mut w = csv::Writer::from_writer(file);
            if !append {
                w.write_record(["step", "lr", "charbonnier", "census", "total"])?;
            }
            Some(w)
        }
        None => None,
    };
    let log_every = a.log_every.max(1);
    while !trainer.finished() {
        let batch = sampler.next_batch(trainer.config.batch_size)?;
        let r = trainer.train_step(&batch)?;
        if let Some(w) = curve.as_mut() {
            w.write_record([
                r.step.to_string(),
                format!("{:.6e}", r.lr),
                format!("{:.6}", r.loss.charbonnier),
                format!("{:.6}", r.loss.census),
                format!("{:.6}", r.loss.total),
            ])?;
        }
        if (r.step + 1) % log_every == 0 || trainer.finished() {
            log::info!(
                "step {}/{}: loss {:.5} (charbonnier {:.5}, census {:.5}) lr {:.3e}",
                r.step + 1,
                trainer.config.steps,
                r.loss.total,
                r.loss.charbonnier,
                r.loss.census,
                r.lr
            );
        }
        if let Some(k) = a.save_every.filter(|&k| k > 0) {
            if trainer.step % k == 0 && !trainer.finished() {
                if let Some(w) = curve.as_mut() {
                    w.flush()?;
                }
                save(&trainer, &a.out)?;
            }
        }
    }
    if let Some(mut w) = curve {
        w.flush()?;
    }
    save(&trainer, &a.out)
}
