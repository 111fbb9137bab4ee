use std::collections::HashMap;
use std::io::Write;

use vfi_core::loss::{psnr, ssim};
use vfi_core::model::load_weights;
use vfi_core::train::TripletDataset;
use vfi_core::{Frame, RunOptions};

use crate::exit::{CliError, CliResult};
use crate::EvalArgs;

pub fn run(args: &EvalArgs) -> CliResult {
    let index = args
        .index
        .clone()
        .unwrap_or_else(|| args.data.join("index.txt"));
    let dataset = TripletDataset::open(&args.data, &index)?;
    let model = load_weights(&args.weights, None)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(
            std::fs::File::create(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record(["sample_path", "psnr_db", "ssim"])?;
    let mut plans: HashMap<(usize, usize), RunOptions> = HashMap::new();
    let (mut sum_p, mut sum_s) = (0.0, 0.0);
    for (i, name) in dataset.samples.iter().enumerate() {
        let triplet = dataset.load(i)?;
        let (h, w) = (triplet.height(), triplet.width());
        let opts = match plans.get(&(h, w)) {
            Some(o) => o.clone(),
            None => {
                let o = args.pyramid.run_options(model.config(), h, w)?;
                plans.insert((h, w), o.clone());
                o
            }
        };
        let pred = model.interpolate(
            &Frame::new(triplet.frame0)?,
            &Frame::new(triplet.frame1)?,
            triplet.t,
            &opts,
        )?;
        let p = psnr(pred.tensor(), &triplet.gt)?;
        let s = ssim(pred.tensor(), &triplet.gt)?;
        sum_p += p;
        sum_s += s;
        csv.write_record([name.as_str(), &format!("{p:.4}"), &format!("{s:.6}")])?;
        log::debug!("{name}: {p:.4} dB, ssim {s:.6}");
    }
    let n = dataset.len() as f64;
    let (mp, ms) = (sum_p / n, sum_s / n);
    csv.write_record(["mean", &format!("{mp:.4}"), &format!("{ms:.6}")])?;
    csv.flush()?;
    log::info!(
        "{} samples: mean PSNR {mp:.4} dB, mean SSIM {ms:.6}",
        dataset.len()
    );
    Ok(())
}
