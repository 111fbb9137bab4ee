use std::path::Path;

use vfi_core::imaging::{load_frame, save_frame_with_depth, BitDepth};
use vfi_core::model::load_weights;

use crate::exit::{CliError, CliResult};
use crate::InterpolateArgs;

/// Parse `0.25` or `1/4`; must lie in `[0, 1]`.
pub fn parse_time(s: &str) -> CliResult<f32> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad_time(s))?;
            let b: f64 = b.trim().parse().map_err(|_| bad_time(s))?;
            a / b
        }
        None => s.parse().map_err(|_| bad_time(s))?,
    };
    if !(0.0..=1.0).contains(&v) {
        return Err(CliError::usage(format!("time {s} outside [0, 1]")));
    }
    Ok(v as f32)
}

fn bad_time(s: &str) -> CliError {
    CliError::usage(format!("cannot parse time `{s}`"))
}

/// Shortest decimal that round-trips, for file names.
pub fn format_time(t: f32) -> String {
    let s = format!("{:.6}", t);
    let s = s.trim_end_matches('0');
    let s = s.strip_suffix('.').unwrap_or(s);
    s.to_string()
}

pub fn output_path(pattern: &str, t: f32, i: usize) -> String {
    pattern
        .replace("{t}", &format_time(t))
        .replace("{i}", &i.to_string())
}

pub fn resolve_times(args: &InterpolateArgs) -> CliResult<Vec<f32>> {
    let times = match args.multi {
        Some(k) if k < 2 => return Err(CliError::usage("--multi needs k >= 2")),
        Some(k) => (1..k).map(|i| i as f32 / k as f32).collect(),
        None if args.times.is_empty() => vec![0.5],
        None => args
            .times
            .iter()
            .map(|s| parse_time(s))
            .collect::<CliResult<Vec<_>>>()?,
    };
    if times.len() > 1 && !args.out.contains("{t}") && !args.out.contains("{i}") {
        return Err(CliError::usage(
            "several times need `{t}` or `{i}` in --out",
        ));
    }
    Ok(times)
}

pub fn run(args: &InterpolateArgs) -> CliResult {
    let times = resolve_times(args)?;
    let model = load_weights(&args.weights, None)?;
    let f0 = load_frame(&args.frame0)?;
    let f1 = load_frame(&args.frame1)?;
    if (f0.height(), f0.width()) != (f1.height(), f1.width()) {
        return Err(CliError::data(format!(
            "frame sizes differ: {}x{} and {}x{}",
            f0.width(),
            f0.height(),
            f1.width(),
            f1.height()
        )));
    }
    let opts = args
        .pyramid
        .run_options(model.config(), f0.height(), f0.width())?;
    let frames = model.interpolate_many(&f0, &f1, &times, &opts)?;
    let depth = if args.sixteen_bit {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    };
    for (i, (t, frame)) in times.iter().zip(&frames).enumerate() {
        let path = output_path(&args.out, *t, i);
        if let Some(dir) = Path::new(&path)
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
        {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        }
        save_frame_with_depth(frame, &path, depth)?;
        log::info!("t = {} -> {path}", format_time(*t));
    }
    Ok(())
}
