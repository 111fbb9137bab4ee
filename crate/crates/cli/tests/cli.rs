use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vfi_core::imaging::save_frame;
use vfi_core::{Frame, Tensor};

fn vfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfi"))
        .args(args)
        .env_remove("VFI_LOG")
        .output()
        .expect("spawn vfi")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Smooth colour gradient shifted right by `dx` pixels.
fn gradient(h: usize, w: usize, dx: f32) -> Frame {
    let t = Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        let u = (x as f32 - dx) / w as f32;
        let v = y as f32 / h as f32;
        (0.2 + 0.3 * u + 0.2 * v + 0.1 * c as f32).clamp(0.0, 1.0)
    });
    Frame::new(t).unwrap()
}

fn write_png(dir: &Path, name: &str, f: &Frame) -> PathBuf {
    let path = dir.join(name);
    save_frame(f, &path).unwrap();
    path
}

/// A tiny untrained checkpoint.
fn tiny_weights(dir: &Path) -> PathBuf {
    let out = dir.join("w.upr");
    let o = vfi(&[
        "train",
        "--out",
        p(&out),
        "--steps",
        "0",
        "--channel-scale",
        "0.25",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&vfi(&["--help"])), 0);
    assert_eq!(code(&vfi(&[])), 2);
    assert_eq!(code(&vfi(&["interpolate"])), 2);
    assert_eq!(code(&vfi(&["bench", "--op", "fft"])), 2);
    assert_eq!(code(&vfi(&["--threads", "0", "selftest"])), 2);
}

#[test]
fn interpolate_writes_one_frame_per_time() {
    let dir = TempDir::new().unwrap();
    let w = tiny_weights(dir.path());
    let a = write_png(dir.path(), "a.png", &gradient(48, 64, 0.0));
    let b = write_png(dir.path(), "b.png", &gradient(48, 64, 2.0));
    let pattern = dir.path().join("out/f_{t}.png");
    let o = vfi(&[
        "interpolate",
        "--frame0",
        p(&a),
        "--frame1",
        p(&b),
        "--weights",
        p(&w),
        "--times",
        "1/8,2/8,3/8,4/8,5/8,6/8,7/8",
        "--out",
        p(&pattern),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "f_0.125.png",
            "f_0.25.png",
            "f_0.375.png",
            "f_0.5.png",
            "f_0.625.png",
            "f_0.75.png",
            "f_0.875.png"
        ]
    );
    let f = vfi_core::imaging::load_frame(dir.path().join("out/f_0.5.png")).unwrap();
    assert_eq!((f.height(), f.width()), (48, 64));
    assert!(stdout(&o).is_empty(), "data goes to files, not stdout");

    let o = vfi(&[
        "interpolate",
        "--frame0",
        p(&a),
        "--frame1",
        p(&b),
        "--weights",
        p(&w),
        "--multi",
        "4",
        "--out",
        p(&dir.path().join("m_{i}.png")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..3 {
        assert!(dir.path().join(format!("m_{i}.png")).exists());
    }
}

#[test]
fn auto_levels_scale_with_width() {
    let dir = TempDir::new().unwrap();
    let w = tiny_weights(dir.path());
    // 1280 wide; 200 rows is the least height that still fits five levels.
    let a = write_png(dir.path(), "a.png", &gradient(200, 1280, 0.0));
    let b = write_png(dir.path(), "b.png", &gradient(200, 1280, 1.0));
    let o = vfi(&[
        "interpolate",
        "--frame0",
        p(&a),
        "--frame1",
        p(&b),
        "--weights",
        p(&w),
        "--out",
        p(&dir.path().join("mid.png")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stderr(&o).contains("pyramid: 5 levels for 1280x200"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn interpolate_failures_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let w = tiny_weights(dir.path());
    let a = write_png(dir.path(), "a.png", &gradient(32, 32, 0.0));
    let b = write_png(dir.path(), "b.png", &gradient(32, 32, 1.0));
    let c = write_png(dir.path(), "c.png", &gradient(32, 48, 1.0));
    let out = dir.path().join("x.png");
    let run = |f0: &Path, f1: &Path, weights: &Path, t: &str| {
        code(&vfi(&[
            "interpolate",
            "--frame0",
            p(f0),
            "--frame1",
            p(f1),
            "--weights",
            p(weights),
            "--times",
            t,
            "--out",
            p(&out),
        ]))
    };
    let missing = run(&a, &b, &dir.path().join("nope.upr"), "0.5");
    let mismatch = run(&a, &c, &w, "0.5");
    let bad_t = run(&a, &b, &w, "1.5");
    assert_eq!((missing, mismatch, bad_t), (5, 3, 2));

    let garbage = dir.path().join("garbage.upr");
    std::fs::write(&garbage, b"not weights").unwrap();
    assert_eq!(run(&a, &b, &garbage, "0.5"), 3);
}

fn write_dataset(root: &Path, samples: &[(&str, [Frame; 3])]) {
    let mut index = String::from("# sample list\n");
    for (name, frames) in samples {
        let d = root.join(name);
        std::fs::create_dir_all(&d).unwrap();
        for (f, file) in frames.iter().zip(["im1.png", "im2.png", "im3.png"]) {
            save_frame(f, d.join(file)).unwrap();
        }
        index.push_str(name);
        index.push('\n');
    }
    std::fs::write(root.join("index.txt"), index).unwrap();
}

#[test]
fn eval_writes_ordered_csv_with_mean_row() {
    let dir = TempDir::new().unwrap();
    let w = tiny_weights(dir.path());
    let data = dir.path().join("data");
    let stat = || gradient(32, 32, 0.0);
    write_dataset(
        &data,
        &[
            ("seq/b", [stat(), stat(), stat()]),
            (
                "seq/a",
                [
                    gradient(32, 32, 0.0),
                    gradient(32, 32, 1.0),
                    gradient(32, 32, 2.0),
                ],
            ),
        ],
    );
    let o = vfi(&["eval", "--data", p(&data), "--weights", p(&w)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4, "{text}");
    assert_eq!(rows[0], ["sample_path", "psnr_db", "ssim"]);
    assert_eq!(rows[1][0], "seq/b");
    assert_eq!(rows[2][0], "seq/a");
    assert_eq!(rows[3][0], "mean");
    let num = |r: usize, c: usize| rows[r][c].parse::<f64>().unwrap();
    // A static sample is reproduced by the untrained model: warps are exact
    // at zero flow and the residual head starts at zero.
    assert_eq!(num(1, 1), 99.0);
    assert!(num(1, 2) > 0.99999, "{}", num(1, 2));
    assert!((num(3, 1) - 0.5 * (num(1, 1) + num(2, 1))).abs() < 1e-3);

    let csv_path = dir.path().join("report.csv");
    let o = vfi(&[
        "eval",
        "--data",
        p(&data),
        "--weights",
        p(&w),
        "--out",
        p(&csv_path),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), text);
}

#[test]
fn eval_empty_index_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let w = tiny_weights(dir.path());
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("index.txt"), "# nothing\n\n").unwrap();
    let empty = code(&vfi(&["eval", "--data", p(&data), "--weights", p(&w)]));
    let missing = code(&vfi(&[
        "eval",
        "--data",
        p(&dir.path().join("none")),
        "--weights",
        p(&w),
    ]));
    assert_eq!((empty, missing), (3, 5));
}

fn train_args<'a>(out: &'a Path, curve: &'a Path, steps: &'a str) -> Vec<&'a str> {
    vec![
        "--threads",
        "1",
        "train",
        "--out",
        p(out),
        "--loss-csv",
        p(curve),
        "--steps",
        steps,
        "--channel-scale",
        "0.25",
        "--levels",
        "2",
        "--crop",
        "32",
        "--batch",
        "1",
        "--motion-max",
        "4",
        "--seed",
        "11",
    ]
}

#[test]
fn train_is_reproducible_and_resumes_its_schedule() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (w1, c1, w2, c2) = (
        d.join("1.upr"),
        d.join("1.csv"),
        d.join("2.upr"),
        d.join("2.csv"),
    );
    assert_eq!(code(&vfi(&train_args(&w1, &c1, "4"))), 0);
    assert_eq!(code(&vfi(&train_args(&w2, &c2, "4"))), 0);
    let curve = std::fs::read_to_string(&c1).unwrap();
    assert_eq!(curve, std::fs::read_to_string(&c2).unwrap());
    assert_eq!(std::fs::read(&w1).unwrap(), std::fs::read(&w2).unwrap());
    let header = curve.lines().next().unwrap();
    assert_eq!(header, "step,lr,charbonnier,census,total");
    assert_eq!(curve.lines().count(), 5);

    let lr_of = |csv: &str| -> Vec<String> {
        csv.lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect()
    };
    let full_lr = lr_of(&curve);

    // Two steps of a shorter schedule, then resume with the four-step one:
    // the remaining rates must match the uninterrupted run.
    let partial = d.join("partial.upr");
    let o = vfi(&[
        "--threads",
        "1",
        "train",
        "--out",
        p(&partial),
        "--steps",
        "2",
        "--channel-scale",
        "0.25",
        "--levels",
        "2",
        "--crop",
        "32",
        "--batch",
        "1",
        "--motion-max",
        "4",
        "--seed",
        "11",
    ]);
    assert_eq!(code(&o), 0);
    let resumed_curve = d.join("resumed.csv");
    let o = vfi(&[
        "--threads",
        "1",
        "train",
        "--resume",
        p(&partial),
        "--steps",
        "4",
        "--out",
        p(&d.join("r.upr")),
        "--loss-csv",
        p(&resumed_curve),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("resuming"), "{}", stderr(&o));
    let resumed = std::fs::read_to_string(&resumed_curve).unwrap();
    let steps: Vec<&str> = resumed
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(steps, ["2", "3"]);
    assert_eq!(lr_of(&resumed), full_lr[2..].to_vec());
}

#[test]
fn zero_steps_writes_initial_weights() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("init.upr");
    let o = vfi(&[
        "train",
        "--out",
        p(&out),
        "--steps",
        "0",
        "--variant",
        "base",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = vfi_core::model::load_weights(&out, None).unwrap();
    let fresh = vfi_core::Model::new(model.config().clone(), 3);
    assert_eq!(model.params(), fresh.params());
    assert!(stderr(&o).contains("1606889 parameters"), "{}", stderr(&o));
}

#[test]
fn selftest_reports_every_check() {
    let o = vfi(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("1606889 against target 1.65M"), "{text}");
    for needle in [
        "gradcheck: conv2d",
        "oracle: forward_warp_avg",
        "fusion identities",
        "level count at width 1280",
    ] {
        assert!(
            text.lines()
                .any(|l| l.starts_with("PASS") && l.contains(needle)),
            "{needle} in {text}"
        );
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn bench_reports_both_thread_counts_and_splat_modes() {
    let o = vfi(&[
        "--threads",
        "2",
        "bench",
        "--op",
        "splat",
        "--size",
        "32x24",
        "--reps",
        "5",
        "--warmup",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "case,threads,median_ms,p95_ms");
    for case in ["splat serial", "splat banded x16"] {
        for t in ["1", "2"] {
            assert!(
                lines.iter().any(|l| l.starts_with(&format!("{case},{t},"))),
                "{case} {t}: {text}"
            );
        }
        assert!(text.contains(&format!("# {case}: speedup")), "{text}");
    }
    for op in ["corr", "conv"] {
        let o = vfi(&[
            "bench",
            "--op",
            op,
            "--size",
            "16x16",
            "--channels",
            "4",
            "--reps",
            "2",
            "--warmup",
            "0",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
}
