//! Training triplets: procedural synthetic scenes, augmentation, and
//! folder datasets with an index file.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::load_frame;
use crate::tensor::Tensor;

/// Two input frames and the ground truth between them at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub frame0: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub frame1: Tensor<f32>,
    pub t: f32,
}

impl Triplet {
    pub fn new(frame0: Tensor<f32>, gt: Tensor<f32>, frame1: Tensor<f32>, t: f32) -> Result<Self> {
        for (what, f) in [("middle frame", &gt), ("second frame", &frame1)] {
            if f.shape() != frame0.shape() {
                return Err(Error::Dataset(format!(
                    "{what} is {:?}, first frame is {:?}",
                    f.shape(),
                    frame0.shape()
                )));
            }
        }
        if frame0.batch() != 1 || frame0.channels() != 3 {
            return Err(Error::Dataset(format!(
                "frames must be 1x3xHxW, got {:?}",
                frame0.shape()
            )));
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Dataset(format!("t = {t} outside (0, 1)")));
        }
        Ok(Triplet {
            frame0,
            gt,
            frame1,
            t,
        })
    }

    pub fn height(&self) -> usize {
        self.frame0.height()
    }

    pub fn width(&self) -> usize {
        self.frame0.width()
    }
}

/// Parameters of a synthetic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Range of the per-layer displacement magnitude between the two inputs.
    pub motion: (f64, f64),
    /// Inclusive range of foreground rectangles.
    pub rects: (usize, usize),
    /// Round each layer's half displacement to whole pixels.
    pub integer_motion: bool,
}

impl SceneSpec {
    pub fn new(size: usize, motion_max: f64) -> Self {
        SceneSpec {
            height: size,
            width: size,
            motion: (0.0, motion_max),
            rects: (1, 4),
            integer_motion: false,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
#[derive(Clone, Copy, Debug)]
struct Texture {
    seed: u64,
    cell: f64,
    base: [f64; 3],
    amp: [f64; 3],
}

impl Texture {
    fn random(rng: &mut impl Rng) -> Self {
        let base = [0; 3].map(|_| rng.gen_range(0.15..0.85));
        Texture {
            seed: rng.gen(),
            cell: rng.gen_range(6.0..20.0),
            base,
            amp: base.map(|b: f64| rng.gen_range(0.15..0.4f64).min(b - 0.02).min(0.98 - b)),
        }
    }

    fn lattice(&self, ix: i64, iy: i64, octave: u64) -> f64 {
        let h = mix(self.seed
            ^ mix((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64) ^ (octave << 56)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn noise(&self, x: f64, y: f64, octave: u64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (ax, ay) = (x - fx, y - fy);
        let (sx, sy) = (ax * ax * (3.0 - 2.0 * ax), ay * ay * (3.0 - 2.0 * ay));
        let (ix, iy) = (fx as i64, fy as i64);
        let top = self.lattice(ix, iy, octave) * (1.0 - sx) + self.lattice(ix + 1, iy, octave) * sx;
        let bot = self.lattice(ix, iy + 1, octave) * (1.0 - sx)
            + self.lattice(ix + 1, iy + 1, octave) * sx;
        top * (1.0 - sy) + bot * sy
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let coarse = self.noise(x / self.cell, y / self.cell, 0);
        let fine = self.noise(x * 2.0 / self.cell, y * 2.0 / self.cell, 1);
        let v = 2.0 * (0.65 * coarse + 0.35 * fine) - 1.0;
        [0, 1, 2].map(|c| self.base[c] + self.amp[c] * v)
    }
}

struct Layer {
    texture: Texture,
    /// Axis-aligned box in layer coordinates; `None` covers the plane.
    rect: Option<(f64, f64, f64, f64)>,
    velocity: (f64, f64),
}

fn draw_velocity(rng: &mut impl Rng, spec: &SceneSpec) -> (f64, f64) {
    let (lo, hi) = spec.motion;
    let mag = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
    let v = (mag * ang.cos(), mag * ang.sin());
    if spec.integer_motion {
        (2.0 * (v.0 / 2.0).round(), 2.0 * (v.1 / 2.0).round())
    } else {
        v
    }
}

fn render(layers: &[Layer], h: usize, w: usize, tau: f64) -> Tensor<f32> {
    let mut out = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0; 3];
            for l in layers {
                let (lx, ly) = (x as f64 - tau * l.velocity.0, y as f64 - tau * l.velocity.1);
                let inside = match l.rect {
                    None => true,
                    Some((x0, y0, x1, y1)) => lx >= x0 && lx < x1 && ly >= y0 && ly < y1,
                };
                if inside {
                    px = l.texture.sample(lx, ly);
                }
            }
            for (c, v) in px.iter().enumerate() {
                out.set(0, c, y, x, *v as f32);
            }
        }
    }
    out
}

/// A layered scene of a textured background and textured rectangles, each
/// translating with its own velocity `v`: the inputs show the layers at
/// `-v/2` and `+v/2`, the ground truth at 0.
pub fn synth_scene(rng: &mut impl Rng, spec: &SceneSpec) -> Result<Triplet> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(Error::invalid("synth_scene", "empty frame size"));
    }
    let limit = h.min(w) as f64 / 4.0;
    let (lo, hi) = spec.motion;
    if !(lo >= 0.0 && lo <= hi && (hi == 0.0 || hi < limit)) {
        return Err(Error::invalid(
            "synth_scene",
            format!(
                "motion range {:?} must lie in [0, {limit}) for a {w}x{h} frame",
                spec.motion
            ),
        ));
    }
    if spec.rects.0 > spec.rects.1 {
        return Err(Error::invalid("synth_scene", "rectangle range is reversed"));
    }
    let mut layers = vec![Layer {
        texture: Texture::random(rng),
        rect: None,
        velocity: draw_velocity(rng, spec),
    }];
    let count = rng.gen_range(spec.rects.0..=spec.rects.1);
    for _ in 0..count {
        let rw = rng.gen_range(0.2..0.55) * w as f64;
        let rh = rng.gen_range(0.2..0.55) * h as f64;
        let x0 = rng.gen_range(0.0..(w as f64 - rw).max(1.0));
        let y0 = rng.gen_range(0.0..(h as f64 - rh).max(1.0));
        layers.push(Layer {
            texture: Texture::random(rng),
            rect: Some((x0, y0, x0 + rw, y0 + rh)),
            velocity: draw_velocity(rng, spec),
        });
    }
    Triplet::new(
        render(&layers, h, w, -0.5),
        render(&layers, h, w, 0.0),
        render(&layers, h, w, 0.5),
        0.5,
    )
}

/// Square scene with displacement magnitudes up to `motion_max`.
pub fn synth_triplet(rng: &mut impl Rng, size: usize, motion_max: f64) -> Result<Triplet> {
    synth_scene(rng, &SceneSpec::new(size, motion_max))
}

fn map_frames(t: &Triplet, f: impl Fn(&Tensor<f32>) -> Tensor<f32>) -> Triplet {
    Triplet {
        frame0: f(&t.frame0),
        gt: f(&t.gt),
        frame1: f(&t.frame1),
        t: t.t,
    }
}

/// Window of `h x w` at `(y, x)`.
pub fn crop_triplet(t: &Triplet, y: usize, x: usize, h: usize, w: usize) -> Result<Triplet> {
    if y + h > t.height() || x + w > t.width() || h == 0 || w == 0 {
        return Err(Error::invalid(
            "crop",
            format!(
                "window {w}x{h} at ({x}, {y}) outside {}x{}",
                t.width(),
                t.height()
            ),
        ));
    }
    Ok(map_frames(t, |f| {
        Tensor::from_fn([1, 3, h, w], |[_, c, yy, xx]| f.at(0, c, y + yy, x + xx))
    }))
}

pub fn flip_horizontal(t: &Triplet) -> Triplet {
    map_frames(t, |f| {
        let w = f.width();
        Tensor::from_fn(f.shape(), |[_, c, y, x]| f.at(0, c, y, w - 1 - x))
    })
}

pub fn flip_vertical(t: &Triplet) -> Triplet {
    map_frames(t, |f| {
        let h = f.height();
        Tensor::from_fn(f.shape(), |[_, c, y, x]| f.at(0, c, h - 1 - y, x))
    })
}

/// Rotate by 90 degrees counter-clockwise `quarters` times.
pub fn rotate90(t: &Triplet, quarters: usize) -> Triplet {
    let mut out = t.clone();
    for _ in 0..quarters % 4 {
        out = map_frames(&out, |f| {
            let (h, w) = (f.height(), f.width());
            Tensor::from_fn([1, 3, w, h], |[_, c, y, x]| f.at(0, c, x, w - 1 - y))
        });
    }
    out
}

/// Swap the inputs and mirror the time.
pub fn reverse(t: &Triplet) -> Triplet {
    Triplet {
        frame0: t.frame1.clone(),
        gt: t.gt.clone(),
        frame1: t.frame0.clone(),
        t: 1.0 - t.t,
    }
}

/// Random crop to `crop x crop`, flips, quarter rotations (square crops
/// only) and temporal reversal.
pub fn augment(t: &Triplet, rng: &mut impl Rng, crop: usize) -> Result<Triplet> {
    if crop > t.height() || crop > t.width() {
        return Err(Error::invalid(
            "augment",
            format!(
                "crop {crop} larger than the {}x{} triplet",
                t.width(),
                t.height()
            ),
        ));
    }
    let y = rng.gen_range(0..=t.height() - crop);
    let x = rng.gen_range(0..=t.width() - crop);
    let mut out = crop_triplet(t, y, x, crop, crop)?;
    if rng.gen_bool(0.5) {
        out = flip_horizontal(&out);
    }
    if rng.gen_bool(0.5) {
        out = flip_vertical(&out);
    }
    out = rotate90(&out, rng.gen_range(0..4));
    if rng.gen_bool(0.5) {
        out = reverse(&out);
    }
    Ok(out)
}

/// Batched frames, `(n, 3, h, w)` each, with one time per item.
#[derive(Clone, Debug)]
pub struct Batch {
    pub frame0: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub frame1: Tensor<f32>,
    pub t: Vec<f32>,
}

impl Batch {
    pub fn from_triplets(items: &[Triplet]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        let stack = |f: fn(&Triplet) -> &Tensor<f32>| {
            Tensor::stack(&items.iter().map(f).collect::<Vec<_>>())
        };
        Ok(Batch {
            frame0: stack(|t| &t.frame0)?,
            gt: stack(|t| &t.gt)?,
            frame1: stack(|t| &t.frame1)?,
            t: items.iter().map(|t| t.t).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Sample directories named by an index file, each holding `im1.png`,
/// `im2.png` (ground truth at t = 0.5) and `im3.png`.
#[derive(Clone, Debug)]
pub struct TripletDataset {
    pub root: PathBuf,
    pub samples: Vec<String>,
}

impl TripletDataset {
    /// One relative sample path per line; blank lines and `#` comments are
    /// skipped.
    pub fn open(root: impl AsRef<Path>, index: impl AsRef<Path>) -> Result<Self> {
        let index = index.as_ref();
        let text = std::fs::read_to_string(index).map_err(|source| Error::Io {
            path: index.to_path_buf(),
            source,
        })?;
        let samples: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        if samples.is_empty() {
            return Err(Error::Dataset(format!(
                "index {} lists no samples",
                index.display()
            )));
        }
        Ok(TripletDataset {
            root: root.as_ref().to_path_buf(),
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn load(&self, i: usize) -> Result<Triplet> {
        let dir = self.root.join(&self.samples[i]);
        let f = |name: &str| load_frame(dir.join(name)).map(|f| f.into_tensor());
        Triplet::new(f("im1.png")?, f("im2.png")?, f("im3.png")?, 0.5)
            .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))
    }
}
