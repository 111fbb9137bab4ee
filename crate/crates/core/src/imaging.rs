//! Frame ingestion and emission, image pyramids, flow rescaling and the
//! reflect padding that makes input sizes divisible by the pyramid stride.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::resize::{bilinear_resize_raw, resize_flow};
use crate::tensor::{ops, Real, Tensor, Var};

/// Shorter side of the coarsest pyramid level must be at least this.
pub const MIN_LEVEL_SIDE: usize = 16;

/// An RGB image of shape `(1, 3, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(Tensor<f32>);

impl Frame {
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        if t.batch() != 1 {
            return Err(Error::shape("Frame", "batch", 1, t.batch()));
        }
        if t.channels() != 3 {
            return Err(Error::shape("Frame", "channels", 3, t.channels()));
        }
        Ok(Frame(t))
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Frame(Tensor::full([1, 3, height, width], value))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn clamped(&self) -> Frame {
        Frame(self.0.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Bit depth used by [`save_frame_with_depth`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Read an 8- or 16-bit grayscale or RGB PNG into `[0, 1]`. Alpha is ignored;
/// gray images are replicated into the three channels.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img_err = |msg: String| Error::Image {
        path: path.to_path_buf(),
        msg,
    };
    let reader = ImageReader::open(path)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(img_err("unsupported format, expected PNG".into()));
    }
    let img = reader.decode().map_err(|e| img_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    let mut fill = |channels: usize, max: f32, samples: &mut dyn Iterator<Item = f32>| {
        for (i, v) in samples.enumerate() {
            let (p, ch) = (i / channels, i % channels);
            let v = v / max;
            match channels {
                1 | 2 if ch == 0 => {
                    for c in 0..3 {
                        data[c * plane + p] = v;
                    }
                }
                3 | 4 if ch < 3 => data[ch * plane + p] = v,
                _ => {}
            }
        }
    };
    match &img {
        DynamicImage::ImageLuma8(b) => fill(1, 255.0, &mut b.as_raw().iter().map(|&v| v as f32)),
        DynamicImage::ImageLumaA8(b) => fill(2, 255.0, &mut b.as_raw().iter().map(|&v| v as f32)),
        DynamicImage::ImageRgb8(b) => fill(3, 255.0, &mut b.as_raw().iter().map(|&v| v as f32)),
        DynamicImage::ImageRgba8(b) => fill(4, 255.0, &mut b.as_raw().iter().map(|&v| v as f32)),
        DynamicImage::ImageLuma16(b) => fill(1, 65535.0, &mut b.as_raw().iter().map(|&v| v as f32)),
        DynamicImage::ImageLumaA16(b) => {
            fill(2, 65535.0, &mut b.as_raw().iter().map(|&v| v as f32))
        }
        DynamicImage::ImageRgb16(b) => fill(3, 65535.0, &mut b.as_raw().iter().map(|&v| v as f32)),
        DynamicImage::ImageRgba16(b) => fill(4, 65535.0, &mut b.as_raw().iter().map(|&v| v as f32)),
        other => {
            return Err(img_err(format!(
                "unsupported pixel layout {:?}",
                other.color()
            )))
        }
    }
    Frame::new(Tensor::from_vec([1, 3, h, w], data)?)
}

/// Write an 8-bit RGB PNG; values are clamped to `[0, 1]`.
pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    save_frame_with_depth(frame, path, BitDepth::Eight)
}

pub fn save_frame_with_depth(frame: &Frame, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (frame.height(), frame.width());
    let plane = h * w;
    let data = frame.tensor().data();
    let interleaved = |max: f32| -> Vec<f32> {
        (0..plane * 3)
            .map(|i| (data[(i % 3) * plane + i / 3].clamp(0.0, 1.0) * max).round())
            .collect()
    };
    let img = match depth {
        BitDepth::Eight => {
            let buf: Vec<u8> = interleaved(255.0).into_iter().map(|v| v as u8).collect();
            DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size"),
            )
        }
        BitDepth::Sixteen => {
            let buf: Vec<u16> = interleaved(65535.0).into_iter().map(|v| v as u16).collect();
            DynamicImage::ImageRgb16(
                image::ImageBuffer::from_raw(w as u32, h as u32, buf).expect("buffer size"),
            )
        }
    };
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::Image {
                path: path.to_path_buf(),
                msg: other.to_string(),
            },
        })
}

/// Size of pyramid level `level` for a base of `h x w`.
pub fn level_size(h: usize, w: usize, level: usize) -> (usize, usize) {
    let d = 1usize << level;
    (h.div_ceil(d), w.div_ceil(d))
}

/// Image pyramid, level 0 at full resolution.
#[derive(Clone, Debug)]
pub struct FramePyramid<T: Real = f32> {
    levels: Vec<Tensor<T>>,
}

impl<T: Real> FramePyramid<T> {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, l: usize) -> &Tensor<T> {
        &self.levels[l]
    }

    pub fn top(&self) -> &Tensor<T> {
        self.levels.last().expect("non-empty pyramid")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.levels.iter()
    }
}

/// Build a pyramid by repeated factor-2 bilinear downsampling (a 2x2 box
/// filter on even sizes), rounding odd sizes up.
pub fn build_pyramid<T: Real>(frame: &Tensor<T>, levels: usize) -> Result<FramePyramid<T>> {
    if levels == 0 {
        return Err(Error::invalid("build_pyramid", "need at least one level"));
    }
    let (h, w) = level_size(frame.height(), frame.width(), levels - 1);
    if h.min(w) < MIN_LEVEL_SIDE {
        return Err(Error::invalid(
            "build_pyramid",
            format!(
                "coarsest of {levels} levels would be {w}x{h}, below {MIN_LEVEL_SIDE} px; use fewer levels"
            ),
        ));
    }
    let mut out = vec![frame.clone()];
    for l in 1..levels {
        let prev = &out[l - 1];
        let (nh, nw) = (prev.height().div_ceil(2), prev.width().div_ceil(2));
        out.push(bilinear_resize_raw(prev, nh, nw));
    }
    Ok(FramePyramid { levels: out })
}

/// Double the resolution of a flow field and double its values.
pub fn upsample_flow_2x<T: Real>(flow: &Var<T>) -> Result<Var<T>> {
    let [_, _, h, w] = flow.shape();
    resize_flow(flow, 2 * h, 2 * w)
}

/// Linear time scaling of a flow field, `factor` in `[0, 1]`.
pub fn scale_flow_time<T: Real>(flow: &Var<T>, factor: T) -> Result<Var<T>> {
    if !(factor >= T::zero() && factor <= T::one()) {
        return Err(Error::invalid(
            "scale_flow_time",
            format!("factor {factor} outside [0, 1]"),
        ));
    }
    ops::scale(flow, factor)
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflect-pad on the bottom and right so both sides are multiples of `multiple`.
pub fn pad_to_multiple<T: Real>(t: &Tensor<T>, multiple: usize) -> Tensor<T> {
    let [n, c, h, w] = t.shape();
    let (ph, pw) = (
        h.div_ceil(multiple) * multiple,
        w.div_ceil(multiple) * multiple,
    );
    if (ph, pw) == (h, w) {
        return t.clone();
    }
    Tensor::from_fn([n, c, ph, pw], |[b, ch, y, x]| {
        t.at(b, ch, reflect(y as isize, h), reflect(x as isize, w))
    })
}

/// Top-left `h x w` window.
pub fn crop<T: Real>(t: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    if (t.height(), t.width()) == (h, w) {
        return t.clone();
    }
    let [n, c, _, _] = t.shape();
    Tensor::from_fn([n, c, h, w], |[b, ch, y, x]| t.at(b, ch, y, x))
}
