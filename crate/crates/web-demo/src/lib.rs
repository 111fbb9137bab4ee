//! Browser demo: forward splatting of a synthetic texture along a
//! user-chosen flow, the correlation volume between the two frames at a
//! clicked pixel, and PSNR/SSIM of the warp against a plain blend.
//!
//! Everything is computed by `vfi-core`; this crate only converts between
//! RGBA bytes and tensors and keeps the current scene.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfi_core::loss::{psnr, ssim};
use vfi_core::train::{synth_scene, SceneSpec};
use vfi_core::warp::{correlation_volume_raw, forward_warp_avg_raw, splat_weight_map, SplatMode};
use vfi_core::{Result, Tensor};
use wasm_bindgen::prelude::*;

/// Search radius of the correlation view.
pub const RADIUS: usize = 4;
const SIDE: usize = 2 * RADIUS + 1;
/// Colour of holes when they are highlighted.
const HOLE_RGB: [u8; 3] = [255, 0, 200];

/// Interleaved RGBA bytes of a `(1, 3, H, W)` tensor, alpha opaque.
pub fn to_rgba(t: &Tensor<f32>) -> Vec<u8> {
    let (h, w) = (t.height(), t.width());
    let mut out = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((t.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

/// Uniform translation plus a rotation about the centre; `spin` is the
/// displacement in pixels at the frame corners.
pub fn motion_field(h: usize, w: usize, dx: f32, dy: f32, spin: f32) -> Tensor<f32> {
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let k = spin / cx.hypot(cy).max(1.0);
    Tensor::from_fn([1, 2, h, w], |[_, c, y, x]| {
        let (rx, ry) = (x as f32 - cx, y as f32 - cy);
        if c == 0 {
            dx - k * ry
        } else {
            dy + k * rx
        }
    })
}

/// Colours of a 3x3 grid of samples two pixels apart around each pixel,
/// 27 channels, with each channel's patch mean removed and the vector
/// scaled to unit length. Correlation is then a cosine similarity that
/// peaks where the patches match.
fn patch_features(t: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (t.height(), t.width());
    let plane = h * w;
    let mut f = Tensor::from_fn([1, 27, h, w], |[_, k, y, x]| {
        let (c, n) = (k / 9, k % 9);
        let yy = (y as isize + 2 * (n as isize / 3 - 1)).clamp(0, h as isize - 1) as usize;
        let xx = (x as isize + 2 * (n as isize % 3 - 1)).clamp(0, w as isize - 1) as usize;
        t.at(0, c, yy, xx)
    });
    let data = f.data_mut();
    for p in 0..plane {
        for c in 0..3 {
            let mean = (0..9).map(|n| data[(9 * c + n) * plane + p]).sum::<f32>() / 9.0;
            (0..9).for_each(|n| data[(9 * c + n) * plane + p] -= mean);
        }
        let norm = (0..27)
            .map(|k| data[k * plane + p].powi(2))
            .sum::<f32>()
            .sqrt()
            .max(1e-6);
        (0..27).for_each(|k| data[k * plane + p] /= norm);
    }
    f
}

/// The current scene: a static texture, a flow field, and the second frame
/// produced by splatting the first along the whole flow.
#[wasm_bindgen]
pub struct Demo {
    frame0: Tensor<f32>,
    frame1: Tensor<f32>,
    flow: Tensor<f32>,
    corr: Tensor<f32>,
}

impl Demo {
    pub fn try_new(width: usize, height: usize, seed: u64) -> Result<Demo> {
        let spec = SceneSpec {
            height,
            width,
            ..SceneSpec::new(width.min(height), 0.0)
        };
        let scene = synth_scene(&mut ChaCha8Rng::seed_from_u64(seed), &spec)?;
        let mut demo = Demo {
            frame1: scene.frame0.clone(),
            frame0: scene.frame0,
            flow: Tensor::zeros([1, 2, height, width]),
            corr: Tensor::zeros([1, 1, 1, 1]),
        };
        demo.try_set_motion(0.0, 0.0, 0.0)?;
        Ok(demo)
    }

    pub fn try_set_motion(&mut self, dx: f32, dy: f32, spin: f32) -> Result<()> {
        let (h, w) = (self.frame0.height(), self.frame0.width());
        self.flow = motion_field(h, w, dx, dy, spin);
        self.frame1 = forward_warp_avg_raw(&self.frame0, &self.flow, SplatMode::Serial)?;
        self.corr = correlation_volume_raw(
            &patch_features(&self.frame0),
            &patch_features(&self.frame1),
            RADIUS,
        )?;
        Ok(())
    }

    /// Frame 0 pushed along `t` times the flow, with optional hole colouring.
    pub fn try_splat(&self, t: f32, mark_holes: bool) -> Result<Vec<u8>> {
        let flow = self.flow.map(|v| v * t);
        let warped = forward_warp_avg_raw(&self.frame0, &flow, SplatMode::Banded(8))?;
        let mut rgba = to_rgba(&warped);
        if mark_holes {
            let weight = splat_weight_map(&flow)?;
            for (i, &wt) in weight.data().iter().enumerate() {
                if wt == 0.0 {
                    rgba[4 * i..4 * i + 3].copy_from_slice(&HOLE_RGB);
                }
            }
        }
        Ok(rgba)
    }

    /// PSNR and SSIM of the frame average against the true middle frame,
    /// which is frame 0 splatted by half the flow.
    pub fn try_metrics(&self) -> Result<Vec<f64>> {
        let half =
            forward_warp_avg_raw(&self.frame0, &self.flow.map(|v| v * 0.5), SplatMode::Serial)?;
        let blend = self.frame0.zip_map(&self.frame1, |a, b| 0.5 * (a + b));
        Ok(vec![psnr(&blend, &half)?, ssim(&blend, &half)?])
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(width: usize, height: usize, seed: u32) -> std::result::Result<Demo, JsError> {
        Demo::try_new(width, height, seed as u64).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn width(&self) -> usize {
        self.frame0.width()
    }

    pub fn height(&self) -> usize {
        self.frame0.height()
    }

    pub fn set_motion(&mut self, dx: f32, dy: f32, spin: f32) -> std::result::Result<(), JsError> {
        self.try_set_motion(dx, dy, spin)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn frame0(&self) -> Vec<u8> {
        to_rgba(&self.frame0)
    }

    pub fn frame1(&self) -> Vec<u8> {
        to_rgba(&self.frame1)
    }

    pub fn splat(&self, t: f32, mark_holes: bool) -> std::result::Result<Vec<u8>, JsError> {
        self.try_splat(t, mark_holes)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// The 9x9 correlation costs at `(x, y)`, rows by vertical displacement.
    pub fn correlation(&self, x: usize, y: usize) -> Vec<f32> {
        let (h, w) = (self.frame0.height(), self.frame0.width());
        let (x, y) = (x.min(w - 1), y.min(h - 1));
        (0..SIDE * SIDE).map(|d| self.corr.at(0, d, y, x)).collect()
    }

    /// Flow vector `(dx, dy)` at a pixel.
    pub fn flow_at(&self, x: usize, y: usize) -> Vec<f32> {
        let (h, w) = (self.frame0.height(), self.frame0.width());
        let (x, y) = (x.min(w - 1), y.min(h - 1));
        vec![self.flow.at(0, 0, y, x), self.flow.at(0, 1, y, x)]
    }

    /// `[psnr, ssim]` of the frame average against the half-way warp.
    pub fn metrics(&self) -> std::result::Result<Vec<f64>, JsError> {
        self.try_metrics().map_err(|e| JsError::new(&e.to_string()))
    }
}
