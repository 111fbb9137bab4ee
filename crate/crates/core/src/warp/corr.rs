//! Local correlation (cost) volume between two feature maps.

use crate::error::{Error, Result};
use crate::tensor::{for_each_item, map_indexed, Real, Tensor, Var};

/// Channels of a volume with search radius `radius`.
pub fn corr_channels(radius: usize) -> usize {
    (2 * radius + 1) * (2 * radius + 1)
}

/// Displacement `(dy, dx)` of volume channel `d`.
pub fn displacement(radius: usize, d: usize) -> (isize, isize) {
    let side = 2 * radius + 1;
    (
        (d / side) as isize - radius as isize,
        (d % side) as isize - radius as isize,
    )
}

/// Range of `x` with `0 <= x + d < n`.
#[inline]
fn overlap(d: isize, n: usize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    lo.min(hi)..hi
}

fn volume_item<T: Real>(
    f0: &[T],
    f1: &[T],
    c: usize,
    h: usize,
    w: usize,
    radius: usize,
    out: &mut [T],
) {
    let plane = h * w;
    let inv_c = T::one() / T::from_usize(c.max(1)).unwrap();
    for d in 0..corr_channels(radius) {
        let (dy, dx) = displacement(radius, d);
        let od = &mut out[d * plane..(d + 1) * plane];
        let xs = overlap(dx, w);
        for ch in 0..c {
            let a = &f0[ch * plane..(ch + 1) * plane];
            let b = &f1[ch * plane..(ch + 1) * plane];
            for y in overlap(dy, h) {
                let y1 = (y as isize + dy) as usize;
                let orow = &mut od[y * w..(y + 1) * w];
                let arow = &a[y * w..(y + 1) * w];
                let brow = &b[y1 * w..(y1 + 1) * w];
                for x in xs.clone() {
                    orow[x] += arow[x] * brow[(x as isize + dx) as usize];
                }
            }
        }
        od.iter_mut().for_each(|v| *v *= inv_c);
    }
}

/// `corr[d, y, x] = mean_c f0[c, y, x] * f1[c, y + dy, x + dx]` for every
/// displacement with `max(|dy|, |dx|) <= radius`; positions whose partner
/// falls outside the image are 0.
pub fn correlation_volume_raw<T: Real>(
    f0: &Tensor<T>,
    f1: &Tensor<T>,
    radius: usize,
) -> Result<Tensor<T>> {
    if f0.shape() != f1.shape() {
        const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
        let i = (0..4).find(|&i| f0.shape()[i] != f1.shape()[i]).unwrap();
        return Err(Error::shape(
            "correlation_volume",
            DIMS[i],
            f0.shape()[i],
            f1.shape()[i],
        ));
    }
    let [n, c, h, w] = f0.shape();
    let dch = corr_channels(radius);
    let mut out = Tensor::zeros([n, dch, h, w]);
    for_each_item(out.data_mut(), dch * h * w, |b, dst| {
        volume_item(f0.item(b), f1.item(b), c, h, w, radius, dst)
    });
    Ok(out)
}

fn backward_item<T: Real>(
    f0: &[T],
    f1: &[T],
    g: &[T],
    c: usize,
    h: usize,
    w: usize,
    radius: usize,
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let inv_c = T::one() / T::from_usize(c.max(1)).unwrap();
    let mut d0 = vec![T::zero(); c * plane];
    let mut d1 = vec![T::zero(); c * plane];
    for d in 0..corr_channels(radius) {
        let (dy, dx) = displacement(radius, d);
        let gd = &g[d * plane..(d + 1) * plane];
        let xs = overlap(dx, w);
        for ch in 0..c {
            let base = ch * plane;
            for y in overlap(dy, h) {
                let y1 = (y as isize + dy) as usize;
                for x in xs.clone() {
                    let x1 = (x as isize + dx) as usize;
                    let gv = gd[y * w + x] * inv_c;
                    d0[base + y * w + x] += gv * f1[base + y1 * w + x1];
                    d1[base + y1 * w + x1] += gv * f0[base + y * w + x];
                }
            }
        }
    }
    (d0, d1)
}

/// Differentiable correlation volume; see [`correlation_volume_raw`].
pub fn correlation_volume<T: Real>(f0: &Var<T>, f1: &Var<T>, radius: usize) -> Result<Var<T>> {
    let out = correlation_volume_raw(f0.value(), f1.value(), radius)?;
    Var::from_op("correlation_volume", out, &[f0, f1], move |ctx| {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let [n, c, h, w] = a.shape();
        let parts = map_indexed(n, |i| {
            backward_item(a.item(i), b.item(i), ctx.grad.item(i), c, h, w, radius)
        });
        let (d0, d1): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        vec![
            ctx.needs[0].then(|| Tensor::from_vec(a.shape(), d0.concat()).expect("corr d0")),
            ctx.needs[1].then(|| Tensor::from_vec(b.shape(), d1.concat()).expect("corr d1")),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_features_give_squared_value_in_bounds() {
        let f = Tensor::<f64>::full([1, 5, 6, 6], 0.3);
        let v = correlation_volume_raw(&f, &f, 2).unwrap();
        assert_eq!(v.channels(), 25);
        for d in 0..25 {
            let (dy, dx) = displacement(2, d);
            for y in 0..6 {
                for x in 0..6 {
                    let inside =
                        (0..6).contains(&(y as isize + dy)) && (0..6).contains(&(x as isize + dx));
                    let got = v.at(0, d, y, x);
                    if inside {
                        assert!((got - 0.09).abs() < 1e-15);
                    } else {
                        assert_eq!(got, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn disjoint_channel_support_is_zero() {
        let f0 =
            Tensor::<f64>::from_fn(
                [1, 4, 5, 5],
                |[_, c, y, x]| if c < 2 { (y + x) as f64 + 1.0 } else { 0.0 },
            );
        let f1 = Tensor::<f64>::from_fn([1, 4, 5, 5], |[_, c, y, x]| {
            if c >= 2 {
                (y * x) as f64 + 1.0
            } else {
                0.0
            }
        });
        let v = correlation_volume_raw(&f0, &f1, 1).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn radius_zero_is_channel_mean_of_product() {
        let f0 = Tensor::<f64>::from_fn([1, 2, 2, 2], |[_, c, y, x]| (c + y + x) as f64);
        let f1 = Tensor::<f64>::full([1, 2, 2, 2], 2.0);
        let v = correlation_volume_raw(&f0, &f1, 0).unwrap();
        // mean_c 2 (c + y + x) = 1 + 2 (y + x)
        assert_eq!(v.data(), &[1.0, 3.0, 3.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_names_dimension() {
        let err = correlation_volume_raw(
            &Tensor::<f32>::zeros([1, 3, 4, 4]),
            &Tensor::zeros([1, 2, 4, 4]),
            1,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("channels"), "{err}");
    }
}
