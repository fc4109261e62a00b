//! Bicubic resampling and the scale-parameterized degradation `I(t)`.
//!
//! `I(t)` is the ground truth shrunk by `1/t` and enlarged back to its original
//! resolution with the same kernel. Shrinking widens the kernel by the inverse
//! scale (anti-aliased bicubic, as in the usual SR benchmark tooling).

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn bicubic_weight(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 1.0 {
        (KEYS_A + 2.0) * ax * ax * ax - (KEYS_A + 3.0) * ax * ax + 1.0
    } else if ax < 2.0 {
        KEYS_A * ax * ax * ax - 5.0 * KEYS_A * ax * ax + 8.0 * KEYS_A * ax - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Source taps and normalized weights for every output index along one axis.
struct AxisFilter {
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisFilter {
    fn new(input: usize, output: usize) -> Self {
        let scale = output as f64 / input as f64;
        let kscale = scale.min(1.0);
        let support = 4.0 / kscale;
        let ntaps = support.ceil() as isize + 2;
        let last = input as isize - 1;
        let taps = (0..output)
            .map(|i| {
                let u = (i as f64 + 0.5) * (input as f64 / output as f64) - 0.5;
                let left = (u - support / 2.0).floor() as isize;
                let mut row: Vec<(usize, f64)> = (0..ntaps)
                    .filter_map(|j| {
                        let src = left + j;
                        let w = kscale * bicubic_weight(kscale * (u - src as f64));
                        (w != 0.0).then(|| (src.clamp(0, last) as usize, w))
                    })
                    .collect();
                let sum: f64 = row.iter().map(|(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= sum);
                row
            })
            .collect();
        AxisFilter { taps }
    }
}

/// Planar f64 working buffer: `channels` planes of `h x w`.
struct Planes {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Planes {
    fn from_image<T: Scalar>(img: &Image<T>) -> Self {
        let (h, w, c) = img.dims();
        let mut data = vec![0.0; h * w * c];
        for (p, px) in img.data().chunks(c).enumerate() {
            for (ch, v) in px.iter().enumerate() {
                data[ch * h * w + p] = v.to_f64_lossy();
            }
        }
        Planes { h, w, c, data }
    }

    fn resize_rows(&self, out_h: usize) -> Self {
        let f = AxisFilter::new(self.h, out_h);
        let mut data = vec![0.0; out_h * self.w * self.c];
        for ch in 0..self.c {
            let src = &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            let dst = &mut data[ch * out_h * self.w..(ch + 1) * out_h * self.w];
            for (y, taps) in f.taps.iter().enumerate() {
                let out_row = &mut dst[y * self.w..(y + 1) * self.w];
                for &(sy, wt) in taps {
                    let in_row = &src[sy * self.w..(sy + 1) * self.w];
                    out_row.iter_mut().zip(in_row).for_each(|(o, &v)| *o += wt * v);
                }
            }
        }
        Planes {
            h: out_h,
            w: self.w,
            c: self.c,
            data,
        }
    }

    fn resize_cols(&self, out_w: usize) -> Self {
        let f = AxisFilter::new(self.w, out_w);
        let mut data = vec![0.0; self.h * out_w * self.c];
        for (row_in, row_out) in self.data.chunks(self.w).zip(data.chunks_mut(out_w)) {
            for (o, taps) in row_out.iter_mut().zip(&f.taps) {
                *o = taps.iter().map(|&(sx, wt)| wt * row_in[sx]).sum();
            }
        }
        Planes {
            h: self.h,
            w: out_w,
            c: self.c,
            data,
        }
    }

    fn into_image<T: Scalar>(self) -> Image<T> {
        let plane = self.h * self.w;
        Image::from_fn(self.h, self.w, self.c, |y, x, ch| {
            T::of(self.data[ch * plane + y * self.w + x].clamp(0.0, 1.0))
        })
        .expect("resize keeps valid dims")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum AxisOrder {
    RowsFirst,
    #[cfg_attr(not(test), allow(dead_code))]
    ColsFirst,
}

pub(crate) fn resize_ordered<T: Scalar>(
    img: &Image<T>,
    out_h: usize,
    out_w: usize,
    order: AxisOrder,
) -> Result<Image<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::domain(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let mut p = Planes::from_image(img);
    let rows = |p: Planes| if p.h == out_h { p } else { p.resize_rows(out_h) };
    let cols = |p: Planes| if p.w == out_w { p } else { p.resize_cols(out_w) };
    p = match order {
        AxisOrder::RowsFirst => cols(rows(p)),
        AxisOrder::ColsFirst => rows(cols(p)),
    };
    Ok(p.into_image())
}

/// Separable bicubic resize with center-aligned sampling, replicated borders
/// and output clamped to [0, 1]. Same-size requests return the input unchanged.
pub fn resize<T: Scalar>(img: &Image<T>, out_h: usize, out_w: usize) -> Result<Image<T>> {
    resize_ordered(img, out_h, out_w, AxisOrder::RowsFirst)
}

/// Ground truth together with its realization of `I(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePair<T> {
    pub hr: Image<T>,
    /// The shrunk image before enlargement, `round(H/t) x round(W/t)`.
    pub lowres: Image<T>,
    /// `I(t)` at the resolution of `hr`.
    pub lr_upscaled: Image<T>,
    pub t: f64,
}

fn check_scale(t: f64, what: &str) -> Result<()> {
    if !(t.is_finite() && t >= 1.0) {
        return Err(Error::domain(format!("{what} must be a finite real >= 1, got {t}")));
    }
    Ok(())
}

fn scaled_len(n: usize, factor: f64) -> usize {
    ((n as f64 * factor).round() as usize).max(1)
}

pub fn make_scale_pair<T: Scalar>(hr: &Image<T>, t: f64) -> Result<ScalePair<T>> {
    check_scale(t, "scale factor t")?;
    if hr.height() < 8 || hr.width() < 8 {
        return Err(Error::domain(format!(
            "ground truth must be at least 8x8, got {}x{}",
            hr.height(),
            hr.width()
        )));
    }
    let (h, w) = (hr.height(), hr.width());
    let lowres = resize(hr, scaled_len(h, 1.0 / t), scaled_len(w, 1.0 / t))?;
    let lr_upscaled = resize(&lowres, h, w)?;
    Ok(ScalePair {
        hr: hr.clone(),
        lowres,
        lr_upscaled,
        t,
    })
}

/// Bicubic enlargement of a test-time input to `round(h * t0) x round(w * t0)`,
/// the initial condition `I(t0)`.
pub fn upscale_to<T: Scalar>(lr: &Image<T>, t0: f64) -> Result<Image<T>> {
    check_scale(t0, "initial scale t0")?;
    resize(lr, scaled_len(lr.height(), t0), scaled_len(lr.width(), t0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn textured(h: usize, w: usize, c: usize) -> Image<f64> {
        Image::from_fn(h, w, c, |y, x, ch| {
            let v = 0.5
                + 0.3 * ((x as f64 * 0.7 + ch as f64).sin() * (y as f64 * 0.45).cos())
                + 0.15 * (((x * 7 + y * 13) % 5) as f64 / 4.0 - 0.5);
            v.clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(bicubic_weight(0.0), 1.0);
        assert_eq!(bicubic_weight(1.0), 0.0);
        assert_eq!(bicubic_weight(2.0), 0.0);
        assert_eq!(bicubic_weight(-2.5), 0.0);
        // 1.5*0.125 - 2.5*0.25 + 1
        assert!((bicubic_weight(0.5) - 0.5625).abs() < 1e-15);
        // -0.5*3.375 + 2.5*2.25 - 4*1.5 + 2
        assert!((bicubic_weight(1.5) + 0.0625).abs() < 1e-15);
        assert_eq!(bicubic_weight(-0.5), bicubic_weight(0.5));
    }

    #[test]
    fn same_size_is_identity() {
        let img = textured(13, 9, 3).cast::<f32>();
        assert_eq!(resize(&img, 13, 9).unwrap(), img);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resize(&textured(8, 8, 1), 0, 4).is_err());
    }

    #[test]
    fn linear_ramp_preserved_on_upscale() {
        // Horizontal ramp x -> 0.1 + 0.02 x; a 2x upscale samples it at
        // u = (j + 0.5) / 2 - 0.5.
        let img = Image::<f64>::from_fn(6, 20, 1, |_, x, _| 0.1 + 0.02 * x as f64).unwrap();
        let up = resize(&img, 12, 40).unwrap();
        for y in 0..12 {
            for j in 4..36 {
                let u = (j as f64 + 0.5) / 2.0 - 0.5;
                let expect = 0.1 + 0.02 * u;
                assert!((up.get(y, j, 0) - expect).abs() < 1e-5, "col {j}");
            }
        }
    }

    #[test]
    fn separable_order_agrees() {
        let img = textured(17, 23, 3);
        for &(oh, ow) in &[(34, 11), (9, 40), (25, 25), (5, 7)] {
            let a = resize_ordered(&img, oh, ow, AxisOrder::RowsFirst).unwrap();
            let b = resize_ordered(&img, oh, ow, AxisOrder::ColsFirst).unwrap();
            let d = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d < 1e-6, "{oh}x{ow}: {d}");
        }
    }

    #[test]
    fn scale_pair_sizes() {
        let hr = textured(16, 16, 3);
        let p = make_scale_pair(&hr, 2.0).unwrap();
        assert_eq!((p.lowres.height(), p.lowres.width()), (8, 8));
        assert_eq!((p.lr_upscaled.height(), p.lr_upscaled.width()), (16, 16));

        let hr = textured(20, 20, 1);
        let p = make_scale_pair(&hr, 2.5).unwrap();
        assert_eq!((p.lowres.height(), p.lowres.width()), (8, 8));
        assert_eq!(p.lr_upscaled.dims(), (20, 20, 1));
    }

    #[test]
    fn unit_scale_pair_is_exact() {
        let hr = textured(12, 15, 3).cast::<f32>();
        let p = make_scale_pair(&hr, 1.0).unwrap();
        assert_eq!(p.lr_upscaled, hr);
    }

    #[test]
    fn scale_domain_errors() {
        let hr = textured(12, 12, 1);
        assert!(matches!(make_scale_pair(&hr, 0.9), Err(Error::Domain(_))));
        assert!(matches!(make_scale_pair(&hr, f64::NAN), Err(Error::Domain(_))));
        assert!(make_scale_pair(&textured(7, 12, 1), 2.0).is_err());
        assert!(matches!(upscale_to(&hr, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn upscale_sizes() {
        let lr = textured(8, 8, 3);
        assert_eq!(upscale_to(&lr, 1.0).unwrap(), lr);
        assert_eq!(upscale_to(&lr, 2.0).unwrap().dims(), (16, 16, 3));
        let lr = textured(10, 10, 1);
        assert_eq!(upscale_to(&lr, 2.5).unwrap().dims(), (25, 25, 1));
    }

    proptest! {
        #[test]
        fn constant_images_stay_constant(
            h in 1usize..=64,
            w in 1usize..=64,
            fy in 0.25f64..=4.0,
            fx in 0.25f64..=4.0,
            value in 0.0f64..=1.0,
        ) {
            let img = Image::filled(h, w, 1, value).unwrap();
            let oh = ((h as f64 * fy).round() as usize).max(1);
            let ow = ((w as f64 * fx).round() as usize).max(1);
            let out = resize(&img, oh, ow).unwrap();
            for &v in out.data() {
                prop_assert!((v - value).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn outputs_stay_in_unit_range(seed in 0u64..1000, oh in 1usize..40, ow in 1usize..40) {
            let img = Image::<f64>::from_fn(11, 13, 3, |y, x, c| {
                (((y * 31 + x * 17 + c * 7) as u64 ^ seed) % 2) as f64
            }).unwrap();
            let out = resize(&img, oh, ow).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
