//! PSNR/SSIM scoring under the usual SR benchmark protocol, geometric
//! self-ensemble, and scale sweeps over a corpus.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Dihedral, Image};
use crate::inference::{restore, super_resolve};
use crate::odesolver::SolverConfig;
use crate::resample::make_scale_pair;
use crate::scalar::Scalar;
use crate::vectorfield::VectorFieldParams;

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorMode {
    Rgb,
    /// Luma of RGB images (BT.601, studio swing); single-channel images are scored as is.
    YChannel,
}

impl ColorMode {
    pub fn name(self) -> &'static str {
        match self {
            ColorMode::Rgb => "rgb",
            ColorMode::YChannel => "y_channel",
        }
    }

    pub fn parse(s: &str) -> Option<ColorMode> {
        match s {
            "rgb" => Some(ColorMode::Rgb),
            "y_channel" => Some(ColorMode::YChannel),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProtocol {
    pub color_mode: ColorMode,
    /// Pixels removed from every side before scoring; `None` means `ceil(t)`
    /// when the scale is known and 0 otherwise.
    pub border_shave: Option<usize>,
    pub peak: f64,
    /// Crop ground truth to a multiple of integer scale factors before degrading.
    pub modcrop: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            color_mode: ColorMode::YChannel,
            border_shave: None,
            peak: 1.0,
            modcrop: true,
        }
    }
}

impl EvalProtocol {
    /// The protocol with the border shave fixed for scale `t`.
    pub fn for_scale(&self, t: f64) -> EvalProtocol {
        EvalProtocol {
            border_shave: Some(self.border_shave.unwrap_or(t.ceil() as usize)),
            ..*self
        }
    }

    fn shave(&self) -> usize {
        self.border_shave.unwrap_or(0)
    }
}

/// Scoring planes of an image under `mode`, already shaved.
fn eval_planes<T: Scalar>(img: &Image<T>, mode: ColorMode, shave: usize) -> Result<Vec<Vec<f64>>> {
    let (h, w, c) = img.dims();
    if 2 * shave >= h.min(w) {
        return Err(Error::domain(format!(
            "border shave {shave} leaves nothing of a {h}x{w} image"
        )));
    }
    let (hs, ws) = (h - 2 * shave, w - 2 * shave);
    let sample = |y: usize, x: usize, ch: usize| img.get(y + shave, x + shave, ch).to_f64_lossy();
    let plane = |f: &dyn Fn(usize, usize) -> f64| {
        let mut out = Vec::with_capacity(hs * ws);
        for y in 0..hs {
            for x in 0..ws {
                out.push(f(y, x));
            }
        }
        out
    };
    Ok(match (mode, c) {
        (ColorMode::YChannel, 3) => vec![plane(&|y, x| {
            (16.0 + 65.481 * sample(y, x, 0) + 128.553 * sample(y, x, 1) + 24.966 * sample(y, x, 2))
                / 255.0
        })],
        _ => (0..c).map(|ch| plane(&|y, x| sample(y, x, ch))).collect(),
    })
}

fn check_dims<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::contract(format!(
            "images differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared error over the protocol's planes.
pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>, proto: &EvalProtocol) -> Result<f64> {
    check_dims(a, b)?;
    let pa = eval_planes(a, proto.color_mode, proto.shave())?;
    let pb = eval_planes(b, proto.color_mode, proto.shave())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        sum += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        n += x.len();
    }
    Ok(sum / n as f64)
}

/// `10 log10(peak^2 / MSE)` in dB; [`PSNR_IDENTICAL`] when the MSE is zero.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>, proto: &EvalProtocol) -> Result<f64> {
    let m = mse(a, b, proto)?;
    Ok(psnr_from_mse(m, proto.peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' Gaussian filtering of an `h x w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(i, gv)| gv * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let e_aa = filter_valid(&prod(a, a), h, w, &g);
    let e_bb = filter_valid(&prod(b, b), h, w, &g);
    let e_ab = filter_valid(&prod(a, b), h, w, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Single-scale SSIM with an 11x11 Gaussian window (σ = 1.5), averaged over
/// valid window positions and protocol planes.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>, proto: &EvalProtocol) -> Result<f64> {
    check_dims(a, b)?;
    let shave = proto.shave();
    let (h, w) = (a.height().saturating_sub(2 * shave), a.width().saturating_sub(2 * shave));
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after shaving, got {h}x{w}"
        )));
    }
    let pa = eval_planes(a, proto.color_mode, shave)?;
    let pb = eval_planes(b, proto.color_mode, shave)?;
    let sum: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| ssim_plane(x, y, h, w, proto.peak))
        .sum();
    Ok(sum / pa.len() as f64)
}

/// Mean of the inverse-transformed outputs of `super_resolve` over `transforms`.
pub fn self_ensemble_with<T: Scalar>(
    params: &VectorFieldParams<T>,
    lr: &Image<T>,
    t0: f64,
    solver: &SolverConfig,
    transforms: &[Dihedral],
) -> Result<Image<T>> {
    if transforms.is_empty() {
        return Err(Error::contract("self-ensemble needs at least one transform"));
    }
    let outputs = transforms
        .iter()
        .map(|&d| Ok(super_resolve(params, &lr.transformed(d), t0, solver)?.untransformed(d)))
        .collect::<Result<Vec<_>>>()?;
    let (h, w, c) = outputs[0].dims();
    for o in &outputs[1..] {
        if o.dims() != (h, w, c) {
            return Err(Error::contract(format!(
                "ensemble branch produced {:?}, expected {:?}",
                o.dims(),
                (h, w, c)
            )));
        }
    }
    let n = outputs.len() as f64;
    Image::from_fn(h, w, c, |y, x, ch| {
        let s: f64 = outputs.iter().map(|o| o.get(y, x, ch).to_f64_lossy()).sum();
        T::of(s / n)
    })
}

/// Self-ensemble over all eight flips and quarter turns.
pub fn self_ensemble<T: Scalar>(
    params: &VectorFieldParams<T>,
    lr: &Image<T>,
    t0: f64,
    solver: &SolverConfig,
) -> Result<Image<T>> {
    self_ensemble_with(params, lr, t0, solver, &Dihedral::all())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n_images: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// One line per (scale, image) that could not be scored.
    pub failures: Vec<String>,
}

impl EvalReport {
    /// `t,psnr,ssim,n_images` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,psnr,ssim,n_images\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.4},{:.6},{}\n", r.t, r.psnr, r.ssim, r.n_images));
        }
        s
    }
}

/// Crops to a multiple of `t` when `t` is an integer.
pub fn modcrop<T: Scalar>(img: &Image<T>, t: f64) -> Result<Image<T>> {
    if (t - t.round()).abs() > 1e-9 || t < 1.0 {
        return Ok(img.clone());
    }
    let m = t.round() as usize;
    let (h, w) = (img.height() / m * m, img.width() / m * m);
    if h == 0 || w == 0 {
        return Err(Error::domain(format!(
            "{}x{} image is smaller than scale {m}",
            img.height(),
            img.width()
        )));
    }
    img.crop(0, 0, h, w)
}

fn score_one<T: Scalar>(
    params: &VectorFieldParams<T>,
    hr: &Image<T>,
    t: f64,
    proto: &EvalProtocol,
    solver: &SolverConfig,
) -> Result<(f64, f64)> {
    let hr = if proto.modcrop { modcrop(hr, t)? } else { hr.clone() };
    let pair = make_scale_pair(&hr, t)?;
    let out = restore(params, &pair.lr_upscaled, t, solver)?;
    let p = proto.for_scale(t);
    Ok((psnr(&out, &hr, &p)?, ssim(&out, &hr, &p)?))
}

/// Degrades every ground-truth image to each scale in `t_list`, restores it,
/// and averages PSNR/SSIM per scale. Rows follow `t_list` order.
pub fn evaluate_corpus<T: Scalar>(
    params: &VectorFieldParams<T>,
    corpus: &[(String, Image<T>)],
    t_list: &[f64],
    proto: &EvalProtocol,
    solver: &SolverConfig,
) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::Ingestion("evaluation corpus is empty".into()));
    }
    let mut report = EvalReport::default();
    for &t in t_list {
        let scores: Vec<Result<(f64, f64)>> = corpus
            .par_iter()
            .map(|(_, hr)| score_one(params, hr, t, proto, solver))
            .collect();
        let (mut ps, mut ss, mut n) = (0.0, 0.0, 0usize);
        for ((name, _), score) in corpus.iter().zip(scores) {
            match score {
                Ok((p, s)) => {
                    ps += p;
                    ss += s;
                    n += 1;
                }
                Err(e) => report.failures.push(format!("t={t} {name}: {e}")),
            }
        }
        let mean = |v: f64| if n == 0 { f64::NAN } else { v / n as f64 };
        report.rows.push(EvalRow {
            t,
            psnr: mean(ps),
            ssim: mean(ss),
            n_images: n,
        });
    }
    Ok(report)
}
