//! Reconstruction quality metrics.

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::error::{QcsError, Result};
use crate::sensing::ImageShape;

/// Reported PSNR for identical signals.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub cosine: f64,
    pub mse: f64,
}

fn same_len(x: ArrayView1<f64>, reference: ArrayView1<f64>) -> Result<()> {
    if x.len() != reference.len() {
        return Err(QcsError::dim("metric input", reference.len(), x.len()));
    }
    if x.is_empty() {
        return Err(QcsError::Input("metrics need non-empty signals".into()));
    }
    Ok(())
}

pub fn mse(x: ArrayView1<f64>, reference: ArrayView1<f64>) -> Result<f64> {
    same_len(x, reference)?;
    Ok((&x - &reference).mapv(|v| v * v).sum() / x.len() as f64)
}

/// `10 log10(peak^2 / mse)`; `+inf` when the signals are identical.
pub fn psnr(x: ArrayView1<f64>, reference: ArrayView1<f64>, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(QcsError::Parameter(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(x, reference)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Cosine of the angle between `x` and `reference`; 0 for a zero `x`.
pub fn cosine_similarity(x: ArrayView1<f64>, reference: ArrayView1<f64>) -> Result<f64> {
    same_len(x, reference)?;
    let rr = reference.dot(&reference);
    if rr == 0.0 {
        return Err(QcsError::Input("cosine similarity against a zero reference".into()));
    }
    let xx = x.dot(&x);
    if xx == 0.0 {
        return Ok(0.0);
    }
    // a single square root keeps cos(x, x) exactly 1
    Ok((x.dot(&reference) / (xx * rr).sqrt()).clamp(-1.0, 1.0))
}

fn gaussian_window(size: usize) -> Array1<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Array1<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total = w.sum();
    w / total
}

/// Separable valid-mode filtering with window `g` along both axes.
fn filter(img: &Array2<f64>, gh: &Array1<f64>, gw: &Array1<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (kh, kw) = (gh.len(), gw.len());
    let rows = Array2::from_shape_fn((h, w - kw + 1), |(i, j)| {
        let mut acc = 0.0;
        for k in 0..kw {
            acc += gw[k] * img[[i, j + k]];
        }
        acc
    });
    Array2::from_shape_fn((h - kh + 1, w - kw + 1), |(i, j)| {
        let mut acc = 0.0;
        for k in 0..kh {
            acc += gh[k] * rows[[i + k, j]];
        }
        acc
    })
}

/// Mean SSIM of one plane. Windows larger than the image shrink to it.
pub fn ssim_plane(x: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    if x.dim() != reference.dim() {
        return Err(QcsError::Input(format!(
            "SSIM planes differ in shape: {:?} vs {:?}",
            x.dim(),
            reference.dim()
        )));
    }
    let (h, w) = x.dim();
    if h == 0 || w == 0 {
        return Err(QcsError::Input("SSIM needs a non-empty image".into()));
    }
    let gh = gaussian_window(SSIM_WINDOW.min(h));
    let gw = gaussian_window(SSIM_WINDOW.min(w));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_x = filter(x, &gh, &gw);
    let mu_y = filter(reference, &gh, &gw);
    let xx = filter(&(x * x), &gh, &gw);
    let yy = filter(&(reference * reference), &gh, &gw);
    let xy = filter(&(x * reference), &gh, &gw);
    let mut total = 0.0;
    for ((i, j), mx) in mu_x.indexed_iter() {
        let my = mu_y[[i, j]];
        let vx = xx[[i, j]] - mx * mx;
        let vy = yy[[i, j]] - my * my;
        let cov = xy[[i, j]] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

fn plane(v: ArrayView1<f64>, shape: ImageShape, c: usize) -> Array2<f64> {
    let sl = v.slice(s![c..;shape.channels]);
    Array2::from_shape_fn((shape.height, shape.width), |(i, j)| sl[i * shape.width + j])
}

/// Channel-averaged SSIM of interleaved images with dynamic range 1.
pub fn ssim(x: ArrayView1<f64>, reference: ArrayView1<f64>, shape: ImageShape) -> Result<f64> {
    same_len(x, reference)?;
    if shape.len() != x.len() {
        return Err(QcsError::dim("SSIM image shape", shape.len(), x.len()));
    }
    let mut total = 0.0;
    for c in 0..shape.channels {
        total += ssim_plane(&plane(x, shape, c), &plane(reference, shape, c))?;
    }
    Ok(total / shape.channels as f64)
}

/// All metrics with peak 1; PSNR capped.
pub fn evaluate(x: ArrayView1<f64>, reference: ArrayView1<f64>, shape: ImageShape) -> Result<MetricReport> {
    let m = mse(x, reference)?;
    Ok(MetricReport {
        psnr: psnr_from_mse(m, 1.0).min(PSNR_CAP),
        ssim: ssim(x, reference, shape)?,
        cosine: cosine_similarity(x, reference)?,
        mse: m,
    })
}
