//! Refinement operators applied after each data-consistency step.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array1, Array2, Array4};

use crate::dmb::{dmb_forward, DmbParams};
use crate::error::{QcsError, Result};
use crate::sensing::ImageShape;

/// Chambolle dual step for the TV refinement.
pub const TV_DUAL_STEP: f64 = 0.125;

#[derive(Debug, Clone, PartialEq)]
pub enum Refinement {
    Identity,
    DctSoftThreshold { tau: f64 },
    Tv { weight: f64, iters: usize },
    /// The block runs on a `(1, C, H, W)` lift of the image where feature `f`
    /// carries image channel `f % channels`; the output averages the copies.
    Dmb(Box<DmbParams>),
}

impl Refinement {
    pub fn validate(&self) -> Result<()> {
        match self {
            Refinement::Identity => Ok(()),
            Refinement::DctSoftThreshold { tau } => {
                if tau.is_finite() && *tau >= 0.0 {
                    Ok(())
                } else {
                    Err(QcsError::Parameter(format!("threshold must be >= 0, got {tau}")))
                }
            }
            Refinement::Tv { weight, .. } => {
                if weight.is_finite() && *weight >= 0.0 {
                    Ok(())
                } else {
                    Err(QcsError::Parameter(format!("TV weight must be >= 0, got {weight}")))
                }
            }
            Refinement::Dmb(p) => p.validate(),
        }
    }

    /// Parses `identity`, `dct:TAU` or `tv:WEIGHT,ITERS`.
    pub fn parse_classical(s: &str) -> Result<Self> {
        let bad = || QcsError::Parameter(format!("unrecognized refinement `{s}`"));
        let r = if s == "identity" {
            Refinement::Identity
        } else if let Some(t) = s.strip_prefix("dct:") {
            Refinement::DctSoftThreshold { tau: t.trim().parse().map_err(|_| bad())? }
        } else if let Some(t) = s.strip_prefix("tv:") {
            let (w, i) = t.split_once(',').ok_or_else(bad)?;
            Refinement::Tv {
                weight: w.trim().parse().map_err(|_| bad())?,
                iters: i.trim().parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        r.validate()?;
        Ok(r)
    }

    pub fn apply(&self, x: &Array1<f64>, shape: ImageShape) -> Result<Array1<f64>> {
        if x.len() != shape.len() {
            return Err(QcsError::dim("refinement input", shape.len(), x.len()));
        }
        match self {
            Refinement::Identity => Ok(x.clone()),
            Refinement::DctSoftThreshold { tau } => Ok(per_channel(x, shape, |p| dct_soft_threshold(p, *tau))),
            Refinement::Tv { weight, iters } => Ok(per_channel(x, shape, |p| tv_denoise(p, *weight, *iters))),
            Refinement::Dmb(p) => dmb_refine(x, shape, p),
        }
    }
}

fn channel_plane(x: &Array1<f64>, shape: ImageShape, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((shape.height, shape.width), |(h, w)| {
        x[(h * shape.width + w) * shape.channels + c]
    })
}

fn per_channel(x: &Array1<f64>, shape: ImageShape, f: impl Fn(&Array2<f64>) -> Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(x.len());
    for c in 0..shape.channels {
        let plane = f(&channel_plane(x, shape, c));
        for ((h, w), v) in plane.indexed_iter() {
            out[(h * shape.width + w) * shape.channels + c] = *v;
        }
    }
    out
}

thread_local! {
    static DCT_CACHE: RefCell<HashMap<usize, Rc<Array2<f64>>>> = RefCell::new(HashMap::new());
}

fn cached_dct(n: usize) -> Rc<Array2<f64>> {
    DCT_CACHE.with(|c| c.borrow_mut().entry(n).or_insert_with(|| Rc::new(dct_matrix(n))).clone())
}

/// Orthonormal DCT-II matrix, rows are basis vectors.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, j)| {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        s * (std::f64::consts::PI * (2 * j + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

pub fn dct2(plane: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    cached_dct(h).dot(plane).dot(&cached_dct(w).t())
}

pub fn idct2(coeffs: &Array2<f64>) -> Array2<f64> {
    let (h, w) = coeffs.dim();
    cached_dct(h).t().dot(coeffs).dot(&*cached_dct(w))
}

pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    v.signum() * (v.abs() - tau).max(0.0)
}

pub fn dct_soft_threshold(plane: &Array2<f64>, tau: f64) -> Array2<f64> {
    idct2(&dct2(plane).mapv(|v| soft_threshold(v, tau)))
}

fn gradient(u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = u.dim();
    let gx = Array2::from_shape_fn((h, w), |(i, j)| if j + 1 < w { u[[i, j + 1]] - u[[i, j]] } else { 0.0 });
    let gy = Array2::from_shape_fn((h, w), |(i, j)| if i + 1 < h { u[[i + 1, j]] - u[[i, j]] } else { 0.0 });
    (gx, gy)
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &Array2<f64>, py: &Array2<f64>) -> Array2<f64> {
    let (h, w) = px.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let dx = match j {
            _ if w == 1 => 0.0,
            0 => px[[i, 0]],
            _ if j + 1 == w => -px[[i, j - 1]],
            _ => px[[i, j]] - px[[i, j - 1]],
        };
        let dy = match i {
            _ if h == 1 => 0.0,
            0 => py[[0, j]],
            _ if i + 1 == h => -py[[i - 1, j]],
            _ => py[[i, j]] - py[[i - 1, j]],
        };
        dx + dy
    })
}

/// Isotropic TV denoising by Chambolle's dual projection:
/// `argmin_u 0.5 |u - f|^2 + weight * TV(u)`.
pub fn tv_denoise(f: &Array2<f64>, weight: f64, iters: usize) -> Array2<f64> {
    if weight == 0.0 || iters == 0 {
        return f.clone();
    }
    let (h, w) = f.dim();
    let mut px = Array2::zeros((h, w));
    let mut py = Array2::zeros((h, w));
    let scaled = f / weight;
    for _ in 0..iters {
        let inner = divergence(&px, &py) - &scaled;
        let (gx, gy) = gradient(&inner);
        for i in 0..h {
            for j in 0..w {
                let norm = (gx[[i, j]].powi(2) + gy[[i, j]].powi(2)).sqrt();
                let denom = 1.0 + TV_DUAL_STEP * norm;
                px[[i, j]] = (px[[i, j]] + TV_DUAL_STEP * gx[[i, j]]) / denom;
                py[[i, j]] = (py[[i, j]] + TV_DUAL_STEP * gy[[i, j]]) / denom;
            }
        }
    }
    f - &(divergence(&px, &py) * weight)
}

fn dmb_refine(x: &Array1<f64>, shape: ImageShape, p: &DmbParams) -> Result<Array1<f64>> {
    if (shape.height, shape.width) != p.grid {
        return Err(QcsError::Consistency(format!(
            "block built for a {:?} grid, signal is {}x{}",
            p.grid, shape.height, shape.width
        )));
    }
    let features = p.channels();
    let cin = shape.channels;
    let lifted = Array4::from_shape_fn((1, features, shape.height, shape.width), |(_, f, h, w)| {
        x[(h * shape.width + w) * cin + f % cin]
    });
    let y = dmb_forward(lifted.view(), p)?;
    let mut out = Array1::zeros(x.len());
    let mut counts = vec![0usize; cin];
    for f in 0..features {
        counts[f % cin] += 1;
    }
    for f in 0..features {
        let c = f % cin;
        let plane = y.slice(s![0, f, .., ..]);
        for ((h, w), v) in plane.indexed_iter() {
            out[(h * shape.width + w) * cin + c] += v / counts[c] as f64;
        }
    }
    for c in 0..cin {
        if counts[c] == 0 {
            // more image channels than features: pass those channels through
            for i in (c..x.len()).step_by(cin) {
                out[i] = x[i];
            }
        }
    }
    Ok(out)
}
