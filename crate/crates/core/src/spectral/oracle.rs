//! Reference implementations used to cross-check the closed-form spectral
//! path. Each one follows the defining formula literally and shares no code
//! with the fast path beyond parameter containers.

use ndarray::{Array2, Array4, ArrayView4};
use num_complex::Complex64;

use super::{half_width, transition, HalfSpectrum, LowRankCoupling, SpectralParams};
use crate::error::{QcsError, Result};

/// Runs `s_{j+1} = A s_j + B X` for `J` steps from `s_0 = 0` in every bin and returns `C s_J`.
pub fn recurrence_oracle(x: &HalfSpectrum, params: &SpectralParams) -> Result<HalfSpectrum> {
    let (batch, channels, h, wf) = x.data.dim();
    let groups = params.groups();
    if channels % groups != 0 || params.grid() != (h, wf) {
        return Err(QcsError::Input("recurrence oracle: parameter/spectrum mismatch".into()));
    }
    let per_group = channels / groups;
    let mut y = x.clone();
    for bi in 0..batch {
        for ci in 0..channels {
            let g = ci / per_group;
            for k in 0..h {
                for w in 0..wf {
                    let a = transition(params.delta[[g, k, w]], params.theta[[g, k, w]])?;
                    let drive = params.b[[g, k, w]] * x.data[[bi, ci, k, w]];
                    let mut s = Complex64::new(0.0, 0.0);
                    for _ in 0..params.steps {
                        s = a * s + drive;
                    }
                    y.data[[bi, ci, k, w]] = params.c[[g, k, w]] * s;
                }
            }
        }
    }
    Ok(y)
}

/// Applies the explicit `L x L` matrix `Diag(D_g) + lambda alpha_g sum_r u_r v_r^H`
/// to every channel's flattened spectrum.
pub fn dense_lowrank_oracle(
    x: &HalfSpectrum,
    params: &SpectralParams,
    coupling: &LowRankCoupling,
) -> Result<HalfSpectrum> {
    let (batch, channels, h, wf) = x.data.dim();
    let bins = h * wf;
    let groups = params.groups();
    if channels % groups != 0 || coupling.groups() != groups || coupling.bins() != bins {
        return Err(QcsError::Input("dense oracle: parameter/spectrum mismatch".into()));
    }
    let per_group = channels / groups;
    let mut mats = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut m = Array2::<Complex64>::zeros((bins, bins));
        for k in 0..h {
            for w in 0..wf {
                let a = transition(params.delta[[g, k, w]], params.theta[[g, k, w]])?;
                let mut gain = Complex64::new(0.0, 0.0);
                let mut p = Complex64::new(1.0, 0.0);
                for _ in 0..params.steps {
                    gain += p;
                    p *= a;
                }
                let l = k * wf + w;
                m[[l, l]] = params.c[[g, k, w]] * params.b[[g, k, w]] * gain;
            }
        }
        let scale = coupling.warmup * coupling.alpha[g];
        for r in 0..coupling.rank() {
            for i in 0..bins {
                for j in 0..bins {
                    m[[i, j]] += coupling.u[[g, r, i]] * coupling.v[[g, r, j]].conj() * scale;
                }
            }
        }
        mats.push(m);
    }
    let mut y = x.clone();
    for bi in 0..batch {
        for ci in 0..channels {
            let m = &mats[ci / per_group];
            let xv: Vec<Complex64> = x.data.slice(ndarray::s![bi, ci, .., ..]).iter().copied().collect();
            for i in 0..bins {
                let v: Complex64 = (0..bins).map(|j| m[[i, j]] * xv[j]).sum();
                y.data[[bi, ci, i / wf, i % wf]] = v;
            }
        }
    }
    Ok(y)
}

/// Extends a half spectrum to the full `H x W` grid via `X(k, w) = conj(X(-k, -w))`
/// and applies a naive complex 2D inverse DFT. Returns (real part, imaginary part).
pub fn full_complex_inverse_oracle(y: &HalfSpectrum) -> (Array4<f64>, Array4<f64>) {
    let (batch, channels, h, wf) = y.data.dim();
    let w = y.full_width();
    debug_assert_eq!(wf, half_width(w));
    let mut re = Array4::zeros((batch, channels, h, w));
    let mut im = Array4::zeros((batch, channels, h, w));
    let tau = 2.0 * std::f64::consts::PI;
    for bi in 0..batch {
        for ci in 0..channels {
            let full = Array2::from_shape_fn((h, w), |(k, l)| {
                if l < wf {
                    y.data[[bi, ci, k, l]]
                } else {
                    y.data[[bi, ci, (h - k) % h, w - l]].conj()
                }
            });
            for p in 0..h {
                for q in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..h {
                        for l in 0..w {
                            let phase = tau * ((p * k) as f64 / h as f64 + (q * l) as f64 / w as f64);
                            acc += full[[k, l]] * Complex64::from_polar(1.0, phase);
                        }
                    }
                    acc /= (h * w) as f64;
                    re[[bi, ci, p, q]] = acc.re;
                    im[[bi, ci, p, q]] = acc.im;
                }
            }
        }
    }
    (re, im)
}

/// Circular shift of the two spatial axes: `out[.., (i + dh) % H, (j + dw) % W] = x[.., i, j]`.
pub fn circular_shift(x: ArrayView4<f64>, dh: usize, dw: usize) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    Array4::from_shape_fn((b, c, h, w), |(bi, ci, i, j)| {
        x[[bi, ci, (i + h - dh % h) % h, (j + w - dw % w) % w]]
    })
}
