//! Real 2D Fourier transforms over the last two axes of a `(B, C, H, W)` tensor.
//!
//! Forward is unnormalized; the inverse carries the `1/(H W)` factor.

use ndarray::{Array4, ArrayView4};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{QcsError, Result};

/// Non-redundant half of a real 2D spectrum, shape `(B, C, H, W/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    pub data: Array4<Complex64>,
    full_width: usize,
}

pub fn half_width(width: usize) -> usize {
    width / 2 + 1
}

impl HalfSpectrum {
    pub fn new(data: Array4<Complex64>, full_width: usize) -> Result<Self> {
        if full_width == 0 {
            return Err(QcsError::Parameter("spectrum width must be positive".into()));
        }
        let wf = data.dim().3;
        if wf != half_width(full_width) {
            return Err(QcsError::dim("half-spectrum width", half_width(full_width), wf));
        }
        Ok(Self { data, full_width })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array4::zeros((batch, channels, height, half_width(width))),
            full_width: width,
        }
    }

    pub fn full_width(&self) -> usize {
        self.full_width
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn half_width(&self) -> usize {
        self.data.dim().3
    }

    /// Number of frequency bins `H * W_f`.
    pub fn bins(&self) -> usize {
        self.height() * self.half_width()
    }

    pub fn same_shape(&self, other: &HalfSpectrum) -> Result<()> {
        if self.data.dim() != other.data.dim() || self.full_width != other.full_width {
            return Err(QcsError::Input(format!(
                "half-spectrum shape mismatch: {:?}/{} vs {:?}/{}",
                self.data.dim(),
                self.full_width,
                other.data.dim(),
                other.full_width
            )));
        }
        Ok(())
    }

    /// Columns whose bins pair with bins in the same column: DC, and Nyquist for even widths.
    pub fn self_paired_columns(&self) -> Vec<usize> {
        let mut cols = vec![0];
        if self.full_width % 2 == 0 && self.full_width > 1 {
            cols.push(self.full_width / 2);
        }
        cols
    }
}

pub fn forward_rfft2(x: ArrayView4<f64>) -> Result<HalfSpectrum> {
    let (b, c, h, w) = x.dim();
    if h == 0 || w == 0 {
        return Err(QcsError::Parameter(format!("rfft2 needs positive spatial dims, got {h}x{w}")));
    }
    let wf = half_width(w);
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut out = Array4::<Complex64>::zeros((b, c, h, wf));
    let mut row = vec![Complex64::default(); w];
    let mut col = vec![Complex64::default(); h];
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                for (dst, &src) in row.iter_mut().zip(x.slice(ndarray::s![bi, ci, hi, ..])) {
                    *dst = Complex64::new(src, 0.0);
                }
                row_fft.process(&mut row);
                for wi in 0..wf {
                    out[[bi, ci, hi, wi]] = row[wi];
                }
            }
            for wi in 0..wf {
                for hi in 0..h {
                    col[hi] = out[[bi, ci, hi, wi]];
                }
                col_fft.process(&mut col);
                for hi in 0..h {
                    out[[bi, ci, hi, wi]] = col[hi];
                }
            }
        }
    }
    Ok(HalfSpectrum {
        data: out,
        full_width: w,
    })
}

/// Complex-to-real inverse. Imaginary parts that a real signal cannot carry
/// (the anti-Hermitian component of the DC and Nyquist columns) are discarded.
pub fn inverse_rfft2(spec: &HalfSpectrum) -> Result<Array4<f64>> {
    let (b, c, h, wf) = spec.data.dim();
    let w = spec.full_width;
    if h == 0 {
        return Err(QcsError::Parameter("irfft2 needs a positive height".into()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let row_ifft = planner.plan_fft_inverse(w);
    let col_ifft = planner.plan_fft_inverse(h);
    let scale = 1.0 / (h * w) as f64;
    let mut out = Array4::<f64>::zeros((b, c, h, w));
    let mut cols = vec![Complex64::default(); h * wf];
    let mut col = vec![Complex64::default(); h];
    let mut row = vec![Complex64::default(); w];
    for bi in 0..b {
        for ci in 0..c {
            for wi in 0..wf {
                for hi in 0..h {
                    col[hi] = spec.data[[bi, ci, hi, wi]];
                }
                col_ifft.process(&mut col);
                for hi in 0..h {
                    cols[hi * wf + wi] = col[hi];
                }
            }
            for hi in 0..h {
                let half = &cols[hi * wf..(hi + 1) * wf];
                for wi in 0..w {
                    row[wi] = if wi < wf { half[wi] } else { half[w - wi].conj() };
                }
                row_ifft.process(&mut row);
                for wi in 0..w {
                    out[[bi, ci, hi, wi]] = row[wi].re * scale;
                }
            }
        }
    }
    Ok(out)
}
