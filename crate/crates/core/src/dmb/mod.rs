//! Dual-domain block: layer normalization, a token-scan state-space branch,
//! the spectral branch, weighted fusion with the input residual, and the
//! feature-fusion block (pointwise conv, 3x3 depthwise conv, GELU, pointwise conv).
//!
//! Feature maps are `(B, C, H, W)`. Tokens for the spatial scan are the
//! `H * W` positions in row-major order, each a length-`C` vector.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub mod oracle;

use crate::activation::{gelu, silu};
use crate::error::{QcsError, Result};
use crate::spectral::{half_width, spectral_branch, LowRankCoupling, SpectralParams};


pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_SCALE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

impl LayerNormParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: Array1::ones(channels),
            shift: Array1::zeros(channels),
        }
    }
}

/// Time-invariant scan `h_{t+1} = A h_t + B z_t`, `y_t = C h_t + D z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSsmParams {
    /// `state x state`
    pub a: Array2<f64>,
    /// `state x channels`
    pub b: Array2<f64>,
    /// `channels x state`
    pub c: Array2<f64>,
    /// per-channel skip
    pub d_skip: Array1<f64>,
}

impl SpatialSsmParams {
    /// Validates shapes and rescales `a` to spectral radius 1 if it exceeds 1.
    pub fn new(a: Array2<f64>, b: Array2<f64>, c: Array2<f64>, d_skip: Array1<f64>) -> Result<Self> {
        let state = a.nrows();
        let channels = d_skip.len();
        if a.ncols() != state || b.dim() != (state, channels) || c.dim() != (channels, state) {
            return Err(QcsError::Input(format!(
                "spatial SSM shapes inconsistent: a {:?}, b {:?}, c {:?}, d {}",
                a.dim(),
                b.dim(),
                c.dim(),
                channels
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).chain(d_skip.iter()).any(|v| !v.is_finite()) {
            return Err(QcsError::Input("spatial SSM parameters must be finite".into()));
        }
        let mut p = Self { a, b, c, d_skip };
        let rho = p.spectral_radius();
        if rho > 1.0 {
            p.a.mapv_inplace(|v| v / rho);
        }
        Ok(p)
    }

    /// Pure skip connection: `y_t = z_t`.
    pub fn skip(channels: usize, state: usize) -> Self {
        Self {
            a: Array2::zeros((state, state)),
            b: Array2::zeros((state, channels)),
            c: Array2::zeros((channels, state)),
            d_skip: Array1::ones(channels),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn channels(&self) -> usize {
        self.d_skip.len()
    }

    pub fn spectral_radius(&self) -> f64 {
        let n = self.state_dim();
        if n == 0 {
            return 0.0;
        }
        let m = DMatrix::from_fn(n, n, |i, j| self.a[[i, j]]);
        m.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// `Conv1x1 -> DWConv3x3 -> GELU -> Conv1x1`, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFusion {
    /// `out x in`
    pub pw1: Array2<f64>,
    /// `channels x 3 x 3`, cross-correlation with zero padding 1
    pub dw: Array3<f64>,
    pub pw2: Array2<f64>,
}

impl FeatureFusion {
    /// Identity pointwise kernels and centered delta depthwise kernels; the
    /// block then reduces to the GELU nonlinearity.
    pub fn identity_kernels(channels: usize) -> Self {
        let mut dw = Array3::zeros((channels, 3, 3));
        for c in 0..channels {
            dw[[c, 1, 1]] = 1.0;
        }
        Self {
            pw1: Array2::eye(channels),
            dw,
            pw2: Array2::eye(channels),
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if self.pw1.dim() != (channels, channels)
            || self.pw2.dim() != (channels, channels)
            || self.dw.dim() != (channels, 3, 3)
        {
            return Err(QcsError::Input(format!(
                "feature fusion kernels do not match {channels} channels"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView4<f64>) -> Result<Array4<f64>> {
        self.validate(x.dim().1)?;
        let y = pointwise(x, &self.pw1);
        let mut y = depthwise3x3(y.view(), &self.dw);
        y.mapv_inplace(gelu);
        Ok(pointwise(y.view(), &self.pw2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmbParams {
    pub w1: f64,
    pub w2: f64,
    pub norm: LayerNormParams,
    pub spatial: SpatialSsmParams,
    pub spectral: SpectralParams,
    pub coupling: LowRankCoupling,
    /// `None` skips the fusion block, leaving `Y_out` as the block output.
    pub ffb: Option<FeatureFusion>,
    /// Spatial grid `(H, W)` the spectral parameters were built for.
    pub grid: (usize, usize),
}

impl DmbParams {
    pub fn channels(&self) -> usize {
        self.norm.scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let (h, w) = self.grid;
        if self.norm.shift.len() != c || self.spatial.channels() != c {
            return Err(QcsError::Input(format!("block parameters disagree on channel count {c}")));
        }
        self.spectral.validate()?;
        self.coupling.validate()?;
        if self.spectral.grid() != (h, half_width(w)) {
            return Err(QcsError::Input(format!(
                "spectral parameters cover {:?}, block grid is {h}x{w}",
                self.spectral.grid()
            )));
        }
        if self.coupling.groups() != self.spectral.groups() || self.coupling.bins() != h * half_width(w) {
            return Err(QcsError::Input("coupling does not match spectral parameters".into()));
        }
        if c % self.spectral.groups() != 0 {
            return Err(QcsError::Input(format!(
                "{} groups do not divide {c} channels",
                self.spectral.groups()
            )));
        }
        if let Some(ffb) = &self.ffb {
            ffb.validate(c)?;
        }
        if !(self.w1.is_finite() && self.w2.is_finite()) {
            return Err(QcsError::Input("fusion weights must be finite".into()));
        }
        Ok(())
    }

    /// Fusion weights zero and no fusion block: the block is the identity map.
    pub fn residual_identity(channels: usize, state: usize, groups: usize, grid: (usize, usize)) -> Self {
        let (h, w) = grid;
        Self {
            w1: 0.0,
            w2: 0.0,
            norm: LayerNormParams::identity(channels),
            spatial: SpatialSsmParams::skip(channels, state),
            spectral: SpectralParams::identity(groups, h, w),
            coupling: LowRankCoupling::disabled(groups, h * half_width(w)),
            ffb: None,
            grid,
        }
    }

    /// Gaussian initialization with standard deviation 0.02 for every learned
    /// array; unit layer-norm scale, zero shift, unit fusion weights and warmup.
    /// Decays are the absolute values of their draws.
    pub fn seeded(
        channels: usize,
        state: usize,
        groups: usize,
        rank: usize,
        steps: u32,
        grid: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        if channels == 0 || groups == 0 || channels % groups != 0 || steps == 0 {
            return Err(QcsError::Parameter(format!(
                "cannot build a block with {channels} channels, {groups} groups, {steps} steps"
            )));
        }
        let (h, w) = grid;
        if h == 0 || w == 0 {
            return Err(QcsError::Parameter("block grid must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_SCALE).expect("positive std");
        let mut draw = move || normal.sample(&mut rng);
        let sshape = (groups, h, half_width(w));
        let bins = h * half_width(w);
        let spatial = SpatialSsmParams::new(
            Array2::from_shape_simple_fn((state, state), &mut draw),
            Array2::from_shape_simple_fn((state, channels), &mut draw),
            Array2::from_shape_simple_fn((channels, state), &mut draw),
            Array1::from_shape_simple_fn(channels, &mut draw),
        )?;
        let mut cdraw = || num_complex::Complex64::new(draw(), draw());
        let spectral = SpectralParams::new(
            Array3::from_shape_simple_fn(sshape, || cdraw().re.abs()),
            Array3::from_shape_simple_fn(sshape, || cdraw().re),
            Array3::from_shape_simple_fn(sshape, &mut cdraw),
            Array3::from_shape_simple_fn(sshape, &mut cdraw),
            steps,
        )?;
        let coupling = LowRankCoupling {
            u: Array3::from_shape_simple_fn((groups, rank, bins), &mut cdraw),
            v: Array3::from_shape_simple_fn((groups, rank, bins), &mut cdraw),
            alpha: (0..groups).map(|_| cdraw().re).collect(),
            warmup: 1.0,
        };
        let ffb = FeatureFusion {
            pw1: Array2::from_shape_simple_fn((channels, channels), || cdraw().re),
            dw: Array3::from_shape_simple_fn((channels, 3, 3), || cdraw().re),
            pw2: Array2::from_shape_simple_fn((channels, channels), || cdraw().re),
        };
        let p = Self {
            w1: 1.0,
            w2: 1.0,
            norm: LayerNormParams::identity(channels),
            spatial,
            spectral,
            coupling,
            ffb: Some(ffb),
            grid,
        };
        p.validate()?;
        Ok(p)
    }
}

fn check_channels(x: ArrayView4<f64>, channels: usize, what: &'static str) -> Result<()> {
    if x.dim().1 != channels {
        return Err(QcsError::dim(what, channels, x.dim().1));
    }
    Ok(())
}

/// Normalizes each spatial position over channels (population variance,
/// `eps = 1e-5`), then applies the per-channel affine map.
pub fn layer_norm(x: ArrayView4<f64>, norm: &LayerNormParams) -> Result<Array4<f64>> {
    let (b, c, h, w) = x.dim();
    check_channels(x, norm.scale.len(), "layer norm")?;
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for hi in 0..h {
            for wi in 0..w {
                let col = x.slice(ndarray::s![bi, .., hi, wi]);
                let mean = col.sum() / c as f64;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for ci in 0..c {
                    out[[bi, ci, hi, wi]] = (x[[bi, ci, hi, wi]] - mean) * inv * norm.scale[ci] + norm.shift[ci];
                }
            }
        }
    }
    Ok(out)
}

/// Per-token scan outputs `y_t = C h_t + D z_t`, state advanced after the
/// read-out, `h_1 = 0`.
pub fn spatial_scan_raw(x: ArrayView4<f64>, p: &SpatialSsmParams) -> Result<Array4<f64>> {
    let (b, c, h, w) = x.dim();
    check_channels(x, p.channels(), "spatial scan")?;
    let s = p.state_dim();
    let mut out = Array4::zeros((b, c, h, w));
    let mut state = vec![0.0; s];
    let mut next = vec![0.0; s];
    for bi in 0..b {
        state.iter_mut().for_each(|v| *v = 0.0);
        for hi in 0..h {
            for wi in 0..w {
                let z = x.slice(ndarray::s![bi, .., hi, wi]);
                for ci in 0..c {
                    let mut acc = 0.0;
                    for si in 0..s {
                        acc += p.c[[ci, si]] * state[si];
                    }
                    out[[bi, ci, hi, wi]] = acc + p.d_skip[ci] * z[ci];
                }
                for si in 0..s {
                    let mut acc = 0.0;
                    for sj in 0..s {
                        acc += p.a[[si, sj]] * state[sj];
                    }
                    for ci in 0..c {
                        acc += p.b[[si, ci]] * z[ci];
                    }
                    next[si] = acc;
                }
                std::mem::swap(&mut state, &mut next);
            }
        }
    }
    Ok(out)
}

/// Spatial branch `Y_spa(t) = y_t * SiLU(F_LN(t))`.
pub fn spatial_scan(f_ln: ArrayView4<f64>, p: &SpatialSsmParams) -> Result<Array4<f64>> {
    let mut y = spatial_scan_raw(f_ln, p)?;
    y.zip_mut_with(&f_ln, |v, &g| *v *= silu(g));
    Ok(y)
}

/// `out[o] = sum_i k[o, i] in[i]` at every position.
pub fn pointwise(x: ArrayView4<f64>, k: &Array2<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let co = k.nrows();
    let mut out = Array4::zeros((b, co, h, w));
    for bi in 0..b {
        for o in 0..co {
            for i in 0..c {
                let kv = k[[o, i]];
                if kv == 0.0 {
                    continue;
                }
                let src = x.slice(ndarray::s![bi, i, .., ..]);
                let mut dst = out.slice_mut(ndarray::s![bi, o, .., ..]);
                dst.zip_mut_with(&src, |d, &s| *d += kv * s);
            }
        }
    }
    out
}

/// Per-channel 3x3 cross-correlation with zero padding 1.
pub fn depthwise3x3(x: ArrayView4<f64>, k: &Array3<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        let y = hi as isize + dy as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let xx = wi as isize + dx as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += k[[ci, dy, dx]] * x[[bi, ci, y as usize, xx as usize]];
                        }
                    }
                    out[[bi, ci, hi, wi]] = acc;
                }
            }
        }
    }
    out
}

/// Full block forward pass, shape-preserving on `(B, C, H, W)`.
pub fn dmb_forward(x: ArrayView4<f64>, p: &DmbParams) -> Result<Array4<f64>> {
    p.validate()?;
    let (_, _, h, w) = x.dim();
    check_channels(x, p.channels(), "block input")?;
    if (h, w) != p.grid {
        return Err(QcsError::Input(format!(
            "block built for a {:?} grid, input is {h}x{w}",
            p.grid
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(QcsError::Input("block input contains non-finite values".into()));
    }
    let f_ln = layer_norm(x, &p.norm)?;
    let y_spa = spatial_scan(f_ln.view(), &p.spatial)?;
    let y_spe = spectral_branch(f_ln.view(), &p.spectral, &p.coupling)?;
    let mut y_out = y_spa * p.w1;
    y_out.zip_mut_with(&y_spe, |o, &s| *o += p.w2 * s);
    y_out += &x;
    match &p.ffb {
        Some(ffb) => ffb.forward(y_out.view()),
        None => Ok(y_out),
    }
}
