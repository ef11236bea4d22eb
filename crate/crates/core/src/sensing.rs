//! Dense Gaussian sensing operators and the quantized measurement simulator.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{QcsError, Result};
use crate::quantizer::{CodewordIndex, IntervalBounds, QuantizerSpec};

/// Dense row-major `rows x cols` sensing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingOperator {
    entries: Array2<f64>,
    seed: Option<u64>,
}

/// Signal of length `N`, optionally carrying an `(H, W, channels)` image
/// shape with row-major HWC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    pub values: Array1<f64>,
    pub shape: Option<ImageShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A 1 x n single-channel view of a plain vector.
    pub fn row(n: usize) -> Self {
        Self {
            height: 1,
            width: n,
            channels: 1,
        }
    }
}

impl SignalVector {
    pub fn new(values: Array1<f64>, shape: Option<ImageShape>) -> Result<Self> {
        if let Some(s) = shape {
            if s.len() != values.len() {
                return Err(QcsError::dim("signal image shape", s.len(), values.len()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QcsError::Input("signal contains non-finite values".into()));
        }
        Ok(Self { values, shape })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn image_shape(&self) -> ImageShape {
        self.shape.unwrap_or_else(|| ImageShape::row(self.len()))
    }
}

/// A quantized observation `y = Q(Mx + n)` and how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub codeword_indices: Vec<CodewordIndex>,
    pub spec: QuantizerSpec,
    pub sigma: f64,
    pub noise_seed: u64,
    pub operator_seed: u64,
}

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.codeword_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codeword_indices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(QcsError::Parameter(format!(
                "noise sigma must be finite and non-negative, got {}",
                self.sigma
            )));
        }
        self.codeword_indices
            .iter()
            .try_for_each(|&c| self.spec.check_index(c))
    }

    pub fn intervals(&self) -> Vec<IntervalBounds> {
        self.codeword_indices
            .iter()
            .map(|&c| self.spec.interval_unchecked(c))
            .collect()
    }

    /// Codeword values `y_hat` of the record.
    pub fn dequantize(&self) -> Array1<f64> {
        self.codeword_indices
            .iter()
            .map(|&c| self.spec.codeword(c))
            .collect()
    }

    /// Number of occurrences of each codeword.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.spec.levels()];
        for c in &self.codeword_indices {
            h[c.0 as usize] += 1;
        }
        h
    }
}

/// `m x n` matrix with i.i.d. `N(0, 1/m)` entries, deterministic in `seed`.
pub fn gaussian_operator(m: usize, n: usize, seed: u64) -> Result<SensingOperator> {
    if m == 0 || n == 0 {
        return Err(QcsError::Parameter(format!(
            "sensing operator needs positive dimensions, got {m} x {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("positive std");
    let entries = Array2::from_shape_simple_fn((m, n), || normal.sample(&mut rng));
    Ok(SensingOperator {
        entries,
        seed: Some(seed),
    })
}

impl SensingOperator {
    pub fn from_matrix(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(QcsError::Parameter("sensing operator needs positive dimensions".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(QcsError::Input("sensing operator has non-finite entries".into()));
        }
        Ok(Self {
            entries: entries.as_standard_layout().into_owned(),
            seed: None,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_matrix(Array2::eye(n))
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.cols() {
            return Err(QcsError::dim("apply", self.cols(), x.len()));
        }
        Ok(self.entries.dot(&x))
    }

    pub fn apply_transpose(&self, g: ArrayView1<f64>) -> Result<Array1<f64>> {
        if g.len() != self.rows() {
            return Err(QcsError::dim("apply_transpose", self.rows(), g.len()));
        }
        Ok(self.entries.t().dot(&g))
    }

    /// Diagonal of `M M^T`, i.e. squared row norms.
    pub fn row_gram_diag(&self) -> Array1<f64> {
        self.entries
            .rows()
            .into_iter()
            .map(|r| r.dot(&r))
            .collect()
    }

    /// Largest eigenvalue of `M^T M` by power iteration.
    pub fn gram_norm(&self) -> f64 {
        let n = self.cols();
        let mut v: Array1<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618).fract()).collect();
        let mut value = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let norm = v.dot(&v).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v /= norm;
            let w = self.entries.t().dot(&self.entries.dot(&v));
            value = v.dot(&w);
            v = w;
        }
        value
    }
}

const POWER_ITERATIONS: usize = 200;

/// Simulates `y_i = Q(z_i + n_i)` with `z = Mx` and `n_i ~ N(0, sigma^2)` drawn from `noise_seed`.
pub fn simulate(
    x: ArrayView1<f64>,
    op: &SensingOperator,
    sigma: f64,
    spec: QuantizerSpec,
    noise_seed: u64,
) -> Result<MeasurementRecord> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(QcsError::Parameter(format!(
            "noise sigma must be finite and non-negative, got {sigma}"
        )));
    }
    let z = op.apply(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let codeword_indices = z
        .iter()
        .map(|&zi| {
            let n: f64 = StandardNormal.sample(&mut rng);
            spec.quantize(zi + sigma * n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementRecord {
        codeword_indices,
        spec,
        sigma,
        noise_seed,
        operator_seed: op.seed.unwrap_or(0),
    })
}
