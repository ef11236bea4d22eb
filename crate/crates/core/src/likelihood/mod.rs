//! Noise-perturbed quantized likelihood: effective scales, interval
//! probabilities, their closed-form gradients in the measurement domain, and
//! the image-domain gradient projection.
//!
//! A measurement `y_i` observed through the quantizer constrains the
//! pre-quantization value to the decision interval `[l_i, u_i)`. Under a
//! Gaussian perturbation of scale `eps_i` around `z_i`,
//!
//! ```text
//! p(y_i | z_i) = Phi((u_i - z_i)/eps_i) - Phi((l_i - z_i)/eps_i)
//! d/dz ln p    = (phi(l~) - phi(u~)) / (Phi(u~) - Phi(l~)) / eps_i
//! ```
//!
//! One-sided intervals (every 1-bit codeword, and the saturating ends of a
//! multi-bit codebook) reduce to the Mills ratio `phi(t)/Phi(t)`.

pub mod normal;

use ndarray::{Array1, ArrayView1};

use crate::error::{QcsError, Result};
use crate::quantizer::IntervalBounds;
use crate::sensing::{MeasurementRecord, SensingOperator};

pub use normal::mills_ratio;

/// Physical noise level and per-stage smoothing levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub sigma: f64,
    pub betas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(sigma: f64, betas: Vec<f64>) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(QcsError::Parameter(format!("sigma must be >= 0, got {sigma}")));
        }
        if betas.is_empty() {
            return Err(QcsError::Parameter("noise schedule needs at least one stage".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(QcsError::Parameter(format!("stage beta must be >= 0, got {b}")));
        }
        Ok(Self { sigma, betas })
    }

    pub fn stage_scale(&self, stage: usize, d: ArrayView1<f64>) -> Result<EffectiveScale> {
        effective_scale(self.sigma, self.betas[stage], d).map_err(|e| e.at_stage(stage + 1))
    }
}

/// Per-measurement standard deviation `eps_i = sqrt(sigma^2 + beta^2 d_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveScale(Array1<f64>);

impl EffectiveScale {
    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The same scale for every one of `m` measurements.
    pub fn uniform(eps: f64, m: usize) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(QcsError::DegenerateScale {
                measurement: 0,
                stage: None,
            });
        }
        Ok(Self(Array1::from_elem(m, eps)))
    }
}

/// Interval bounds in units of `eps` relative to `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardizedBounds {
    pub lower: f64,
    pub upper: f64,
}

impl StandardizedBounds {
    pub fn new(z: f64, interval: IntervalBounds, eps: f64) -> Self {
        Self {
            lower: (interval.lower - z) / eps,
            upper: (interval.upper - z) / eps,
        }
    }
}

/// Measurement-domain score `d/dz ln p(y | z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGradient(pub Array1<f64>);

pub fn effective_scale(sigma: f64, beta: f64, d: ArrayView1<f64>) -> Result<EffectiveScale> {
    if !(sigma >= 0.0 && sigma.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
        return Err(QcsError::Parameter(format!(
            "effective scale needs sigma, beta >= 0, got sigma={sigma}, beta={beta}"
        )));
    }
    let eps = d
        .iter()
        .enumerate()
        .map(|(i, &di)| {
            if !(di >= 0.0) {
                return Err(QcsError::Parameter(format!("row-Gram entry {i} is negative: {di}")));
            }
            let e = (sigma * sigma + beta * beta * di).sqrt();
            if e > 0.0 && e.is_finite() {
                Ok(e)
            } else {
                Err(QcsError::DegenerateScale {
                    measurement: i,
                    stage: None,
                })
            }
        })
        .collect::<Result<Array1<f64>>>()?;
    Ok(EffectiveScale(eps))
}

/// `ln p(y | z)` for the decision interval of `y` under scale `eps`.
pub fn log_likelihood_element(z: f64, interval: IntervalBounds, eps: f64) -> f64 {
    let b = StandardizedBounds::new(z, interval, eps);
    normal::log_interval_mass(b.lower, b.upper)
}

/// `d/dz ln p(y | z)`.
pub fn grad_element(z: f64, interval: IntervalBounds, eps: f64) -> f64 {
    let b = StandardizedBounds::new(z, interval, eps);
    let scaled = match (b.lower.is_finite(), b.upper.is_finite()) {
        (false, false) => 0.0,
        (false, true) => -normal::mills_unchecked(b.upper),
        (true, false) => normal::mills_unchecked(-b.lower),
        (true, true) => {
            let log_mass = normal::log_interval_mass(b.lower, b.upper);
            (normal::log_pdf(b.lower) - log_mass).exp() - (normal::log_pdf(b.upper) - log_mass).exp()
        }
    };
    scaled / eps
}

fn check_lengths(z: usize, record: &MeasurementRecord, eps: &EffectiveScale) -> Result<()> {
    if record.len() != z {
        return Err(QcsError::dim("measurement record", z, record.len()));
    }
    if eps.len() != z {
        return Err(QcsError::dim("effective scale", z, eps.len()));
    }
    Ok(())
}

pub fn grad_measurement(
    z: ArrayView1<f64>,
    record: &MeasurementRecord,
    eps: &EffectiveScale,
) -> Result<LikelihoodGradient> {
    check_lengths(z.len(), record, eps)?;
    let g = record
        .intervals()
        .into_iter()
        .zip(z.iter().zip(eps.0.iter()))
        .map(|(iv, (&zi, &ei))| grad_element(zi, iv, ei))
        .collect();
    Ok(LikelihoodGradient(g))
}

/// One likelihood-gradient step `mu = x + lambda M^T grad_z ln p(y | Mx)`.
pub fn likelihood_projection(
    x: ArrayView1<f64>,
    op: &SensingOperator,
    record: &MeasurementRecord,
    lambda: f64,
    eps: &EffectiveScale,
) -> Result<Array1<f64>> {
    if !lambda.is_finite() {
        return Err(QcsError::Parameter(format!("step size must be finite, got {lambda}")));
    }
    let z = op.apply(x)?;
    let g = grad_measurement(z.view(), record, eps)?;
    let back = op.apply_transpose(g.0.view())?;
    Ok(&x + &(back * lambda))
}

/// Mean negative log-likelihood over measurements.
pub fn nll(record: &MeasurementRecord, z: ArrayView1<f64>, eps: &EffectiveScale) -> Result<f64> {
    check_lengths(z.len(), record, eps)?;
    if record.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = record
        .intervals()
        .into_iter()
        .zip(z.iter().zip(eps.0.iter()))
        .map(|(iv, (&zi, &ei))| -log_likelihood_element(zi, iv, ei))
        .sum();
    // adding 0.0 turns a -0.0 total into 0.0
    Ok(total / record.len() as f64 + 0.0)
}
