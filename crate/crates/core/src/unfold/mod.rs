//! Multi-stage reconstruction: a data-consistency step followed by a
//! refinement operator per stage, schedule calibration, and the linear
//! least-squares baseline.

mod calibrate;
pub mod refine;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{QcsError, Result};
use crate::likelihood::{effective_scale, likelihood_projection, nll, EffectiveScale};
use crate::sensing::{ImageShape, MeasurementRecord, SensingOperator, SignalVector};

pub use calibrate::{calibrate, CalibrationReport, TrainingPair};
pub use refine::Refinement;

/// Weight of the NLL term in [`composite_loss`].
pub const NLL_WEIGHT: f64 = 0.05;
/// Step-size halvings tried per stage in monotone mode.
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    lambdas: Vec<f64>,
    betas: Vec<f64>,
}

impl StageSchedule {
    pub fn new(lambdas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(QcsError::Parameter("schedule needs at least one stage".into()));
        }
        if lambdas.len() != betas.len() {
            return Err(QcsError::Parameter(format!(
                "{} step sizes but {} smoothing scales",
                lambdas.len(),
                betas.len()
            )));
        }
        if let Some(l) = lambdas.iter().find(|l| !l.is_finite()) {
            return Err(QcsError::Parameter(format!("step size must be finite, got {l}")));
        }
        if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(QcsError::Parameter(format!("smoothing scale must be >= 0, got {b}")));
        }
        Ok(Self { lambdas, betas })
    }

    /// `lambda_k = 0.5`, `beta_k = 0.1 (K - k + 1) / K`.
    pub fn default_for(stages: usize) -> Result<Self> {
        let k = stages as f64;
        Self::new(
            vec![0.5; stages],
            (1..=stages).map(|i| 0.1 * (k - i as f64 + 1.0) / k).collect(),
        )
    }

    /// Default smoothing scales with `lambda_k = eps_k^2 / |M|^2`, where `eps_k`
    /// is the smallest effective scale of stage `k`. That step never exceeds
    /// the inverse curvature bound of the stage NLL.
    pub fn curvature_scaled(stages: usize, sigma: f64, op: &SensingOperator) -> Result<Self> {
        let base = Self::default_for(stages)?;
        let d_min = op.row_gram_diag().iter().copied().fold(f64::INFINITY, f64::min);
        let l = op.gram_norm();
        if !(l > 0.0) {
            return Err(QcsError::Input("sensing operator is zero".into()));
        }
        let lambdas = base
            .betas
            .iter()
            .map(|b| (sigma * sigma + b * b * d_min) / l)
            .collect();
        Self::new(lambdas, base.betas)
    }

    pub fn constant(stages: usize, lambda: f64, beta: f64) -> Result<Self> {
        Self::new(vec![lambda; stages], vec![beta; stages])
    }

    pub fn stages(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn final_beta(&self) -> f64 {
        *self.betas.last().expect("non-empty schedule")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    #[default]
    Zeros,
    /// `M^T y_hat / max_i d_i`
    Backprojection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReconstructOptions {
    pub init: InitMode,
    /// Backtrack on the step size so the per-stage NLL never increases.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub estimate: SignalVector,
    /// NLL after each stage, all evaluated at the final-stage scale.
    pub nll_trace: Vec<f64>,
    /// `|x_k - x_{k-1}|_2` per stage.
    pub residual_trace: Vec<f64>,
    /// Step size actually taken per stage (0 when a monotone stage was rejected).
    pub step_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Update {
    Likelihood,
    Linear,
}

pub fn initial_estimate(record: &MeasurementRecord, op: &SensingOperator, mode: InitMode) -> Result<Array1<f64>> {
    match mode {
        InitMode::Zeros => Ok(Array1::zeros(op.cols())),
        InitMode::Backprojection => {
            let d = op.row_gram_diag();
            let scale = d.iter().copied().fold(0.0, f64::max);
            if scale <= 0.0 {
                return Err(QcsError::Input("sensing operator has no nonzero rows".into()));
            }
            Ok(op.apply_transpose(record.dequantize().view())? / scale)
        }
    }
}

/// Likelihood-gradient reconstruction.
pub fn reconstruct(
    record: &MeasurementRecord,
    op: &SensingOperator,
    schedule: &StageSchedule,
    refinement: &Refinement,
    shape: ImageShape,
    options: ReconstructOptions,
) -> Result<ReconstructionResult> {
    run(record, op, schedule, refinement, shape, options, Update::Likelihood)
}

/// Baseline with the linear step `x + lambda M^T (y_hat - M x)`.
pub fn vanilla_reconstruct(
    record: &MeasurementRecord,
    op: &SensingOperator,
    schedule: &StageSchedule,
    refinement: &Refinement,
    shape: ImageShape,
    options: ReconstructOptions,
) -> Result<ReconstructionResult> {
    run(record, op, schedule, refinement, shape, options, Update::Linear)
}

fn linear_projection(x: ArrayView1<f64>, op: &SensingOperator, y_hat: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
    let r = y_hat - &op.apply(x)?;
    Ok(&x + &(op.apply_transpose(r.view())? * lambda))
}

fn stage_nll(record: &MeasurementRecord, op: &SensingOperator, x: &Array1<f64>, eps: &EffectiveScale) -> Result<f64> {
    nll(record, op.apply(x.view())?.view(), eps)
}

fn check_problem(record: &MeasurementRecord, op: &SensingOperator, shape: ImageShape) -> Result<()> {
    record.validate()?;
    if record.len() != op.rows() {
        return Err(QcsError::dim("measurement count", op.rows(), record.len()));
    }
    if shape.len() != op.cols() {
        return Err(QcsError::dim("signal shape", op.cols(), shape.len()));
    }
    Ok(())
}

fn run(
    record: &MeasurementRecord,
    op: &SensingOperator,
    schedule: &StageSchedule,
    refinement: &Refinement,
    shape: ImageShape,
    options: ReconstructOptions,
    update: Update,
) -> Result<ReconstructionResult> {
    check_problem(record, op, shape)?;
    refinement.validate()?;
    let k = schedule.stages();
    let d = op.row_gram_diag();
    let eval_eps = effective_scale(record.sigma, schedule.final_beta(), d.view()).map_err(|e| e.at_stage(k))?;
    let y_hat = record.dequantize();

    let mut x = initial_estimate(record, op, options.init)?;
    let mut current = if options.monotone {
        stage_nll(record, op, &x, &eval_eps)?
    } else {
        f64::NAN
    };
    let mut nll_trace = Vec::with_capacity(k);
    let mut residual_trace = Vec::with_capacity(k);
    let mut step_trace = Vec::with_capacity(k);

    for stage in 0..k {
        let eps = effective_scale(record.sigma, schedule.betas[stage], d.view()).map_err(|e| e.at_stage(stage + 1))?;
        let step = |lambda: f64| -> Result<Array1<f64>> {
            let mu = match update {
                Update::Likelihood => likelihood_projection(x.view(), op, record, lambda, &eps)
                    .map_err(|e| e.at_stage(stage + 1))?,
                Update::Linear => linear_projection(x.view(), op, &y_hat, lambda)?,
            };
            refinement.apply(&mu, shape)
        };

        let mut lambda = schedule.lambdas[stage];
        let (next, value, taken) = if options.monotone {
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cand = step(lambda)?;
                let v = stage_nll(record, op, &cand, &eval_eps)?;
                if v <= current {
                    accepted = Some((cand, v, lambda));
                    break;
                }
                lambda *= 0.5;
            }
            accepted.unwrap_or_else(|| (x.clone(), current, 0.0))
        } else {
            let cand = step(lambda)?;
            let v = stage_nll(record, op, &cand, &eval_eps)?;
            (cand, v, lambda)
        };

        residual_trace.push((&next - &x).mapv(|v| v * v).sum().sqrt());
        nll_trace.push(value);
        step_trace.push(taken);
        current = value;
        x = next;
    }

    Ok(ReconstructionResult {
        estimate: SignalVector::new(x, Some(shape))?,
        nll_trace,
        residual_trace,
        step_trace,
    })
}

/// `|x - x_gt|_2 + 0.05 * NLL(record, M x, eps_final)`.
pub fn composite_loss(
    estimate: ArrayView1<f64>,
    truth: ArrayView1<f64>,
    record: &MeasurementRecord,
    op: &SensingOperator,
    eps_final: &EffectiveScale,
) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(QcsError::dim("loss ground truth", estimate.len(), truth.len()));
    }
    let err = (&estimate - &truth).mapv(|v| v * v).sum().sqrt();
    let data = nll(record, op.apply(estimate)?.view(), eps_final)?;
    Ok(err + NLL_WEIGHT * data)
}
