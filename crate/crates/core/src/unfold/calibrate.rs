use std::cell::RefCell;

use argmin::core::{CostFunction, Error as SolverError, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{composite_loss, reconstruct, ReconstructOptions, Refinement, StageSchedule};
use crate::error::{QcsError, Result};
use crate::likelihood::effective_scale;
use crate::sensing::{ImageShape, MeasurementRecord, SensingOperator, SignalVector};

/// Simplex edge length in log space.
const SIMPLEX_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub truth: SignalVector,
    pub record: MeasurementRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub schedule: StageSchedule,
    /// Mean loss of the starting schedule.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub evaluations: usize,
}

struct Search {
    evaluations: usize,
    best: Option<(f64, StageSchedule)>,
    initial: Option<f64>,
}

struct Objective<'a> {
    pairs: &'a [TrainingPair],
    op: &'a SensingOperator,
    refinement: &'a Refinement,
    shape: ImageShape,
    options: ReconstructOptions,
    stages: usize,
    budget: usize,
    start: Vec<f64>,
    search: &'a RefCell<Search>,
}

impl Objective<'_> {
    fn schedule(&self, p: &[f64]) -> Option<StageSchedule> {
        let (l, b) = p.split_at(self.stages);
        StageSchedule::new(l.iter().map(|v| v.exp()).collect(), b.iter().map(|v| v.exp()).collect()).ok()
    }

    fn mean_loss(&self, schedule: &StageSchedule) -> Result<f64> {
        let d = self.op.row_gram_diag();
        let mut total = 0.0;
        for pair in self.pairs {
            let r = reconstruct(&pair.record, self.op, schedule, self.refinement, self.shape, self.options)?;
            let eps = effective_scale(pair.record.sigma, schedule.final_beta(), d.view())?;
            total += composite_loss(r.estimate.values.view(), pair.truth.values.view(), &pair.record, self.op, &eps)?;
        }
        Ok(total / self.pairs.len() as f64)
    }
}

/// Large finite stand-in for failed evaluations so simplex arithmetic stays finite.
const PENALTY: f64 = 1e100;

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, SolverError> {
        let mut search = self.search.borrow_mut();
        if *p == self.start {
            if let Some(v) = search.initial {
                return Ok(v);
            }
        }
        if search.evaluations >= self.budget {
            // no evaluation happens; the solver just sees an unattractive point
            return Ok(PENALTY);
        }
        search.evaluations += 1;
        let Some(schedule) = self.schedule(p) else {
            return Ok(PENALTY);
        };
        let loss = match self.mean_loss(&schedule) {
            Ok(v) if v.is_finite() => v,
            _ => return Ok(PENALTY),
        };
        if search.best.as_ref().map_or(true, |(b, _)| loss < *b) {
            search.best = Some((loss, schedule));
        }
        Ok(loss)
    }
}

/// Fits `(log lambda_k, log beta_k)` by Nelder-Mead, starting from `start`,
/// using at most `budget` evaluations of the mean composite loss.
pub fn calibrate(
    pairs: &[TrainingPair],
    op: &SensingOperator,
    start: &StageSchedule,
    refinement: &Refinement,
    options: ReconstructOptions,
    budget: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    let first = pairs
        .first()
        .ok_or_else(|| QcsError::EmptyData("calibration needs at least one training pair".into()))?;
    if budget == 0 {
        return Err(QcsError::Parameter("evaluation budget must be at least 1".into()));
    }
    let shape = first.truth.image_shape();
    if let Some(p) = pairs.iter().find(|p| p.truth.image_shape() != shape) {
        return Err(QcsError::Consistency(format!(
            "training signals disagree on shape: {:?} vs {:?}",
            shape,
            p.truth.image_shape()
        )));
    }
    let default = start.clone();
    let stages = start.stages();
    if default.lambdas().iter().chain(default.betas()).any(|v| *v <= 0.0) {
        return Err(QcsError::Parameter("calibration starts from positive step sizes and scales".into()));
    }
    let search = RefCell::new(Search {
        evaluations: 0,
        best: None,
        initial: None,
    });
    let x0: Vec<f64> = default.lambdas().iter().chain(default.betas()).map(|v| v.ln()).collect();
    let objective = Objective {
        pairs,
        op,
        refinement,
        shape,
        options,
        stages,
        budget,
        start: x0.clone(),
        search: &search,
    };
    // evaluated first and counted, so the result is never worse than the start
    let initial_loss = objective.mean_loss(&default)?;
    {
        let mut search = objective.search.borrow_mut();
        search.evaluations = 1;
        search.initial = Some(initial_loss);
        search.best = Some((initial_loss, default.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += if rng.gen::<bool>() { SIMPLEX_STEP } else { -SIMPLEX_STEP };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex);
    let _ = Executor::new(objective, solver)
        .configure(|s| s.max_iters(budget as u64))
        .run();

    let search = search.into_inner();
    let (final_loss, schedule) = search.best.unwrap_or((initial_loss, default));
    Ok(CalibrationReport {
        schedule,
        initial_loss,
        final_loss,
        evaluations: search.evaluations,
    })
}
