//! Seeded desk-scale experiment setups shared by the acceptance suite and the
//! pilot program.

use ndarray::Array1;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::metrics::cosine_similarity;
use crate::quantizer::QuantizerSpec;
use crate::sensing::{gaussian_operator, simulate, ImageShape, MeasurementRecord, SensingOperator, SignalVector};
use crate::unfold::refine::dct_matrix;
use crate::unfold::{
    calibrate, reconstruct, vanilla_reconstruct, CalibrationReport, ReconstructOptions, Refinement,
    StageSchedule, TrainingPair,
};

/// Unit-norm length-`n` signal with `nonzeros` random orthonormal-DCT coefficients.
pub fn dct_sparse_signal(n: usize, nonzeros: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = Array1::<f64>::zeros(n);
    for i in sample(&mut rng, n, nonzeros.min(n)).into_iter() {
        coeffs[i] = rng.sample(StandardNormal);
    }
    let x = dct_matrix(n).t().dot(&coeffs);
    let norm = x.dot(&x).sqrt();
    if norm > 0.0 {
        x / norm
    } else {
        x
    }
}

/// Smooth `side x side` image in `[0, 1]` built from a few random cosines.
pub fn smooth_image(side: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.1..0.25),
            )
        })
        .collect();
    let s = side as f64;
    Array1::from_shape_fn(side * side, |p| {
        let (i, j) = ((p / side) as f64, (p % side) as f64);
        let v: f64 = terms
            .iter()
            .map(|(fi, fj, ph, amp)| amp * (std::f64::consts::PI * (fi * i + fj * j) / s + ph).cos())
            .sum();
        (0.5 + v).clamp(0.0, 1.0)
    })
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub truth: Array1<f64>,
    pub op: SensingOperator,
    pub record: MeasurementRecord,
}

/// Seed `s` drives the signal (`s`), the operator (`s + 1`) and the noise (`s + 2`).
pub fn instance(truth: Array1<f64>, m: usize, sigma: f64, spec: QuantizerSpec, seed: u64) -> Result<Instance> {
    let op = gaussian_operator(m, truth.len(), seed.wrapping_add(1))?;
    let record = simulate(truth.view(), &op, sigma, spec, seed.wrapping_add(2))?;
    Ok(Instance { truth, op, record })
}

#[derive(Debug, Clone, Copy)]
pub struct RecoverySetup {
    pub n: usize,
    pub nonzeros: usize,
    pub m: usize,
    pub stages: usize,
    pub tau: f64,
    pub train_pairs: usize,
    pub budget: usize,
}

impl Default for RecoverySetup {
    fn default() -> Self {
        Self {
            n: 64,
            nonzeros: 8,
            m: 1024,
            stages: 50,
            tau: 0.002,
            train_pairs: 4,
            budget: 300,
        }
    }
}

pub const TRAIN_SEED_BASE: u64 = 10_000;
pub const CALIBRATION_SEED: u64 = 7;

/// Calibrates on training signals sharing one operator, then returns the
/// schedule report.
pub fn calibrate_recovery(setup: &RecoverySetup) -> Result<CalibrationReport> {
    let op = gaussian_operator(setup.m, setup.n, TRAIN_SEED_BASE)?;
    let pairs = (0..setup.train_pairs as u64)
        .map(|i| {
            let s = TRAIN_SEED_BASE + 10 * (i + 1);
            let x = dct_sparse_signal(setup.n, setup.nonzeros, s);
            Ok(TrainingPair {
                record: simulate(x.view(), &op, 0.0, QuantizerSpec::sign(), s + 2)?,
                truth: SignalVector::new(x, None)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let start = StageSchedule::curvature_scaled(setup.stages, 0.0, &op)?;
    calibrate(
        &pairs,
        &op,
        &start,
        &Refinement::DctSoftThreshold { tau: setup.tau },
        ReconstructOptions::default(),
        setup.budget,
        CALIBRATION_SEED,
    )
}

/// Cosine similarity of the reconstruction for test seed `seed`.
pub fn recovery_cosine(setup: &RecoverySetup, schedule: &StageSchedule, seed: u64) -> Result<f64> {
    let x = dct_sparse_signal(setup.n, setup.nonzeros, seed);
    let inst = instance(x, setup.m, 0.0, QuantizerSpec::sign(), seed)?;
    let r = reconstruct(
        &inst.record,
        &inst.op,
        schedule,
        &Refinement::DctSoftThreshold { tau: setup.tau },
        ImageShape::row(setup.n),
        ReconstructOptions::default(),
    )?;
    cosine_similarity(r.estimate.values.view(), inst.truth.view())
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineSetup {
    pub side: usize,
    pub m: usize,
    pub sigma: f64,
    pub delta: f64,
    pub stages: usize,
}

impl Default for BaselineSetup {
    fn default() -> Self {
        Self {
            side: 16,
            m: 512,
            sigma: 0.01,
            delta: 0.5,
            stages: 30,
        }
    }
}

/// Final NLL of (likelihood, vanilla) reconstructions under one schedule.
pub fn paired_final_nll(setup: &BaselineSetup, schedule: &StageSchedule, options: ReconstructOptions, seed: u64) -> Result<(f64, f64)> {
    let x = smooth_image(setup.side, seed);
    let spec = QuantizerSpec::new(2, setup.delta)?;
    let inst = instance(x, setup.m, setup.sigma, spec, seed)?;
    let shape = ImageShape {
        height: setup.side,
        width: setup.side,
        channels: 1,
    };
    let a = reconstruct(&inst.record, &inst.op, schedule, &Refinement::Identity, shape, options)?;
    let b = vanilla_reconstruct(&inst.record, &inst.op, schedule, &Refinement::Identity, shape, options)?;
    Ok((*a.nll_trace.last().expect("K >= 1"), *b.nll_trace.last().expect("K >= 1")))
}
