//! Pilot runs for the desk-scale recovery and baseline experiments.

use qcs::experiments::*;
use qcs::sensing::gaussian_operator;
use qcs::unfold::{ReconstructOptions, StageSchedule};

fn summarize(name: &str, cos: &[f64]) {
    let pass = cos[..20].iter().filter(|c| **c >= 0.95).count();
    let min = cos.iter().copied().fold(f64::INFINITY, f64::min);
    println!("{name}: seeds 0..20 pass {pass}/20, min over {} seeds {min:.4}", cos.len());
    println!("  {}", cos.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join(" "));
}

fn main() -> qcs::Result<()> {
    let setup = RecoverySetup::default();
    let op = gaussian_operator(setup.m, setup.n, TRAIN_SEED_BASE)?;
    let start = StageSchedule::curvature_scaled(setup.stages, 0.0, &op)?;
    let cos: Vec<f64> = (0..40).map(|s| recovery_cosine(&setup, &start, s)).collect::<qcs::Result<_>>()?;
    summarize("start", &cos);

    let t = std::time::Instant::now();
    let report = calibrate_recovery(&setup)?;
    println!(
        "recovery calibration: initial={:.6} final={:.6} evals={} ({:.1?})",
        report.initial_loss,
        report.final_loss,
        report.evaluations,
        t.elapsed()
    );
    let cos: Vec<f64> = (0..40)
        .map(|s| recovery_cosine(&setup, &report.schedule, s))
        .collect::<qcs::Result<_>>()?;
    summarize("calibrated", &cos);

    let base = BaselineSetup::default();
    let sched = StageSchedule::default_for(base.stages)?;
    let monotone = ReconstructOptions { monotone: true, ..Default::default() };
    let mut la = 0.0;
    let mut va = 0.0;
    let mut wins = 0;
    for s in 0..20 {
        let (l, v) = paired_final_nll(&base, &sched, monotone, s)?;
        println!("baseline seed {s}: likelihood {l:.6e} vanilla {v:.6e}");
        la += l / 20.0;
        va += v / 20.0;
        wins += usize::from(l <= v);
    }
    println!("baseline: likelihood mean NLL {la:.6e}, vanilla {va:.6e}, likelihood <= vanilla on {wins}/20");
    Ok(())
}
