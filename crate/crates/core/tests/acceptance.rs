//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array4;
use num_complex::Complex64;
use qcs::checks::{
    check_lowrank, check_realness, check_recurrence, check_shift, gradcheck, GradCheckConfig, SsmCheckConfig,
};
use qcs::dmb::oracle::naive_scan_oracle;
use qcs::dmb::{dmb_forward, spatial_scan_raw, DmbParams};
use qcs::experiments::{
    calibrate_recovery, dct_sparse_signal, instance, paired_final_nll, recovery_cosine, BaselineSetup,
    RecoverySetup,
};
use qcs::io::TensorFile;
use qcs::likelihood::log_likelihood_element;
use qcs::quantizer::{CodewordIndex, QuantizerSpec};
use qcs::sensing::{ImageShape, SignalVector};
use qcs::spectral::geometric_gain;
use qcs::unfold::{reconstruct, ReconstructOptions, Refinement, StageSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

type Check = fn() -> qcs::Result<Outcome>;

fn gradient_fidelity() -> qcs::Result<Outcome> {
    let mut worst = 0.0f64;
    let mut non_finite = 0;
    let mut trials = 0;
    for (bits, step) in [(1, 1.0), (2, 0.5), (3, 0.25)] {
        let spec = if bits == 1 { QuantizerSpec::sign() } else { QuantizerSpec::new(bits, step)? };
        let r = gradcheck(&GradCheckConfig {
            spec,
            trials: 10_000,
            eps_range: (1e-3, 10.0),
            seed: 100 + bits as u64,
        })?;
        worst = worst.max(r.max_mismatch);
        non_finite += r.non_finite;
        trials += r.trials;
    }
    Ok(outcome(
        worst <= 1e-5 && non_finite == 0,
        format!("{trials} trials, max mismatch {worst:.2e}, non-finite {non_finite}"),
    ))
}

fn partition_of_unity() -> qcs::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for bits in 1..=4u32 {
        let spec = if bits == 1 { QuantizerSpec::sign() } else { QuantizerSpec::new(bits, rng.gen_range(0.1..2.0))? };
        let intervals: Vec<_> = (0..spec.levels())
            .map(|c| spec.interval_of(CodewordIndex(c as u16)))
            .collect::<qcs::Result<_>>()?;
        for _ in 0..1000 {
            let eps = 10f64.powf(rng.gen_range(-3.0..1.0));
            let z = rng.gen_range(-6.0..6.0) * spec.codewords().last().copied().unwrap_or(1.0);
            let total: f64 = intervals.iter().map(|iv| log_likelihood_element(z, *iv, eps).exp()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    Ok(outcome(worst <= 1e-12, format!("4000 draws, max |sum - 1| {worst:.2e}")))
}

fn s3m_equivalence() -> qcs::Result<Outcome> {
    let cfg = SsmCheckConfig::new(8, 8, 3, vec![1, 2, 7, 64], 100);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rec = check_recurrence(&cfg, &mut rng)?;
    // limit cases: A = 1 exactly and |1 - A| far below the switch-over
    let mut limit = 0.0f64;
    for j in [1u32, 2, 7, 64] {
        for a in [
            Complex64::new(1.0, 0.0),
            Complex64::from_polar((-1e-15f64).exp(), 1e-15),
            Complex64::from_polar((-3e-14f64).exp(), -2e-14),
        ] {
            let g = geometric_gain(a, j);
            limit = limit.max((g - f64::from(j)).norm() / f64::from(j));
        }
    }
    Ok(outcome(
        rec.passed() && limit <= 1e-10,
        format!(
            "400 draws, max closed-form vs recurrence {:.2e}, limit gain vs J {limit:.2e}",
            rec.max_error
        ),
    ))
}

fn realness_and_equivariance() -> qcs::Result<Outcome> {
    let mut worst_real = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut ok = true;
    for side in [8, 16] {
        let cfg = SsmCheckConfig::new(side, side, 3, vec![1, 2, 7, 64], 20);
        let mut rng = ChaCha8Rng::seed_from_u64(4 + side as u64);
        let r = check_realness(&cfg, &mut rng)?;
        let s = check_shift(&cfg, &mut rng)?;
        ok &= r.passed() && s.passed();
        worst_real = worst_real.max(r.max_error);
        worst_shift = worst_shift.max(s.max_error);
    }
    Ok(outcome(
        ok,
        format!("8x8 and 16x16, imaginary residue {worst_real:.2e}, shift error {worst_shift:.2e}"),
    ))
}

fn lowrank_coupling() -> qcs::Result<Outcome> {
    let mut worst = 0.0f64;
    let mut ok = true;
    for (h, w) in [(8, 8), (6, 10), (4, 4)] {
        for rank in [1, 3] {
            let cfg = SsmCheckConfig::new(h, w, rank, vec![1, 7, 64], 20);
            let mut rng = ChaCha8Rng::seed_from_u64((h * 100 + w * 10 + rank) as u64);
            let r = check_lowrank(&cfg, &mut rng)?;
            ok &= r.passed();
            worst = worst.max(r.max_error);
        }
    }
    Ok(outcome(ok, format!("L in {{40, 36, 12}}, R in {{1, 3}}, max error {worst:.2e}")))
}

fn monotone_reconstruction() -> qcs::Result<Outcome> {
    let mut violations = 0;
    let mut instances = 0;
    let mut halved = 0;
    for bits in [1u32, 2] {
        for seed in 0..20u64 {
            let x = dct_sparse_signal(32, 6, 500 + seed);
            let spec = if bits == 1 { QuantizerSpec::sign() } else { QuantizerSpec::new(2, 0.1)? };
            let inst = instance(x, 96, 0.01, spec, 500 + seed)?;
            let sched = StageSchedule::default_for(25)?;
            let r = reconstruct(
                &inst.record,
                &inst.op,
                &sched,
                &Refinement::Identity,
                ImageShape::row(32),
                ReconstructOptions { monotone: true, ..Default::default() },
            )?;
            violations += r.nll_trace.windows(2).filter(|w| w[1] > w[0]).count();
            halved += r.step_trace.iter().zip(sched.lambdas()).filter(|(a, b)| a != b).count();
            instances += 1;
        }
    }
    Ok(outcome(
        violations == 0,
        format!("{instances} instances, {violations} increases, {halved} stages backtracked"),
    ))
}

fn one_bit_recovery() -> qcs::Result<Outcome> {
    let setup = RecoverySetup::default();
    let report = calibrate_recovery(&setup)?;
    let cos: Vec<f64> = (0..20)
        .map(|s| recovery_cosine(&setup, &report.schedule, s))
        .collect::<qcs::Result<_>>()?;
    let pass = cos.iter().filter(|c| **c >= 0.95).count();
    let min = cos.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(outcome(
        pass >= 18,
        format!(
            "{pass}/20 seeds with cosine >= 0.95 (min {min:.4}); calibration loss {:.4} -> {:.4} in {} evaluations",
            report.initial_loss, report.final_loss, report.evaluations
        ),
    ))
}

fn baseline_ordering() -> qcs::Result<Outcome> {
    let setup = BaselineSetup::default();
    let sched = StageSchedule::default_for(setup.stages)?;
    let opts = ReconstructOptions { monotone: true, ..Default::default() };
    let mut lik = 0.0;
    let mut van = 0.0;
    for s in 0..20 {
        let (l, v) = paired_final_nll(&setup, &sched, opts, s)?;
        lik += l / 20.0;
        van += v / 20.0;
    }
    Ok(outcome(
        lik <= van,
        format!("mean final NLL likelihood {lik:.3e} vs linear {van:.3e}"),
    ))
}

fn dmb_contract() -> qcs::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identity_ok = true;
    let mut scan_ok = true;
    let mut shape_ok = true;
    for trial in 0..12u64 {
        let b = rng.gen_range(1..3);
        let groups = rng.gen_range(1..3);
        let c = groups * rng.gen_range(1..4);
        let h = rng.gen_range(1..10);
        let w = rng.gen_range(1..10);
        let state = rng.gen_range(1..5);
        let x = Array4::from_shape_simple_fn((b, c, h, w), || rng.gen_range(-3.0..3.0));

        let id = DmbParams::residual_identity(c, state, groups, (h, w));
        identity_ok &= dmb_forward(x.view(), &id)? == x;

        let p = DmbParams::seeded(c, state, groups, rng.gen_range(0..3), rng.gen_range(1..9), (h, w), trial)?;
        let mut spatial = p.spatial.clone();
        spatial.a.mapv_inplace(|v| v * 25.0);
        spatial.b.mapv_inplace(|v| v * 25.0);
        spatial.c.mapv_inplace(|v| v * 25.0);
        scan_ok &= spatial_scan_raw(x.view(), &spatial)? == naive_scan_oracle(x.view(), &spatial);

        let y = dmb_forward(x.view(), &p)?;
        shape_ok &= y.dim() == x.dim() && y.iter().all(|v| v.is_finite());
    }
    Ok(outcome(
        identity_ok && scan_ok && shape_ok,
        format!("12 random shapes: identity {identity_ok}, scan bitwise {scan_ok}, shape {shape_ok}"),
    ))
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_qcs"))
        .args(args)
        .env_remove("QCS_SEED")
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

fn cli_round_trip() -> qcs::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let d = |name: &str| dir.path().join(name);
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_owned();
    let truth = SignalVector::new(
        qcs::experiments::smooth_image(8, 3),
        Some(ImageShape { height: 8, width: 8, channels: 1 }),
    )?;
    TensorFile::from_signal(&truth).write(&d("x.tensor"))?;

    let mut codes = Vec::new();
    let mut identical = true;
    for run in ["a", "b"] {
        std::fs::create_dir(d(run))?;
        let f = |name: &str| s(&d(run).join(name));
        codes.push(run_cli(&[
            "simulate", "--input", &s(&d("x.tensor")), "--q", "2", "--delta", "0.5", "--sigma", "0.02",
            "--m", "128", "--op-seed", "11", "--noise-seed", "12", "--out", &f("meas"),
        ]).0);
        codes.push(run_cli(&[
            "reconstruct", "--meas", &f("meas"), "--stages", "15", "--refine", "tv:0.01,10", "--out", &f("est"),
            "--trace", &f("trace.csv"), "--init", "backprojection",
        ]).0);
        codes.push(run_cli(&[
            "eval", "--estimate", &f("est"), "--reference", &s(&d("x.tensor")), "--out", &f("metrics.csv"),
        ]).0);
    }
    for name in ["meas", "est", "trace.csv", "metrics.csv"] {
        let a = read(&d("a").join(name));
        let b = read(&d("b").join(name));
        identical &= !a.is_empty() && a == b;
    }
    let grad = run_cli(&["gradcheck", "--q", "2", "--delta", "0.5", "--trials", "10000", "--eps-range", "1e-3,10"]).0;
    let ssm = run_cli(&["ssmcheck", "--grid", "8", "8", "--rank", "3", "--steps", "1,2,7,64", "--trials", "20"]).0;
    let pipeline_ok = codes.iter().all(|c| *c == 0);
    Ok(outcome(
        pipeline_ok && identical && grad == 0 && ssm == 0,
        format!("pipeline exits {codes:?}, byte-identical {identical}, gradcheck {grad}, ssmcheck {ssm}"),
    ))
}

fn main() {
    let criteria: [(&str, Check, u64); 10] = [
        ("1 gradient fidelity", gradient_fidelity, 10),
        ("2 partition of unity", partition_of_unity, 5),
        ("3 S3M closed form vs recurrence", s3m_equivalence, 10),
        ("4 realness and shift equivariance", realness_and_equivariance, 10),
        ("5 low-rank coupling vs dense oracle", lowrank_coupling, 5),
        ("6 monotone reconstruction", monotone_reconstruction, 30),
        ("7 one-bit desk-scale recovery", one_bit_recovery, 120),
        ("8 likelihood vs linear projection", baseline_ordering, 120),
        ("9 block contract", dmb_contract, 10),
        ("10 CLI round trip", cli_round_trip, 60),
    ];
    let mut failures = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (ok, detail) = match result {
            Ok(o) => (o.ok && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!ok);
        println!(
            "{} criterion {name}: {detail} [{:.2}s, limit {limit}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
