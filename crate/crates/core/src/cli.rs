//! Command-line interface.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 malformed input or
//! I/O failure, 3 invalid parameters, 4 inconsistent metadata, 5 no data.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checks::{gradcheck, ssmcheck, GradCheckConfig, SsmCheckConfig};
use crate::dmb::DmbParams;
use crate::error::{QcsError, Result};
use crate::io::{read_dmb, write_dmb, write_pgm, MeasurementFile, ScheduleFile, TensorFile};
use crate::metrics::evaluate;
use crate::quantizer::QuantizerSpec;
use crate::sensing::{gaussian_operator, simulate, ImageShape};
use crate::unfold::{
    calibrate, reconstruct, vanilla_reconstruct, InitMode, ReconstructOptions, Refinement, StageSchedule,
    TrainingPair,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PARAMETER: i32 = 3;
pub const EXIT_CONSISTENCY: i32 = 4;
pub const EXIT_EMPTY: i32 = 5;

pub fn exit_code(e: &QcsError) -> i32 {
    match e {
        QcsError::Input(_) | QcsError::Dimension { .. } | QcsError::Format(_) | QcsError::Io(_) => EXIT_INPUT,
        QcsError::Parameter(_) | QcsError::DegenerateScale { .. } | QcsError::Stability(_) => EXIT_PARAMETER,
        QcsError::Consistency(_) => EXIT_CONSISTENCY,
        QcsError::EmptyData(_) => EXIT_EMPTY,
    }
}

#[derive(Debug, Parser)]
#[command(name = "qcs", version, about = "Quantized compressive sensing toolkit")]
pub struct Cli {
    /// Default seed for every seeded operation.
    #[arg(long, env = "QCS_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize Gaussian random projections of a tensor.
    Simulate(SimulateArgs),
    /// Reconstruct a signal from a measurement file.
    Reconstruct(ReconstructArgs),
    /// Fit a stage schedule on a directory of training tensors.
    Calibrate(CalibrateArgs),
    /// Compare an estimate with a reference tensor.
    Eval(EvalArgs),
    /// Finite-difference check of the likelihood gradient.
    Gradcheck(GradcheckArgs),
    /// Oracle checks of the spectral operator.
    Ssmcheck(SsmcheckArgs),
    /// Write a seeded dual-domain block parameter file.
    DmbInit(DmbInitArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub q: u32,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long)]
    pub m: usize,
    /// Defaults to the global seed.
    #[arg(long)]
    pub op_seed: Option<u64>,
    /// Defaults to the global seed plus one.
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Likelihood,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    Zeros,
    Backprojection,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub meas: PathBuf,
    /// Schedule JSON; without it a curvature-scaled schedule with `--stages` is used.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub stages: usize,
    /// identity, dct:TAU, tv:WEIGHT,ITERS or dmb:PATH
    #[arg(long, default_value = "identity")]
    pub refine: String,
    #[arg(long, value_enum, default_value_t = Mode::Likelihood)]
    pub mode: Mode,
    #[arg(long)]
    pub monotone: bool,
    #[arg(long, value_enum, default_value_t = Init::Zeros)]
    pub init: Init,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub export_pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub train_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub q: u32,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 10)]
    pub stages: usize,
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, default_value = "identity")]
    pub refine: String,
    #[arg(long)]
    pub monotone: bool,
    #[arg(long, value_enum, default_value_t = Init::Zeros)]
    pub init: Init,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub export_pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub q: u32,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// LO,HI
    #[arg(long, default_value = "1e-3,10")]
    pub eps_range: String,
}

#[derive(Debug, Args)]
pub struct SsmcheckArgs {
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [8, 8])]
    pub grid: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Comma-separated step counts.
    #[arg(long, default_value = "1,2,7,64")]
    pub steps: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct DmbInitArgs {
    #[arg(long)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub state_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub groups: usize,
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value_t = 4)]
    pub steps: u32,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub grid: Vec<usize>,
    /// Omit the feature-fusion block.
    #[arg(long)]
    pub no_ffb: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args`, runs the command, and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(rendered.as_bytes());
            } else {
                let _ = err.write_all(rendered.as_bytes());
            }
            return if code == 0 { EXIT_OK } else { EXIT_INPUT };
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let mut text = String::new();
    let code = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, cli.seed, &mut text)?,
        Command::Reconstruct(a) => cmd_reconstruct(a, &mut text)?,
        Command::Calibrate(a) => cmd_calibrate(a, cli.seed, &mut text)?,
        Command::Eval(a) => cmd_eval(a, &mut text)?,
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.seed, &mut text)?,
        Command::Ssmcheck(a) => cmd_ssmcheck(a, cli.seed, &mut text)?,
        Command::DmbInit(a) => cmd_dmb_init(a, cli.seed, &mut text)?,
    };
    out.write_all(text.as_bytes())?;
    Ok(code)
}

fn quantizer(q: u32, delta: f64) -> Result<QuantizerSpec> {
    if q == 1 {
        Ok(QuantizerSpec::sign())
    } else {
        QuantizerSpec::new(q, delta)
    }
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, text: &mut String) -> Result<i32> {
    let signal = TensorFile::read(&a.input)?.to_signal()?;
    let spec = quantizer(a.q, a.delta)?;
    let op_seed = a.op_seed.unwrap_or(seed);
    let noise_seed = a.noise_seed.unwrap_or(seed.wrapping_add(1));
    if a.m == 0 {
        return Err(QcsError::Parameter("measurement count must be positive".into()));
    }
    let op = gaussian_operator(a.m, signal.len(), op_seed)?;
    let record = simulate(signal.values.view(), &op, a.sigma, spec, noise_seed)?;
    let hist = record.histogram();
    MeasurementFile::new(record, signal.len(), signal.shape).write(&a.out)?;
    let _ = writeln!(text, "M={} N={}", a.m, signal.len());
    let _ = writeln!(
        text,
        "histogram: {}",
        hist.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
    );
    Ok(EXIT_OK)
}

fn parse_refinement(spec: &str) -> Result<Refinement> {
    match spec.strip_prefix("dmb:") {
        Some(path) => Ok(Refinement::Dmb(Box::new(read_dmb(Path::new(path))?))),
        None => Refinement::parse_classical(spec),
    }
}

fn init_mode(i: Init) -> InitMode {
    match i {
        Init::Zeros => InitMode::Zeros,
        Init::Backprojection => InitMode::Backprojection,
    }
}

fn cmd_reconstruct(a: &ReconstructArgs, text: &mut String) -> Result<i32> {
    let meas = MeasurementFile::read(&a.meas)?;
    let schedule = match &a.schedule {
        Some(p) => {
            let f = ScheduleFile::read(p)?;
            if f.sigma != meas.header.sigma {
                return Err(QcsError::Consistency(format!(
                    "schedule sigma {} differs from measurement sigma {}",
                    f.sigma, meas.header.sigma
                )));
            }
            Some(f.schedule()?)
        }
        None => None,
    };
    let refinement = parse_refinement(&a.refine)?;
    let shape = meas.signal_shape()?;
    let op = gaussian_operator(meas.header.m, meas.header.n, meas.header.operator_seed)?;
    let schedule = match schedule {
        Some(s) => s,
        None => StageSchedule::curvature_scaled(a.stages, meas.header.sigma, &op)?,
    };
    let options = ReconstructOptions {
        init: init_mode(a.init),
        monotone: a.monotone,
    };
    let result = match a.mode {
        Mode::Likelihood => reconstruct(&meas.record, &op, &schedule, &refinement, shape, options)?,
        Mode::Vanilla => vanilla_reconstruct(&meas.record, &op, &schedule, &refinement, shape, options)?,
    };
    TensorFile::from_signal(&result.estimate).write(&a.out)?;
    if let Some(path) = &a.trace {
        let mut csv = String::from("stage,nll,residual\n");
        for (k, (n, r)) in result.nll_trace.iter().zip(&result.residual_trace).enumerate() {
            let _ = writeln!(csv, "{},{},{}", k + 1, n, r);
        }
        std::fs::write(path, csv)?;
    }
    if let Some(path) = &a.export_pgm {
        write_pgm(result.estimate.values.as_slice().expect("contiguous"), shape, path)?;
    }
    let _ = writeln!(
        text,
        "stages={} final_nll={}",
        schedule.stages(),
        result.nll_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(EXIT_OK)
}

fn cmd_calibrate(a: &CalibrateArgs, seed: u64, text: &mut String) -> Result<i32> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&a.train_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(QcsError::EmptyData(format!("no training tensors in {}", a.train_dir.display())));
    }
    let signals = files
        .iter()
        .map(|p| TensorFile::read(p)?.to_signal())
        .collect::<Result<Vec<_>>>()?;
    let n = signals[0].len();
    if signals.iter().any(|s| s.len() != n) {
        return Err(QcsError::Consistency("training tensors differ in length".into()));
    }
    if a.m == 0 {
        return Err(QcsError::Parameter("measurement count must be positive".into()));
    }
    let spec = quantizer(a.q, a.delta)?;
    let op = gaussian_operator(a.m, n, seed)?;
    let pairs = signals
        .into_iter()
        .enumerate()
        .map(|(i, truth)| {
            let noise = seed.wrapping_add(1 + i as u64);
            Ok(TrainingPair {
                record: simulate(truth.values.view(), &op, a.sigma, spec, noise)?,
                truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refinement = parse_refinement(&a.refine)?;
    let options = ReconstructOptions {
        init: init_mode(a.init),
        monotone: a.monotone,
    };
    let start = StageSchedule::curvature_scaled(a.stages, a.sigma, &op)?;
    let report = calibrate(&pairs, &op, &start, &refinement, options, a.budget, seed)?;
    ScheduleFile::new(&report.schedule, a.sigma).write(&a.out)?;
    let _ = writeln!(text, "pairs={}", pairs.len());
    let _ = writeln!(text, "initial_loss={}", report.initial_loss);
    let _ = writeln!(text, "final_loss={}", report.final_loss);
    let _ = writeln!(text, "evaluations={} budget={}", report.evaluations, a.budget);
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs, text: &mut String) -> Result<i32> {
    let est = TensorFile::read(&a.estimate)?.to_signal()?;
    let reference = TensorFile::read(&a.reference)?.to_signal()?;
    if est.len() != reference.len() {
        return Err(QcsError::Consistency(format!(
            "estimate has {} values, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let shape: ImageShape = reference.image_shape();
    let m = evaluate(est.values.view(), reference.values.view(), shape)?;
    let name = a
        .estimate
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let row = format!("{},{},{},{},{}", name, m.psnr, m.ssim, m.cosine, m.mse);
    if let Some(path) = &a.out {
        std::fs::write(path, format!("file,psnr,ssim,cosine,mse\n{row}\n"))?;
    }
    if let Some(path) = &a.export_pgm {
        write_pgm(est.values.as_slice().expect("contiguous"), shape, path)?;
    }
    let _ = writeln!(text, "psnr={} ssim={} cosine={} mse={}", m.psnr, m.ssim, m.cosine, m.mse);
    Ok(EXIT_OK)
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let bad = || QcsError::Parameter(format!("expected LO,HI, got `{s}`"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64, text: &mut String) -> Result<i32> {
    let cfg = GradCheckConfig {
        spec: quantizer(a.q, a.delta)?,
        trials: a.trials,
        eps_range: parse_pair(&a.eps_range)?,
        seed,
    };
    let r = gradcheck(&cfg)?;
    let _ = writeln!(
        text,
        "trials={} max_mismatch={:e} non_finite={}",
        r.trials, r.max_mismatch, r.non_finite
    );
    if r.passed() {
        let _ = writeln!(text, "gradcheck: pass");
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(text, "gradcheck: FAIL");
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_ssmcheck(a: &SsmcheckArgs, seed: u64, text: &mut String) -> Result<i32> {
    let steps = a
        .steps
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| QcsError::Parameter(format!("bad step count `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = SsmCheckConfig::new(a.grid[0], a.grid[1], a.rank, steps, a.trials);
    cfg.seed = seed;
    let report = ssmcheck(&cfg)?;
    for c in &report.checks {
        let _ = writeln!(
            text,
            "{}: max_error={:e} tolerance={:e} {}",
            c.name,
            c.max_error,
            c.tolerance,
            if c.passed() { "pass" } else { "FAIL" }
        );
    }
    match report.first_failure() {
        None => Ok(EXIT_OK),
        Some(c) => {
            let _ = writeln!(text, "first failing check: {}", c.name);
            Ok(EXIT_CHECK_FAILED)
        }
    }
}

fn cmd_dmb_init(a: &DmbInitArgs, seed: u64, text: &mut String) -> Result<i32> {
    let mut p = DmbParams::seeded(
        a.channels,
        a.state_dim,
        a.groups,
        a.rank,
        a.steps,
        (a.grid[0], a.grid[1]),
        seed,
    )?;
    if a.no_ffb {
        p.ffb = None;
    }
    write_dmb(&p, &a.out)?;
    let _ = writeln!(text, "wrote {}", a.out.display());
    Ok(EXIT_OK)
}
