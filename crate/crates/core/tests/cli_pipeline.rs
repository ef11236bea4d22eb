use std::path::{Path, PathBuf};
use std::process::Command;

use qcs::io::{MeasurementFile, ScheduleFile, TensorFile};
use qcs::sensing::{ImageShape, SignalVector};
use qcs::unfold::StageSchedule;

struct Run {
    code: i32,
    stdout: String,
}

fn qcs(args: &[&str]) -> Run {
    qcs_env(args, None)
}

fn qcs_env(args: &[&str], seed: Option<&str>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qcs"));
    cmd.args(args).env_remove("QCS_SEED");
    if let Some(s) = seed {
        cmd.env("QCS_SEED", s);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
    }
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_owned()
}

fn write_signal(dir: &Path, name: &str, values: Vec<f64>, shape: Option<ImageShape>) -> PathBuf {
    let path = dir.join(name);
    let s = SignalVector::new(values.into(), shape).unwrap();
    TensorFile::from_signal(&s).write(&path).unwrap();
    path
}

fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64) * 0.41).sin() * 0.5 + 0.5).collect()
}

#[test]
fn simulate_is_deterministic_and_reports_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let x = write_signal(dir.path(), "x", ramp(16), None);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let r1 = qcs(&["simulate", "--input", &p(&x), "--m", "40", "--out", &p(&a)]);
    let r2 = qcs(&["simulate", "--input", &p(&x), "--m", "40", "--out", &p(&b)]);
    assert_eq!(r1.code, 0);
    assert_eq!(r2.code, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(r1.stdout.contains("M=40 N=16"));
    let hist: Vec<usize> = r1
        .stdout
        .lines()
        .find_map(|l| l.strip_prefix("histogram: "))
        .unwrap()
        .split(' ')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(hist.len(), 2);
    assert_eq!(hist.iter().sum::<usize>(), 40);
}

#[test]
fn global_seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let x = write_signal(dir.path(), "x", ramp(8), None);
    let out = |name: &str| dir.path().join(name);
    qcs_env(&["simulate", "--input", &p(&x), "--m", "20", "--sigma", "0.3", "--out", &p(&out("e"))], Some("42"));
    qcs(&["--seed", "42", "simulate", "--input", &p(&x), "--m", "20", "--sigma", "0.3", "--out", &p(&out("f"))]);
    qcs(&["simulate", "--input", &p(&x), "--m", "20", "--sigma", "0.3", "--out", &p(&out("g"))]);
    let e = MeasurementFile::read(&out("e")).unwrap();
    assert_eq!(e.header.operator_seed, 42);
    assert_eq!(e.header.noise_seed, 43);
    assert_eq!(std::fs::read(out("e")).unwrap(), std::fs::read(out("f")).unwrap());
    assert_ne!(std::fs::read(out("e")).unwrap(), std::fs::read(out("g")).unwrap());
}

#[test]
fn parameter_and_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let x = write_signal(dir.path(), "x", ramp(8), None);
    let o = p(&dir.path().join("o"));
    assert_eq!(qcs(&["simulate", "--input", &p(&x), "--m", "8", "--q", "9", "--out", &o]).code, 3);
    assert_eq!(qcs(&["simulate", "--input", &p(&x), "--m", "8", "--q", "2", "--delta", "0", "--out", &o]).code, 3);
    assert_eq!(qcs(&["simulate", "--input", &p(&x), "--m", "0", "--out", &o]).code, 3);
    let garbage = dir.path().join("garbage");
    std::fs::write(&garbage, b"{\"dtype\": \"f64\"\n\x00\x01").unwrap();
    assert_eq!(qcs(&["simulate", "--input", &p(&garbage), "--m", "8", "--out", &o]).code, 2);
    assert_eq!(qcs(&["reconstruct", "--meas", &p(&garbage), "--out", &o]).code, 2);
    assert_eq!(qcs(&["eval", "--estimate", &p(&garbage), "--reference", &p(&x)]).code, 2);
}

fn measured(dir: &Path, q: &str, sigma: &str) -> PathBuf {
    let shape = ImageShape { height: 4, width: 4, channels: 1 };
    let x = write_signal(dir, "x", ramp(16), Some(shape));
    let meas = dir.join(format!("meas_q{q}"));
    let r = qcs(&[
        "simulate", "--input", &p(&x), "--m", "64", "--q", q, "--delta", "0.4", "--sigma", sigma, "--out", &p(&meas),
    ]);
    assert_eq!(r.code, 0);
    meas
}

#[test]
fn zero_step_schedule_returns_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let meas = measured(dir.path(), "1", "0");
    let sched = dir.path().join("s.json");
    ScheduleFile::new(&StageSchedule::constant(3, 0.0, 0.1).unwrap(), 0.0).write(&sched).unwrap();
    let est = dir.path().join("est");
    let trace = dir.path().join("trace.csv");
    let r = qcs(&[
        "reconstruct", "--meas", &p(&meas), "--schedule", &p(&sched), "--out", &p(&est), "--trace", &p(&trace),
    ]);
    assert_eq!(r.code, 0);
    let t = TensorFile::read(&est).unwrap();
    assert!(t.data.iter().all(|v| *v == 0.0));
    assert_eq!(t.shape, vec![4, 4, 1]);
    let csv = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "stage,nll,residual");
    assert_eq!(lines.len(), 4);
}

#[test]
fn modes_differ_and_sigma_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let meas = measured(dir.path(), "1", "0");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(qcs(&["reconstruct", "--meas", &p(&meas), "--stages", "10", "--out", &p(&a)]).code, 0);
    assert_eq!(
        qcs(&["reconstruct", "--meas", &p(&meas), "--stages", "10", "--mode", "vanilla", "--out", &p(&b)]).code,
        0
    );
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let sched = dir.path().join("s.json");
    ScheduleFile::new(&StageSchedule::default_for(2).unwrap(), 0.5).write(&sched).unwrap();
    let r = qcs(&["reconstruct", "--meas", &p(&meas), "--schedule", &p(&sched), "--out", &p(&a)]);
    assert_eq!(r.code, 4);
}

#[test]
fn block_refinement_from_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let meas = measured(dir.path(), "2", "0.01");
    let good = dir.path().join("good.dmb");
    let bad = dir.path().join("bad.dmb");
    assert_eq!(
        qcs(&["dmb-init", "--channels", "4", "--groups", "2", "--rank", "2", "--grid", "4", "4", "--out", &p(&good)]).code,
        0
    );
    assert_eq!(qcs(&["dmb-init", "--channels", "2", "--grid", "5", "4", "--out", &p(&bad)]).code, 0);
    let est = dir.path().join("est");
    let pgm = dir.path().join("est.pgm");
    let refine = format!("dmb:{}", p(&good));
    let r = qcs(&[
        "reconstruct", "--meas", &p(&meas), "--stages", "3", "--refine", &refine, "--out", &p(&est),
        "--export-pgm", &p(&pgm),
    ]);
    assert_eq!(r.code, 0);
    assert!(std::fs::read(&pgm).unwrap().starts_with(b"P5\n4 4\n255\n"));
    let refine = format!("dmb:{}", p(&bad));
    assert_eq!(qcs(&["reconstruct", "--meas", &p(&meas), "--refine", &refine, "--out", &p(&est)]).code, 4);
    assert_eq!(qcs(&["reconstruct", "--meas", &p(&meas), "--refine", "median", "--out", &p(&est)]).code, 3);
}

#[test]
fn eval_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let shape = ImageShape { height: 12, width: 12, channels: 1 };
    let x = write_signal(dir.path(), "ref", ramp(144), Some(shape));
    let csv = dir.path().join("m.csv");
    let r = qcs(&["eval", "--estimate", &p(&x), "--reference", &p(&x), "--out", &p(&csv)]);
    assert_eq!(r.code, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text, "file,psnr,ssim,cosine,mse\nref,99,1,1,0\n");
    let short = write_signal(dir.path(), "short", ramp(10), None);
    assert_eq!(qcs(&["eval", "--estimate", &p(&short), "--reference", &p(&x)]).code, 4);
}

fn field(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.split(' ').find_map(|kv| kv.strip_prefix(&format!("{key}="))))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn calibrate_respects_budget_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    std::fs::create_dir(&train).unwrap();
    for i in 0..3 {
        let v: Vec<f64> = (0..12).map(|j| ((j * (i + 2)) as f64 * 0.3).cos()).collect();
        write_signal(&train, &format!("t{i}"), v, None);
    }
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |out: &Path| {
        vec![
            "--seed".to_owned(), "5".into(), "calibrate".into(), "--train-dir".into(), p(&train), "--q".into(),
            "2".into(), "--delta".into(), "0.3".into(), "--sigma".into(), "0.01".into(), "--m".into(), "36".into(),
            "--stages".into(), "4".into(), "--budget".into(), "40".into(), "--out".into(), p(out),
        ]
    };
    let ra = qcs(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    let rb = qcs(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(ra.code, 0, "{}", ra.stdout);
    assert_eq!(ra.stdout, rb.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(field(&ra.stdout, "final_loss") <= field(&ra.stdout, "initial_loss"));
    assert!(field(&ra.stdout, "evaluations") <= 40.0);
    let sched = ScheduleFile::read(&a).unwrap();
    assert_eq!(sched.k, 4);
    assert_eq!(sched.sigma, 0.01);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let r = qcs(&["calibrate", "--train-dir", &p(&empty), "--m", "4", "--out", &p(&a)]);
    assert_eq!(r.code, 5);
}

#[test]
fn checks_report_maxima() {
    let r = qcs(&["gradcheck", "--q", "1", "--trials", "500"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("gradcheck: pass"));
    let r = qcs(&["ssmcheck", "--grid", "5", "6", "--rank", "2", "--steps", "1,7", "--trials", "5"]);
    assert_eq!(r.code, 0);
    for name in ["recurrence", "realness", "shift-equivariance", "low-rank"] {
        assert!(r.stdout.lines().any(|l| l.contains(name) && l.ends_with("pass")), "{}", r.stdout);
    }
    assert_eq!(qcs(&["ssmcheck", "--steps", "0,x"]).code, 3);
}
