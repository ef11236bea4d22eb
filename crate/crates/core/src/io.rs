//! On-disk formats. Every binary file is a single JSON header line, a newline,
//! then a little-endian payload.
//!
//! | file | payload |
//! |------|---------|
//! | tensor | `f64` values, row-major; images are `H x W x C` |
//! | measurement | `u16` codeword indices |
//! | block parameters | `f64` values in the field order of [`write_dmb`] |
//!
//! Schedules are plain JSON `{"K", "lambdas", "betas", "sigma"}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dmb::{DmbParams, FeatureFusion, LayerNormParams, SpatialSsmParams};
use crate::error::{QcsError, Result};
use crate::quantizer::{CodewordIndex, QuantizerSpec};
use crate::sensing::{ImageShape, MeasurementRecord, SignalVector};
use crate::spectral::{half_width, LowRankCoupling, SpectralParams};
use crate::unfold::StageSchedule;

fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| QcsError::Format("missing header line".into()))?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

fn parse_header<T: for<'de> Deserialize<'de>>(line: &[u8]) -> Result<T> {
    serde_json::from_slice(line).map_err(|e| QcsError::Format(format!("bad header: {e}")))
}

fn assemble<T: Serialize>(header: &T, payload: &[u8]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("headers serialize");
    out.push(b'\n');
    out.extend_from_slice(payload);
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn f64_payload(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn read_f64s(payload: &[u8], expected: usize) -> Result<Vec<f64>> {
    if payload.len() != 8 * expected {
        return Err(QcsError::Format(format!(
            "payload holds {} bytes, header implies {}",
            payload.len(),
            8 * expected
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Signal,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub layout: String,
    pub kind: TensorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn from_signal(s: &SignalVector) -> Self {
        match s.shape {
            Some(sh) => Self {
                kind: TensorKind::Image,
                shape: vec![sh.height, sh.width, sh.channels],
                data: s.values.to_vec(),
            },
            None => Self {
                kind: TensorKind::Signal,
                shape: vec![s.len()],
                data: s.values.to_vec(),
            },
        }
    }

    pub fn to_signal(&self) -> Result<SignalVector> {
        let shape = match (self.kind, self.shape.as_slice()) {
            (TensorKind::Signal, [_]) => None,
            (TensorKind::Image, [h, w]) => Some(ImageShape { height: *h, width: *w, channels: 1 }),
            (TensorKind::Image, [h, w, c]) => Some(ImageShape { height: *h, width: *w, channels: *c }),
            _ => {
                return Err(QcsError::Format(format!(
                    "{:?} tensor cannot have shape {:?}",
                    self.kind, self.shape
                )))
            }
        };
        SignalVector::new(Array1::from(self.data.clone()), shape)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = TensorHeader {
            dtype: "f64".into(),
            shape: self.shape.clone(),
            layout: "row-major".into(),
            kind: self.kind,
        };
        assemble(&header, &f64_payload(self.data.iter().copied()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (line, payload) = split_header(bytes)?;
        let h: TensorHeader = parse_header(line)?;
        if h.dtype != "f64" || h.layout != "row-major" {
            return Err(QcsError::Format(format!("unsupported dtype/layout {}/{}", h.dtype, h.layout)));
        }
        if h.shape.is_empty() || h.shape.contains(&0) {
            return Err(QcsError::Format(format!("invalid shape {:?}", h.shape)));
        }
        let count = h
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| QcsError::Format("shape overflows".into()))?;
        Ok(Self {
            kind: h.kind,
            shape: h.shape,
            data: read_f64s(payload, count)?,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementHeader {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "Q")]
    pub q: u32,
    pub delta: f64,
    pub sigma: f64,
    pub operator_seed: u64,
    pub noise_seed: u64,
    /// `[H, W, C]` of the measured signal, when it was an image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFile {
    pub header: MeasurementHeader,
    pub record: MeasurementRecord,
}

impl MeasurementFile {
    pub fn new(record: MeasurementRecord, n: usize, shape: Option<ImageShape>) -> Self {
        Self {
            header: MeasurementHeader {
                m: record.len(),
                n,
                q: record.spec.bits(),
                delta: record.spec.step(),
                sigma: record.sigma,
                operator_seed: record.operator_seed,
                noise_seed: record.noise_seed,
                shape: shape.map(|s| vec![s.height, s.width, s.channels]),
            },
            record,
        }
    }

    pub fn signal_shape(&self) -> Result<ImageShape> {
        match self.header.shape.as_deref() {
            None => Ok(ImageShape::row(self.header.n)),
            Some([h, w, c]) if h * w * c == self.header.n => Ok(ImageShape { height: *h, width: *w, channels: *c }),
            Some(s) => Err(QcsError::Format(format!("shape {s:?} does not match N = {}", self.header.n))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: Vec<u8> = self
            .record
            .codeword_indices
            .iter()
            .flat_map(|c| c.0.to_le_bytes())
            .collect();
        assemble(&self.header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (line, payload) = split_header(bytes)?;
        let h: MeasurementHeader = parse_header(line)?;
        if h.m == 0 || h.n == 0 {
            return Err(QcsError::Format("M and N must be positive".into()));
        }
        if payload.len() != 2 * h.m {
            return Err(QcsError::Format(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                2 * h.m
            )));
        }
        let spec = if h.q == 1 {
            QuantizerSpec::sign()
        } else {
            QuantizerSpec::new(h.q, h.delta)?
        };
        let record = MeasurementRecord {
            codeword_indices: payload
                .chunks_exact(2)
                .map(|c| CodewordIndex(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
            spec,
            sigma: h.sigma,
            noise_seed: h.noise_seed,
            operator_seed: h.operator_seed,
        };
        record.validate().map_err(|e| QcsError::Format(e.to_string()))?;
        let file = Self { header: h, record };
        file.signal_shape()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub sigma: f64,
}

impl ScheduleFile {
    pub fn new(schedule: &StageSchedule, sigma: f64) -> Self {
        Self {
            k: schedule.stages(),
            lambdas: schedule.lambdas().to_vec(),
            betas: schedule.betas().to_vec(),
            sigma,
        }
    }

    pub fn schedule(&self) -> Result<StageSchedule> {
        if self.k != self.lambdas.len() {
            return Err(QcsError::Format(format!(
                "K = {} but {} step sizes",
                self.k,
                self.lambdas.len()
            )));
        }
        StageSchedule::new(self.lambdas.clone(), self.betas.clone())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read(path)?;
        serde_json::from_slice(&text).map_err(|e| QcsError::Format(format!("bad schedule file: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(self).expect("schedule serializes");
        text.push(b'\n');
        write_file(path, &text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmbHeader {
    pub kind: String,
    #[serde(rename = "C")]
    pub channels: usize,
    pub state_dim: usize,
    #[serde(rename = "G")]
    pub groups: usize,
    #[serde(rename = "R")]
    pub rank: usize,
    #[serde(rename = "J")]
    pub steps: u32,
    pub w1: f64,
    pub w2: f64,
    pub height: usize,
    pub width: usize,
    pub ffb: bool,
    pub warmup: f64,
}

struct Cursor {
    values: Vec<f64>,
    pos: usize,
}

impl Cursor {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.values[self.pos..self.pos + n].to_vec();
        self.pos += n;
        out
    }

    fn real3(&mut self, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_vec(shape, self.take(shape.0 * shape.1 * shape.2)).expect("sized")
    }

    fn complex3(&mut self, shape: (usize, usize, usize)) -> Array3<Complex64> {
        let raw = self.take(2 * shape.0 * shape.1 * shape.2);
        let z = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Array3::from_shape_vec(shape, z).expect("sized")
    }

    fn real2(&mut self, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_vec(shape, self.take(shape.0 * shape.1)).expect("sized")
    }
}

fn complex_values(a: &Array3<Complex64>) -> impl Iterator<Item = f64> + '_ {
    a.iter().flat_map(|z| [z.re, z.im])
}

/// Payload order: norm scale, norm shift, a, b, c, d_skip, then (when the
/// fusion block is present) pw1, dw, pw2, then delta, theta, B, C, alpha, U, V.
/// Complex arrays interleave real and imaginary parts.
pub fn dmb_to_bytes(p: &DmbParams) -> Vec<u8> {
    let header = DmbHeader {
        kind: "dmb".into(),
        channels: p.channels(),
        state_dim: p.spatial.state_dim(),
        groups: p.spectral.groups(),
        rank: p.coupling.rank(),
        steps: p.spectral.steps,
        w1: p.w1,
        w2: p.w2,
        height: p.grid.0,
        width: p.grid.1,
        ffb: p.ffb.is_some(),
        warmup: p.coupling.warmup,
    };
    let mut v: Vec<f64> = Vec::new();
    v.extend(p.norm.scale.iter().chain(p.norm.shift.iter()));
    v.extend(p.spatial.a.iter().chain(p.spatial.b.iter()).chain(p.spatial.c.iter()));
    v.extend(p.spatial.d_skip.iter());
    if let Some(f) = &p.ffb {
        v.extend(f.pw1.iter().chain(f.dw.iter()).chain(f.pw2.iter()));
    }
    v.extend(p.spectral.delta.iter().chain(p.spectral.theta.iter()));
    v.extend(complex_values(&p.spectral.b));
    v.extend(complex_values(&p.spectral.c));
    v.extend(p.coupling.alpha.iter());
    v.extend(complex_values(&p.coupling.u));
    v.extend(complex_values(&p.coupling.v));
    assemble(&header, &f64_payload(v))
}

pub fn dmb_from_bytes(bytes: &[u8]) -> Result<DmbParams> {
    let (line, payload) = split_header(bytes)?;
    let h: DmbHeader = parse_header(line)?;
    if h.kind != "dmb" {
        return Err(QcsError::Format(format!("expected block parameters, found kind `{}`", h.kind)));
    }
    let (c, s, g, r) = (h.channels, h.state_dim, h.groups, h.rank);
    if c == 0 || g == 0 || h.height == 0 || h.width == 0 || h.steps == 0 {
        return Err(QcsError::Format("block dimensions must be positive".into()));
    }
    let wf = half_width(h.width);
    let bins = h.height * wf;
    let spectral_len = g * bins * 6 + g + 4 * g * r * bins;
    let ffb_len = if h.ffb { 2 * c * c + 9 * c } else { 0 };
    let expected = 2 * c + s * s + 2 * s * c + c + ffb_len + spectral_len;
    let mut cur = Cursor {
        values: read_f64s(payload, expected)?,
        pos: 0,
    };
    let norm = LayerNormParams {
        scale: Array1::from(cur.take(c)),
        shift: Array1::from(cur.take(c)),
    };
    let a = cur.real2((s, s));
    let b = cur.real2((s, c));
    let cm = cur.real2((c, s));
    let d = Array1::from(cur.take(c));
    let spatial = SpatialSsmParams::new(a, b, cm, d)?;
    let ffb = if h.ffb {
        Some(FeatureFusion {
            pw1: cur.real2((c, c)),
            dw: cur.real3((c, 3, 3)),
            pw2: cur.real2((c, c)),
        })
    } else {
        None
    };
    let sshape = (g, h.height, wf);
    let delta = cur.real3(sshape);
    let theta = cur.real3(sshape);
    let sb = cur.complex3(sshape);
    let sc = cur.complex3(sshape);
    let spectral = SpectralParams::new(delta, theta, sb, sc, h.steps)?;
    let alpha = cur.take(g);
    let coupling = LowRankCoupling {
        u: cur.complex3((g, r, bins)),
        v: cur.complex3((g, r, bins)),
        alpha,
        warmup: h.warmup,
    };
    let p = DmbParams {
        w1: h.w1,
        w2: h.w2,
        norm,
        spatial,
        spectral,
        coupling,
        ffb,
        grid: (h.height, h.width),
    };
    p.validate()?;
    Ok(p)
}

pub fn read_dmb(path: &Path) -> Result<DmbParams> {
    dmb_from_bytes(&fs::read(path)?)
}

pub fn write_dmb(p: &DmbParams, path: &Path) -> Result<()> {
    write_file(path, &dmb_to_bytes(p))
}

/// 8-bit binary PGM; values are clamped to `[0, 1]` and channels averaged.
pub fn pgm_bytes(values: &[f64], shape: ImageShape) -> Result<Vec<u8>> {
    if values.len() != shape.len() {
        return Err(QcsError::dim("PGM export", shape.len(), values.len()));
    }
    let mut out = format!("P5\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    for px in values.chunks_exact(shape.channels) {
        let v = px.iter().sum::<f64>() / shape.channels as f64;
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn write_pgm(values: &[f64], shape: ImageShape, path: &Path) -> Result<()> {
    write_file(path, &pgm_bytes(values, shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{gaussian_operator, simulate};
    use ndarray::array;

    #[test]
    fn tensor_round_trip() {
        let s = SignalVector::new(array![1.0, -2.5, 3.25], None).unwrap();
        let t = TensorFile::from_signal(&s);
        let bytes = t.to_bytes();
        assert!(bytes.starts_with(br#"{"dtype":"f64","shape":[3],"layout":"row-major","kind":"signal"}"#));
        assert_eq!(bytes.len(), bytes.iter().position(|&b| b == b'\n').unwrap() + 1 + 24);
        let back = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_signal().unwrap(), s);

        let img = SignalVector::new(
            Array1::linspace(0.0, 1.0, 12),
            Some(ImageShape { height: 2, width: 3, channels: 2 }),
        )
        .unwrap();
        let back = TensorFile::from_bytes(&TensorFile::from_signal(&img).to_bytes()).unwrap();
        assert_eq!(back.to_signal().unwrap(), img);
    }

    #[test]
    fn malformed_tensors_are_format_errors() {
        let good = TensorFile::from_signal(&SignalVector::new(array![1.0, 2.0], None).unwrap()).to_bytes();
        let cases: Vec<Vec<u8>> = vec![
            b"no newline".to_vec(),
            b"{not json}\n".to_vec(),
            good[..good.len() - 1].to_vec(),
            br#"{"dtype":"f32","shape":[1],"layout":"row-major","kind":"signal"}"#.iter().chain(b"\n").chain(&[0u8; 4]).copied().collect(),
            br#"{"dtype":"f64","shape":[0],"layout":"row-major","kind":"signal"}"#.iter().chain(b"\n").copied().collect(),
        ];
        for c in cases {
            assert!(matches!(TensorFile::from_bytes(&c), Err(QcsError::Format(_))));
        }
        let bad_kind = TensorFile { kind: TensorKind::Signal, shape: vec![1, 2], data: vec![0.0, 0.0] };
        assert!(bad_kind.to_signal().is_err());
    }

    #[test]
    fn measurement_round_trip() {
        let op = gaussian_operator(10, 4, 3).unwrap();
        let spec = QuantizerSpec::new(3, 0.25).unwrap();
        let rec = simulate(array![0.1, 0.5, -0.3, 0.9].view(), &op, 0.05, spec, 8).unwrap();
        let f = MeasurementFile::new(rec.clone(), 4, None);
        let bytes = f.to_bytes();
        let back = MeasurementFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.record, rec);
        assert_eq!(back.header.m, 10);
        assert_eq!(back.signal_shape().unwrap(), ImageShape::row(4));
        let line = std::str::from_utf8(split_header(&bytes).unwrap().0).unwrap();
        assert!(line.starts_with(r#"{"M":10,"N":4,"Q":3,"delta":0.25,"sigma":0.05"#), "{line}");
    }

    #[test]
    fn measurement_index_out_of_range() {
        let mut bytes = br#"{"M":1,"N":1,"Q":1,"delta":1.0,"sigma":0.0,"operator_seed":0,"noise_seed":0}"#.to_vec();
        bytes.push(b'\n');
        bytes.extend_from_slice(&5u16.to_le_bytes());
        assert!(matches!(MeasurementFile::from_bytes(&bytes), Err(QcsError::Format(_))));
    }

    #[test]
    fn schedule_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = StageSchedule::default_for(3).unwrap();
        ScheduleFile::new(&s, 0.01).write(&path).unwrap();
        let back = ScheduleFile::read(&path).unwrap();
        assert_eq!(back.schedule().unwrap(), s);
        assert_eq!(back.sigma, 0.01);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"K\": 3"));
    }

    #[test]
    fn dmb_round_trip() {
        for ffb in [true, false] {
            let mut p = DmbParams::seeded(4, 3, 2, 2, 5, (6, 5), 1).unwrap();
            if !ffb {
                p.ffb = None;
            }
            let back = dmb_from_bytes(&dmb_to_bytes(&p)).unwrap();
            assert_eq!(back, p);
        }
        let bytes = dmb_to_bytes(&DmbParams::residual_identity(2, 1, 1, (2, 2)));
        assert!(dmb_from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn pgm_layout() {
        let shape = ImageShape { height: 1, width: 2, channels: 2 };
        let b = pgm_bytes(&[0.0, 1.0, 2.0, 2.0], shape).unwrap();
        assert_eq!(b, b"P5\n2 1\n255\n\x80\xff".to_vec());
    }
}
