//! Spectral state-space mixing on the half spectrum.
//!
//! Each frequency bin runs a stable complex driven recurrence
//! `s_{j+1} = A s_j + B X`, `s_0 = 0`, read out as `C s_J`. The recurrence
//! has the closed form `C B (1 - A^J) / (1 - A) X`, so the whole branch is a
//! diagonal complex filter `D(w)` plus an optional rank-`R` projection and
//! broadcast across bins, followed by a Hermitian projection and a real
//! inverse transform.

pub mod fft;
pub mod oracle;

use ndarray::{Array3, Array4, ArrayView4, Axis};
use num_complex::Complex64;

use crate::activation::silu;
use crate::error::{QcsError, Result};

pub use fft::{forward_rfft2, half_width, inverse_rfft2, HalfSpectrum};

/// Largest admissible |theta|; the rotation angle lives in the open interval (-pi, pi).
pub const THETA_LIMIT: f64 = std::f64::consts::PI - 1e-6;

/// Below this |1 - A| the geometric gain is evaluated by its Taylor expansion about A = 1.
pub const GAIN_LIMIT_THRESHOLD: f64 = 1e-7;

/// Per-group, per-bin recurrence parameters. Arrays are `(G, H, W_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralParams {
    pub delta: Array3<f64>,
    pub theta: Array3<f64>,
    pub b: Array3<Complex64>,
    pub c: Array3<Complex64>,
    pub steps: u32,
}

/// Rank-`R` cross-frequency coupling. Bases are `(G, R, L)` with `L = H * W_f`
/// bins flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankCoupling {
    pub u: Array3<Complex64>,
    pub v: Array3<Complex64>,
    pub alpha: Vec<f64>,
    pub warmup: f64,
}

impl SpectralParams {
    pub fn new(
        delta: Array3<f64>,
        theta: Array3<f64>,
        b: Array3<Complex64>,
        c: Array3<Complex64>,
        steps: u32,
    ) -> Result<Self> {
        let p = Self {
            delta,
            theta,
            b,
            c,
            steps,
        };
        p.validate()?;
        Ok(p)
    }

    /// `D = 1` everywhere: unit B and C with a single step.
    pub fn identity(groups: usize, height: usize, width: usize) -> Self {
        let shape = (groups, height, half_width(width));
        Self {
            delta: Array3::zeros(shape),
            theta: Array3::zeros(shape),
            b: Array3::from_elem(shape, Complex64::new(1.0, 0.0)),
            c: Array3::from_elem(shape, Complex64::new(1.0, 0.0)),
            steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.delta.dim();
        for (name, dim) in [
            ("theta", self.theta.dim()),
            ("B", self.b.dim()),
            ("C", self.c.dim()),
        ] {
            if dim != shape {
                return Err(QcsError::Input(format!(
                    "spectral parameter {name} has shape {dim:?}, expected {shape:?}"
                )));
            }
        }
        if shape.0 == 0 {
            return Err(QcsError::Parameter("spectral parameters need at least one group".into()));
        }
        if self.steps == 0 {
            return Err(QcsError::Parameter("recurrence needs at least one step".into()));
        }
        if let Some(d) = self.delta.iter().find(|d| !(**d >= 0.0)) {
            return Err(QcsError::Stability(format!("decay delta must be >= 0, got {d}")));
        }
        if self.theta.iter().any(|t| !t.is_finite())
            || self.b.iter().chain(self.c.iter()).any(|z| !z.is_finite())
        {
            return Err(QcsError::Input("spectral parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.delta.dim().0
    }

    pub fn grid(&self) -> (usize, usize) {
        let (_, h, wf) = self.delta.dim();
        (h, wf)
    }

    /// Frequency response `D = C B (1 - A^J)/(1 - A)`, shape `(G, H, W_f)`.
    pub fn response(&self) -> Result<Array3<Complex64>> {
        let mut d = Array3::zeros(self.delta.dim());
        for (idx, out) in d.indexed_iter_mut() {
            let a = transition(self.delta[idx], self.theta[idx])?;
            *out = self.c[idx] * self.b[idx] * geometric_gain(a, self.steps);
        }
        Ok(d)
    }
}

impl LowRankCoupling {
    /// Rank-0 coupling contributing nothing.
    pub fn disabled(groups: usize, bins: usize) -> Self {
        Self {
            u: Array3::zeros((groups, 0, bins)),
            v: Array3::zeros((groups, 0, bins)),
            alpha: vec![0.0; groups],
            warmup: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.dim() != self.v.dim() {
            return Err(QcsError::Input(format!(
                "coupling bases differ in shape: {:?} vs {:?}",
                self.u.dim(),
                self.v.dim()
            )));
        }
        if self.alpha.len() != self.u.dim().0 {
            return Err(QcsError::dim("coupling group scales", self.u.dim().0, self.alpha.len()));
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return Err(QcsError::Parameter(format!("warmup must lie in [0, 1], got {}", self.warmup)));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.u.dim().0
    }

    pub fn rank(&self) -> usize {
        self.u.dim().1
    }

    pub fn bins(&self) -> usize {
        self.u.dim().2
    }
}

/// `A = e^{-delta} e^{i theta}`, with theta clamped into the open interval.
pub fn transition(delta: f64, theta: f64) -> Result<Complex64> {
    if !(delta >= 0.0) {
        return Err(QcsError::Stability(format!("decay delta must be >= 0, got {delta}")));
    }
    if theta.is_nan() {
        return Err(QcsError::Input("rotation theta is NaN".into()));
    }
    let theta = theta.clamp(-THETA_LIMIT, THETA_LIMIT);
    Ok(Complex64::from_polar((-delta).exp(), theta))
}

/// `sum_{j<J} A^j = (1 - A^J)/(1 - A)`.
///
/// Evaluated as `expm1(J log1p(h)) / h` with `h = A - 1` so that neither
/// difference cancels; for `|h| < GAIN_LIMIT_THRESHOLD` the Taylor series
/// `sum_k binom(J, k+1) h^k` is used, which is exactly `J` at `A = 1`.
pub fn geometric_gain(a: Complex64, steps: u32) -> Complex64 {
    if steps == 1 {
        return Complex64::new(1.0, 0.0);
    }
    let j = steps as f64;
    let h = a - 1.0;
    if h.norm() < GAIN_LIMIT_THRESHOLD {
        let mut term = Complex64::new(j, 0.0);
        let mut sum = term;
        for k in 1..6u32 {
            term = term * h * ((j - k as f64) / (k as f64 + 1.0));
            sum += term;
        }
        return sum;
    }
    cexpm1(clog1p(h).scale(j)) / h
}

fn clog1p(h: Complex64) -> Complex64 {
    let re = 0.5 * (2.0 * h.re + h.norm_sqr()).ln_1p();
    let im = h.im.atan2(1.0 + h.re);
    Complex64::new(re, im)
}

fn cexpm1(w: Complex64) -> Complex64 {
    let half_sin = (0.5 * w.im).sin();
    let re = w.re.exp_m1() * w.im.cos() - 2.0 * half_sin * half_sin;
    let im = w.re.exp() * w.im.sin();
    Complex64::new(re, im)
}

fn group_size(channels: usize, groups: usize) -> Result<usize> {
    if groups == 0 || channels % groups != 0 {
        return Err(QcsError::Input(format!(
            "{groups} groups do not divide {channels} channels"
        )));
    }
    Ok(channels / groups)
}

/// `Y(w) = D_g(w) X(w)`, with each group's response shared by its channels.
pub fn diagonal_filter(x: &HalfSpectrum, params: &SpectralParams) -> Result<HalfSpectrum> {
    let (_, channels, h, wf) = x.data.dim();
    if params.grid() != (h, wf) {
        return Err(QcsError::Input(format!(
            "spectral parameters cover a {:?} grid, spectrum is {h}x{wf}",
            params.grid()
        )));
    }
    let per_group = group_size(channels, params.groups())?;
    let d = params.response()?;
    let mut y = x.clone();
    for mut batch in y.data.axis_iter_mut(Axis(0)) {
        for (ci, mut plane) in batch.axis_iter_mut(Axis(0)).enumerate() {
            let dg = d.index_axis(Axis(0), ci / per_group);
            plane.zip_mut_with(&dg, |v, &dv| *v *= dv);
        }
    }
    Ok(y)
}

/// Rank-`R` increment `lambda alpha_g sum_r U_{g,r}(w) <V_{g,r}, X>` with
/// `<V, X> = sum_w conj(V(w)) X(w)`, formed as `R` projections followed by
/// `R` broadcasts.
pub fn lowrank_couple(x: &HalfSpectrum, coupling: &LowRankCoupling) -> Result<HalfSpectrum> {
    coupling.validate()?;
    let (batch, channels, h, wf) = x.data.dim();
    let bins = h * wf;
    if coupling.bins() != bins {
        return Err(QcsError::dim("coupling bins", bins, coupling.bins()));
    }
    let per_group = group_size(channels, coupling.groups())?;
    let mut out = HalfSpectrum::zeros(batch, channels, h, x.full_width());
    if coupling.rank() == 0 || coupling.warmup == 0.0 {
        return Ok(out);
    }
    for bi in 0..batch {
        for ci in 0..channels {
            let g = ci / per_group;
            let scale = coupling.warmup * coupling.alpha[g];
            let xs = x.data.slice(ndarray::s![bi, ci, .., ..]);
            let xs = xs.iter();
            let coeffs: Vec<Complex64> = (0..coupling.rank())
                .map(|r| {
                    coupling
                        .v
                        .slice(ndarray::s![g, r, ..])
                        .iter()
                        .zip(xs.clone())
                        .map(|(v, xv)| v.conj() * xv)
                        .sum::<Complex64>()
                        * scale
                })
                .collect();
            let mut dst = out.data.slice_mut(ndarray::s![bi, ci, .., ..]);
            for (l, d) in dst.iter_mut().enumerate() {
                *d = coeffs
                    .iter()
                    .enumerate()
                    .map(|(r, k)| coupling.u[[g, r, l]] * k)
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Diagonal response plus low-rank coupling, `Diag(D) X + sum_r u_r v_r^H X`.
pub fn spectral_mix(
    x: &HalfSpectrum,
    params: &SpectralParams,
    coupling: &LowRankCoupling,
) -> Result<HalfSpectrum> {
    let mut y = diagonal_filter(x, params)?;
    let inc = lowrank_couple(x, coupling)?;
    y.data += &inc.data;
    Ok(y)
}

/// Orthogonal projection onto half spectra of real signals: bins `(k, w)` and
/// `(-k, w)` of the DC and Nyquist columns are replaced by their conjugate-symmetric
/// average, which zeroes the imaginary part of self-conjugate bins.
pub fn hermitian_project(y: &HalfSpectrum) -> HalfSpectrum {
    let mut out = y.clone();
    let h = y.height();
    for w in y.self_paired_columns() {
        for bi in 0..y.data.dim().0 {
            for ci in 0..y.data.dim().1 {
                for k in 0..h {
                    let mirror = (h - k) % h;
                    let a = y.data[[bi, ci, k, w]];
                    let b = y.data[[bi, ci, mirror, w]];
                    out.data[[bi, ci, k, w]] = (a + b.conj()) * 0.5;
                }
            }
        }
    }
    out
}

/// `irfft2(Pi_H(Y)) * SiLU(gate)`.
pub fn hermitian_project_and_invert(y: &HalfSpectrum, gate: ArrayView4<f64>) -> Result<Array4<f64>> {
    let (b, c, h, _) = y.data.dim();
    let expected = (b, c, h, y.full_width());
    if gate.dim() != expected {
        return Err(QcsError::Input(format!(
            "gate shape {:?} does not match output shape {expected:?}",
            gate.dim()
        )));
    }
    let mut out = inverse_rfft2(&hermitian_project(y))?;
    out.zip_mut_with(&gate, |o, &g| *o *= silu(g));
    Ok(out)
}

/// Ungated real-domain operator `irfft2(Pi_H(Diag(D) X + low-rank(X)))` with `X = rfft2(x)`.
pub fn spectral_operator(
    x: ArrayView4<f64>,
    params: &SpectralParams,
    coupling: &LowRankCoupling,
) -> Result<Array4<f64>> {
    let y = spectral_mix(&forward_rfft2(x)?, params, coupling)?;
    inverse_rfft2(&hermitian_project(&y))
}

/// Spectral branch output `irfft2(Pi_H(Y)) * SiLU(F_LN)` for normalized features `F_LN`.
pub fn spectral_branch(
    f_ln: ArrayView4<f64>,
    params: &SpectralParams,
    coupling: &LowRankCoupling,
) -> Result<Array4<f64>> {
    let y = spectral_mix(&forward_rfft2(f_ln)?, params, coupling)?;
    hermitian_project_and_invert(&y, f_ln)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn partial_sum(a: Complex64, j: u32) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut p = Complex64::new(1.0, 0.0);
        for _ in 0..j {
            acc += p;
            p *= a;
        }
        acc
    }

    #[test]
    fn transition_examples() {
        assert_eq!(transition(0.0, 0.0).unwrap(), Complex64::new(1.0, 0.0));
        assert_relative_eq!(transition(std::f64::consts::LN_2, 0.0).unwrap().re, 0.5, max_relative = 1e-15);
        let i = transition(0.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((i - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(transition(-0.1, 0.0).is_err());
        assert!(transition(f64::NAN, 0.0).is_err());
        // boundary angle is pulled inside the open interval
        assert!(transition(0.0, std::f64::consts::PI).unwrap().arg() < std::f64::consts::PI);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(geometric_gain(Complex64::new(1.0, 0.0), 3), Complex64::new(3.0, 0.0));
        let g = geometric_gain(Complex64::new(0.5, 0.0), 2);
        assert_relative_eq!(g.re, 1.5, max_relative = 1e-15);
        assert!(g.im.abs() < 1e-15);
        assert_relative_eq!(geometric_gain(Complex64::new(0.0, 0.0), 5).re, 1.0, max_relative = 1e-15);
        assert_eq!(geometric_gain(Complex64::new(0.3, 0.4), 1), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn gain_matches_partial_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let a = transition(rng.gen_range(0.0..3.0), rng.gen_range(-3.1..3.1)).unwrap();
            let j = rng.gen_range(1..=64);
            let exact = partial_sum(a, j);
            let g = geometric_gain(a, j);
            assert!((g - exact).norm() <= 1e-12 * exact.norm().max(1.0), "{a} {j}: {g} vs {exact}");
        }
        // near the removable singularity
        for &h in &[1e-8, 5e-8, 2e-7, 1e-6, 1e-5] {
            for &j in &[2u32, 7, 64, 1024] {
                let a = Complex64::new(1.0 - h, h * 0.5);
                let exact = partial_sum(a, j);
                let g = geometric_gain(a, j);
                assert!((g - exact).norm() <= 1e-12 * exact.norm(), "{h} {j}");
            }
        }
    }

    #[test]
    fn gain_finite_up_to_1024_steps() {
        for &theta in &[0.0, 1e-9, 0.3, 3.0] {
            let g = geometric_gain(transition(0.0, theta).unwrap(), 1024);
            assert!(g.is_finite());
            assert!(g.norm() <= 1024.0 + 1e-9);
        }
    }

    #[test]
    fn single_step_filter_is_identity() {
        let mut params = SpectralParams::identity(1, 4, 6);
        params.delta.fill(20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array4::from_shape_simple_fn((1, 2, 4, 6), || rng.gen_range(-1.0..1.0));
        let s = forward_rfft2(x.view()).unwrap();
        assert_eq!(diagonal_filter(&s, &params).unwrap(), s);
    }

    #[test]
    fn filter_rejects_mismatched_params() {
        let params = SpectralParams::identity(2, 4, 6);
        let s = HalfSpectrum::zeros(1, 3, 4, 6);
        assert!(diagonal_filter(&s, &params).is_err());
        let s = HalfSpectrum::zeros(1, 2, 5, 6);
        assert!(diagonal_filter(&s, &params).is_err());
    }

    #[test]
    fn coupling_trivial_cases() {
        let s = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let x = Array4::from_shape_simple_fn((1, 2, 4, 4), || rng.gen_range(-1.0..1.0));
            forward_rfft2(x.view()).unwrap()
        };
        let zero = lowrank_couple(&s, &LowRankCoupling::disabled(1, s.bins())).unwrap();
        assert!(zero.data.iter().all(|v| *v == Complex64::new(0.0, 0.0)));

        // one-bin projection and broadcast
        let bins = s.bins();
        let mut u = Array3::zeros((1, 1, bins));
        u[[0, 0, 5]] = Complex64::new(1.0, 0.0);
        let coupling = LowRankCoupling {
            v: u.clone(),
            u,
            alpha: vec![1.0],
            warmup: 1.0,
        };
        let inc = lowrank_couple(&s, &coupling).unwrap();
        for c in 0..2 {
            for (l, v) in inc.data.slice(ndarray::s![0, c, .., ..]).iter().enumerate() {
                if l == 5 {
                    assert_eq!(*v, s.data[[0, c, 1, 2]]);
                } else {
                    assert_eq!(*v, Complex64::new(0.0, 0.0));
                }
            }
        }
        let off = LowRankCoupling {
            warmup: 0.0,
            ..coupling.clone()
        };
        assert!(lowrank_couple(&s, &off).unwrap().data.iter().all(|v| v.norm() == 0.0));
        let bad = LowRankCoupling {
            warmup: 1.5,
            ..coupling
        };
        assert!(lowrank_couple(&s, &bad).is_err());
    }

    #[test]
    fn hermitian_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array4::from_shape_simple_fn((1, 1, 6, 8), || rng.gen_range(-1.0..1.0));
        let s = forward_rfft2(x.view()).unwrap();
        let p = hermitian_project(&s);
        for (a, b) in p.data.iter().zip(s.data.iter()) {
            assert!((a - b).norm() < 1e-12);
        }

        let mut bumped = s.clone();
        bumped.data[[0, 0, 0, 0]] += Complex64::new(0.0, 3.0);
        let p = hermitian_project(&bumped);
        assert!(p.data[[0, 0, 0, 0]].im.abs() < 1e-12);
        assert!((p.data[[0, 0, 0, 0]] - s.data[[0, 0, 0, 0]]).norm() < 1e-12);
        let out = inverse_rfft2(&p).unwrap();
        for (a, b) in out.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn large_gate_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array4::from_shape_simple_fn((1, 1, 4, 5), || rng.gen_range(-1.0..1.0));
        let s = forward_rfft2(x.view()).unwrap();
        let ungated = inverse_rfft2(&hermitian_project(&s)).unwrap();
        let gate = Array4::from_elem((1, 1, 4, 5), 40.0);
        let gated = hermitian_project_and_invert(&s, gate.view()).unwrap();
        for (a, b) in gated.iter().zip(ungated.iter()) {
            assert_relative_eq!(*a, b * 40.0 * super::super::activation::sigmoid(40.0), max_relative = 1e-14);
        }
        assert!(hermitian_project_and_invert(&s, Array4::zeros((1, 1, 4, 4)).view()).is_err());
    }
}
