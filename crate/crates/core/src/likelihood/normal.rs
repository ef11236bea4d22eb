//! Standard normal density, distribution function, and their logs, evaluated
//! so that far tails neither underflow to zero nor lose relative accuracy.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{QcsError, Result};

/// Beyond this many standard deviations into the lower tail, the distribution
/// function is evaluated through the continued fraction rather than `erfc`.
pub const TAIL_THRESHOLD: f64 = 8.0;

const CF_TERMS: u32 = 40;

/// ln(sqrt(2 pi))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

pub fn log_pdf(t: f64) -> f64 {
    -0.5 * t * t - LN_SQRT_2PI
}

pub fn cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// `Q(x) / phi(x)` for `x >= TAIL_THRESHOLD`, where `Q` is the upper-tail probability.
///
/// Backward evaluation of `1 / (x + 1/(x + 2/(x + 3/(x + ...))))`.
fn upper_tail_ratio(x: f64) -> f64 {
    let mut f = x;
    for k in (1..=CF_TERMS).rev() {
        f = x + k as f64 / f;
    }
    1.0 / f
}

/// `ln Phi(t)`, finite for every finite `t`.
pub fn log_cdf(t: f64) -> f64 {
    if t == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if t < -TAIL_THRESHOLD {
        log_pdf(t) + upper_tail_ratio(-t).ln()
    } else if t <= 0.0 {
        cdf(t).ln()
    } else {
        (-0.5 * libm::erfc(t * FRAC_1_SQRT_2)).ln_1p()
    }
}

/// Mills ratio `phi(t) / Phi(t)`.
pub fn mills_ratio(t: f64) -> Result<f64> {
    if t.is_nan() {
        return Err(QcsError::Input("mills ratio of NaN".into()));
    }
    Ok(mills_unchecked(t))
}

pub(crate) fn mills_unchecked(t: f64) -> f64 {
    if t == f64::NEG_INFINITY {
        f64::INFINITY
    } else if t < -TAIL_THRESHOLD {
        1.0 / upper_tail_ratio(-t)
    } else if t > TAIL_THRESHOLD {
        // Phi(t) rounds to 1 here
        pdf(t)
    } else {
        pdf(t) / cdf(t)
    }
}

/// `ln(Phi(upper) - Phi(lower))` for standardized bounds `lower < upper`.
///
/// Intervals lying entirely in one tail are differenced in log space; an
/// interval straddling zero is summed from two same-sign `erf` terms.
pub fn log_interval_mass(lower: f64, upper: f64) -> f64 {
    if upper <= 0.0 {
        let lu = log_cdf(upper);
        lu + log1m_exp(log_cdf(lower) - lu)
    } else if lower >= 0.0 {
        let ll = log_cdf(-lower);
        ll + log1m_exp(log_cdf(-upper) - ll)
    } else {
        (0.5 * (libm::erf(upper * FRAC_1_SQRT_2) - libm::erf(lower * FRAC_1_SQRT_2))).ln()
    }
}

/// `ln(1 - e^a)` for `a <= 0`.
fn log1m_exp(a: f64) -> f64 {
    if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // reference values from 40-digit arithmetic
    #[test]
    fn mills_reference_values() {
        assert_relative_eq!(mills_ratio(0.0).unwrap(), 0.797_884_560_802_865_4, max_relative = 1e-15);
        assert_relative_eq!(mills_ratio(-30.0).unwrap(), 30.033_259_667_433_677, max_relative = 1e-14);
        assert_relative_eq!(mills_ratio(-8.0).unwrap(), 8.121_368_112_236_113, max_relative = 1e-14);
        assert_relative_eq!(mills_ratio(-40.0).unwrap(), 40.024_968_847_207_264, max_relative = 1e-14);
        assert_relative_eq!(mills_ratio(10.0).unwrap(), 7.694_598_626_706_419e-23, max_relative = 1e-13);
        assert!(mills_ratio(f64::NAN).is_err());
    }

    #[test]
    fn mills_is_continuous_across_the_tail_switch() {
        for &t in &[-TAIL_THRESHOLD, TAIL_THRESHOLD] {
            let below = mills_unchecked(t - 1e-12);
            let above = mills_unchecked(t + 1e-12);
            assert_relative_eq!(below, above, max_relative = 1e-11);
        }
    }

    #[test]
    fn log_cdf_tail() {
        assert_relative_eq!(log_cdf(-40.0), -804.608_442_013_753_8, max_relative = 1e-15);
        assert_relative_eq!(log_cdf(0.0), -std::f64::consts::LN_2, max_relative = 1e-15);
        let a = log_cdf(-TAIL_THRESHOLD - 1e-13);
        let b = log_cdf(-TAIL_THRESHOLD + 1e-13);
        assert!((a - b).abs() < 1e-11);
        assert!(log_cdf(40.0) == 0.0 || log_cdf(40.0).abs() < 1e-300);
    }

    #[test]
    fn interval_mass() {
        assert_eq!(log_interval_mass(f64::NEG_INFINITY, f64::INFINITY), 0.0);
        assert_relative_eq!(log_interval_mass(-1.0, 1.0), -0.381_715_146_302_126_1, max_relative = 1e-14);
        // far lower tail: finite and close to ln Phi(upper)
        let v = log_interval_mass(-41.0, -40.0);
        assert!(v.is_finite());
        assert_relative_eq!(v, log_cdf(-40.0), max_relative = 1e-12);
        // mirror symmetry
        assert_relative_eq!(log_interval_mass(2.0, 3.5), log_interval_mass(-3.5, -2.0), max_relative = 1e-14);
    }
}
