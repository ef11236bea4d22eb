//! Uniform and sign quantizers: codebooks, decision intervals, and the
//! element-wise quantization map.

use serde::{Deserialize, Serialize};

use crate::error::{QcsError, Result};

pub const MAX_BITS: u32 = 8;

/// A `bits`-bit uniform quantizer with step `step`.
///
/// For `bits == 1` the codebook is the sign alphabet `{-1, +1}` and `step` is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    bits: u32,
    step: f64,
}

/// Index of a codeword, base-0 in increasing codeword order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodewordIndex(pub u16);

/// Half-open decision interval `[lower, upper)`; the lowest interval is open below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalBounds {
    pub lower: f64,
    pub upper: f64,
}

impl IntervalBounds {
    pub const REAL_LINE: IntervalBounds = IntervalBounds {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(QcsError::Parameter(format!(
                "interval requires lower < upper, got [{lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v < self.upper || (self.lower == f64::NEG_INFINITY && v < self.upper)
    }

    /// Midpoint for finite intervals.
    pub fn center(&self) -> Option<f64> {
        (self.lower.is_finite() && self.upper.is_finite()).then(|| 0.5 * (self.lower + self.upper))
    }
}

impl QuantizerSpec {
    pub fn new(bits: u32, step: f64) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(QcsError::Parameter(format!(
                "quantizer bits must lie in [1, {MAX_BITS}], got {bits}"
            )));
        }
        if bits > 1 && !(step.is_finite() && step > 0.0) {
            return Err(QcsError::Parameter(format!(
                "quantizer step must be finite and positive, got {step}"
            )));
        }
        Ok(Self { bits, step })
    }

    /// The 1-bit sign quantizer.
    pub fn sign() -> Self {
        Self { bits: 1, step: 1.0 }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn levels(&self) -> usize {
        1usize << self.bits
    }

    pub fn check_index(&self, c: CodewordIndex) -> Result<()> {
        if (c.0 as usize) < self.levels() {
            Ok(())
        } else {
            Err(QcsError::Input(format!(
                "codeword index {} out of range for a {}-bit quantizer",
                c.0, self.bits
            )))
        }
    }

    /// Value of codeword `c`: `q_r = (2r - 2^Q - 1) step / 2` with `r = c + 1`.
    pub fn codeword(&self, c: CodewordIndex) -> f64 {
        if self.bits == 1 {
            return if c.0 == 0 { -1.0 } else { 1.0 };
        }
        let r = c.0 as f64 + 1.0;
        (2.0 * r - self.levels() as f64 - 1.0) * self.step / 2.0
    }

    /// All codewords in increasing order.
    pub fn codewords(&self) -> Vec<f64> {
        (0..self.levels())
            .map(|i| self.codeword(CodewordIndex(i as u16)))
            .collect()
    }

    /// Maps `v` to the codeword whose interval contains it.
    pub fn quantize(&self, v: f64) -> Result<CodewordIndex> {
        if !v.is_finite() {
            return Err(QcsError::Input(format!("cannot quantize non-finite value {v}")));
        }
        if self.bits == 1 {
            return Ok(CodewordIndex(u16::from(v >= 0.0)));
        }
        let levels = self.levels() as f64;
        // interval r (base-0) is [(r - L/2) step, (r + 1 - L/2) step)
        let k = (v / self.step + levels / 2.0).floor();
        let mut k = k.clamp(0.0, levels - 1.0) as u16;
        // division rounding can land one cell off near a boundary; defer to the interval bounds
        let iv = self.interval_unchecked(CodewordIndex(k));
        if v >= iv.upper {
            k += 1;
        } else if v < iv.lower {
            k -= 1;
        }
        Ok(CodewordIndex(k))
    }

    pub fn interval_of(&self, c: CodewordIndex) -> Result<IntervalBounds> {
        self.check_index(c)?;
        Ok(self.interval_unchecked(c))
    }

    pub(crate) fn interval_unchecked(&self, c: CodewordIndex) -> IntervalBounds {
        if self.bits == 1 {
            return if c.0 == 0 {
                IntervalBounds {
                    lower: f64::NEG_INFINITY,
                    upper: 0.0,
                }
            } else {
                IntervalBounds {
                    lower: 0.0,
                    upper: f64::INFINITY,
                }
            };
        }
        let half_levels = (self.levels() / 2) as f64;
        let k = c.0 as f64;
        let lower = if c.0 == 0 {
            f64::NEG_INFINITY
        } else {
            (k - half_levels) * self.step
        };
        let upper = if c.0 as usize == self.levels() - 1 {
            f64::INFINITY
        } else {
            (k + 1.0 - half_levels) * self.step
        };
        IntervalBounds { lower, upper }
    }
}
