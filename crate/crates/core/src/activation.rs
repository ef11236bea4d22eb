//! Pointwise activations shared by the spatial and spectral branches.

use crate::likelihood::normal;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * sigmoid(x)`
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal::cdf(x)
}
