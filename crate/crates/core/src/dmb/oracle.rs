//! Reference implementations used by the block tests.

use ndarray::{Array4, ArrayView4};

use super::SpatialSsmParams;

/// Token-by-token scan over an explicit token list. Sums run in ascending
/// index order, so results match [`super::spatial_scan_raw`] exactly.
pub fn naive_scan_oracle(x: ArrayView4<f64>, p: &SpatialSsmParams) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let s = p.state_dim();
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        let tokens: Vec<Vec<f64>> = (0..h * w)
            .map(|t| (0..c).map(|ci| x[[bi, ci, t / w, t % w]]).collect())
            .collect();
        let mut hidden = vec![0.0; s];
        for (t, z) in tokens.iter().enumerate() {
            let y: Vec<f64> = (0..c)
                .map(|ci| {
                    let mut acc = 0.0;
                    for si in 0..s {
                        acc += p.c[[ci, si]] * hidden[si];
                    }
                    acc + p.d_skip[ci] * z[ci]
                })
                .collect();
            for (ci, v) in y.into_iter().enumerate() {
                out[[bi, ci, t / w, t % w]] = v;
            }
            hidden = (0..s)
                .map(|si| {
                    let mut acc = 0.0;
                    for sj in 0..s {
                        acc += p.a[[si, sj]] * hidden[sj];
                    }
                    for ci in 0..c {
                        acc += p.b[[si, ci]] * z[ci];
                    }
                    acc
                })
                .collect();
        }
    }
    out
}
