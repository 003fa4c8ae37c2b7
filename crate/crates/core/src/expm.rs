//! Matrix exponential by scaling and squaring.
//!
//! Compartmental (Metzler) matrices are shifted by `c·I` so every Taylor term
//! is entry-wise non-negative; the result is then exactly non-negative, which
//! the positivity guarantees of the discretized PK model rely on.

use nalgebra::DMatrix;

const TAYLOR_TERMS: usize = 24;

pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(m.is_square(), "expm needs a square matrix");
    let n = m.nrows();
    let shift = (0..n).map(|i| -m[(i, i)]).fold(0.0_f64, f64::max);
    let shifted = m + DMatrix::identity(n, n) * shift;

    let norm = one_norm(&shifted);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = &shifted * scale;

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=TAYLOR_TERMS {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() <= f64::EPSILON * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result * (-shift).exp()
}

/// Induced 1-norm (max column sum).
fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
