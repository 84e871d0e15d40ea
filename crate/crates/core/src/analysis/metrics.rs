//! Frame-level evaluation metrics shared by rollout and the benchmark
//! suites.

use crate::error::{CoreError, Result};
use num_complex::Complex64;

fn check_pair(pred: &[Complex64], truth: &[Complex64]) -> Result<()> {
    if pred.is_empty() {
        return Err(CoreError::EmptyInput("metric on empty frames".into()));
    }
    if pred.len() != truth.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "metric on frames of length {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean complex-modulus error over the grid: (1/N)·Σ|pred_i − truth_i|.
pub fn mae_per_step(pred: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Re(Σ pred*_i·truth_i) / (‖pred‖·‖truth‖): 1 for identical fields, 0 for
/// orthogonal ones, and sensitive to global phase drift.
pub fn normalized_correlation(pred: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mut dot = Complex64::new(0.0, 0.0);
    let mut np = 0.0f64;
    let mut nt = 0.0f64;
    for (a, b) in pred.iter().zip(truth) {
        dot += a.conj() * b;
        np += a.norm_sqr();
        nt += b.norm_sqr();
    }
    if np == 0.0 || nt == 0.0 {
        return Err(CoreError::InvalidParameter(
            "normalized correlation of a zero-norm field".into(),
        ));
    }
    Ok(dot.re / (np.sqrt() * nt.sqrt()))
}
