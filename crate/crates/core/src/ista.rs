//! Iterative shrinkage-thresholding (ISTA) reference coder.
//!
//! Used as the correctness oracle for the encoder and to initialize it: with
//! `E = α·Dᵀ`, `S = I − α·DᵀD` and `b = α·λ·1`, the recurrent encoder runs
//! exactly the non-negative ISTA iteration.

use alloc::format;
use alloc::vec::Vec;

use crate::encoder::{ModelParams, Trajectory};
use crate::numerics::{largest_eigenvalue, Matrix, Vector};
use crate::{Error, Result};

/// Power-iteration budget for the step-size bound.
pub const POWER_ITERS: usize = 100;
pub const POWER_TOL: f64 = 1e-6;
/// Fraction of `1/σ_max(DᵀD)` used as the default step.
pub const STEP_SAFETY: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct IstaProblem {
    /// Dictionary, m×n.
    pub d: Matrix,
    pub lambda: f64,
    pub alpha: f64,
    /// Rectified (non-negative) variant of the shrink operator.
    pub nonneg: bool,
}

/// Soft threshold. Signed: `sign(v)·max(0, |v| − θ)`; non-negative:
/// `max(0, v − θ)`.
pub fn shrink(v: &[f64], theta: f64, nonneg: bool) -> Vector {
    v.iter()
        .map(|&x| {
            if nonneg {
                (x - theta).max(0.0)
            } else if x > theta {
                x - theta
            } else if x < -theta {
                x + theta
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>()
        .into()
}

/// One ISTA step `shrink(z + α·Dᵀ(x − D·z), α·λ)`. Algebraically the same as
/// `α·Dᵀx + (I − α·DᵀD)·z`, evaluated through the residual instead of a
/// materialized `DᵀD` so that it stays an independent route from the encoder.
pub fn ista_step(p: &IstaProblem, x: &[f64], z: &[f64]) -> Result<Vector> {
    let recon = p.d.matvec(z)?;
    let residual: Vec<f64> = x.iter().zip(recon.iter()).map(|(a, b)| a - b).collect();
    let grad = p.d.tr_matvec(&residual)?;
    let v: Vec<f64> = z.iter().zip(grad.iter()).map(|(zi, g)| zi + p.alpha * g).collect();
    Ok(shrink(&v, p.alpha * p.lambda, p.nonneg))
}

/// Runs `iters` ISTA steps from `z[0] = 0` and returns every iterate.
pub fn ista_solve(p: &IstaProblem, x: &[f64], iters: usize) -> Result<Trajectory> {
    Error::check_dim("ista_solve input", p.d.rows(), x.len())?;
    if iters == 0 {
        return Err(Error::argument("ISTA needs at least one iteration"));
    }
    if !(p.alpha > 0.0) {
        return Err(Error::argument(format!("ISTA step must be > 0, got {}", p.alpha)));
    }
    let mut states = Vec::with_capacity(iters + 1);
    states.push(Vector::zeros(p.d.cols()));
    for _ in 0..iters {
        let next = ista_step(p, x, states.last().expect("non-empty"))?;
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// Encoder parameters that reproduce non-negative ISTA: `E = α·Dᵀ`,
/// `S = I − α·DᵀD`, `b = α·λ`, `C = 0` (with `classes` rows).
pub fn ista_params(d: &Matrix, lambda: f64, alpha: f64, classes: usize) -> Result<ModelParams> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::argument(format!("alpha must be > 0, got {alpha}")));
    }
    let n = d.cols();
    let mut e = d.transpose();
    e.scale(alpha);
    let mut s = d.tr_matmul(d)?;
    s.scale(-alpha);
    for i in 0..n {
        s.set(i, i, s.get(i, i) + 1.0);
    }
    Ok(ModelParams {
        e,
        s,
        d: d.clone(),
        c: Matrix::zeros(classes, n),
        b: Vector::from(alloc::vec![alpha * lambda; n]),
    })
}

/// `σ_max(DᵀD)` by power iteration.
pub fn gram_spectral_radius(d: &Matrix) -> Result<f64> {
    largest_eigenvalue(&d.tr_matmul(d)?, POWER_ITERS, POWER_TOL)
}

/// Default ISTA step: the largest step that both converges
/// (`0.9/σ_max(DᵀD)`) and keeps the rows of `E = α·Dᵀ` inside `e_bound`.
pub fn default_alpha(d: &Matrix, e_bound: f64) -> Result<f64> {
    let sigma = gram_spectral_radius(d)?;
    let max_col = d.col_norms().into_iter().fold(0.0, f64::max);
    let conv = if sigma > 0.0 { STEP_SAFETY / sigma } else { f64::INFINITY };
    let bound = if max_col > 0.0 { e_bound / max_col } else { f64::INFINITY };
    let alpha = conv.min(bound);
    if alpha.is_finite() && alpha > 0.0 {
        Ok(alpha)
    } else {
        Err(Error::argument("dictionary is all zeros; no step size is defined"))
    }
}
