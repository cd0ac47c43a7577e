use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use super::matrix::{dot, norm2, Matrix};
use crate::{Error, Result};

/// Rescale every row of `m` whose ℓ₂ norm exceeds `bound` onto the ball of
/// radius `bound`. Rows already inside the ball are left bit-for-bit intact.
pub fn project_rows(m: &Matrix, bound: f64) -> Result<Matrix> {
    let mut out = m.clone();
    project_rows_in_place(&mut out, bound)?;
    Ok(out)
}

/// Column variant of [`project_rows`].
pub fn project_cols(m: &Matrix, bound: f64) -> Result<Matrix> {
    let mut out = m.clone();
    project_cols_in_place(&mut out, bound)?;
    Ok(out)
}

fn check_bound(bound: f64) -> Result<()> {
    if bound >= 0.0 && bound.is_finite() {
        Ok(())
    } else {
        Err(Error::argument(format!("projection bound must be finite and ≥ 0, got {bound}")))
    }
}

/// Factor mapping a vector of norm `norm > bound` onto the ball. Rounding can
/// leave `factor·norm` an ulp above the bound, so the factor is stepped down
/// until the scaled norm fits; that is what makes projection exactly
/// idempotent.
/// `scaled_norm(s)` must compute the norm of the scaled vector exactly the way
/// the caller's norm routine would.
fn shrink_factor(norm: f64, bound: f64, scaled_norm: impl Fn(f64) -> f64) -> f64 {
    let mut s = bound / norm;
    loop {
        if scaled_norm(s) <= bound || s == 0.0 {
            return s;
        }
        s = f64::from_bits(s.to_bits() - 1);
    }
}

pub fn project_rows_in_place(m: &mut Matrix, bound: f64) -> Result<()> {
    check_bound(bound)?;
    for i in 0..m.rows() {
        let norm = m.row_norm(i);
        if norm > bound {
            let row = m.row(i);
            let s = shrink_factor(norm, bound, |s| {
                norm2(&row.iter().map(|x| x * s).collect::<Vec<_>>())
            });
            m.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(())
}

pub fn project_cols_in_place(m: &mut Matrix, bound: f64) -> Result<()> {
    check_bound(bound)?;
    let norms = m.col_norms();
    for (j, &norm) in norms.iter().enumerate() {
        if norm > bound {
            let view = &*m;
            // Same accumulation order as `Matrix::col_norms`.
            let s = shrink_factor(norm, bound, |s| {
                libm::sqrt((0..view.rows()).map(|i| (view.get(i, j) * s) * (view.get(i, j) * s)).sum())
            });
            for i in 0..m.rows() {
                let v = m.get(i, j) * s;
                m.set(i, j, v);
            }
        }
    }
    Ok(())
}

/// Angle in radians between `u` and `v`, clamped to `[0, π]`.
///
/// A zero vector has no direction; the angle is reported as `π/2`, which puts
/// a dead unit past every categorical threshold without producing NaN.
pub fn angle(u: &[f64], v: &[f64]) -> Result<f64> {
    Error::check_dim("angle", u.len(), v.len())?;
    let nu = norm2(u);
    let nv = norm2(v);
    if nu == 0.0 || nv == 0.0 {
        return Ok(FRAC_PI_2);
    }
    // 2·atan2(‖û − v̂‖, ‖û + v̂‖) keeps full precision near 0 and π, where
    // acos of the cosine loses about half the digits.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a / nu, b / nv);
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    Ok(2.0 * libm::atan2(libm::sqrt(diff), libm::sqrt(sum)))
}

/// Cosine similarity, 0 for a zero vector.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let d = norm2(u) * norm2(v);
    if d == 0.0 {
        0.0
    } else {
        (dot(u, v) / d).clamp(-1.0, 1.0)
    }
}

/// Tikhonov term for [`ridge_least_squares`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `eps = 1e-8 · trace(AᵀA) / n`.
    Auto,
    Fixed(f64),
}

impl Ridge {
    pub const AUTO_SCALE: f64 = 1e-8;

    pub fn resolve(self, gram: &Matrix) -> f64 {
        match self {
            Ridge::Fixed(eps) => eps,
            Ridge::Auto => {
                let n = gram.rows();
                if n == 0 {
                    return 0.0;
                }
                let tr: f64 = (0..n).map(|i| gram.get(i, i)).sum();
                Self::AUTO_SCALE * tr / n as f64
            }
        }
    }
}

/// Solve `(AᵀA + eps·I)·W = AᵀB` for `W` (n×m) by Cholesky factorization of
/// the normal equations. `A` is k×n, `B` is k×m.
pub fn ridge_least_squares(a: &Matrix, b: &Matrix, ridge: Ridge) -> Result<Matrix> {
    Error::check_dim("ridge_least_squares samples", a.rows(), b.rows())?;
    if let Ridge::Fixed(eps) = ridge {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::argument(format!("ridge must be finite and ≥ 0, got {eps}")));
        }
    }
    let mut gram = a.tr_matmul(a)?;
    let eps = ridge.resolve(&gram);
    for i in 0..gram.rows() {
        let d = gram.get(i, i) + eps;
        gram.set(i, i, d);
    }
    let rhs = a.tr_matmul(b)?;
    let chol = cholesky(&gram)?;
    Ok(cholesky_solve(&chol, &rhs))
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = M`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    Error::check_dim("cholesky", m.rows(), m.cols())?;
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    // Relative pivot floor: anything this small against the diagonal scale
    // is numerically singular.
    let scale = (0..n).map(|i| libm::fabs(m.get(i, i))).fold(0.0, f64::max);
    let floor = scale * 1e-14;
    for j in 0..n {
        let d = m.get(j, j) - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(d > floor) {
            return Err(Error::Singular { pivot: j });
        }
        let ljj = libm::sqrt(d);
        l.set(j, j, ljj);
        for i in j + 1..n {
            let s = m.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solve `L·Lᵀ·X = B` given the Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        // forward: L·y = b
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        // back: Lᵀ·x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    x
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from the all-ones start vector. The estimate `‖M·v‖` for unit `v`
/// approaches the eigenvalue from below.
pub fn largest_eigenvalue(m: &Matrix, max_iters: usize, rel_tol: f64) -> Result<f64> {
    Error::check_dim("largest_eigenvalue", m.rows(), m.cols())?;
    let n = m.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut v: Vec<f64> = alloc::vec![1.0 / libm::sqrt(n as f64); n];
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let w = m.matvec(&v)?;
        let nw = norm2(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        v = w.iter().map(|x| x / nw).collect();
        let converged = libm::fabs(nw - estimate) <= rel_tol * nw;
        estimate = nw;
        if converged {
            break;
        }
    }
    Ok(estimate)
}
