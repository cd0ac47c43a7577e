//! Dense linear algebra, norm-ball projections, angles, ridge least squares
//! and the seeded random generator shared by the rest of the crate.
//!
//! Everything here is a pure function of its inputs and works in `f64`.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{
    angle, cholesky, cholesky_solve, cosine, largest_eigenvalue, project_cols, project_cols_in_place,
    project_rows, project_rows_in_place, ridge_least_squares, Ridge,
};
pub use matrix::{axpy, dot, first_non_finite, norm1, norm2, Matrix, Vector};
pub use rng::SeededRng;
