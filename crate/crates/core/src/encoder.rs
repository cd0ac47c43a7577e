//! The unrolled recurrent rectified-linear encoder.
//!
//! `z[0] = 0`, `z[t+1] = max(0, E·x + S·z[t] − b)` for `t = 0 … T−1`. The
//! input projects into every iteration, so `E·x − b` is computed once and
//! reused.

use alloc::format;
use alloc::vec::Vec;

use crate::numerics::{dot, Matrix, Vector};
use crate::{Error, Result};

/// Structural and optimization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    /// Number of applications of the recurrence (`T`).
    pub iterations: usize,
    /// Hidden units (`n`).
    pub hidden: usize,
    /// Input dimension (`m`).
    pub input_dim: usize,
    /// Classes (`l`).
    pub classes: usize,
    /// Sparsity weight λ on `‖z[T]‖₁`.
    pub lambda: f64,
    /// ISTA step size used for initialization; `None` picks the largest safe
    /// step (see [`crate::ista::default_alpha`]).
    pub alpha: Option<f64>,
    pub lr_base: f64,
    /// Bound on the column norms of `D`.
    pub d_bound: f64,
    /// Bound on the row norms of `C`.
    pub c_bound: f64,
    /// Extra learning-rate divisor for `C`.
    pub clf_lr_divisor: f64,
    pub seed: u64,
}

impl Hyper {
    pub const E_BOUND_NUMERATOR: f64 = 1.25;

    /// Row-norm bound of `E`, always `1.25 / T`.
    pub fn e_bound(&self) -> f64 {
        Self::E_BOUND_NUMERATOR / self.iterations as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::argument("iteration count T must be ≥ 1"));
        }
        if self.hidden == 0 || self.input_dim == 0 || self.classes == 0 {
            return Err(Error::argument("hidden, input_dim and classes must all be ≥ 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::argument(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::argument(format!("alpha must be > 0, got {a}")));
            }
        }
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return Err(Error::argument(format!("lr_base must be > 0, got {}", self.lr_base)));
        }
        if !(self.clf_lr_divisor > 0.0) {
            return Err(Error::argument("clf_lr_divisor must be > 0"));
        }
        if !(self.d_bound >= 0.0 && self.c_bound >= 0.0) {
            return Err(Error::argument("norm bounds must be ≥ 0"));
        }
        Ok(())
    }
}

impl Default for Hyper {
    /// The full-scale MNIST configuration: 784-400¹¹-10.
    fn default() -> Self {
        Hyper {
            iterations: 11,
            hidden: 400,
            input_dim: 784,
            classes: 10,
            lambda: 0.5,
            alpha: None,
            lr_base: 0.05,
            d_bound: 1.0,
            c_bound: 5.0,
            clf_lr_divisor: 5.0,
            seed: 0,
        }
    }
}

/// The five learned tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Encoding matrix, n×m.
    pub e: Matrix,
    /// Explaining-away matrix, n×n.
    pub s: Matrix,
    /// Decoding matrix, m×n.
    pub d: Matrix,
    /// Classification matrix, l×n.
    pub c: Matrix,
    /// Bias, length n.
    pub b: Vector,
}

/// Tolerance on the norm constraints.
pub const CONSTRAINT_SLACK: f64 = 1e-9;

impl ModelParams {
    pub fn zeros(hidden: usize, input_dim: usize, classes: usize) -> Self {
        ModelParams {
            e: Matrix::zeros(hidden, input_dim),
            s: Matrix::zeros(hidden, hidden),
            d: Matrix::zeros(input_dim, hidden),
            c: Matrix::zeros(classes, hidden),
            b: Vector::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.e.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.e.cols()
    }

    pub fn classes(&self) -> usize {
        self.c.rows()
    }

    /// Checks that all five tensors agree on `(n, m, l)`.
    pub fn validate_shapes(&self) -> Result<()> {
        let n = self.hidden();
        let m = self.input_dim();
        Error::check_dim("S rows", n, self.s.rows())?;
        Error::check_dim("S cols", n, self.s.cols())?;
        Error::check_dim("D rows", m, self.d.rows())?;
        Error::check_dim("D cols", n, self.d.cols())?;
        Error::check_dim("C cols", n, self.c.cols())?;
        Error::check_dim("b len", n, self.b.len())?;
        Ok(())
    }

    pub fn check_against(&self, hyper: &Hyper) -> Result<()> {
        self.validate_shapes()?;
        Error::check_dim("hidden units", hyper.hidden, self.hidden())?;
        Error::check_dim("input dimension", hyper.input_dim, self.input_dim())?;
        Error::check_dim("classes", hyper.classes, self.classes())?;
        Ok(())
    }

    pub fn first_non_finite(&self) -> Option<(&'static str, usize)> {
        self.tensors()
            .into_iter()
            .find_map(|(name, v)| v.iter().position(|x| !x.is_finite()).map(|i| (name, i)))
    }

    /// Flat views in the canonical order E, S, D, C, b.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("E", self.e.as_slice()),
            ("S", self.s.as_slice()),
            ("D", self.d.as_slice()),
            ("C", self.c.as_slice()),
            ("b", &self.b),
        ]
    }

    /// Largest violation of the norm constraints (0 when feasible), reported
    /// per tensor as `(max ‖E row‖ − bound, max ‖D col‖ − bound, max ‖C row‖ − bound)`.
    pub fn constraint_excess(&self, hyper: &Hyper) -> ConstraintExcess {
        let max_row = |m: &Matrix| (0..m.rows()).map(|i| m.row_norm(i)).fold(0.0, f64::max);
        let max_col = self.d.col_norms().into_iter().fold(0.0, f64::max);
        ConstraintExcess {
            e: max_row(&self.e) - hyper.e_bound(),
            d: max_col - hyper.d_bound,
            c: max_row(&self.c) - hyper.c_bound,
        }
    }

    /// Errors if any norm constraint is violated beyond [`CONSTRAINT_SLACK`] or
    /// any entry is non-finite.
    pub fn check_constraints(&self, hyper: &Hyper) -> Result<()> {
        if let Some((tensor, index)) = self.first_non_finite() {
            return Err(Error::NonFinite { tensor, index });
        }
        let x = self.constraint_excess(hyper);
        if x.e > CONSTRAINT_SLACK || x.d > CONSTRAINT_SLACK || x.c > CONSTRAINT_SLACK {
            return Err(Error::argument(format!("norm constraints violated: {x:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintExcess {
    pub e: f64,
    pub d: f64,
    pub c: f64,
}

/// Hidden-state sequence `z[0] … z[T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
}

impl Trajectory {
    /// Number of recurrence applications (`T`).
    pub fn iterations(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory always holds z[0]")
    }

    pub fn state(&self, t: usize) -> &Vector {
        &self.states[t]
    }
}

/// Elementwise `max(0, v)`.
pub fn relu(v: &[f64]) -> Vector {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect::<Vec<_>>().into()
}

/// Run the recurrence for `iterations` steps and return every state.
pub fn encode(params: &ModelParams, x: &[f64], iterations: usize) -> Result<Trajectory> {
    encode_full(params, x, iterations).map(|(traj, _)| traj)
}

/// Like [`encode`], but also returns the pre-activations `a[t] = E·x + S·z[t−1] − b`
/// for `t = 1 … T` (index 0 of the returned vector holds `a[1]`).
pub fn encode_full(params: &ModelParams, x: &[f64], iterations: usize) -> Result<(Trajectory, Vec<Vector>)> {
    params.validate_shapes()?;
    Error::check_dim("encode input", params.input_dim(), x.len())?;
    if iterations == 0 {
        return Err(Error::argument("iteration count T must be ≥ 1"));
    }
    let n = params.hidden();
    let mut drive = params.e.matvec(x)?;
    for (d, b) in drive.iter_mut().zip(params.b.iter()) {
        *d -= b;
    }

    let mut states = Vec::with_capacity(iterations + 1);
    let mut pre = Vec::with_capacity(iterations);
    states.push(Vector::zeros(n));
    let mut active: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..iterations {
        let z = states.last().expect("non-empty");
        active.clear();
        active.extend(z.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j));
        let a: Vector = (0..n)
            .map(|i| {
                let row = params.s.row(i);
                drive[i] + active.iter().map(|&j| row[j] * z[j]).sum::<f64>()
            })
            .collect::<Vec<_>>()
            .into();
        states.push(relu(&a));
        pre.push(a);
    }
    Ok((Trajectory { states }, pre))
}

/// `S·z` restricted to the non-zero entries of `z`, kept separate for tests
/// that compare against a dense product.
pub fn sparse_recurrent_input(s: &Matrix, z: &[f64]) -> Vector {
    (0..s.rows())
        .map(|i| {
            let row = s.row(i);
            z.iter().zip(row).filter(|(v, _)| **v != 0.0).map(|(v, w)| v * w).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into()
}

/// Dense reference for one step of the recurrence, used only as a test oracle.
#[doc(hidden)]
pub fn dense_step(params: &ModelParams, x: &[f64], z: &[f64]) -> Vector {
    let n = params.hidden();
    let v: Vec<f64> = (0..n)
        .map(|i| dot(params.e.row(i), x) + dot(params.s.row(i), z) - params.b[i])
        .collect();
    relu(&v)
}
