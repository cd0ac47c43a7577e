//! Losses and exact backpropagation-through-time.
//!
//! Unsupervised loss: `½‖x − D·z[T]‖² + λ‖z[T]‖₁`. Supervised loss: the
//! negative multinomial log-likelihood of `C·z[T]/‖z[T]‖`. Both depend on the
//! final state only; the recurrence is differentiated by hand:
//!
//! ```text
//! g[T] = ∂L/∂z[T]
//! δ[t] = g[t] ⊙ 1[z[t] > 0]
//! g[t−1] = Sᵀ·δ[t]
//! ∂E = Σ_t δ[t]·xᵀ,  ∂S = Σ_t δ[t]·z[t−1]ᵀ,  ∂b = −Σ_t δ[t]
//! ```
//!
//! The printed logistic `z_y − log Σ e^{z_i}` is a log-likelihood to be
//! maximized; since it is added to a minimized objective, the loss used here
//! is its negative. Kinks (ReLU at 0, `|·|` at 0) get derivative 0. An all-zero
//! final code has normalized code 0 and passes no gradient through the
//! normalization.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{encode_full, Hyper, ModelParams, Trajectory};
use crate::numerics::{dot, norm1, norm2, Matrix, Vector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    /// `½‖x − D·z[T]‖²`.
    pub recon: f64,
    /// `λ‖z[T]‖₁`.
    pub sparsity: f64,
    /// Negative log-likelihood of the label; 0 without a label.
    pub clf: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, sparsity: f64, clf: f64) -> Self {
        LossBreakdown { recon, sparsity, clf, total: recon + sparsity + clf }
    }

    /// Unsupervised part, `recon + sparsity`.
    pub fn unsupervised(&self) -> f64 {
        self.recon + self.sparsity
    }

    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.recon += other.recon;
        self.sparsity += other.sparsity;
        self.clf += other.clf;
        self.total += other.total;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            recon: self.recon * s,
            sparsity: self.sparsity * s,
            clf: self.clf * s,
            total: self.total * s,
        }
    }
}

/// Gradient of the total loss, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub e: Matrix,
    pub s: Matrix,
    pub d: Matrix,
    pub c: Matrix,
    pub b: Vector,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            e: Matrix::zeros(params.e.rows(), params.e.cols()),
            s: Matrix::zeros(params.s.rows(), params.s.cols()),
            d: Matrix::zeros(params.d.rows(), params.d.cols()),
            c: Matrix::zeros(params.c.rows(), params.c.cols()),
            b: Vector::zeros(params.b.len()),
        }
    }

    pub fn clear(&mut self) {
        self.e.fill(0.0);
        self.s.fill(0.0);
        self.d.fill(0.0);
        self.c.fill(0.0);
        self.b.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self += w·other`.
    pub fn add_scaled(&mut self, w: f64, other: &Gradients) -> Result<()> {
        self.e.add_scaled(w, &other.e)?;
        self.s.add_scaled(w, &other.s)?;
        self.d.add_scaled(w, &other.d)?;
        self.c.add_scaled(w, &other.c)?;
        Error::check_dim("gradient b", self.b.len(), other.b.len())?;
        crate::numerics::axpy(w, &other.b, &mut self.b);
        Ok(())
    }

    pub fn scale(&mut self, w: f64) {
        self.e.scale(w);
        self.s.scale(w);
        self.d.scale(w);
        self.c.scale(w);
        self.b.iter_mut().for_each(|v| *v *= w);
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("E", self.e.as_slice()),
            ("S", self.s.as_slice()),
            ("D", self.d.as_slice()),
            ("C", self.c.as_slice()),
            ("b", &self.b),
        ]
    }

    pub fn first_non_finite(&self) -> Option<(&'static str, usize)> {
        self.tensors()
            .into_iter()
            .find_map(|(name, v)| v.iter().position(|x| !x.is_finite()).map(|i| (name, i)))
    }
}

/// Negative log-likelihood of `label` under `softmax(scores)` and its
/// gradient `softmax(scores) − onehot(label)`, with max-shift for stability.
pub fn softmax_nll(scores: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= scores.len() {
        return Err(Error::LabelOutOfRange { label, classes: scores.len() });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let sum: f64 = exps.iter().sum();
    let log_z = max + libm::log(sum);
    let nll = log_z - scores[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((nll, grad.into()))
}

/// Normalized code `z/‖z‖` (zero for a zero code) and its norm.
pub fn normalized_code(z: &[f64]) -> (Vector, f64) {
    let nz = norm2(z);
    if nz == 0.0 {
        (Vector::zeros(z.len()), 0.0)
    } else {
        (z.iter().map(|v| v / nz).collect::<Vec<_>>().into(), nz)
    }
}

/// Classifier scores `C·z/‖z‖`.
pub fn class_scores(c: &Matrix, z: &[f64]) -> Result<Vector> {
    let (u, _) = normalized_code(z);
    c.matvec(&u)
}

/// Unsupervised loss of an arbitrary code `z` against dictionary `d`.
pub fn unsupervised_loss(d: &Matrix, x: &[f64], z: &[f64], lambda: f64) -> Result<LossBreakdown> {
    let recon = d.matvec(z)?;
    Error::check_dim("reconstruction", x.len(), recon.len())?;
    let r: f64 = x.iter().zip(recon.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(LossBreakdown::new(0.5 * r, lambda * norm1(z), 0.0))
}

fn check_label(label: Option<usize>, classes: usize) -> Result<()> {
    match label {
        Some(y) if y >= classes => Err(Error::LabelOutOfRange { label: y, classes }),
        _ => Ok(()),
    }
}

/// Forward pass and loss. Reconstruction and sparsity use `z[T]` only; the
/// classification term is present only when `label` is.
pub fn loss(params: &ModelParams, x: &[f64], label: Option<usize>, hyper: &Hyper) -> Result<(Trajectory, LossBreakdown)> {
    check_label(label, params.classes())?;
    let (traj, _) = encode_full(params, x, hyper.iterations)?;
    let breakdown = loss_of_code(params, x, traj.last(), label, hyper.lambda)?;
    Ok((traj, breakdown))
}

fn loss_of_code(params: &ModelParams, x: &[f64], z: &[f64], label: Option<usize>, lambda: f64) -> Result<LossBreakdown> {
    let mut out = unsupervised_loss(&params.d, x, z, lambda)?;
    if let Some(y) = label {
        let scores = class_scores(&params.c, z)?;
        let (nll, _) = softmax_nll(&scores, y)?;
        out = LossBreakdown::new(out.recon, out.sparsity, nll);
    }
    Ok(out)
}

/// Loss and exact gradient with respect to all five tensors.
pub fn backward(params: &ModelParams, x: &[f64], label: Option<usize>, hyper: &Hyper) -> Result<(LossBreakdown, Gradients)> {
    let mut grads = Gradients::zeros_like(params);
    let l = backward_accumulate(params, x, label, hyper, 1.0, &mut grads)?;
    Ok((l, grads))
}

/// Adds `weight × ∇L` into `grads` and returns the (unweighted) loss.
pub fn backward_accumulate(
    params: &ModelParams,
    x: &[f64],
    label: Option<usize>,
    hyper: &Hyper,
    weight: f64,
    grads: &mut Gradients,
) -> Result<LossBreakdown> {
    check_label(label, params.classes())?;
    let (traj, _) = encode_full(params, x, hyper.iterations)?;
    let z = traj.last();
    let n = params.hidden();
    let m = params.input_dim();

    // Unsupervised terms.
    let recon = params.d.matvec(z)?;
    let residual: Vec<f64> = recon.iter().zip(x).map(|(r, xi)| r - xi).collect();
    let recon_loss = 0.5 * dot(&residual, &residual);
    let sparsity = hyper.lambda * norm1(z);

    let active: Vec<usize> = (0..n).filter(|&j| z[j] > 0.0).collect();
    // ∂D = residual·zᵀ, only active columns are touched.
    for i in 0..m {
        let ri = weight * residual[i];
        if ri != 0.0 {
            let row = grads.d.row_mut(i);
            for &j in &active {
                row[j] += ri * z[j];
            }
        }
    }
    // g = Dᵀ·residual + λ on active units.
    let mut g = vec![0.0; n];
    for &j in &active {
        let mut s = 0.0;
        for i in 0..m {
            s += params.d.get(i, j) * residual[i];
        }
        g[j] = s + hyper.lambda;
    }

    // Supervised term.
    let mut clf = 0.0;
    if let Some(y) = label {
        let (u, nz) = normalized_code(z);
        let scores = params.c.matvec(&u)?;
        let (nll, dscores) = softmax_nll(&scores, y)?;
        clf = nll;
        grads.c.add_outer(weight, &dscores, &u);
        if nz > 0.0 {
            // ∂u = Cᵀ·∂s; ∂z = (∂u − u·(u·∂u)) / ‖z‖.
            let du = params.c.tr_matvec(&dscores)?;
            let proj = dot(&u, &du);
            for &j in &active {
                g[j] += (du[j] - u[j] * proj) / nz;
            }
        }
    }

    // Back through the recurrence.
    let t_max = traj.iterations();
    let mut delta_sum = vec![0.0; n];
    for t in (1..=t_max).rev() {
        let zt = traj.state(t);
        let delta: Vec<f64> = g.iter().zip(zt.iter()).map(|(gi, zi)| if *zi > 0.0 { *gi } else { 0.0 }).collect();
        for (s, d) in delta_sum.iter_mut().zip(&delta) {
            *s += d;
        }
        let prev = traj.state(t - 1);
        if prev.iter().any(|v| *v != 0.0) {
            grads.s.add_outer(weight, &delta, prev);
        }
        if t > 1 {
            g = params.s.tr_matvec(&delta)?.into_inner();
        }
    }
    grads.e.add_outer(weight, &delta_sum, x);
    for (b, d) in grads.b.iter_mut().zip(&delta_sum) {
        *b -= weight * d;
    }

    Ok(LossBreakdown::new(recon_loss, sparsity, clf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use core::f64::consts::LN_2;
    use proptest::prelude::*;

    fn hyper(t: usize, lambda: f64, n: usize, m: usize, l: usize) -> Hyper {
        Hyper { iterations: t, hidden: n, input_dim: m, classes: l, lambda, ..Hyper::default() }
    }

    fn random_params(rng: &mut SeededRng, n: usize, m: usize, l: usize) -> ModelParams {
        ModelParams {
            e: Matrix::from_fn(n, m, |_, _| 0.5 * rng.normal()),
            s: Matrix::from_fn(n, n, |i, j| if i == j { 0.5 } else { 0.2 * rng.normal() }),
            d: Matrix::from_fn(m, n, |_, _| 0.5 * rng.normal()),
            c: Matrix::from_fn(l, n, |_, _| rng.normal()),
            b: (0..n).map(|_| 0.1 * rng.normal()).collect::<Vec<_>>().into(),
        }
    }

    #[test]
    fn softmax_examples() {
        let (l, g) = softmax_nll(&[0.0, 0.0], 0).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        let (l, _) = softmax_nll(&[800.0, 0.0, 0.0], 0).unwrap();
        assert!(l.abs() < 1e-300);
        assert!(matches!(softmax_nll(&[0.0, 1.0], 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn zero_code_loss() {
        let mut p = ModelParams::zeros(3, 4, 2);
        p.b.iter_mut().for_each(|b| *b = 1.0);
        let x = [0.5, 0.5, 0.5, 0.5];
        let (_, l) = loss(&p, &x, Some(1), &hyper(3, 0.7, 3, 4, 2)).unwrap();
        assert!((l.recon - 0.5).abs() < 1e-15);
        assert_eq!(l.sparsity, 0.0);
        // Zero code, zero normalized code: uniform softmax.
        assert!((l.clf - LN_2).abs() < 1e-15);
    }

    #[test]
    fn uniform_classifier_gives_log_l() {
        let mut rng = SeededRng::new(1);
        let mut p = random_params(&mut rng, 6, 5, 10);
        p.c.fill(0.0);
        p.b.iter_mut().for_each(|b| *b = -1.0);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let (traj, l) = loss(&p, &x, Some(3), &hyper(2, 0.1, 6, 5, 10)).unwrap();
        assert!(norm2(traj.last()) > 0.0);
        assert!((l.clf - libm::log(10.0)).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_has_zero_recon() {
        // E = I, S = 0, b = 0, D = I, T = 1 on a non-negative input.
        let n = 4;
        let p = ModelParams {
            e: Matrix::identity(n),
            s: Matrix::zeros(n, n),
            d: Matrix::identity(n),
            c: Matrix::zeros(2, n),
            b: Vector::zeros(n),
        };
        let x = [0.1, 0.0, 0.7, 0.2];
        let (_, l) = loss(&p, &x, None, &hyper(1, 0.0, n, n, 2)).unwrap();
        assert_eq!(l.recon, 0.0);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn dead_network_has_zero_gradients() {
        let mut p = ModelParams::zeros(4, 3, 2);
        p.b.iter_mut().for_each(|b| *b = 0.5);
        p.d = Matrix::from_fn(3, 4, |i, j| (i + j) as f64);
        p.c = Matrix::from_fn(2, 4, |i, j| (i * j) as f64);
        let (_, g) = backward(&p, &[0.3, -0.1, 0.2], Some(1), &hyper(3, 0.2, 4, 3, 2)).unwrap();
        for (name, t) in g.tensors() {
            assert!(t.iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn unsupervised_mode_leaves_c_untouched() {
        let mut rng = SeededRng::new(2);
        let p = random_params(&mut rng, 5, 6, 3);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let h = hyper(3, 0.1, 5, 6, 3);
        let (_, g) = backward(&p, &x, None, &h).unwrap();
        assert!(g.c.as_slice().iter().all(|&v| v == 0.0));
        // dD agrees with the supervised pass exactly: C does not reach D.
        let (_, gs) = backward(&p, &x, Some(1), &h).unwrap();
        assert_eq!(g.d, gs.d);
    }

    #[test]
    fn decomposition_identity() {
        let mut rng = SeededRng::new(3);
        let p = random_params(&mut rng, 5, 6, 3);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (_, l) = loss(&p, &x, Some(2), &hyper(4, 0.3, 5, 6, 3)).unwrap();
        assert_eq!(l.total, l.recon + l.sparsity + l.clf);
        let (l2, _) = backward(&p, &x, Some(2), &hyper(4, 0.3, 5, 6, 3)).unwrap();
        assert!((l.total - l2.total).abs() < 1e-13);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let p = ModelParams::zeros(2, 2, 3);
        assert!(loss(&p, &[1.0, 0.0], Some(3), &hyper(1, 0.0, 2, 2, 3)).is_err());
        assert!(backward(&p, &[1.0, 0.0], Some(5), &hyper(1, 0.0, 2, 2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn softmax_gradient_sums_to_zero(scores in proptest::collection::vec(-50.0f64..50.0, 1..12), pick in 0usize..100) {
            let y = pick % scores.len();
            let (l, g) = softmax_nll(&scores, y).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn classification_is_scale_invariant(seed in 0u64..500, c in 0.05f64..20.0) {
            let mut rng = SeededRng::new(seed);
            let cm = Matrix::from_fn(4, 6, |_, _| rng.normal());
            let z: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
            let cz: Vec<f64> = z.iter().map(|v| v * c).collect();
            let (a, _) = softmax_nll(&class_scores(&cm, &z).unwrap(), 1).unwrap();
            let (b, _) = softmax_nll(&class_scores(&cm, &cz).unwrap(), 1).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
