//! Two-phase projected SGD.
//!
//! Pretraining minimizes the unsupervised loss; fine-tuning minimizes the
//! unsupervised plus classification loss starting from the pretrained
//! parameters. Every step is followed by projections onto the norm balls
//! (`E` rows ≤ 1.25/T, `D` columns ≤ 1, `C` rows ≤ 5). The learning rate of
//! each tensor is divided by the number of times it is applied in the
//! unrolled network, and that of `C` by a further constant factor.

use alloc::format;
use alloc::vec::Vec;

use crate::dataset::{Dataset, Split};
use crate::encoder::{encode, Hyper, ModelParams};
use crate::ista::{default_alpha, ista_params};
use crate::lossgrad::{backward_accumulate, loss, normalized_code, softmax_nll, Gradients, LossBreakdown};
use crate::numerics::{project_cols_in_place, project_rows_in_place, Matrix, SeededRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorId {
    E,
    S,
    D,
    C,
    B,
}

impl TensorId {
    pub const ALL: [TensorId; 5] = [TensorId::E, TensorId::S, TensorId::D, TensorId::C, TensorId::B];

    /// How many times the tensor is applied in one forward pass. `S` acts on
    /// `z[1] … z[T−1]` only, since `z[0] = 0`; it is clamped to 1 for `T = 1`.
    pub fn repetitions(self, iterations: usize) -> usize {
        match self {
            TensorId::E | TensorId::B => iterations,
            TensorId::S => iterations.saturating_sub(1).max(1),
            TensorId::D | TensorId::C => 1,
        }
    }
}

/// Base learning rate of one tensor, before per-epoch decay.
pub fn lr_for(tensor: TensorId, hyper: &Hyper) -> f64 {
    let lr = hyper.lr_base / tensor.repetitions(hyper.iterations) as f64;
    if tensor == TensorId::C {
        lr / hyper.clf_lr_divisor
    } else {
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs_max: usize,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub lr_decay: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub minibatch: usize,
    pub hyper: Hyper,
    /// Drives minibatch shuffling.
    pub rng_seed: u64,
}

impl TrainConfig {
    pub fn new(phase: Phase, hyper: Hyper) -> Self {
        TrainConfig {
            phase,
            epochs_max: 50,
            lr_decay: 0.97,
            patience: 5,
            minibatch: 1,
            rng_seed: hyper.seed,
            hyper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.patience == 0 {
            return Err(Error::argument("patience must be ≥ 1"));
        }
        if self.minibatch == 0 {
            return Err(Error::argument("minibatch must be ≥ 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::argument(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: usize,
    pub lr_scale: f64,
    /// Mean training loss over the epoch, measured before each update.
    pub train: LossBreakdown,
    /// Mean validation loss after the epoch; `None` without a validation split.
    pub val: Option<LossBreakdown>,
    pub val_error: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `epochs_max` was zero.
    NoEpochs,
    EpochsMax,
    Patience,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::NoEpochs => "no_epochs",
            StopReason::EpochsMax => "epochs_max",
            StopReason::Patience => "patience",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub phase: Phase,
    pub epochs: Vec<EpochRecord>,
    pub stopped: StopReason,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

/// Progress notifications from [`train_with`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { epoch: usize, step: usize, params: &'a ModelParams },
    Epoch(&'a EpochRecord),
}

/// Computes the mean gradient of a minibatch.
pub trait GradientEngine {
    /// Writes `(1/B)·Σᵢ ∇Lᵢ` into `grads` (which arrives zeroed) and returns the
    /// summed loss. Per-sample gradients must be added in batch order.
    fn minibatch(
        &mut self,
        params: &ModelParams,
        hyper: &Hyper,
        batch: &[(&[f64], Option<usize>)],
        grads: &mut Gradients,
    ) -> Result<LossBreakdown>;
}

/// Single-threaded engine.
#[derive(Debug, Default)]
pub struct Sequential {
    scratch: Option<Gradients>,
}

impl GradientEngine for Sequential {
    fn minibatch(
        &mut self,
        params: &ModelParams,
        hyper: &Hyper,
        batch: &[(&[f64], Option<usize>)],
        grads: &mut Gradients,
    ) -> Result<LossBreakdown> {
        let mut total = LossBreakdown::default();
        if let [(x, y)] = batch {
            // 0 + 1·g is exact, so this matches the general path bit for bit.
            total = backward_accumulate(params, x, *y, hyper, 1.0, grads)?;
            return Ok(total);
        }
        let w = 1.0 / batch.len() as f64;
        let scratch = self.scratch.get_or_insert_with(|| Gradients::zeros_like(params));
        for (x, y) in batch {
            scratch.clear();
            total.accumulate(&backward_accumulate(params, x, *y, hyper, 1.0, scratch)?);
            grads.add_scaled(w, scratch)?;
        }
        Ok(total)
    }
}

/// One projected SGD step with per-tensor learning rates scaled by `lr_scale`.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, hyper: &Hyper, lr_scale: f64) -> Result<()> {
    if let Some((tensor, index)) = grads.first_non_finite() {
        return Err(Error::NonFinite { tensor, index });
    }
    let lr = |t| -lr_scale * lr_for(t, hyper);
    params.e.add_scaled(lr(TensorId::E), &grads.e)?;
    params.s.add_scaled(lr(TensorId::S), &grads.s)?;
    params.d.add_scaled(lr(TensorId::D), &grads.d)?;
    params.c.add_scaled(lr(TensorId::C), &grads.c)?;
    Error::check_dim("bias gradient", params.b.len(), grads.b.len())?;
    crate::numerics::axpy(lr(TensorId::B), &grads.b, &mut params.b);
    project(params, hyper)
}

/// Projects `params` onto the feasible set.
pub fn project(params: &mut ModelParams, hyper: &Hyper) -> Result<()> {
    project_rows_in_place(&mut params.e, hyper.e_bound())?;
    project_cols_in_place(&mut params.d, hyper.d_bound)?;
    project_rows_in_place(&mut params.c, hyper.c_bound)?;
    Ok(())
}

/// Initial parameters: `D` columns are distinct training inputs drawn with
/// the hyper seed (unit-norm Gaussian columns when there are fewer training
/// samples than units), `E`, `S`, `b` follow the ISTA construction, and `E`
/// is projected onto its row bound. `C = 0`.
pub fn init_params(hyper: &Hyper, data: &Dataset) -> Result<ModelParams> {
    hyper.validate()?;
    Error::check_dim("dataset input dimension", hyper.input_dim, data.input_dim())?;
    let n = hyper.hidden;
    let m = hyper.input_dim;
    let mut rng = SeededRng::new(hyper.seed);
    let train = data.range(Split::Train);
    let mut d = Matrix::zeros(m, n);
    if train.len() >= n {
        let mut rows: Vec<usize> = train.collect();
        rng.shuffle(&mut rows);
        for (j, &r) in rows.iter().take(n).enumerate() {
            d.set_column(j, data.input(r));
        }
        project_cols_in_place(&mut d, hyper.d_bound)?;
    } else {
        for j in 0..n {
            let col: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
            let norm = crate::numerics::norm2(&col);
            let col: Vec<f64> = col.iter().map(|v| hyper.d_bound * v / norm).collect();
            d.set_column(j, &col);
        }
    }
    let alpha = match hyper.alpha {
        Some(a) => a,
        None => default_alpha(&d, hyper.e_bound())?,
    };
    let mut params = ista_params(&d, hyper.lambda, alpha, hyper.classes)?;
    project(&mut params, hyper)?;
    Ok(params)
}

/// `argmax C·z[T]/‖z[T]‖`, ties to the lowest class index.
pub fn predict(params: &ModelParams, x: &[f64], iterations: usize) -> Result<usize> {
    let traj = encode(params, x, iterations)?;
    let (u, _) = normalized_code(traj.last());
    Ok(argmax(&params.c.matvec(&u)?))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    pub mean_loss: LossBreakdown,
    /// Predicted class per sample, in split order.
    pub predictions: Vec<usize>,
}

/// Classification error and mean loss (including the classification term)
/// over one split.
pub fn evaluate(params: &ModelParams, data: &Dataset, split: Split, hyper: &Hyper) -> Result<Evaluation> {
    let range = data.range(split);
    if range.is_empty() {
        return Err(Error::argument(format!("{} split is empty", split.name())));
    }
    if !data.has_labels() {
        return Err(Error::argument("evaluation needs labels"));
    }
    let count = range.len();
    let mut wrong = 0usize;
    let mut sum = LossBreakdown::default();
    let mut predictions = Vec::with_capacity(count);
    for r in range {
        let y = data.label(r);
        let (traj, l) = loss(params, data.input(r), y, hyper)?;
        let (u, _) = normalized_code(traj.last());
        let pred = argmax(&params.c.matvec(&u)?);
        if Some(pred) != y {
            wrong += 1;
        }
        predictions.push(pred);
        sum.accumulate(&l);
    }
    Ok(Evaluation {
        error_rate: wrong as f64 / count as f64,
        mean_loss: sum.scaled(1.0 / count as f64),
        predictions,
    })
}

/// Mean unsupervised loss over one split (no labels needed).
pub fn mean_unsupervised_loss(params: &ModelParams, data: &Dataset, split: Split, hyper: &Hyper) -> Result<LossBreakdown> {
    let range = data.range(split);
    if range.is_empty() {
        return Err(Error::argument(format!("{} split is empty", split.name())));
    }
    let count = range.len();
    let mut sum = LossBreakdown::default();
    for r in range {
        sum.accumulate(&loss(params, data.input(r), None, hyper)?.1);
    }
    Ok(sum.scaled(1.0 / count as f64))
}

pub fn train(params0: &ModelParams, data: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    train_with(params0, data, config, &mut Sequential::default(), |_| {})
}

/// Validation criterion, compared lexicographically (smaller is better).
fn criterion(phase: Phase, val: &LossBreakdown, val_error: Option<f64>) -> (f64, f64) {
    match phase {
        Phase::Pretrain => (val.unsupervised(), 0.0),
        Phase::Finetune => (val_error.unwrap_or(f64::INFINITY), val.total),
    }
}

/// The training loop. Returns the parameters of the best validation epoch
/// (the last epoch when there is no validation split).
pub fn train_with<G: GradientEngine>(
    params0: &ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    engine: &mut G,
    mut observer: impl FnMut(TrainEvent<'_>),
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let hyper = &config.hyper;
    params0.check_against(hyper)?;
    let mut report = TrainReport { phase: config.phase, epochs: Vec::new(), stopped: StopReason::NoEpochs, best_epoch: None };
    if config.epochs_max == 0 {
        return Ok((params0.clone(), report));
    }
    let train_range = data.range(Split::Train);
    if train_range.is_empty() {
        return Err(Error::argument("training split is empty"));
    }
    let supervised = config.phase == Phase::Finetune;
    if supervised && !data.has_labels() {
        return Err(Error::argument("fine-tuning needs labels"));
    }
    let has_val = data.len(Split::Validation) > 0;

    let mut rng = SeededRng::new(config.rng_seed);
    let mut order: Vec<usize> = train_range.collect();
    let mut params = params0.clone();
    let mut grads = Gradients::zeros_like(&params);
    let mut best: Option<((f64, f64), ModelParams)> = None;
    let mut stale = 0usize;
    let mut lr_scale = 1.0;
    let mut step = 0usize;
    report.stopped = StopReason::EpochsMax;

    for epoch in 0..config.epochs_max {
        rng.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(config.minibatch) {
            let batch: Vec<(&[f64], Option<usize>)> = chunk
                .iter()
                .map(|&r| (data.input(r), if supervised { data.label(r) } else { None }))
                .collect();
            grads.clear();
            sum.accumulate(&engine.minibatch(&params, hyper, &batch, &mut grads)?);
            sgd_step(&mut params, &grads, hyper, lr_scale)?;
            #[cfg(debug_assertions)]
            params.check_constraints(hyper)?;
            observer(TrainEvent::Step { epoch, step, params: &params });
            step += 1;
        }
        params.check_constraints(hyper)?;
        let train_mean = sum.scaled(1.0 / order.len() as f64);

        let (val, val_error) = if has_val {
            if supervised {
                let ev = evaluate(&params, data, Split::Validation, hyper)?;
                (Some(ev.mean_loss), Some(ev.error_rate))
            } else {
                (Some(mean_unsupervised_loss(&params, data, Split::Validation, hyper)?), None)
            }
        } else {
            (None, None)
        };

        let improved = match &val {
            Some(v) => {
                let c = criterion(config.phase, v, val_error);
                let better = best.as_ref().is_none_or(|(b, _)| c < *b);
                if better {
                    best = Some((c, params.clone()));
                    report.best_epoch = Some(epoch);
                    stale = 0;
                } else {
                    stale += 1;
                }
                better
            }
            None => {
                report.best_epoch = Some(epoch);
                true
            }
        };
        let record = EpochRecord { epoch, lr_scale, train: train_mean, val, val_error, improved };
        observer(TrainEvent::Epoch(&record));
        report.epochs.push(record);
        lr_scale *= config.lr_decay;
        if has_val && stale >= config.patience {
            report.stopped = StopReason::Patience;
            break;
        }
    }

    let out = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((out, report))
}

/// Trains only `C` on the normalized codes of frozen encoder parameters: a
/// linear probe of the pretrained representation. Uses the same learning
/// rate, decay, projection and early-stopping rules as fine-tuning.
pub fn linear_probe(params0: &ModelParams, data: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let hyper = &config.hyper;
    params0.check_against(hyper)?;
    if !data.has_labels() {
        return Err(Error::argument("a linear probe needs labels"));
    }
    let codes = |split: Split| -> Result<Vec<(Vec<f64>, usize)>> {
        data.range(split)
            .map(|r| {
                let traj = encode(params0, data.input(r), hyper.iterations)?;
                let (u, _) = normalized_code(traj.last());
                Ok((u.into_inner(), data.label(r).expect("checked above")))
            })
            .collect()
    };
    let train_codes = codes(Split::Train)?;
    let val_codes = codes(Split::Validation)?;
    if train_codes.is_empty() {
        return Err(Error::argument("training split is empty"));
    }

    let lr_c = lr_for(TensorId::C, hyper);
    let mut params = params0.clone();
    let mut rng = SeededRng::new(config.rng_seed);
    let mut order: Vec<usize> = (0..train_codes.len()).collect();
    let mut report = TrainReport { phase: Phase::Finetune, epochs: Vec::new(), stopped: StopReason::EpochsMax, best_epoch: None };
    if config.epochs_max == 0 {
        report.stopped = StopReason::NoEpochs;
        return Ok((params, report));
    }
    let mut best: Option<((f64, f64), Matrix)> = None;
    let mut stale = 0;
    let mut lr_scale = 1.0;
    let score = |c: &Matrix, set: &[(Vec<f64>, usize)]| -> Result<(f64, f64)> {
        let mut wrong = 0usize;
        let mut nll = 0.0;
        for (u, y) in set {
            let s = c.matvec(u)?;
            if argmax(&s) != *y {
                wrong += 1;
            }
            nll += softmax_nll(&s, *y)?.0;
        }
        Ok((wrong as f64 / set.len() as f64, nll / set.len() as f64))
    };
    for epoch in 0..config.epochs_max {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for &i in &order {
            let (u, y) = &train_codes[i];
            let (l, ds) = softmax_nll(&params.c.matvec(u)?, *y)?;
            sum += l;
            params.c.add_outer(-lr_scale * lr_c, &ds, u);
            project_rows_in_place(&mut params.c, hyper.c_bound)?;
        }
        let train = LossBreakdown::new(0.0, 0.0, sum / order.len() as f64);
        let (val, val_error, improved) = if val_codes.is_empty() {
            report.best_epoch = Some(epoch);
            (None, None, true)
        } else {
            let (err, nll) = score(&params.c, &val_codes)?;
            let better = best.as_ref().is_none_or(|(b, _)| (err, nll) < *b);
            if better {
                best = Some(((err, nll), params.c.clone()));
                report.best_epoch = Some(epoch);
                stale = 0;
            } else {
                stale += 1;
            }
            (Some(LossBreakdown::new(0.0, 0.0, nll)), Some(err), better)
        };
        report.epochs.push(EpochRecord { epoch, lr_scale, train, val, val_error, improved });
        lr_scale *= config.lr_decay;
        if !val_codes.is_empty() && stale >= config.patience {
            report.stopped = StopReason::Patience;
            break;
        }
    }
    if let Some((_, c)) = best {
        params.c = c;
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabeledSet, SplitCounts};
    use crate::ista::{ista_solve, IstaProblem};
    use crate::lossgrad::backward;

    fn small_hyper(t: usize) -> Hyper {
        Hyper { iterations: t, hidden: 6, input_dim: 5, classes: 3, lambda: 0.1, lr_base: 0.05, ..Hyper::default() }
    }

    fn toy_data(rows: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed);
        let inputs = Matrix::from_fn(rows, 5, |_, _| rng.uniform() + 0.01);
        let labels = (0..rows).map(|i| i % 3).collect();
        let set = LabeledSet::new(inputs, Some(labels)).unwrap().normalized().unwrap();
        let val = rows / 4;
        Dataset::from_parts(set.inputs, set.labels, SplitCounts { train: rows - val, val, test: 0 }).unwrap()
    }

    #[test]
    fn learning_rate_scaling() {
        let h = Hyper { lr_base: 1.0, iterations: 11, ..Hyper::default() };
        assert!((lr_for(TensorId::E, &h) - 1.0 / 11.0).abs() < 1e-15);
        assert!((lr_for(TensorId::B, &h) - 1.0 / 11.0).abs() < 1e-15);
        assert!((lr_for(TensorId::S, &h) - 0.1).abs() < 1e-15);
        assert_eq!(lr_for(TensorId::D, &h), 1.0);
        assert!((lr_for(TensorId::C, &h) - 0.2).abs() < 1e-15);
        let h1 = Hyper { iterations: 1, ..h };
        for t in [TensorId::E, TensorId::S, TensorId::D, TensorId::B] {
            assert_eq!(lr_for(t, &h1), 1.0);
        }
    }

    #[test]
    fn zero_gradient_step_is_projection_only() {
        let data = toy_data(20, 1);
        let h = small_hyper(3);
        let p = init_params(&h, &data).unwrap();
        let mut q = p.clone();
        sgd_step(&mut q, &Gradients::zeros_like(&p), &h, 1.0).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn step_renormalizes_a_pushed_column() {
        let data = toy_data(20, 2);
        let h = small_hyper(3);
        let mut p = init_params(&h, &data).unwrap();
        let mut g = Gradients::zeros_like(&p);
        // Gradient −D₀/lr doubles column 0.
        let lr = lr_for(TensorId::D, &h);
        for i in 0..5 {
            g.d.set(i, 0, -p.d.get(i, 0) / lr);
        }
        let before = p.d.column(0);
        sgd_step(&mut p, &g, &h, 1.0).unwrap();
        assert!((p.d.col_norm(0) - 1.0).abs() < 1e-12);
        for i in 0..5 {
            assert!((p.d.get(i, 0) - before[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let data = toy_data(20, 3);
        let h = small_hyper(2);
        let mut p = init_params(&h, &data).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.s.set(1, 1, f64::NAN);
        assert!(matches!(sgd_step(&mut p, &g, &h, 1.0), Err(Error::NonFinite { tensor: "S", .. })));
    }

    #[test]
    fn small_step_decreases_sample_loss() {
        let data = toy_data(20, 4);
        let h = Hyper { lr_base: 1e-3, ..small_hyper(3) };
        let mut rng = SeededRng::new(5);
        let mut p = init_params(&h, &data).unwrap();
        p.c = Matrix::from_fn(3, 6, |_, _| 0.5 * rng.normal());
        project(&mut p, &h).unwrap();
        let mut decreased = 0;
        for r in 0..10 {
            let x = data.input(r);
            let y = data.label(r);
            let (before, g) = backward(&p, x, y, &h).unwrap();
            let mut q = p.clone();
            sgd_step(&mut q, &g, &h, 1.0).unwrap();
            let (_, after) = loss(&q, x, y, &h).unwrap();
            if after.total < before.total {
                decreased += 1;
            }
        }
        assert!(decreased >= 9, "{decreased}/10");
    }

    #[test]
    fn init_reproduces_ista_and_is_deterministic() {
        let data = toy_data(40, 6);
        let h = Hyper { alpha: Some(0.05), ..small_hyper(4) };
        let p = init_params(&h, &data).unwrap();
        assert_eq!(p, init_params(&h, &data).unwrap());
        p.check_constraints(&h).unwrap();
        assert!(p.c.as_slice().iter().all(|&v| v == 0.0));
        let prob = IstaProblem { d: p.d.clone(), lambda: h.lambda, alpha: 0.05, nonneg: true };
        for r in 0..5 {
            let a = encode(&p, data.input(r), 4).unwrap();
            let b = ista_solve(&prob, data.input(r), 4).unwrap();
            for (u, v) in a.states.iter().zip(&b.states) {
                for (x, y) in u.iter().zip(v.iter()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn init_falls_back_to_gaussian_columns() {
        let data = toy_data(4, 7);
        let h = small_hyper(2);
        let p = init_params(&h, &data).unwrap();
        for n in p.d.col_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_epochs_returns_input() {
        let data = toy_data(20, 8);
        let h = small_hyper(3);
        let p = init_params(&h, &data).unwrap();
        let cfg = TrainConfig { epochs_max: 0, ..TrainConfig::new(Phase::Pretrain, h) };
        let (q, report) = train(&p, &data, &cfg).unwrap();
        assert_eq!(p, q);
        assert!(report.epochs.is_empty());
        assert_eq!(report.stopped, StopReason::NoEpochs);
    }

    #[test]
    fn single_repeated_vector_overfits() {
        let x = [0.5, 0.1, 0.3, 0.7, 0.2];
        let rows = 8;
        let inputs = Matrix::from_fn(rows, 5, |_, j| x[j]);
        let set = LabeledSet::new(inputs, None).unwrap().normalized().unwrap();
        let data = Dataset::from_parts(set.inputs, None, SplitCounts { train: rows, val: 0, test: 0 }).unwrap();
        let h = Hyper { hidden: 3, lambda: 0.1, lr_base: 0.1, seed: 3, ..small_hyper(5) };
        let p = init_params(&h, &data).unwrap();
        let cfg = TrainConfig { epochs_max: 60, lr_decay: 1.0, ..TrainConfig::new(Phase::Pretrain, h.clone()) };
        let (q, report) = train(&p, &data, &cfg).unwrap();
        let last = report.epochs.last().unwrap().train.unsupervised();
        let (_, l) = loss(&q, data.input(0), None, &h).unwrap();
        assert!(last < 0.5 && l.total < 0.5, "{last} {}", l.total);
        // Close to the best a single code can do: λ‖z‖₁ dominates the floor.
        assert!(l.recon < 0.05, "{l:?}");
    }

    #[test]
    fn training_is_deterministic_and_feasible() {
        let data = toy_data(40, 9);
        let h = small_hyper(3);
        let p = init_params(&h, &data).unwrap();
        let cfg = TrainConfig { epochs_max: 4, minibatch: 3, ..TrainConfig::new(Phase::Finetune, h.clone()) };
        let mut steps = 0;
        let (a, ra) = train_with(&p, &data, &cfg, &mut Sequential::default(), |ev| {
            if let TrainEvent::Step { params, .. } = ev {
                params.check_constraints(&h).unwrap();
                steps += 1;
            }
        })
        .unwrap();
        assert_eq!(steps, ra.epochs_run() * 10);
        let (b, rb) = train(&p, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let best = ra.best_epoch.unwrap();
        let crit = |e: &EpochRecord| (e.val_error.unwrap(), e.val.unwrap().total);
        for e in &ra.epochs {
            assert!(crit(&ra.epochs[best]) <= crit(e));
        }
    }

    #[test]
    fn finetune_requires_labels() {
        let set = LabeledSet::new(Matrix::from_fn(10, 5, |i, j| (i + j + 1) as f64), None).unwrap().normalized().unwrap();
        let data = Dataset::from_parts(set.inputs, None, SplitCounts { train: 10, val: 0, test: 0 }).unwrap();
        let h = small_hyper(2);
        let p = init_params(&h, &data).unwrap();
        let cfg = TrainConfig { epochs_max: 1, ..TrainConfig::new(Phase::Finetune, h) };
        assert!(train(&p, &data, &cfg).is_err());
    }

    #[test]
    fn zero_classifier_predicts_class_zero() {
        let data = toy_data(20, 10);
        let h = small_hyper(2);
        let p = init_params(&h, &data).unwrap();
        let ev = evaluate(&p, &data, Split::Train, &h).unwrap();
        let zeros = data.range(Split::Train).filter(|&r| data.label(r) == Some(0)).count();
        let n = data.len(Split::Train) as f64;
        assert!((ev.error_rate - (1.0 - zeros as f64 / n)).abs() < 1e-15);
        assert!(ev.predictions.iter().all(|&p| p == 0));
        assert!(evaluate(&p, &data, Split::Test, &h).is_err());
    }
}
