//! Data-parallel minibatch gradients.

use std::thread;

use drsae_core::lossgrad::backward_accumulate;
use drsae_core::trainer::{GradientEngine, Sequential};
use drsae_core::{Gradients, Hyper, LossBreakdown, ModelParams, Result};

/// Computes per-sample gradients on `threads` scoped threads, then reduces
/// them in batch order. The result is bit-identical to [`Sequential`].
#[derive(Debug)]
pub struct Threaded {
    threads: usize,
    fallback: Sequential,
}

impl Threaded {
    pub fn new(threads: usize) -> Self {
        Threaded { threads: threads.max(1), fallback: Sequential::default() }
    }
}

impl GradientEngine for Threaded {
    fn minibatch(
        &mut self,
        params: &ModelParams,
        hyper: &Hyper,
        batch: &[(&[f64], Option<usize>)],
        grads: &mut Gradients,
    ) -> Result<LossBreakdown> {
        if self.threads == 1 || batch.len() == 1 {
            return self.fallback.minibatch(params, hyper, batch, grads);
        }
        let chunk = batch.len().div_ceil(self.threads);
        let per_sample: Vec<Result<(LossBreakdown, Gradients)>> = thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|(x, y)| {
                                let mut g = Gradients::zeros_like(params);
                                let l = backward_accumulate(params, x, *y, hyper, 1.0, &mut g)?;
                                Ok((l, g))
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("gradient worker panicked")).collect()
        });
        let w = 1.0 / batch.len() as f64;
        let mut total = LossBreakdown::default();
        for r in per_sample {
            let (l, g) = r?;
            total.accumulate(&l);
            grads.add_scaled(w, &g)?;
        }
        Ok(total)
    }
}
