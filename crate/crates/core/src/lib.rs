//! Discriminative recurrent sparse auto-encoder (DrSAE).
//!
//! An unrolled recurrent rectified-linear encoder
//! `z[t+1] = max(0, E·x + S·z[t] − b)` with `z[0] = 0`, trained first as a
//! sparse auto-encoder on `½‖x − D·z[T]‖² + λ‖z[T]‖₁` and then jointly with a
//! multinomial logistic loss on the normalized code `C·z[T]/‖z[T]‖`.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! core: encoder dynamics, the non-negative ISTA reference, exact
//! backpropagation-through-time, projected SGD with early stopping, and the
//! post-hoc unit analysis. File formats, the MNIST loader and the CLI live in
//! the `drsae` crate.

#![no_std]
// Argument checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod dataset;
pub mod encoder;
mod error;
pub mod ista;
pub mod lossgrad;
pub mod numerics;
pub mod trainer;

pub use dataset::{Dataset, Split};
pub use encoder::{encode, relu, Hyper, ModelParams, Trajectory};
pub use error::{Error, Result};
pub use lossgrad::{backward, loss, softmax_nll, Gradients, LossBreakdown};

pub use numerics::{Matrix, SeededRng, Vector};
