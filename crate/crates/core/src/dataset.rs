//! In-memory datasets: unit-norm inputs, optional labels, and a seeded
//! train/validation split with the test set kept aside untouched.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::numerics::{norm2, Matrix, SeededRng, Vector};
use crate::{Error, Result};

/// Scale `v` to unit ℓ₂ norm. Zero vectors are rejected.
pub fn normalize(v: &[f64]) -> Result<Vector> {
    let n = norm2(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect::<Vec<_>>().into())
}

/// Samples as matrix rows plus optional labels, before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl LabeledSet {
    pub fn new(inputs: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            Error::check_dim("labels vs inputs", inputs.rows(), l.len())?;
        }
        Ok(LabeledSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalizes every row to unit norm; the first all-zero row is reported.
    pub fn normalized(mut self) -> Result<Self> {
        for i in 0..self.inputs.rows() {
            let v = normalize(self.inputs.row(i))
                .map_err(|_| Error::argument(format!("sample {i} is all zeros and cannot be normalized")))?;
            self.inputs.row_mut(i).copy_from_slice(&v);
        }
        Ok(self)
    }

    /// Rows in `idx` order.
    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        let m = self.inputs.cols();
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            data.extend_from_slice(self.inputs.row(i));
        }
        LabeledSet {
            inputs: Matrix::from_vec(idx.len(), m, data).expect("sized above"),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// The first `k` samples of every class, in original order. Requires labels.
    pub fn first_k_per_class(&self, k: usize, classes: usize) -> Result<LabeledSet> {
        let labels = self.labels.as_ref().ok_or_else(|| Error::argument("per-class subsetting needs labels"))?;
        let mut taken = alloc::vec![0usize; classes];
        let mut idx = Vec::new();
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            if taken[y] < k {
                taken[y] += 1;
                idx.push(i);
            }
        }
        Ok(self.select(&idx))
    }
}

/// Pool indices of the training then validation samples: the first
/// `train_count + val_count` entries of a seeded shuffle of `0..pool_len`.
pub fn split_order(pool_len: usize, train_count: usize, val_count: usize, seed: u64) -> Result<Vec<usize>> {
    if train_count + val_count > pool_len {
        return Err(Error::argument(format!(
            "train_count + val_count = {} exceeds the {pool_len} available samples",
            train_count + val_count
        )));
    }
    let mut order: Vec<usize> = (0..pool_len).collect();
    SeededRng::new(seed).shuffle(&mut order);
    order.truncate(train_count + val_count);
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Unit-norm samples stored train, then validation, then test.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Option<Vec<usize>>,
    counts: SplitCounts,
}

impl Dataset {
    /// Seeded shuffle of `pool`, then the first `train_count` samples become the
    /// training split and the next `val_count` the validation split. `test` is
    /// appended unchanged. Both sets must already be normalized.
    pub fn split(pool: &LabeledSet, test: &LabeledSet, train_count: usize, val_count: usize, seed: u64) -> Result<Self> {
        if !test.is_empty() {
            Error::check_dim("test input dimension", pool.inputs.cols(), test.inputs.cols())?;
        }
        if pool.labels.is_some() != test.labels.is_some() && !test.is_empty() {
            return Err(Error::argument("either both or neither of pool and test may carry labels"));
        }
        let order = split_order(pool.len(), train_count, val_count, seed)?;
        Self::assemble(pool.select(&order), test, train_count, val_count)
    }

    /// Concatenates `head` (training rows then validation rows) and `test`.
    pub fn assemble(head: LabeledSet, test: &LabeledSet, train_count: usize, val_count: usize) -> Result<Self> {
        Error::check_dim("train_count + val_count", head.len(), train_count + val_count)?;
        if !test.is_empty() {
            Error::check_dim("test input dimension", head.inputs.cols(), test.inputs.cols())?;
        }
        let m = head.inputs.cols();
        let mut data = head.inputs.into_vec();
        data.extend_from_slice(test.inputs.as_slice());
        let rows = train_count + val_count + test.len();
        let labels = match (head.labels, &test.labels) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (Some(a), None) if test.is_empty() => Some(a),
            _ => None,
        };
        Dataset::from_parts(
            Matrix::from_vec(rows, m, data)?,
            labels,
            SplitCounts { train: train_count, val: val_count, test: test.len() },
        )
    }

    /// Assembles a dataset from rows already ordered train, val, test.
    pub fn from_parts(inputs: Matrix, labels: Option<Vec<usize>>, counts: SplitCounts) -> Result<Self> {
        Error::check_dim("split counts", inputs.rows(), counts.train + counts.val + counts.test)?;
        if let Some(l) = &labels {
            Error::check_dim("labels vs inputs", inputs.rows(), l.len())?;
        }
        Ok(Dataset { inputs, labels, counts })
    }

    pub fn counts(&self) -> SplitCounts {
        self.counts
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        let SplitCounts { train, val, test } = self.counts;
        match split {
            Split::Train => 0..train,
            Split::Validation => train..train + val,
            Split::Test => train + val..train + val + test,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        self.range(split).len()
    }

    /// Sample by global row index.
    pub fn input(&self, row: usize) -> &[f64] {
        self.inputs.row(row)
    }

    pub fn label(&self, row: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[row])
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    /// Copy of one split as a standalone set.
    pub fn split_set(&self, split: Split) -> LabeledSet {
        let idx: Vec<usize> = self.range(split).collect();
        LabeledSet {
            inputs: Matrix::from_vec(idx.len(), self.inputs.cols(), idx.iter().flat_map(|&i| self.inputs.row(i).iter().copied()).collect())
                .expect("sized from range"),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}
