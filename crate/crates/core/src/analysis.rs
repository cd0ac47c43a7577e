//! Post-hoc diagnostics of a trained encoder.
//!
//! Units are sorted into part-units, whose encoder row and decoder column
//! stay nearly parallel as under ISTA, and categorical-units, whose encoder
//! rows rotate away from their decoders and which feed the classifier
//! strongly. Everything here is read-only over the parameters.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::encoder::{encode, ModelParams};
use crate::numerics::{angle, cosine, norm2, ridge_least_squares, Matrix, Ridge, Vector};
use crate::{Error, Result};

/// Angle thresholds (radians) separating part from categorical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub part: f64,
    pub categorical: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { part: 0.5, categorical: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Part,
    Intermediate,
    Categorical,
    /// Zero encoder row or zero decoder column: the unit has no direction.
    Dead,
}

impl UnitKind {
    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Part => "part",
            UnitKind::Intermediate => "intermediate",
            UnitKind::Categorical => "categorical",
            UnitKind::Dead => "dead",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitInfo {
    /// Angle between row `i` of `E` and column `i` of `D`.
    pub ed_angle: f64,
    /// `‖(S − I)ᵢ‖`, row `i`.
    pub rec_norm: f64,
    /// `‖C·eᵢ‖`, column `i`.
    pub clf_norm: f64,
    /// Class receiving the strongest (most positive) projection.
    pub class_of: usize,
    pub kind: UnitKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTaxonomy {
    pub units: Vec<UnitInfo>,
}

impl UnitTaxonomy {
    pub fn ed_angles(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.ed_angle).collect()
    }

    pub fn clf_norms(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.clf_norm).collect()
    }

    pub fn count(&self, kind: UnitKind) -> usize {
        self.units.iter().filter(|u| u.kind == kind).count()
    }

    /// Units of one kind, by index.
    pub fn of_kind(&self, kind: UnitKind) -> Vec<usize> {
        (0..self.units.len()).filter(|&i| self.units[i].kind == kind).collect()
    }

    /// Unit indices by descending `ed_angle`, ties by descending `clf_norm`,
    /// then by index.
    pub fn categoricalness_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.units.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ua, ub) = (&self.units[a], &self.units[b]);
            ub.ed_angle
                .total_cmp(&ua.ed_angle)
                .then(ub.clf_norm.total_cmp(&ua.clf_norm))
                .then(a.cmp(&b))
        });
        idx
    }
}

fn s_minus_i_row(s: &Matrix, i: usize) -> Vec<f64> {
    let mut r = s.row(i).to_vec();
    r[i] -= 1.0;
    r
}

fn argmax_column(c: &Matrix, j: usize) -> usize {
    let mut best = 0;
    for k in 1..c.rows() {
        if c.get(k, j) > c.get(best, j) {
            best = k;
        }
    }
    best
}

pub fn taxonomy(params: &ModelParams, thresholds: Thresholds) -> Result<UnitTaxonomy> {
    params.validate_shapes()?;
    let n = params.hidden();
    let d_norms = params.d.col_norms();
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        let e_row = params.e.row(i);
        let d_col = params.d.column(i);
        let ed_angle = angle(e_row, &d_col)?;
        let dead = norm2(e_row) == 0.0 || d_norms[i] == 0.0;
        let kind = if dead {
            UnitKind::Dead
        } else if ed_angle < thresholds.part {
            UnitKind::Part
        } else if ed_angle > thresholds.categorical {
            UnitKind::Categorical
        } else {
            UnitKind::Intermediate
        };
        units.push(UnitInfo {
            ed_angle,
            rec_norm: norm2(&s_minus_i_row(&params.s, i)),
            clf_norm: norm2(&params.c.column(i)),
            class_of: argmax_column(&params.c, i),
            kind,
        });
    }
    Ok(UnitTaxonomy { units })
}

/// Per unit, the angle between row `i` of `S − I` and row `i` of `−DᵀD`.
/// Zero for every unit when the parameters follow the ISTA construction.
pub fn ista_deviation(params: &ModelParams) -> Result<Vec<f64>> {
    params.validate_shapes()?;
    let mut gram = params.d.tr_matmul(&params.d)?;
    gram.scale(-1.0);
    (0..params.hidden()).map(|i| angle(&s_minus_i_row(&params.s, i), gram.row(i))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferredDecoders {
    /// m×n; column `j` decodes unit `j`.
    pub d: Matrix,
    /// Units that were zero on every sample; their columns are zero.
    pub never_active: Vec<bool>,
    /// The automatic ridge was replaced by a larger one because there were
    /// fewer samples than active units or the system was singular.
    pub ridge_boosted: bool,
    pub ridge: f64,
}

/// Ridge used when the automatic one is not enough, relative to the mean
/// diagonal of the code Gram matrix.
pub const BOOSTED_RIDGE_SCALE: f64 = 1e-4;

/// Least-squares decoder for codes `codes` (k×n) and inputs `inputs` (k×m):
/// `argmin_W ‖inputs − codes·Wᵀ‖²` over the active units.
pub fn decoders_from_codes(codes: &Matrix, inputs: &Matrix) -> Result<InferredDecoders> {
    Error::check_dim("codes vs inputs", codes.rows(), inputs.rows())?;
    let (k, n) = codes.shape();
    let m = inputs.cols();
    let never_active: Vec<bool> = (0..n).map(|j| (0..k).all(|r| codes.get(r, j) == 0.0)).collect();
    let active: Vec<usize> = (0..n).filter(|&j| !never_active[j]).collect();
    let mut d = Matrix::zeros(m, n);
    if active.is_empty() {
        return Ok(InferredDecoders { d, never_active, ridge_boosted: false, ridge: 0.0 });
    }
    let a = Matrix::from_fn(k, active.len(), |r, c| codes.get(r, active[c]));
    let boosted = |a: &Matrix| {
        let gram = a.tr_matmul(a)?;
        let tr: f64 = (0..gram.rows()).map(|i| gram.get(i, i)).sum();
        Ok::<_, Error>(BOOSTED_RIDGE_SCALE * tr / gram.rows() as f64)
    };
    let (w, ridge, ridge_boosted) = if k < active.len() {
        let eps = boosted(&a)?;
        (ridge_least_squares(&a, inputs, Ridge::Fixed(eps))?, eps, true)
    } else {
        match ridge_least_squares(&a, inputs, Ridge::Auto) {
            Ok(w) => (w, Ridge::Auto.resolve(&a.tr_matmul(&a)?), false),
            Err(Error::Singular { .. }) => {
                let eps = boosted(&a)?;
                (ridge_least_squares(&a, inputs, Ridge::Fixed(eps))?, eps, true)
            }
            Err(e) => return Err(e),
        }
    };
    for (c, &j) in active.iter().enumerate() {
        d.set_column(j, w.row(c));
    }
    Ok(InferredDecoders { d, never_active, ridge_boosted, ridge })
}

/// Codes `z[t]` of every row of `inputs`, stacked as rows.
pub fn codes_at(params: &ModelParams, inputs: &Matrix, t: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(inputs.rows(), params.hidden());
    for r in 0..inputs.rows() {
        let traj = encode(params, inputs.row(r), t)?;
        out.row_mut(r).copy_from_slice(traj.last());
    }
    Ok(out)
}

/// The decoder that best reconstructs `inputs` from the codes after `t`
/// iterations (`1 ≤ t`).
pub fn inferred_decoders(params: &ModelParams, inputs: &Matrix, t: usize) -> Result<InferredDecoders> {
    if t == 0 {
        return Err(Error::argument("inferred decoders need t ≥ 1"));
    }
    decoders_from_codes(&codes_at(params, inputs, t)?, inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressStep {
    pub unit: usize,
    /// `D_unit · z[T]_unit`.
    pub contribution: Vector,
    /// Sum of the contributions so far.
    pub partial: Vector,
}

/// Reconstruction of `x` built up one active unit at a time, in decreasing
/// order of contribution norm (ties by unit index).
pub fn progressive_reconstruction(params: &ModelParams, x: &[f64], iterations: usize) -> Result<Vec<ProgressStep>> {
    let traj = encode(params, x, iterations)?;
    let z = traj.last();
    let m = params.input_dim();
    let mut contribs: Vec<(usize, Vector, f64)> = (0..z.len())
        .filter(|&j| z[j] > 0.0)
        .map(|j| {
            let c: Vec<f64> = (0..m).map(|i| params.d.get(i, j) * z[j]).collect();
            let norm = norm2(&c);
            (j, Vector::from(c), norm)
        })
        .collect();
    contribs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut partial = Vector::zeros(m);
    Ok(contribs
        .into_iter()
        .map(|(unit, contribution, _)| {
            for (p, c) in partial.iter_mut().zip(contribution.iter()) {
                *p += c;
            }
            ProgressStep { unit, contribution, partial: partial.clone() }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitStat {
    /// Fraction of samples with `z[1]ᵢ = 0` and `z[2]ᵢ > 0`.
    pub p_late: f64,
    /// Mean of `z[T]ᵢ` over samples where it is positive; `None` if never.
    pub mean_active: Option<f64>,
    /// Mean `ed_angle` of the other units weighted by `|Sᵢⱼ − δᵢⱼ|`;
    /// `None` when the row of `S − I` is zero.
    pub afferent_angle: Option<f64>,
    /// Mean entry of column `i` of `D`.
    pub dec_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitStats {
    pub units: Vec<UnitStat>,
}

pub fn unit_stats(params: &ModelParams, inputs: &Matrix, iterations: usize) -> Result<UnitStats> {
    let k = inputs.rows();
    if k == 0 {
        return Err(Error::argument("unit statistics need at least one sample"));
    }
    let n = params.hidden();
    let mut late = vec![0usize; n];
    let mut active = vec![0usize; n];
    let mut active_sum = vec![0.0; n];
    for r in 0..k {
        let traj = encode(params, inputs.row(r), iterations)?;
        if iterations >= 2 {
            let (z1, z2) = (traj.state(1), traj.state(2));
            for i in 0..n {
                if z1[i] == 0.0 && z2[i] > 0.0 {
                    late[i] += 1;
                }
            }
        }
        for (i, &v) in traj.last().iter().enumerate() {
            if v > 0.0 {
                active[i] += 1;
                active_sum[i] += v;
            }
        }
    }
    let angles = taxonomy(params, Thresholds::default())?.ed_angles();
    let m = params.input_dim() as f64;
    let units = (0..n)
        .map(|i| {
            let w = s_minus_i_row(&params.s, i);
            let total: f64 = w.iter().map(|v| v.abs()).sum();
            let afferent_angle = (total > 0.0)
                .then(|| w.iter().zip(&angles).map(|(v, a)| v.abs() * a).sum::<f64>() / total);
            UnitStat {
                p_late: late[i] as f64 / k as f64,
                mean_active: (active[i] > 0).then(|| active_sum[i] / active[i] as f64),
                afferent_angle,
                dec_mean: params.d.column(i).iter().sum::<f64>() / m,
            }
        })
        .collect();
    Ok(UnitStats { units })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopDecoder {
    pub unit: usize,
    pub decoder: Vector,
    pub ed_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub class: usize,
    pub count: usize,
    /// Mean input of the class; `None` when the class has no samples.
    pub class_average: Option<Vector>,
    pub top: Vec<TopDecoder>,
}

/// Per class, the mean input and the decoders of the `k` units with the
/// largest `|C|` entry for that class (ties to the lowest unit index).
pub fn prototypes(params: &ModelParams, inputs: &Matrix, labels: &[usize], k: usize) -> Result<Vec<Prototype>> {
    Error::check_dim("labels vs inputs", inputs.rows(), labels.len())?;
    let l = params.classes();
    let m = inputs.cols();
    let mut sums = vec![vec![0.0; m]; l];
    let mut counts = vec![0usize; l];
    for (r, &y) in labels.iter().enumerate() {
        if y >= l {
            return Err(Error::LabelOutOfRange { label: y, classes: l });
        }
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(inputs.row(r)) {
            *s += v;
        }
    }
    let angles = taxonomy(params, Thresholds::default())?.ed_angles();
    Ok((0..l)
        .map(|class| {
            let mut units: Vec<usize> = (0..params.hidden()).collect();
            units.sort_by(|&a, &b| params.c.get(class, b).abs().total_cmp(&params.c.get(class, a).abs()).then(a.cmp(&b)));
            let top = units
                .into_iter()
                .take(k)
                .map(|unit| TopDecoder { unit, decoder: params.d.column(unit), ed_angle: angles[unit] })
                .collect();
            let class_average = (counts[class] > 0)
                .then(|| Vector::from(sums[class].iter().map(|s| s / counts[class] as f64).collect::<Vec<_>>()));
            Prototype { class, count: counts[class], class_average, top }
        })
        .collect())
}

/// Mean squared deviation of the entries of `v` from their mean.
pub fn sharpness(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectionBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean recurrent weight in the bin, 0 when empty.
    pub mean: f64,
}

pub const CONNECTION_BINS: usize = 20;

/// Mean `(S − I)ᵢⱼ` from units `j ∈ from` into units `i ∈ to` (`i ≠ j`),
/// binned by the cosine between decoder columns `i` and `j` over
/// `CONNECTION_BINS` equal bins of `[−1, 1]`.
pub fn connection_bins(params: &ModelParams, from: &[usize], to: &[usize]) -> Vec<ConnectionBin> {
    let width = 2.0 / CONNECTION_BINS as f64;
    let mut count = [0usize; CONNECTION_BINS];
    let mut sum = [0.0; CONNECTION_BINS];
    let cols: Vec<Vector> = (0..params.hidden()).map(|j| params.d.column(j)).collect();
    for &i in to {
        for &j in from {
            if i == j {
                continue;
            }
            let c = cosine(&cols[i], &cols[j]);
            let b = (((c + 1.0) / width) as usize).min(CONNECTION_BINS - 1);
            count[b] += 1;
            sum[b] += params.s.get(i, j);
        }
    }
    (0..CONNECTION_BINS)
        .map(|b| ConnectionBin {
            lo: -1.0 + b as f64 * width,
            hi: -1.0 + (b + 1) as f64 * width,
            count: count[b],
            mean: if count[b] == 0 { 0.0 } else { sum[b] / count[b] as f64 },
        })
        .collect()
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / libm::sqrt(va * vb)
    }
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    Error::check_dim("spearman", a.len(), b.len())?;
    if a.len() < 2 {
        return Ok(0.0);
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

/// Fraction of units whose encoder-decoder angle exceeds `threshold`.
pub fn fraction_above(tax: &UnitTaxonomy, threshold: f64) -> f64 {
    if tax.units.is_empty() {
        return 0.0;
    }
    tax.units.iter().filter(|u| u.ed_angle > threshold).count() as f64 / tax.units.len() as f64
}

/// Sentinel angle reported for a zero vector.
pub const DEAD_ANGLE: f64 = FRAC_PI_2;
