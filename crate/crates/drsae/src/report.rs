//! CSV and binary report files.

use std::fs;
use std::io;
use std::path::Path;

use drsae_core::analysis::{ConnectionBin, InferredDecoders, ProgressStep, Prototype, UnitStats, UnitTaxonomy};
use drsae_core::numerics::norm2;
use drsae_core::trainer::TrainReport;
use drsae_core::Matrix;

pub type CsvResult = Result<(), csv::Error>;

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt)
}

pub fn write_train_report(path: &Path, report: &TrainReport) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "lr_scale",
        "train_recon",
        "train_sparsity",
        "train_clf",
        "train_total",
        "val_recon",
        "val_sparsity",
        "val_clf",
        "val_total",
        "val_error",
        "improved",
        "best",
    ])?;
    for e in &report.epochs {
        let v = e.val.as_ref();
        w.write_record([
            e.epoch.to_string(),
            fmt(e.lr_scale),
            fmt(e.train.recon),
            fmt(e.train.sparsity),
            fmt(e.train.clf),
            fmt(e.train.total),
            opt(v.map(|l| l.recon)),
            opt(v.map(|l| l.sparsity)),
            opt(v.map(|l| l.clf)),
            opt(v.map(|l| l.total)),
            opt(e.val_error),
            (e.improved as u8).to_string(),
            ((report.best_epoch == Some(e.epoch)) as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Counts `[true][predicted]`.
pub fn confusion(labels: &[usize], predictions: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        m[y][p] += 1;
    }
    m
}

pub fn write_confusion(path: &Path, matrix: &[Vec<usize>]) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["true".to_string()];
    header.extend((0..matrix.len()).map(|k| format!("pred_{k}")));
    w.write_record(&header)?;
    for (y, row) in matrix.iter().enumerate() {
        let mut rec = vec![y.to_string()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_taxonomy(path: &Path, tax: &UnitTaxonomy, deviation: &[f64]) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "unit", "ed_angle", "rec_norm", "clf_norm", "class_of", "kind", "ista_deviation"])?;
    for (rank, i) in tax.categoricalness_order().into_iter().enumerate() {
        let u = &tax.units[i];
        w.write_record([
            rank.to_string(),
            i.to_string(),
            fmt(u.ed_angle),
            fmt(u.rec_norm),
            fmt(u.clf_norm),
            u.class_of.to_string(),
            u.kind.name().to_string(),
            fmt(deviation[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ista_deviation(path: &Path, tax: &UnitTaxonomy, deviation: &[f64]) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "ista_deviation", "ed_angle", "kind"])?;
    for (i, (d, u)) in deviation.iter().zip(&tax.units).enumerate() {
        w.write_record([i.to_string(), fmt(*d), fmt(u.ed_angle), u.kind.name().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_unit_stats(path: &Path, stats: &UnitStats, tax: &UnitTaxonomy) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "p_late", "mean_active", "ever_active", "afferent_angle", "dec_mean", "ed_angle", "kind"])?;
    for (i, (s, u)) in stats.units.iter().zip(&tax.units).enumerate() {
        w.write_record([
            i.to_string(),
            fmt(s.p_late),
            opt(s.mean_active),
            (s.mean_active.is_some() as u8).to_string(),
            opt(s.afferent_angle),
            fmt(s.dec_mean),
            fmt(u.ed_angle),
            u.kind.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One block of bins per named `from->to` unit group.
pub fn write_connection_bins(path: &Path, groups: &[(String, Vec<ConnectionBin>)]) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "bin", "cos_lo", "cos_hi", "count", "mean_weight"])?;
    for (group, bins) in groups {
        for (k, b) in bins.iter().enumerate() {
            w.write_record([group.clone(), k.to_string(), fmt(b.lo), fmt(b.hi), b.count.to_string(), fmt(b.mean)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per step: the unit, its code value, the norm of its contribution,
/// the residual norm after adding it, then the partial reconstruction.
pub fn write_progressive(path: &Path, x: &[f64], z: &[f64], steps: &[ProgressStep]) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["step", "unit", "z", "contribution_norm", "residual_norm"].map(String::from).to_vec();
    header.extend((0..x.len()).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for (k, s) in steps.iter().enumerate() {
        let residual: Vec<f64> = x.iter().zip(s.partial.iter()).map(|(a, b)| a - b).collect();
        let mut rec = vec![k.to_string(), s.unit.to_string(), fmt(z[s.unit]), fmt(norm2(&s.contribution)), fmt(norm2(&residual))];
        rec.extend(s.partial.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prototypes(path: &Path, protos: &[Prototype], c: &Matrix) -> CsvResult {
    use drsae_core::analysis::sharpness;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "count", "average_sharpness", "rank", "unit", "clf_weight", "ed_angle", "decoder_sharpness"])?;
    for p in protos {
        let avg = p.class_average.as_ref().map(|a| sharpness(a));
        for (rank, t) in p.top.iter().enumerate() {
            w.write_record([
                p.class.to_string(),
                p.count.to_string(),
                opt(avg),
                rank.to_string(),
                t.unit.to_string(),
                fmt(c.get(p.class, t.unit)),
                fmt(t.ed_angle),
                fmt(sharpness(&t.decoder)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_inferred_flags(path: &Path, inferred: &[(usize, InferredDecoders)]) -> CsvResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "active_units", "never_active_units", "ridge", "ridge_boosted"])?;
    for (t, inf) in inferred {
        let never = inf.never_active.iter().filter(|&&f| f).count();
        w.write_record([
            t.to_string(),
            (inf.never_active.len() - never).to_string(),
            never.to_string(),
            fmt(inf.ridge),
            (inf.ridge_boosted as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const MATRIX_MAGIC: &[u8; 8] = b"DRSAEMAT";

/// `"DRSAEMAT"`, `u32` rows, `u32` cols, then row-major little-endian `f64`s.
pub fn write_matrix_bin(path: &Path, m: &Matrix) -> io::Result<()> {
    let mut out = Vec::with_capacity(16 + 8 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)
}

pub fn read_matrix_bin(path: &Path) -> io::Result<Matrix> {
    let bytes = fs::read(path)?;
    let bad = |what: &str| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {what}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("not a matrix file"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 16 + 8 * rows * cols {
        return Err(bad("size does not match the header"));
    }
    let data = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| bad(&e.to_string()))
}
