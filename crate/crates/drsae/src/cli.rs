//! `drsae pretrain|finetune|eval|analyze|dump`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use drsae_core::analysis::{self, UnitKind};
use drsae_core::ista::default_alpha;
use drsae_core::trainer::{self, GradientEngine, Phase, Sequential, TrainConfig, TrainEvent, TrainReport};
use drsae_core::{Dataset, Error, Hyper, Matrix, ModelParams, Split};
use thiserror::Error as ThisError;

use crate::checkpoint::{Checkpoint, CheckpointError, Header, Stage};
use crate::config::{ConfigError, InitC, RunConfig};
use crate::engine::Threaded;
use crate::idx::{load_raw, split_raw, split_raw_per_class, LoadError};
use crate::{report, svg};

#[derive(Debug, Parser)]
#[command(name = "drsae", version, about = "Discriminative recurrent sparse auto-encoder")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to read.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unsupervised training from the ISTA initialization.
    Pretrain(Common),
    /// Supervised training from a pretrained checkpoint (default `<out>/pretrain.ckpt`).
    Finetune(Common),
    /// Error rate and confusion matrix on `eval_split`.
    Eval(Common),
    /// Unit taxonomy, decoders, prototypes and the other analysis files.
    Analyze(Common),
    /// Human-readable checkpoint summary.
    Dump(Common),
}

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data file for `{key}` not found: {path}")]
    MissingData { key: &'static str, path: String },
    #[error("data: {0}")]
    Load(#[from] LoadError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 0 success, 1 runtime or numerical failure, 2 config or argument
    /// error, 3 data or checkpoint integrity error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingData { .. } => 2,
            CliError::Load(_) | CliError::Checkpoint(_) => 3,
            CliError::Core(Error::Argument(_)) => 2,
            CliError::Core(Error::LabelOutOfRange { .. }) => 3,
            CliError::Core(_) | CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

/// Config, output directory and the optional checkpoint path of one command.
struct Session {
    cfg: RunConfig,
    out: PathBuf,
    checkpoint: Option<PathBuf>,
}

impl Session {
    fn new(common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &common.out {
            cfg.out_dir = out.clone();
        }
        Ok(Session { out: cfg.out_dir.clone(), cfg, checkpoint: common.checkpoint.clone() })
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let path = self.out.join("config.txt");
        fs::write(&path, self.cfg.render()).map_err(io_err(&path))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// The explicit checkpoint, else the first of `defaults` that exists in
    /// the output directory.
    fn checkpoint_path(&self, defaults: &[&str]) -> Result<PathBuf, CliError> {
        if let Some(p) = &self.checkpoint {
            return Ok(p.clone());
        }
        defaults
            .iter()
            .map(|d| self.path(d))
            .find(|p| p.exists())
            .ok_or_else(|| CliError::Usage(format!("no --checkpoint given and none of {defaults:?} exists in {}", self.out.display())))
    }

    fn load_data(&self) -> Result<Dataset, CliError> {
        load_dataset(&self.cfg)
    }

    fn load_checkpoint(&self, path: &Path, hyper: &Hyper) -> Result<Checkpoint, CliError> {
        let ck = Checkpoint::load(path)?;
        ck.header.check_against(hyper)?;
        Ok(ck)
    }
}

/// Loads and splits the data files named in `c`.
pub fn load_dataset(c: &RunConfig) -> Result<Dataset, CliError> {
    for (key, path) in [
        ("train_images", &c.train_images),
        ("train_labels", &c.train_labels),
        ("test_images", &c.test_images),
        ("test_labels", &c.test_labels),
    ] {
        if !path.is_file() {
            return Err(CliError::MissingData { key, path: path.display().to_string() });
        }
    }
    let pool = load_raw(&c.train_images, &c.train_labels, c.classes)?;
    let test = load_raw(&c.test_images, &c.test_labels, c.classes)?;
    if pool.input_dim() != test.input_dim() {
        return Err(CliError::Core(Error::Dimension { context: "test vs train image size", expected: pool.input_dim(), found: test.input_dim() }));
    }
    let data = match (c.train_per_class, c.val_per_class) {
        (None, None) => split_raw(&pool, &test, c.train_count, c.val_count, c.test_count, c.split_seed())?,
        (tk, vk) => split_raw_per_class(
            &pool,
            &test,
            c.train_count,
            c.val_count,
            tk.unwrap_or(usize::MAX),
            vk.unwrap_or(usize::MAX),
            c.test_count,
            c.classes,
            c.split_seed(),
        )?,
    };
    Ok(data)
}

/// Parameters fine-tuning starts from, plus the linear probe of the
/// pretrained code (which also supplies `C` under `finetune_init_c = probe`).
pub fn finetune_start(c: &RunConfig, pretrained: &ModelParams, data: &Dataset) -> Result<(ModelParams, ModelParams, TrainReport), Error> {
    let (probe, rep) = trainer::linear_probe(pretrained, data, &c.probe_config(data.input_dim()))?;
    let mut start = pretrained.clone();
    if c.finetune_init_c == InitC::Probe {
        start.c = probe.c.clone();
    }
    Ok((start, probe, rep))
}

pub fn run(args: Args, out: &mut dyn Write) -> Result<(), CliError> {
    match args.command {
        Command::Pretrain(c) => pretrain(&Session::new(&c)?, out),
        Command::Finetune(c) => finetune(&Session::new(&c)?, out),
        Command::Eval(c) => eval(&Session::new(&c)?, out),
        Command::Analyze(c) => analyze(&Session::new(&c)?, out),
        Command::Dump(c) => dump(&c, out),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) {
    // Progress output is best effort; a closed pipe must not abort training.
    let _ = writeln!(out, "{line}");
}

fn train_phase(cfg: &RunConfig, params: &ModelParams, data: &Dataset, tc: &TrainConfig, out: &mut dyn Write) -> Result<(ModelParams, TrainReport), Error> {
    let phase = tc.phase.name();
    let observer = |e: TrainEvent<'_>| {
        if let TrainEvent::Epoch(r) = e {
            let val = match (r.val_error, &r.val) {
                (Some(err), _) => format!("val_error {err:.4}"),
                (None, Some(v)) => format!("val_loss {:.6}", v.unsupervised()),
                (None, None) => String::new(),
            };
            say(out, format_args!("{phase} epoch {} train_loss {:.6} {val}{}", r.epoch, r.train.total, if r.improved { " *" } else { "" }));
        }
    };
    if cfg.threads > 1 {
        run_engine(params, data, tc, &mut Threaded::new(cfg.threads), observer)
    } else {
        run_engine(params, data, tc, &mut Sequential::default(), observer)
    }
}

fn run_engine<G: GradientEngine>(
    params: &ModelParams,
    data: &Dataset,
    tc: &TrainConfig,
    engine: &mut G,
    observer: impl FnMut(TrainEvent<'_>),
) -> Result<(ModelParams, TrainReport), Error> {
    trainer::train_with(params, data, tc, engine, observer)
}

fn best_epoch(report: &TrainReport) -> u32 {
    report.best_epoch.map_or(0, |e| e as u32)
}

fn pretrain(s: &Session, out: &mut dyn Write) -> Result<(), CliError> {
    let data = s.load_data()?;
    s.prepare_out()?;
    let tc = s.cfg.train_config(Phase::Pretrain, data.input_dim());
    let hyper = &tc.hyper;
    let p0 = trainer::init_params(hyper, &data)?;
    let alpha = match hyper.alpha {
        Some(a) => a,
        None => default_alpha(&p0.d, hyper.e_bound())?,
    };
    let (params, rep) = train_phase(&s.cfg, &p0, &data, &tc, out)?;
    let stage = if rep.epochs.is_empty() { Stage::Init } else { Stage::Pretrain };
    let ck = Checkpoint { header: Header::new(hyper, alpha), params, stage, epoch: best_epoch(&rep) };
    let ck_path = s.path("pretrain.ckpt");
    ck.save(&ck_path)?;
    report::write_train_report(&s.path("pretrain_report.csv"), &rep)?;
    say(out, format_args!("pretrain stopped ({}) after {} epochs, best {:?}; wrote {}", rep.stopped.name(), rep.epochs_run(), rep.best_epoch, ck_path.display()));
    Ok(())
}

fn finetune(s: &Session, out: &mut dyn Write) -> Result<(), CliError> {
    let ck_path = s.checkpoint_path(&["pretrain.ckpt"])?;
    let data = s.load_data()?;
    let tc = s.cfg.train_config(Phase::Finetune, data.input_dim());
    let ck = s.load_checkpoint(&ck_path, &tc.hyper)?;
    s.prepare_out()?;

    let (start, probe, probe_rep) = finetune_start(&s.cfg, &ck.params, &data)?;
    report::write_train_report(&s.path("probe_report.csv"), &probe_rep)?;
    let has_val = data.len(Split::Validation) > 0;
    let probe_val = if has_val { Some(trainer::evaluate(&probe, &data, Split::Validation, &tc.hyper)?.error_rate) } else { None };
    if let Some(e) = probe_val {
        say(out, format_args!("linear probe val_error {e:.4}"));
    }

    let (params, rep) = train_phase(&s.cfg, &start, &data, &tc, out)?;
    let fine_val = if has_val { Some(trainer::evaluate(&params, &data, Split::Validation, &tc.hyper)?.error_rate) } else { None };
    let stage = if rep.epochs.is_empty() { ck.stage } else { Stage::Finetune };
    let done = Checkpoint { header: ck.header.clone(), params, stage, epoch: best_epoch(&rep) };
    let done_path = s.path("finetune.ckpt");
    done.save(&done_path)?;
    report::write_train_report(&s.path("finetune_report.csv"), &rep)?;

    let summary = s.path("finetune_summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["key", "value"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
    w.write_record(["probe_val_error", &opt(probe_val)])?;
    w.write_record(["finetune_val_error", &opt(fine_val)])?;
    w.write_record(["best_epoch", &rep.best_epoch.map_or_else(String::new, |e| e.to_string())])?;
    w.write_record(["epochs_run", &rep.epochs_run().to_string()])?;
    w.write_record(["stopped", rep.stopped.name()])?;
    w.flush().map_err(io_err(&summary))?;
    say(out, format_args!("finetune stopped ({}) after {} epochs, best {:?}; wrote {}", rep.stopped.name(), rep.epochs_run(), rep.best_epoch, done_path.display()));
    Ok(())
}

fn eval(s: &Session, out: &mut dyn Write) -> Result<(), CliError> {
    let ck_path = s.checkpoint_path(&["finetune.ckpt", "pretrain.ckpt"])?;
    let data = s.load_data()?;
    let hyper = s.cfg.hyper(data.input_dim());
    let ck = s.load_checkpoint(&ck_path, &hyper)?;
    s.prepare_out()?;
    let split = s.cfg.eval_split;
    let ev = trainer::evaluate(&ck.params, &data, split, &hyper)?;
    let labels: Vec<usize> = data.range(split).map(|r| data.label(r).expect("evaluate checks labels")).collect();
    let conf = report::confusion(&labels, &ev.predictions, hyper.classes);
    report::write_confusion(&s.path(&format!("confusion_{}.csv", split.name())), &conf)?;
    say(out, format_args!("{} error rate {:.4}", split.name(), ev.error_rate));
    Ok(())
}

/// Records every file an analysis writes so the index can list them.
struct Bundle<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Bundle<'_> {
    fn file(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(&name);
        self.files.push(name);
        p
    }

    fn text(&mut self, name: String, body: &str) -> Result<(), CliError> {
        let p = self.file(name);
        fs::write(&p, body).map_err(io_err(&p))
    }
}

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| (0..m.rows()).map(|i| m.get(i, j)).collect()).collect()
}

fn analyze(s: &Session, out: &mut dyn Write) -> Result<(), CliError> {
    let ck_path = s.checkpoint_path(&["finetune.ckpt", "pretrain.ckpt"])?;
    let data = s.load_data()?;
    let hyper = s.cfg.hyper(data.input_dim());
    let ck = s.load_checkpoint(&ck_path, &hyper)?;
    s.prepare_out()?;
    let p = &ck.params;
    let t_max = hyper.iterations;
    let set = data.split_set(s.cfg.analysis_split);
    if set.is_empty() {
        return Err(CliError::Core(Error::Argument(format!("{} split is empty", s.cfg.analysis_split.name()))));
    }
    let labels = set.labels.clone().unwrap_or_default();
    let mut b = Bundle { dir: &s.out, files: Vec::new() };

    let tax = analysis::taxonomy(p, s.cfg.thresholds())?;
    let dev = analysis::ista_deviation(p)?;
    report::write_taxonomy(&b.file("taxonomy.csv".into()), &tax, &dev)?;
    report::write_ista_deviation(&b.file("ista_deviation.csv".into()), &tax, &dev)?;
    let stats = analysis::unit_stats(p, &set.inputs, t_max)?;
    report::write_unit_stats(&b.file("unit_stats.csv".into()), &stats, &tax)?;

    let part = tax.of_kind(UnitKind::Part);
    let cat = tax.of_kind(UnitKind::Categorical);
    let groups: Vec<(String, Vec<analysis::ConnectionBin>)> = [("part", &part, "part"), ("part", &part, "categorical"), ("categorical", &cat, "part"), ("categorical", &cat, "categorical")]
        .into_iter()
        .map(|(fname, from, tname)| {
            let to = if tname == "part" { &part } else { &cat };
            (format!("{fname}->{tname}"), analysis::connection_bins(p, from, to))
        })
        .collect();
    report::write_connection_bins(&b.file("connection_bins.csv".into()), &groups)?;

    // Codes at every iteration from one pass over the split.
    let (k, n) = (set.len(), p.hidden());
    let mut codes: Vec<Matrix> = (0..t_max).map(|_| Matrix::zeros(k, n)).collect();
    for r in 0..k {
        let traj = drsae_core::encode(p, set.inputs.row(r), t_max)?;
        for (t, c) in codes.iter_mut().enumerate() {
            c.row_mut(r).copy_from_slice(traj.state(t + 1));
        }
    }
    let mut inferred = Vec::with_capacity(t_max);
    for (i, c) in codes.iter().enumerate() {
        let t = i + 1;
        let inf = analysis::decoders_from_codes(c, &set.inputs)?;
        report::write_matrix_bin(&b.file(format!("inferred_decoders_t{t}.bin")), &inf.d).map_err(io_err(&s.out))?;
        let tiles = columns(&inf.d);
        b.text(format!("inferred_decoders_t{t}.svg"), &svg::tile_grid(&tiles, 20, 2, &format!("inferred decoders, iteration {t}")))?;
        inferred.push((t, inf));
    }
    report::write_inferred_flags(&b.file("inferred_decoders.csv".into()), &inferred)?;
    b.text("decoders.svg".into(), &svg::tile_grid(&columns(&p.d), 20, 2, "decoder columns"))?;

    for r in 0..s.cfg.progressive_samples.min(k) {
        let x = set.inputs.row(r);
        let steps = analysis::progressive_reconstruction(p, x, t_max)?;
        let z = drsae_core::encode(p, x, t_max)?;
        report::write_progressive(&b.file(format!("progressive_{r}.csv")), x, z.last(), &steps)?;
        let mut tiles = vec![x.to_vec()];
        tiles.extend(steps.iter().map(|st| st.partial.to_vec()));
        b.text(format!("progressive_{r}.svg"), &svg::tile_grid(&tiles, 10, 3, &format!("progressive reconstruction of sample {r}")))?;
    }

    if !labels.is_empty() {
        let protos = analysis::prototypes(p, &set.inputs, &labels, s.cfg.prototypes_k)?;
        report::write_prototypes(&b.file("prototypes.csv".into()), &protos, &p.c)?;
        let len = p.input_dim();
        let mut tiles = Vec::new();
        for pr in &protos {
            tiles.push(pr.class_average.as_ref().map_or_else(|| vec![0.0; len], |a| a.to_vec()));
            for i in 0..s.cfg.prototypes_k {
                tiles.push(pr.top.get(i).map_or_else(|| vec![0.0; len], |t| t.decoder.to_vec()));
            }
        }
        b.text("prototypes.svg".into(), &svg::tile_grid(&tiles, s.cfg.prototypes_k + 1, 3, "class average, then top decoders"))?;
    }

    let rho = analysis::spearman(&tax.ed_angles(), &tax.clf_norms()).ok();
    let frac = analysis::fraction_above(&tax, s.cfg.categorical_threshold);
    let summary = b.file("summary.csv".into());
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["key", "value"])?;
    w.write_record(["stage", ck.stage.name()])?;
    w.write_record(["split", s.cfg.analysis_split.name()])?;
    w.write_record(["samples", &k.to_string()])?;
    w.write_record(["spearman_ed_angle_clf_norm", &rho.map_or_else(String::new, |v| format!("{v:?}"))])?;
    w.write_record(["fraction_ed_angle_above_categorical", &format!("{frac:?}")])?;
    for kind in [UnitKind::Part, UnitKind::Intermediate, UnitKind::Categorical, UnitKind::Dead] {
        w.write_record([format!("units_{}", kind.name()), tax.count(kind).to_string()])?;
    }
    w.flush().map_err(io_err(&summary))?;

    b.files.push("index.txt".into());
    let index = s.path("index.txt");
    fs::write(&index, b.files.join("\n") + "\n").map_err(io_err(&index))?;
    say(out, format_args!(
        "analyzed {} ({} stage) on {} {} samples: {} part, {} intermediate, {} categorical, {} dead; wrote {} files to {}",
        ck_path.display(),
        ck.stage.name(),
        k,
        s.cfg.analysis_split.name(),
        tax.count(UnitKind::Part),
        tax.count(UnitKind::Intermediate),
        tax.count(UnitKind::Categorical),
        tax.count(UnitKind::Dead),
        b.files.len(),
        s.out.display()
    ));
    Ok(())
}

fn dump(common: &Common, out: &mut dyn Write) -> Result<(), CliError> {
    let path = match &common.checkpoint {
        Some(p) => p.clone(),
        None => Session::new(common)?.checkpoint_path(&["finetune.ckpt", "pretrain.ckpt"])?,
    };
    let ck = Checkpoint::load(&path)?;
    let h = &ck.header;
    let p = &ck.params;
    say(out, format_args!("checkpoint {}", path.display()));
    say(out, format_args!("stage {} (best epoch {})", ck.stage.name(), ck.epoch));
    say(out, format_args!("iterations {} hidden {} input_dim {} classes {}", h.iterations, h.hidden, h.input_dim, h.classes));
    say(out, format_args!("lambda {} alpha {} d_bound {} c_bound {} seed {}", h.lambda, h.alpha, h.d_bound, h.c_bound, h.seed));
    for (name, data) in p.tensors() {
        let (lo, hi, sum_sq) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &v| (lo.min(v), hi.max(v), s + v * v));
        say(out, format_args!("{name}: {} values, min {lo:.6} max {hi:.6} frobenius {:.6}", data.len(), sum_sq.sqrt()));
    }
    let hyper = Hyper {
        iterations: h.iterations,
        hidden: h.hidden,
        input_dim: h.input_dim,
        classes: h.classes,
        lambda: h.lambda,
        d_bound: h.d_bound,
        c_bound: h.c_bound,
        ..Hyper::default()
    };
    let ex = p.constraint_excess(&hyper);
    say(out, format_args!("max norm minus bound (≤ 0 is feasible): D {:.3e} E {:.3e} C {:.3e}", ex.d, ex.e, ex.c));
    Ok(())
}
