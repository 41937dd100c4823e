//! The `wbcnet` command line: argument parsing plus the `cmd_*` entry points
//! it dispatches to. The entry points are plain functions so they can be
//! driven directly from tests.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    load_image, resize, rotate, rotated_path, save_image, write_manifest, Dataset, Rotation, Split, SplitRatios,
    INPUT_SIDE,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion, render_csv, render_text, report, ConfusionMatrix, EvalReport, Reference};
use crate::model::{
    evaluate, load_checkpoint, save_checkpoint, train, write_epochs_csv, BestCriterion, EpochRecord, TrainConfig,
    WbcNet,
};
use crate::optim::AdamConfig;
use crate::par;
use crate::real::Real;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub const CHECKPOINT_FILE: &str = "best.wbcn";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const MANIFEST_FILE: &str = "split_manifest.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const REPORT_FILE: &str = "report.csv";

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::InvalidParameter(_) | Error::UnsupportedAngle(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::Distribution { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Criterion {
    /// Lowest validation loss.
    ValLoss,
    /// Lowest training loss.
    TrainLoss,
}

impl From<Criterion> for BestCriterion {
    fn from(c: Criterion) -> Self {
        match c {
            Criterion::ValLoss => BestCriterion::ValidationLoss,
            Criterion::TrainLoss => BestCriterion::TrainLoss,
        }
    }
}

fn parse_ratios(s: &str) -> std::result::Result<SplitRatios, String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let [a, b, c] = parts[..] else {
        return Err(format!("expected three comma-separated fractions, got {s:?}"));
    };
    SplitRatios::new(a, b, c).map_err(|e| e.to_string())
}

fn parse_reference(s: &str) -> std::result::Result<Reference, String> {
    let (label, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LABEL=ACCURACY, got {s:?}"))?;
    let accuracy = f64::from_str(value).map_err(|e| format!("{value:?}: {e}"))?;
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(format!("accuracy {accuracy} outside [0, 1]"));
    }
    Ok(Reference {
        label: label.to_string(),
        accuracy,
    })
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::from_str(s).map_err(|e| e.to_string())
}

/// Everything `cmd_train` needs.
#[derive(Debug, Clone, PartialEq, Args)]
pub struct RunConfig {
    /// Directory with one sub-directory of images per class.
    #[arg(long)]
    pub data_root: PathBuf,
    /// Output directory for the checkpoint, epoch log and split manifest.
    #[arg(long = "out")]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 150, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long = "lr", default_value_t = 0.001)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long = "split", default_value = "0.7,0.2,0.1", value_parser = parse_ratios)]
    pub split_ratios: SplitRatios,
    /// Add 90/180/270 degree rotated copies after splitting.
    #[arg(long = "augment")]
    pub augment_rotations: bool,
    /// Image decoding threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Compute threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Loss that selects the retained weights.
    #[arg(long, value_enum, default_value_t = Criterion::ValLoss)]
    pub best_by: Criterion,
    /// Record real epoch durations in epochs.csv instead of 0.
    #[arg(long)]
    pub wall_time: bool,
}

impl RunConfig {
    /// Defaults for every flag except the two paths.
    pub fn new(data_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            data_root: data_root.into(),
            output_dir: output_dir.into(),
            epochs: 150,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 42,
            split_ratios: SplitRatios::default(),
            augment_rotations: false,
            workers: 0,
            threads: 0,
            precision: Precision::F32,
            best_by: Criterion::ValLoss,
            wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split_ratios.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs as usize,
            batch_size: self.batch_size as usize,
            adam: AdamConfig::with_learning_rate(self.learning_rate),
            seed: self.seed,
            criterion: self.best_by.into(),
            record_wall_time: self.wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct EvalConfig {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split manifest written by `train`; only rows of `--subset` are loaded.
    #[arg(long, conflicts_with = "data_root", required_unless_present = "data_root")]
    pub manifest: Option<PathBuf>,
    /// Evaluate every image under a class-directory tree instead.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub subset: Split,
    /// Output directory for confusion.csv and report.csv.
    #[arg(long = "out")]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Accuracy to compare against, as LABEL=VALUE. Repeatable.
    #[arg(long = "compare", value_parser = parse_reference)]
    pub references: Vec<Reference>,
}

impl EvalConfig {
    pub fn with_manifest(
        checkpoint: impl Into<PathBuf>,
        manifest: impl Into<PathBuf>,
        out: impl Into<PathBuf>,
    ) -> Self {
        EvalConfig {
            checkpoint: checkpoint.into(),
            manifest: Some(manifest.into()),
            data_root: None,
            subset: Split::Test,
            output_dir: out.into(),
            batch_size: 32,
            workers: 0,
            threads: 0,
            precision: Precision::F32,
            references: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data_root: PathBuf,
    #[arg(long = "out")]
    pub output_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data_root: PathBuf,
    /// Manifest file to write.
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long = "split", default_value = "0.7,0.2,0.1", value_parser = parse_ratios)]
    pub split_ratios: SplitRatios,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Split, optionally augment, and train; keeps the best weights.
    Train(RunConfig),
    /// Score a checkpoint and write confusion.csv and report.csv.
    Eval(EvalConfig),
    /// Classify one image.
    Predict(PredictArgs),
    /// Copy a class tree adding _r90/_r180/_r270 rotations.
    Augment(AugmentArgs),
    /// Write a stratified split manifest without training.
    Split(SplitArgs),
}

#[derive(Debug, Parser)]
#[command(name = "wbcnet", version, about = "White blood cell CNN: train, evaluate, predict")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let io_err = |e| Error::io("<stdout>", e);
    match command {
        Command::Train(cfg) => {
            let summary = cmd_train(cfg)?;
            writeln!(
                stdout,
                "best epoch {} (train loss {:.4}, val loss {:.4}) -> {}",
                summary.best_epoch,
                summary.best_train_loss,
                summary.best_val_loss,
                cfg.output_dir.join(CHECKPOINT_FILE).display()
            )
            .map_err(io_err)
        }
        Command::Eval(cfg) => {
            let out = cmd_eval(cfg)?;
            stdout.write_all(out.text.as_bytes()).map_err(io_err)
        }
        Command::Predict(args) => {
            let out = cmd_predict(&args.checkpoint, &args.image, args.precision)?;
            stdout.write_all(out.text.as_bytes()).map_err(io_err)
        }
        Command::Augment(args) => {
            let n = cmd_augment(&args.data_root, &args.output_root)?;
            writeln!(stdout, "wrote {n} images to {}", args.output_root.display()).map_err(io_err)
        }
        Command::Split(args) => {
            let counts = cmd_split(args)?;
            writeln!(
                stdout,
                "train {} / validation {} / test {} -> {}",
                counts[0],
                counts[1],
                counts[2],
                args.output.display()
            )
            .map_err(io_err)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub best_epoch: u64,
    pub best_train_loss: f64,
    pub best_val_loss: f64,
    pub records: Vec<EpochRecord>,
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

/// Loads and splits the class tree, trains, and writes `best.wbcn`,
/// `epochs.csv` and `split_manifest.csv` into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let root = absolute(&cfg.data_root)?;
    let dataset = Dataset::load_dir(&root, INPUT_SIDE, cfg.workers)?.split(cfg.split_ratios, cfg.seed)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    dataset.write_manifest(&cfg.output_dir.join(MANIFEST_FILE))?;
    let dataset = if cfg.augment_rotations {
        dataset.augment_rotations()?
    } else {
        dataset
    };
    log::info!(
        "{} images, classes {:?}, {} train / {} validation",
        dataset.len(),
        dataset.class_names(),
        dataset.indices_of(Split::Train).len(),
        dataset.indices_of(Split::Validation).len()
    );
    par::with_threads(cfg.threads, || match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, &dataset),
        Precision::F64 => train_as::<f64>(cfg, &dataset),
    })
}

fn train_as<T: Real>(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainSummary> {
    let mut model = WbcNet::<T>::build(dataset.class_names().len(), cfg.seed)?;
    let checkpoint_path = cfg.output_dir.join(CHECKPOINT_FILE);
    let epochs_path = cfg.output_dir.join(EPOCHS_FILE);
    let mut seen = Vec::new();
    let outcome = train(&mut model, dataset, &cfg.train_config(), |record, best| {
        if let Some(best) = best {
            save_checkpoint(best, &checkpoint_path)?;
        }
        seen.push(record.clone());
        write_epochs_csv(&epochs_path, &seen)
    })?;
    let meta = &outcome.best.meta;
    Ok(TrainSummary {
        best_epoch: meta.epoch,
        best_train_loss: meta.train_loss,
        best_val_loss: meta.val_loss,
        records: outcome.records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub matrix: ConfusionMatrix,
    pub report: EvalReport,
    pub loss: f64,
    /// Rendered report as printed.
    pub text: String,
}

/// Scores a checkpoint on a manifest subset or a whole class tree.
pub fn cmd_eval(cfg: &EvalConfig) -> Result<EvalOutput> {
    let checkpoint = load_checkpoint(&cfg.checkpoint)?;
    let names = checkpoint.meta.class_names.clone();
    let (dataset, split) = match (&cfg.manifest, &cfg.data_root) {
        (Some(manifest), _) => {
            let subset = cfg.subset;
            (
                Dataset::from_manifest(manifest, &names, INPUT_SIDE, cfg.workers, |s| s == subset)?,
                subset,
            )
        }
        (None, Some(root)) => {
            let ds = Dataset::load_dir(root, INPUT_SIDE, cfg.workers)?;
            if ds.class_names() != names.as_slice() {
                return Err(Error::IncompatibleArchitecture(format!(
                    "checkpoint classes {names:?} differ from data classes {:?}",
                    ds.class_names()
                )));
            }
            (ds, Split::Unassigned)
        }
        (None, None) => return Err(Error::Usage("eval needs --manifest or --data-root".into())),
    };
    if dataset.is_empty() {
        return Err(Error::InsufficientData("no images to evaluate".into()));
    }
    let eval = par::with_threads(cfg.threads, || match cfg.precision {
        Precision::F32 => evaluate(&checkpoint.to_model::<f32>()?, &dataset, split, cfg.batch_size as usize),
        Precision::F64 => evaluate(&checkpoint.to_model::<f64>()?, &dataset, split, cfg.batch_size as usize),
    })?;
    let matrix = confusion(&eval.truths, &eval.predictions, names)?;
    let report = report(&matrix);
    let mut text = format!("{} images, mean loss {:.4}\n\n", matrix.total(), eval.loss);
    text.push_str(&render_text(&report, &matrix, &cfg.references));
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_file(&cfg.output_dir.join(CONFUSION_FILE), &matrix.to_csv())?;
    write_file(&cfg.output_dir.join(REPORT_FILE), &render_csv(&report))?;
    Ok(EvalOutput {
        matrix,
        report,
        loss: eval.loss,
        text,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub class_name: String,
    pub probabilities: Vec<(String, f64)>,
    /// Class line followed by one `name probability` line per class.
    pub text: String,
}

/// Classifies one image, resizing it to the model input first.
pub fn cmd_predict(checkpoint_path: &Path, image_path: &Path, precision: Precision) -> Result<PredictOutput> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let pixels = load_image(image_path)?;
    let prediction = match precision {
        Precision::F32 => {
            let model = checkpoint.to_model::<f32>()?;
            let [_, h, w] = model.input_shape();
            model.predict(&resize(&pixels, h, w)?)?
        }
        Precision::F64 => {
            let model = checkpoint.to_model::<f64>()?;
            let [_, h, w] = model.input_shape();
            model.predict(&resize(&pixels, h, w)?.cast())?
        }
    };
    let names = &checkpoint.meta.class_names;
    if names.len() != prediction.probabilities.len() {
        return Err(Error::IncompatibleArchitecture(format!(
            "{} class names for {} outputs",
            names.len(),
            prediction.probabilities.len()
        )));
    }
    let class_name = names[prediction.class].clone();
    let probabilities: Vec<(String, f64)> = names.iter().cloned().zip(prediction.probabilities).collect();
    let mut text = format!("{class_name}\n");
    let shown = round_to_total(&prediction_values(&probabilities), 10_000);
    for ((name, _), units) in probabilities.iter().zip(shown) {
        text.push_str(&format!("{name} {}.{:04}\n", units / 10_000, units % 10_000));
    }
    Ok(PredictOutput {
        class_name,
        probabilities,
        text,
    })
}

fn prediction_values(probabilities: &[(String, f64)]) -> Vec<f64> {
    probabilities.iter().map(|(_, p)| *p).collect()
}

/// Rounds `values` (summing to 1) to integer units of `1 / total` by largest
/// remainder, so the printed values add up exactly.
fn round_to_total(values: &[f64], total: u64) -> Vec<u64> {
    let scaled: Vec<f64> = values.iter().map(|v| v.max(0.0) * total as f64).collect();
    let mut units: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(units.iter().sum());
    for &i in order.iter().cycle().take(values.len() * 2) {
        if left == 0 {
            break;
        }
        units[i] += 1;
        left -= 1;
    }
    units
}

fn collect_images(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let dir = root.join(rel);
    let mut entries = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .map(|e| e.map(|e| e.file_name()).map_err(|err| Error::io(&dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    for name in entries {
        let rel_path = rel.join(&name);
        let full = root.join(&rel_path);
        if full.is_dir() {
            collect_images(root, &rel_path, out)?;
        } else if crate::data::is_image_path(&full) {
            out.push(rel_path);
        }
    }
    Ok(())
}

/// Copies every image under `data_root` into `output_root` (same relative
/// layout) together with its three rotations. Returns the number of files
/// written, always four per input. Refuses to overwrite anything.
pub fn cmd_augment(data_root: &Path, output_root: &Path) -> Result<usize> {
    let mut inputs = Vec::new();
    collect_images(data_root, Path::new(""), &mut inputs)?;
    let plan: Vec<(PathBuf, [PathBuf; 3])> = inputs
        .iter()
        .map(|rel| (rel.clone(), Rotation::ALL.map(|r| rotated_path(rel, r))))
        .collect();
    let mut targets = BTreeSet::new();
    for rel in plan.iter().flat_map(|(o, rs)| std::iter::once(o).chain(rs)) {
        if !targets.insert(rel.clone()) {
            return Err(Error::Input(format!(
                "augmentation would write {} twice",
                rel.display()
            )));
        }
        let dst = output_root.join(rel);
        if dst.exists() {
            return Err(Error::Input(format!("{} already exists", dst.display())));
        }
    }
    fs::create_dir_all(output_root).map_err(|e| Error::io(output_root, e))?;
    for (rel, rotated) in &plan {
        let src = data_root.join(rel);
        let pixels = load_image(&src)?;
        let dst = output_root.join(rel);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
        for (r, target) in Rotation::ALL.iter().zip(rotated) {
            save_image(&rotate(&pixels, r.degrees())?, output_root.join(target))?;
        }
    }
    Ok(plan.len() * 4)
}

/// Writes a stratified manifest for `data_root`. Returns train, validation
/// and test counts.
pub fn cmd_split(args: &SplitArgs) -> Result<[usize; 3]> {
    let root = absolute(&args.data_root)?;
    let dataset = Dataset::load_dir(&root, INPUT_SIDE, args.workers)?.split(args.split_ratios, args.seed)?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let rows = dataset.manifest_rows();
    write_manifest(&args.output, &rows)?;
    Ok([Split::Train, Split::Validation, Split::Test].map(|s| rows.iter().filter(|r| r.split == s).count()))
}
