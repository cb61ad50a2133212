use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use saak::analysis::discriminability_report;
use saak::attack::{
    attack_batch, train_classifier, AttackKind, AttackSpec, SoftmaxClassifier, TrainConfig, DEFAULT_BIM_STEP,
    DEFAULT_BIM_STEPS, DEFAULT_EPSILON,
};
use saak::eval::{run_grid, GridConfig};
use saak::filter::{defend, FilterSpec, FilterStrategy};
use saak::io::{
    dataset_files, labels_sidecar, load_images, load_labels, save_images, save_labels, write_atomic, Dataset,
    DatasetFilter,
};
use saak::model::{train_model, SaakModel, DEFAULT_SAMPLE_CAP};
use saak::smoothing::{Smoothing, SmoothingKind};
use saak::synthetic::{two_class_images, SyntheticSpec};
use saak::transform::forward_batch;
use saak::{ImageTensor, Result, SaakConfig, SaakError};

#[derive(Parser)]
#[command(name = "saak", version, about = "Saak transform training, adversarial defense and evaluation")]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train Saak kernels on a dataset and write a model file.
    TrainKernels(TrainKernelsArgs),
    /// Train the softmax target classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Apply inverse(filter(forward(x))), then optional smoothing.
    Defend(DefendArgs),
    /// Generate FGSM/BIM adversarial examples.
    Attack(AttackArgs),
    /// Per-channel clean-vs-adversarial statistics of Saak coefficients.
    Analyze(AnalyzeArgs),
    /// Accuracy sweep over attacks and filters defined by a JSON grid.
    Evaluate(EvaluateArgs),
    /// Convert CIFAR-10 binary batches into a tensor file with labels.
    ImportCifar(ImportArgs),
    /// Write a seeded synthetic two-class 32x32x3 dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CIFAR-10 .bin batch, .stns tensor file, or a directory of them.
    #[arg(long)]
    data: PathBuf,
    /// Keep only these labels (comma separated), relabelled 0, 1, ...
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    /// Use at most this many images.
    #[arg(long)]
    limit: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        Dataset::load(
            &self.data,
            &DatasetFilter {
                classes: self.classes.clone(),
                limit: self.limit,
            },
        )
    }
}

#[derive(Args)]
struct TrainKernelsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    spatial: usize,
    #[arg(long)]
    stages: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_CAP)]
    sample_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainClassifierArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DefendArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    filter: FilterStrategy,
    #[arg(long)]
    count: usize,
    /// Scale factor or clip bound (default 0.25 / 0.02).
    #[arg(long)]
    param: Option<f64>,
    #[arg(long, requires = "kernel")]
    smooth: Option<SmoothingKind>,
    #[arg(long, requires = "smooth")]
    kernel: Option<usize>,
    /// Skip clamping reconstructions to [0, 1].
    #[arg(long)]
    no_clamp: bool,
    /// Tensor files or directories of them.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    kind: AttackKind,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_BIM_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_BIM_STEP)]
    step: f64,
    /// Recorded in the sidecar; the attacks themselves are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    adv: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Training metadata written next to a trained model as `<model>.json`.
#[derive(Serialize)]
struct ModelSidecar<'a> {
    config: SaakConfig,
    spectral_dim: usize,
    data: &'a Path,
    images: u64,
    sample_cap: usize,
    seed: u64,
    digest: String,
}

#[derive(Serialize)]
struct AttackSidecar<'a> {
    spec: AttackSpec,
    seed: u64,
    classifier: &'a Path,
    labels: &'static str,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, |w| w.write_all(&bytes))
}

/// Expands directories into their `.stns` files, keeping argument order.
fn tensor_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(dataset_files(p)?.into_iter().filter(|f| f.extension().is_some_and(|e| e == "stns")));
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(SaakError::InvalidArgument(format!("{} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(SaakError::InvalidArgument("no input tensor files".into()));
    }
    Ok(out)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| SaakError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn output_path(out_dir: &Path, input: &Path) -> Result<PathBuf> {
    let name = input
        .file_name()
        .ok_or_else(|| SaakError::InvalidArgument(format!("{} has no file name", input.display())))?;
    Ok(out_dir.join(name))
}

fn copy_labels(input: &Path, output: &Path) -> Result<()> {
    let side = labels_sidecar(input);
    if side.exists() {
        save_labels(&labels_sidecar(output), &load_labels(&side)?)?;
    }
    Ok(())
}

fn train_kernels(a: TrainKernelsArgs) -> Result<()> {
    let ds = a.data.load()?;
    let first = ds.images.first().ok_or(SaakError::Empty("no training images"))?;
    let config = SaakConfig::new(a.spatial, a.stages, first.channels())?;
    let model = train_model(&ds.images, config, a.sample_cap, a.seed)?;
    model.save(&a.out)?;
    write_json(
        &sidecar(&a.out, ".json"),
        &ModelSidecar {
            config,
            spectral_dim: model.spectral_dim(),
            data: &a.data.data,
            images: model.meta().sample_count,
            sample_cap: a.sample_cap,
            seed: a.seed,
            digest: model.meta().digest_hex(),
        },
    )?;
    println!("{} spectral channels, model written to {}", model.spectral_dim(), a.out.display());
    Ok(())
}

fn train_classifier_cmd(a: TrainClassifierArgs) -> Result<()> {
    let ds = a.data.load()?;
    let labels = ds
        .labels
        .ok_or_else(|| SaakError::InvalidArgument("classifier training needs labelled data".into()))?;
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch,
        seed: a.seed,
    };
    let (clf, report) = train_classifier(&ds.images, &labels, &config)?;
    clf.save(&a.out)?;
    println!(
        "train accuracy {:.4}, final loss {:.5}, classifier written to {}",
        report.train_accuracy,
        report.final_loss,
        a.out.display()
    );
    Ok(())
}

fn defend_cmd(a: DefendArgs) -> Result<()> {
    let model = SaakModel::load(&a.model)?;
    let spec = FilterSpec::new(a.filter, a.count, a.param)?;
    spec.validate(model.spectral_dim())?;
    let smoothing = match (a.smooth, a.kernel) {
        (Some(kind), Some(k)) => Some(Smoothing::new(kind, k)?),
        _ => None,
    };
    let inputs = tensor_inputs(&a.inputs)?;
    create_dir(&a.out)?;
    for input in &inputs {
        let images = load_images(input)?;
        let defended: Vec<ImageTensor> = images
            .par_iter()
            .map(|img| {
                let d = defend(img, &model, &spec, !a.no_clamp)?;
                match smoothing {
                    Some(s) => s.apply(&d),
                    None => Ok(d),
                }
            })
            .collect::<Result<_>>()?;
        let out = output_path(&a.out, input)?;
        save_images(&out, &defended)?;
        copy_labels(input, &out)?;
    }
    println!("defended {} file(s) into {}", inputs.len(), a.out.display());
    Ok(())
}

fn attack_cmd(a: AttackArgs) -> Result<()> {
    let clf = SoftmaxClassifier::load(&a.classifier)?;
    let spec = match a.kind {
        AttackKind::Fgsm => AttackSpec::fgsm(a.eps),
        AttackKind::Bim => AttackSpec::bim(a.eps, a.step, a.steps),
    };
    spec.validate()?;
    let inputs = tensor_inputs(&a.inputs)?;
    create_dir(&a.out)?;
    for input in &inputs {
        let images = load_images(input)?;
        let side = labels_sidecar(input);
        let (labels, source) = if side.exists() {
            (load_labels(&side)?, "sidecar")
        } else {
            let predicted = images.iter().map(|img| clf.predict(img)).collect::<Result<Vec<_>>>()?;
            (predicted, "predicted")
        };
        let adv = attack_batch(&clf, &images, &labels, &spec)?;
        let out = output_path(&a.out, input)?;
        save_images(&out, &adv)?;
        if source == "sidecar" {
            save_labels(&labels_sidecar(&out), &labels)?;
        }
        write_json(
            &out.with_extension("attack.json"),
            &AttackSidecar {
                spec,
                seed: a.seed,
                classifier: &a.classifier,
                labels: source,
            },
        )?;
    }
    println!("attacked {} file(s) with {} into {}", inputs.len(), spec.label(), a.out.display());
    Ok(())
}

fn load_all(path: &Path) -> Result<Vec<ImageTensor>> {
    let mut images = Vec::new();
    for f in tensor_inputs(&[path.to_path_buf()])? {
        images.extend(load_images(&f)?);
    }
    Ok(images)
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    let model = SaakModel::load(&a.model)?;
    let clean = load_all(&a.clean)?;
    let adv = load_all(&a.adv)?;
    if clean.len() != adv.len() {
        return Err(SaakError::LengthMismatch {
            expected: clean.len(),
            actual: adv.len(),
        });
    }
    let report = discriminability_report(&forward_batch(&clean, &model)?, &forward_batch(&adv, &model)?)?;
    report.write(&a.out)?;
    println!(
        "{} channels; mean normalized RMSE top quartile {:.6}, bottom quartile {:.6}",
        report.summary.channels,
        report.summary.top_quartile_mean_normalized_rmse,
        report.summary.bottom_quartile_mean_normalized_rmse
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let clf = SoftmaxClassifier::load(&a.classifier)?;
    let model = SaakModel::load(&a.model)?;
    let grid = GridConfig::load(&a.grid)?;
    let (images, labels) = grid.load_data()?;
    let report = run_grid(&clf, &model, &grid, &images, &labels)?;
    report.write(&a.out)?;
    println!("{} rows written to {}", report.rows.len(), a.out.display());
    Ok(())
}

fn import_cmd(a: ImportArgs) -> Result<()> {
    let ds = a.data.load()?;
    save_images(&a.out, &ds.images)?;
    if let Some(labels) = &ds.labels {
        save_labels(&labels_sidecar(&a.out), labels)?;
    }
    println!("{} images written to {}", ds.images.len(), a.out.display());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let (images, labels) = two_class_images(a.count, &SyntheticSpec::default(), a.seed)?;
    save_images(&a.out, &images)?;
    save_labels(&labels_sidecar(&a.out), &labels)?;
    println!("{} images written to {}", images.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| SaakError::InvalidArgument(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::TrainKernels(a) => train_kernels(a),
        Command::TrainClassifier(a) => train_classifier_cmd(a),
        Command::Defend(a) => defend_cmd(a),
        Command::Attack(a) => attack_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ImportCifar(a) => import_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
