use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expertnet::data::{
    augment_dataset, ingest_dataset, read_netpbm, resize_nearest, split_dataset, write_synth, AugmentSpec, Dataset,
    Split, SynthSpec,
};
use expertnet::model::{
    gradcheck_network, load_model_file, render_audit, save_model_file, write_feature_maps, ModelConfig, Network,
};
use expertnet::nn::gradcheck::{check_op, GradcheckReport, OpKind};
use expertnet::train::{crossvalidate, evaluate, train_loop_with, TrainConfig};
use expertnet::{Error, SeededRng};

const OP_TOLERANCE: f64 = 1e-4;
const NETWORK_TOLERANCE: f64 = 1e-3;
const NETWORK_EPS: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "expertnet", version, about = "Train, evaluate and inspect EXPERTNet classifiers")]
struct Cli {
    /// Seed for every random choice (falls back to EXPERTNET_SEED, then 0).
    #[arg(long, global = true, env = "EXPERTNET_SEED")]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic oriented-grating dataset as a PGM tree.
    Synth(SynthArgs),
    /// Ingest, split, optionally augment, train and save a model.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a saved model on one split.
    Eval(EvalArgs),
    /// N-fold cross-validation with freshly initialised networks.
    Crossval(CrossvalArgs),
    /// Per-layer output shapes and parameter counts.
    Params(ParamsArgs),
    /// Finite-difference gradient checks in 64-bit arithmetic.
    Gradcheck(GradcheckArgs),
    /// Write per-channel feature maps of chosen layers as PGM images.
    DumpFeatures(DumpArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Standard deviation of the pixel noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 35)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Rotated copies added per training image.
    #[arg(long, default_value_t = 4)]
    augment: usize,
    /// Largest rotation magnitude in degrees.
    #[arg(long, default_value_t = 30.0)]
    rotation: f64,
    /// Also translate augmented copies by up to 10 % of the image size.
    #[arg(long)]
    translate: bool,
    /// Keep the training order fixed across epochs.
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write `<path>\t<class>\t<split>` lines for the ingested samples.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Save a checkpoint to the output path every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 35)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// Model config file (default: the bundled 128x128 network).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the classifier's class count.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// One op (or op family) to check; all when omitted.
    #[arg(long)]
    op: Option<String>,
    /// Finite-difference step for the single-op checks.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Sampled parameter coordinates for the whole-network check.
    #[arg(long, default_value_t = 50)]
    coords: usize,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Comma-separated layer names.
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes, one per exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Usage(_) | Error::Lookup { .. } | Error::Argument(_) => Failure::Usage(msg),
            Error::Numeric(_) => Failure::Numeric(msg),
            _ => Failure::Data(msg),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_config(path: &Path) -> CliResult<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    text.parse::<ModelConfig>()
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Ingests at the config's input size, resizing the classifier to the
/// dataset's class count when they differ.
fn load_data(path: &Path, config: &mut ModelConfig) -> CliResult<Dataset> {
    let [c, h, w] = config.input;
    if c != 3 {
        return Err(Failure::Usage(format!("image input must have 3 channels, config declares {c}")));
    }
    let data = ingest_dataset(path, Some((h, w)))?;
    if data.num_classes() != config.num_classes() {
        println!(
            "classifier: {} classes in config, {} in dataset; using {}",
            config.num_classes(),
            data.num_classes(),
            data.num_classes()
        );
        config.set_num_classes(data.num_classes());
    }
    config.validate()?;
    Ok(data)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CliResult {
    let spec = SynthSpec {
        noise: a.noise,
        ..SynthSpec::new(a.classes, a.per_class, a.size, seed)
    };
    spec.validate()?;
    let n = write_synth(&spec, &a.out)?;
    println!("wrote {n} images ({} classes x {}) to {}", a.classes, a.per_class, a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: u64) -> CliResult {
    let cfg = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        momentum: a.momentum,
        seed,
        shuffle: !a.no_shuffle,
        log_path: a.log.clone(),
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: a.checkpoint_every.map(|_| a.out.clone()),
    };
    cfg.validate()?;
    let augment = AugmentSpec {
        lo: -a.rotation,
        hi: a.rotation,
        translate: a.translate,
        ..AugmentSpec::new(a.augment, seed)
    };
    augment.validate()?;
    println!(
        "lr: {}  batch: {}  epochs: {}  momentum: {}  augment: {}",
        cfg.lr, cfg.batch, cfg.epochs, cfg.momentum, a.augment
    );

    let mut config = read_config(&a.config)?;
    config.seed = seed;
    let mut data = load_data(&a.data, &mut config)?;
    split_dataset(&mut data, seed)?;
    if let Some(p) = &a.manifest {
        data.write_manifest(p)?;
    }
    println!(
        "data: {} classes, {} samples (train {}, val {}, test {})",
        data.num_classes(),
        data.len(),
        data.split(Split::Train).len(),
        data.split(Split::Val).len(),
        data.split(Split::Test).len()
    );
    if a.augment > 0 {
        data = augment_dataset(&data, &augment)?;
        println!("augmented training split: {} samples", data.split(Split::Train).len());
    }

    let mut net = Network::<f32>::build(config, &mut SeededRng::new(seed))?;
    let epochs = cfg.epochs;
    train_loop_with(
        &mut net,
        &data.split(Split::Train),
        &data.split(Split::Val),
        &cfg,
        |m| {
            println!(
                "epoch {:>4}/{epochs}  loss {:.6}  train_acc {:.1}  val_acc {}",
                m.epoch,
                m.train_loss,
                m.train_acc,
                fmt_opt(m.val_acc)
            )
        },
    )?;
    let test = data.split(Split::Test);
    let (acc, _) = evaluate(&net, &test)?;
    println!("test accuracy: {acc:.1}");
    save_model_file(&net, &a.out)?;
    println!("model: {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, seed: Option<u64>) -> CliResult {
    let net = load_model_file::<f32>(&a.model)?;
    let seed = seed.unwrap_or(net.config().seed);
    println!("seed: {seed}");
    let which: Option<Split> = match a.split.as_str() {
        "all" => None,
        s => Some(s.parse()?),
    };
    let [_, h, w] = net.config().input;
    let mut data = ingest_dataset(&a.data, Some((h, w)))?;
    if data.num_classes() != net.num_classes() {
        return Err(Failure::Data(format!(
            "model has {} classes, dataset has {}",
            net.num_classes(),
            data.num_classes()
        )));
    }
    let samples = match which {
        Some(s) => {
            split_dataset(&mut data, seed)?;
            data.split(s)
        }
        None => data.samples.iter().collect(),
    };
    if samples.is_empty() {
        return Err(Failure::Data(format!("split `{}` is empty", a.split)));
    }
    let (acc, cm) = evaluate(&net, &samples)?;
    println!("samples: {}", samples.len());
    println!("accuracy: {acc:.1}");
    print!("{cm}");
    for (i, name) in data.class_names.iter().enumerate() {
        println!("  {i}: {name}");
    }
    Ok(())
}

fn cmd_crossval(a: &CrossvalArgs, seed: u64) -> CliResult {
    let mut config = read_config(&a.config)?;
    config.seed = seed;
    let data = load_data(&a.data, &mut config)?;
    let cfg = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        momentum: a.momentum,
        seed,
        ..Default::default()
    };
    let cv = crossvalidate(&config, &data, a.folds, &cfg)?;
    for f in &cv.folds {
        println!(
            "fold {}  seed {}  test {:>4}  accuracy {:.1}",
            f.fold, f.seed, f.test_size, f.accuracy
        );
    }
    println!("mean accuracy: {:.1}  stddev: {:.1}", cv.mean, cv.stddev);
    Ok(())
}

fn cmd_params(a: &ParamsArgs) -> CliResult {
    let mut config = match &a.config {
        Some(p) => read_config(p)?,
        None => ModelConfig::canonical(),
    };
    if let Some(c) = a.classes {
        config.set_num_classes(c);
    }
    print!("{}", render_audit(&config)?);
    Ok(())
}

fn report_line(r: &GradcheckReport, tol: f64) -> String {
    format!("{} {r}  (tol {tol:.0e})", if r.passed(tol) { "PASS" } else { "FAIL" })
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64) -> CliResult {
    let ops = OpKind::all();
    let labels: Vec<String> = ops.iter().map(|o| o.label()).collect();
    let matches = |label: &str, want: &str| {
        label == want || label.split('/').next() == Some(want) || (want == "softmax" && label == "softmax_xent")
    };
    let (selected, network): (Vec<OpKind>, bool) = match a.op.as_deref() {
        None => (ops.clone(), true),
        Some("network") => (Vec::new(), true),
        Some(want) => {
            let sel: Vec<OpKind> = ops.iter().zip(&labels).filter(|(_, l)| matches(l, want)).map(|(o, _)| *o).collect();
            if sel.is_empty() {
                return Err(Failure::Usage(format!(
                    "unknown op `{want}` (valid: {}, network)",
                    labels.join(", ")
                )));
            }
            (sel, false)
        }
    };
    let mut failed = Vec::new();
    for op in selected {
        let r = check_op(op, seed, a.eps)?;
        println!("{}", report_line(&r, OP_TOLERANCE));
        if !r.passed(OP_TOLERANCE) {
            failed.push(r.to_string());
        }
    }
    if network {
        let r = gradcheck_network(&ModelConfig::desk(), seed, a.coords, NETWORK_EPS)?;
        println!("{}", report_line(&r, NETWORK_TOLERANCE));
        if !r.passed(NETWORK_TOLERANCE) {
            failed.push(r.to_string());
        }
    }
    if failed.is_empty() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed:\n  {}", failed.join("\n  "))))
    }
}

fn cmd_dump(a: &DumpArgs) -> CliResult {
    let net = load_model_file::<f32>(&a.model)?;
    let [c, h, w] = net.config().input;
    if c != 3 {
        return Err(Failure::Usage(format!("image input must have 3 channels, model declares {c}")));
    }
    let image = resize_nearest(&read_netpbm(&a.image)?, h, w)?.reshape(&[1, c, h, w])?;
    let names: Vec<&str> = a.layers.iter().map(String::as_str).collect();
    let (_, captures) = net.forward(&image, &names)?;
    for layer in &names {
        let files = write_feature_maps(&captures, layer, &a.out)?;
        let [_, lh, lw] = net.shape_table().iter().find(|(n, _)| n == layer).map(|(_, s)| *s).unwrap_or([0; 3]);
        println!("{layer}: {} maps of {lh}x{lw} in {}", files.len(), a.out.display());
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    if let Command::Eval(a) = &cli.command {
        return cmd_eval(a, cli.seed);
    }
    let seed = cli.seed.unwrap_or(0);
    println!("seed: {seed}");
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::Crossval(a) => cmd_crossval(a, seed),
        Command::Params(a) => cmd_params(a),
        Command::Gradcheck(a) => cmd_gradcheck(a, seed),
        Command::DumpFeatures(a) => cmd_dump(a),
        Command::Eval(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
