use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use triplenet_core::cost;
use triplenet_core::data::{self, ChannelStats, DatasetName, LabeledImageSet};
use triplenet_core::gradcheck::{self, GradcheckConfig, Primitive};
use triplenet_core::graph::{self, BottleneckWidth, ModelConfig, ModelGraph, Variant, Weights};
use triplenet_core::parallel::{self, Parallelism};
use triplenet_core::train::{self, TrainConfig, TrainOutputs};
use triplenet_core::{bench, Error};

const DATA_ENV: &str = "TRIPLENET_DATA_DIR";

#[derive(Parser)]
#[command(name = "triplenet", version, about = "Build, analyze, train and benchmark TripleNet models")]
struct Cli {
    /// Run kernels on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-stage architecture table.
    Summarize(ModelArgs),
    /// Static cost report: params, MACs, MAdd, memory, memory traffic.
    Analyze(AnalyzeArgs),
    /// Train on CIFAR-10 or converted SVHN.
    Train(TrainArgs),
    /// Top-1 error of a checkpoint on a test split.
    Evaluate(EvaluateArgs),
    /// Single-image inference latency.
    Bench(BenchArgs),
    /// Finite-difference check of every primitive's backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    S,
    B,
}

impl From<ModelArg> for Variant {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::S => Variant::S,
            ModelArg::B => Variant::B,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BottleneckArg {
    TripleGrowth,
    Half,
    Growth,
}

impl From<BottleneckArg> for BottleneckWidth {
    fn from(b: BottleneckArg) -> Self {
        match b {
            BottleneckArg::TripleGrowth => BottleneckWidth::TripleGrowthRate,
            BottleneckArg::Half => BottleneckWidth::HalfChannels,
            BottleneckArg::Growth => BottleneckWidth::GrowthRate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Cifar10,
    Svhn,
}

impl From<DatasetArg> for DatasetName {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Cifar10 => DatasetName::Cifar10,
            DatasetArg::Svhn => DatasetName::Svhn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "s")]
    model: ModelArg,
    /// Square input side; a positive multiple of 32.
    #[arg(long, default_value_t = 224)]
    input: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Interior width of the last block's bottleneck units.
    #[arg(long, value_enum, default_value = "triple-growth")]
    bottleneck: BottleneckArg,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig::new(self.model.into())
            .with_input_size(self.input)
            .with_classes(self.classes)
            .with_bottleneck_width(self.bottleneck.into())
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Also print per-column deltas against this variant.
    #[arg(long, value_enum)]
    compare: Option<ModelArg>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "cifar10")]
    dataset: DatasetArg,
    /// Dataset directory; defaults to the TRIPLENET_DATA_DIR environment variable.
    #[arg(long, env = DATA_ENV)]
    data_dir: Option<PathBuf>,
    /// Use only the first N training (and test) examples.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "s")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "triple-growth")]
    bottleneck: BottleneckArg,
    /// Defaults to 200 for cifar10 and 60 for svhn.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; normalization statistics go to `<out>.stats`.
    #[arg(long, default_value = "triplenet.tpln")]
    out: PathBuf,
    /// Per-epoch metrics log, appended to.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Rewrite the checkpoint after every epoch.
    #[arg(long)]
    checkpoint_each_epoch: bool,
    /// Skip test-set evaluation after each epoch.
    #[arg(long)]
    no_eval: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "s")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "triple-growth")]
    bottleneck: BottleneckArg,
    #[arg(long)]
    weights: PathBuf,
    /// Normalization statistics; defaults to `<weights>.stats`, else computed from the training split.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "s")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "triple-growth")]
    bottleneck: BottleneckArg,
    /// Checkpoint to load; random weights otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    images: u64,
    #[arg(long, default_value_t = 32)]
    input: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_INSTANCES)]
    instances: usize,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.sequential {
        parallel::set_parallelism(Parallelism::Sequential);
    }
    let result = match cli.command {
        Command::Summarize(a) => summarize(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Bench(a) => bench_cmd(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn build(config: &ModelConfig) -> Result<ModelGraph, Failure> {
    Ok(graph::build(config)?)
}

fn summarize(args: &ModelArgs) -> CmdResult {
    let g = build(&args.config())?;
    let shapes = graph::dry_run_shapes(&g, 1)?;
    let cfg = g.config();
    println!(
        "{} @ {}x{}, {} classes, block-5 bottleneck width {} ({})",
        cfg.variant,
        cfg.input_size,
        cfg.input_size,
        cfg.num_classes,
        cfg.bottleneck_width.width(cfg.block_channels[4], cfg.growth_rates[4]),
        cfg.bottleneck_width.describe()
    );
    println!("{:<12}  {:>11}  {:>8}  composition", "layer", "output", "channels");
    for stage in g.stages() {
        let Some(&last) = stage.nodes.last() else { continue };
        let shape = &shapes[last.0];
        let (out, ch) = match shape.as_slice() {
            [_, c, h, w] => (format!("{h} x {w}"), *c),
            [_, k] => ("1 x 1".to_string(), *k),
            _ => ("?".to_string(), 0),
        };
        println!("{:<12}  {:>11}  {:>8}  {}", stage.name, out, ch, stage.composition);
    }
    let units: usize = g.units().len();
    println!(
        "blocks: depths {:?}, {} units, pre-classifier feature [B, {}, {s}, {s}]",
        cfg.block_depths,
        units,
        g.feature_channels(),
        s = cfg.input_size / 32
    );
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> CmdResult {
    let g = build(&args.model.config())?;
    let report = cost::analyze(&g, 1);
    match args.format {
        Format::Csv => print!("{}", report.to_csv()),
        Format::Text => {
            print!("{}", report.to_text());
            println!("{}", cost::param_diagnostic(&report, &g));
        }
    }
    if let Some(other) = args.compare {
        let mut m = args.model.clone();
        m.model = other;
        let other_graph = build(&m.config())?;
        let other_report = cost::analyze(&other_graph, 1);
        println!("delta {} minus {}:", report.model, other_report.model);
        println!("{:<15}  {:>14}  {:>14}  {:>14}  {:>9}", "column", "a", "b", "a - b", "relative");
        for d in cost::compare(&report, &other_report) {
            println!(
                "{:<15}  {:>14}  {:>14}  {:>+14}  {:>+8.2}%",
                d.column,
                d.a,
                d.b,
                d.absolute,
                100.0 * d.relative
            );
        }
    }
    Ok(())
}

fn data_dir(args: &DataArgs) -> Result<PathBuf, Failure> {
    args.data_dir
        .clone()
        .ok_or_else(|| Failure::Usage(format!("no data directory given; pass --data-dir or set {DATA_ENV}")))
}

fn load_data(args: &DataArgs) -> Result<(LabeledImageSet, LabeledImageSet), Failure> {
    let dir = data_dir(args)?;
    let (train, test) = data::load(args.dataset.into(), &dir)?;
    Ok(match args.subset {
        Some(n) => (train.subset(n), test.subset(n)),
        None => (train, test),
    })
}

fn stats_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".stats");
    PathBuf::from(s)
}

fn train_cmd(args: &TrainArgs) -> CmdResult {
    let dataset: DatasetName = args.data.dataset.into();
    let (train_set, test_set) = load_data(&args.data)?;
    let config = ModelConfig::new(args.model.into())
        .with_input_size(data::IMAGE_SIDE)
        .with_bottleneck_width(args.bottleneck.into());
    let g = build(&config)?;
    let tc = TrainConfig {
        lr0: args.lr,
        batch_size: args.batch,
        epochs: args.epochs.unwrap_or(TrainConfig::for_dataset(dataset).epochs),
        seed: args.seed,
        ..TrainConfig::default()
    };
    tc.validate()?;
    let stats = ChannelStats::from_set(&train_set)?;
    stats.save(&stats_path(&args.out)).map_err(Failure::from)?;
    let mut weights = Weights::init(&g, args.seed)?;
    println!(
        "training {} on {} ({} train / {} test), {} epochs, batch {}, lr {:e}, drops at epochs {:?}",
        config.variant,
        dataset,
        train_set.len(),
        test_set.len(),
        tc.epochs,
        tc.batch_size,
        tc.lr0,
        tc.drop_epochs()
    );
    println!("{}", train::LOG_HEADER);
    let outputs = TrainOutputs {
        log: args.log.clone(),
        checkpoint: Some(args.out.clone()),
        checkpoint_each_epoch: args.checkpoint_each_epoch,
    };
    let test = (!args.no_eval).then_some(&test_set);
    train::train(&g, &mut weights, &train_set, test, &stats, &tc, &outputs, |m| {
        println!("{}", m.log_line())
    })?;
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> CmdResult {
    let (train_set, test_set) = load_data(&args.data)?;
    let config = ModelConfig::new(args.model.into())
        .with_input_size(data::IMAGE_SIDE)
        .with_bottleneck_width(args.bottleneck.into());
    let g = build(&config)?;
    let weights = Weights::load(&g, &args.weights)?;
    let sidecar = args.stats.clone().unwrap_or_else(|| stats_path(&args.weights));
    let stats = if sidecar.exists() {
        ChannelStats::load(&sidecar)?
    } else {
        ChannelStats::from_set(&train_set)?
    };
    let err = train::evaluate(&g, &weights, &test_set, &stats, args.batch)?;
    println!("test error: {err:.2}% over {} images", test_set.len());
    Ok(())
}

fn bench_cmd(args: &BenchArgs) -> CmdResult {
    let config = ModelConfig::new(args.model.into())
        .with_input_size(args.input)
        .with_bottleneck_width(args.bottleneck.into());
    let g = build(&config)?;
    let weights = match &args.weights {
        Some(p) => Weights::load(&g, p)?,
        None => Weights::init(&g, args.seed)?,
    };
    let r = bench::run(&g, &weights, args.images as usize, args.warmup, args.seed)?;
    println!(
        "{} @ {}x{}: {} images after {} warmup, total {:.3} s, per image mean {:.3} ms, std {:.3} ms, median {:.3} ms ({:?})",
        config.variant,
        args.input,
        args.input,
        r.images,
        r.warmup,
        r.total_seconds,
        r.mean_ms,
        r.std_ms,
        r.median_ms(),
        parallel::parallelism()
    );
    Ok(())
}

fn gradcheck_cmd(args: &GradcheckArgs) -> CmdResult {
    let fault = args
        .inject_fault
        .as_deref()
        .map(str::parse::<Primitive>)
        .transpose()?;
    let cfg = GradcheckConfig {
        seed: args.seed,
        instances: args.instances,
        fault,
        ..GradcheckConfig::default()
    };
    let reports = gradcheck::run(&cfg)?;
    let mut failed = 0;
    for r in &reports {
        println!(
            "{:<22} {} instances  max rel error {:.3e}  {}",
            r.primitive.name(),
            r.instances,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} primitive(s) failed the finite-difference check (tolerance {:e})",
            cfg.tolerance
        )));
    }
    Ok(())
}
