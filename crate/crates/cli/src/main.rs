//! `neuromerge`: train fixture networks, prune them, pick cutoffs, compare policies.

use std::error::Error as StdError;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use neuromerge::io::{
    export_curves, export_report, export_trace, import_trace, load_model, save_model,
};
use neuromerge::{
    compression_percent, data_driven_cutoff, data_free_cutoff, error_curve, evaluate,
    prune_network, replay_trace, train, Activation, CsvOptions, Dataset, Network, PrunePolicy,
    SimilarityConfig, Split, SyntheticConfig, TrainConfig, DEFAULT_BINS,
};

#[derive(Parser)]
#[command(
    name = "neuromerge",
    version,
    about = "Data-free neuron merging for dense networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a one-hidden-layer fixture network and save it.
    Train(TrainArgs),
    /// Remove neurons from hidden layers of a saved model.
    Prune(PruneArgs),
    /// Predict how many neurons can be removed from a pruning trace.
    Cutoff(CutoffArgs),
    /// Report accuracy of a saved model on a dataset split.
    Eval(EvalArgs),
    /// Run all four pruning policies and write per-policy error curves.
    Compare(CompareArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Use the built-in two-class synthetic dataset.
    #[arg(long, conflicts_with = "data")]
    synthetic: bool,
    /// CSV file: feature columns followed by an integer label column.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Skip the first CSV row.
    #[arg(long, requires = "data")]
    skip_header: bool,
    /// Seed for synthetic generation and split assignment.
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.synthetic || self.data.is_some()
    }

    fn load(&self) -> neuromerge::Result<Dataset> {
        match &self.data {
            Some(path) => Dataset::from_csv(
                path,
                &CsvOptions {
                    skip_header: self.skip_header,
                    seed: self.data_seed,
                    ..Default::default()
                },
            ),
            None => Dataset::synthetic(&SyntheticConfig {
                seed: self.data_seed,
                ..Default::default()
            }),
        }
    }
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().hidden_units)]
    hidden: usize,
    #[arg(long, value_enum, default_value_t = HiddenAct::Sigmoid)]
    activation: HiddenAct,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    weight_decay: f64,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_units: self.hidden,
            activation: self.activation.into(),
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HiddenAct {
    Sigmoid,
    Relu,
}

impl From<HiddenAct> for Activation {
    fn from(a: HiddenAct) -> Self {
        match a {
            HiddenAct::Sigmoid => Activation::Sigmoid,
            HiddenAct::Relu => Activation::Relu,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Surgery,
    NoSurgery,
    Magnitude,
    Random,
}

impl PolicyArg {
    fn policy(self, seed: u64) -> PrunePolicy {
        match self {
            PolicyArg::Surgery => PrunePolicy::SaliencySurgery,
            PolicyArg::NoSurgery => PrunePolicy::SaliencyNoSurgery,
            PolicyArg::Magnitude => PrunePolicy::NaiveMagnitude,
            PolicyArg::Random => PrunePolicy::Random { seed },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimilarityArg {
    Heuristic,
    Raw,
}

impl SimilarityArg {
    fn config(self) -> SimilarityConfig {
        match self {
            SimilarityArg::Heuristic => SimilarityConfig::default(),
            SimilarityArg::Raw => SimilarityConfig::raw(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    DataFree,
    DataDriven,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerPlan {
    layer: usize,
    count: usize,
}

fn parse_plan(s: &str) -> Result<LayerPlan, String> {
    let (l, c) = s
        .split_once(':')
        .ok_or_else(|| format!("expected idx:count, got `{s}`"))?;
    let layer = l
        .trim()
        .parse()
        .map_err(|_| format!("bad layer index `{l}`"))?;
    let count = c.trim().parse().map_err(|_| format!("bad count `{c}`"))?;
    Ok(LayerPlan { layer, count })
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Removal plan entry `idx:count`; repeat in ascending layer order.
    #[arg(long = "layer", value_name = "IDX:COUNT", value_parser = parse_plan)]
    plan: Vec<LayerPlan>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Surgery)]
    policy: PolicyArg,
    /// Seed for the random policy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SimilarityArg::Heuristic)]
    similarity: SimilarityArg,
    /// Normalize ReLU layers to unit-norm weight rows before pruning.
    #[arg(long)]
    rescale: bool,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Trace CSV; defaults to `<out stem>.trace.csv`. With several layers,
    /// one file per layer named `<stem>.layer<k>.csv`.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CutoffArgs {
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
    /// Hidden layer the trace belongs to.
    #[arg(long, default_value_t = 0)]
    layer_index: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::DataFree)]
    method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Model the trace was recorded on (data-driven mode).
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Maximum number of error measurements (data-driven mode).
    #[arg(long, default_value_t = 12)]
    budget: usize,
    /// Allowed error increase in percentage points (data-driven mode).
    #[arg(long, default_value_t = 1.0)]
    max_error_increase: f64,
    /// Replay the trace without adding removed columns to their partners.
    #[arg(long)]
    no_surgery: bool,
    /// Write the report as `key = value` lines.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// Saved models to compare instead of training fresh ones.
    #[arg(long, value_name = "FILE")]
    model: Vec<PathBuf>,
    /// Number of trained networks (seeds `seed..seed+n`).
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    layer_index: usize,
    /// Measure the error every this many removals.
    #[arg(long, default_value_t = 1)]
    every: usize,
    #[arg(long, value_enum, default_value_t = SimilarityArg::Heuristic)]
    similarity: SimilarityArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Debug)]
struct CliError(String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl StdError for CliError {}

type CmdResult = Result<(), Box<dyn StdError>>;

fn fail(msg: impl Into<String>) -> Box<dyn StdError> {
    Box::new(CliError(msg.into()))
}

fn usage(kind: ErrorKind, msg: impl fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn require_data(data: &DataArgs) {
    if !data.given() {
        usage(
            ErrorKind::MissingRequiredArgument,
            "a dataset is required: pass --synthetic or --data <FILE>",
        );
    }
}

fn check_input(path: &Path) -> CmdResult {
    if !path.is_file() {
        return Err(fail(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn check_output(path: &Path, inputs: &[&Path]) -> CmdResult {
    if inputs.contains(&path) {
        return Err(fail(format!(
            "refusing to overwrite input file {}",
            path.display()
        )));
    }
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(fail(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    require_data(&args.data);
    let Some(out) = &args.out else {
        usage(
            ErrorKind::MissingRequiredArgument,
            "--out <FILE> is required",
        );
    };
    if let Some(p) = &args.data.data {
        check_input(p)?;
    }
    check_output(out, &[])?;
    let ds = args.data.load()?;
    let cfg = args.opts.config(args.seed);
    let net = train(&ds, &cfg)?;
    save_model(&net, out)?;
    let tr = evaluate(&net, &ds, Split::Train)?;
    let te = evaluate(&net, &ds, Split::Test)?;
    println!(
        "trained {}-{}-{} {} net (lr {}, epochs {}, batch {}, weight decay {}, seed {})",
        ds.n_features(),
        cfg.hidden_units,
        ds.n_classes(),
        cfg.activation,
        cfg.learning_rate,
        cfg.epochs,
        cfg.batch_size,
        cfg.weight_decay,
        cfg.seed
    );
    println!("train accuracy: {:.2}%", tr.accuracy);
    println!("test accuracy: {:.2}%", te.accuracy);
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_prune(args: &PruneArgs) -> CmdResult {
    if args.plan.windows(2).any(|w| w[0].layer >= w[1].layer) {
        usage(
            ErrorKind::ValueValidation,
            "--layer entries must name distinct layers in ascending order",
        );
    }
    check_input(&args.model)?;
    check_output(&args.out, &[&args.model])?;
    let net = load_model(&args.model)?;
    for p in &args.plan {
        net.check_hidden(p.layer)?;
    }
    let plan: Vec<(usize, usize)> = args
        .plan
        .iter()
        .filter(|p| p.count > 0)
        .map(|p| (p.layer, p.count))
        .collect();

    let mut start = net.clone();
    if args.rescale {
        for &(layer, _) in &plan {
            start = start.rescale_relu_layer(layer)?.network;
        }
    }
    let policy = args.policy.policy(args.seed);
    let (pruned, traces) = if plan.is_empty() {
        (start, Vec::new())
    } else {
        prune_network(&start, &plan, policy, &args.similarity.config())?
    };

    let trace_paths: Vec<PathBuf> = match (&args.trace, traces.len()) {
        (_, 0) => Vec::new(),
        (Some(t), 1) => vec![t.clone()],
        (None, 1) => vec![with_suffix(&args.out, ".trace.csv")],
        (t, _) => {
            let base = t.clone().unwrap_or_else(|| args.out.clone());
            traces
                .iter()
                .map(|tr| with_suffix(&base, &format!(".layer{}.csv", tr.layer_index)))
                .collect()
        }
    };
    for p in &trace_paths {
        check_output(p, &[&args.model])?;
    }
    save_model(&pruned, &args.out)?;
    for (trace, path) in traces.iter().zip(&trace_paths) {
        export_trace(trace, path)?;
        println!("wrote trace {} ({} steps)", path.display(), trace.len());
    }
    let before = net.param_count() as u64;
    let removed = before - pruned.param_count() as u64;
    println!(
        "policy {}: removed {removed} of {before} parameters ({:.2}% compression)",
        policy.name(),
        compression_percent(removed, before)?
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_cutoff(args: &CutoffArgs) -> CmdResult {
    check_input(&args.trace)?;
    if let Some(out) = &args.out {
        check_output(out, &[&args.trace])?;
    }
    let trace = import_trace(&args.trace, args.layer_index)?;
    let report = match args.method {
        MethodArg::DataFree => data_free_cutoff(&trace, args.bins, args.fraction)?,
        MethodArg::DataDriven => {
            let Some(model) = &args.model else {
                usage(
                    ErrorKind::MissingRequiredArgument,
                    "data-driven cutoff needs --model and a dataset (--synthetic or --data)",
                );
            };
            require_data(&args.data);
            check_input(model)?;
            let net = load_model(model)?;
            let ds = args.data.load()?;
            let split = args.split.into();
            data_driven_cutoff(
                &trace,
                |step| {
                    let pruned = replay_trace(&net, &trace, step, !args.no_surgery)?;
                    Ok(evaluate(&pruned, &ds, split)?.error)
                },
                args.budget,
                args.max_error_increase,
            )?
        }
    };
    print!("{report}");
    if let Some(out) = &args.out {
        export_report(&report, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    require_data(&args.data);
    check_input(&args.model)?;
    let net = load_model(&args.model)?;
    let ds = args.data.load()?;
    let splits: Vec<Split> = match args.split {
        Some(s) => vec![s.into()],
        None => vec![Split::Train, Split::Val, Split::Test],
    };
    for split in splits {
        if ds.indices(split).is_empty() {
            continue;
        }
        let e = evaluate(&net, &ds, split)?;
        println!(
            "{}: accuracy {:.4}% error {:.4}% ({} samples)",
            split.name(),
            e.accuracy,
            e.error,
            e.samples
        );
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> CmdResult {
    require_data(&args.data);
    if args.model.is_empty() && args.seeds == 0 {
        usage(ErrorKind::ValueValidation, "--seeds must be positive");
    }
    if let Some(p) = &args.data.data {
        check_input(p)?;
    }
    for m in &args.model {
        check_input(m)?;
    }
    if !args.out_dir.is_dir() {
        std::fs::create_dir_all(&args.out_dir)
            .map_err(|e| fail(format!("cannot create {}: {e}", args.out_dir.display())))?;
    }
    let ds = args.data.load()?;
    let nets: Vec<(String, Network)> = if args.model.is_empty() {
        (args.seed..args.seed + args.seeds)
            .map(|s| Ok((format!("seed{s}"), train(&ds, &args.opts.config(s))?)))
            .collect::<neuromerge::Result<_>>()?
    } else {
        args.model
            .iter()
            .enumerate()
            .map(|(k, p)| Ok((format!("model{k}"), load_model(p)?)))
            .collect::<neuromerge::Result<_>>()?
    };
    let width = nets[0].1.layer(args.layer_index)?.n_out();
    if nets
        .iter()
        .any(|(_, n)| n.layers().get(args.layer_index).map(|l| l.n_out()) != Some(width))
    {
        return Err(fail(
            "all compared models need the same width at the pruned layer",
        ));
    }

    let cfg = args.similarity.config();
    let split: Split = args.split.into();
    let policies = [
        PolicyArg::Surgery,
        PolicyArg::NoSurgery,
        PolicyArg::Magnitude,
        PolicyArg::Random,
    ];
    println!(
        "{:<12} {:>10} {:>10} {:>10}",
        "policy", "baseline", "half", "final"
    );
    for pa in policies {
        let mut steps: Vec<usize> = Vec::new();
        let mut columns: Vec<(String, Vec<Option<f64>>)> = Vec::new();
        for (k, (name, net)) in nets.iter().enumerate() {
            let policy = pa.policy(args.seed + k as u64);
            let curve = error_curve(net, args.layer_index, &ds, split, policy, &cfg, args.every)?;
            if steps.is_empty() {
                steps = curve.iter().map(|c| c.0).collect();
            }
            columns.push((name.clone(), curve.iter().map(|c| Some(c.1)).collect()));
        }
        let mean: Vec<Option<f64>> = (0..steps.len())
            .map(|r| {
                let sum: f64 = columns.iter().map(|c| c.1[r].unwrap_or(0.0)).sum();
                Some(sum / columns.len() as f64)
            })
            .collect();
        let at = |step: usize| {
            steps
                .iter()
                .position(|&s| s >= step)
                .and_then(|r| mean[r])
                .unwrap_or(f64::NAN)
        };
        let name = pa.policy(0).name();
        println!(
            "{name:<12} {:>10.3} {:>10.3} {:>10.3}",
            at(0),
            at(width / 2),
            at(width - 1)
        );
        columns.insert(0, ("mean".to_string(), mean));
        let path = args.out_dir.join(format!("{name}.csv"));
        export_curves(&path, &steps, &columns)?;
    }
    println!("wrote curves to {}", args.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Cutoff(a) => cmd_cutoff(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
