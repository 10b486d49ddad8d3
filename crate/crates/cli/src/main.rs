//! `neurocep` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O, 2 usage or validation, 3 numeric failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use neurocep::checkpoint::{Checkpoint, CheckpointError};
use neurocep::dataio::{load_features_csv, synth_generate, synth_ruleset, DataError, Dataset, SynthConfig};
use neurocep::inference::{enumerate_oracle, filter_series, pattern_prob, InferenceError};
use neurocep::nn::{classify_stream, NnError};
use neurocep::purenn::purenn_cross_validate;
use neurocep::training::{all_folds, cross_validate, first_query_time, ModelKind, QueryModel, TrainConfig, TrainError};
use neurocep::{parse_ruleset, pretty_print, EventKey, EventStream, Polarity, RuleSet};

#[derive(Debug, Parser)]
#[command(
    name = "neurocep",
    version,
    about = "Probabilistic event-calculus CEP with end-to-end trainable event classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a rule file and print its canonical form.
    Parse {
        #[arg(long)]
        rules: PathBuf,
    },
    /// Generate a synthetic dataset (feature CSVs, manifest and rules).
    Synth(SynthArgs),
    /// Train the hybrid model with cross-validation.
    Train(TrainArgs),
    /// Train the PureNN baseline with cross-validation.
    Baseline(TrainArgs),
    /// Per-step start/end/holdsAt probabilities as JSON lines.
    Infer(InferArgs),
    /// Exact query probability by enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    fluents: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 4)]
    max_duration: usize,
    /// Window written into the generated rules file.
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Window applied to every rule.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    window: u64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 750)]
    points: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Negatives per positive training point.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `all` or a comma-separated list of test folds.
    #[arg(long, default_value = "all")]
    folds: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = neurocep::nn::DEFAULT_HIDDEN)]
    hidden: usize,
    /// Directory for metrics.json and per-fold checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature CSV; all sequences are concatenated in file order.
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    /// Override every rule's window.
    #[arg(long)]
    window: Option<usize>,
    /// Initial holdsAt probability.
    #[arg(long, default_value_t = 0.0)]
    h0: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Start,
    End,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    fluent: String,
    #[arg(long)]
    t: usize,
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Usage(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Usage(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFiniteGradient => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Nn(n) => n.into(),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse { rules } => cmd_parse(&rules),
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => cmd_train(&args, ModelKind::Hybrid),
        Command::Baseline(args) => cmd_train(&args, ModelKind::Purenn),
        Command::Infer(args) => cmd_infer(&args),
        Command::Oracle(args) => cmd_oracle(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn read_rules(path: &Path) -> Result<RuleSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_ruleset(&text).map_err(|e| {
        let span = e.span();
        CliError::Usage(format!("{}:{}:{}: {}", path.display(), span.line, span.column, e))
    })
}

fn cmd_parse(rules: &Path) -> Result<(), CliError> {
    print!("{}", pretty_print(&read_rules(rules)?));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.window < 2 {
        return Err(CliError::Usage("window must be at least 2".into()));
    }
    let cfg = SynthConfig {
        classes: args.classes,
        fluents: args.fluents,
        per_class: args.per_class,
        dim: args.dim,
        noise: args.noise,
        max_duration: args.max_duration,
        seed: args.seed,
    };
    let data = synth_generate(&cfg)?;
    let manifest = data.write(&args.out)?;
    let rules_path = args.out.join("rules.cep");
    let rules = pretty_print(&synth_ruleset(args.classes, args.fluents, args.window));
    std::fs::write(&rules_path, rules).map_err(|e| io_error(&rules_path, e))?;
    println!("{}", json!({ "manifest": manifest, "rules": rules_path, "files": data.manifest.files.len() }));
    Ok(())
}

fn parse_folds(text: &str) -> Result<Vec<u32>, CliError> {
    if text == "all" {
        return Ok(all_folds());
    }
    let folds: Vec<u32> = text
        .split(',')
        .map(|s| s.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("invalid --folds `{text}`")))?;
    if folds.is_empty() || folds.iter().any(|f| !(1..=neurocep::dataio::NUM_FOLDS).contains(f)) {
        return Err(CliError::Usage(format!("folds must lie in 1..={}", neurocep::dataio::NUM_FOLDS)));
    }
    Ok(folds)
}

fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("CEP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(available),
        _ => available,
    }
}

fn cmd_train(args: &TrainArgs, model: ModelKind) -> Result<(), CliError> {
    let rs = read_rules(&args.rules)?;
    let data = Dataset::load(&args.manifest)?;
    if data.manifest.classes.len() != rs.num_classes() {
        return Err(CliError::Usage(format!(
            "manifest has {} classes, rules declare {}",
            data.manifest.classes.len(),
            rs.num_classes()
        )));
    }
    let cfg = TrainConfig {
        epochs: args.epochs,
        points_per_epoch: args.points,
        window: args.window as usize,
        ratio: args.ratio,
        lr: args.lr,
        hidden: args.hidden,
        threshold: args.threshold,
        seed: args.seed,
    };
    let folds = parse_folds(&args.folds)?;
    let threads = worker_count();

    let (report, checkpoints): (_, Vec<Checkpoint>) = match model {
        ModelKind::Hybrid => {
            let (report, params) = cross_validate(&data, &rs, &cfg, &folds, threads)?;
            (report, params.iter().map(|p| Checkpoint::hybrid(p, cfg.seed)).collect())
        }
        ModelKind::Purenn => {
            let (report, params) = purenn_cross_validate(&data, &rs, &cfg, &folds, threads)?;
            (report, params.iter().map(|p| Checkpoint::purenn(p, cfg.seed)).collect())
        }
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numeric(e.to_string()))?;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
        let tag = match model {
            ModelKind::Hybrid => "hybrid",
            ModelKind::Purenn => "purenn",
        };
        for (fold, ck) in folds.iter().zip(&checkpoints) {
            ck.save(out.join(format!("{tag}-fold{fold}.json")))?;
        }
        let path = out.join(format!("{tag}-metrics.json"));
        std::fs::write(&path, format!("{text}\n")).map_err(|e| io_error(&path, e))?;
    }
    println!("{text}");
    Ok(())
}

struct Loaded {
    rs: RuleSet,
    stream: EventStream,
    checkpoint: Checkpoint,
}

fn load_inputs(checkpoint: &Path, stream: &Path, rules: &Path, window: Option<usize>) -> Result<Loaded, CliError> {
    let mut rs = read_rules(rules)?;
    if let Some(w) = window {
        rs = rs.with_window(w);
        if let Some(v) = rs.validate().first() {
            return Err(CliError::Usage(v.to_string()));
        }
    }
    let checkpoint = Checkpoint::load(checkpoint)?;
    let fragments = load_features_csv(stream)?;
    let parts: Vec<EventStream> = fragments.into_iter().map(|f| f.stream).collect();
    let stream = EventStream::concat(&parts).map_err(|e| CliError::Usage(e.to_string()))?;
    if stream.dim() != checkpoint.dim {
        return Err(CliError::Usage(format!(
            "stream has dimension {}, checkpoint expects {}",
            stream.dim(),
            checkpoint.dim
        )));
    }
    if rs.num_classes() != checkpoint.classes {
        return Err(CliError::Usage(format!(
            "rules declare {} classes, checkpoint outputs {}",
            rs.num_classes(),
            checkpoint.classes
        )));
    }
    Ok(Loaded { rs, stream, checkpoint })
}

/// Start/end probability of every event key at every step; `None` before
/// the key's first full window.
fn event_series(loaded: &Loaded) -> Result<Vec<Vec<Option<f64>>>, CliError> {
    let Loaded { rs, stream, checkpoint } = loaded;
    let dists = classify_stream(&checkpoint.frame, stream)?;
    let keys = rs.event_keys();
    match checkpoint.model {
        ModelKind::Hybrid => keys
            .iter()
            .map(|key| {
                let rule = rs.rule(*key).expect("validated ruleset has every key");
                (0..stream.len())
                    .map(|t| if t < rule.first_anchor() { Ok(None) } else { Ok(Some(pattern_prob(&dists, rule, t)?)) })
                    .collect::<Result<Vec<_>, CliError>>()
            })
            .collect(),
        ModelKind::Purenn => {
            let params = checkpoint.purenn_params().expect("validated purenn checkpoint");
            let start = first_query_time(rs).max(params.window - 1);
            let mut series = vec![vec![None; stream.len()]; keys.len()];
            for t in start..stream.len() {
                let probs = params.event_probs(&dists, t, rs).map_err(CliError::from)?;
                for (row, p) in series.iter_mut().zip(probs) {
                    row[t] = Some(p);
                }
            }
            Ok(series)
        }
    }
}

fn cmd_infer(args: &InferArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.h0) {
        return Err(CliError::Usage("--h0 must lie in [0,1]".into()));
    }
    let loaded = load_inputs(&args.checkpoint, &args.stream, &args.rules, args.window)?;
    let rs = &loaded.rs;
    let keys = rs.event_keys();
    let series = event_series(&loaded)?;
    let row_of = |key: EventKey| keys.iter().position(|k| *k == key).expect("key listed");

    let holds: Vec<Vec<f64>> = (0..rs.num_fluents())
        .map(|f| {
            let unwrap = |kind| {
                let key = EventKey { kind, fluent: neurocep::FluentId(f) };
                series[row_of(key)].iter().map(|p| p.unwrap_or(0.0)).collect::<Vec<f64>>()
            };
            filter_series(&unwrap(Polarity::Start), &unwrap(Polarity::End), args.h0).0
        })
        .collect();

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for t in 0..loaded.stream.len() {
        let mut start = Map::new();
        let mut end = Map::new();
        let mut holds_at = Map::new();
        for (f, name) in rs.fluents.iter().enumerate() {
            let fluent = neurocep::FluentId(f);
            start.insert(name.clone(), json!(series[row_of(EventKey { kind: Polarity::Start, fluent })][t]));
            end.insert(name.clone(), json!(series[row_of(EventKey { kind: Polarity::End, fluent })][t]));
            holds_at.insert(name.clone(), json!(holds[f][t]));
        }
        let line = json!({ "t": t, "start": Value::Object(start), "end": Value::Object(end), "holds": Value::Object(holds_at) });
        writeln!(out, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let loaded = load_inputs(&args.checkpoint, &args.stream, &args.rules, args.window)?;
    if loaded.checkpoint.model != ModelKind::Hybrid {
        return Err(CliError::Usage("oracle requires a hybrid checkpoint".into()));
    }
    let rs = &loaded.rs;
    let fluent =
        rs.fluent_id(&args.fluent).ok_or_else(|| CliError::Usage(format!("unknown fluent `{}`", args.fluent)))?;
    let kind = match args.kind {
        Kind::Start => Polarity::Start,
        Kind::End => Polarity::End,
    };
    let key = EventKey { kind, fluent };
    let dists = classify_stream(&loaded.checkpoint.frame, &loaded.stream)?;
    let exact = enumerate_oracle(&dists, key, args.t, rs)?;
    let closed_form = pattern_prob(&dists, rs.rule(key).expect("validated ruleset has every key"), args.t)?;
    println!(
        "{}",
        json!({ "kind": kind.keyword(), "fluent": args.fluent, "t": args.t, "prob": exact, "closed_form": closed_form })
    );
    Ok(())
}
