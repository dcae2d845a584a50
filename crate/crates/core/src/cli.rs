//! The `knn-calibrate` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calib::{factor_value, ModulatingFactor};
use crate::embedstore::{build_store, load_embeddings, load_store, save_store, EmbeddingStore, FileFormat, Unlabeled};
use crate::error::{Error, Result};
use crate::knn::Metric;
use crate::model::{Architecture, ClassifierParams};
use crate::pipeline::{
    evaluate_split, parse_pseudo_labels, pseudo_label, sweep, train_calibrated, Mode, RunConfig, SweepGrid,
    SweepResult, DEFAULT_SEED,
};

pub const JSON_SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "knn-calibrate",
    version,
    about = "kNN-augmented classification over precomputed embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize raw embeddings (TSV or binary) into a .femb store.
    BuildStore(BuildStoreArgs),
    /// Evaluate the kNN classifier alone.
    KnnEval(KnnEvalArgs),
    /// Train the classifier, with kNN-calibrated loss in union-all mode.
    Train(TrainArgs),
    /// Evaluate trained parameters under a prediction mode.
    Eval(EvalArgs),
    /// Label unlabeled embeddings with a trained classifier.
    PseudoLabel(PseudoLabelArgs),
    /// Grid-search k, tau, lambda and factor parameters on a dev set.
    Sweep(SweepArgs),
    /// Emit the (p, f(p)) curve of a modulating factor as TSV.
    FactorCurve(FactorCurveArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FactorKind {
    Focal,
    Nll,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchKind {
    Linear,
    Hidden,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Tsv,
    Binary,
}

#[derive(Args, Debug, Clone)]
struct Shared {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Machine-readable JSON on stdout.
    #[arg(long)]
    json: bool,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = FactorKind::Focal)]
    factor: FactorKind,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value = "union-all")]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = ArchKind::Linear)]
    arch: ArchKind,
    /// Hidden width for --arch hidden (defaults to the input dimension).
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct Schedule {
    #[arg(long, default_value_t = 1000)]
    max_steps: u64,
    #[arg(long, default_value_t = 100)]
    eval_every: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    grad_accum: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Defaults to 10% of --max-steps.
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
}

#[derive(Args, Debug)]
struct BuildStoreArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Replace labels with those in a pseudo-label TSV.
    #[arg(long)]
    labels_from: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct KnnEvalArgs {
    /// Datastore to retrieve from.
    #[arg(long)]
    store: PathBuf,
    /// Labeled queries.
    #[arg(long)]
    eval: PathBuf,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training log as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Leave-one-out prior table as TSV.
    #[arg(long)]
    priors_out: Option<PathBuf>,
    #[command(flatten)]
    schedule: Schedule,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    params: PathBuf,
    /// Datastore for kNN modes (usually the training store).
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct PseudoLabelArgs {
    #[arg(long)]
    params: PathBuf,
    /// Embeddings to label; any labels in the file are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Pseudo-label TSV: `<row><TAB><label><TAB><confidence>`.
    #[arg(long)]
    output: PathBuf,
    /// Also write the pseudo-labeled datastore.
    #[arg(long)]
    store_out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// JSON object of arrays: k, tau, lambda, gamma, alpha.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Rows shown in the human-readable table.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[command(flatten)]
    schedule: Schedule,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct FactorCurveArgs {
    #[arg(long, value_enum)]
    kind: FactorKind,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 101)]
    points: usize,
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: u32,
    command: &'a str,
    #[serde(flatten)]
    body: T,
}

fn emit_json<T: Serialize>(out: &mut dyn Write, command: &str, body: T) -> CliResult<()> {
    let env = Envelope {
        schema: JSON_SCHEMA_VERSION,
        command,
        body,
    };
    let text = serde_json::to_string(&env).map_err(Error::from)?;
    writeln!(out, "{text}").map_err(stdout_error)?;
    Ok(())
}

fn stdout_error(e: std::io::Error) -> Failure {
    Failure::Run(Error::io("<stdout>", e))
}

fn factor_of(kind: FactorKind, gamma: f64, alpha: f64) -> ModulatingFactor {
    match kind {
        FactorKind::Focal => ModulatingFactor::Focal { gamma },
        FactorKind::Nll => ModulatingFactor::Nll { alpha },
    }
}

fn config_from(shared: &Shared, schedule: Option<&Schedule>, dim_hint: usize) -> CliResult<RunConfig> {
    let architecture = match shared.arch {
        ArchKind::Linear => Architecture::Linear,
        ArchKind::Hidden => Architecture::OneHidden {
            hidden: shared.hidden.unwrap_or(dim_hint),
        },
    };
    let mut config = RunConfig {
        k: shared.k,
        tau: shared.tau,
        lambda: shared.lambda,
        metric: shared.metric,
        factor: factor_of(shared.factor, shared.gamma, shared.alpha),
        mode: shared.mode,
        seed: shared.seed,
        architecture,
        ..RunConfig::default()
    };
    if let Some(s) = schedule {
        config.max_steps = s.max_steps;
        config.eval_every = s.eval_every;
        config.batch_size = s.batch_size;
        config.grad_accum = s.grad_accum;
        config.lr = s.lr;
        config.warmup_steps = s.warmup_steps;
        config.weight_decay = s.weight_decay;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

/// Binary files are loaded as stores verbatim; TSV files are normalized.
fn open_store(path: &Path) -> Result<EmbeddingStore> {
    match FileFormat::from_path(path) {
        FileFormat::Binary => load_store(path),
        FileFormat::Tsv => build_store(load_embeddings(path, FileFormat::Tsv)?),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct StoreSummary {
    output: String,
    n: usize,
    dim: usize,
    classes: usize,
    label_histogram: Vec<usize>,
}

fn cmd_build_store(a: BuildStoreArgs, out: &mut dyn Write) -> CliResult<()> {
    let format = match a.format {
        Some(FormatArg::Tsv) => FileFormat::Tsv,
        Some(FormatArg::Binary) => FileFormat::Binary,
        None => FileFormat::from_path(&a.input),
    };
    let raw = load_embeddings(&a.input, format)?;
    let mut store = build_store(raw)?;
    if let Some(path) = &a.labels_from {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<u32> = parse_pseudo_labels(&text)?.into_iter().map(|(l, _)| l).collect();
        store = store.relabel(labels)?;
    }
    save_store(&store, &a.output)?;
    let summary = StoreSummary {
        output: a.output.display().to_string(),
        n: store.len(),
        dim: store.dim(),
        classes: store.class_count(),
        label_histogram: store.label_histogram(),
    };
    if a.json {
        emit_json(out, "build-store", summary)
    } else {
        writeln!(
            out,
            "wrote {} ({} rows, d={}, c={}); labels per class: {:?}",
            summary.output, summary.n, summary.dim, summary.classes, summary.label_histogram
        )
        .map_err(stdout_error)
    }
}

fn print_report(out: &mut dyn Write, title: &str, r: &crate::pipeline::EvalReport) -> CliResult<()> {
    let mut s = format!(
        "{title}\nexamples  {}\naccuracy  {:.4}\nmacro-F1  {:.4}\nmicro-F1  {:.4}\n\nclass  precision  recall  f1      support\n",
        r.n_examples, r.accuracy, r.macro_f1, r.micro_f1
    );
    for (c, m) in r.per_class.iter().enumerate() {
        s += &format!(
            "{c:<5}  {:<9.4}  {:<6.4}  {:<6.4}  {}\n",
            m.precision, m.recall, m.f1, m.support
        );
    }
    write!(out, "{s}").map_err(stdout_error)
}

fn cmd_knn_eval(a: KnnEvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let store = open_store(&a.store)?;
    let eval = open_store(&a.eval)?;
    let mut config = config_from(&a.shared, None, store.dim())?;
    config.mode = Mode::KnnOnly;
    let params = ClassifierParams::zeros(Architecture::Linear, store.dim(), store.class_count())?;
    let report = evaluate_split(&config, &params, &store, &eval)?;
    if a.shared.json {
        emit_json(out, "knn-eval", &report)
    } else {
        print_report(
            out,
            &format!(
                "knn-only (k={}, tau={}, metric={})",
                config.k, config.tau, config.metric
            ),
            &report,
        )
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a RunConfig,
    best_step: u64,
    effective_k: usize,
    effective_prior_k: usize,
    records: &'a [crate::pipeline::LogRecord],
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let train = open_store(&a.train)?;
    let dev = open_store(&a.dev)?;
    let config = config_from(&a.shared, Some(&a.schedule), train.dim())?;
    let trained = train_calibrated(&config, &train, &dev)?;
    trained.params.save(&a.out)?;
    if let Some(path) = &a.log {
        write_file(path, &trained.log.to_jsonl())?;
    }
    if let Some(path) = &a.priors_out {
        trained.priors.save(path)?;
    }
    if a.shared.json {
        return emit_json(
            out,
            "train",
            TrainSummary {
                config: &config,
                best_step: trained.log.best_step,
                effective_k: trained.log.effective_k,
                effective_prior_k: trained.log.effective_prior_k,
                records: &trained.log.records,
            },
        );
    }
    let mut s = format!(
        "mode {} | k={} (effective {}) tau={} lambda={} factor={:?}\nstep   train_loss  dev_acc  dev_macro_f1  lr\n",
        config.mode, config.k, trained.log.effective_k, config.tau, config.lambda, config.factor
    );
    for r in &trained.log.records {
        s += &format!(
            "{:<6} {:<11.5} {:<8.4} {:<13.4} {:.3e}\n",
            r.step, r.train_loss, r.dev_accuracy, r.dev_macro_f1, r.lr
        );
    }
    s += &format!(
        "best checkpoint at step {} written to {}\n",
        trained.log.best_step,
        a.out.display()
    );
    write!(out, "{s}").map_err(stdout_error)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let params = ClassifierParams::load(&a.params)?;
    let store = open_store(&a.store)?;
    let eval = open_store(&a.eval)?;
    let config = config_from(&a.shared, None, store.dim())?;
    let report = evaluate_split(&config, &params, &store, &eval)?;
    if a.shared.json {
        emit_json(out, "eval", &report)
    } else {
        print_report(out, &format!("{} (lambda={})", config.mode, config.lambda), &report)
    }
}

#[derive(Serialize)]
struct PseudoSummary {
    output: String,
    n: usize,
    label_histogram: Vec<usize>,
    mean_confidence: f64,
}

fn cmd_pseudo_label(a: PseudoLabelArgs, out: &mut dyn Write) -> CliResult<()> {
    let params = ClassifierParams::load(&a.params)?;
    let raw = load_embeddings(&a.input, FileFormat::from_path(&a.input))?;
    let labeled = pseudo_label(&params, &Unlabeled::from(&raw))?;
    write_file(&a.output, &labeled.to_tsv())?;
    if let Some(path) = &a.store_out {
        save_store(&labeled.store, path)?;
    }
    let summary = PseudoSummary {
        output: a.output.display().to_string(),
        n: labeled.store.len(),
        label_histogram: labeled.store.label_histogram(),
        mean_confidence: labeled.confidences.iter().sum::<f64>() / labeled.confidences.len() as f64,
    };
    if a.json {
        emit_json(out, "pseudo-label", summary)
    } else {
        writeln!(
            out,
            "labeled {} rows into {}; per class {:?}; mean confidence {:.4}",
            summary.n, summary.output, summary.label_histogram, summary.mean_confidence
        )
        .map_err(stdout_error)
    }
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    grid: &'a SweepGrid,
    results: &'a [SweepResult],
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let train = open_store(&a.train)?;
    let dev = open_store(&a.dev)?;
    let base = config_from(&a.shared, Some(&a.schedule), train.dim())?;
    let grid = match &a.grid {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => SweepGrid::default(),
    };
    let results = sweep(&base, &grid, &train, &dev)?;
    if a.shared.json {
        return emit_json(
            out,
            "sweep",
            SweepSummary {
                grid: &grid,
                results: &results,
            },
        );
    }
    let mut s = format!(
        "{} configurations, mode {}\nrank  k     eff_k  tau     lambda  factor                   dev_acc  dev_macro_f1\n",
        results.len(),
        base.mode
    );
    for (rank, r) in results.iter().take(a.top).enumerate() {
        s += &format!(
            "{:<5} {:<5} {:<6} {:<7} {:<7} {:<24} {:<8.4} {:.4}\n",
            rank + 1,
            r.config.k,
            r.effective_k,
            r.config.tau,
            r.config.lambda,
            format!("{:?}", r.config.factor),
            r.dev_accuracy,
            r.dev_macro_f1
        );
    }
    write!(out, "{s}").map_err(stdout_error)
}

/// `points` values of `f(p)` with `p` evenly spaced on `[0, 1]`.
pub fn factor_curve(factor: ModulatingFactor, points: usize) -> Result<Vec<(f64, f64)>> {
    if points < 2 {
        return Err(Error::InvalidParameter("points must be at least 2".into()));
    }
    factor.validate()?;
    (0..points)
        .map(|i| {
            let p = i as f64 / (points - 1) as f64;
            Ok((p, factor_value(factor, p)?))
        })
        .collect()
}

#[derive(Serialize)]
struct CurvePoint {
    p: f64,
    f: f64,
}

#[derive(Serialize)]
struct CurveSummary {
    factor: ModulatingFactor,
    points: Vec<CurvePoint>,
}

fn cmd_factor_curve(a: FactorCurveArgs, out: &mut dyn Write) -> CliResult<()> {
    let factor = factor_of(a.kind, a.gamma, a.alpha);
    let curve = factor_curve(factor, a.points).map_err(|e| Failure::Usage(e.to_string()))?;
    if a.json {
        let points = curve.into_iter().map(|(p, f)| CurvePoint { p, f }).collect();
        return emit_json(out, "factor-curve", CurveSummary { factor, points });
    }
    let mut s = String::from("p\tf\n");
    for (p, f) in curve {
        s += &format!("{p}\t{f}\n");
    }
    write!(out, "{s}").map_err(stdout_error)
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::BuildStore(a) => cmd_build_store(a, out),
        Command::KnnEval(a) => cmd_knn_eval(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::PseudoLabel(a) => cmd_pseudo_label(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::FactorCurve(a) => cmd_factor_curve(a, out),
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(
                err,
                "knn-calibrate: usage error: {msg}\n\nRun 'knn-calibrate --help' for usage."
            );
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "knn-calibrate: error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
