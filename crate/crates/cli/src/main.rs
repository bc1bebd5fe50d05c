//! `vulntrans`: command-line driver for translation-based vulnerability
//! prediction.

mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vulntrans_core::abstraction::{abstract_function, to_sequences, SequenceMeta};
use vulntrans_core::baselines::{run_baseline, Technique};
use vulntrans_core::corpus::{corpus_to_string, generate_synthetic_corpus, load_corpus, PlantedSignal};
use vulntrans_core::cparse::{extract_functions, tokenize};
use vulntrans_core::evaluate::{run_experiment, train_on_material, write_reports_csv, write_reports_json};
use vulntrans_core::pairing::{build_training_pairs, label_material};
use vulntrans_core::predict::{predict_component, predict_release};
use vulntrans_core::seq2seq::{load_model, model_to_bytes, Optimizer};
use vulntrans_core::{ComponentRecord, Corpus, Error, EvaluationReport, SequenceRole, Setting};

use config::{Profile, RunConfig};

/// Failure of a command: bad usage/input (exit 1) or a pipeline error.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_user_error() => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "vulntrans", version, about = "Vulnerability prediction by learning to translate vulnerable code into its fix")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for every random choice [default: config file, else 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file with optional [model], [pairing], [synth] and [baseline] tables
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Model-size and training-schedule preset [default: config file, else desk]
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Worker threads; 1 guarantees bit-identical outputs
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic release corpus
    Synth(SynthArgs),
    /// Validate a corpus file and rewrite it in canonical form
    Ingest(IngestArgs),
    /// Print the abstracted sequences of every function in a C file
    Abstract(AbstractArgs),
    /// Emit the training pairs of one release as `kind<TAB>input<TAB>target` lines
    Pair(PairArgs),
    /// Train a model on one release and write a checkpoint
    Train(TrainArgs),
    /// Predict components with a trained model, one JSON object per component
    Predict(PredictArgs),
    /// Run the release-by-release experiment with the translation model
    Evaluate(EvaluateArgs),
    /// Run the release-by-release experiment with a baseline technique
    Baseline(BaselineArgs),
    /// Print one token per line as `KIND<TAB>text` (debugging aid)
    DumpTokens(DumpTokensArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlantedArg {
    None,
    Token,
    Call,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output corpus file
    #[arg(short, long)]
    output: PathBuf,
    /// Number of releases [default: 4]
    #[arg(long)]
    releases: Option<usize>,
    /// Components per release [default: 60]
    #[arg(long)]
    components: Option<usize>,
    /// Share of vulnerable components per release [default: 0.2]
    #[arg(long)]
    vuln_fraction: Option<f64>,
    /// Zipf exponent for template choice [default: 1.0]
    #[arg(long)]
    skew: Option<f64>,
    /// Mean days from a vulnerability's release to its detection [default: 60]
    #[arg(long)]
    lag_days: Option<i64>,
    /// Days between releases [default: 90]
    #[arg(long)]
    spacing_days: Option<i64>,
    /// Probability a vulnerable component persists unfixed [default: 0.25]
    #[arg(long)]
    persistence: Option<f64>,
    /// Plant a feature perfectly correlated with vulnerability [default: none]
    #[arg(long, value_enum)]
    planted: Option<PlantedArg>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Corpus file to validate
    #[arg(short, long)]
    input: PathBuf,
    /// Canonical output file
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct AbstractArgs {
    /// C source file
    #[arg(short, long)]
    input: PathBuf,
    /// Output file [default: stdout]
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Prefix every sequence with `function#chunk<TAB>`
    #[arg(long)]
    annotate: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SettingArg {
    Clean,
    Realistic,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Clean => Setting::Clean,
            SettingArg::Realistic => Setting::Realistic,
        }
    }
}

#[derive(Debug, Args)]
struct ReleaseArgs {
    /// Corpus file
    #[arg(long)]
    corpus: PathBuf,
    /// Training release, by name or zero-based index
    #[arg(long, default_value = "0")]
    release: String,
    /// Which labels the training material trusts
    #[arg(long, value_enum, default_value = "clean")]
    setting: SettingArg,
}

#[derive(Debug, Args)]
struct PairArgs {
    #[command(flatten)]
    release: ReleaseArgs,
    /// Output file [default: stdout]
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Non-vulnerable identity pairs kept per vulnerable pair [default: 5]
    #[arg(long)]
    non_vuln_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

/// Overrides for the model configuration; unset flags keep the profile or
/// config-file value.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Recurrent units per layer [profile: desk 32, paper 256]
    #[arg(long)]
    hidden_units: Option<usize>,
    /// Embedding width [profile: desk 32, paper 256]
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Step budget [profile: desk 5000, paper 50000]
    #[arg(long)]
    max_steps: Option<usize>,
    /// Steps between validation checks [profile: desk 500, paper 5000]
    #[arg(long)]
    iteration_steps: Option<usize>,
    /// Validation checks without improvement before stopping [default: 1]
    #[arg(long)]
    patience: Option<usize>,
    /// Step size [default: 0.01]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Pairs per step [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Update rule [default: adam]
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Longest decoded sequence [default: 64]
    #[arg(long)]
    max_decode_length: Option<usize>,
    /// Non-vulnerable identity pairs kept per vulnerable pair [default: 5]
    #[arg(long)]
    non_vuln_ratio: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    release: ReleaseArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint file to write
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Corpus whose release should be predicted
    #[arg(long, requires = "release", conflicts_with = "files")]
    corpus: Option<PathBuf>,
    /// Release to predict, by name or zero-based index
    #[arg(long, requires = "corpus")]
    release: Option<String>,
    /// C source files to predict
    #[arg(required_unless_present = "corpus")]
    files: Vec<PathBuf>,
    /// Output file [default: stdout]
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Corpus file
    #[arg(long)]
    corpus: PathBuf,
    /// Which labels the training material trusts
    #[arg(long, value_enum, default_value = "clean")]
    setting: SettingArg,
    /// Report format
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Output file [default: stdout]
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    report: ReportArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TechniqueArg {
    Metrics,
    Imports,
    Calls,
    Textmining,
}

impl From<TechniqueArg> for Technique {
    fn from(t: TechniqueArg) -> Self {
        match t {
            TechniqueArg::Metrics => Technique::SoftwareMetrics,
            TechniqueArg::Imports => Technique::Imports,
            TechniqueArg::Calls => Technique::FunctionCalls,
            TechniqueArg::Textmining => Technique::TextMining,
        }
    }
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    report: ReportArgs,
    /// Feature family
    #[arg(long, value_enum)]
    technique: TechniqueArg,
    /// Frequency bins for text mining [default: 10]
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Args)]
struct DumpTokensArgs {
    /// C source file
    #[arg(short, long)]
    input: PathBuf,
}

/// Writes to a temporary file next to `path` and renames it into place.
fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::from(e.error))?;
    Ok(())
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(path) => atomic_write(path, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn read_input(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn open_corpus(path: &Path) -> CliResult<Corpus> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("corpus file {} does not exist", path.display())));
    }
    Ok(load_corpus(path)?)
}

fn release_index(corpus: &Corpus, release: &str) -> CliResult<usize> {
    corpus
        .release_index(release)
        .or_else(|| release.parse::<usize>().ok().filter(|&i| i < corpus.releases.len()))
        .ok_or_else(|| CliError::Usage(format!("no release named or numbered {release:?}")))
}

fn apply_model_args(cfg: &mut RunConfig, args: &ModelArgs) -> CliResult {
    let m = &mut cfg.model;
    if let Some(v) = args.hidden_units {
        m.hidden_units = v;
    }
    if let Some(v) = args.embedding_dim {
        m.embedding_dim = v;
    }
    if let Some(v) = args.max_steps {
        m.max_steps = v;
    }
    if let Some(v) = args.iteration_steps {
        m.iteration_steps = v;
    }
    if let Some(v) = args.patience {
        m.patience = v;
    }
    if let Some(v) = args.learning_rate {
        m.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        m.batch_size = v;
    }
    if let Some(v) = args.optimizer {
        m.optimizer = match v {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        };
    }
    if let Some(v) = args.max_decode_length {
        m.max_decode_length = v;
    }
    if let Some(v) = args.non_vuln_ratio {
        cfg.pairing.non_vuln_ratio = v;
    }
    cfg.model.validate()?;
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, args: &SynthArgs) -> CliResult {
    let mut spec = cfg.synth.clone();
    if let Some(v) = args.releases {
        spec.n_releases = v;
    }
    if let Some(v) = args.components {
        spec.components_per_release = v;
    }
    if let Some(v) = args.vuln_fraction {
        spec.vuln_fraction = v;
    }
    if let Some(v) = args.skew {
        spec.vocabulary_skew = v;
    }
    if let Some(v) = args.lag_days {
        spec.detection_lag_days = v;
    }
    if let Some(v) = args.spacing_days {
        spec.release_spacing_days = v;
    }
    if let Some(v) = args.persistence {
        spec.persistence = v;
    }
    if let Some(v) = args.planted {
        spec.planted_signal = match v {
            PlantedArg::None => None,
            PlantedArg::Token => Some(PlantedSignal::Token),
            PlantedArg::Call => Some(PlantedSignal::Call),
        };
    }
    let corpus = generate_synthetic_corpus(cfg.seed, &spec)?;
    atomic_write(&args.output, corpus_to_string(&corpus).as_bytes())?;
    eprintln!("{}", describe(&corpus));
    Ok(())
}

fn describe(corpus: &Corpus) -> String {
    let components: usize = corpus.releases.iter().map(|r| r.components.len()).sum();
    let vulnerable: usize = corpus.releases.iter().map(|r| r.components.iter().filter(|c| c.is_vulnerable()).count()).sum();
    format!(
        "{}: {} releases, {components} components ({vulnerable} vulnerable), {} vulnerabilities",
        corpus.project_name,
        corpus.releases.len(),
        corpus.vulnerabilities.len()
    )
}

fn cmd_ingest(args: &IngestArgs) -> CliResult {
    let corpus = open_corpus(&args.input)?;
    atomic_write(&args.output, corpus_to_string(&corpus).as_bytes())?;
    eprintln!("{}", describe(&corpus));
    Ok(())
}

fn cmd_abstract(args: &AbstractArgs) -> CliResult {
    let source = read_input(&args.input)?;
    let path = args.input.display().to_string();
    let mut out = String::new();
    for unit in extract_functions(&tokenize(&source)?)? {
        let (tokens, _) = abstract_function(&unit, None);
        let meta = SequenceMeta { source_path: &path, function_name: &unit.name, role: SequenceRole::NonVulnerable };
        let Ok(sequences) = to_sequences(&tokens, meta) else { continue };
        for seq in sequences {
            if args.annotate {
                let _ = write!(out, "{}#{}\t", seq.function_name, seq.chunk_index);
            }
            out.push_str(&seq.to_line());
        }
    }
    emit(args.output.as_deref(), out.as_bytes())
}

fn cmd_pair(cfg: &mut RunConfig, args: &PairArgs) -> CliResult {
    if let Some(v) = args.non_vuln_ratio {
        cfg.pairing.non_vuln_ratio = v;
    }
    let corpus = open_corpus(&args.release.corpus)?;
    let index = release_index(&corpus, &args.release.release)?;
    let material = corpus.training_set(index, args.release.setting.into())?;
    let (labeled, skipped) = label_material(&material);
    let pairs = build_training_pairs(&labeled, &cfg.pairing)?;
    let mut out = String::new();
    for pair in &pairs {
        out.push_str(&pair.to_tsv());
        out.push('\n');
    }
    emit(args.output.as_deref(), out.as_bytes())?;
    eprintln!("{} pairs from release {} ({skipped} unparseable components skipped)", pairs.len(), material.release);
    Ok(())
}

fn cmd_train(cfg: &mut RunConfig, args: &TrainArgs) -> CliResult {
    apply_model_args(cfg, &args.model)?;
    let corpus = open_corpus(&args.release.corpus)?;
    let index = release_index(&corpus, &args.release.release)?;
    let material = corpus.training_set(index, args.release.setting.into())?;
    let trained = train_on_material(&material, &cfg.model, &cfg.pairing)?;
    atomic_write(&args.output, &model_to_bytes(&trained.model))?;
    eprintln!(
        "trained on {} pairs ({} held out) for {} steps; kept step {}; vocabulary {}",
        trained.pairs - trained.validation_pairs,
        trained.validation_pairs,
        trained.state.step,
        trained.state.best_step,
        trained.model.vocabulary.len()
    );
    for point in &trained.state.validation_history {
        eprintln!(
            "  step {:>6}: exact match {:.3}, token accuracy {:.4}",
            point.step, point.score.exact_match, point.score.token_accuracy
        );
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> CliResult {
    if !args.model.is_file() {
        return Err(CliError::Usage(format!("model file {} does not exist", args.model.display())));
    }
    let model = load_model(&args.model)?;
    let verdicts = match (&args.corpus, &args.release) {
        (Some(corpus), Some(release)) => {
            let corpus = open_corpus(corpus)?;
            let index = release_index(&corpus, release)?;
            predict_release(&model, &corpus.releases[index])
        }
        _ => args
            .files
            .iter()
            .map(|path| {
                let source = read_input(path)?;
                let record = ComponentRecord::non_vulnerable(path.display().to_string(), source);
                Ok(predict_component(&model, &record))
            })
            .collect::<CliResult<Vec<_>>>()?,
    };
    let mut out = String::new();
    for v in &verdicts {
        out.push_str(&v.to_json());
        out.push('\n');
    }
    emit(args.output.as_deref(), out.as_bytes())
}

fn write_report(reports: &[EvaluationReport], args: &ReportArgs) -> CliResult {
    let mut buf = Vec::new();
    match args.format {
        FormatArg::Json => write_reports_json(reports, &mut buf)?,
        FormatArg::Csv => write_reports_csv(reports, &mut buf)?,
    }
    emit(args.output.as_deref(), &buf)?;
    for r in reports.iter().filter(|r| !r.is_ok()) {
        eprintln!(
            "warning: {} -> {} failed: {}",
            r.train_release,
            r.test_release,
            r.error.as_deref().unwrap_or("unknown error")
        );
    }
    Ok(())
}

fn cmd_evaluate(cfg: &mut RunConfig, args: &EvaluateArgs) -> CliResult {
    apply_model_args(cfg, &args.model)?;
    let corpus = open_corpus(&args.report.corpus)?;
    let reports = run_experiment(&corpus, args.report.setting.into(), &cfg.model, &cfg.pairing)?;
    write_report(&reports, &args.report)
}

fn cmd_baseline(cfg: &mut RunConfig, args: &BaselineArgs) -> CliResult {
    if let Some(v) = args.bins {
        cfg.baseline.bins = v;
    }
    let corpus = open_corpus(&args.report.corpus)?;
    let reports = run_baseline(&corpus, args.technique.into(), args.report.setting.into(), &cfg.baseline)?;
    write_report(&reports, &args.report)
}

/// Escapes backslash and control characters so every token fits on one line.
fn escape_token(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn cmd_dump_tokens(args: &DumpTokensArgs) -> CliResult {
    let source = read_input(&args.input)?;
    let mut out = String::new();
    for tok in tokenize(&source)? {
        let _ = writeln!(out, "{}\t{}", tok.kind, escape_token(&tok.text));
    }
    emit(None, out.as_bytes())
}

fn run(cli: Cli) -> CliResult {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs as usize)
        .build_global()
        .map_err(|e| CliError::Core(Error::Io(std::io::Error::other(e))))?;
    let mut cfg = RunConfig::resolve(cli.global.config.as_deref(), cli.global.seed, cli.global.profile)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Abstract(a) => cmd_abstract(a),
        Command::Pair(a) => cmd_pair(&mut cfg, a),
        Command::Train(a) => cmd_train(&mut cfg, a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(&mut cfg, a),
        Command::Baseline(a) => cmd_baseline(&mut cfg, a),
        Command::DumpTokens(a) => cmd_dump_tokens(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
