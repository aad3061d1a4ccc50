//! `triage` command-line front end.
//!
//! Exit codes: 0 success or GO, 1 NO-GO, 2 usage or configuration error,
//! 3 data error (missing or malformed input files, failed training).

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use triage_core::codehealth::{
    analyze_bytes, composite_score, dialect_for_extension, Dialect, HealthScore, SubFactorVector,
};
use triage_core::config::Config;
use triage_core::costmodel::{simulate_policy, CostParams};
use triage_core::evaluation::{evaluate, pilot_gates, rq1_compare};
use triage_core::featurestore::{
    read_coverage, FeatureStore, FileError, SourceFile, StoreLock, UpdateSummary,
};
use triage_core::io::write_atomic;
use triage_core::outcomes::{generate_corpus, ingest_runs, Corpus, GeneratorConfig};
use triage_core::router::{
    train_classifier, FeatureTable, Policy, PolicyKind, Router, Thresholds, Tier, TierModel,
};
use triage_core::stats::{brunner_munzel, Alternative};
use triage_core::{Error, Result, SCHEMA_VERSION};

const EXIT_NO_GO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "triage",
    version,
    about = "Cost-aware routing of software engineering tasks to model tiers"
)]
struct Cli {
    /// TOML configuration file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the primary output here (atomically) instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute sub-factors and the composite health score of source files.
    Analyze {
        /// Files to analyze; `-` reads stdin.
        #[arg(required = true)]
        paths: Vec<String>,
        /// Override the extension-based dialect.
        #[arg(long)]
        dialect: Option<Dialect>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Maintain the per-file feature store.
    #[command(subcommand)]
    Store(StoreCommand),
    /// Route tasks from a JSON Lines task file.
    Route {
        task_file: PathBuf,
        #[arg(long, default_value = "heuristic")]
        policy: PolicyKind,
        /// Trained model, required by the classifier policy.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        thresholds: Option<Thresholds>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Train the tier classifier on a corpus with recorded outcomes.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate a synthetic corpus as JSON Lines.
    GenCorpus {
        #[arg(long)]
        n: Option<usize>,
        /// TOML file with generator parameters (same keys as the `[generator]` section).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Also write the feature store describing the generated files.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Validate a recorded-runs corpus and summarize it.
    Ingest { file: PathBuf },
    /// Bootstrap the realized cost of one policy.
    Simulate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "heuristic")]
        policy: PolicyKind,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        thresholds: Option<Thresholds>,
    },
    /// Compare routing policies against the oracle.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// `all` or a comma-separated list of policy names.
        #[arg(long, default_value = "all")]
        policies: String,
        /// Use this trained model instead of cross-fitting the classifier.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        thresholds: Option<Thresholds>,
    },
    /// Run the go/no-go gates on a pilot corpus.
    Pilot {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        thresholds: Option<Thresholds>,
    },
    /// Compare sub-factor classifiers against the composite score.
    Rq1 {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated top-k sizes.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Statistical utilities.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Subcommand)]
enum StoreCommand {
    /// Analyze changed files and commit them to the store.
    Update {
        #[arg(required = true)]
        paths: Vec<String>,
        /// JSON object mapping path to covered fraction.
        #[arg(long)]
        coverage: Option<PathBuf>,
        #[arg(long, default_value = "features.jsonl")]
        store: PathBuf,
        #[arg(long)]
        dialect: Option<Dialect>,
    },
    /// Look up stored records.
    Get {
        #[arg(required = true)]
        paths: Vec<String>,
        #[arg(long, default_value = "features.jsonl")]
        store: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum StatsCommand {
    /// Brunner–Munzel test and probability of superiority of X over Y.
    Bm {
        /// Numbers as a JSON array or separated by whitespace or commas.
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long, default_value = "two-sided")]
        alternative: Alternative,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Corpus in JSON Lines.
    #[arg(long)]
    corpus: PathBuf,
    /// Feature store; its records override inline file health.
    #[arg(long)]
    store: Option<PathBuf>,
    /// `light,standard,heavy` per-task costs.
    #[arg(long)]
    costs: Option<CostParams>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Format {
    Json,
    Text,
}

/// Adds `schema_version` to reports that do not carry one.
#[derive(Serialize)]
struct Versioned<T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn versioned<T: Serialize>(body: T) -> Versioned<T> {
    Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    }
}

struct Ctx {
    cfg: Config,
    out: Option<PathBuf>,
}

impl Ctx {
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => write_atomic(path, text.as_bytes()),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn emit_json<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.emit(&text)
    }

    fn costs(&self, flag: Option<CostParams>) -> CostParams {
        flag.unwrap_or(self.cfg.costs)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_USAGE } else { EXIT_DATA })
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.classifier.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = load_config(&cli)?;
    let ctx = Ctx { cfg, out: cli.out };
    match cli.command {
        Command::Analyze {
            paths,
            dialect,
            format,
        } => analyze(&ctx, &paths, dialect, format),
        Command::Store(StoreCommand::Update {
            paths,
            coverage,
            store,
            dialect,
        }) => store_update(&ctx, &paths, coverage.as_deref(), &store, dialect),
        Command::Store(StoreCommand::Get { paths, store }) => {
            let store = FeatureStore::load(&store)?;
            ctx.emit_json(&versioned(LookupReport {
                records: store.lookup(&paths),
            }))?;
            Ok(0)
        }
        Command::Route {
            task_file,
            policy,
            model,
            thresholds,
            store,
        } => route(
            &ctx,
            &task_file,
            policy,
            model.as_deref(),
            thresholds,
            store.as_deref(),
        ),
        Command::Train { data } => {
            let (corpus, table) = load_data(&data)?;
            let model =
                train_classifier(&corpus, &table, &ctx.cfg.classifier, &ctx.costs(data.costs))?;
            ctx.emit(&model.to_json()?)?;
            Ok(0)
        }
        Command::GenCorpus { n, params, store } => {
            gen_corpus(&ctx, n, params.as_deref(), store.as_deref())
        }
        Command::Ingest { file } => {
            let corpus = ingest_runs(&file)?;
            ctx.emit_json(&versioned(IngestSummary::of(&corpus)))?;
            Ok(0)
        }
        Command::Simulate {
            data,
            policy,
            trials,
            model,
            thresholds,
        } => {
            let (corpus, table) = load_data(&data)?;
            let policy = build_policy(&ctx, policy, model.as_deref(), thresholds)?;
            let report = simulate_policy(
                &corpus,
                &table,
                &policy,
                &ctx.costs(data.costs),
                ctx.cfg.seed,
                trials,
            )?;
            ctx.emit_json(&versioned(report))?;
            Ok(0)
        }
        Command::Evaluate {
            data,
            policies,
            model,
            thresholds,
        } => {
            let (corpus, table) = load_data(&data)?;
            let policies = parse_policies(&policies)?;
            let model = model.as_deref().map(load_model).transpose()?;
            let mut cfg = ctx.cfg.eval_config();
            if let Some(t) = thresholds {
                cfg.thresholds = t;
            }
            let report = evaluate(
                &corpus,
                &table,
                &policies,
                &ctx.costs(data.costs),
                &cfg,
                model.as_ref(),
            )?;
            ctx.emit(&report.to_json()?)?;
            eprint!("{}", report.summary_table());
            Ok(0)
        }
        Command::Pilot { data, thresholds } => {
            let (corpus, table) = load_data(&data)?;
            let mut cfg = ctx.cfg.pilot_config();
            if let Some(t) = thresholds {
                cfg.thresholds = t;
            }
            let report = pilot_gates(&corpus, &table, &ctx.costs(data.costs), &cfg)?;
            ctx.emit_json(&report)?;
            let gates = &report.gates;
            eprintln!(
                "cost gate {}, signal gate {}: {}",
                pass_word(gates.cost.passed),
                pass_word(gates.signal.passed),
                if gates.go { "GO" } else { "NO-GO" }
            );
            Ok(if gates.go { 0 } else { EXIT_NO_GO })
        }
        Command::Rq1 { data, k } => {
            let (corpus, table) = load_data(&data)?;
            let mut cfg = ctx.cfg.rq1_config();
            if let Some(k) = k {
                cfg.k_list = k;
            }
            let report = rq1_compare(&corpus, &table, &ctx.costs(data.costs), &cfg)?;
            ctx.emit_json(&report)?;
            Ok(0)
        }
        Command::Stats(StatsCommand::Bm { x, y, alternative }) => {
            let (xs, ys) = (read_numbers(&x)?, read_numbers(&y)?);
            ctx.emit_json(&versioned(brunner_munzel(&xs, &ys, alternative)?))?;
            Ok(0)
        }
        Command::Config => {
            ctx.emit(&ctx.cfg.to_toml_string()?)?;
            Ok(0)
        }
    }
}

fn pass_word(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "fail"
    }
}

fn load_data(data: &DataArgs) -> Result<(Corpus, FeatureTable)> {
    let corpus = ingest_runs(&data.corpus)?;
    let store = data.store.as_deref().map(FeatureStore::load).transpose()?;
    let table = FeatureTable::for_corpus(&corpus, store.as_ref());
    Ok((corpus, table))
}

fn load_model(path: &Path) -> Result<TierModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TierModel::from_json(&text)
}

fn build_policy(
    ctx: &Ctx,
    kind: PolicyKind,
    model: Option<&Path>,
    thresholds: Option<Thresholds>,
) -> Result<Policy> {
    Ok(match kind {
        PolicyKind::Heuristic => Policy::Heuristic(thresholds.unwrap_or(ctx.cfg.thresholds)),
        PolicyKind::Classifier => {
            let path =
                model.ok_or_else(|| Error::Config("the classifier policy needs --model".into()))?;
            Policy::Classifier(Box::new(load_model(path)?))
        }
        PolicyKind::Oracle => Policy::Oracle,
        PolicyKind::AlwaysLight => Policy::AlwaysLight,
        PolicyKind::AlwaysHeavy => Policy::AlwaysHeavy,
        PolicyKind::Random => Policy::Random { seed: ctx.cfg.seed },
    })
}

fn parse_policies(list: &str) -> Result<Vec<PolicyKind>> {
    if list.trim() == "all" {
        return Ok(PolicyKind::ALL.to_vec());
    }
    let mut kinds: Vec<PolicyKind> = list
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_>>()?;
    kinds.dedup();
    if kinds.is_empty() {
        return Err(Error::Config("no policies given".into()));
    }
    Ok(kinds)
}

#[derive(Serialize)]
struct FileReport {
    path: String,
    dialect: Dialect,
    sub_factors: SubFactorVector,
    score: HealthScore,
}

fn read_input(path: &str) -> Result<Vec<u8>> {
    if path == "-" {
        let mut buf = Vec::new();
        std::io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| Error::io("<stdin>", e))?;
        Ok(buf)
    } else {
        std::fs::read(path).map_err(|e| Error::io(path, e))
    }
}

fn dialect_of(path: &str, flag: Option<Dialect>) -> Dialect {
    flag.or_else(|| {
        Path::new(path)
            .extension()
            .and_then(|e| e.to_str())
            .and_then(dialect_for_extension)
    })
    .unwrap_or(Dialect::Brace)
}

fn analyze(ctx: &Ctx, paths: &[String], flag: Option<Dialect>, format: Format) -> Result<u8> {
    let mut files = Vec::with_capacity(paths.len());
    for path in paths {
        let dialect = dialect_of(path, flag);
        let sub_factors = analyze_bytes(&read_input(path)?, dialect).map_err(|e| match e {
            Error::Analysis(m) => Error::Analysis(format!("{path}: {m}")),
            other => other,
        })?;
        let score = composite_score(&sub_factors, &ctx.cfg.weights)?;
        files.push(FileReport {
            path: path.clone(),
            dialect,
            sub_factors,
            score,
        });
    }
    match format {
        Format::Json => ctx.emit_json(&versioned(AnalyzeReport { files }))?,
        Format::Text => ctx.emit(&analyze_table(&files))?,
    }
    Ok(0)
}

#[derive(Serialize)]
struct AnalyzeReport {
    files: Vec<FileReport>,
}

fn analyze_table(files: &[FileReport]) -> String {
    let width = files.iter().map(|f| f.path.len()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:<width$}  {:>5}  {:<11}  {:>6}  {:>5}  {:>7}  {:>5}  {:>4}  {:>5}  {:>5}  {:>5}\n",
        "path",
        "score",
        "band",
        "cc_max",
        "loc",
        "fn_len",
        "nest",
        "args",
        "dup",
        "short",
        "cc_avg"
    );
    for f in files {
        let v = &f.sub_factors;
        out.push_str(&format!(
            "{:<width$}  {:>5.2}  {:<11}  {:>6}  {:>5}  {:>7}  {:>5}  {:>4}  {:>5.2}  {:>5.2}  {:>5.2}\n",
            f.path,
            f.score.value,
            f.score.band.to_string(),
            v.cyclomatic_max,
            v.file_loc,
            v.function_length_max,
            v.nesting_depth_max,
            v.arg_count_max,
            v.duplication_ratio,
            v.identifier_shortness,
            v.cyclomatic_mean
        ));
    }
    out
}

#[derive(Serialize)]
struct StoreUpdateReport {
    store: PathBuf,
    #[serde(flatten)]
    summary: UpdateSummary,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    coverage_unknown_paths: Vec<String>,
}

fn store_update(
    ctx: &Ctx,
    paths: &[String],
    coverage: Option<&Path>,
    store_path: &Path,
    dialect: Option<Dialect>,
) -> Result<u8> {
    let coverage = coverage.map(read_coverage).transpose()?;
    let mut files = Vec::with_capacity(paths.len());
    let mut read_errors = Vec::new();
    for path in paths {
        match std::fs::read(path) {
            Ok(content) => files.push(SourceFile {
                dialect,
                ..SourceFile::new(path.clone(), content)
            }),
            Err(e) => read_errors.push(FileError {
                path: path.clone(),
                message: e.to_string(),
            }),
        }
    }
    let _lock = StoreLock::acquire(store_path)?;
    let mut store = FeatureStore::load_or_new(store_path, ctx.cfg.weights)?;
    let mut summary = store.update(&files, &ctx.cfg.weights)?;
    let coverage_unknown_paths = match &coverage {
        Some(map) => store.apply_coverage(map)?,
        None => Vec::new(),
    };
    store.save(store_path)?;
    summary.errors.extend(read_errors);
    summary.errors.sort_by(|a, b| a.path.cmp(&b.path));
    let failed = !summary.errors.is_empty();
    ctx.emit_json(&versioned(StoreUpdateReport {
        store: store_path.to_path_buf(),
        summary,
        coverage_unknown_paths,
    }))?;
    Ok(if failed { EXIT_DATA } else { 0 })
}

#[derive(Serialize)]
struct LookupReport {
    records: Vec<triage_core::featurestore::Lookup>,
}

#[derive(Serialize)]
struct RouteReport {
    policy: PolicyKind,
    decisions: Vec<triage_core::router::RoutingDecision>,
}

fn route(
    ctx: &Ctx,
    task_file: &Path,
    kind: PolicyKind,
    model: Option<&Path>,
    thresholds: Option<Thresholds>,
    store: Option<&Path>,
) -> Result<u8> {
    let policy = build_policy(ctx, kind, model, thresholds)?;
    let corpus = ingest_runs(task_file)?;
    let store = store.map(FeatureStore::load).transpose()?;
    let table = FeatureTable::for_corpus(&corpus, store.as_ref());
    let decisions = Router::new(&policy, &table).route_corpus(&corpus)?;
    ctx.emit_json(&versioned(RouteReport {
        policy: kind,
        decisions,
    }))?;
    Ok(0)
}

fn gen_corpus(
    ctx: &Ctx,
    n: Option<usize>,
    params: Option<&Path>,
    store: Option<&Path>,
) -> Result<u8> {
    let mut gen = match params {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let parsed: GeneratorConfig = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            GeneratorConfig {
                weights: ctx.cfg.weights,
                ..parsed
            }
        }
        None => ctx.cfg.generator_config(),
    };
    if let Some(n) = n {
        gen.n_tasks = n;
    }
    let synthetic = generate_corpus(&gen, ctx.cfg.seed)?;
    if let Some(path) = store {
        synthetic.store.save(path)?;
    }
    ctx.emit(&synthetic.corpus.to_jsonl())?;
    Ok(0)
}

#[derive(Serialize)]
struct TierSummary {
    tier: Tier,
    tasks_with_runs: usize,
    majority_pass_rate: Option<f64>,
}

#[derive(Serialize)]
struct IngestSummary {
    n_tasks: usize,
    total_runs: usize,
    complete_outcomes: bool,
    tiers: Vec<TierSummary>,
}

impl IngestSummary {
    fn of(corpus: &Corpus) -> Self {
        let tiers = Tier::ALL
            .iter()
            .map(|&tier| {
                let verdicts: Vec<bool> = corpus
                    .tasks()
                    .iter()
                    .filter_map(|t| t.verdict(tier).ok())
                    .map(|v| v.passed())
                    .collect();
                let passes = verdicts.iter().filter(|&&p| p).count();
                TierSummary {
                    tier,
                    tasks_with_runs: verdicts.len(),
                    majority_pass_rate: (!verdicts.is_empty())
                        .then(|| passes as f64 / verdicts.len() as f64),
                }
            })
            .collect();
        Self {
            n_tasks: corpus.len(),
            total_runs: corpus.total_runs(),
            complete_outcomes: corpus.has_complete_outcomes(),
            tiers,
        }
    }
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| {
                Error::Statistics(format!("{}: '{t}' is not a number", path.display()))
            })
        })
        .collect()
}
