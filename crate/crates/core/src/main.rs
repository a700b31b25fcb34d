use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use rolecluster::checkpoint::{self, CheckpointError};
use rolecluster::data::{load_corpus, write_split_manifest, LabelMap, NewsSample, Split};
use rolecluster::model::{ModelError, Variant};
use rolecluster::report::{self, ReportError, Table};
use rolecluster::sentiment::{
    load_lexicon, SentimentLexicon, DEFAULT_NEGATIVE_THRESHOLD, DEFAULT_POSITIVE_THRESHOLD,
};
use rolecluster::synthetic::{
    bundled_lexicon, parse_stopwords, synthetic_corpus_text, BUNDLED_CORPUS, BUNDLED_SEED,
    BUNDLED_SIZE, STOPWORDS_EN, STOPWORDS_ZH,
};
use rolecluster::tensor::{Precision, Scalar};
use rolecluster::train::{
    load_model, sweep_run, Evaluation, RunData, SweepParam, SweepRow, TrainConfig, TrainError,
    Trainer,
};
use rolecluster::verify;

/// Environment variable naming the directory that holds run directories.
const RUNS_ENV: &str = "ROLECLUSTER_RUNS";

#[derive(Parser)]
#[command(name = "rolecluster", version, about = "Fake news detection with comment role clustering")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and emit cluster reports.
    Eval(EvalArgs),
    /// Train once per value of K or alpha.
    Sweep(SweepArgs),
    /// Finite-difference check of every gradient rule.
    GradCheck(GradCheckArgs),
    /// Write a synthetic planted-signal corpus.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Corpus file (JSON lines). Defaults to the bundled synthetic corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Sentiment lexicon (token<TAB>valence). Defaults to the bundled one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_POSITIVE_THRESHOLD, allow_hyphen_values = true)]
    pos_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_NEGATIVE_THRESHOLD, allow_hyphen_values = true)]
    neg_threshold: f64,
    /// Stopword list for the top-terms report (repeatable). Defaults to the
    /// bundled English and Chinese lists.
    #[arg(long)]
    stopwords: Vec<PathBuf>,
    /// Terms listed per cluster.
    #[arg(long, default_value_t = 20)]
    top_terms: usize,
    /// Output directory. Defaults to a fresh directory under $ROLECLUSTER_RUNS
    /// (or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// word2vec-style text embeddings.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<Precision>,
    /// full, no_news, no_cluster, no_sentiment or cls_loss_only.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    news_hidden: Option<usize>,
    #[arg(long)]
    comment_hidden: Option<usize>,
    #[arg(long)]
    projection_dim: Option<usize>,
    #[arg(long)]
    classifier_hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Train, validation and test fractions, e.g. 0.7,0.1,0.2.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split_ratios: Option<Vec<f64>>,
    #[arg(long)]
    max_news_tokens: Option<usize>,
    #[arg(long)]
    max_comments: Option<usize>,
    #[arg(long)]
    max_comment_tokens: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from a `last.ckpt`; only --epochs is taken from the flags.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also save `last.ckpt` every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Split used for the cluster report and assignment export.
    #[arg(long, default_value = "test")]
    report_split: Split,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// k or alpha.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values. Defaults to the standard grid of the parameter.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Train values on parallel threads (results are identical).
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = BUNDLED_SIZE)]
    size: usize,
    #[arg(long, default_value_t = BUNDLED_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Exit code 2 for bad input, 1 for failures while running.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_)
            | TrainError::EmptySplit(_)
            | TrainError::VocabMismatch { .. }
            | TrainError::Data(_)
            | TrainError::Model(ModelError::Config(_)) => CliError::Usage(e.to_string()),
            TrainError::Checkpoint(CheckpointError::Io { .. }) => CliError::Runtime(e.to_string()),
            TrainError::Checkpoint(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn require_file(flag: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag}: file not found: {}", path.display())))
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Corpus, scorer and stopwords shared by the commands.
struct Inputs {
    labels: LabelMap,
    corpus: Vec<NewsSample>,
    corpus_name: String,
    corpus_sha256: String,
    lexicon: SentimentLexicon,
    lexicon_name: String,
    stopwords: HashSet<String>,
}

impl InputArgs {
    fn load(&self) -> CliResult<Inputs> {
        let (labels, corpus, corpus_name, corpus_sha256) = match &self.corpus {
            Some(p) => {
                require_file("--corpus", p)?;
                let bytes = fs::read(p).map_err(|e| io_err(p, e))?;
                let (labels, corpus) = load_corpus(p).map_err(|e| CliError::Usage(e.to_string()))?;
                (labels, corpus, p.display().to_string(), sha256_hex(&bytes))
            }
            None => {
                let (labels, corpus) = rolecluster::synthetic::bundled_corpus();
                (labels, corpus, "<bundled>".into(), sha256_hex(BUNDLED_CORPUS.as_bytes()))
            }
        };
        let (lexicon, lexicon_name) = match &self.lexicon {
            Some(p) => {
                require_file("--lexicon", p)?;
                let (lex, stats) = load_lexicon(p, self.pos_threshold, self.neg_threshold)
                    .map_err(|e| CliError::Usage(format!("--lexicon: {e}")))?;
                if stats.duplicates > 0 {
                    log::warn!("lexicon has {} repeated tokens; last value kept", stats.duplicates);
                }
                (lex, p.display().to_string())
            }
            None if self.pos_threshold == DEFAULT_POSITIVE_THRESHOLD
                && self.neg_threshold == DEFAULT_NEGATIVE_THRESHOLD =>
            {
                (bundled_lexicon(), "<bundled>".into())
            }
            None => {
                let (lex, _) = rolecluster::sentiment::parse_lexicon(
                    rolecluster::synthetic::BUNDLED_LEXICON,
                    self.pos_threshold,
                    self.neg_threshold,
                )
                .map_err(|e| CliError::Usage(format!("--pos-threshold/--neg-threshold: {e}")))?;
                (lex, "<bundled>".into())
            }
        };
        let stopwords = if self.stopwords.is_empty() {
            let mut s = parse_stopwords(STOPWORDS_EN);
            s.extend(parse_stopwords(STOPWORDS_ZH));
            s
        } else {
            let mut s = HashSet::new();
            for p in &self.stopwords {
                require_file("--stopwords", p)?;
                s.extend(parse_stopwords(&fs::read_to_string(p).map_err(|e| io_err(p, e))?));
            }
            s
        };
        Ok(Inputs {
            labels,
            corpus,
            corpus_name,
            corpus_sha256,
            lexicon,
            lexicon_name,
            stopwords,
        })
    }

    fn run_dir(&self, label: &str) -> CliResult<PathBuf> {
        let dir = match &self.out {
            Some(d) => d.clone(),
            None => {
                let root = std::env::var_os(RUNS_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                let stamp = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_millis());
                root.join(format!("{label}-{stamp}"))
            }
        };
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(dir)
    }
}

impl ConfigArgs {
    /// Defaults, then the config file, then explicit flags.
    fn resolve(&self) -> CliResult<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => {
                require_file("--config", p)?;
                let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("--config {}: {e}", p.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set! {
            epochs => epochs,
            batch_size => batch_size,
            learning_rate => learning_rate,
            alpha => alpha,
            weight_decay => weight_decay,
            seed => seed,
            precision => precision,
            variant => model.variant,
            clusters => model.clusters,
            embedding_dim => model.embedding_dim,
            news_hidden => model.news_hidden,
            comment_hidden => model.comment_hidden,
            projection_dim => model.projection_dim,
            classifier_hidden => model.classifier_hidden,
            dropout => model.dropout,
            max_news_tokens => caps.news_len,
            max_comments => caps.comments,
            max_comment_tokens => caps.comment_len,
        }
        if let Some(r) = &self.split_ratios {
            c.split_ratios = [r[0], r[1], r[2]];
        }
        if let Some(p) = &self.embeddings {
            require_file("--embeddings", p)?;
        }
        c.validate().map_err(CliError::from)?;
        Ok(c)
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: String,
    config: Option<&'a TrainConfig>,
    corpus: &'a str,
    corpus_sha256: &'a str,
    lexicon: &'a str,
    embeddings: Option<String>,
    seed: Option<u64>,
    started_unix: u64,
    finished_unix: u64,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

/// Tracks files written into a run directory.
struct RunDir {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl RunDir {
    fn new(dir: PathBuf) -> Self {
        RunDir {
            dir,
            artifacts: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn table(&mut self, name: &str, table: &Table) -> CliResult<()> {
        let p = self.path(name);
        Ok(table.write(&p)?)
    }

    fn text(&mut self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        Ok(report::write_text(&p, text)?)
    }

    fn manifest(mut self, mut manifest: RunManifest) -> CliResult<PathBuf> {
        self.artifacts.push("manifest.json".into());
        manifest.artifacts = self.artifacts;
        manifest.finished_unix = now();
        let p = self.dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        report::write_text(&p, &(json + "\n"))?;
        Ok(self.dir)
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn cluster_artifacts(
    run: &mut RunDir,
    eval: &Evaluation,
    data: &RunData,
    clusters: usize,
    inputs: &Inputs,
    top_n: usize,
) -> CliResult<()> {
    let rep = report::cluster_report(eval, data, clusters, &inputs.stopwords, top_n);
    run.table("cluster_counts.csv", &rep.distribution_table())?;
    run.table("cluster_terms.csv", &rep.terms_table())?;
    run.text("cluster_counts.svg", &rep.svg_bar_chart())?;
    run.table("assignments.csv", &report::assignment_table(eval, data, clusters))
}

fn cmd_train(args: TrainArgs) -> CliResult<PathBuf> {
    let started = now();
    let inputs = args.input.load()?;
    let precision = match &args.resume {
        Some(p) => {
            require_file("--resume", p)?;
            let bytes = checkpoint::read_file(p).map_err(|e| CliError::Usage(e.to_string()))?;
            checkpoint::peek_precision(&bytes).map_err(|e| CliError::Usage(format!("--resume: {e}")))?
        }
        None => args.config.resolve()?.precision,
    };
    match precision {
        Precision::F32 => train_with::<f32>(args, inputs, started),
        Precision::F64 => train_with::<f64>(args, inputs, started),
    }
}

fn train_with<T: Scalar>(args: TrainArgs, inputs: Inputs, started: u64) -> CliResult<PathBuf> {
    let mut trainer = match &args.resume {
        Some(p) => {
            let mut t = Trainer::<T>::resume(p, &inputs.labels, &inputs.corpus, &inputs.lexicon)?;
            if let Some(e) = args.config.epochs {
                t.set_epochs(e);
            }
            t
        }
        None => {
            let config = args.config.resolve()?;
            Trainer::<T>::new(
                config,
                &inputs.labels,
                &inputs.corpus,
                &inputs.lexicon,
                args.config.embeddings.as_deref(),
            )?
        }
    };
    let config = trainer.config().clone();
    let mut run = RunDir::new(args.input.run_dir(&format!(
        "train-{}-seed{}",
        config.model.variant, config.seed
    ))?);
    let last = run.dir.join("last.ckpt");
    while trainer.epoch() < config.epochs {
        trainer.train_epoch()?;
        if args.checkpoint_every.is_some_and(|n| n > 0 && trainer.epoch() % n == 0) {
            trainer.save_checkpoint(&last)?;
        }
    }

    run.table("metrics.csv", &report::epoch_table(trainer.history()))?;
    let evals = [Split::Train, Split::Validation, Split::Test]
        .into_iter()
        .map(|s| trainer.evaluate_best(s))
        .collect::<Result<Vec<_>, _>>()?;
    run.table("final_metrics.csv", &report::metrics_table(&evals.iter().collect::<Vec<_>>()))?;
    let best = run.path("best.ckpt");
    trainer.save_best(&best)?;
    let last = run.path("last.ckpt");
    trainer.save_checkpoint(&last)?;
    let splits = run.path("splits.tsv");
    write_split_manifest(&splits, &inputs.corpus, &trainer.data().splits)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let report_eval = &evals[match args.report_split {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    }];
    cluster_artifacts(
        &mut run,
        report_eval,
        trainer.data(),
        config.model.clusters,
        &inputs,
        args.input.top_terms,
    )?;

    let best_epoch = trainer.best().map(|b| b.epoch);
    let test = &evals[2].metrics;
    println!(
        "best epoch {}  test accuracy {:.4}  macro-F1 {:.4}  RMSE {:.4}",
        best_epoch.unwrap_or(0),
        test.accuracy,
        test.macro_f1,
        test.rmse
    );
    run.manifest(RunManifest {
        command: command_line(),
        config: Some(&config),
        corpus: &inputs.corpus_name,
        corpus_sha256: &inputs.corpus_sha256,
        lexicon: &inputs.lexicon_name,
        embeddings: args.config.embeddings.map(|p| p.display().to_string()),
        seed: Some(config.seed),
        started_unix: started,
        finished_unix: 0,
        artifacts: Vec::new(),
        extra: Some(serde_json::json!({
            "best_epoch": best_epoch,
            "resumed_from": args.resume.map(|p| p.display().to_string()),
        })),
    })
}

fn cmd_eval(args: EvalArgs) -> CliResult<PathBuf> {
    let started = now();
    require_file("--checkpoint", &args.checkpoint)?;
    let inputs = args.input.load()?;
    let bytes = checkpoint::read_file(&args.checkpoint).map_err(|e| CliError::Usage(e.to_string()))?;
    match checkpoint::peek_precision(&bytes).map_err(|e| CliError::Usage(format!("--checkpoint: {e}")))? {
        Precision::F32 => eval_with::<f32>(args, inputs, started),
        Precision::F64 => eval_with::<f64>(args, inputs, started),
    }
}

fn eval_with<T: Scalar>(args: EvalArgs, inputs: Inputs, started: u64) -> CliResult<PathBuf> {
    let model = load_model::<T>(&args.checkpoint, &inputs.labels, &inputs.corpus, &inputs.lexicon)?;
    let eval = model.evaluate(args.split)?;
    let config = &model.meta.config;
    let mut run = RunDir::new(args.input.run_dir(&format!("eval-{}", args.split.name()))?);
    run.table("metrics.csv", &report::metrics_table(&[&eval]))?;
    cluster_artifacts(
        &mut run,
        &eval,
        &model.data,
        config.model.clusters,
        &inputs,
        args.input.top_terms,
    )?;
    let m = &eval.metrics;
    println!(
        "{}: accuracy {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}  macro-F1 {:.4}  RMSE {:.4}",
        args.split.name(),
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        m.macro_f1,
        m.rmse
    );
    run.manifest(RunManifest {
        command: command_line(),
        config: Some(config),
        corpus: &inputs.corpus_name,
        corpus_sha256: &inputs.corpus_sha256,
        lexicon: &inputs.lexicon_name,
        embeddings: None,
        seed: Some(config.seed),
        started_unix: started,
        finished_unix: 0,
        artifacts: Vec::new(),
        extra: Some(serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "split": args.split.name(),
        })),
    })
}

fn cmd_sweep(args: SweepArgs) -> CliResult<PathBuf> {
    let started = now();
    let inputs = args.input.load()?;
    let base = args.config.resolve()?;
    match base.precision {
        Precision::F32 => sweep_with::<f32>(args, inputs, base, started),
        Precision::F64 => sweep_with::<f64>(args, inputs, base, started),
    }
}

fn sweep_with<T: Scalar>(
    args: SweepArgs,
    inputs: Inputs,
    base: TrainConfig,
    started: u64,
) -> CliResult<PathBuf> {
    let values = args.values.clone().unwrap_or_else(|| args.param.default_values());
    if values.is_empty() {
        return Err(CliError::Usage("--values: empty list".into()));
    }
    let configs = values
        .iter()
        .map(|&v| args.param.apply(&base, v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("--values: {e}")))?;
    let mut run = RunDir::new(args.input.run_dir(&format!("sweep-{}", args.param.name()))?);
    let embeddings = args.config.embeddings.as_deref();
    let train_one = |cfg: TrainConfig, value: f64| {
        sweep_run::<T>(cfg, value, &inputs.labels, &inputs.corpus, &inputs.lexicon, embeddings)
    };
    let results: Vec<Result<(SweepRow, Trainer<T>), TrainError>> = if args.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .into_iter()
                .zip(&values)
                .map(|(cfg, &v)| s.spawn(move || train_one(cfg, v)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        configs
            .into_iter()
            .zip(&values)
            .map(|(cfg, &v)| train_one(cfg, v))
            .collect()
    };
    let mut rows = Vec::with_capacity(values.len());
    for res in results {
        let (row, trainer) = res?;
        let name = format!("{}={}", args.param.name(), row.value);
        let sub = run.dir.join(&name);
        fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        run.table(&format!("{name}/metrics.csv"), &report::epoch_table(trainer.history()))?;
        let best = run.path(&format!("{name}/best.ckpt"));
        trainer.save_best(&best)?;
        let config = run.path(&format!("{name}/config.json"));
        let json = serde_json::to_string_pretty(trainer.config()).expect("config serializes");
        report::write_text(&config, &(json + "\n"))?;
        println!(
            "{name}: best epoch {}  val macro-F1 {:.4}  test accuracy {:.4}",
            row.best_epoch, row.validation.macro_f1, row.test.accuracy
        );
        rows.push(row);
    }
    run.table("sweep.csv", &report::sweep_table(args.param, &rows))?;
    run.manifest(RunManifest {
        command: command_line(),
        config: Some(&base),
        corpus: &inputs.corpus_name,
        corpus_sha256: &inputs.corpus_sha256,
        lexicon: &inputs.lexicon_name,
        embeddings: embeddings.map(|p| p.display().to_string()),
        seed: Some(base.seed),
        started_unix: started,
        finished_unix: 0,
        artifacts: Vec::new(),
        extra: Some(serde_json::json!({ "param": args.param.name(), "values": values })),
    })
}

fn cmd_grad_check(args: GradCheckArgs) -> CliResult<()> {
    let checks = verify::gradient_suite(args.seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<28} {:>12.3e}  {status}", c.name, c.max_error);
        failed += usize::from(!c.passed());
    }
    println!("{} checks, {failed} failed (tolerance {:e})", checks.len(), verify::TOLERANCE);
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    if args.size < 2 {
        return Err(CliError::Usage("--size: need at least 2 samples".into()));
    }
    let text = synthetic_corpus_text(args.size, args.seed);
    fs::write(&args.out, text).map_err(|e| io_err(&args.out, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a).map(|d| println!("run directory: {}", d.display())),
        Command::Eval(a) => cmd_eval(a).map(|d| println!("run directory: {}", d.display())),
        Command::Sweep(a) => cmd_sweep(a).map(|d| println!("run directory: {}", d.display())),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Runtime(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.code())
        }
    }
}
