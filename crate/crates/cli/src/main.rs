use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use discrim_cli::server::{self, AppState};
use discrim_core::active::{run_active_loop, ActiveConfig, CsvLabels, PoolRecord};
use discrim_core::annotation::{AnnotationService, ServiceConfig};
use discrim_core::classifier::kfold_evaluate;
use discrim_core::corpus::CityTagged;
use discrim_core::fixture::{generate_fixture, FixtureSpec};
use discrim_core::lexicon::{filter_lexicon, load_lexicon, Lexicon};
use discrim_core::pipeline::{audit_sample, run_pipeline, PipelineConfig, Stage, StageRange, Workspace};
use discrim_core::report::ClassifiedRecord;
use discrim_core::trainset::{build_candidates, read_examples, write_examples, TrainsetConfig};
use discrim_core::{Error, Result};

#[derive(Parser)]
#[command(name = "discrim", version, about = "City-level discrimination text pipeline")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus and assign records to cities.
    Ingest,
    /// Pick keyword records to label plus keyword-free negatives.
    BuildTrainset(TrainsetArgs),
    /// Serve the annotation HTTP API.
    AnnotateServe(ServeArgs),
    /// Fit the classifier and write its cross-validated evaluation.
    Train,
    /// Cross-validate the configured training set and print the report.
    Evaluate {
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Grow the training set from labeled boundary records.
    ActiveLearn(ActiveArgs),
    /// Score matched records and keep those over the threshold.
    Classify,
    /// Split discrimination records into targeted and self-narration.
    Delineate {
        /// Print a seeded sample of this many records for manual review.
        #[arg(long, value_name = "N")]
        audit_sample: Option<usize>,
    },
    /// Per-city affect category profiles and group ratios.
    Lexical,
    /// Flag records whose authors appear on the bot lists.
    Botscan,
    /// Per-city counts, shares and census covariates.
    Aggregate,
    /// Stepwise negative binomial regressions on city counts.
    Regress,
    /// City map classes as GeoJSON.
    Map,
    /// Top n-gram features overall and per city.
    Features,
    /// Run every stage, or resume from one.
    RunAll(RunArgs),
    /// Write a synthetic corpus, inputs and config.
    GenFixture(FixtureArgs),
}

#[derive(Args)]
struct TrainsetArgs {
    #[arg(long, default_value_t = 50)]
    per_cell_cap: usize,
    #[arg(long, default_value_t = 1000)]
    negatives: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Event journal, replayed on start and appended to afterwards.
    #[arg(long)]
    journal: Option<PathBuf>,
    /// CSV of tasks to queue (`id,text`).
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// CSV of hidden test tasks with gold labels (`id,text,label`).
    #[arg(long)]
    test_tasks: Option<PathBuf>,
    /// Active-learning history served to the dashboard.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = ServiceConfig::default().min_judgments)]
    min_judgments: usize,
    #[arg(long, env = server::TOKEN_ENV, hide_env_values = true)]
    token: Option<String>,
}

#[derive(Args)]
struct ActiveArgs {
    /// Labeled CSV answering boundary requests, for instance the annotation export.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    from: Option<Stage>,
    #[arg(long)]
    to: Option<Stage>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = FixtureSpec::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = FixtureSpec::default().cities)]
    cities: usize,
    #[arg(long, default_value_t = FixtureSpec::default().records_per_city)]
    records_per_city: usize,
    #[arg(long, default_value_t = FixtureSpec::default().training_examples)]
    training_examples: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn single(cli: &Cli, stage: Stage) -> Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    report(&cfg, StageRange::only(stage))
}

fn report(cfg: &PipelineConfig, range: StageRange) -> Result<()> {
    let summary = run_pipeline(cfg, range)?;
    for s in &summary.stages {
        log::info!("{s} done");
    }
    log::info!("artifacts in {} (config {})", summary.output_dir.display(), summary.config_hash);
    Ok(())
}

fn workspace(cfg: &PipelineConfig) -> Result<Workspace> {
    Ok(Workspace::new(cfg.output_path(), cfg.config_hash()?))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => single(cli, Stage::Ingest),
        Command::Train => single(cli, Stage::Train),
        Command::Classify => single(cli, Stage::Classify),
        Command::Lexical => single(cli, Stage::Lexical),
        Command::Botscan => single(cli, Stage::Botscan),
        Command::Aggregate => single(cli, Stage::Aggregate),
        Command::Regress => single(cli, Stage::Regress),
        Command::Map => single(cli, Stage::Map),
        Command::Features => single(cli, Stage::Features),
        Command::Delineate { audit_sample: n } => {
            single(cli, Stage::Delineate)?;
            if let Some(n) = n {
                print_audit(cli, *n)?;
            }
            Ok(())
        }
        Command::RunAll(a) => {
            let mut cfg = PipelineConfig::load(&cli.config)?;
            if let Some(seed) = a.seed {
                cfg.seed = Some(seed);
            }
            if let Some(out) = &a.out {
                cfg.output_dir = absolute(out)?;
            }
            let range = StageRange {
                from: a.from.unwrap_or(Stage::ALL[0]),
                to: a.to.unwrap_or(Stage::ALL[Stage::ALL.len() - 1]),
            };
            report(&cfg, range)
        }
        Command::Evaluate { folds } => {
            let cfg = PipelineConfig::load(&cli.config)?;
            let path = cfg.resolve(&cfg.inputs.training);
            let examples = read_examples(File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)?;
            let eval = kfold_evaluate(&examples, folds.unwrap_or(cfg.classify.eval_folds), &cfg.classifier_config())?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
            Ok(())
        }
        Command::BuildTrainset(a) => build_trainset(cli, a),
        Command::ActiveLearn(a) => active_learn(cli, a),
        Command::AnnotateServe(a) => serve(a),
        Command::GenFixture(a) => {
            let spec = FixtureSpec {
                seed: a.seed,
                cities: a.cities,
                records_per_city: a.records_per_city,
                training_examples: a.training_examples,
                ..FixtureSpec::default()
            };
            let s = generate_fixture(&a.dir, &spec)?;
            log::info!(
                "{} cities, {} corpus lines, {} training examples; config at {}",
                s.cities,
                s.corpus_lines,
                s.training_examples,
                s.config.display()
            );
            Ok(())
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| Error::Config(format!("working directory: {e}")))?;
    Ok(cwd.join(p))
}

fn print_audit(cli: &Cli, n: usize) -> Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let records: Vec<ClassifiedRecord> = workspace(&cfg)?.read_records("delineated.ndjson")?;
    let rows = audit_sample(&records, &cfg.pronouns, n, cfg.classifier_config().seed);
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["id", "delineation", "first", "second", "third", "text"])?;
    for r in rows {
        w.write_record([
            r.id,
            r.delineation,
            r.counts.first.to_string(),
            r.counts.second.to_string(),
            r.counts.third.to_string(),
            r.text,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn build_trainset(cli: &Cli, a: &TrainsetArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let ws = workspace(&cfg)?;
    let records: Vec<CityTagged> = ws.read_records("records.ndjson")?;
    let entries = load_lexicon(&cfg.resolve(&cfg.inputs.lexicon))?;
    let lexicon = Lexicon::new(&filter_lexicon(&entries, cfg.lexicon.min_sightings, cfg.lexicon.require_discrimination));
    let tc = TrainsetConfig { per_cell_cap: a.per_cell_cap, negatives: a.negatives, seed: a.seed };
    let cands = build_candidates(&records, &lexicon, &tc);

    let to_label = ws.path("to_label.csv");
    let mut w = csv::Writer::from_path(&to_label).map_err(|e| Error::Config(format!("{}: {e}", to_label.display())))?;
    w.write_record(["id", "text", "city_key"])?;
    for r in &cands.to_label {
        w.write_record([&r.record.id, &r.record.text, &r.city_key])?;
    }
    w.flush()?;
    let neg = ws.path("negatives.csv");
    write_examples(create(&neg)?, &cands.negatives)?;
    log::info!(
        "{} records to label in {}, {} negatives in {}",
        cands.to_label.len(),
        to_label.display(),
        cands.negatives.len(),
        neg.display()
    );
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn active_learn(cli: &Cli, a: &ActiveArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let ws = workspace(&cfg)?;
    let path = cfg.resolve(&cfg.inputs.training);
    let initial = read_examples(File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)?;
    let known: std::collections::HashSet<&str> = initial.iter().map(|e| e.id.as_str()).collect();
    let records: Vec<CityTagged> = ws.read_records("records.ndjson")?;
    let pool: Vec<PoolRecord> = records
        .into_iter()
        .filter(|r| !known.contains(r.record.id.as_str()))
        .map(|r| PoolRecord { id: r.record.id, text: r.record.text })
        .collect();
    let ac = ActiveConfig {
        fraction: cfg.active.fraction,
        epsilon: cfg.active.epsilon,
        window: cfg.active.window,
        max_iterations: cfg.active.max_iterations,
        folds: cfg.classify.eval_folds,
        classifier: cfg.classifier_config(),
        ..ActiveConfig::default()
    };
    let mut source = CsvLabels { path: absolute(&a.labels)? };
    let out = run_active_loop(&initial, &pool, &ac, &mut source)?;

    let hist = ws.path("active_history.csv");
    let mut f = create(&hist)?;
    out.history.write_csv(&mut f)?;
    f.flush()?;
    write_examples(create(&ws.path("training_active.csv"))?, &out.training_set)?;
    out.model.save(&ws.path("model_active.bin"))?;
    log::info!(
        "stopped ({:?}) after {} iterations with {} examples; history in {}",
        out.status,
        out.iterations(),
        out.training_set.len(),
        hist.display()
    );
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let config = ServiceConfig { min_judgments: a.min_judgments, ..ServiceConfig::default() };
    let mut service = match &a.journal {
        Some(p) => AnnotationService::with_journal(config, p)?,
        None => {
            log::warn!("no journal given; state is lost on exit");
            AnnotationService::new(config)
        }
    };
    if let Some(p) = &a.tasks {
        log::info!("queued {} tasks", server::load_tasks(&mut service, p, false)?);
    }
    if let Some(p) = &a.test_tasks {
        log::info!("queued {} test tasks", server::load_tasks(&mut service, p, true)?);
    }
    let mut state = AppState::new(service);
    if let Some(h) = &a.history {
        state = state.with_history(h);
    }
    if let Some(t) = &a.token {
        state = state.with_token(t);
    }
    let app = server::router(Arc::new(state));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| Error::Config(format!("bind {}: {e}", a.bind)))?;
        log::info!("listening on {}", a.bind);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(Error::from)
    })
}
