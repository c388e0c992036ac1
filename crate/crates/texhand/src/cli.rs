//! `texhand` command line. Results go to stdout as JSON; failures print a
//! single JSON line `{"error": kind, "message": text}` to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flate2::read::MultiGzDecoder;
use serde_json::json;
use texhand_core::{
    build_embedding_store, export_report, plan_assignments, render_description, replay_file, scan, Assignment,
    BackendConfig, BackendKind, ConfusionMode, GameError, GameSession, KeywordList, LogEvent, MatchMode,
    MetricsReport, ScanResult, SessionLog, SessionState, TextileId,
};
use thiserror::Error;

use crate::config::{AppConfig, ConfigError};
use crate::registry::SessionRegistry;
use crate::setup::{catalog_from, Setup, SetupError};
use crate::simulate::{OracleKind, OracleStrategy, SimulateError, Simulation};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Setup(_) => "setup",
            CliError::Game(_) => "game",
            CliError::Simulate(_) => "simulate",
            CliError::Io(_) => "io",
            CliError::Input(_) => "input",
        }
    }
}

fn io_err(context: impl std::fmt::Display) -> impl FnOnce(io::Error) -> CliError {
    move |e| CliError::Io(format!("{context}: {e}"))
}

#[derive(Parser, Debug)]
#[command(name = "texhand", version, about = "Guess-the-textile game engine, simulator and reports")]
struct Cli {
    /// JSON config with `backend`, `session` and `service` sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Catalog utilities
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Print a balanced assignment plan
    Plan {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Play one game in the terminal
    Play {
        #[arg(long)]
        target: TextileId,
        #[arg(long)]
        reference: TextileId,
        #[command(flatten)]
        data: DataArgs,
        /// Append session events to this JSONL file
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Play a whole plan with a scripted participant
    Simulate {
        #[arg(long)]
        plan_seed: u64,
        #[arg(long, default_value = "verbatim")]
        strategy: String,
        /// Fraction kept (truncate) or dropped (token_dropout)
        #[arg(long, default_value_t = 0.5)]
        param: f64,
        #[arg(long, default_value_t = 0)]
        oracle_seed: u64,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        log: PathBuf,
    },
    /// Export metrics from a session log
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Count only each task's final guess in the confusion matrix
        #[arg(long)]
        final_only: bool,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Fraction of corpus words containing any keyword
    ScanCorpus {
        /// `colors`, `textiles`, or a file with one keyword per line
        #[arg(long, default_value = "colors")]
        keywords: String,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        whole_word: bool,
        /// Plain-text or gzip files
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Run the HTTP service
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum CatalogCommand {
    /// Embed every sample and write the store cache
    Embed {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        mock_dim: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the catalog with rendered descriptions
    Show {
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Embedding store cache; the catalog is embedded on the fly when absent
    #[arg(long)]
    store: Option<PathBuf>,
}

/// Standard streams, swappable in tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Runs the CLI on the process's standard streams.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = io::stdin();
    let mut stdin = stdin.lock();
    run_cli_with(argv, Io { stdin: &mut stdin, stdout: &mut io::stdout(), stderr: &mut io::stderr() })
}

pub fn run_cli_with<I, T>(argv: I, io: Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(io.stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            let _ = writeln!(io.stderr, "{}", json!({"error": "usage", "message": first}));
            return 2;
        }
    };
    match dispatch(cli, io.stdin, io.stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.stderr, "{}", json!({"error": e.kind(), "message": e.to_string()}));
            1
        }
    }
}

fn print(out: &mut dyn Write, value: serde_json::Value) -> Result<(), CliError> {
    writeln!(out, "{value}").map_err(io_err("stdout"))
}

fn dispatch(cli: Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    match cli.command {
        Command::Catalog(CatalogCommand::Embed { catalog, backend, mock_dim, out }) => {
            let catalog = catalog_from(catalog.as_deref())?;
            let mut backend_config = config.backend.clone();
            match backend {
                Some(BackendArg::Mock) => backend_config = BackendConfig { kind: BackendKind::Mock, ..backend_config },
                Some(BackendArg::Remote) if backend_config.kind != BackendKind::Remote => {
                    return Err(CliError::Input("--backend remote needs a config whose backend is remote".into()))
                }
                _ => {}
            }
            if let Some(dim) = mock_dim {
                backend_config.mock_dim = dim;
            }
            let backend = backend_config.build().map_err(SetupError::from)?;
            let store = build_embedding_store(&catalog, backend.as_ref()).map_err(SetupError::from)?;
            let file = File::create(&out).map_err(io_err(out.display()))?;
            let mut w = io::BufWriter::new(file);
            store.write_json(&mut w).map_err(SetupError::from)?;
            w.flush().map_err(io_err(out.display()))?;
            print(
                stdout,
                json!({"out": out, "entries": store.len(), "dim": store.dim(), "backend": store.backend(), "model": store.model()}),
            )
        }
        Command::Catalog(CatalogCommand::Show { catalog }) => {
            let catalog = catalog_from(catalog.as_deref())?;
            let samples: Vec<_> = catalog
                .samples()
                .iter()
                .map(|s| {
                    let description = render_description(s).map_err(SetupError::from)?;
                    Ok(json!({"id": s.id, "name": s.name, "fibre_category": s.fibre_category, "description": description}))
                })
                .collect::<Result<_, CliError>>()?;
            print(stdout, json!({ "samples": samples }))
        }
        Command::Plan { seed, catalog } => {
            let catalog = catalog_from(catalog.as_deref())?;
            let plan = plan_assignments(&catalog, seed)?;
            print(stdout, serde_json::to_value(plan).expect("plan serializes"))
        }
        Command::Play { target, reference, data, log } => {
            let setup = Setup::load(data.catalog.as_deref(), data.store.as_deref(), Some(&config.backend))?;
            let log = match log {
                Some(path) => SessionLog::open(&path).map_err(io_err(path.display()))?,
                None => SessionLog::discard(),
            };
            let assignment = Assignment::new(target, reference)?;
            let session_id = format!("play-{}", uuid::Uuid::new_v4());
            let session = GameSession::start(session_id, assignment, &setup.store, config.session)?;
            play(session, &setup, &log, stdin, stdout)?;
            log.flush().map_err(io_err("session log"))
        }
        Command::Simulate { plan_seed, strategy, param, oracle_seed, data, log } => {
            let kind: OracleKind = strategy.parse()?;
            let strategy = OracleStrategy::new(kind, param, oracle_seed)?;
            let setup = Setup::load(data.catalog.as_deref(), data.store.as_deref(), cli.config.as_ref().map(|_| &config.backend))?;
            let plan = plan_assignments(&setup.catalog, plan_seed)?;
            let session_log = SessionLog::open(&log).map_err(io_err(log.display()))?;
            let sim = Simulation {
                catalog: &setup.catalog,
                store: &setup.store,
                backend: setup.backend.as_ref(),
                config: config.session,
            };
            let run = sim.run(&plan, &strategy, &session_log)?;
            let won = run.records.iter().filter(|r| r.won()).count();
            print(
                stdout,
                json!({
                    "log": log,
                    "tasks": plan.pairs.len(),
                    "finished": run.records.len(),
                    "won": won,
                    "failed": run.failures.len(),
                }),
            )
        }
        Command::Report { log, out, final_only, catalog } => {
            let catalog = catalog_from(catalog.as_deref())?;
            let replay = replay_file(&log).map_err(|e| CliError::Input(format!("{}: {e}", log.display())))?;
            if replay.records.is_empty() {
                return Err(CliError::Input(format!("{}: no finished tasks", log.display())));
            }
            let mode = if final_only { ConfusionMode::FinalOnly } else { ConfusionMode::PerAttempt };
            let report = MetricsReport::build(&replay.records, &catalog, mode, replay.synthetic)
                .map_err(|e| CliError::Input(e.to_string()))?;
            let files = export_report(&report, &out).map_err(|e| CliError::Io(e.to_string()))?;
            print(
                stdout,
                json!({
                    "files": files,
                    "tasks": report.total_tasks,
                    "wins": report.wins,
                    "success_rate": report.overall_success_rate,
                    "abandoned": replay.abandoned.len(),
                    "errored": replay.errored.len(),
                }),
            )
        }
        Command::ScanCorpus { keywords, catalog, whole_word, files } => {
            let list = match keywords.as_str() {
                "colors" => KeywordList::builtin_colors(),
                "textiles" => KeywordList::textiles_from(&catalog_from(catalog.as_deref())?),
                path => {
                    let file = File::open(path).map_err(io_err(path))?;
                    let name = Path::new(path).file_stem().map_or(path.into(), |s| s.to_string_lossy().into_owned());
                    KeywordList::from_reader(name, BufReader::new(file)).map_err(|e| CliError::Input(e.to_string()))?
                }
            };
            let mode = if whole_word { MatchMode::WholeWord } else { MatchMode::Substring };
            let mut total: Option<ScanResult> = None;
            for path in &files {
                let result = scan(open_corpus(path)?, &list, mode)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                total = Some(match total {
                    None => result,
                    Some(t) => t.merge(&result),
                });
            }
            print(stdout, serde_json::to_value(total.expect("at least one file")).expect("result serializes"))
        }
        Command::Serve { bind, data, log } => {
            let service = &config.service;
            let catalog = data.catalog.or_else(|| service.catalog.clone());
            let store = data.store.or_else(|| service.store.clone());
            let log_path = log.unwrap_or_else(|| service.log.clone());
            let bind = bind.unwrap_or_else(|| service.bind.clone());
            let setup = Setup::load(catalog.as_deref(), store.as_deref(), Some(&config.backend))?;
            serve_blocking(setup, config.session, &log_path, &bind, stdout)
        }
    }
}

fn open_corpus(path: &Path) -> Result<Box<dyn Read>, CliError> {
    let mut reader = BufReader::new(File::open(path).map_err(io_err(path.display()))?);
    let gzip = reader.fill_buf().map_err(io_err(path.display()))?.starts_with(&[0x1f, 0x8b]);
    Ok(if gzip { Box::new(MultiGzDecoder::new(reader)) } else { Box::new(reader) })
}

fn serve_blocking(
    setup: Setup,
    session: texhand_core::SessionConfig,
    log_path: &Path,
    bind: &str,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let history = if log_path.exists() {
        replay_file(log_path).map_err(|e| CliError::Input(format!("{}: {e}", log_path.display())))?
    } else {
        Default::default()
    };
    let log = SessionLog::open(log_path).map_err(io_err(log_path.display()))?;
    let registry = Arc::new(
        SessionRegistry::new(setup.catalog, setup.store, setup.backend, session, log).with_history(history),
    );
    let runtime = tokio::runtime::Runtime::new().map_err(io_err("runtime"))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(io_err(bind))?;
        let addr = listener.local_addr().map_err(io_err(bind))?;
        print(stdout, json!({"listening": addr.to_string(), "log": log_path}))?;
        stdout.flush().map_err(io_err("stdout"))?;
        crate::server::serve(listener, registry, shutdown_signal()).await.map_err(io_err("server"))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

fn prompt(stdin: &mut dyn BufRead, out: &mut dyn Write, text: &str) -> Result<Option<String>, CliError> {
    write!(out, "{text}").map_err(io_err("stdout"))?;
    out.flush().map_err(io_err("stdout"))?;
    let mut line = String::new();
    if stdin.read_line(&mut line).map_err(io_err("stdin"))? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim().to_owned()))
}

fn ask_rating(stdin: &mut dyn BufRead, out: &mut dyn Write, what: &str) -> Result<Option<u8>, CliError> {
    loop {
        let Some(answer) = prompt(stdin, out, &format!("{what} (1-10): "))? else { return Ok(None) };
        match answer.parse::<u8>() {
            Ok(r) if (1..=10).contains(&r) => return Ok(Some(r)),
            _ => writeln!(out, "Please enter a whole number from 1 to 10.").map_err(io_err("stdout"))?,
        }
    }
}

fn name_of(setup: &Setup, id: TextileId) -> &str {
    setup.catalog.get(id).map_or("?", |s| s.name.as_str())
}

/// Interactive loop for one session. End of input abandons the game.
pub(crate) fn play(
    mut session: GameSession,
    setup: &Setup,
    log: &SessionLog,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<GameSession, CliError> {
    let w = |e: io::Error| CliError::Io(format!("stdout: {e}"));
    let logged = |event: LogEvent| log.append(&event).map_err(io_err("session log"));
    logged(LogEvent::started(&session, false))?;
    let a = session.assignment;
    writeln!(out, "Target (hidden from the system): #{} {}", a.target_id, name_of(setup, a.target_id)).map_err(w)?;
    writeln!(out, "Reference: #{} {}", a.reference_id, name_of(setup, a.reference_id)).map_err(w)?;

    while !session.state.is_terminal() {
        let n = session.attempts.len() + 1;
        let header = format!(
            "\nAttempt {n}/{}. Holding reference #{}. Describe the target: ",
            session.config.max_attempts, session.shown_reference_id
        );
        let Some(text) = prompt(stdin, out, &header)? else {
            logged(LogEvent::ended(&session.session_id, texhand_core::EndOutcome::Abandoned, None))?;
            writeln!(out, "\nGame abandoned.").map_err(w)?;
            return Ok(session);
        };
        let predicted = match session.submit_description(&text, &setup.store, setup.backend.as_ref()) {
            Ok(p) => p.predicted_id,
            Err(GameError::EmptyDescription) => continue,
            Err(e) => return Err(e.into()),
        };
        logged(LogEvent::attempted(&session))?;
        writeln!(out, "Are you having number {predicted}? ({})", name_of(setup, predicted)).map_err(w)?;

        let correct = loop {
            let Some(answer) = prompt(stdin, out, "Correct? [y/n]: ")? else {
                logged(LogEvent::ended(&session.session_id, texhand_core::EndOutcome::Abandoned, None))?;
                return Ok(session);
            };
            match answer.to_ascii_lowercase().as_str() {
                "y" | "yes" => break true,
                "n" | "no" => break false,
                _ => {}
            }
        };
        let (validity, similarity) = if correct {
            (None, None)
        } else {
            let v = ask_rating(stdin, out, "Validity: how well does the guess match your description")?;
            let s = match v {
                Some(_) => ask_rating(stdin, out, "Similarity: how alike are the guess and the target")?,
                None => None,
            };
            if v.is_none() || s.is_none() {
                logged(LogEvent::ended(&session.session_id, texhand_core::EndOutcome::Abandoned, None))?;
                return Ok(session);
            }
            (v, s)
        };
        session.judge(correct, validity, similarity)?;
        logged(LogEvent::judged(&session))?;
    }

    match session.state {
        SessionState::Won => writeln!(out, "\nFound it in {} attempt(s).", session.attempts.len()).map_err(w)?,
        _ => writeln!(out, "\nGame Over.").map_err(w)?,
    }
    Ok(session)
}
