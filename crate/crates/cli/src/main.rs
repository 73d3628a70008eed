//! `taskpilot`: serve sessions, generate datasets, run evaluations, replay
//! transcripts and validate scenario/task documents.

mod config;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use taskpilot_core::catalog::STUDY_TASKS;
use taskpilot_core::dataset::{generate, split, write_records, DEFAULT_FRACTIONS};
use taskpilot_core::gateway::{AssistantBackend, BackendDescriptor, ScriptedBackend};
use taskpilot_core::speech::{RemoteSynthesizer, RemoteTranscriber, StubSynthesizer};
use taskpilot_core::{load_scenario, load_task, Catalog};
use taskpilot_eval::report::{render_instruct, render_study, write_jsonl};
use taskpilot_eval::study::Transport;
use taskpilot_eval::{instructing_eval, run_study, study_metrics, InstructReport, Policy, RandomBackend, StudyPlan};
use taskpilot_server::transcript::{read_transcript, replay};
use taskpilot_server::{stub_transcriber, Server, ServerOptions, Services, SessionMode};

use crate::config::{existing_dir, FileConfig, Settings};

#[derive(Parser, Debug)]
#[command(name = "taskpilot", version, about = "Guided pick-and-place task sessions, datasets and evaluations")]
struct Cli {
    /// Settings file (TOML). Flags and TASKPILOT_* variables take precedence.
    #[arg(long, global = true, env = "TASKPILOT_CONFIG")]
    config: Option<PathBuf>,
    /// Extra scenario documents loaded after the shipped ones.
    #[arg(long, global = true)]
    scenario_dir: Option<PathBuf>,
    /// Extra task documents loaded after the shipped ones.
    #[arg(long, global = true)]
    task_dir: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, env = "TASKPILOT_SEED")]
    seed: Option<u64>,
    /// Log filter, e.g. `info` or `taskpilot_server=debug`.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the session server.
    Serve(ServeArgs),
    /// Generate a prompt dataset for one task.
    Gen(GenArgs),
    /// Run an evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Re-run a recorded transcript and compare server output.
    Replay(ReplayArgs),
    /// Check scenario and task documents.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Address to listen on, e.g. 127.0.0.1:7878 (port 0 picks one).
    #[arg(long, env = "TASKPILOT_LISTEN")]
    listen: Option<String>,
    /// Assistant backend: `oracle`, `random`, `remote:<url>` or `scripted:<file>`.
    #[arg(long, env = "TASKPILOT_BACKEND")]
    backend: Option<String>,
    /// Directory receiving one transcript per session.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Static files for browser clients.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Speech-to-text endpoint; stub transcription when absent.
    #[arg(long)]
    stt_url: Option<String>,
    /// Text-to-speech endpoint; stub synthesis when absent.
    #[arg(long)]
    tts_url: Option<String>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    task: String,
    /// Output file, one JSON record per line.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Next-action success rate of a backend over task states.
    Instruct(InstructArgs),
    /// Scripted-agent sessions and execution-time statistics.
    Study(StudyArgs),
}

#[derive(Args, Debug)]
struct InstructArgs {
    /// `oracle`, `random`, `remote:<url>` or `scripted:<file>`.
    #[arg(long, env = "TASKPILOT_BACKEND")]
    backend: Option<String>,
    /// Comma-separated task ids; the four study tasks by default.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Directory for instruct_report.txt and instruct.jsonl.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Modes {
    Both,
    Baseline,
    Dialogue,
}

impl Modes {
    fn list(self) -> Vec<SessionMode> {
        match self {
            Modes::Both => SessionMode::ALL.to_vec(),
            Modes::Baseline => vec![SessionMode::BaselineText],
            Modes::Dialogue => vec![SessionMode::AssistantDialogue],
        }
    }
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// `perfect` or `noisy:<p>`.
    #[arg(long, default_value = "perfect")]
    policy: Policy,
    #[arg(long, value_enum, default_value = "both")]
    modes: Modes,
    /// Participants; each runs one session per mode.
    #[arg(long, default_value_t = 6)]
    runs: usize,
    /// Comma-separated task ids, assigned round-robin across modes.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Run sessions concurrently.
    #[arg(long)]
    parallel: bool,
    /// Play against a running server instead of in-process sessions.
    #[arg(long)]
    connect: Option<SocketAddr>,
    #[arg(long, default_value_t = taskpilot_eval::agent::DEFAULT_STEP_LIMIT)]
    step_limit: usize,
    /// Assistant backend for in-process sessions.
    #[arg(long, env = "TASKPILOT_BACKEND")]
    backend: Option<String>,
    /// Directory for study_report.txt and study.jsonl.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    transcript: PathBuf,
    /// Backend the session was recorded with.
    #[arg(long, env = "TASKPILOT_BACKEND")]
    backend: Option<String>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Scenario or task documents.
    #[arg(required = true)]
    files: Vec<PathBuf>,
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
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let settings = Settings {
        scenario_dir: existing_dir("scenario dir", cli.scenario_dir.clone().or(file.scenario_dir.clone()))?,
        task_dir: existing_dir("task dir", cli.task_dir.clone().or(file.task_dir.clone()))?,
        seed: cli.seed.or(file.seed).unwrap_or(config::DEFAULT_SEED),
        log_level: cli
            .log_level
            .clone()
            .or(file.log_level.clone())
            .unwrap_or_else(|| config::DEFAULT_LOG_LEVEL.into()),
    };
    init_logging(&settings.log_level)?;
    match cli.command {
        Command::Serve(args) => serve(args, &settings, &file),
        Command::Gen(args) => gen(args, &settings),
        Command::Eval(EvalCommand::Instruct(args)) => eval_instruct(args, &settings, &file),
        Command::Eval(EvalCommand::Study(args)) => eval_study(args, &settings, &file),
        Command::Replay(args) => replay_transcript(args, &settings, &file),
        Command::Validate(args) => validate(args, &settings),
    }
}

fn init_logging(level: &str) -> Result<()> {
    let filter = tracing_subscriber::EnvFilter::try_new(level).map_err(|e| anyhow!("bad log level `{level}`: {e}"))?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
    Ok(())
}

fn catalog(settings: &Settings) -> Result<Catalog> {
    let mut c = Catalog::builtin();
    c.load_dirs(settings.scenario_dir.as_deref(), settings.task_dir.as_deref())?;
    Ok(c)
}

fn backend(choice: &str, seed: u64) -> Result<Arc<dyn AssistantBackend>> {
    if choice == "random" {
        return Ok(Arc::new(RandomBackend::new(seed)));
    }
    if let Some(path) = choice.strip_prefix("scripted:") {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read replies {path}"))?;
        return Ok(Arc::new(ScriptedBackend::from_fixture("scripted", &text)));
    }
    let descriptor: BackendDescriptor = choice.parse()?;
    Ok(descriptor.build()?)
}

fn backend_choice(flag: Option<String>, file: &FileConfig) -> String {
    flag.or(file.backend.clone()).unwrap_or_else(|| config::DEFAULT_BACKEND.into())
}

fn services(catalog: Catalog, backend: Arc<dyn AssistantBackend>, stt: Option<&str>, tts: Option<&str>) -> Services {
    let timeout = Duration::from_secs(10);
    let transcriber: Arc<dyn taskpilot_core::speech::Transcriber> = match stt {
        Some(url) => Arc::new(RemoteTranscriber::new(url, timeout)),
        None => Arc::new(stub_transcriber(&catalog)),
    };
    let synthesizer: Arc<dyn taskpilot_core::speech::Synthesizer> = match tts {
        Some(url) => Arc::new(RemoteSynthesizer::new(url, timeout)),
        None => Arc::new(StubSynthesizer),
    };
    Services {
        catalog,
        backend,
        transcriber,
        synthesizer,
    }
}

fn serve(args: ServeArgs, settings: &Settings, file: &FileConfig) -> Result<()> {
    let listen = args
        .listen
        .or(file.listen.clone())
        .unwrap_or_else(|| config::DEFAULT_LISTEN.into());
    let record_dir = args.record.or(file.record_dir.clone());
    if let Some(dir) = &record_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let ui_dir = existing_dir("ui dir", args.ui_dir.or(file.ui_dir.clone()))?;
    let stt = args.stt_url.or(file.stt_url.clone());
    let tts = args.tts_url.or(file.tts_url.clone());
    let svc = services(
        catalog(settings)?,
        backend(&backend_choice(args.backend, file), settings.seed)?,
        stt.as_deref(),
        tts.as_deref(),
    );
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = Server::bind(&listen)
            .await
            .with_context(|| format!("cannot listen on {listen}"))?;
        let addr = listener.local_addr()?;
        println!("listening on {addr}");
        tracing::info!(%addr, "server ready");
        let server = Server::new(Arc::new(svc), ServerOptions { record_dir, ui_dir });
        server.run(listener).await?;
        Ok(())
    })
}

fn gen(args: GenArgs, settings: &Settings) -> Result<()> {
    let c = catalog(settings)?;
    let scenario = c
        .scenario(&args.scenario)
        .ok_or_else(|| anyhow!("no scenario `{}`", args.scenario))?;
    let task = c.task(&args.task).ok_or_else(|| anyhow!("no task `{}`", args.task))?;
    if task.environment != args.scenario {
        bail!("task `{}` belongs to scenario `{}`", task.id, task.environment);
    }
    let mut records = generate(scenario, task)?;
    split(&mut records, settings.seed, DEFAULT_FRACTIONS)?;
    write_records(&records, &args.out)?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

fn task_list(requested: Vec<String>, default: &[&str]) -> Vec<String> {
    if requested.is_empty() {
        default.iter().map(|s| s.to_string()).collect()
    } else {
        requested
    }
}

fn out_dir(dir: &Option<PathBuf>) -> Result<Option<&Path>> {
    if let Some(d) = dir {
        fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
    }
    Ok(dir.as_deref())
}

fn eval_instruct(args: InstructArgs, settings: &Settings, file: &FileConfig) -> Result<()> {
    let c = catalog(settings)?;
    let b = backend(&backend_choice(args.backend, file), settings.seed)?;
    let mut evals = Vec::new();
    for id in task_list(args.tasks, &STUDY_TASKS) {
        let (task, scenario) = c.task_with_scenario(&id).ok_or_else(|| anyhow!("no task `{id}`"))?;
        evals.push(instructing_eval(b.as_ref(), scenario, task)?);
    }
    let report = InstructReport::new(b.name(), evals);
    let text = render_instruct(&report);
    print!("{text}");
    if let Some(dir) = out_dir(&args.out_dir)? {
        fs::write(dir.join("instruct_report.txt"), &text)?;
        write_jsonl(&report.tasks, &dir.join("instruct.jsonl"))?;
    }
    Ok(())
}

fn eval_study(args: StudyArgs, settings: &Settings, file: &FileConfig) -> Result<()> {
    let c = catalog(settings)?;
    let tasks = task_list(args.tasks, &taskpilot_eval::study::DEFAULT_STUDY_TASKS);
    for id in &tasks {
        c.task_with_scenario(id).ok_or_else(|| anyhow!("no task `{id}`"))?;
    }
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let svc = Arc::new(services(c, backend(&backend_choice(args.backend, file), settings.seed)?, None, None));
    let plan = StudyPlan {
        policy: args.policy,
        modes: args.modes.list(),
        runs: args.runs,
        tasks,
        seed: settings.seed,
        parallel: args.parallel,
        step_limit: args.step_limit,
    };
    let transport = args.connect.map_or(Transport::InProcess, Transport::Tcp);
    let records = run_study(svc, &plan, transport);
    for r in records.iter().filter(|r| r.error.is_some()) {
        tracing::warn!(run = r.run, mode = %r.summary.mode, error = r.error.as_deref().unwrap_or(""), "run failed");
    }
    let summaries: Vec<_> = records.iter().map(|r| r.summary.clone()).collect();
    let aggregates = study_metrics(&summaries).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    let text = render_study(&aggregates);
    print!("{text}");
    if let Some(dir) = out_dir(&args.out_dir)? {
        fs::write(dir.join("study_report.txt"), &text)?;
        write_jsonl(&records, &dir.join("study.jsonl"))?;
    }
    Ok(())
}

fn replay_transcript(args: ReplayArgs, settings: &Settings, file: &FileConfig) -> Result<()> {
    let entries = read_transcript(&args.transcript)?;
    let svc = services(catalog(settings)?, backend(&backend_choice(args.backend, file), settings.seed)?, None, None);
    let report = replay(Arc::new(svc), &entries);
    match &report.divergence {
        None => {
            println!(
                "session {}: {} server lines reproduced identically",
                report.session_id, report.server_lines
            );
            Ok(())
        }
        Some(d) => bail!(
            "session {} diverges at server line {}\n  recorded: {}\n  replayed: {}",
            report.session_id,
            d.index,
            d.expected.as_deref().unwrap_or("<none>"),
            d.actual.as_deref().unwrap_or("<none>")
        ),
    }
}

/// Each file is tried as a scenario, then as a task checked against the
/// catalog plus any scenarios given alongside it.
fn validate(args: ValidateArgs, settings: &Settings) -> Result<()> {
    let mut c = catalog(settings)?;
    let mut failures = 0;
    let mut tasks = Vec::new();
    for path in &args.files {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let is_scenario = text.lines().any(|l| l.trim_start().starts_with("[avatar]"));
        if !is_scenario {
            tasks.push((path, text));
            continue;
        }
        match load_scenario(&text) {
            Ok(s) => {
                let name = s.name().to_string();
                if c.scenario(&name).is_none() {
                    c.add_scenario_text(&path.display().to_string(), &text)?;
                }
                println!("ok  {} (scenario `{name}`)", path.display());
            }
            Err(e) => {
                failures += 1;
                println!("bad {}: {}: {e}", path.display(), e.code());
            }
        }
    }
    for (path, text) in tasks {
        let checked = load_task(&text)
            .map_err(|e| format!("{}: {e}", e.code()))
            .and_then(|t| {
                let s = c
                    .scenario(&t.environment)
                    .ok_or_else(|| format!("no scenario `{}`", t.environment))?;
                t.validate_against(&s.scene).map_err(|e| format!("{}: {e}", e.code()))?;
                Ok(t)
            });
        match checked {
            Ok(t) => println!("ok  {} (task `{}`)", path.display(), t.id),
            Err(e) => {
                failures += 1;
                println!("bad {}: {e}", path.display());
            }
        }
    }
    if failures > 0 {
        bail!("{failures} invalid document(s)");
    }
    Ok(())
}
