use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use metaplan_annotate::{FixedClock, Service, SystemClock, TranscriptProvider};
use metaplan_core::harness::{build_demo_store, compare_icl, run_suite, SuiteConfig, SuiteReport};
use metaplan_core::par::Parallelism;
use metaplan_core::rag_store::{GateThresholds, RecordStore};
use metaplan_core::sim_world::TASK_NAMES;

#[derive(Parser)]
#[command(name = "metaplan", version, about = "Meta-action planning: evaluation, comparison and curation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an evaluation suite and write its report.
    Run(RunArgs),
    /// Compare a without-ICL report against a with-ICL report.
    Compare {
        without: PathBuf,
        with: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Record-store maintenance.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
    /// Serve the annotation API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Icl {
    On,
    Off,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated task names.
    #[arg(long, value_delimiter = ',', default_values_t = TASK_NAMES.map(String::from))]
    tasks: Vec<String>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = Icl::Both)]
    icl: Icl,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transcript corpus root (`<dir>/<task>/<icl|no_icl>/*.json`).
    #[arg(long)]
    transcripts: PathBuf,
    /// Demonstration database used by ICL runs.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Directory of task fixtures; defaults to the built-in set.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Report path. With `--icl both` the mode is appended to the stem.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial episode logs.
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Disable data parallelism.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum DbCommand {
    /// Rewrite the file with one line per record.
    Compact { path: PathBuf },
    /// Build a demonstration database from a transcript corpus.
    Seed {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = TASK_NAMES.map(String::from))]
        tasks: Vec<String>,
        /// Timestamp stamped on the records (RFC 3339).
        #[arg(long, default_value = "2025-01-01T00:00:00Z")]
        created_at: DateTime<Utc>,
    },
    /// Print a summary of every record.
    List { path: PathBuf },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    transcripts: PathBuf,
    /// Mirror of the task table; kept next to the database by default.
    #[arg(long)]
    tasks_file: Option<PathBuf>,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Pin the clock (RFC 3339) for reproducible sessions.
    #[arg(long)]
    fixed_clock: Option<DateTime<Utc>>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Compare { without, with, format } => compare(&without, &with, format),
        Command::Db { command } => db(command),
        Command::Serve(args) => serve(args),
    }
}

fn load_report(path: &Path) -> Result<SuiteReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SuiteReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_store(path: &Path) -> Result<RecordStore> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RecordStore::from_jsonl(&path.display().to_string(), &text)?)
}

fn out_path(out: &Path, icl: bool, both: bool) -> PathBuf {
    if !both {
        return out.to_path_buf();
    }
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let ext = out.extension().map_or("json".into(), |e| e.to_string_lossy().into_owned());
    let mode = if icl { "icl" } else { "no_icl" };
    out.with_file_name(format!("{stem}.{mode}.{ext}"))
}

fn run(args: RunArgs) -> Result<()> {
    let modes: &[bool] = match args.icl {
        Icl::On => &[true],
        Icl::Off => &[false],
        Icl::Both => &[false, true],
    };
    let store = match &args.db {
        Some(p) => Some(load_store(p)?),
        None if modes.contains(&true) => bail!("ICL runs need --db"),
        None => None,
    };
    let mut reports = Vec::new();
    for &icl in modes {
        let mut cfg = SuiteConfig::new(&args.transcripts, icl);
        cfg.tasks = args.tasks.clone();
        cfg.trials_per_task = args.trials;
        cfg.seed = args.seed;
        cfg.top_k = args.top_k;
        cfg.fixture_dir = args.fixtures.clone();
        cfg.log_dir = args.logs.clone();
        cfg.parallelism = if args.sequential { Parallelism::Sequential } else { Parallelism::default() };
        let report = run_suite(&cfg, if icl { store.as_ref() } else { None })?;
        print!("{}", report.to_text());
        if let Some(out) = &args.out {
            let path = out_path(out, icl, modes.len() > 1);
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
            println!("report: {}", path.display());
        }
        reports.push(report);
    }
    if let [without, with] = &reports[..] {
        println!();
        print!("{}", compare_icl(without, with)?.to_text());
    }
    Ok(())
}

fn compare(without: &Path, with: &Path, format: Format) -> Result<()> {
    let cmp = compare_icl(&load_report(without)?, &load_report(with)?)?;
    match format {
        Format::Text => print!("{}", cmp.to_text()),
        Format::Json => println!("{}", cmp.to_json()),
    }
    Ok(())
}

fn db(command: DbCommand) -> Result<()> {
    match command {
        DbCommand::Compact { path } => {
            let mut store = RecordStore::open(&path)?;
            store.compact()?;
            println!("{}: {} records", path.display(), store.len());
        }
        DbCommand::Seed { transcripts, out, tasks, created_at } => {
            if out.exists() {
                bail!("{} already exists", out.display());
            }
            let mut store = RecordStore::open(&out)?;
            let outcomes = build_demo_store(&mut store, &transcripts, &tasks, created_at, &GateThresholds::default())?;
            for (task, o) in tasks.iter().zip(&outcomes) {
                println!("{task:<14} {:?} {:?}", o.decision, o.record_id);
            }
        }
        DbCommand::List { path } => {
            let store = load_store(&path)?;
            for r in store.records() {
                println!(
                    "{:>4}  {:<9} {:>2} steps  {}",
                    r.id,
                    format!("{:?}", r.status).to_lowercase(),
                    r.plan.len(),
                    r.instruction
                );
            }
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let store = RecordStore::open(&args.db)?;
    let clock: Arc<dyn metaplan_annotate::Clock> = match args.fixed_clock {
        Some(t) => Arc::new(FixedClock(t)),
        None => Arc::new(SystemClock),
    };
    let tasks_file = args.tasks_file.unwrap_or_else(|| args.db.with_extension("tasks.json"));
    let mut service = Service::new(store, clock, Arc::new(TranscriptProvider { dir: args.transcripts }))
        .with_task_file(tasks_file)?;
    if let Some(dir) = args.fixtures {
        service = service.with_fixture_dir(dir);
    }
    let app = metaplan_annotate::router(service);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
