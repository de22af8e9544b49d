//! `tdm`: run scenarios, tabulate the incentive formulas, replay event logs.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 invariant violation or replay mismatch.

mod econ;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use tdm_core::canonical::{canonical_digest, to_canonical_json, Digest};
use tdm_core::protocol::log::EventLog;
use tdm_core::sim::{self, ScenarioConfig, SimError, SimReport};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "tdm", version, about = "Tokenized data market simulator")]
struct Cli {
    /// Master seed; overrides the config. Falls back to TDM_SEED.
    #[arg(long, global = true, env = "TDM_SEED")]
    seed: Option<u64>,
    /// Output directory for run artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Print only the essential result.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config; writes report.json, events.log and manifest.json.
    Run { config: PathBuf },
    /// Evaluate one closed-form incentive formula.
    Econ(Box<econ::EconArgs>),
    /// Replay an event log and print the final state digest.
    Replay {
        events: PathBuf,
        /// Report to check the digest against; defaults to report.json next
        /// to the log when present.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Run metadata kept out of the report so the report stays reproducible.
#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    config_digest: Digest,
    master_seed: u64,
    report: PathBuf,
    events: PathBuf,
    wall_clock_ms: u128,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config),
        Command::Econ(args) => econ::cmd_econ(args).map_err(|m| Failure::new(EXIT_CONFIG, m)),
        Command::Replay { events, report } => cmd_replay(&cli, events, report.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Failure::new(
            EXIT_CONFIG,
            format!(
                "{}: invalid config at `{field}`: {}",
                path.display(),
                e.inner()
            ),
        )
    })
}

fn sim_failure(e: SimError) -> Failure {
    let code = match e {
        SimError::Invariant { .. } => EXIT_INVARIANT,
        SimError::Config { .. } | SimError::Setup(_) => EXIT_CONFIG,
    };
    Failure::new(code, e.to_string())
}

fn canonical_line<T: Serialize>(value: &T) -> String {
    let mut s = to_canonical_json(value).expect("report types serialize");
    s.push('\n');
    s
}

fn cmd_run(cli: &Cli, config_path: &Path) -> Outcome {
    let started = Instant::now();
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let report: SimReport = sim::run(&cfg).map_err(sim_failure)?;
    fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", cli.out.display())))?;
    let report_path = cli.out.join("report.json");
    let events_path = cli.out.join("events.log");
    write(&report_path, &canonical_line(&report))?;
    write(&events_path, report.event_log.as_deref().unwrap_or(""))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_digest: canonical_digest(&cfg).expect("config serializes"),
        master_seed: cfg.master_seed,
        report: report_path.clone(),
        events: events_path,
        wall_clock_ms: started.elapsed().as_millis(),
    };
    write(&cli.out.join("manifest.json"), &canonical_line(&manifest))?;
    if !cli.quiet {
        println!("experiment  {}", report.experiment);
        println!("seed        {}", report.master_seed);
        println!("config      {}", report.config_digest);
        if let Some(d) = report.final_state_digest {
            println!("state       {d}");
        }
        let off: Vec<&str> = report
            .comparisons
            .iter()
            .filter(|c| !c.within_3_stderr)
            .map(|c| c.name.as_str())
            .collect();
        if !off.is_empty() {
            println!("outside 3 stderr: {}", off.join(", "));
        }
        println!("report      {}", report_path.display());
    }
    Ok(())
}

fn cmd_replay(cli: &Cli, events: &Path, report: Option<&Path>) -> Outcome {
    let text = read(events)?;
    let log = EventLog::parse(&text)
        .map_err(|e| Failure::new(EXIT_INVARIANT, format!("{}: {e}", events.display())))?;
    let engine = log
        .replay()
        .map_err(|e| Failure::new(EXIT_INVARIANT, format!("replay diverged: {e}")))?;
    let digest = engine.state_digest();
    println!("{digest}");

    let sibling = events.with_file_name("report.json");
    let report = match report {
        Some(p) => Some(p.to_path_buf()),
        None => sibling.exists().then_some(sibling),
    };
    if let Some(path) = report {
        let value: serde_json::Value = serde_json::from_str(&read(&path)?)
            .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
        let recorded = value
            .get("final_state_digest")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        if recorded != digest.to_hex() {
            return Err(Failure::new(
                EXIT_INVARIANT,
                format!(
                    "digest mismatch: {} records {recorded}, replay gives {digest}",
                    path.display()
                ),
            ));
        }
        if !cli.quiet {
            eprintln!("matches {}", path.display());
        }
    }
    Ok(())
}
