use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};

use subsidy::gateway::Hub;
use subsidy::journal::{FileJournal, JournalStore, MemoryJournal};
use subsidy::service::OrgService;
use subsidy::sim::{fuzz_on, seed, CalendarDuration, Manifest, Player, Profile, Script};
use subsidy::Platform;

#[derive(Parser)]
#[command(name = "sim-cli", about = "Seed, script, fuzz and serve a simulated subsidy platform")]
struct Cli {
    /// Journal file backing the platform. Without it, state lives in memory
    /// for this invocation only.
    #[arg(long, global = true)]
    journal: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a fixture and print its manifest.
    Seed {
        /// demo, minimal, randomized or randomized:<seed>
        #[arg(long, default_value = "demo")]
        profile: String,
        /// Seed for the randomized profile.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Play a script; seeds the demo fixture first if the journal is empty.
    Play {
        script: PathBuf,
        #[arg(long, default_value = "demo")]
        profile: String,
    },
    /// Random actor run with invariant checks after every step.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// Move the virtual clock forward by an ISO-8601 duration.
    Clock {
        #[arg(long)]
        advance: String,
    },
    /// Serve the org HTTP API, the app socket and the text gateway on stdin.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Unix socket for app frames.
        #[arg(long)]
        app_socket: Option<PathBuf>,
        /// Read `<mobile>|<body>` lines from stdin and answer on stdout.
        #[arg(long)]
        text_stdin: bool,
    },
}

fn open(journal: Option<&Path>) -> Result<Platform, String> {
    let store: Box<dyn JournalStore> = match journal {
        Some(path) => Box::new(FileJournal::open(path).map_err(|e| e.to_string())?),
        None => Box::new(MemoryJournal::new()),
    };
    Platform::recover(store).map_err(|e| e.to_string())
}

fn manifest_path(journal: &Path) -> PathBuf {
    let mut name = journal.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn load_manifest(journal: Option<&Path>) -> Option<Manifest> {
    let text = std::fs::read_to_string(manifest_path(journal?)).ok()?;
    serde_json::from_str(&text).ok()
}

fn seed_into(platform: &mut Platform, journal: Option<&Path>, profile: Profile) -> Result<Manifest, String> {
    if platform.last_seq() > 0 {
        return Err("journal is not empty; seed into a fresh journal".into());
    }
    let manifest = seed(platform, profile).map_err(|e| e.to_string())?;
    if let Some(path) = journal {
        std::fs::write(manifest_path(path), manifest.to_json()).map_err(|e| e.to_string())?;
    }
    Ok(manifest)
}

fn parse_profile(name: &str, seed: Option<u64>) -> Result<Profile, String> {
    let profile: Profile = name.parse().map_err(|e: subsidy::Error| e.to_string())?;
    Ok(match (profile, seed) {
        (Profile::Randomized(_), Some(s)) => Profile::Randomized(s),
        (p, _) => p,
    })
}

fn run(cli: Cli) -> Result<bool, String> {
    let journal = cli.journal.as_deref();
    match cli.command {
        Command::Seed { profile, seed } => {
            let mut platform = open(journal)?;
            let manifest = seed_into(&mut platform, journal, parse_profile(&profile, seed)?)?;
            println!("{}", serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?);
            Ok(true)
        }
        Command::Play { script, profile } => {
            let text = std::fs::read_to_string(&script).map_err(|e| format!("{}: {e}", script.display()))?;
            let script = Script::parse(&text).map_err(|e| e.to_string())?;
            let mut platform = open(journal)?;
            let manifest = if platform.last_seq() == 0 {
                Some(seed_into(&mut platform, journal, parse_profile(&profile, None)?)?)
            } else {
                load_manifest(journal)
            };
            let mut player = Player::new(Arc::new(Mutex::new(platform)), manifest);
            let report = player.play(&script).map_err(|e| e.to_string())?;
            for line in &report.transcript {
                println!("{line}");
            }
            for a in &report.assertions {
                println!("{} line {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.line, a.detail);
            }
            Ok(report.passed())
        }
        Command::Fuzz { seed: fuzz_seed, steps } => {
            let mut platform = open(journal)?;
            let manifest = if platform.last_seq() == 0 {
                seed_into(&mut platform, journal, Profile::Demo)?
            } else {
                load_manifest(journal).ok_or("fuzzing an existing journal needs its manifest")?
            };
            let report = fuzz_on(&mut platform, &manifest, fuzz_seed, steps).map_err(|e| e.to_string())?;
            println!(
                "steps={} delivered={} cancelled={} open_sessions={} events={} violations={}",
                report.steps,
                report.delivered,
                report.cancelled,
                report.open_sessions,
                report.journal_events,
                report.violations.len()
            );
            for (step, v) in &report.violations {
                println!("step {step}: {v}");
            }
            Ok(report.clean())
        }
        Command::Clock { advance } => {
            let duration = CalendarDuration::parse(&advance).map_err(|e| e.to_string())?;
            let mut platform = open(journal)?;
            let from = platform.now();
            let to = duration.after(from).ok_or("clock overflow")?;
            let report = platform.advance_clock(to).map_err(|e| e.to_string())?;
            println!("clock {from} -> {to}");
            for (at, cycle) in &report.cycles {
                println!("cycle {at}: created={} expired={} notifications={}", cycle.created.len(), cycle.expired.len(), cycle.notifications.len());
            }
            println!("sessions expired: {}", report.expired_sessions);
            Ok(true)
        }
        Command::Serve { addr, app_socket, text_stdin } => {
            let platform = Arc::new(Mutex::new(open(journal)?));
            let service = OrgService::from_shared(Arc::clone(&platform));
            let handle = service.serve(&addr).map_err(|e| e.to_string())?;
            eprintln!("org-service listening on {}", handle.base_url());
            let hub = Hub::new(platform);
            if let Some(path) = app_socket {
                hub.listen_app(&path).map_err(|e| e.to_string())?;
                eprintln!("app frames on {}", path.display());
            }
            if text_stdin {
                hub.set_text_sink(std::io::stdout());
                hub.run_text(std::io::stdin().lock()).map_err(|e| e.to_string())?;
            } else {
                handle.join();
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("sim-cli: {e}");
            ExitCode::from(2)
        }
    }
}
