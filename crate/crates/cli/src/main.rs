//! `girp`: one binary for the server, the client and the tooling around
//! them.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ConfigError, Flags};

static START: OnceLock<Instant> = OnceLock::new();

#[derive(Parser, Debug)]
#[command(name = "girp", version, about = "Remote execution of SPIR-V compute kernels")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings resolved as flag > GIRP_* environment > config file > default.
#[derive(Args, Debug)]
struct GlobalArgs {
    /// Config file of `key = value` lines [env: GIRP_CONFIG]
    #[arg(long, global = true, env = "GIRP_CONFIG")]
    config: Option<PathBuf>,
    /// Address `serve` listens on [env: GIRP_LISTEN_ADDR]
    #[arg(long = "listen", global = true)]
    listen_addr: Option<String>,
    /// Server address for `client` [env: GIRP_CONNECT_ADDR]
    #[arg(long = "server", alias = "connect", global = true)]
    connect_addr: Option<String>,
    /// Execution backend: interp or gpu [env: GIRP_BACKEND]
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Client heartbeat interval [env: GIRP_HEARTBEAT_INTERVAL_MS]
    #[arg(long, global = true)]
    heartbeat_interval_ms: Option<String>,
    /// Missed heartbeats before falling back to local execution [env: GIRP_MISS_THRESHOLD]
    #[arg(long, global = true)]
    miss_threshold: Option<String>,
    /// Largest request payload `serve` accepts [env: GIRP_MAX_FRAME_BYTES]
    #[arg(long, global = true)]
    max_frame_bytes: Option<String>,
    /// error, warn, info, debug, trace or off [env: GIRP_LOG_LEVEL]
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print what a SPIR-V module declares
    Inspect {
        file: PathBuf,
    },
    /// Run a kernel on the local backend over raw little-endian buffer files
    Run {
        file: PathBuf,
        #[arg(long, default_value = "main", env = "GIRP_ENTRY")]
        entry: String,
        /// Workgroup counts X,Y,Z
        #[arg(long, value_parser = commands::parse_groups, env = "GIRP_GROUPS")]
        groups: [u32; 3],
        /// set:binding:file. The file is read before and overwritten after
        /// the dispatch.
        #[arg(long = "buffer", value_parser = commands::parse_buffer_arg)]
        buffers: Vec<commands::BufferArg>,
    },
    /// Host sessions for remote clients
    Serve,
    /// Drive a server with a request script
    Client {
        #[command(subcommand)]
        action: ClientAction,
    },
    /// Move a session from one server to another
    Migrate {
        #[arg(long, env = "GIRP_MIGRATE_FROM")]
        from: String,
        #[arg(long, env = "GIRP_MIGRATE_TO")]
        to: String,
        /// Session id on the source server, 32 hex digits
        #[arg(long, value_parser = commands::parse_session_id, env = "GIRP_SESSION")]
        session: girp::wire::SessionId,
        /// Leave the session open on the source server
        #[arg(long, env = "GIRP_KEEP_SOURCE")]
        keep_source: bool,
    },
    /// Measure latency distributions
    Bench(BenchArgs),
}

#[derive(Subcommand, Debug)]
enum ClientAction {
    /// Execute a script line by line, printing one line per step
    Run {
        script: PathBuf,
        /// Leave the server session open and print its id
        #[arg(long, env = "GIRP_KEEP_SESSION")]
        keep_session: bool,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BenchScenario {
    ColdStart,
    FrameDraw,
    Migrate,
    Rtt,
}

#[derive(Args, Debug)]
struct BenchArgs {
    scenario: BenchScenario,
    /// `local` or a server address
    #[arg(long, default_value = "local", env = "GIRP_TARGET")]
    target: String,
    /// Second server for `migrate`; defaults to the target
    #[arg(long, env = "GIRP_PEER")]
    peer: Option<String>,
    #[arg(long, default_value_t = girp::bench::DEFAULT_ITERATIONS, env = "GIRP_ITERATIONS")]
    iterations: usize,
    /// Discarded iterations before measuring
    #[arg(long, default_value_t = girp::bench::DEFAULT_WARMUP, env = "GIRP_WARMUP")]
    warmup: usize,
    #[arg(long, conflicts_with = "table", env = "GIRP_JSON")]
    json: bool,
    /// AVG / SD / 99th table in milliseconds (the default)
    #[arg(long, env = "GIRP_TABLE")]
    table: bool,
    /// Include raw nanosecond samples in JSON output
    #[arg(long, env = "GIRP_RAW")]
    raw: bool,
    /// Framebuffer size for frame-draw, WxH
    #[arg(long, default_value = "1280x720", value_parser = commands::parse_resolution, env = "GIRP_RESOLUTION")]
    resolution: (u32, u32),
    /// Corrupt every Nth snapshot in `migrate` to exercise rejection
    #[arg(long, env = "GIRP_TAMPER_EVERY")]
    tamper_every: Option<usize>,
    #[arg(long, default_value_t = 120.0, env = "GIRP_REFRESH_HZ")]
    refresh_hz: f64,
    #[arg(long, default_value_t = 1.0, env = "GIRP_SYNC_MS")]
    sync_ms: f64,
    #[arg(long, default_value_t = 0.5, env = "GIRP_ACCESS_UPLINK_MS")]
    access_uplink_ms: f64,
    #[arg(long, default_value_t = 0.5, env = "GIRP_ACCESS_DOWNLINK_MS")]
    access_downlink_ms: f64,
}

/// An operational failure: the registry name goes to stderr and the exit
/// code is 1.
#[derive(Debug)]
pub struct Failure {
    pub name: &'static str,
    pub message: String,
}

impl Failure {
    pub fn of(e: impl girp::error::Registered + std::fmt::Display) -> Self {
        Failure {
            name: e.name(),
            message: e.to_string(),
        }
    }

    pub fn io(context: impl std::fmt::Display, e: std::io::Error) -> Self {
        Failure {
            name: "Io",
            message: format!("{context}: {e}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            name: "ConfigError",
            message: e.to_string(),
        }
    }
}

fn init_logging(level: log::LevelFilter) {
    let start = *START.get_or_init(Instant::now);
    env_logger::Builder::new()
        .filter_level(level)
        .format(move |buf, record| {
            writeln!(
                buf,
                "{:<5} {:>12.6} {}: {}",
                record.level(),
                start.elapsed().as_secs_f64(),
                record.target(),
                record.args()
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn load_config(global: &GlobalArgs) -> Result<config::Config, Failure> {
    let file = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path.display(), e))?;
            config::parse_file(&text)?
        }
        None => Default::default(),
    };
    let flags = Flags {
        listen_addr: global.listen_addr.clone(),
        connect_addr: global.connect_addr.clone(),
        backend: global.backend.clone(),
        heartbeat_interval_ms: global.heartbeat_interval_ms.clone(),
        miss_threshold: global.miss_threshold.clone(),
        max_frame_bytes: global.max_frame_bytes.clone(),
        log_level: global.log_level.clone(),
    };
    Ok(config::resolve(&flags, &|k| std::env::var(k).ok(), &file)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli.global)?;
    init_logging(config.log_level);
    if let Some(p) = &cli.global.config {
        log::info!("config file {}", p.display());
    }
    config.log_effective();
    match cli.command {
        Command::Inspect { file } => commands::inspect(&file),
        Command::Run {
            file,
            entry,
            groups,
            buffers,
        } => commands::run_local(&config, &file, &entry, groups, &buffers),
        Command::Serve => commands::serve(&config),
        Command::Client {
            action: ClientAction::Run { script, keep_session },
        } => commands::client_run(&config, &script, keep_session),
        Command::Migrate {
            from,
            to,
            session,
            keep_source,
        } => commands::migrate(&from, &to, session, keep_source),
        Command::Bench(args) => commands::bench(&config, &args),
    }
}

fn main() -> ExitCode {
    START.get_or_init(Instant::now);
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = std::io::stdout().flush();
            eprintln!("error[{}]: {}", f.name, f.message);
            ExitCode::from(1)
        }
    }
}
