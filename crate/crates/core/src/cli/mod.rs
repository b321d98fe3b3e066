//! Command-line front end: `run`, `validate`, `list`, `serve`.

pub mod config;

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::backend::PROFILE_NAMES;
use crate::iosys::{
    Broadcaster, LogWriter, TelemetryServer, TeleopHub, TeleopInput, TrajectoryInput,
};
use crate::robot::BUILTIN_NAMES;
use crate::runtime::{InputSystem, RobotSpec, RunReport, Runtime, RuntimeError};

pub use config::{
    apply_override, load_config, parse_config, ConfigError, InputRef, OutputRef, ResolvedConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_STALE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "rems",
    version,
    about = "Run robot definitions against swappable implementations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a run and write logs plus a JSON report.
    Run(RunArgs),
    /// Check a configuration without running it.
    Validate(ConfigArgs),
    /// List built-in definitions, device profiles, and implementation syntax.
    List,
    /// Run with the telemetry/teleop endpoint, paced in real time.
    Serve(RunArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set dt=0.001` or
    /// `--set robot.0.implementation=emulated:woodbot-like`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub realtime_factor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the report and default logs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Address for the telemetry/teleop endpoint.
    #[arg(long)]
    pub bind: Option<String>,
    /// Print progress once per simulated second.
    #[arg(long)]
    pub progress: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.config.set.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("run.{k}={v}"));
            }
        };
        push("duration", self.duration.map(|v| format!("{v:?}")));
        push("dt", self.dt.map(|v| format!("{v:?}")));
        push(
            "realtime_factor",
            self.realtime_factor.map(|v| format!("{v:?}")),
        );
        push("seed", self.seed.map(|v| v.to_string()));
        push(
            "out",
            self.out
                .as_ref()
                .map(|p| toml_string(&p.display().to_string())),
        );
        push("bind", self.bind.as_ref().map(|b| toml_string(b)));
        if self.progress {
            push("progress", Some("true".into()));
        }
        o
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with(cli: Cli, stop: Arc<AtomicBool>) -> i32 {
    match cli.command {
        Command::List => {
            print!("{}", listing());
            EXIT_OK
        }
        Command::Validate(args) => match load_config(&args.config, &args.set) {
            Ok(cfg) => {
                println!(
                    "{}: ok ({} robot(s), {} steps of {} s)",
                    args.config.display(),
                    cfg.robots.len(),
                    crate::runtime::step_count(cfg.run.duration, cfg.run.dt),
                    cfg.run.dt
                );
                for r in &cfg.robots {
                    println!(
                        "  {}: {} on {}",
                        r.id,
                        r.definition.name(),
                        r.implementation
                    );
                }
                EXIT_OK
            }
            Err(e) => {
                eprintln!("{}: {e}", args.config.display());
                EXIT_FAILURE
            }
        },
        Command::Run(args) => run_command(&args, false, stop),
        Command::Serve(args) => run_command(&args, true, stop),
    }
}

pub fn listing() -> String {
    let mut s = String::from("definitions:\n");
    for n in BUILTIN_NAMES {
        s.push_str(&format!("  {n}\n"));
    }
    s.push_str("profiles:\n");
    for p in PROFILE_NAMES {
        s.push_str(&format!("  {p}\n"));
    }
    s.push_str(
        "implementations:\n  analytical\n  emulated:<profile>\n  bridge:<ws://host:port/path>\n",
    );
    s.push_str("inputs:\n  none\n  teleop\n  trajectory:<path>\n");
    s.push_str("outputs:\n  log\n  log:<dir>\n  broadcast\n");
    s
}

fn run_command(args: &RunArgs, serve: bool, stop: Arc<AtomicBool>) -> i32 {
    let mut cfg = match load_config(&args.config.config, &args.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", args.config.config.display());
            return EXIT_FAILURE;
        }
    };
    if serve {
        if !cfg.uses_teleop() && !cfg.uses_broadcast() {
            eprintln!(
                "serve needs at least one `teleop` input or `broadcast` output; \
                 use `run` for offline runs"
            );
            return EXIT_FAILURE;
        }
        if cfg.run.realtime_factor == 0.0 {
            log::info!("serve paces in real time: realtime_factor set to 1");
            cfg.run.realtime_factor = 1.0;
        }
    }
    match execute(&cfg, stop) {
        Ok(report) => {
            print!("{}", report.summary());
            let path = cfg.out.join("report.json");
            if let Err(e) = std::fs::create_dir_all(&cfg.out)
                .and_then(|_| std::fs::write(&path, report.to_json()))
            {
                eprintln!("could not write {}: {e}", path.display());
                return EXIT_FAILURE;
            }
            println!("report: {}", path.display());
            if report.any_stale() {
                EXIT_STALE
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecuteError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("telemetry endpoint: {0}")]
    Endpoint(#[from] crate::iosys::IoError),
    #[error("robot `{robot}`: {source}")]
    Backend {
        robot: String,
        source: crate::backend::BackendError,
    },
}

fn input_system(input: &InputRef, hub: &TeleopHub) -> Option<Box<dyn InputSystem>> {
    match input {
        InputRef::None => None,
        InputRef::Teleop => Some(Box::new(TeleopInput::new(hub.clone()))),
        InputRef::Trajectory { path, trajectory } => Some(Box::new(TrajectoryInput::new(
            path.display().to_string(),
            trajectory.clone(),
        ))),
    }
}

/// Build the runtime from a resolved configuration and run it.
pub fn execute(cfg: &ResolvedConfig, stop: Arc<AtomicBool>) -> Result<RunReport, ExecuteError> {
    let hub = TeleopHub::new();
    let server = if cfg.uses_teleop() || cfg.uses_broadcast() {
        let s = TelemetryServer::bind(&cfg.bind, hub.clone())?;
        eprintln!("telemetry endpoint: {}", s.url());
        Some(s)
    } else {
        None
    };
    let result = build_and_run(cfg, &hub, server.as_ref(), stop);
    if let Some(s) = server {
        s.shutdown();
    }
    result
}

fn build_and_run(
    cfg: &ResolvedConfig,
    hub: &TeleopHub,
    server: Option<&TelemetryServer>,
    stop: Arc<AtomicBool>,
) -> Result<RunReport, ExecuteError> {
    let mut rt = Runtime::new(cfg.run.clone())?;
    for r in &cfg.robots {
        let backend =
            r.implementation
                .build(&r.profile)
                .map_err(|source| ExecuteError::Backend {
                    robot: r.id.clone(),
                    source,
                })?;
        let mut spec =
            RobotSpec::new(r.id.clone(), r.definition.clone(), backend).with_sense(r.sense);
        if let Some(input) = r.input.as_ref().and_then(|i| input_system(i, hub)) {
            spec = spec.with_input(input);
        }
        rt.add_robot(spec)?;
    }
    if let Some(input) = input_system(&cfg.input, hub) {
        rt.set_system_input(input);
    }
    for (dir, ids) in config::log_groups(cfg) {
        rt.add_output(Box::new(LogWriter::for_robots(dir, ids)));
    }
    if let Some(server) = server {
        let ids: Vec<String> = cfg
            .robots
            .iter()
            .filter(|r| r.outputs.contains(&OutputRef::Broadcast))
            .map(|r| r.id.clone())
            .collect();
        if !ids.is_empty() {
            rt.add_output(Box::new(
                Broadcaster::new(server.clone(), cfg.broadcast_rate)?.for_robots(ids),
            ));
        }
    }
    rt.set_stop_flag(stop);
    Ok(rt.run()?)
}
