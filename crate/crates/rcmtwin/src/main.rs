use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rcmtwin::config::TwinConfig;
use rcmtwin::drills::{self, Drill};
use rcmtwin::report::{write_trace_file, BenchReport};
use rcmtwin::service::{self, ServiceConfig};
use rcmtwin::session::{load_recording, play, Twin};
use rcmtwin_core::bench::{self, evaluate, AcceptanceBounds, TrajectoryParams};
use rcmtwin_core::servo_sim::World;

#[derive(Parser)]
#[command(name = "rcmtwin", version, about = "Digital twin of a two-arm laparoscopy trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trajectory benchmarks.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Run the twin in real time and accept clients.
    Serve(ServeArgs),
    /// Replay a recorded session (`.jsonl`) headless and report RCM error.
    Play {
        session: PathBuf,
        #[arg(long, env = "RCMTWIN_ROBOT")]
        robot: Option<PathBuf>,
        #[arg(long, env = "RCMTWIN_WORKSPACE")]
        workspace: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Ticks to run after the last command.
        #[arg(long, default_value_t = 125)]
        settle: u64,
    },
    /// Run the scripted safety drills.
    Drill {
        #[arg(value_enum)]
        which: Option<DrillArg>,
    },
}

#[derive(Subcommand)]
enum BenchAction {
    Run {
        #[arg(long, value_enum)]
        shape: Shape,
        /// Workspace file; the embedded default when absent.
        #[arg(long, env = "RCMTWIN_WORKSPACE")]
        config: Option<PathBuf>,
        #[arg(long, env = "RCMTWIN_ROBOT")]
        robot: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Cone,
    Pyramid,
}

#[derive(Clone, Copy, ValueEnum)]
enum DrillArg {
    ThetaLimit,
    Unreachable,
    SingularWrist,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, env = "RCMTWIN_PORT", default_value_t = 7878)]
    port: u16,
    #[arg(long, env = "RCMTWIN_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "RCMTWIN_ROBOT")]
    robot: Option<PathBuf>,
    #[arg(long, env = "RCMTWIN_WORKSPACE")]
    workspace: Option<PathBuf>,
    /// Control rate, Hz.
    #[arg(long, env = "RCMTWIN_RATE")]
    rate: Option<f64>,
    /// Servo lookahead time, s.
    #[arg(long, env = "RCMTWIN_LOOKAHEAD")]
    lookahead: Option<f64>,
    /// Serve the browser console on this port.
    #[arg(long, env = "RCMTWIN_HTTP_PORT")]
    http_port: Option<u16>,
    #[arg(long, env = "RCMTWIN_STATIC_DIR", default_value = "console/dist")]
    static_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RCMTWIN_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Bench { action: BenchAction::Run { shape, config, robot, out, trace } } => {
            let cfg = TwinConfig::load(robot.as_deref(), config.as_deref()).context("loading configuration")?;
            let (name, params) = match shape {
                Shape::Cone => ("cone", TrajectoryParams::Cone(cfg.bench.cone)),
                Shape::Pyramid => ("pyramid", TrajectoryParams::Pyramid(cfg.bench.pyramid)),
            };
            let started = Instant::now();
            let mut world = World::new(cfg.world.clone())?;
            let outcome = bench::run(&mut world, &params, &cfg.bench.run)?;
            let runtime = started.elapsed().as_secs_f64();
            let report = BenchReport::new(name, outcome.report, AcceptanceBounds::default(), outcome.failure, runtime);
            let m = &report.metrics;
            println!(
                "{name}: tracking max {:.4} mm rmse {:.4} mm | rcm max {:.2e} mm rmse {:.2e} mm | {} samples | {:.2} s",
                m.tracking_max, m.tracking_rmse, m.rcm_max, m.rcm_rmse, m.n_samples, runtime
            );
            if let Some(f) = &report.failure {
                println!("{name}: stopped early: {f}");
            }
            if let Some(p) = out {
                report.write(&p)?;
            }
            if let Some(p) = trace {
                write_trace_file(&p, &outcome.trace)?;
            }
            println!("{name}: {}", if report.pass { "within bounds" } else { "OUT OF BOUNDS" });
            Ok(report.pass)
        }
        Command::Serve(args) => {
            let cfg = TwinConfig::load(args.robot.as_deref(), args.workspace.as_deref())
                .context("loading configuration")?
                .with_servo(args.rate, args.lookahead)?;
            let twin = Twin::new(&cfg)?;
            let http = args.http_port.map(|p| (format!("{}:{p}", args.host), args.static_dir.clone()));
            let svc_cfg = ServiceConfig { bind: format!("{}:{}", args.host, args.port), http, ..Default::default() };
            let handle = service::start(twin, &svc_cfg).with_context(|| format!("binding {}", svc_cfg.bind))?;
            if let Some(a) = handle.http_addr {
                log::info!("console at http://{a}/");
            }
            let report = handle.wait();
            log::info!("stopped after {} ticks", report.ticks);
            Ok(true)
        }
        Command::Play { session, robot, workspace, trace, settle } => {
            let cfg = TwinConfig::load(robot.as_deref(), workspace.as_deref()).context("loading configuration")?;
            let recording = load_recording(&session)?;
            if recording.is_empty() {
                bail!("{} holds no commands", session.display());
            }
            let mut twin = Twin::new(&cfg)?;
            let out = play(&mut twin, &recording, settle);
            let report = evaluate(&out.trace)?;
            println!(
                "{} commands, {} ticks: rcm max {:.2e} mm rmse {:.2e} mm, {} events, {} rejected",
                recording.len(),
                out.trace.rows.len() / 2,
                report.rcm_max,
                report.rcm_rmse,
                out.events.len(),
                out.rejected.len()
            );
            for e in &out.events {
                println!("  tick {} {} arm: {} ({:.3e})", e.tick, e.arm, e.kind.as_str(), e.detail);
            }
            if let Some(p) = trace {
                write_trace_file(&p, &out.trace)?;
            }
            Ok(true)
        }
        Command::Drill { which } => {
            let list: Vec<Drill> = match which {
                None => Drill::ALL.to_vec(),
                Some(DrillArg::ThetaLimit) => vec![Drill::ThetaLimit],
                Some(DrillArg::Unreachable) => vec![Drill::Unreachable],
                Some(DrillArg::SingularWrist) => vec![Drill::SingularWrist],
            };
            let mut ok = true;
            for d in list {
                let out = drills::run(d)?;
                let pass = out.passed(cfg_rcm_bound());
                ok &= pass;
                let first = out.first.as_ref().map_or("none".to_string(), |(t, e)| {
                    let kinds: Vec<_> = e.iter().map(|e| e.kind.as_str()).collect();
                    format!("tick {t}: {}", kinds.join(", "))
                });
                println!(
                    "{}: first events {first}; holding {}; rcm max {:.2e} mm -> {}",
                    d.name(),
                    out.held,
                    out.rcm_max * 1e3,
                    if pass { "ok" } else { "FAILED" }
                );
            }
            Ok(ok)
        }
    }
}

fn cfg_rcm_bound() -> f64 {
    rcmtwin_core::safety::SafetyLimits::default().rcm_error_max
}
