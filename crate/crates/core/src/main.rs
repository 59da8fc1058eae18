use clap::{Args, Parser, Subcommand};
use std::error::Error;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;
use wrenchlink::bench::bench;
use wrenchlink::session::{
    run_pipeline, verify_log, Session, SessionOptions, TracePaths, VerifyOutcome,
};
use wrenchlink::sim_bus::{gen_synthetic, sample_count, DeviceKind, Scenario, TraceSet};
use wrenchlink::stream::{serve, ServeOptions};
use wrenchlink::{load_config, period_us, PipelineConfig};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

/// Deterministic teleoperation feedback pipeline over simulated devices.
#[derive(Parser)]
#[command(name = "wrenchlink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over recorded traces.
    Run(RunArgs),
    /// Run the pipeline in real time and stream telemetry over TCP.
    Serve(ServeArgs),
    /// Write synthetic device traces.
    Gen(GenArgs),
    /// Re-run a command log's inputs and compare the outputs.
    Verify { log: PathBuf },
    /// Time each pipeline stage over a synthetic run.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline config (TOML). Defaults to the bundled configuration.
    #[arg(long, env = "WRENCHLINK_CONFIG")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        Ok(match &self.config {
            Some(p) => load_config(p)?,
            None => PipelineConfig::default(),
        })
    }
}

#[derive(Args)]
struct TraceArgs {
    /// Directory holding traces as written by `gen`; explicit flags win.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long)]
    ft_trace: Option<PathBuf>,
    #[arg(long)]
    imu_trace: Option<PathBuf>,
    #[arg(long)]
    hall_trace: Option<PathBuf>,
    #[arg(long)]
    force_trace: Option<PathBuf>,
    #[arg(long)]
    pose_trace: Option<PathBuf>,
}

impl TraceArgs {
    /// Absolute paths, so logs verify from any working directory.
    fn paths(&self) -> Result<TracePaths> {
        let mut paths = TracePaths::default();
        for kind in DeviceKind::ALL {
            let explicit = match kind {
                DeviceKind::Ft => &self.ft_trace,
                DeviceKind::Imu => &self.imu_trace,
                DeviceKind::Hall => &self.hall_trace,
                DeviceKind::FingertipForce => &self.force_trace,
                DeviceKind::Pose => &self.pose_trace,
            };
            let path = match (explicit, &self.trace_dir) {
                (Some(p), _) => Some(p.clone()),
                (None, Some(dir)) => Some(dir.join(kind.file_name())).filter(|p| p.exists()),
                (None, None) => None,
            };
            if let Some(p) = path {
                let abs = std::fs::canonicalize(&p)
                    .map_err(|e| format!("{} trace {}: {e}", kind.name(), p.display()))?;
                paths.set(kind, abs);
            }
        }
        Ok(paths)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    traces: TraceArgs,
    /// Ticks to run. Defaults to the span of the longest trace.
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long)]
    out_commands: Option<PathBuf>,
    /// Episode output; needs a pose trace.
    #[arg(long)]
    out_episode: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    traces: TraceArgs,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Stop after this many ticks; run until killed otherwise.
    #[arg(long)]
    ticks: Option<u64>,
    /// Tick as fast as possible instead of at the configured rate.
    #[arg(long)]
    free_run: bool,
    #[arg(long)]
    out_commands: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// step_press, swing or pinch.
    #[arg(long)]
    scenario: Scenario,
    /// Seconds of simulated time.
    #[arg(long, allow_hyphen_values = true)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value = "step_press")]
    scenario: Scenario,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

/// Ticks needed to reach the last sample of every trace.
fn span_ticks(traces: &TraceSet, cfg: &PipelineConfig) -> u64 {
    fn last<T: wrenchlink::sim_bus::TraceSample>(
        s: &Option<wrenchlink::sim_bus::TraceSource<T>>,
    ) -> Option<u64> {
        s.as_ref()?.samples().last().map(T::t_us)
    }
    let end = [
        last(&traces.ft),
        last(&traces.imu),
        last(&traces.hall),
        last(&traces.force),
        last(&traces.pose),
    ]
    .into_iter()
    .flatten()
    .max();
    end.map_or(0, |t| t.div_ceil(period_us(cfg.tick_rate_hz)) + 1)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let paths = args.traces.paths()?;
    let traces = paths.load()?;
    let ticks = args.ticks.unwrap_or_else(|| span_ticks(&traces, &cfg));
    let opts = SessionOptions {
        record_commands: args.out_commands.is_some(),
        record_episode: args.out_episode.is_some(),
        paths,
    };
    let out = run_pipeline(cfg, traces, ticks, opts)?;
    if let (Some(path), Some(log)) = (&args.out_commands, &out.commands) {
        log.save(path)?;
    }
    if let (Some(path), Some(ep)) = (&args.out_episode, &out.episode) {
        ep.save(path)?;
    }
    eprintln!("ran {ticks} ticks");
    Ok(ExitCode::SUCCESS)
}

fn serve_cmd(args: ServeArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let paths = args.traces.paths()?;
    let traces = paths.load()?;
    let opts = SessionOptions {
        record_commands: args.out_commands.is_some(),
        record_episode: false,
        paths,
    };
    let mut serve_opts = ServeOptions::real_time(&cfg);
    serve_opts.ticks = args.ticks;
    if args.free_run {
        serve_opts.tick_interval = Duration::ZERO;
    }
    let session = Session::new(cfg, traces, opts)?;
    let listener = TcpListener::bind(&args.listen)
        .map_err(|e| format!("cannot listen on {}: {e}", args.listen))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let out = serve(listener, session, serve_opts)?;
    if let (Some(path), Some(log)) = (&args.out_commands, &out.commands) {
        log.save(path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gen(args: GenArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let traces = gen_synthetic(args.scenario, args.duration, args.seed, &cfg)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", args.out_dir.display()))?;
    for path in traces.save_dir(&args.out_dir)? {
        println!("{}", path.display());
    }
    eprintln!(
        "{} ticks of {} (seed {})",
        sample_count(args.duration, &cfg),
        args.scenario,
        args.seed
    );
    Ok(ExitCode::SUCCESS)
}

fn verify(log: &Path) -> Result<ExitCode> {
    Ok(match verify_log(log)? {
        VerifyOutcome::Identical => {
            println!("identical");
            ExitCode::SUCCESS
        }
        VerifyOutcome::Differs(d) => {
            match d.tick {
                Some(tick) => println!("differs at tick {tick} (line {})", d.line),
                None => println!("differs at line {}", d.line),
            }
            ExitCode::from(1)
        }
        VerifyOutcome::InputChanged { kind, path } => {
            let path = path.map_or_else(
                || "(no path recorded)".to_owned(),
                |p| p.display().to_string(),
            );
            println!(
                "input changed: {} trace {path} no longer matches its recorded digest",
                kind.name()
            );
            ExitCode::from(1)
        }
    })
}

fn bench_cmd(args: BenchArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let report = bench(&cfg, args.scenario, args.duration, args.seed)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    let budget_us = 1e6 / f64::from(cfg.tick_rate_hz);
    if report.total.mean >= budget_us
        || report.total.p99 >= budget_us
        || !report.faster_than_real_time()
    {
        eprintln!("error: tick budget of {budget_us:.0} us exceeded");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: bad arguments"));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Gen(a) => gen(a),
        Command::Verify { log } => verify(&log),
        Command::Bench(a) => bench_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
