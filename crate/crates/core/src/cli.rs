//! Command-line surface: `run`, `gen` and `oracle`.
//!
//! Exit codes: 0 success, 1 oracle mismatch, 2 malformed input or I/O
//! failure, 3 invalid configuration.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use log::{debug, info};
use serde::Serialize;

use crate::error::Error;
use crate::format::{read_stream, write_stream};
use crate::harness::{
    generate_stream, run_pipeline, AggregateMetrics, FrameMetrics, RunOptions, ScenarioSpec,
};
use crate::oracle::{oracle_suite, OracleOptions};
use crate::types::{Anchor, Budget, EngineConfig, PoolingKind, Scope, TemporalStrategy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ORACLE_MISMATCH: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_BAD_CONFIG: i32 = 3;

pub const LOG_ENV: &str = "MEMSHRINK_LOG";
pub const REPORT_FILE: &str = "report.json";
pub const FRAMES_FILE: &str = "frames.csv";

#[derive(Debug, Parser)]
#[command(
    name = "memshrink",
    version,
    about = "Memory-bank token compression engine"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the compression pipeline over a scenario or a stream file.
    Run(RunArgs),
    /// Generate a synthetic stream file from a scenario.
    Gen(GenArgs),
    /// Check the kernels against brute-force oracles.
    Oracle(OracleArgs),
}

fn parse_pool_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((parse(h)?, parse(w)?))
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["scenario", "stream"])))]
pub struct RunArgs {
    /// Scenario JSON to synthesise the stream from.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Binary stream file (see `gen`).
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Directory for report.json and frames.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// topn, no-tmc, gt-last, first-last, moving-avg or gt-first-last.
    #[arg(long)]
    pub strategy: Option<TemporalStrategy>,
    /// prev or gt.
    #[arg(long)]
    pub anchor: Option<Anchor>,
    /// global or per-frame.
    #[arg(long)]
    pub scope: Option<Scope>,
    /// avg or max.
    #[arg(long)]
    pub pool: Option<PoolingKind>,
    /// Pooling window, e.g. 2x2.
    #[arg(long, value_parser = parse_pool_size)]
    pub pool_size: Option<(usize, usize)>,
    /// Selection budget: a token count or `auto`.
    #[arg(long)]
    pub budget: Option<Budget>,
    /// Bank capacity in frames, GT included.
    #[arg(long)]
    pub capacity: Option<usize>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub no_absence_filter: bool,
    #[arg(long)]
    pub no_iou_gate: bool,
    /// Disable position codes on queries and keys.
    #[arg(long)]
    pub no_pe: bool,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

impl RunArgs {
    pub fn engine_config(&self) -> EngineConfig {
        let mut cfg = EngineConfig::default();
        if let Some(s) = self.strategy {
            cfg.temporal_strategy = s;
        }
        if let Some(a) = self.anchor {
            cfg.anchor = a;
        }
        if let Some(s) = self.scope {
            cfg.scope = s;
        }
        if let Some(p) = self.pool {
            cfg.pooling_kind = p;
        }
        if let Some((dh, dw)) = self.pool_size {
            cfg.pool_dh = dh;
            cfg.pool_dw = dw;
        }
        if let Some(b) = self.budget {
            cfg.selection_budget = b;
        }
        if let Some(t) = self.capacity {
            cfg.bank_capacity = t;
        }
        if let Some(th) = self.iou_threshold {
            cfg.iou_threshold = th;
        }
        cfg.absence_filter = !self.no_absence_filter;
        cfg.iou_gate = !self.no_iou_gate;
        cfg.position_encoding = !self.no_pe;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scenario JSON; the reference scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output stream path. A `<out>.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Instances per check; per-check defaults when omitted.
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Perturb kernel output before comparison (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// A failed command: exit code plus diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_BAD_INPUT,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_BAD_CONFIG,
            message: message.into(),
        }
    }
}

/// Errors from the engine on stream content are input problems; divisibility
/// and config errors are configuration problems.
fn classify(err: Error) -> Failure {
    match err {
        Error::InvalidConfig(_) | Error::PoolingDivisibility { .. } => {
            Failure::config(err.to_string())
        }
        _ => Failure::input(err.to_string()),
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a EngineConfig,
    aggregate: &'a AggregateMetrics,
    frames_path: &'a str,
}

#[derive(Serialize)]
struct FrameRow<'a> {
    frame_index: usize,
    admitted: bool,
    reason: &'a str,
    memory_tokens: usize,
    compression_ratio: f64,
    motion_recall: Option<f64>,
    mac_count: u64,
}

fn write_frames_csv(path: &Path, frames: &[FrameMetrics]) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for f in frames {
        w.serialize(FrameRow {
            frame_index: f.frame_index,
            admitted: f.admitted,
            reason: f.reason.as_str(),
            memory_tokens: f.memory_tokens,
            compression_ratio: f.compression_ratio,
            motion_recall: f.motion_recall,
            mac_count: f.mac_count,
        })
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let config = args.engine_config();
    config.validate().map_err(classify)?;

    let (frames, truth, seed) = match (&args.scenario, &args.stream) {
        (Some(path), _) => {
            let mut spec = load_scenario(path)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            let stream = generate_stream(&spec).map_err(|e| Failure::input(e.to_string()))?;
            (stream.frames, Some(stream.truth), spec.seed)
        }
        (None, Some(path)) => {
            let file = fs::File::open(path)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let (header, frames) = read_stream(std::io::BufReader::new(file)).map_err(classify)?;
            debug!(
                "read {} frames of {}x{}x{}",
                header.frame_count, header.height, header.width, header.channels
            );
            (frames, None, args.seed.unwrap_or(0))
        }
        (None, None) => return Err(Failure::input("one of --scenario or --stream is required")),
    };
    let first = frames
        .first()
        .ok_or_else(|| Failure::input("stream has no frames"))?;
    let resolved = config
        .resolved(first.height, first.width)
        .map_err(classify)?;

    if args.print_config {
        let text = serde_json::to_string_pretty(&resolved).expect("config serialises");
        println!("{text}");
        return Ok(());
    }

    let options = RunOptions {
        baseline_seed: seed,
        ..RunOptions::default()
    };
    let metrics = run_pipeline(&frames, truth.as_ref(), &resolved, options).map_err(classify)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::input(format!("{}: {e}", args.out.display())))?;
    write_frames_csv(&args.out.join(FRAMES_FILE), &metrics.frames)?;
    let report = Report {
        config: &resolved,
        aggregate: &metrics.aggregate,
        frames_path: FRAMES_FILE,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serialises");
    text.push('\n');
    let report_path = args.out.join(REPORT_FILE);
    fs::write(&report_path, text)
        .map_err(|e| Failure::input(format!("{}: {e}", report_path.display())))?;

    let agg = &metrics.aggregate;
    info!(
        "wrote {} and {}",
        report_path.display(),
        args.out.join(FRAMES_FILE).display()
    );
    println!(
        "frames={} admitted={} steady_tokens={} steady_ratio={} mean_recall={} uniform_recall={}",
        agg.frames,
        agg.admitted,
        agg.steady_state_memory_tokens
            .map_or("-".into(), |v| v.to_string()),
        agg.steady_state_ratio
            .map_or("-".into(), |v| format!("{v:.6}")),
        agg.mean_motion_recall
            .map_or("-".into(), |v| format!("{v:.4}")),
        agg.uniform_baseline_recall
            .map_or("-".into(), |v| format!("{v:.4}")),
    );
    Ok(())
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), Failure> {
    let mut spec = match &args.scenario {
        Some(path) => load_scenario(path)?,
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let stream = generate_stream(&spec).map_err(|e| Failure::input(e.to_string()))?;
    let io = |p: &Path, e: std::io::Error| Failure::input(format!("{}: {e}", p.display()));
    let file = fs::File::create(&args.out).map_err(|e| io(&args.out, e))?;
    write_stream(std::io::BufWriter::new(file), &stream.frames).map_err(|e| io(&args.out, e))?;
    let meta = meta_path(&args.out);
    let text = serde_json::to_string_pretty(&spec).expect("scenario serialises");
    fs::write(&meta, text + "\n").map_err(|e| io(&meta, e))?;
    info!(
        "wrote {} frames to {}",
        stream.frames.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<(), Failure> {
    let mut opts = match args.instances {
        Some(n) => OracleOptions::uniform(n, args.seed),
        None => OracleOptions {
            seed: args.seed,
            ..OracleOptions::default()
        },
    };
    opts.inject_fault = args.inject_fault;
    let report = oracle_suite(&opts);
    for c in &report.checks {
        println!(
            "{:<5} {:<22} instances={:<4} mismatches={:<4} max_dev={:.3e} tol={:.0e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.instances,
            c.mismatches,
            c.max_deviation,
            c.tolerance
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_ORACLE_MISMATCH,
            message: "oracle mismatch".into(),
        })
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "error");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_BAD_INPUT
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("memshrink: {}", f.message);
            f.code
        }
    }
}
