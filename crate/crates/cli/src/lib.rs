//! Command-line front end.
//!
//! Every subcommand reads a JSON run configuration (`--config`). Flags
//! override configuration values, which override the built-in defaults.
//! Results go to stdout as one JSON document with an `input` block that
//! records the config path and its SHA-256. Commands that produce tables
//! (`sweep`, `simulate`, `montecarlo`) write CSV to `--out`, or to stdout
//! when no output path is given.
//!
//! Exit status: 0 on success, 1 for invalid input, 2 for numerical failure.
//! Errors are reported on stderr as JSON.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use secrecy_core::bounds::{
    critical_rates, secrecy_interval_from_rates, solve_s, solve_v_with_rates, DEFAULT_FIXED_POINT_MAX_ITERS,
    DEFAULT_FIXED_POINT_TOL, DEFAULT_P_UPPER_TOL,
};
use secrecy_core::channel::Mechanism;
use secrecy_core::config::{parse_config, RunConfig};
use secrecy_core::designer::Designer;
use secrecy_core::export::{write_curve_csv, write_sweep_csv, write_trace_csv};
use secrecy_core::montecarlo::{expected_error_curve, simulate_trace, time_average_error, Receiver};
use secrecy_core::scalar::{scalar_critical, scalar_p_star, scalar_s, scalar_v, ScalarSystem};
use secrecy_core::serde_ext::format_extended;
use secrecy_core::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_P: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_SIM_STEPS: usize = 200;
pub const DEFAULT_MC_STEPS: usize = 300;
pub const DEFAULT_RUNS: usize = 2000;
pub const DEFAULT_M_MIN: f64 = 2.0;
pub const DEFAULT_M_MAX: f64 = 100.0;
pub const DEFAULT_M_POINTS: usize = 25;

#[derive(Debug, Parser)]
#[command(name = "secrecy", version, about = "Design and evaluate packet-withholding secrecy mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for parallel commands (default: all cores)
    #[arg(long, global = true, env = "SECRECY_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration
    #[arg(long)]
    pub config: PathBuf,

    /// Output path for CSV tables (default: config "output", else stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical rates and both error bounds at one withholding probability
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Transmission probability (default: config "p", else 1.0)
        #[arg(long)]
        p: Option<f64>,
    },
    /// Perfect-secrecy interval for the configured channel
    Interval {
        #[command(flatten)]
        common: Common,
    },
    /// Optimal transmission probability for a secrecy floor
    Design {
        #[command(flatten)]
        common: Common,
        /// Required eavesdropper error trace M (default: config "M")
        #[arg(long)]
        secrecy_floor: Option<f64>,
        /// Bisection tolerance (default: config "epsilon", else 1e-6)
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Secrecy/utility tradeoff over a grid of secrecy floors
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Smallest M of a log-spaced grid (default: config "M_grid", else 2)
        #[arg(long)]
        m_min: Option<f64>,
        /// Largest M of a log-spaced grid (default: 100)
        #[arg(long)]
        m_max: Option<f64>,
        /// Grid size (default: 25)
        #[arg(long)]
        m_points: Option<usize>,
        /// Bisection tolerance (default: config "epsilon", else 1e-6)
        #[arg(long)]
        tol: Option<f64>,
    },
    /// One simulated trajectory of the plant and both receivers
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Transmission probability (default: config "p", else 1.0)
        #[arg(long)]
        p: Option<f64>,
        /// Number of steps T (default: config "T", else 200)
        #[arg(long)]
        steps: Option<usize>,
        /// Master seed (default: config "seed", else 42)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Expected prediction-error trace of one receiver over many runs
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Transmission probability (default: config "p", else 1.0)
        #[arg(long)]
        p: Option<f64>,
        /// Receiver whose effective packet rate is used
        #[arg(long, value_enum, default_value_t = ReceiverArg::Eavesdropper)]
        receiver: ReceiverArg,
        /// Horizon T (default: config "T", else 300)
        #[arg(long)]
        steps: Option<usize>,
        /// Number of runs (default: config "runs", else 2000)
        #[arg(long)]
        runs: Option<usize>,
        /// Master seed (default: config "seed", else 42)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed forms for scalar plants
    Scalar {
        #[command(flatten)]
        common: Common,
        /// Transmission probability (default: config "p", else 1.0)
        #[arg(long)]
        p: Option<f64>,
        /// Secrecy floor for the closed-form p* (default: config "M")
        #[arg(long)]
        secrecy_floor: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReceiverArg {
    User,
    Eavesdropper,
}

impl From<ReceiverArg> for Receiver {
    fn from(r: ReceiverArg) -> Self {
        match r {
            ReceiverArg::User => Receiver::User,
            ReceiverArg::Eavesdropper => Receiver::Eavesdropper,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Bounds { .. } => "bounds",
            Command::Interval { .. } => "interval",
            Command::Design { .. } => "design",
            Command::Sweep { .. } => "sweep",
            Command::Simulate { .. } => "simulate",
            Command::Montecarlo { .. } => "montecarlo",
            Command::Scalar { .. } => "scalar",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Bounds { common, .. }
            | Command::Interval { common }
            | Command::Design { common, .. }
            | Command::Sweep { common, .. }
            | Command::Simulate { common, .. }
            | Command::Montecarlo { common, .. }
            | Command::Scalar { common, .. } => common,
        }
    }
}

struct Loaded {
    cfg: RunConfig,
    input: Value,
}

fn load(common: &Common, command: &str) -> Result<Loaded> {
    let bytes = std::fs::read(&common.config)?;
    let digest = Sha256::digest(&bytes);
    let sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Config { pointer: "/".into(), message: "config is not valid UTF-8".into() })?;
    let cfg = parse_config(&text)?;
    let input = json!({
        "command": command,
        "config": common.config.display().to_string(),
        "sha256": sha256,
    });
    Ok(Loaded { cfg, input })
}

fn check_probability(name: &str, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(p)
}

fn extended(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format_extended(v))
    }
}

fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max > min) || !max.is_finite() {
        return Err(Error::InvalidArgument(format!("need 0 < m-min < m-max, got {min} and {max}")));
    }
    if points < 2 {
        return Err(Error::InvalidArgument("m-points must be at least 2".into()));
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                max
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

/// Where a table goes: a file named by `--out` or the config, or stdout.
fn table_sink(common: &Common, cfg: &RunConfig) -> Option<PathBuf> {
    common.out.clone().or_else(|| cfg.output.clone())
}

fn write_table(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut buf = Vec::new();
            write(&mut buf)?;
            match io::stdout().lock().write_all(&buf) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

/// Runs one command. Returns the JSON document for stdout, or `None` when
/// the command already wrote a table to stdout.
pub fn execute(command: &Command) -> Result<Option<Value>> {
    let Loaded { cfg, input } = load(command.common(), command.name())?;
    let sys = &cfg.system;
    let ch = &cfg.channel;

    let mut out = match command {
        Command::Bounds { p, .. } => {
            let p = check_probability("p", p.or(cfg.p).unwrap_or(DEFAULT_P))?;
            let rates = critical_rates(sys, DEFAULT_P_UPPER_TOL)?;
            let s = solve_s(p, ch, sys)?;
            let v = solve_v_with_rates(p, ch, sys, &rates, DEFAULT_FIXED_POINT_TOL, DEFAULT_FIXED_POINT_MAX_ITERS)?;
            json!({
                "p": p,
                "p_lower": rates.p_lower,
                "p_upper": rates.p_upper,
                "exact": rates.exact,
                "trS": extended(s.trace()),
                "trV": extended(v.trace()),
                "S": s,
                "V": v,
            })
        }
        Command::Interval { .. } => {
            let rates = critical_rates(sys, DEFAULT_P_UPPER_TOL)?;
            let interval = secrecy_interval_from_rates(&rates, ch);
            let mut v = serde_json::to_value(interval).expect("interval serializes");
            let obj = v.as_object_mut().expect("object");
            obj.insert("exact".into(), json!(rates.exact));
            obj.insert("p_lower".into(), json!(rates.p_lower));
            obj.insert("p_upper".into(), json!(rates.p_upper));
            v
        }
        Command::Design { secrecy_floor, tol, .. } => {
            let m = secrecy_floor.or(cfg.secrecy_floor).ok_or_else(|| {
                Error::InvalidArgument("design needs a secrecy floor (--secrecy-floor or config \"M\")".into())
            })?;
            let eps = tol.or(cfg.epsilon).unwrap_or(DEFAULT_TOL);
            let eval = Designer::new(sys, *ch)?.evaluate(m, eps)?;
            serde_json::to_value(eval).expect("design serializes")
        }
        Command::Sweep { common, m_min, m_max, m_points, tol } => {
            let grid = match (m_min, m_max, m_points, &cfg.m_grid) {
                (None, None, None, Some(g)) => g.clone(),
                _ => log_grid(
                    m_min.unwrap_or(DEFAULT_M_MIN),
                    m_max.unwrap_or(DEFAULT_M_MAX),
                    m_points.unwrap_or(DEFAULT_M_POINTS),
                )?,
            };
            let eps = tol.or(cfg.epsilon).unwrap_or(DEFAULT_TOL);
            let curve = Designer::new(sys, *ch)?.sweep(&grid, eps)?;
            let sink = table_sink(common, &cfg);
            write_table(sink.as_deref(), |w| write_sweep_csv(w, &curve))?;
            match sink {
                None => return Ok(None),
                Some(path) => json!({
                    "output": path.display().to_string(),
                    "points": curve.points,
                }),
            }
        }
        Command::Simulate { common, p, steps, seed } => {
            let p = check_probability("p", p.or(cfg.p).unwrap_or(DEFAULT_P))?;
            let steps = steps.or(cfg.steps).unwrap_or(DEFAULT_SIM_STEPS);
            let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
            let trace = simulate_trace(sys, &Mechanism::new(p)?, ch, steps, seed)?;
            let sink = table_sink(common, &cfg);
            write_table(sink.as_deref(), |w| write_trace_csv(w, &trace))?;
            let Some(path) = sink else { return Ok(None) };
            let avg = |r| time_average_error(&trace, r).ok().map(extended);
            json!({
                "output": path.display().to_string(),
                "p": p,
                "steps": steps,
                "seed": seed,
                "time_average_error": {
                    "user": avg(Receiver::User),
                    "eavesdropper": avg(Receiver::Eavesdropper),
                },
            })
        }
        Command::Montecarlo { common, p, receiver, steps, runs, seed } => {
            let p = check_probability("p", p.or(cfg.p).unwrap_or(DEFAULT_P))?;
            let steps = steps.or(cfg.steps).unwrap_or(DEFAULT_MC_STEPS);
            let runs = runs.or(cfg.runs).unwrap_or(DEFAULT_RUNS);
            let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
            let receiver = Receiver::from(*receiver);
            let rate = receiver.rate(&Mechanism::new(p)?, ch);
            let mut curve = expected_error_curve(sys, rate, steps, runs, seed)?;
            curve.receiver = Some(receiver);
            let sink = table_sink(common, &cfg);
            write_table(sink.as_deref(), |w| write_curve_csv(w, &curve))?;
            let Some(path) = sink else { return Ok(None) };
            json!({
                "output": path.display().to_string(),
                "p": p,
                "receiver": receiver,
                "rate": rate,
                "steps": steps,
                "runs": runs,
                "seed": seed,
                "criteria": cfg.criteria,
                "diverges": cfg.criteria.diverges(&curve).ok(),
                "plateaus": cfg.criteria.plateaus(&curve).ok(),
                "final_mean_trP": curve.mean_tr_p.last().copied().map(extended),
            })
        }
        Command::Scalar { p, secrecy_floor, .. } => {
            let s = ScalarSystem::from_system(sys)?;
            let p = check_probability("p", p.or(cfg.p).unwrap_or(DEFAULT_P))?;
            let p_star = match secrecy_floor.or(cfg.secrecy_floor) {
                Some(m) => json!(scalar_p_star(m, ch.p2, &s)?),
                None => Value::Null,
            };
            json!({
                "p": p,
                "p_c": scalar_critical(&s),
                "S": extended(scalar_s(p, ch.p2, &s)),
                "V": extended(scalar_v(p * ch.p1, &s)),
                "p_star": p_star,
            })
        }
    };

    let obj = out.as_object_mut().expect("results are JSON objects");
    if !cfg.warnings.is_empty() {
        obj.insert("warnings".into(), json!(cfg.warnings));
    }
    obj.insert("input".into(), input);
    Ok(Some(out))
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "dimension",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Range(_) => "range",
        Error::Validation(_) => "validation",
        Error::InvalidSystem(_) => "invalid_system",
        Error::NoSolution(_) => "no_solution",
        Error::Singular(_) => "singular",
        Error::Inconclusive { .. } => "inconclusive",
        Error::BracketInconclusive { .. } => "bracket_inconclusive",
        Error::NonConvergence { .. } => "non_convergence",
        Error::Domain(_) => "domain",
        Error::Consistency(_) => "consistency",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
    }
}

pub fn error_json(e: &Error) -> Value {
    let mut body = Map::new();
    body.insert("kind".into(), json!(error_kind(e)));
    body.insert("message".into(), json!(e.to_string()));
    match e {
        Error::Config { pointer, .. } => {
            body.insert("pointer".into(), json!(pointer));
        }
        Error::Validation(report) => {
            body.insert("report".into(), serde_json::to_value(report).expect("report serializes"));
        }
        _ => {}
    }
    json!({ "error": body })
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

/// Parses `args`, runs the command and reports the outcome.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({"error": {"kind": "threads", "message": e.to_string()}}));
            return ExitCode::from(1);
        }
    }
    match execute(&cli.command) {
        Ok(Some(v)) => {
            let text = serde_json::to_string_pretty(&v).expect("json");
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = writeln!(io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
