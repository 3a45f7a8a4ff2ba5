//! `kquad`: data generation, EDMD fitting, fit evaluation and closed-loop
//! gait simulation.
//!
//! Every subcommand reads an optional JSON config (`--config`), applies
//! `--set path=value` overrides, then the dedicated flags. Failures print one
//! line `error kind=<kind> code=<n> msg="..."` to stderr and exit with `<n>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use koopman_quad::harness::{
    compute_metrics, emit_outputs, evaluate_fit, generate_training_data, mode_seed,
    run_closed_loop_with_dump, FitEvaluation, ModelSet, OutputPaths, RunLog, Scenario, SimConfig,
};
use koopman_quad::koopman::{edmd_fit, load_model, load_snapshots, save_model, save_snapshots};
use koopman_quad::lmpc::QpDumpWriter;
use koopman_quad::srb::ContactMode;
use koopman_quad::Error;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "kquad", version, about = "Koopman MPC gait toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, e.g. `--set mpc.horizon=12`. Values parse as JSON,
    /// falling back to a plain string.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Random rollouts for one contact mode, written as snapshot CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        /// `trot`, `front-stance`, `rear-stance`, `flight` or `all`.
        #[arg(long)]
        mode: String,
        /// RNG seed; required so every run is reproducible.
        #[arg(long)]
        seed: u64,
        /// Rollouts per mode (config default 100).
        #[arg(long)]
        rollouts: Option<usize>,
        /// Steps per rollout (config default 100).
        #[arg(long)]
        len: Option<usize>,
        /// Output CSV (a directory for `--mode all`); defaults to `data/<mode>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// EDMD fit of one mode (or `all`) from snapshot CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        /// `trot`, `front-stance`, `rear-stance`, `flight` or `all`.
        #[arg(long)]
        mode: String,
        /// Snapshot directory holding `<mode>.csv`.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Model directory receiving `<mode>.json`.
        #[arg(long, default_value = "models")]
        out: PathBuf,
        /// Tikhonov weight; overrides `training.ridge`.
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Held-out multi-step prediction error of a fitted model.
    EvalFit {
        #[command(flatten)]
        common: Common,
        /// Model JSON file.
        #[arg(long)]
        model: PathBuf,
        /// RNG seed; required so every run is reproducible.
        #[arg(long)]
        seed: u64,
        /// Number of held-out initial conditions and force profiles.
        #[arg(long, default_value_t = 50)]
        tests: usize,
        /// Seconds.
        #[arg(long, default_value_t = 0.05)]
        horizon: f64,
        /// Write the error statistics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop run of a scenario preset or the config's scenario.
    Simulate(SimArgs),
    /// Closed-loop gait-switch run (`trot-to-bound` or `bound-to-trot`).
    Transition(SimArgs),
    /// Metrics of an existing run log.
    Metrics {
        /// Run-log CSV written by `simulate`.
        #[arg(long)]
        log: PathBuf,
        /// Restrict to `t0,t1`.
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        window: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario preset; the config's own scenario when omitted.
    #[arg(long)]
    scenario: Option<String>,
    /// Directory with `<mode>.json` for every stance mode.
    #[arg(long, default_value = "models")]
    models: PathBuf,
    /// Receives `<scenario>_log.csv`, metrics and plot series.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Write every QP instance as JSON lines to this file.
    #[arg(long)]
    dump_qp: Option<PathBuf>,
    /// Leave wall-clock solve times out of the log.
    #[arg(long)]
    no_timing: bool,
}

/// Exit codes, one per failure class.
mod code {
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const NOT_FOUND: u8 = 4;
    pub const BAD_INPUT: u8 = 5;
    pub const NUMERIC: u8 = 6;
    pub const FELL: u8 = 7;
    pub const IO: u8 = 8;
}

struct Failure {
    kind: &'static str,
    code: u8,
    msg: String,
}

impl Failure {
    fn new(kind: &'static str, code: u8, msg: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            msg: msg.into(),
        }
    }

    fn config(e: Error) -> Self {
        Self::new("config", code::CONFIG, e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match &e {
            Error::Io { source, path } if source.kind() == std::io::ErrorKind::NotFound => {
                let what = match path.extension().and_then(|s| s.to_str()) {
                    Some("json") => "model file not found",
                    _ => "file not found",
                };
                Self::new(
                    "not-found",
                    code::NOT_FOUND,
                    format!("{what}: {}", path.display()),
                )
            }
            Error::Io { .. } => Self::new("io", code::IO, msg),
            Error::Malformed { .. }
            | Error::VersionMismatch { .. }
            | Error::DimensionMismatch(_)
            | Error::ModelMismatch(_) => Self::new("bad-input", code::BAD_INPUT, msg),
            Error::InvalidParameter(_) => Self::new("invalid-parameter", code::CONFIG, msg),
            _ => Self::new("numeric", code::NUMERIC, msg),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn set_path(root: &mut Value, path: &str, value: Value) -> CliResult {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Failure::new(
                "config",
                code::CONFIG,
                format!("'{path}' does not name an object field"),
            )
        })?;
        if k + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Failure::new("config", code::CONFIG, "empty override path"))
}

fn load_config(common: &Common, base: SimConfig) -> CliResult<SimConfig> {
    let mut value = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::new(
                    "config",
                    code::CONFIG,
                    format!("cannot read config {}: {e}", path.display()),
                )
            })?;
            serde_json::from_str::<Value>(&text).map_err(|e| {
                Failure::new(
                    "config",
                    code::CONFIG,
                    format!("config {}: {e}", path.display()),
                )
            })?
        }
        None => serde_json::to_value(&base).expect("config serializes"),
    };
    for o in &common.overrides {
        let (path, raw) = o.split_once('=').ok_or_else(|| {
            Failure::new(
                "usage",
                code::USAGE,
                format!("override '{o}' is not PATH=VALUE"),
            )
        })?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, path, v)?;
    }
    SimConfig::from_json(&value.to_string()).map_err(Failure::config)
}

fn parse_mode(s: &str) -> CliResult<ContactMode> {
    s.parse()
        .map_err(|e: Error| Failure::new("usage", code::USAGE, e.to_string()))
}

fn modes_for(s: &str) -> CliResult<Vec<ContactMode>> {
    if s == "all" {
        Ok(ContactMode::ALL.to_vec())
    } else {
        Ok(vec![parse_mode(s)?])
    }
}

fn write_json(path: &Path, v: &FitEvaluation) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::GenData {
            common,
            mode,
            seed,
            rollouts,
            len,
            out,
        } => {
            let mut cfg = load_config(&common, SimConfig::default())?;
            cfg.seed = seed;
            if let Some(n) = rollouts {
                cfg.training.n_rollouts = n;
            }
            if let Some(n) = len {
                cfg.training.rollout_len = n;
            }
            cfg.validate().map_err(Failure::config)?;
            let modes = modes_for(&mode)?;
            let single = modes.len() == 1;
            for mode in modes {
                let data =
                    generate_training_data(&cfg.srb, &cfg.training, mode, mode_seed(seed, mode))?;
                // A single mode writes to `--out` itself; `all` treats it as a directory.
                let path = match &out {
                    Some(p) if single => p.clone(),
                    Some(dir) => dir.join(format!("{mode}.csv")),
                    None => PathBuf::from("data").join(format!("{mode}.csv")),
                };
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                save_snapshots(&data.snapshots, &path)?;
                println!(
                    "mode={mode} pairs={} redrawn={} path={}",
                    data.snapshots.len(),
                    data.redrawn,
                    path.display()
                );
            }
            Ok(0)
        }
        Command::Fit {
            common,
            mode,
            data,
            out,
            ridge,
        } => {
            let cfg = load_config(&common, SimConfig::default())?;
            let ridge = ridge.unwrap_or(cfg.training.ridge);
            for mode in modes_for(&mode)? {
                let set = load_snapshots(data.join(format!("{mode}.csv")))?;
                if set.mode != mode {
                    return Err(Failure::new(
                        "bad-input",
                        code::BAD_INPUT,
                        format!("snapshot file holds {} data, expected {mode}", set.mode),
                    ));
                }
                let model = edmd_fit(&set, &cfg.observables, ridge)?;
                std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                let path = out.join(ModelSet::file_name(mode));
                save_model(&model, &path)?;
                println!(
                    "mode={mode} residual={:e} condition={:e} samples={} path={}",
                    model.fit_stats.residual,
                    model.fit_stats.condition_number,
                    model.fit_stats.samples,
                    path.display()
                );
            }
            Ok(0)
        }
        Command::EvalFit {
            common,
            model,
            seed,
            tests,
            horizon,
            out,
        } => {
            let cfg = load_config(&common, SimConfig::default())?;
            let m = load_model(&model)?;
            if horizon.is_nan() || horizon < 0.0 {
                return Err(Failure::new("usage", code::USAGE, "horizon must be >= 0"));
            }
            let steps = (horizon / m.dt).round() as usize;
            let ev = evaluate_fit(&m, &cfg.srb, &cfg.training.distribution, tests, steps, seed)?;
            if let Some(path) = out {
                write_json(&path, &ev)?;
            }
            println!(
                "mode={} tests={} steps={} max_mean_abs_error={:e}",
                ev.mode,
                ev.n_tests,
                ev.steps(),
                ev.max_mean_abs()
            );
            Ok(0)
        }
        Command::Simulate(args) => simulate(args, false),
        Command::Transition(args) => simulate(args, true),
        Command::Metrics { log, window } => {
            let run = RunLog::load(&log)?;
            let window = match window.as_deref() {
                None => None,
                Some(&[a, b]) if a <= b => Some((a, b)),
                Some(w) => {
                    return Err(Failure::new(
                        "usage",
                        code::USAGE,
                        format!("--window needs t0,t1 with t0 <= t1, got {w:?}"),
                    ))
                }
            };
            let m = compute_metrics(&run, window)?;
            println!("{}", serde_json::to_string(&m).expect("serializable"));
            Ok(if m.fell { code::FELL } else { 0 })
        }
    }
}

fn simulate(args: SimArgs, transition: bool) -> CliResult<u8> {
    let mut cfg = load_config(&args.common, SimConfig::default())?;
    if let Some(name) = &args.scenario {
        let keep_overrides = args
            .common
            .overrides
            .iter()
            .any(|o| o.starts_with("scenario."));
        if keep_overrides {
            return Err(Failure::new(
                "usage",
                code::USAGE,
                "use either --scenario or scenario.* overrides",
            ));
        }
        cfg.scenario = Scenario::preset(name)
            .map_err(|e| Failure::new("usage", code::USAGE, e.to_string()))?;
    }
    if args.no_timing {
        cfg.controller.log_solve_time = false;
    }
    cfg.validate().map_err(Failure::config)?;
    if transition && cfg.scenario.gait_requests.is_empty() {
        return Err(Failure::new(
            "usage",
            code::USAGE,
            "transition needs a scenario with a gait request (trot-to-bound or bound-to-trot)",
        ));
    }
    let models = ModelSet::load_dir(&args.models)?;
    let mut dump = args
        .dump_qp
        .as_deref()
        .map(QpDumpWriter::create)
        .transpose()?;
    let run = run_closed_loop_with_dump(&cfg, &models, dump.as_mut())?;
    if let Some(d) = dump {
        d.finish()?;
    }
    let metrics = compute_metrics(&run.log, None)?;
    let paths = OutputPaths::in_dir(&args.out_dir, &cfg.scenario.name);
    emit_outputs(&run, &metrics, &paths)?;
    let switches: Vec<String> = run
        .log
        .records
        .iter()
        .filter(|r| r.has_event("switch:"))
        .map(|r| format!("{}", r.t))
        .collect();
    println!(
        "scenario={} rmse_vx={:.6} max_abs_theta={:.6} fell={} switches=[{}] log={}",
        cfg.scenario.name,
        metrics.rmse_vx,
        metrics.max_abs_theta,
        metrics.fell,
        switches.join(" "),
        paths.log.display()
    );
    Ok(if metrics.fell { code::FELL } else { 0 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            // One line: drop the usage and help trailer, join the rest.
            let body = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let body = body.trim_start_matches("error: ");
            eprintln!("error kind=usage code={} msg={:?}", code::USAGE, body);
            return ExitCode::from(code::USAGE);
        }
    };
    match run(cli) {
        Ok(c) => ExitCode::from(c),
        Err(f) => {
            eprintln!("error kind={} code={} msg={:?}", f.kind, f.code, f.msg);
            ExitCode::from(f.code)
        }
    }
}
