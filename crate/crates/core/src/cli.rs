//! Experiment runner behind the `rangebal` binary.
//!
//! Settings come from built-in defaults, then a flat `key=value` file named
//! by `--config` or `RANGEBAL_CONFIG`, then command-line flags.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::balancer::Engine;
use crate::checker::{verify_trace, CheckReport};
use crate::config::{parse_rational, BalanceConfig, BalanceMode, Rational};
use crate::directory::DirectoryMode;
use crate::error::{Error, Result};
use crate::keyspace::SystemState;
use crate::metrics::{summarize, EventRecord, Summary, SUMMARY_COLUMNS};
use crate::workload::{Generator, KeyDist, Op, WorkloadKind, WorkloadSpec};

pub const CONFIG_ENV: &str = "RANGEBAL_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistKind {
    Uniform,
    Hot,
    Zipf,
}

/// Fully resolved run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub alpha: Rational,
    /// Defaults to `3 (alpha + 2) / alpha`.
    pub beta: Option<Rational>,
    /// Giving `c` turns on cost accounting.
    pub c: Option<Rational>,
    pub c0: u64,
    pub nodes: usize,
    pub ops: u64,
    pub workload: WorkloadKind,
    pub p_delete: f64,
    pub dist: DistKind,
    pub hot_lo: u64,
    pub hot_hi: u64,
    pub hot_weight: f64,
    pub zipf_s: f64,
    pub zipf_buckets: u64,
    pub seed: u64,
    pub mode: BalanceMode,
    pub directory: DirectoryMode,
    pub accounting: bool,
    pub trace_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: Rational::new(547, 100),
            beta: None,
            c: None,
            c0: 4,
            nodes: 64,
            ops: 10_000,
            workload: WorkloadKind::Mixed,
            p_delete: 0.3,
            dist: DistKind::Uniform,
            hot_lo: 0,
            hot_hi: 1 << 60,
            hot_weight: 0.8,
            zipf_s: 1.1,
            zipf_buckets: 1024,
            seed: 1,
            mode: BalanceMode::General,
            directory: DirectoryMode::Centralized,
            accounting: false,
            trace_out: None,
            metrics_out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key}: cannot parse '{other}'"))),
    }
}

impl RunConfig {
    /// Applies one setting; keys accept `-` or `_` as separator.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let cfg_err = |e: String| Error::Config(format!("{key}: {e}"));
        match key.as_str() {
            "alpha" => self.alpha = parse_rational(v)?,
            "beta" => self.beta = Some(parse_rational(v)?),
            "c" => self.c = Some(parse_rational(v)?),
            "c0" => self.c0 = parse_num(&key, v)?,
            "nodes" => self.nodes = parse_num(&key, v)?,
            "ops" => self.ops = parse_num(&key, v)?,
            "workload" => self.workload = v.parse().map_err(cfg_err)?,
            "p_delete" => self.p_delete = parse_num(&key, v)?,
            "dist" => {
                self.dist = match v {
                    "uniform" => DistKind::Uniform,
                    "hot" => DistKind::Hot,
                    "zipf" => DistKind::Zipf,
                    other => return Err(cfg_err(format!("unknown distribution '{other}'"))),
                }
            }
            "hot_lo" => self.hot_lo = parse_num(&key, v)?,
            "hot_hi" => self.hot_hi = parse_num(&key, v)?,
            "hot_weight" => self.hot_weight = parse_num(&key, v)?,
            "zipf_s" => self.zipf_s = parse_num(&key, v)?,
            "zipf_buckets" => self.zipf_buckets = parse_num(&key, v)?,
            "seed" => self.seed = parse_num(&key, v)?,
            "mode" => self.mode = v.parse().map_err(cfg_err)?,
            "directory" => self.directory = v.parse().map_err(cfg_err)?,
            "accounting" => self.accounting = parse_bool(&key, v)?,
            "trace_out" => self.trace_out = Some(v.into()),
            "metrics_out" => self.metrics_out = Some(v.into()),
            other => return Err(Error::Config(format!("unknown setting '{other}'"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn balance_config(&self) -> BalanceConfig {
        let config = BalanceConfig::new(self.alpha, self.c0, self.mode).with_accounting(self.accounting || self.c.is_some());
        match self.beta {
            Some(beta) => config.with_beta(beta),
            None => config,
        }
    }

    /// Validated balancing constants plus the potential constant. Without
    /// accounting, a `c` that cannot be derived falls back to 1 and is only
    /// used to report the potential.
    pub fn resolve(&self) -> Result<(BalanceConfig, Rational)> {
        let config = self.balance_config();
        config.validate()?;
        if self.mode == BalanceMode::InsertOnly && self.workload != WorkloadKind::InsertOnly {
            return Err(Error::Config("insert-only mode requires the insert-only workload".into()));
        }
        if self.nodes < 2 {
            return Err(Error::Config("at least 2 nodes are required".into()));
        }
        let c = match self.c {
            Some(c) => {
                config.validate_c(c)?;
                c
            }
            None if config.accounting => config.default_c()?,
            None => config.default_c().unwrap_or(Rational::from_integer(1)),
        };
        Ok((config, c))
    }

    pub fn workload_spec(&self) -> WorkloadSpec {
        let key_dist = match self.dist {
            DistKind::Uniform => KeyDist::Uniform,
            DistKind::Hot => KeyDist::HotRange {
                lo: self.hot_lo,
                hi: self.hot_hi,
                weight: self.hot_weight,
            },
            DistKind::Zipf => KeyDist::Zipf {
                s: self.zipf_s,
                buckets: self.zipf_buckets,
            },
        };
        WorkloadSpec {
            kind: self.workload,
            ops: self.ops,
            p_delete: self.p_delete,
            key_dist,
            seed: self.seed,
        }
    }
}

/// Runs the configured workload, streaming each event to `trace` as one
/// JSON line.
pub fn run(cfg: &RunConfig, mut trace: Option<&mut dyn Write>) -> Result<Summary> {
    let (config, c) = cfg.resolve()?;
    let state = SystemState::init(cfg.nodes, cfg.c0, cfg.seed)?;
    let mut engine = Engine::new(state, config, cfg.directory, c, false);
    let mut generator = Generator::new(cfg.workload_spec(), engine.state())?;
    while let Some(op) = generator.next_op(engine.state()) {
        let record = match op {
            Op::Insert(k) => engine.insert(k)?,
            Op::Delete(k) => engine.delete(k)?,
        };
        if let Some(w) = trace.as_mut() {
            serde_json::to_writer(&mut *w, &record).map_err(|e| Error::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    engine.log().summary()
}

pub fn read_trace(reader: impl BufRead) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::TraceParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<EventRecord>> {
    read_trace(BufReader::new(File::open(path)?))
}

/// Runs every applicable check; cost accounting only when enabled.
pub fn verify(cfg: &RunConfig, trace: &[EventRecord]) -> Result<Vec<CheckReport>> {
    let (config, c) = cfg.resolve()?;
    let c = config.accounting.then_some(c);
    verify_trace(trace, &config, cfg.nodes, cfg.directory, c)
}

pub const SWEEP_COLUMNS: &str = "alpha,status";

/// One summary row per `alpha`, all with the same seed. Rejected values
/// produce a row marked `rejected` with the reason.
pub fn sweep(base: &RunConfig, alphas: &[Rational]) -> Result<Vec<String>> {
    if alphas.is_empty() {
        return Err(Error::Config("empty alpha list".into()));
    }
    let mut rows = vec![format!("{SWEEP_COLUMNS},{SUMMARY_COLUMNS},min_at_max_ratio,note")];
    for &alpha in alphas {
        let mut cfg = base.clone();
        cfg.alpha = alpha;
        cfg.trace_out = None;
        match run(&cfg, None) {
            Ok(s) => rows.push(format!("{alpha},ok,{},{},", s.csv_row(), s.max_ratio_min)),
            Err(Error::Config(msg)) => rows.push(format!("{alpha},rejected,,,,,,,,{}", msg.replace(',', ";"))),
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

pub fn summary_csv(summary: &Summary) -> String {
    format!("{SUMMARY_COLUMNS}\n{}\n", summary.csv_row())
}

#[derive(Debug, Parser)]
#[command(name = "rangebal", version, about = "Range-partitioned load balancing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a workload and write the event trace and summary.
    Run(SettingsArgs),
    /// Check a trace against every applicable guarantee.
    Verify {
        trace: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
        /// Where to write the JSON check reports (default stdout).
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Run the same workload for several alpha values.
    Sweep {
        /// Comma-separated alpha values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        alphas: Vec<String>,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Summarize an existing trace as CSV.
    Report {
        trace: PathBuf,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Args)]
pub struct SettingsArgs {
    /// Flat key=value settings file; overrides RANGEBAL_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub c: Option<String>,
    #[arg(long)]
    pub c0: Option<String>,
    #[arg(long)]
    pub nodes: Option<String>,
    #[arg(long)]
    pub ops: Option<String>,
    #[arg(long)]
    pub workload: Option<String>,
    #[arg(long)]
    pub p_delete: Option<String>,
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub hot_lo: Option<String>,
    #[arg(long)]
    pub hot_hi: Option<String>,
    #[arg(long)]
    pub hot_weight: Option<String>,
    #[arg(long)]
    pub zipf_s: Option<String>,
    #[arg(long)]
    pub zipf_buckets: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub directory: Option<String>,
    /// Require and check the amortized-cost thresholds.
    #[arg(long)]
    pub accounting: bool,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

impl SettingsArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self, env_config: Option<PathBuf>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = self.config.clone().or(env_config) {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_file_text(&text)?;
        }
        let flags = [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("c", &self.c),
            ("c0", &self.c0),
            ("nodes", &self.nodes),
            ("ops", &self.ops),
            ("workload", &self.workload),
            ("p_delete", &self.p_delete),
            ("dist", &self.dist),
            ("hot_lo", &self.hot_lo),
            ("hot_hi", &self.hot_hi),
            ("hot_weight", &self.hot_weight),
            ("zipf_s", &self.zipf_s),
            ("zipf_buckets", &self.zipf_buckets),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("directory", &self.directory),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.accounting {
            cfg.accounting = true;
        }
        if let Some(p) = &self.trace_out {
            cfg.trace_out = Some(p.clone());
        }
        if let Some(p) = &self.metrics_out {
            cfg.metrics_out = Some(p.clone());
        }
        Ok(cfg)
    }
}

fn write_to(path: Option<&Path>, out: &mut dyn Write, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn dispatch(cli: &Cli, env_config: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Run(settings) => {
            let cfg = settings.resolve(env_config)?;
            let summary = match &cfg.trace_out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    let s = run(&cfg, Some(&mut w))?;
                    w.flush()?;
                    s
                }
                None => run(&cfg, None)?,
            };
            write_to(cfg.metrics_out.as_deref(), out, &summary_csv(&summary))?;
            Ok(EXIT_OK)
        }
        Command::Verify {
            trace,
            settings,
            report_out,
        } => {
            let cfg = settings.resolve(env_config)?;
            let records = read_trace_file(trace)?;
            let reports = verify(&cfg, &records)?;
            let text: String = reports.iter().map(|r| r.to_json() + "\n").collect();
            write_to(report_out.as_deref(), out, &text)?;
            Ok(if reports.iter().all(|r| r.passed) {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Sweep { alphas, settings } => {
            let cfg = settings.resolve(env_config)?;
            let alphas = alphas.iter().map(|a| parse_rational(a)).collect::<Result<Vec<_>>>()?;
            let text: String = sweep(&cfg, &alphas)?.into_iter().map(|r| r + "\n").collect();
            write_to(cfg.metrics_out.as_deref(), out, &text)?;
            Ok(EXIT_OK)
        }
        Command::Report { trace, metrics_out } => {
            let summary = summarize(&read_trace_file(trace)?)?;
            write_to(metrics_out.as_deref(), out, &summary_csv(&summary))?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code. Errors are written to `err`.
pub fn main_with(args: &[String], env_config: Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CHECK_FAILED } else { EXIT_OK };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match dispatch(&cli, env_config, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_CHECK_FAILED,
            }
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    let env_config = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    main_with(&args, env_config, &mut io::stdout().lock(), &mut io::stderr().lock())
}
