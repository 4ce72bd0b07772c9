//! Command-line experiment runner: expands a parameter grid into simulation
//! points, runs every (point, seed) pair in parallel and reports per-run JSON
//! or one CSV row per run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use mbrb_core::crypto::VcScheme;
use mbrb_core::experiment::{run_experiment, RunReport};
use mbrb_core::metrics::{max_k, validate_k, Epsilon, Verdicts};
use mbrb_core::simnet::{AdversaryStrategy, BehaviorSpec, ProtocolKind, SchedulerPolicy, SimConfig};
use rayon::prelude::*;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_VERDICT_FAILED,
        }
    }
}

fn config_err(e: impl Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "mbrb", version, about = "Simulate coded and uncoded Byzantine reliable broadcast")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeds and print or write the per-run JSON report.
    Run(Options),
    /// Run the cartesian product of every list-valued option and write CSV.
    Sweep(Options),
}

/// Options shared by both subcommands. Grid-able options take
/// comma-separated lists.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Flat TOML file with the same keys as the long flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of nodes n.
    #[arg(long)]
    pub nodes: Option<String>,
    /// Byzantine bound t.
    #[arg(long)]
    pub byzantine: Option<String>,
    /// Message adversary power d.
    #[arg(long)]
    pub drops: Option<String>,
    /// Reconstruction threshold k, or `auto` for the largest admissible.
    #[arg(long)]
    pub ecc_k: Option<String>,
    /// Slack parameter, as `p/q` or a decimal.
    #[arg(long)]
    pub epsilon: Option<String>,
    /// Payload size in bytes; accepts KiB and MiB suffixes.
    #[arg(long)]
    pub msg_size: Option<String>,
    /// First seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds per point.
    #[arg(long)]
    pub runs: Option<u64>,
    /// random, fixed-set or adaptive-isolate.
    #[arg(long)]
    pub adversary: Option<String>,
    /// Byzantine behaviours joined with `+`, e.g. `equivocate+garbage`.
    /// Comma separates grid values.
    #[arg(long)]
    pub behavior: Option<String>,
    /// random or fifo.
    #[arg(long)]
    pub scheduler: Option<String>,
    /// coded or baseline.
    #[arg(long)]
    pub protocol: Option<String>,
    /// merkle or constant-size-simulated.
    #[arg(long)]
    pub vc_scheme: Option<String>,
    /// `run`: directory for JSON reports. `sweep`: CSV file. Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Skip the resilience and threshold checks.
    #[arg(long)]
    pub allow_unsafe: bool,
    /// Event cap per run; hitting it marks the run inconclusive.
    #[arg(long)]
    pub max_events: Option<u64>,
    /// Directory for the event log of each run.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Re-check node invariants after every event.
    #[arg(long)]
    pub audit: bool,
}

impl Options {
    /// Fills unset fields from the TOML file named by `--config`.
    pub fn merged(self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        let file = Self::from_toml(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Ok(self.over(file))
    }

    /// Parses a flat TOML table keyed by flag names (dashes or underscores).
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let table: BTreeMap<String, toml::Value> = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut o = Options::default();
        for (key, value) in table {
            let list = || -> Result<String, String> {
                let scalar = |v: &toml::Value| match v {
                    toml::Value::String(s) => Ok(s.clone()),
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    other => Err(format!("`{key}`: unsupported value {other}")),
                };
                match &value {
                    toml::Value::Array(items) => Ok(items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(",")),
                    v => scalar(v),
                }
            };
            let int = || value.as_integer().and_then(|i| u64::try_from(i).ok()).ok_or(format!("`{key}` must be a non-negative integer"));
            let flag = || value.as_bool().ok_or(format!("`{key}` must be a boolean"));
            let path = || value.as_str().map(PathBuf::from).ok_or(format!("`{key}` must be a string"));
            match key.replace('_', "-").as_str() {
                "nodes" => o.nodes = Some(list()?),
                "byzantine" => o.byzantine = Some(list()?),
                "drops" => o.drops = Some(list()?),
                "ecc-k" => o.ecc_k = Some(list()?),
                "epsilon" => o.epsilon = Some(list()?),
                "msg-size" => o.msg_size = Some(list()?),
                "adversary" => o.adversary = Some(list()?),
                "behavior" => o.behavior = Some(list()?),
                "scheduler" => o.scheduler = Some(list()?),
                "protocol" => o.protocol = Some(list()?),
                "vc-scheme" => o.vc_scheme = Some(list()?),
                "seed" => o.seed = Some(int()?),
                "runs" => o.runs = Some(int()?),
                "max-events" => o.max_events = Some(int()?),
                "allow-unsafe" => o.allow_unsafe = flag()?,
                "audit" => o.audit = flag()?,
                "output" => o.output = Some(path()?),
                "log-dir" => o.log_dir = Some(path()?),
                other => return Err(format!("unknown key `{other}`")),
            }
        }
        Ok(o)
    }

    fn over(self, base: Self) -> Self {
        Self {
            config: self.config,
            nodes: self.nodes.or(base.nodes),
            byzantine: self.byzantine.or(base.byzantine),
            drops: self.drops.or(base.drops),
            ecc_k: self.ecc_k.or(base.ecc_k),
            epsilon: self.epsilon.or(base.epsilon),
            msg_size: self.msg_size.or(base.msg_size),
            seed: self.seed.or(base.seed),
            runs: self.runs.or(base.runs),
            adversary: self.adversary.or(base.adversary),
            behavior: self.behavior.or(base.behavior),
            scheduler: self.scheduler.or(base.scheduler),
            protocol: self.protocol.or(base.protocol),
            vc_scheme: self.vc_scheme.or(base.vc_scheme),
            output: self.output.or(base.output),
            allow_unsafe: self.allow_unsafe || base.allow_unsafe,
            max_events: self.max_events.or(base.max_events),
            log_dir: self.log_dir.or(base.log_dir),
            audit: self.audit || base.audit,
        }
    }
}

/// Reconstruction threshold of a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Auto,
    Fixed(usize),
}

impl FromStr for KChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(KChoice::Auto);
        }
        s.parse().map(KChoice::Fixed).map_err(|_| format!("invalid k `{s}`"))
    }
}

/// Parses `256`, `64KiB` or `1MiB`.
pub fn parse_size(s: &str) -> Result<usize, String> {
    let s = s.trim();
    let (digits, unit) = match s.find(|c: char| !c.is_ascii_digit()) {
        Some(i) => s.split_at(i),
        None => (s, ""),
    };
    let scale = match unit.trim() {
        "" | "B" => 1,
        "KiB" | "K" | "k" => 1 << 10,
        "MiB" | "M" => 1 << 20,
        _ => return Err(format!("invalid size `{s}`")),
    };
    digits.parse::<usize>().map(|v| v * scale).map_err(|_| format!("invalid size `{s}`"))
}

fn parse_list<T>(raw: Option<&str>, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, CliError> {
    let Some(raw) = raw else { return Ok(vec![default]) };
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<Result<_, _>>()
        .map_err(CliError::Config)?;
    if items.is_empty() {
        return Err(CliError::Config(format!("empty list `{raw}`")));
    }
    Ok(items)
}

fn via_from_str<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn usize_value(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("invalid integer `{s}`"))
}

/// Grid axes; the campaign runs their cartesian product.
#[derive(Debug, Clone)]
pub struct Axes {
    pub protocol: Vec<ProtocolKind>,
    pub nodes: Vec<usize>,
    pub byzantine: Vec<usize>,
    pub drops: Vec<usize>,
    pub k: Vec<KChoice>,
    pub epsilon: Vec<Epsilon>,
    pub msg_size: Vec<usize>,
    pub adversary: Vec<AdversaryStrategy>,
    pub behavior: Vec<BehaviorSpec>,
    pub scheduler: Vec<SchedulerPolicy>,
    pub vc_scheme: Vec<VcScheme>,
}

impl Axes {
    /// A single point taken from `config`.
    pub fn single(config: &SimConfig) -> Self {
        Self {
            protocol: vec![config.protocol],
            nodes: vec![config.n],
            byzantine: vec![config.t],
            drops: vec![config.d],
            k: vec![KChoice::Fixed(config.k)],
            epsilon: vec![config.epsilon],
            msg_size: vec![config.payload_len],
            adversary: vec![config.adversary],
            behavior: vec![config.behavior.clone()],
            scheduler: vec![config.scheduler],
            vc_scheme: vec![config.vc_scheme],
        }
    }
}

/// A parameter grid and the seeds to run at every point.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub axes: Axes,
    pub first_seed: u64,
    pub runs: u64,
    pub max_events: u64,
    pub allow_unsafe: bool,
    pub audit: bool,
}

impl Campaign {
    pub fn from_options(o: &Options) -> Result<Self, CliError> {
        let axes = Axes {
            protocol: parse_list(o.protocol.as_deref(), ProtocolKind::Coded, via_from_str)?,
            nodes: parse_list(o.nodes.as_deref(), 8, usize_value)?,
            byzantine: parse_list(o.byzantine.as_deref(), 1, usize_value)?,
            drops: parse_list(o.drops.as_deref(), 1, usize_value)?,
            k: parse_list(o.ecc_k.as_deref(), KChoice::Auto, via_from_str)?,
            epsilon: parse_list(o.epsilon.as_deref(), Epsilon::ONE, via_from_str)?,
            msg_size: parse_list(o.msg_size.as_deref(), 256, parse_size)?,
            adversary: parse_list(o.adversary.as_deref(), AdversaryStrategy::Random, via_from_str)?,
            behavior: parse_list(o.behavior.as_deref(), BehaviorSpec::default(), via_from_str)?,
            scheduler: parse_list(o.scheduler.as_deref(), SchedulerPolicy::Random, via_from_str)?,
            vc_scheme: parse_list(o.vc_scheme.as_deref(), VcScheme::Merkle, via_from_str)?,
        };
        Ok(Self {
            axes,
            first_seed: o.seed.unwrap_or(0),
            runs: o.runs.unwrap_or(1),
            max_events: o.max_events.unwrap_or(SimConfig::DEFAULT_MAX_EVENTS),
            allow_unsafe: o.allow_unsafe,
            audit: o.audit,
        })
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + Clone {
        let first = self.first_seed;
        (0..self.runs).map(move |i| first.wrapping_add(i))
    }

    /// Every grid point in axis order, validated. Any invalid point aborts
    /// the whole campaign with its error.
    pub fn points(&self) -> Result<Vec<SimConfig>, CliError> {
        let a = &self.axes;
        let mut out = Vec::new();
        for &protocol in &a.protocol {
            for &n in &a.nodes {
                for &t in &a.byzantine {
                    for &d in &a.drops {
                        for &k in &a.k {
                            for &epsilon in &a.epsilon {
                                for &payload_len in &a.msg_size {
                                    for &adversary in &a.adversary {
                                        for behavior in &a.behavior {
                                            for &scheduler in &a.scheduler {
                                                for &vc_scheme in &a.vc_scheme {
                                                    let k = self.resolve_k(k, n, t, d, epsilon)?;
                                                    out.push(SimConfig {
                                                        protocol,
                                                        epsilon,
                                                        payload_len,
                                                        adversary,
                                                        behavior: behavior.clone(),
                                                        scheduler,
                                                        vc_scheme,
                                                        max_events: self.max_events,
                                                        allow_unsafe: self.allow_unsafe,
                                                        audit: self.audit,
                                                        ..SimConfig::new(n, t, d, k)
                                                    });
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for (i, p) in out.iter().enumerate() {
            p.validate().map_err(|e| config_err(format!("point {i} (n={}, t={}, d={}, k={}): {e}", p.n, p.t, p.d, p.k)))?;
        }
        Ok(out)
    }

    fn resolve_k(&self, k: KChoice, n: usize, t: usize, d: usize, eps: Epsilon) -> Result<usize, CliError> {
        match k {
            KChoice::Fixed(k) => Ok(k),
            KChoice::Auto => max_k(n, t, d, eps).ok_or_else(|| {
                let e = validate_k(n, t, d, eps, 1).err().map(|v| v.to_string()).unwrap_or_default();
                config_err(format!("no admissible k for n={n}, t={t}, d={d}, epsilon={eps}: {e}"))
            }),
        }
    }
}

/// One finished (point, seed) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub point: usize,
    pub seed: u64,
    pub report: RunReport,
}

/// Runs every (point, seed) pair in parallel; results are ordered by
/// (point, seed).
pub fn run_sweep(campaign: &Campaign) -> Result<Vec<RunRecord>, CliError> {
    let points = campaign.points()?;
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| campaign.seeds().map(move |s| (p, s))).collect();
    jobs.into_par_iter()
        .map(|(point, seed)| {
            run_experiment(&points[point], seed)
                .map(|report| RunRecord { point, seed, report })
                .map_err(config_err)
        })
        .collect()
}

/// Process exit status for a set of runs: any failed verdict beats an
/// inconclusive run.
pub fn exit_status(records: &[RunRecord]) -> i32 {
    if records.iter().any(|r| r.report.failed()) {
        EXIT_VERDICT_FAILED
    } else if records.iter().any(|r| r.report.metrics.inconclusive) {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    }
}

/// CSV columns, in order. Verdict columns hold `pass`, `fail` or `n.a.`.
pub const CSV_HEADER: [&str; 35] = [
    "point",
    "seed",
    "protocol",
    "n",
    "t",
    "d",
    "k",
    "epsilon",
    "msg_size",
    "adversary",
    "behavior",
    "scheduler",
    "vc_scheme",
    "c",
    "ell_bound",
    "required_deliveries",
    "deliveries",
    "messages_total",
    "bits_total",
    "max_node_messages",
    "max_send_to_all",
    "mean_bytes_per_node",
    "byzantine_messages",
    "byzantine_bits",
    "dropped",
    "max_drops_per_batch",
    "events",
    "inconclusive",
    Verdicts::NAMES[0],
    Verdicts::NAMES[1],
    Verdicts::NAMES[2],
    Verdicts::NAMES[3],
    Verdicts::NAMES[4],
    Verdicts::NAMES[5],
    "violations",
];

fn csv_row(r: &RunRecord) -> Vec<String> {
    let m = &r.report.metrics;
    let c = &m.config;
    let mut row = vec![
        r.point.to_string(),
        r.seed.to_string(),
        c.protocol.to_string(),
        c.n.to_string(),
        c.t.to_string(),
        c.d.to_string(),
        c.k.to_string(),
        c.epsilon.to_string(),
        c.payload_len.to_string(),
        c.adversary.to_string(),
        c.behavior.to_string(),
        c.scheduler.to_string(),
        c.vc_scheme.as_str().to_string(),
        m.c.to_string(),
        m.ell_bound.clone().unwrap_or_default(),
        m.required_deliveries.map(|v| v.to_string()).unwrap_or_default(),
        m.deliveries.to_string(),
        m.totals.messages_sent.to_string(),
        m.totals.bits_sent.to_string(),
        m.max_messages_sent().to_string(),
        m.max_send_to_all().to_string(),
        format!("{:.1}", m.mean_bytes_per_node()),
        m.byzantine_traffic.messages_sent.to_string(),
        m.byzantine_traffic.bits_sent.to_string(),
        m.dropped.to_string(),
        m.max_drops_per_batch.to_string(),
        m.events.to_string(),
        m.inconclusive.to_string(),
    ];
    row.extend(m.verdicts.as_array().iter().map(|v| v.as_str().to_string()));
    row.push(r.report.violations.len().to_string());
    row
}

pub fn write_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush().map_err(|source| CliError::Io { path: PathBuf::from("<csv>"), source })?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_logs(dir: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    ensure_dir(dir)?;
    for r in records {
        write_file(&dir.join(format!("run-{}-{}.log", r.point, r.seed)), &r.report.log.to_text())?;
    }
    Ok(())
}

/// Executes a parsed command line and returns the process exit status.
pub fn execute(cli: Cli) -> i32 {
    let (sweep, options) = match cli.command {
        Command::Run(o) => (false, o),
        Command::Sweep(o) => (true, o),
    };
    match execute_inner(sweep, options) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute_inner(sweep: bool, options: Options) -> Result<i32, CliError> {
    let options = options.merged()?;
    let campaign = Campaign::from_options(&options)?;
    let records = run_sweep(&campaign)?;
    if let Some(dir) = &options.log_dir {
        write_logs(dir, &records)?;
    }
    if sweep {
        match &options.output {
            Some(path) => {
                let file = fs::File::create(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                write_csv(io::BufWriter::new(file), &records)?;
            }
            None => write_csv(io::stdout().lock(), &records)?,
        }
    } else {
        match &options.output {
            Some(dir) => {
                ensure_dir(dir)?;
                for r in &records {
                    write_file(&dir.join(format!("run-{}-{}.json", r.point, r.seed)), &r.report.metrics.to_json())?;
                }
            }
            None => {
                let mut out = io::stdout().lock();
                for r in &records {
                    if writeln!(out, "{}", r.report.metrics.to_json()).is_err() {
                        break;
                    }
                }
            }
        }
    }
    for r in records.iter().filter(|r| r.report.failed()) {
        eprintln!("point {} seed {}: verdicts {:?} violations {:?}", r.point, r.seed, r.report.metrics.verdicts, r.report.violations);
    }
    Ok(exit_status(&records))
}
