//! `gatesim` command line: dataset generation, batch runs, ablations,
//! calibration and reports. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::agent::{RunConfig, Trace};
use crate::gate::{BackendSpec, GateThresholds, GateWeights, ScriptedReply, TierToggles};
use crate::harness::{
    aggregate, calibrate, compute_metrics, load_dataset, run_suite_with, save_dataset, split_templates,
    write_metrics_csv, AggregateRow, CalibrationConfig, EpisodeMetrics, HarnessError,
};
use crate::scenarios::{generate_dataset, EpisodeSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gatesim", version, about = "Gated coordination escalation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the episode dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run episodes and write traces plus a metrics CSV.
    Run(RunArgs),
    /// Run the component ablation and weight/threshold sensitivity variants.
    Ablate(RunArgs),
    /// Grid-search gate weights and thresholds on a calibration split.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        /// `small`, `default`, or a JSON calibration config file.
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 0.5)]
        calib_fraction: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Summarize a run directory (and any ablation CSVs in it).
    Report {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory written by `run`.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the report; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags shared by every command that runs episodes. Unset flags fall back to
/// the config file, then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// key=value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mock, scripted:<file or trace dir>, or remote:<url>.
    #[arg(long)]
    pub backend: Option<String>,
    /// wC,wR,wI,wL,wH
    #[arg(long)]
    pub weights: Option<String>,
    /// t_low,t_high
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Enabled gate tiers, e.g. `rules,score`; `none` disables gating.
    #[arg(long)]
    pub tiers: Option<String>,
    #[arg(long)]
    pub no_partition: bool,
    #[arg(long)]
    pub window_timeout: Option<u64>,
    #[arg(long)]
    pub cooldown: Option<u64>,
    #[arg(long)]
    pub step_budget: Option<u32>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub allow_unvalidated: bool,
    /// Only the first N episodes of the dataset.
    #[arg(long)]
    pub episodes: Option<usize>,
}

/// Settings resolved from flags, config file and defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub backend: Backend,
    pub jobs: usize,
}

/// Backend choice, including per-episode replay from a trace directory.
#[derive(Debug, Clone)]
pub enum Backend {
    Uniform(BackendSpec),
    Replay(BTreeMap<String, Vec<ScriptedReply>>),
}

impl Backend {
    fn for_episode(&self, spec: &EpisodeSpec) -> BackendSpec {
        match self {
            Backend::Uniform(b) => b.clone(),
            Backend::Replay(m) => BackendSpec::Scripted(m.get(&spec.id()).cloned().unwrap_or_default()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_floats<const N: usize>(s: &str, what: &str) -> Result<[f64; N], CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("{what}: expected {N} comma-separated numbers, got `{s}`")))?;
    v.try_into().map_err(|_| usage(format!("{what}: expected {N} comma-separated numbers, got `{s}`")))
}

fn parse_tiers(s: &str) -> Result<TierToggles, CliError> {
    let mut t = TierToggles::NONE;
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "none" => {}
            "rules" | "rule" => t.rules = true,
            "score" => t.score = true,
            "adjudicator" => t.adjudicator = true,
            other => return Err(usage(format!("unknown tier `{other}`"))),
        }
    }
    Ok(t)
}

fn parse_bool(s: &str, key: &str) -> Result<bool, CliError> {
    s.parse().map_err(|_| usage(format!("{key}: expected true or false")))
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T, CliError> {
    s.parse().map_err(|_| usage(format!("{key}: invalid value `{s}`")))
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

fn replay_scripts(dir: &Path) -> Result<BTreeMap<String, Vec<ScriptedReply>>, CliError> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.insert(id, trace_script(&path)?);
        }
    }
    Ok(out)
}

fn trace_script(path: &Path) -> Result<Vec<ScriptedReply>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let trace = Trace::from_jsonl(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(trace
        .exchanges()
        .map(|e| ScriptedReply {
            reply: e.reply.clone(),
            error: if e.reply.is_some() { None } else { e.error.clone() },
        })
        .collect())
}

fn parse_backend(s: &str) -> Result<Backend, CliError> {
    if let Some(path) = s.strip_prefix("scripted:") {
        let p = Path::new(path);
        if p.is_dir() {
            let traces = if p.join("traces").is_dir() { p.join("traces") } else { p.to_path_buf() };
            return Ok(Backend::Replay(replay_scripts(&traces)?));
        }
        if p.extension().is_some_and(|e| e == "jsonl") {
            return Ok(Backend::Uniform(BackendSpec::Scripted(trace_script(p)?)));
        }
    }
    BackendSpec::parse(s).map(Backend::Uniform).map_err(usage)
}

impl RunArgs {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let file = match &self.config {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        };
        let get = |key: &str, flag: Option<String>| flag.or_else(|| file.get(key).cloned());
        let mut cfg = RunConfig::default();
        if let Some(w) = get("weights", self.weights.clone()) {
            cfg.gate.weights = GateWeights::new(parse_floats::<5>(&w, "weights")?);
        }
        if let Some(t) = get("thresholds", self.thresholds.clone()) {
            let [lo, hi] = parse_floats::<2>(&t, "thresholds")?;
            cfg.gate.thresholds = GateThresholds::new(lo, hi).map_err(|e| usage(e.to_string()))?;
        }
        if let Some(t) = get("tiers", self.tiers.clone()) {
            cfg.gate.tiers = parse_tiers(&t)?;
        }
        if self.no_partition {
            cfg.partition = false;
        } else if let Some(p) = file.get("partition") {
            cfg.partition = parse_bool(p, "partition")?;
        }
        if let Some(v) = get("window_timeout", self.window_timeout.map(|x| x.to_string())) {
            cfg.window_timeout = parse_num(&v, "window_timeout")?;
        }
        if let Some(v) = get("cooldown", self.cooldown.map(|x| x.to_string())) {
            cfg.cooldown_duration = parse_num(&v, "cooldown")?;
        }
        if let Some(v) = get("step_budget", self.step_budget.map(|x| x.to_string())) {
            cfg.step_budget = parse_num(&v, "step_budget")?;
        }
        if let Some(v) = get("seed", self.seed.map(|x| x.to_string())) {
            cfg.seed = parse_num(&v, "seed")?;
        }
        cfg.allow_unvalidated = self.allow_unvalidated
            || file.get("allow_unvalidated").map(|v| parse_bool(v, "allow_unvalidated")).transpose()?.unwrap_or(false);
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        let jobs = match get("jobs", self.jobs.map(|x| x.to_string())) {
            Some(v) => parse_num::<usize>(&v, "jobs")?.max(1),
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let backend = parse_backend(&get("backend", self.backend.clone()).unwrap_or_else(|| "mock".into()))?;
        Ok(Resolved { config: cfg, backend, jobs })
    }

    fn load(&self) -> Result<Vec<EpisodeSpec>, CliError> {
        let (_, mut specs) = load_dataset(&self.dataset)?;
        if let Some(n) = self.episodes {
            specs.truncate(n);
        }
        if specs.is_empty() {
            return Err(CliError::Runtime("dataset has no episodes".into()));
        }
        Ok(specs)
    }
}

fn metrics_of(specs: &[EpisodeSpec], traces: &[Trace]) -> Result<Vec<EpisodeMetrics>, CliError> {
    Ok(traces.iter().zip(specs).map(|(t, s)| compute_metrics(t, s)).collect::<Result<_, _>>()?)
}

fn run_variant(
    specs: &[EpisodeSpec],
    r: &Resolved,
    config: &RunConfig,
) -> Result<(Vec<Trace>, Vec<EpisodeMetrics>), CliError> {
    let traces = run_suite_with(specs, |_| config.clone(), |s| r.backend.for_episode(s), r.jobs)?;
    let metrics = metrics_of(specs, &traces)?;
    Ok((traces, metrics))
}

fn cmd_gen(out: &Path, seed: u64) -> Result<(), CliError> {
    let specs = generate_dataset(seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    let m = save_dataset(out, seed, &specs)?;
    println!(
        "wrote {} episodes to {} (classes {:?}, agents {:?})",
        m.total_episodes,
        out.display(),
        m.class_counts,
        m.agent_counts
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let r = args.resolve()?;
    let specs = args.load()?;
    let (traces, metrics) = run_variant(&specs, &r, &r.config)?;
    let dir = args.out.join("traces");
    fs::create_dir_all(&dir)?;
    for (t, s) in traces.iter().zip(&specs) {
        fs::write(dir.join(format!("{}.jsonl", s.id())), t.to_jsonl())?;
    }
    write_metrics_csv(fs::File::create(args.out.join("metrics.csv"))?, &metrics)?;
    let agg = aggregate(&metrics)?;
    println!("{}", render_table(std::iter::once(&agg.overall).chain(agg.per_class.values())));
    let unfinished = traces.iter().filter(|t| t.end().is_none()).count();
    if unfinished > 0 {
        return Err(CliError::Runtime(format!("{unfinished} episodes did not terminate")));
    }
    Ok(())
}

/// The six component variants, in table order.
pub fn ablation_variants(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let with = |tiers: TierToggles, partition: bool| {
        let mut c = base.clone();
        c.gate.tiers = tiers;
        c.partition = partition;
        c
    };
    let rules = TierToggles { rules: true, score: false, adjudicator: false };
    let rules_score = TierToggles { rules: true, score: true, adjudicator: false };
    vec![
        ("base", with(TierToggles::NONE, false)),
        ("without_partition", with(TierToggles::ALL, false)),
        ("without_gating", with(TierToggles::NONE, true)),
        ("rule", with(rules, true)),
        ("rule_score", with(rules_score, true)),
        ("full", with(TierToggles::ALL, true)),
    ]
}

/// Weight variants for the sensitivity table.
pub fn weight_variants() -> Vec<(&'static str, GateWeights)> {
    vec![
        ("default", GateWeights::DEFAULT),
        ("ignore_local_recoverability", GateWeights::new([4.0, 2.0, 2.0, 0.0, 1.0])),
        ("equal_weighting", GateWeights::new([1.0; 5])),
        ("ignore_history", GateWeights::new([4.0, 2.0, 2.0, 2.0, 0.0])),
    ]
}

/// Threshold variants for the sensitivity table.
pub fn threshold_variants() -> Vec<(&'static str, GateThresholds)> {
    vec![
        ("default", GateThresholds::DEFAULT),
        ("deterministic", GateThresholds { t_low: 0.45, t_high: 0.45 }),
        ("wide", GateThresholds { t_low: 0.3, t_high: 0.6 }),
        ("narrow_high", GateThresholds { t_low: 0.5, t_high: 0.55 }),
    ]
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut write = || -> Result<(), csv::Error> {
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| CliError::Runtime(e.to_string()))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn summary_row(name: &str, extra: &[String], ms: &[EpisodeMetrics]) -> Result<Vec<String>, CliError> {
    let a = aggregate(ms)?.overall;
    let msg: u64 = ms.iter().map(|m| m.msg).sum();
    let calls: u64 = ms.iter().map(|m| m.adjudicator_calls).sum();
    let mut row = vec![name.to_string()];
    row.extend(extra.iter().cloned());
    row.extend([
        format!("{:.6}", a.tsr),
        format!("{:.6}", a.cs),
        opt(a.ecr),
        opt(a.uer),
        msg.to_string(),
        calls.to_string(),
        format!("{:.6}", a.token_cost),
    ]);
    Ok(row)
}

const SUMMARY_COLS: [&str; 7] = ["tsr", "cs", "ecr", "uer", "msg", "adjudicator_calls", "token_cost"];

fn cmd_ablate(args: &RunArgs) -> Result<(), CliError> {
    let mut r = args.resolve()?;
    r.config.allow_unvalidated = true;
    let specs = args.load()?;
    fs::create_dir_all(&args.out)?;

    let mut rows = Vec::new();
    for (name, cfg) in ablation_variants(&r.config) {
        let (_, ms) = run_variant(&specs, &r, &cfg)?;
        rows.push(summary_row(name, &[], &ms)?);
    }
    let header: Vec<&str> = std::iter::once("variant").chain(SUMMARY_COLS).collect();
    write_rows(&args.out.join("ablation.csv"), &header, &rows)?;

    let mut rows = Vec::new();
    for (name, w) in weight_variants() {
        let mut cfg = r.config.clone();
        cfg.gate.weights = w;
        let (_, ms) = run_variant(&specs, &r, &cfg)?;
        rows.push(summary_row(name, &[w.to_string()], &ms)?);
    }
    let header: Vec<&str> = ["variant", "weights"].into_iter().chain(SUMMARY_COLS).collect();
    write_rows(&args.out.join("sensitivity_weights.csv"), &header, &rows)?;

    let mut rows = Vec::new();
    for (name, t) in threshold_variants() {
        let mut cfg = r.config.clone();
        cfg.gate.thresholds = t;
        let (_, ms) = run_variant(&specs, &r, &cfg)?;
        rows.push(summary_row(name, &[t.t_low.to_string(), t.t_high.to_string()], &ms)?);
    }
    let header: Vec<&str> = ["variant", "t_low", "t_high"].into_iter().chain(SUMMARY_COLS).collect();
    write_rows(&args.out.join("sensitivity_thresholds.csv"), &header, &rows)?;
    println!("wrote ablation.csv, sensitivity_weights.csv, sensitivity_thresholds.csv to {}", args.out.display());
    Ok(())
}

fn calibration_grid(grid: &str) -> Result<CalibrationConfig, CliError> {
    match grid {
        "default" => Ok(CalibrationConfig::default()),
        "small" => {
            let mut c = CalibrationConfig::default();
            c.weights.truncate(2);
            c.thresholds.truncate(2);
            Ok(c)
        }
        path => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{path}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{path}: {e}")))
        }
    }
}

fn cmd_calibrate(args: &RunArgs, grid: &str, fraction: f64, split_seed: u64) -> Result<(), CliError> {
    let r = args.resolve()?;
    let mut cal = calibration_grid(grid)?;
    cal.allow_unvalidated |= r.config.allow_unvalidated;
    cal.validate().map_err(|e| usage(e.to_string()))?;
    let (_, specs) = load_dataset(&args.dataset)?;
    let split = split_templates(specs, fraction, split_seed).map_err(|e| usage(e.to_string()))?;
    let mut calib = split.calib_episodes();
    if let Some(n) = args.episodes {
        calib.truncate(n);
    }
    let backend = match &r.backend {
        Backend::Uniform(b) => b.clone(),
        Backend::Replay(_) => return Err(usage("calibration needs a mock, scripted file or remote backend")),
    };
    let result = calibrate(&calib, &r.config, &cal, &backend, r.jobs)?;
    fs::create_dir_all(&args.out)?;
    let doc = serde_json::json!({
        "best": result.best,
        "lambda": result.lambda,
        "calib_templates": split.calib,
        "test_templates": split.test,
        "table": result.table,
    });
    fs::write(args.out.join("theta.json"), serde_json::to_vec_pretty(&doc).expect("json"))?;
    println!(
        "best weights {} thresholds ({}, {}) over {} calibration episodes",
        result.best.weights,
        result.best.thresholds.t_low,
        result.best.thresholds.t_high,
        calib.len()
    );
    Ok(())
}

fn render_table<'a>(rows: impl Iterator<Item = &'a AggregateRow>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>4} {:>6} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "set", "n", "TSR", "CS", "LRR", "UER", "ECR", "RSR", "Msg", "Calls"
    );
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>4} {:>6.3} {:>7.2} {:>6} {:>6} {:>6} {:>6} {:>6.2} {:>6.2}",
            r.label,
            r.episodes,
            r.tsr,
            r.cs,
            f(r.lrr),
            f(r.uer),
            f(r.ecr),
            f(r.rsr),
            r.msg,
            r.adjudicator_calls
        );
    }
    s
}

fn cmd_report(dataset: &Path, input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let traces_dir = input.join("traces");
    let (_, specs) = load_dataset(dataset)?;
    let by_id: BTreeMap<String, &EpisodeSpec> = specs.iter().map(|s| (s.id(), s)).collect();
    let mut metrics = Vec::new();
    let entries = fs::read_dir(&traces_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", traces_dir.display())))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths.iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")) {
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let spec =
            by_id.get(id).ok_or_else(|| CliError::Runtime(format!("trace {id} has no episode in the dataset")))?;
        let trace = Trace::from_jsonl(&fs::read_to_string(p)?).map_err(|e| CliError::Runtime(e.to_string()))?;
        metrics.push(compute_metrics(&trace, spec)?);
    }
    if metrics.is_empty() {
        return Err(CliError::Runtime(format!("no traces found in {}", traces_dir.display())));
    }
    let agg = aggregate(&metrics)?;
    let mut md = String::from("# Run report\n\n```\n");
    md.push_str(&render_table(std::iter::once(&agg.overall).chain(agg.per_class.values())));
    md.push_str("```\n");
    for (title, file) in [
        ("Ablation", "ablation.csv"),
        ("Weight sensitivity", "sensitivity_weights.csv"),
        ("Threshold sensitivity", "sensitivity_thresholds.csv"),
    ] {
        if let Ok(text) = fs::read_to_string(input.join(file)) {
            let _ = write!(md, "\n## {title}\n\n```\n{text}```\n");
        }
    }
    let out = out.unwrap_or(input);
    fs::create_dir_all(out)?;
    fs::write(out.join("report.md"), &md)?;
    write_metrics_csv(fs::File::create(out.join("summary.csv"))?, &metrics)?;
    print!("{md}");
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { out, seed } => cmd_gen(&out, seed),
        Command::Run(args) => cmd_run(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Calibrate { run, grid, calib_fraction, split_seed } => {
            cmd_calibrate(&run, &grid, calib_fraction, split_seed)
        }
        Command::Report { dataset, input, out } => cmd_report(&dataset, &input, out.as_deref()),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
