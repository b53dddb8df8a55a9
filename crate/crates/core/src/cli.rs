//! The `frontierlab` command line: `frontier`, `analytic`, `static` and `eval`.
//!
//! Outputs go under the run's output directory:
//! `frontier.csv`, `static.csv`, `analytic.csv` or `eval.csv`, plus trained
//! parameters in `networks/`. Every file is written to a temporary sibling
//! and renamed into place, so readers never see a partial file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analytic::{analytic_frontier_point, closed_form_frontier, solve_analytic};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::frontier::{dominance_check, evaluate, pareto_check, sweep, FrontierPoint, SweepMode, SweepResult};
use crate::market::MarketModel;
use crate::network::{format_float, parse_floats, NetworkParams};
use crate::strategy::{Policy, StrategyKind, StrategySpec};

pub const CSV_HEADER: &str = "label_kind,label,mean,risk_kind,risk,n_samples,max_constraint_violation,converged";

/// Extra columns of `analytic.csv`, after the frontier columns.
pub const ANALYTIC_EXTRA_HEADER: &str = "closed_form_mean,closed_form_variance";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "frontierlab", version, about = "Efficient frontiers from neural policies trained on simulated markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train policies over the sweep and write the frontier.
    Frontier(CommonArgs),
    /// Monte Carlo and closed-form Mean-Variance frontier of a Black-Scholes market.
    Analytic(CommonArgs),
    /// Optimize constant-mix weights per label.
    Static {
        #[command(flatten)]
        common: CommonArgs,
        /// Frontier CSV to test the static points against.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Re-evaluate saved parameters at the configured labels and append the points.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// A `.net` or `.extra` file written by `frontier` or `static`.
        #[arg(long)]
        network: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            c = c.with_seed(seed);
        }
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    let common = match command {
        Command::Frontier(c) | Command::Analytic(c) => c,
        Command::Static { common, .. } | Command::Eval { common, .. } => common,
    };
    let threads = common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::validation("--threads", e.to_string()))?;
    pool.install(|| match command {
        Command::Frontier(c) => cmd_frontier(&c.load()?),
        Command::Analytic(c) => cmd_analytic(&c.load()?),
        Command::Static { common, compare } => cmd_static(&common.load()?, compare.as_deref()),
        Command::Eval { common, network } => cmd_eval(&common.load()?, network),
    })
}

pub fn cmd_frontier(config: &RunConfig) -> Result<()> {
    if config.sweep.mode == SweepMode::Static {
        return cmd_static(config, None);
    }
    let result = sweep(&config.problem, &config.sweep, &config.train)?;
    write_sweep(config, &result, "frontier.csv")?;
    report_pareto(&result.points);
    sweep_failure(result)
}

pub fn cmd_static(config: &RunConfig, compare: Option<&Path>) -> Result<()> {
    let mut config = config.clone();
    config.sweep.mode = SweepMode::Static;
    let result = sweep(&config.problem, &config.sweep, &config.train)?;
    write_sweep(&config, &result, "static.csv")?;
    if let Some(path) = compare {
        let reference = parse_frontier_csv(&std::fs::read_to_string(path)?)?;
        let report = dominance_check(&result.points, &reference);
        println!(
            "dominance: {} of {} static points inside the reference risk range, {} above it{}",
            report.compared,
            result.points.len(),
            report.violations.len(),
            if report.dominated() { "; static frontier is dominated" } else { "" }
        );
        for label in &report.violations {
            println!("  static point above reference at label {label}");
        }
    }
    sweep_failure(result)
}

pub fn cmd_analytic(config: &RunConfig) -> Result<()> {
    let MarketModel::BlackScholes(model) = &config.problem.market else {
        return Err(Error::validation("market.preset", "the analytic frontier needs a Black-Scholes market"));
    };
    if config.sweep.labels.is_empty() {
        return Err(Error::validation("sweep.labels", "at least one label is required"));
    }
    let grid = &config.problem.grid;
    let x0 = config.problem.x0;
    let solution = solve_analytic(model)?;
    let mut csv = format!("{CSV_HEADER},{ANALYTIC_EXTRA_HEADER}\n");
    for &beta in &config.sweep.labels {
        if !(beta > 0.0) {
            return Err(Error::validation("sweep.labels", "analytic labels must be positive"));
        }
        let p = analytic_frontier_point(beta, model, grid, x0, config.train.eval_samples, config.train.seed)?;
        let (cm, cv) = closed_form_frontier(beta, &solution, grid.horizon(), x0)?;
        let row = FrontierPoint {
            label_kind: "beta",
            label: beta,
            mean: p.mean,
            risk_kind: "variance",
            risk: p.variance,
            se_mean: p.se_mean,
            se_risk: p.se_variance,
            n_samples: p.n_samples,
            max_constraint_violation: 0.0,
            objective: 0.0,
            converged: true,
            objective_trace: Vec::new(),
        };
        writeln!(csv, "{},{},{}", csv_row(&row), format_float(cm), format_float(cv)).unwrap();
    }
    write_atomic(&config.output_dir.join("analytic.csv"), &csv)
}

pub fn cmd_eval(config: &RunConfig, network: &Path) -> Result<()> {
    let policy = load_policy(config, network)?;
    let mut points = Vec::with_capacity(config.sweep.labels.len());
    for &label in &config.sweep.labels {
        points.push(evaluate(
            &config.problem,
            &policy,
            label,
            config.train.eval_samples,
            config.train.seed,
        )?);
    }
    let path = config.output_dir.join("eval.csv");
    let mut csv = match std::fs::read_to_string(&path) {
        Ok(existing) => {
            if existing.lines().next() != Some(CSV_HEADER) {
                return Err(Error::Format(format!("{} does not start with the frontier header", path.display())));
            }
            existing
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{CSV_HEADER}\n"),
        Err(e) => return Err(e.into()),
    };
    for p in &points {
        csv.push_str(&csv_row(p));
        csv.push('\n');
    }
    write_atomic(&path, &csv)
}

fn report_pareto(points: &[FrontierPoint]) {
    let report = pareto_check(points);
    for &(i, j) in &report.dominated_pairs {
        eprintln!(
            "warning: point at label {} dominates point at label {} beyond Monte Carlo error",
            points[i].label, points[j].label
        );
    }
    for (a, b) in &report.oscillations {
        eprintln!("warning: mean moves against the label order between labels {a} and {b}");
    }
}

fn sweep_failure(result: SweepResult) -> Result<()> {
    for f in &result.failures {
        eprintln!("label {}: {}", f.label, f.error);
    }
    match result.failures.into_iter().next() {
        None => Ok(()),
        Some(f) => Err(f.error),
    }
}

fn write_sweep(config: &RunConfig, result: &SweepResult, csv_name: &str) -> Result<()> {
    let dir = &config.output_dir;
    let nets = dir.join("networks");
    for (idx, policy) in &result.policies {
        save_policy(&nets, &format!("point_{idx}"), policy)?;
    }
    if let Some(policy) = &result.shared_policy {
        save_policy(&nets, "global", policy)?;
    }
    write_atomic(&dir.join(csv_name), &frontier_csv(&result.points))
}

pub fn csv_row(p: &FrontierPoint) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        p.label_kind,
        format_float(p.label),
        format_float(p.mean),
        p.risk_kind,
        format_float(p.risk),
        p.n_samples,
        format_float(p.max_constraint_violation),
        p.converged
    )
}

pub fn frontier_csv(points: &[FrontierPoint]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for p in points {
        s.push_str(&csv_row(p));
        s.push('\n');
    }
    s
}

fn intern_kind(s: &str) -> Result<&'static str> {
    ["beta", "gamma", "variance", "cvar"]
        .into_iter()
        .find(|k| *k == s)
        .ok_or_else(|| Error::Format(format!("unknown kind `{s}` in frontier CSV")))
}

/// Reads a frontier CSV. Standard errors are not stored, so they come back as zero.
pub fn parse_frontier_csv(text: &str) -> Result<Vec<FrontierPoint>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with(CSV_HEADER) => {}
        _ => return Err(Error::Format("missing frontier CSV header".into())),
    }
    let float = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number `{s}`: {e}")));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 8 {
                return Err(Error::Format(format!("short CSV row `{line}`")));
            }
            Ok(FrontierPoint {
                label_kind: intern_kind(f[0])?,
                label: float(f[1])?,
                mean: float(f[2])?,
                risk_kind: intern_kind(f[3])?,
                risk: float(f[4])?,
                se_mean: 0.0,
                se_risk: 0.0,
                n_samples: f[5].parse().map_err(|e| Error::Format(format!("bad count `{}`: {e}", f[5])))?,
                max_constraint_violation: float(f[6])?,
                objective: 0.0,
                converged: f[7] == "true",
                objective_trace: Vec::new(),
            })
        })
        .collect()
}

/// Writes `<stem>.net` for the network and `<stem>.extra` for the extra
/// parameter vector, whichever the policy has. Label-aware policies also get
/// `<stem>.scale`, the label that maps to input 1.
pub fn save_policy(dir: &Path, stem: &str, policy: &Policy) -> Result<()> {
    if let Some(net) = policy.network() {
        write_atomic(&dir.join(format!("{stem}.net")), &net.to_text())?;
    }
    if let Some(scale) = policy.layout().beta_max {
        write_atomic(&dir.join(format!("{stem}.scale")), &format!("{}\n", format_float(scale)))?;
    }
    if !policy.extra().is_empty() {
        let line: Vec<String> = policy.extra().iter().map(|&v| format_float(v)).collect();
        write_atomic(&dir.join(format!("{stem}.extra")), &format!("{}\n", line.join(" ")))?;
    }
    Ok(())
}

/// Rebuilds a policy saved by `save_policy` for the run described by `config`.
/// `path` may name either file of the pair.
pub fn load_policy(config: &RunConfig, path: &Path) -> Result<Policy> {
    let net_path = path.with_extension("net");
    let extra_path = path.with_extension("extra");
    let net = match std::fs::read_to_string(&net_path) {
        Ok(text) => Some(NetworkParams::from_text(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let extra = match std::fs::read_to_string(&extra_path) {
        Ok(text) => {
            if !text.ends_with('\n') {
                return Err(Error::Format("missing trailing newline (truncated?)".into()));
            }
            parse_floats(text.trim())?
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if net.is_none() && extra.is_empty() {
        return Err(Error::Format(format!("no parameters found at {}", path.display())));
    }
    let mut problem = config.problem.clone();
    if config.sweep.mode == SweepMode::Static || net.is_none() {
        problem.strategy = StrategySpec::new(StrategyKind::ConstantMix);
    }
    let label_max = match std::fs::read_to_string(path.with_extension("scale")) {
        Ok(text) => match parse_floats(&text)?.as_slice() {
            [v] => Some(*v),
            _ => return Err(Error::Format("scale file must hold one number".into())),
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let layout = problem.layout(label_max);
    Policy::from_parts(problem.strategy.clone(), problem.market.n_assets(), layout, net, extra)
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
