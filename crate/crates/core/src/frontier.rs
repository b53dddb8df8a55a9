//! Training and evaluation of frontier points.
//!
//! A point-mode sweep trains one policy per risk label. Global modes train a
//! single policy that takes the label as an extra input, either over a fixed
//! label grid (one path segment per label) or over labels drawn per sub-batch.
//! Static mode optimizes constant-mix weights instead of a network.
//!
//! Seeds: restart `r` draws its initial parameters and training paths from
//! streams derived from `(seed, r)`. Objective checkpoints reuse one path set
//! derived from `seed` alone, so restarts are ranked on common samples.
//! Evaluation paths come from `seed + EVAL_SEED_OFFSET`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytic::SampleMoments;
use crate::autodiff::{largest_indices, NodeId, Tape};
use crate::error::{Error, Result};
use crate::market::{derive_seed, MarketModel, PathBatch, TimeGrid};
use crate::network::{AdamState, LrSchedule};
use crate::objectives::{
    assemble_loss, cvar_tail_size, penalty_total, Aggregation, BetaSampler, Criterion, LabelSegment,
    ObjectiveSpec,
};
use crate::portfolio::{rollout, Rollout, WealthForm};
use crate::strategy::{InputLayout, Policy, RecordedPolicy, StrategyKind, StrategySpec};

pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Paths per tape when only forward values are needed.
pub const EVAL_CHUNK: usize = 500;

/// Budget residuals at or below this count as rounding, not violation.
pub const VIOLATION_ROUNDING: f64 = 1e-12;

const SALT_INIT: u64 = 1;
const SALT_TRAIN_PATHS: u64 = 2;
const SALT_CHECK_PATHS: u64 = 3;
const SALT_LABELS: u64 = 4;
const SALT_ORDER: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub n_iterations: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub eval_samples: usize,
    pub stabilization_every: usize,
    pub stabilization_samples: usize,
    pub stabilization_tol: f64,
    pub n_restarts: usize,
    /// Sub-batches per iteration in randomized global training.
    pub groups: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 300,
            n_iterations: 15_000,
            lr_initial: 2.5e-3,
            lr_final: 2.5e-4,
            eval_samples: 100_000,
            stabilization_every: 100,
            stabilization_samples: 10_000,
            stabilization_tol: 1e-3,
            n_restarts: 1,
            groups: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.batch_size", self.batch_size),
            ("train.n_iterations", self.n_iterations),
            ("train.eval_samples", self.eval_samples),
            ("train.stabilization_every", self.stabilization_every),
            ("train.stabilization_samples", self.stabilization_samples),
            ("train.n_restarts", self.n_restarts),
            ("objective.groups", self.groups),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::validation("train.batch_size", "must be at least 2"));
        }
        if self.eval_samples < self.batch_size {
            return Err(Error::validation("train.eval_samples", "must be at least the batch size"));
        }
        if !(self.stabilization_tol > 0.0) {
            return Err(Error::validation("train.stabilization_tol", "must be positive"));
        }
        LrSchedule::new(self.lr_initial, self.lr_final, self.n_iterations)?;
        Ok(())
    }
}

/// Market, grid and specifications shared by every training of a run.
#[derive(Clone, Debug)]
pub struct Problem {
    pub market: MarketModel,
    pub grid: TimeGrid,
    pub x0: f64,
    pub strategy: StrategySpec,
    pub objective: ObjectiveSpec,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(Error::validation("market.x0", "must be positive"));
        }
        self.strategy.validate(self.market.n_assets())?;
        self.objective.validate(&self.strategy)
    }

    /// Policy inputs; `label_max` is set for label-aware policies.
    pub fn layout(&self, label_max: Option<f64>) -> InputLayout {
        InputLayout {
            horizon: self.grid.horizon(),
            x0: self.x0,
            v0: self.market.initial_variances().map(<[f64]>::to_vec),
            beta_max: label_max.map(|m| if m > 0.0 { m } else { 1.0 }),
        }
    }

    fn with_strategy(&self, strategy: StrategySpec) -> Problem {
        Problem {
            strategy,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepMode {
    Point,
    GlobalDet,
    GlobalRand(BetaSampler),
    Static,
}

impl SweepMode {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMode::Point => "point",
            SweepMode::GlobalDet => "global_det",
            SweepMode::GlobalRand(_) => "global_rand",
            SweepMode::Static => "static",
        }
    }
}

/// Sweep mode and the labels at which frontier points are reported. For
/// global-deterministic training the labels are also the training grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub mode: SweepMode,
    pub labels: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self, criterion: Criterion) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::validation("sweep.labels", "at least one label is required"));
        }
        if self.labels.iter().any(|l| !l.is_finite()) {
            return Err(Error::validation("sweep.labels", "labels must be finite"));
        }
        if criterion != Criterion::MvAux && self.labels.iter().any(|&l| l < 0.0) {
            return Err(Error::validation("sweep.labels", "risk weights must be non-negative"));
        }
        if let SweepMode::GlobalRand(s) = &self.mode {
            s.validate()?;
        }
        Ok(())
    }

    fn label_max(&self) -> Option<f64> {
        match &self.mode {
            SweepMode::Point | SweepMode::Static => None,
            SweepMode::GlobalDet => Some(self.labels.iter().cloned().fold(f64::MIN, f64::max)),
            SweepMode::GlobalRand(s) => Some(s.upper()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierPoint {
    pub label_kind: &'static str,
    pub label: f64,
    pub mean: f64,
    pub risk_kind: &'static str,
    pub risk: f64,
    pub se_mean: f64,
    pub se_risk: f64,
    pub n_samples: usize,
    pub max_constraint_violation: f64,
    /// Training loss of the policy (criterion plus penalties) on the evaluation paths.
    pub objective: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

impl FrontierPoint {
    /// `-objective`: for Mean-Variance, `E[X] - β Var[X] - penalties`.
    pub fn penalized_objective(&self) -> f64 {
        -self.objective
    }
}

#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub policy: Policy,
    /// Objective checkpoints of the kept restart.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub final_objective: f64,
    pub restart: usize,
}

/// Relative spread of the last (up to) ten checkpoints below `tol`.
pub fn stabilization_check(trace: &[f64], tol: f64) -> Result<bool> {
    if trace.len() < 2 {
        return Err(Error::OutOfRange(format!(
            "stabilization needs two checkpoints, got {}",
            trace.len()
        )));
    }
    let window = &trace[trace.len().saturating_sub(10)..];
    let hi = window.iter().cloned().fold(f64::MIN, f64::max);
    let lo = window.iter().cloned().fold(f64::MAX, f64::min);
    let scale = trace[trace.len() - 1].abs().max(1e-12);
    Ok((hi - lo) / scale < tol)
}

/// Splits `total` paths into `parts` contiguous segments as evenly as possible.
fn split_even(total: usize, labels: &[f64]) -> Vec<LabelSegment> {
    let parts = labels.len();
    let base = total / parts;
    let extra = total % parts;
    let mut start = 0;
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let len = base + usize::from(i < extra);
            let s = LabelSegment { start, len, label };
            start += len;
            s
        })
        .collect()
}

fn segment_inputs(segments: &[LabelSegment]) -> Vec<f64> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, s.len))
        .collect()
}

/// How one training run lays labels over its batches.
#[derive(Clone, Debug)]
enum Plan {
    Point(f64),
    Grid(Vec<f64>),
    Sampled(BetaSampler),
}

impl Plan {
    fn label_aware(&self) -> bool {
        !matches!(self, Plan::Point(_))
    }

    fn aggregation(&self) -> Aggregation {
        match self {
            Plan::Sampled(_) => Aggregation::Mean,
            _ => Aggregation::Sum,
        }
    }

    fn paths_per_batch(&self, batch: usize) -> usize {
        match self {
            Plan::Grid(g) => batch * g.len(),
            _ => batch,
        }
    }

    fn segments(&self, batch: usize, groups: usize, rng: &mut ChaCha8Rng) -> Vec<LabelSegment> {
        match self {
            Plan::Point(l) => vec![LabelSegment {
                start: 0,
                len: batch,
                label: *l,
            }],
            Plan::Grid(g) => split_even(batch * g.len(), g),
            Plan::Sampled(s) => {
                let labels: Vec<f64> = (0..groups).map(|_| s.sample(rng)).collect();
                split_even(batch, &labels)
            }
        }
    }
}

/// Values gathered by a forward pass over many paths.
struct ForwardStats {
    terminal: Vec<f64>,
    /// Penalty value averaged over paths, before any per-label multiplier.
    penalty_mean: f64,
    violation: f64,
}

/// Largest constraint breach over a chunk's weight trajectory. Budget and
/// box apply to every kind except unconstrained; move limits apply whenever
/// the strategy carries one.
fn trajectory_violation(tape: &Tape, weights: &[NodeId], strategy: &StrategySpec) -> f64 {
    if strategy.kind == StrategyKind::Unconstrained {
        return 0.0;
    }
    let mut worst = 0.0f64;
    let first = tape.value(weights[0]);
    let d = first.shape().rows();
    let b = first.shape().cols();
    let (lo, hi) = match &strategy.bounds {
        Some(bounds) => (bounds.lo().to_vec(), bounds.hi().to_vec()),
        None => (vec![0.0; d], vec![1.0; d]),
    };
    for (i, &w) in weights.iter().enumerate() {
        let v = tape.value(w);
        for p in 0..b {
            let mut s = 0.0;
            for j in 0..d {
                let x = v.at(j, p);
                s += x;
                worst = worst.max(x - hi[j]).max(lo[j] - x);
            }
            let gap = (s - 1.0).abs();
            if gap > VIOLATION_ROUNDING {
                worst = worst.max(gap);
            }
        }
        if let (Some(limit), true) = (&strategy.move_limit, i > 0) {
            let prev = tape.value(weights[i - 1]);
            for j in 0..d {
                for p in 0..b {
                    let excess = (v.at(j, p) - prev.at(j, p)).abs() - limit.eta()[j];
                    if excess > VIOLATION_ROUNDING {
                        worst = worst.max(excess);
                    }
                }
            }
        }
    }
    worst
}

fn run_rollout<'p>(
    tape: &mut Tape,
    problem: &Problem,
    policy: &'p Policy,
    paths: &PathBatch,
    range: std::ops::Range<usize>,
    inputs: Option<Vec<f64>>,
    order_seed: u64,
) -> Result<(RecordedPolicy<'p>, Rollout)> {
    let rec = policy.record(tape);
    let r = rollout(
        tape,
        &rec,
        paths,
        range,
        &problem.grid,
        problem.x0,
        inputs,
        order_seed,
        WealthForm::Additive,
    )?;
    Ok((rec, r))
}

/// Forward-only pass in chunks of [`EVAL_CHUNK`] paths, each on its own tape.
fn forward_stats(
    problem: &Problem,
    policy: &Policy,
    paths: &PathBatch,
    inputs: Option<&[f64]>,
    order_seed: u64,
) -> Result<ForwardStats> {
    let n = paths.n_paths();
    let starts: Vec<usize> = (0..n).step_by(EVAL_CHUNK).collect();
    let chunks: Vec<Result<(Vec<f64>, f64, f64)>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + EVAL_CHUNK).min(n);
            let mut tape = Tape::new();
            let chunk_inputs = inputs.map(|v| v[start..end].to_vec());
            let (_, r) = run_rollout(
                &mut tape,
                problem,
                policy,
                paths,
                start..end,
                chunk_inputs,
                derive_seed(order_seed, start as u64),
            )?;
            let pen = penalty_total(&mut tape, &problem.objective, &problem.strategy, &r.weights)?
                .map_or(0.0, |p| tape.scalar(p));
            let viol = trajectory_violation(&tape, &r.weights, &problem.strategy);
            Ok((
                tape.value(r.terminal_wealth).data().to_vec(),
                pen * (end - start) as f64,
                viol,
            ))
        })
        .collect();
    let mut terminal = Vec::with_capacity(n);
    let mut pen_sum = 0.0;
    let mut violation = 0.0f64;
    for c in chunks {
        let (t, p, v) = c?;
        terminal.extend(t);
        pen_sum += p;
        violation = violation.max(v);
    }
    Ok(ForwardStats {
        terminal,
        penalty_mean: pen_sum / n as f64,
        violation,
    })
}

/// Criterion value on plain samples.
fn base_value(objective: &ObjectiveSpec, x: &[f64], label: f64, x0: f64) -> Result<f64> {
    let m = SampleMoments::of(x);
    Ok(match objective.criterion {
        Criterion::MvDirect => -m.mean + label * m.variance,
        Criterion::MvAux => x.iter().map(|v| (v - label) * (v - label)).sum::<f64>() / x.len() as f64,
        Criterion::Cvar => {
            let alpha = objective.alpha.expect("validated");
            -m.mean + label * crate::objectives::cvar_values(x, alpha, x0)?
        }
    })
}

fn plan_objective(problem: &Problem, stats: &ForwardStats, segments: &[LabelSegment], agg: Aggregation) -> Result<f64> {
    let mut total = 0.0;
    for s in segments {
        total += base_value(
            &problem.objective,
            &stats.terminal[s.start..s.start + s.len],
            s.label,
            problem.x0,
        )?;
    }
    let k = segments.len() as f64;
    Ok(match agg {
        Aggregation::Sum => total + k * stats.penalty_mean,
        Aggregation::Mean => total / k + stats.penalty_mean,
    })
}

fn diverged(iteration: usize, err: Error) -> Error {
    if err.is_numerical() {
        Error::Divergence {
            iteration,
            reason: err.to_string(),
        }
    } else {
        err
    }
}

fn train_once(
    problem: &Problem,
    plan: &Plan,
    label_max: Option<f64>,
    config: &TrainConfig,
    restart: usize,
) -> Result<TrainedPolicy> {
    let seed = derive_seed(config.seed, restart as u64);
    let layout = problem.layout(label_max);
    let mut policy = Policy::new(
        problem.strategy.clone(),
        problem.market.n_assets(),
        layout,
        derive_seed(seed, SALT_INIT),
    )?;
    let schedule = LrSchedule::new(config.lr_initial, config.lr_final, config.n_iterations)?;
    let mut adam = AdamState::new(policy.n_params());
    let path_seed = derive_seed(seed, SALT_TRAIN_PATHS);
    let mut label_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_LABELS));
    let per_batch = plan.paths_per_batch(config.batch_size);

    let check_paths_n = plan.paths_per_batch(config.stabilization_samples);
    let check_paths = problem.market.simulate(
        &problem.grid,
        derive_seed(config.seed, SALT_CHECK_PATHS),
        0,
        check_paths_n,
    );
    let mut check_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SALT_LABELS));
    let check_groups = config.groups.min(config.stabilization_samples / 2).max(1);
    let check_segments = plan.segments(config.stabilization_samples, check_groups, &mut check_rng);
    let check_inputs = plan.label_aware().then(|| segment_inputs(&check_segments));
    let order_seed = derive_seed(seed, SALT_ORDER);

    let mut trace = Vec::new();
    for it in 0..config.n_iterations {
        let paths = problem
            .market
            .simulate(&problem.grid, path_seed, (it * per_batch) as u64, per_batch);
        let segments = plan.segments(config.batch_size, config.groups, &mut label_rng);
        let inputs = plan.label_aware().then(|| segment_inputs(&segments));
        let grad = (|| -> Result<Vec<f64>> {
            let mut tape = Tape::new();
            let (rec, r) = run_rollout(
                &mut tape,
                problem,
                &policy,
                &paths,
                0..per_batch,
                inputs,
                derive_seed(order_seed, it as u64),
            )?;
            let loss = assemble_loss(
                &mut tape,
                &problem.objective,
                &problem.strategy,
                &r,
                &segments,
                plan.aggregation(),
                problem.x0,
            )?;
            let grads = tape.backward(loss)?;
            Ok(rec.flat_gradient(&grads, &tape))
        })()
        .map_err(|e| diverged(it, e))?;
        let mut flat = policy.flat();
        adam.step(&mut flat, &grad, schedule.lr_at(it)?)
            .map_err(|e| diverged(it, e))?;
        policy.set_flat(&flat)?;

        if (it + 1) % config.stabilization_every == 0 || it + 1 == config.n_iterations {
            let stats = forward_stats(problem, &policy, &check_paths, check_inputs.as_deref(), order_seed)
                .map_err(|e| diverged(it, e))?;
            let value = plan_objective(problem, &stats, &check_segments, plan.aggregation())?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    reason: "objective estimate is not finite".into(),
                });
            }
            trace.push(value);
        }
    }
    let converged = trace.len() >= 2 && stabilization_check(&trace, config.stabilization_tol)?;
    let final_objective = *trace.last().expect("at least one checkpoint");
    Ok(TrainedPolicy {
        policy,
        trace,
        converged,
        final_objective,
        restart,
    })
}

/// Runs every restart and keeps the one with the lowest final objective.
/// A restart that diverges is skipped unless all of them do.
fn train_best(problem: &Problem, plan: &Plan, label_max: Option<f64>, config: &TrainConfig) -> Result<TrainedPolicy> {
    config.validate()?;
    problem.validate()?;
    let mut best: Option<TrainedPolicy> = None;
    let mut last_err = None;
    for r in 0..config.n_restarts {
        match train_once(problem, plan, label_max, config, r) {
            Ok(t) => {
                if best.as_ref().is_none_or(|b| t.final_objective < b.final_objective) {
                    best = Some(t);
                }
            }
            Err(e) if e.is_numerical() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}

/// Trains one policy for a single label (β, or γ for the target criterion).
pub fn train_point(problem: &Problem, label: f64, config: &TrainConfig) -> Result<TrainedPolicy> {
    train_best(problem, &Plan::Point(label), None, config)
}

/// Trains one label-aware policy covering the whole sweep.
pub fn train_global(problem: &Problem, sweep: &SweepSpec, config: &TrainConfig) -> Result<TrainedPolicy> {
    sweep.validate(problem.objective.criterion)?;
    let plan = match &sweep.mode {
        SweepMode::GlobalDet => Plan::Grid(sweep.labels.clone()),
        SweepMode::GlobalRand(s) => {
            if config.batch_size / config.groups < 2 {
                return Err(Error::validation(
                    "objective.groups",
                    "every sub-batch needs at least two paths",
                ));
            }
            Plan::Sampled(*s)
        }
        other => {
            return Err(Error::validation(
                "sweep.mode",
                format!("{} is not a global mode", other.name()),
            ))
        }
    };
    train_best(problem, &plan, sweep.label_max(), config)
}

/// Simulates fresh paths and reports the policy's frontier point at `label`.
pub fn evaluate(
    problem: &Problem,
    policy: &Policy,
    label: f64,
    eval_samples: usize,
    seed: u64,
) -> Result<FrontierPoint> {
    if eval_samples < 2 {
        return Err(Error::validation("train.eval_samples", "must be at least 2"));
    }
    let eval_seed = seed.wrapping_add(EVAL_SEED_OFFSET);
    let paths = problem.market.simulate(&problem.grid, eval_seed, 0, eval_samples);
    let inputs = policy.layout().beta_max.map(|_| vec![label; eval_samples]);
    let stats = forward_stats(
        problem,
        policy,
        &paths,
        inputs.as_deref(),
        derive_seed(eval_seed, SALT_ORDER),
    )?;
    let x = &stats.terminal;
    let m = SampleMoments::of(x);
    let criterion = problem.objective.criterion;
    let (risk, se_risk) = match criterion {
        Criterion::Cvar => {
            let alpha = problem.objective.alpha.expect("validated");
            let k = cvar_tail_size(alpha, x.len())?;
            let losses: Vec<f64> = x.iter().map(|v| -v + problem.x0).collect();
            let tail: Vec<f64> = largest_indices(&losses, k).iter().map(|&i| losses[i]).collect();
            let tm = SampleMoments::of(&tail);
            (tm.mean, (tm.variance / k as f64).sqrt())
        }
        _ => (m.variance, m.se_variance()),
    };
    let segment = [LabelSegment {
        start: 0,
        len: x.len(),
        label,
    }];
    let objective = plan_objective(problem, &stats, &segment, Aggregation::Sum)?;
    Ok(FrontierPoint {
        label_kind: criterion.label_kind(),
        label,
        mean: m.mean,
        risk_kind: criterion.risk_kind(),
        risk,
        se_mean: m.se_mean(),
        se_risk,
        n_samples: x.len(),
        max_constraint_violation: stats.violation,
        objective,
        converged: false,
        objective_trace: Vec::new(),
    })
}

/// Optimizes constant-mix weights for one label, then evaluates them.
pub fn static_optimize(
    problem: &Problem,
    label: f64,
    config: &TrainConfig,
) -> Result<(TrainedPolicy, FrontierPoint)> {
    let strategy = StrategySpec::new(StrategyKind::ConstantMix);
    let mut objective = problem.objective.clone();
    objective.penalty_model = crate::objectives::PenaltyModel::None;
    let static_problem = Problem {
        objective,
        ..problem.with_strategy(strategy)
    };
    let trained = train_point(&static_problem, label, config)?;
    let mut point = evaluate(&static_problem, &trained.policy, label, config.eval_samples, config.seed)?;
    point.converged = trained.converged;
    point.objective_trace = trained.trace.clone();
    Ok((trained, point))
}

/// Per-label failure recorded by a sweep that carried on.
#[derive(Debug)]
pub struct PointFailure {
    pub label: f64,
    pub error: Error,
}

/// Outcome of a sweep: points sorted by risk, the trained policies (one per
/// label for point and static modes, one shared policy for global modes).
#[derive(Debug)]
pub struct SweepResult {
    pub points: Vec<FrontierPoint>,
    pub policies: Vec<(usize, Policy)>,
    pub shared_policy: Option<Policy>,
    pub failures: Vec<PointFailure>,
}

fn sort_by_risk(points: &mut [FrontierPoint]) {
    points.sort_by(|a, b| a.risk.total_cmp(&b.risk).then(a.label.total_cmp(&b.label)));
}

pub fn sweep(problem: &Problem, spec: &SweepSpec, config: &TrainConfig) -> Result<SweepResult> {
    config.validate()?;
    problem.validate()?;
    spec.validate(problem.objective.criterion)?;
    let mut points = Vec::new();
    let mut policies = Vec::new();
    let mut failures = Vec::new();
    let mut shared_policy = None;
    match &spec.mode {
        SweepMode::Point | SweepMode::Static => {
            let outcomes: Vec<Result<(Policy, FrontierPoint)>> = spec
                .labels
                .par_iter()
                .map(|&label| {
                    if spec.mode == SweepMode::Static {
                        let (t, p) = static_optimize(problem, label, config)?;
                        return Ok((t.policy, p));
                    }
                    let t = train_point(problem, label, config)?;
                    let mut p = evaluate(problem, &t.policy, label, config.eval_samples, config.seed)?;
                    p.converged = t.converged;
                    p.objective_trace = t.trace;
                    Ok((t.policy, p))
                })
                .collect();
            for (i, (o, &label)) in outcomes.into_iter().zip(&spec.labels).enumerate() {
                match o {
                    Ok((pol, pt)) => {
                        policies.push((i, pol));
                        points.push(pt);
                    }
                    Err(error) => failures.push(PointFailure { label, error }),
                }
            }
        }
        SweepMode::GlobalDet | SweepMode::GlobalRand(_) => {
            let t = train_global(problem, spec, config)?;
            let evals: Vec<Result<FrontierPoint>> = spec
                .labels
                .iter()
                .map(|&label| evaluate(problem, &t.policy, label, config.eval_samples, config.seed))
                .collect();
            for (e, &label) in evals.into_iter().zip(&spec.labels) {
                match e {
                    Ok(mut p) => {
                        p.converged = t.converged;
                        p.objective_trace = t.trace.clone();
                        points.push(p);
                    }
                    Err(error) => failures.push(PointFailure { label, error }),
                }
            }
            shared_policy = Some(t.policy);
        }
    }
    sort_by_risk(&mut points);
    Ok(SweepResult {
        points,
        policies,
        shared_policy,
        failures,
    })
}

/// Standard-error multiple used as the Monte Carlo tolerance band.
pub const PARETO_BAND: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoReport {
    /// `(dominating, dominated)` indices into the risk-sorted points.
    pub dominated_pairs: Vec<(usize, usize)>,
    /// Adjacent label pairs whose means move against the label order beyond
    /// the band, the signature of point-by-point oscillation.
    pub oscillations: Vec<(f64, f64)>,
}

impl ParetoReport {
    pub fn consistent(&self) -> bool {
        self.dominated_pairs.is_empty()
    }
}

/// Checks that no point beats another on both mean and risk by more than the
/// Monte Carlo band. `points` must be sorted by risk.
pub fn pareto_check(points: &[FrontierPoint]) -> ParetoReport {
    let mut dominated_pairs = Vec::new();
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let tol_risk = PARETO_BAND * a.se_risk.hypot(b.se_risk);
            let tol_mean = PARETO_BAND * a.se_mean.hypot(b.se_mean);
            if a.risk < b.risk - tol_risk && a.mean > b.mean + tol_mean {
                dominated_pairs.push((i, j));
            }
        }
    }
    // larger risk weights must not raise the mean
    let mut by_label: Vec<&FrontierPoint> = points.iter().collect();
    by_label.sort_by(|a, b| a.label.total_cmp(&b.label));
    let increasing = by_label.first().is_some_and(|p| p.label_kind == "gamma");
    let mut oscillations = Vec::new();
    for w in by_label.windows(2) {
        let (a, b) = (w[0], w[1]);
        let tol = PARETO_BAND * a.se_mean.hypot(b.se_mean);
        let wrong_way = if increasing {
            b.mean < a.mean - tol
        } else {
            b.mean > a.mean + tol
        };
        if wrong_way {
            oscillations.push((a.label, b.label));
        }
    }
    ParetoReport {
        dominated_pairs,
        oscillations,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DominanceReport {
    /// Static points whose risk lies inside the dynamic frontier's range.
    pub compared: usize,
    /// Static labels lying above the interpolated dynamic frontier beyond the band.
    pub violations: Vec<f64>,
}

impl DominanceReport {
    pub fn dominated(&self) -> bool {
        self.compared > 0 && self.violations.is_empty()
    }
}

/// Compares each candidate point against the reference frontier linearly
/// interpolated at the same risk.
pub fn dominance_check(candidate: &[FrontierPoint], reference: &[FrontierPoint]) -> DominanceReport {
    let mut refs: Vec<&FrontierPoint> = reference.iter().collect();
    refs.sort_by(|a, b| a.risk.total_cmp(&b.risk));
    let mut compared = 0;
    let mut violations = Vec::new();
    for c in candidate {
        let Some(k) = refs.windows(2).position(|w| w[0].risk <= c.risk && c.risk <= w[1].risk) else {
            continue;
        };
        let (a, b) = (refs[k], refs[k + 1]);
        let t = if b.risk > a.risk {
            (c.risk - a.risk) / (b.risk - a.risk)
        } else {
            0.5
        };
        let mean = a.mean + t * (b.mean - a.mean);
        let se = a.se_mean.max(b.se_mean);
        compared += 1;
        if c.mean > mean + PARETO_BAND * c.se_mean.hypot(se) {
            violations.push(c.label);
        }
    }
    DominanceReport {
        compared,
        violations,
    }
}
