//! Training losses: Mean-Variance (direct and target forms), empirical
//! Mean-CVaR, and the constraint penalties of the four penalized models.
//!
//! Every loss is a scalar node to be minimized. Losses of several risk labels
//! share one batch: each label owns a contiguous segment of paths.

use rand::Rng;

use crate::autodiff::{largest_indices, NodeId, Shape, Tape};
use crate::error::{Error, Result};
use crate::portfolio::Rollout;
use crate::strategy::{Bounds, StrategyKind, StrategySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// `-E[X] + β Var[X]`.
    MvDirect,
    /// `E[(X - γ)²]`.
    MvAux,
    /// `-E[X] + β CVaR_α(X - x₀)`.
    Cvar,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::MvDirect => "mv_direct",
            Criterion::MvAux => "mv_aux",
            Criterion::Cvar => "cvar",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mv_direct" => Some(Criterion::MvDirect),
            "mv_aux" => Some(Criterion::MvAux),
            "cvar" => Some(Criterion::Cvar),
            _ => None,
        }
    }

    /// Name of the label the criterion is parameterized by.
    pub fn label_kind(self) -> &'static str {
        match self {
            Criterion::MvAux => "gamma",
            _ => "beta",
        }
    }

    pub fn risk_kind(self) -> &'static str {
        match self {
            Criterion::Cvar => "cvar",
            _ => "variance",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PenaltyModel {
    #[default]
    None,
    /// Simplex weights; local-move and box penalties.
    M1,
    /// Incremental weights; budget and box penalties.
    M2,
    /// Clipped incremental weights; budget penalty.
    M3,
    /// Projected box weights; local-move penalty.
    M4,
}

impl PenaltyModel {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyModel::None => "none",
            PenaltyModel::M1 => "m1",
            PenaltyModel::M2 => "m2",
            PenaltyModel::M3 => "m3",
            PenaltyModel::M4 => "m4",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "none" => Some(PenaltyModel::None),
            "m1" => Some(PenaltyModel::M1),
            "m2" => Some(PenaltyModel::M2),
            "m3" => Some(PenaltyModel::M3),
            "m4" => Some(PenaltyModel::M4),
            _ => None,
        }
    }

    fn strategy_kind(self) -> Option<StrategyKind> {
        match self {
            PenaltyModel::None => None,
            PenaltyModel::M1 => Some(StrategyKind::Simplex),
            PenaltyModel::M2 => Some(StrategyKind::Incremental),
            PenaltyModel::M3 => Some(StrategyKind::IncrementalClipped),
            PenaltyModel::M4 => Some(StrategyKind::BoxProjected),
        }
    }

    fn uses_local(self) -> bool {
        matches!(self, PenaltyModel::M1 | PenaltyModel::M4)
    }

    fn uses_box(self) -> bool {
        matches!(self, PenaltyModel::M1 | PenaltyModel::M2)
    }

    fn uses_budget(self) -> bool {
        matches!(self, PenaltyModel::M2 | PenaltyModel::M3)
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub criterion: Criterion,
    pub alpha: Option<f64>,
    pub epsilon: f64,
    pub penalty_model: PenaltyModel,
}

impl ObjectiveSpec {
    pub fn new(criterion: Criterion) -> Self {
        ObjectiveSpec {
            criterion,
            alpha: None,
            epsilon: DEFAULT_EPSILON,
            penalty_model: PenaltyModel::None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_penalty(mut self, model: PenaltyModel, epsilon: f64) -> Self {
        self.penalty_model = model;
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self, strategy: &StrategySpec) -> Result<()> {
        match (self.criterion, self.alpha) {
            (Criterion::Cvar, None) => {
                return Err(Error::validation("objective.alpha", "required for the cvar criterion"))
            }
            (Criterion::Cvar, Some(a)) if !(a > 0.0 && a < 1.0) => {
                return Err(Error::validation("objective.alpha", format!("{a} not in (0, 1)")))
            }
            _ => {}
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("objective.epsilon", "must be positive"));
        }
        let Some(kind) = self.penalty_model.strategy_kind() else {
            return Ok(());
        };
        if strategy.kind != kind {
            return Err(Error::validation(
                "objective.penalty_model",
                format!(
                    "{} needs strategy {}, got {}",
                    self.penalty_model.name(),
                    kind.name(),
                    strategy.kind.name()
                ),
            ));
        }
        if self.penalty_model.uses_local() && strategy.move_limit.is_none() {
            return Err(Error::validation(
                "strategy.eta",
                format!("{} penalizes moves beyond eta", self.penalty_model.name()),
            ));
        }
        if self.penalty_model.uses_box() && strategy.bounds.is_none() {
            return Err(Error::validation(
                "strategy.lo",
                format!("{} penalizes weights outside bounds", self.penalty_model.name()),
            ));
        }
        Ok(())
    }
}

fn check_batch(tape: &Tape, x: NodeId, min: usize, op: &'static str) -> Result<usize> {
    match tape.shape(x) {
        Shape::Vector(n) if n >= min => Ok(n),
        s => Err(Error::ShapeMismatch {
            op,
            detail: format!("need a wealth vector of at least {min} paths, got {s}"),
        }),
    }
}

pub fn mv_direct(tape: &mut Tape, x: NodeId, beta: f64) -> Result<NodeId> {
    check_batch(tape, x, 2, "mv_direct")?;
    let m = tape.mean(x)?;
    let v = tape.variance(x)?;
    let neg = tape.scale(m, -1.0)?;
    let risk = tape.scale(v, beta)?;
    tape.add(neg, risk)
}

pub fn mv_aux(tape: &mut Tape, x: NodeId, gamma: f64) -> Result<NodeId> {
    check_batch(tape, x, 1, "mv_aux")?;
    let shifted = tape.offset(x, -gamma)?;
    let sq = tape.square(shifted)?;
    tape.mean(sq)
}

/// Target level of the quadratic form that traces the same frontier point as `beta`.
pub fn gamma_from_beta(beta: f64, expected_optimal_wealth: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::OutOfRange(format!("beta = {beta}")));
    }
    Ok(0.5 / beta + expected_optimal_wealth)
}

/// Number of worst losses averaged by the empirical CVaR: `⌈(1-α) B⌉`.
pub fn cvar_tail_size(alpha: f64, batch: usize) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha}")));
    }
    // (1 - α) B is computed with a small guard so that e.g. α = 0.95, B = 100
    // gives 5 rather than 6 from the rounding of 0.05 * 100.
    let raw = (1.0 - alpha) * batch as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    if k < 1 || k > batch {
        return Err(Error::OutOfRange(format!("CVaR tail of {k} samples out of {batch}")));
    }
    Ok(k)
}

/// Mean of the `⌈(1-α)B⌉` largest losses `x₀ - X`.
pub fn cvar_empirical(tape: &mut Tape, x: NodeId, alpha: f64, x0: f64) -> Result<NodeId> {
    let b = check_batch(tape, x, 1, "cvar_empirical")?;
    let k = cvar_tail_size(alpha, b)?;
    let losses = tape.scale(x, -1.0)?;
    let losses = tape.offset(losses, x0)?;
    tape.tail_mean(losses, k)
}

/// Plain-value empirical CVaR of terminal wealth samples.
pub fn cvar_values(x: &[f64], alpha: f64, x0: f64) -> Result<f64> {
    let k = cvar_tail_size(alpha, x.len())?;
    let losses: Vec<f64> = x.iter().map(|v| -v + x0).collect();
    let idx = largest_indices(&losses, k);
    Ok(idx.iter().map(|&i| losses[i]).sum::<f64>() / k as f64)
}

pub fn mean_cvar(tape: &mut Tape, x: NodeId, beta: f64, alpha: f64, x0: f64) -> Result<NodeId> {
    let m = tape.mean(x)?;
    let neg = tape.scale(m, -1.0)?;
    let c = cvar_empirical(tape, x, alpha, x0)?;
    let risk = tape.scale(c, beta)?;
    tape.add(neg, risk)
}

fn batch_cols(tape: &Tape, w: NodeId) -> Result<usize> {
    match tape.shape(w) {
        Shape::Matrix(_, c) => Ok(c),
        s => Err(Error::ShapeMismatch {
            op: "penalty",
            detail: format!("weights must be d x B, got {s}"),
        }),
    }
}

fn scaled_total(tape: &mut Tape, terms: Vec<NodeId>, factor: f64) -> Result<NodeId> {
    let mut it = terms.into_iter();
    let mut acc = match it.next() {
        Some(t) => t,
        None => tape.constant(crate::autodiff::NumArray::scalar(0.0)),
    };
    for t in it {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, factor)
}

/// `(1/ε) Σ_i Σ_j mean_paths (|φ_j(t_{i+1}) - φ_j(t_i)| - η_j)⁺`.
pub fn penalty_local(tape: &mut Tape, weights: &[NodeId], eta: &[f64], epsilon: f64) -> Result<NodeId> {
    if weights.len() < 2 {
        return Err(Error::InvalidDimension("local penalty needs two dates".into()));
    }
    let b = batch_cols(tape, weights[0])?;
    let neg_eta: Vec<f64> = eta.iter().map(|e| -e).collect();
    let mut terms = Vec::with_capacity(weights.len() - 1);
    for pair in weights.windows(2) {
        let dw = tape.sub(pair[1], pair[0])?;
        let a = tape.abs(dw)?;
        let excess = tape.row_affine(a, neg_eta.clone(), vec![1.0])?;
        let p = tape.pos_part(excess)?;
        terms.push(tape.sum(p)?);
    }
    scaled_total(tape, terms, 1.0 / (epsilon * b as f64))
}

/// `(1/ε) Σ_i Σ_j mean_paths [(φ_j - hi_j)⁺ + (lo_j - φ_j)⁺]`.
pub fn penalty_box(tape: &mut Tape, weights: &[NodeId], bounds: &Bounds, epsilon: f64) -> Result<NodeId> {
    let first = *weights
        .first()
        .ok_or_else(|| Error::InvalidDimension("empty weight trajectory".into()))?;
    let b = batch_cols(tape, first)?;
    let neg_hi: Vec<f64> = bounds.hi().iter().map(|h| -h).collect();
    let lo = bounds.lo().to_vec();
    let mut terms = Vec::with_capacity(2 * weights.len());
    for &w in weights {
        let above = tape.row_affine(w, neg_hi.clone(), vec![1.0])?;
        let above = tape.pos_part(above)?;
        terms.push(tape.sum(above)?);
        let below = tape.row_affine(w, lo.clone(), vec![-1.0])?;
        let below = tape.pos_part(below)?;
        terms.push(tape.sum(below)?);
    }
    scaled_total(tape, terms, 1.0 / (epsilon * b as f64))
}

/// `(1/ε) Σ_i mean_paths |Σ_j φ_j(t_i) - 1|`.
pub fn penalty_budget(tape: &mut Tape, weights: &[NodeId], epsilon: f64) -> Result<NodeId> {
    let first = *weights
        .first()
        .ok_or_else(|| Error::InvalidDimension("empty weight trajectory".into()))?;
    let b = batch_cols(tape, first)?;
    let mut terms = Vec::with_capacity(weights.len());
    for &w in weights {
        let s = tape.sum_rows(w)?;
        let gap = tape.offset(s, -1.0)?;
        let a = tape.abs(gap)?;
        terms.push(tape.sum(a)?);
    }
    scaled_total(tape, terms, 1.0 / (epsilon * b as f64))
}

/// Sum of the penalties the model imposes, or `None` without a penalty model.
pub fn penalty_total(
    tape: &mut Tape,
    spec: &ObjectiveSpec,
    strategy: &StrategySpec,
    weights: &[NodeId],
) -> Result<Option<NodeId>> {
    let model = spec.penalty_model;
    let mut terms = Vec::new();
    if model.uses_local() {
        let eta = strategy.move_limit.as_ref().expect("validated").eta();
        terms.push(penalty_local(tape, weights, eta, spec.epsilon)?);
    }
    if model.uses_box() {
        let b = strategy.bounds.as_ref().expect("validated");
        terms.push(penalty_box(tape, weights, b, spec.epsilon)?);
    }
    if model.uses_budget() {
        terms.push(penalty_budget(tape, weights, spec.epsilon)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    scaled_total(tape, terms, 1.0).map(Some)
}

/// Criterion loss on one batch of terminal wealth for label `label` (β or γ).
pub fn base_loss(tape: &mut Tape, spec: &ObjectiveSpec, x: NodeId, label: f64, x0: f64) -> Result<NodeId> {
    match spec.criterion {
        Criterion::MvDirect => mv_direct(tape, x, label),
        Criterion::MvAux => mv_aux(tape, x, label),
        Criterion::Cvar => {
            let alpha = spec
                .alpha
                .ok_or_else(|| Error::validation("objective.alpha", "required for the cvar criterion"))?;
            mean_cvar(tape, x, label, alpha, x0)
        }
    }
}

/// Contiguous block of paths sharing one risk label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelSegment {
    pub start: usize,
    pub len: usize,
    pub label: f64,
}

/// How per-segment losses are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Sum over a deterministic label grid.
    Sum,
    /// Average over sampled labels, estimating a conditional expectation.
    Mean,
}

/// Full training loss: the criterion over every label segment plus the
/// penalty model's terms. Under [`Aggregation::Sum`] each segment carries its
/// own penalty, so the batch-mean penalty is counted once per segment.
pub fn assemble_loss(
    tape: &mut Tape,
    spec: &ObjectiveSpec,
    strategy: &StrategySpec,
    rollout: &Rollout,
    segments: &[LabelSegment],
    aggregation: Aggregation,
    x0: f64,
) -> Result<NodeId> {
    spec.validate(strategy)?;
    let n = check_batch(tape, rollout.terminal_wealth, 1, "assemble_loss")?;
    if segments.is_empty() {
        return Err(Error::validation("sweep.labels", "no labels"));
    }
    let mut covered = 0;
    for s in segments {
        if s.start != covered || s.len == 0 {
            return Err(Error::InvalidDimension("label segments must tile the batch".into()));
        }
        covered += s.len;
    }
    if covered != n {
        return Err(Error::InvalidDimension(format!(
            "label segments cover {covered} of {n} paths"
        )));
    }
    let mut terms = Vec::with_capacity(segments.len());
    for s in segments {
        let x = if segments.len() == 1 {
            rollout.terminal_wealth
        } else {
            tape.segment(rollout.terminal_wealth, s.start, s.len)?
        };
        terms.push(base_loss(tape, spec, x, s.label, x0)?);
    }
    let k = segments.len() as f64;
    let base = match aggregation {
        Aggregation::Sum => scaled_total(tape, terms, 1.0)?,
        Aggregation::Mean => scaled_total(tape, terms, 1.0 / k)?,
    };
    match penalty_total(tape, spec, strategy, &rollout.weights)? {
        None => Ok(base),
        Some(p) => {
            let p = match aggregation {
                Aggregation::Sum => tape.scale(p, k)?,
                Aggregation::Mean => p,
            };
            tape.add(base, p)
        }
    }
}

/// Distribution of the risk weight drawn per sub-batch in randomized global training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSampler {
    Uniform { lower: f64, upper: f64 },
    /// `β_max U²` with `U` uniform on `[0, 1]`.
    SquaredUniform { beta_max: f64 },
}

impl BetaSampler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSampler::Uniform { lower, upper } if lower > 0.0 && upper >= lower && upper.is_finite() => Ok(()),
            BetaSampler::SquaredUniform { beta_max } if beta_max > 0.0 && beta_max.is_finite() => Ok(()),
            _ => Err(Error::validation("sweep.sampler", "parameters must be positive and ordered")),
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            BetaSampler::Uniform { upper, .. } => upper,
            BetaSampler::SquaredUniform { beta_max } => beta_max,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            BetaSampler::Uniform { lower, upper } => lower + (upper - lower) * u,
            BetaSampler::SquaredUniform { beta_max } => beta_max * u * u,
        }
    }
}

/// `β_i = (2 i / K)²` for `i = 0 .. K-1`.
pub fn cvar_beta_grid(k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            let b = 2.0 * i as f64 / k as f64;
            b * b
        })
        .collect()
}
