//! Maps network outputs and policy state to portfolio weights.
//!
//! All batched quantities are feature-major `d x B` matrices, one column per
//! path. A [`Policy`] owns the trainable parameters; recording it on a tape
//! yields a [`RecordedPolicy`], and [`RecordedPolicy::stepper`] produces the
//! weights date by date during a rollout.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, NodeId, NumArray, Shape, Tape};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, OutputHead, ParamNodes};

/// Slack allowed when checking `Σlo ≤ 1 ≤ Σhi`.
const FEASIBILITY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InfeasibleBounds(format!(
                "{} lower vs {} upper bounds",
                lo.len(),
                hi.len()
            )));
        }
        for (j, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(0.0 <= l && l <= h && h <= 1.0) {
                return Err(Error::InfeasibleBounds(format!(
                    "asset {j}: need 0 <= lo <= hi <= 1, got [{l}, {h}]"
                )));
            }
        }
        let (sl, sh): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
        if sl > 1.0 + FEASIBILITY_TOLERANCE || sh < 1.0 - FEASIBILITY_TOLERANCE {
            return Err(Error::InfeasibleBounds(format!(
                "budget unreachable: sum lo = {sl}, sum hi = {sh}"
            )));
        }
        Ok(Bounds { lo, hi })
    }

    pub fn uniform(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d])
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoveLimit {
    eta: Vec<f64>,
}

impl MoveLimit {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if eta.is_empty() || eta.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::validation("strategy.eta", "entries must be positive"));
        }
        Ok(MoveLimit { eta })
    }

    pub fn uniform(d: usize, eta: f64) -> Result<Self> {
        Self::new(vec![eta; d])
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    Unconstrained,
    Simplex,
    BoxProjected,
    Incremental,
    IncrementalClipped,
    ConstantMix,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Unconstrained => "unconstrained",
            StrategyKind::Simplex => "simplex",
            StrategyKind::BoxProjected => "box_projected",
            StrategyKind::Incremental => "incremental",
            StrategyKind::IncrementalClipped => "incremental_clipped",
            StrategyKind::ConstantMix => "constant_mix",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            StrategyKind::Unconstrained,
            StrategyKind::Simplex,
            StrategyKind::BoxProjected,
            StrategyKind::Incremental,
            StrategyKind::IncrementalClipped,
            StrategyKind::ConstantMix,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }

    pub fn head(self) -> OutputHead {
        match self {
            StrategyKind::Unconstrained => OutputHead::Identity,
            StrategyKind::Simplex | StrategyKind::BoxProjected | StrategyKind::ConstantMix => {
                OutputHead::Sigmoid
            }
            StrategyKind::Incremental | StrategyKind::IncrementalClipped => OutputHead::Tanh,
        }
    }

    pub fn is_incremental(self) -> bool {
        matches!(self, StrategyKind::Incremental | StrategyKind::IncrementalClipped)
    }

    /// Whether every produced weight vector is fully invested and inside its box.
    pub fn constrained_by_construction(self) -> bool {
        matches!(
            self,
            StrategyKind::Simplex | StrategyKind::BoxProjected | StrategyKind::ConstantMix
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitialWeights {
    #[default]
    Optimized,
    /// Date-0 weights pinned to `1/d`.
    FixedEqual,
}

impl InitialWeights {
    pub fn name(self) -> &'static str {
        match self {
            InitialWeights::Optimized => "optimized",
            InitialWeights::FixedEqual => "fixed-equal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "optimized" => Some(InitialWeights::Optimized),
            "fixed-equal" => Some(InitialWeights::FixedEqual),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub bounds: Option<Bounds>,
    pub move_limit: Option<MoveLimit>,
    pub initial_weights: InitialWeights,
    pub permute_projection: bool,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        StrategySpec {
            kind,
            bounds: None,
            move_limit: None,
            initial_weights: InitialWeights::Optimized,
            permute_projection: false,
        }
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_move_limit(mut self, limit: MoveLimit) -> Self {
        self.move_limit = Some(limit);
        self
    }

    pub fn with_initial_weights(mut self, mode: InitialWeights) -> Self {
        self.initial_weights = mode;
        self
    }

    pub fn validate(&self, n_assets: usize) -> Result<()> {
        let needs_bounds = matches!(
            self.kind,
            StrategyKind::BoxProjected | StrategyKind::IncrementalClipped
        );
        if needs_bounds && self.bounds.is_none() {
            return Err(Error::validation(
                "strategy.lo",
                format!("{} needs bounds", self.kind.name()),
            ));
        }
        if self.kind.is_incremental() && self.move_limit.is_none() {
            return Err(Error::validation(
                "strategy.eta",
                format!("{} needs a move limit", self.kind.name()),
            ));
        }
        if let Some(b) = &self.bounds {
            if b.dim() != n_assets {
                return Err(Error::validation(
                    "strategy.lo",
                    format!("{} bounds for {n_assets} assets", b.dim()),
                ));
            }
        }
        if let Some(m) = &self.move_limit {
            if m.eta().len() != n_assets {
                return Err(Error::validation(
                    "strategy.eta",
                    format!("{} move limits for {n_assets} assets", m.eta().len()),
                ));
            }
        }
        Ok(())
    }
}

/// Weights `ζ / Σζ` column by column.
pub fn simplex_weights(tape: &mut Tape, zeta: NodeId) -> Result<NodeId> {
    let s = tape.sum_rows(zeta)?;
    tape.div_columns(zeta, s)
}

/// `lo + ζ (hi - lo)` row by row.
pub fn rescale_to_box(tape: &mut Tape, zeta: NodeId, bounds: &Bounds) -> Result<NodeId> {
    tape.row_affine(zeta, bounds.lo.clone(), bounds.width())
}

fn check_order(order: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    if order.len() != d || order.iter().any(|&i| i >= d || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidDimension(format!(
            "visit order {order:?} is not a permutation of 0..{d}"
        )));
    }
    Ok(())
}

/// Sequential clipped projection onto `{Σw = 1} ∩ [lo, hi]`, recorded on the
/// tape. `w` is a `d x B` matrix; coordinates are visited in `order` and each
/// visit absorbs as much of the current budget gap as its box allows.
pub fn project_to_budget(
    tape: &mut Tape,
    w: NodeId,
    bounds: &Bounds,
    order: &[usize],
) -> Result<NodeId> {
    let d = bounds.dim();
    if tape.shape(w).rows() != d {
        return Err(Error::ShapeMismatch {
            op: "project_to_budget",
            detail: format!("{} rows for {d} bounds", tape.shape(w)),
        });
    }
    check_order(order, d)?;
    let mut rows = (0..d)
        .map(|j| tape.row(w, j))
        .collect::<Result<Vec<_>>>()?;
    for &i in order {
        let mut s = rows[0];
        for &r in &rows[1..] {
            s = tape.add(s, r)?;
        }
        let neg = tape.scale(s, -1.0)?;
        let gap = tape.offset(neg, 1.0)?;
        let moved = tape.add(rows[i], gap)?;
        rows[i] = tape.clip(moved, vec![bounds.lo[i]], vec![bounds.hi[i]])?;
    }
    tape.stack_rows(&rows)
}

/// Plain-value version of [`project_to_budget`] for a single weight vector;
/// bitwise identical to the recorded one.
pub fn project_to_budget_values(w: &[f64], bounds: &Bounds, order: &[usize]) -> Result<Vec<f64>> {
    let d = bounds.dim();
    if w.len() != d {
        return Err(Error::ShapeMismatch {
            op: "project_to_budget",
            detail: format!("{} weights for {d} bounds", w.len()),
        });
    }
    check_order(order, d)?;
    let mut w = w.to_vec();
    for &i in order {
        let mut s = w[0];
        for &x in &w[1..] {
            s += x;
        }
        w[i] = (w[i] + (-s + 1.0)).min(bounds.hi[i]).max(bounds.lo[i]);
    }
    Ok(w)
}

/// Normalization constants for the policy inputs, fixed for a run.
///
/// The input rows are `t/T`, `X/X₀`, then `V_j/V₀_j` when variances are
/// observed, then `β/β_max` for risk-aware (global) policies.
#[derive(Clone, Debug, PartialEq)]
pub struct InputLayout {
    pub horizon: f64,
    pub x0: f64,
    pub v0: Option<Vec<f64>>,
    pub beta_max: Option<f64>,
}

impl InputLayout {
    pub fn n_inputs(&self) -> usize {
        2 + self.v0.as_ref().map_or(0, Vec::len) + usize::from(self.beta_max.is_some())
    }
}

/// Trainable weight function: a network (absent for constant mix) plus the
/// extra vector `θ̃` of incremental strategies or `θ` of constant mix.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    spec: StrategySpec,
    n_assets: usize,
    layout: InputLayout,
    net: Option<NetworkParams>,
    extra: Vec<f64>,
}

impl Policy {
    pub fn new(spec: StrategySpec, n_assets: usize, layout: InputLayout, seed: u64) -> Result<Self> {
        spec.validate(n_assets)?;
        let net = match spec.kind {
            StrategyKind::ConstantMix => None,
            k => Some(NetworkParams::for_policy(
                layout.n_inputs(),
                n_assets,
                k.head(),
                seed,
            )?),
        };
        let extra = match spec.kind {
            StrategyKind::ConstantMix => vec![0.0; n_assets],
            k if k.is_incremental() => vec![1.0 / n_assets as f64; n_assets],
            _ => Vec::new(),
        };
        Ok(Policy {
            spec,
            n_assets,
            layout,
            net,
            extra,
        })
    }

    /// Rebuilds a policy from saved parts.
    pub fn from_parts(
        spec: StrategySpec,
        n_assets: usize,
        layout: InputLayout,
        net: Option<NetworkParams>,
        extra: Vec<f64>,
    ) -> Result<Self> {
        spec.validate(n_assets)?;
        let mut p = Policy::new(spec, n_assets, layout, 0)?;
        match (&p.net, &net) {
            (Some(a), Some(b)) if a.layer_dims() == b.layer_dims() && a.head() == b.head() => {}
            (None, None) => {}
            _ => {
                return Err(Error::Format(
                    "network shape does not match the strategy and market".into(),
                ))
            }
        }
        if extra.len() != p.extra.len() {
            return Err(Error::Format(format!(
                "expected {} extra parameters, got {}",
                p.extra.len(),
                extra.len()
            )));
        }
        p.net = net;
        p.extra = extra;
        Ok(p)
    }

    pub fn spec(&self) -> &StrategySpec {
        &self.spec
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn layout(&self) -> &InputLayout {
        &self.layout
    }

    pub fn network(&self) -> Option<&NetworkParams> {
        self.net.as_ref()
    }

    pub fn extra(&self) -> &[f64] {
        &self.extra
    }

    fn extra_trainable(&self) -> bool {
        match self.spec.kind {
            StrategyKind::ConstantMix => true,
            k if k.is_incremental() => self.spec.initial_weights == InitialWeights::Optimized,
            _ => false,
        }
    }

    /// Flat trainable parameters: network first, then the trainable extra vector.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.net.as_ref().map(|n| n.flat()).unwrap_or_default();
        if self.extra_trainable() {
            out.extend_from_slice(&self.extra);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.net.as_ref().map_or(0, |n| n.param_count())
            + if self.extra_trainable() { self.extra.len() } else { 0 }
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch {
                op: "set_flat",
                detail: format!("{} values for {} parameters", flat.len(), self.n_params()),
            });
        }
        let k = self.net.as_ref().map_or(0, |n| n.param_count());
        if let Some(net) = &mut self.net {
            net.set_flat(&flat[..k])?;
        }
        if self.extra_trainable() {
            self.extra.copy_from_slice(&flat[k..]);
        }
        Ok(())
    }

    pub fn record(&self, tape: &mut Tape) -> RecordedPolicy<'_> {
        let net = self.net.as_ref().map(|n| n.record(tape));
        let extra = (!self.extra.is_empty()).then(|| {
            let shape = if self.spec.kind == StrategyKind::ConstantMix {
                NumArray::matrix(self.n_assets, 1, self.extra.clone()).unwrap()
            } else {
                NumArray::vector(self.extra.clone())
            };
            tape.leaf(shape)
        });
        RecordedPolicy {
            policy: self,
            net,
            extra,
        }
    }
}

pub struct RecordedPolicy<'a> {
    policy: &'a Policy,
    net: Option<ParamNodes>,
    extra: Option<NodeId>,
}

impl<'a> RecordedPolicy<'a> {
    pub fn policy(&self) -> &'a Policy {
        self.policy
    }

    /// Gradient in the layout of [`Policy::flat`].
    pub fn flat_gradient(&self, grads: &Gradients, tape: &Tape) -> Vec<f64> {
        let mut out = self
            .net
            .as_ref()
            .map(|n| n.flat_gradient(grads, tape))
            .unwrap_or_default();
        if self.policy.extra_trainable() {
            let id = self.extra.expect("trainable extra is recorded");
            out.extend_from_slice(grads.get_or_zeros(id, tape.shape(id)).data());
        }
        out
    }

    /// Starts a rollout over `batch` paths. `betas` holds one risk weight per
    /// path for risk-aware policies; `order_seed` drives the randomized
    /// projection order when enabled.
    pub fn stepper(&self, batch: usize, betas: Option<Vec<f64>>, order_seed: u64) -> Result<WeightStepper<'_, 'a>> {
        let layout = &self.policy.layout;
        match (&layout.beta_max, &betas) {
            (Some(_), Some(b)) if b.len() == batch => {}
            (None, None) => {}
            (Some(_), _) => {
                return Err(Error::InvalidDimension(
                    "risk-aware policy needs one beta per path".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidDimension(
                    "policy does not take beta as input".into(),
                ))
            }
        }
        Ok(WeightStepper {
            rec: self,
            batch,
            betas,
            increment_sum: None,
            rng: ChaCha8Rng::seed_from_u64(order_seed),
        })
    }
}

/// Produces the weights at successive dates of one rollout.
pub struct WeightStepper<'r, 'a> {
    rec: &'r RecordedPolicy<'a>,
    batch: usize,
    betas: Option<Vec<f64>>,
    increment_sum: Option<NodeId>,
    rng: ChaCha8Rng,
}

impl WeightStepper<'_, '_> {
    fn state(
        &self,
        tape: &mut Tape,
        time: f64,
        wealth: NodeId,
        variances: Option<&[f64]>,
    ) -> Result<NodeId> {
        let layout = &self.rec.policy.layout;
        let b = self.batch;
        let mut rows = Vec::with_capacity(layout.n_inputs());
        rows.push(tape.constant(NumArray::vector(vec![time / layout.horizon; b])));
        rows.push(tape.scale(wealth, 1.0 / layout.x0)?);
        match (&layout.v0, variances) {
            (Some(v0), Some(v)) => {
                if v.len() != v0.len() * b {
                    return Err(Error::ShapeMismatch {
                        op: "policy_state",
                        detail: format!("{} variances for {} x {b}", v.len(), v0.len()),
                    });
                }
                for (j, &v0j) in v0.iter().enumerate() {
                    let row = v[j * b..(j + 1) * b].iter().map(|x| x / v0j).collect();
                    rows.push(tape.constant(NumArray::vector(row)));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidDimension(
                    "variance inputs do not match the policy layout".into(),
                ))
            }
        }
        if let (Some(bmax), Some(betas)) = (layout.beta_max, &self.betas) {
            let row = betas.iter().map(|x| x / bmax).collect();
            rows.push(tape.constant(NumArray::vector(row)));
        }
        tape.stack_rows(&rows)
    }

    fn broadcast(&self, tape: &mut Tape, column: NodeId) -> Result<NodeId> {
        let d = self.rec.policy.n_assets;
        let zeros = tape.constant(NumArray::zeros(Shape::Matrix(d, self.batch)));
        tape.add_column(zeros, column)
    }

    fn equal_weights(&self, tape: &mut Tape) -> NodeId {
        let d = self.rec.policy.n_assets;
        tape.constant(NumArray::filled(Shape::Matrix(d, self.batch), 1.0 / d as f64))
    }

    fn projection_order(&mut self) -> Vec<usize> {
        let d = self.rec.policy.n_assets;
        let mut order: Vec<usize> = (0..d).collect();
        if self.rec.policy.spec.permute_projection {
            order.shuffle(&mut self.rng);
        }
        order
    }

    /// Weights at date index `step` (time `time`), given the wealth vector at
    /// that date and, for stochastic-volatility markets, the `d x B` variances.
    pub fn weights(
        &mut self,
        tape: &mut Tape,
        step: usize,
        time: f64,
        wealth: NodeId,
        variances: Option<&[f64]>,
    ) -> Result<NodeId> {
        let policy = self.rec.policy;
        let spec = &policy.spec;
        let fixed_start = spec.initial_weights == InitialWeights::FixedEqual;
        match spec.kind {
            StrategyKind::ConstantMix => {
                let theta = self.rec.extra.expect("constant mix records theta");
                let z = tape.sigmoid(theta)?;
                let w = simplex_weights(tape, z)?;
                let ones = tape.constant(NumArray::filled(Shape::Matrix(1, self.batch), 1.0));
                tape.matmul(w, ones)
            }
            StrategyKind::Incremental | StrategyKind::IncrementalClipped => {
                let theta = if fixed_start {
                    let d = policy.n_assets;
                    tape.constant(NumArray::vector(vec![1.0 / d as f64; d]))
                } else {
                    self.rec.extra.expect("incremental records theta")
                };
                if step > 0 {
                    let state = self.state(tape, time, wealth, variances)?;
                    let net = self.rec.net.as_ref().expect("incremental has a network");
                    let xi = net.forward(tape, state)?;
                    let eta = spec.move_limit.as_ref().expect("validated").eta().to_vec();
                    let inc = tape.row_affine(xi, vec![0.0], eta)?;
                    self.increment_sum = Some(match self.increment_sum {
                        Some(acc) => tape.add(acc, inc)?,
                        None => inc,
                    });
                }
                let w = match self.increment_sum {
                    Some(acc) => tape.add_column(acc, theta)?,
                    None => self.broadcast(tape, theta)?,
                };
                if spec.kind == StrategyKind::IncrementalClipped {
                    let b = spec.bounds.as_ref().expect("validated");
                    tape.clip(w, b.lo.clone(), b.hi.clone())
                } else {
                    Ok(w)
                }
            }
            _ if step == 0 && fixed_start => Ok(self.equal_weights(tape)),
            StrategyKind::Unconstrained => {
                let state = self.state(tape, time, wealth, variances)?;
                self.rec.net.as_ref().expect("network").forward(tape, state)
            }
            StrategyKind::Simplex => {
                let state = self.state(tape, time, wealth, variances)?;
                let z = self.rec.net.as_ref().expect("network").forward(tape, state)?;
                simplex_weights(tape, z)
            }
            StrategyKind::BoxProjected => {
                let state = self.state(tape, time, wealth, variances)?;
                let z = self.rec.net.as_ref().expect("network").forward(tape, state)?;
                let b = spec.bounds.as_ref().expect("validated");
                let w = rescale_to_box(tape, z, b)?;
                let order = self.projection_order();
                project_to_budget(tape, w, b, &order)
            }
        }
    }
}
