//! Differentiable wealth rollouts along simulated yield paths.

use crate::autodiff::{NodeId, NumArray, Tape};
use crate::error::{Error, Result};
use crate::market::{PathBatch, TimeGrid};
use crate::strategy::RecordedPolicy;

/// How wealth is carried from one date to the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WealthForm {
    /// `X⁺ = X + X (φ · Y)`: invested fractions earn the yields, the rest
    /// sits in cash at zero rate.
    #[default]
    Additive,
    /// `X⁺ = X Σ_j φ_j (1 + Y_j)`, which equals the additive form only when
    /// the weights sum to one.
    Multiplicative,
}

/// Wealth and weight trajectories of one batched rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// `[B]` terminal wealth.
    pub terminal_wealth: NodeId,
    /// One `d x B` weight matrix per rebalancing date `t_0 .. t_{N-1}`.
    pub weights: Vec<NodeId>,
    /// `[B]` wealth at `t_0 .. t_{N-1}`.
    pub wealth: Vec<NodeId>,
}

/// Applies the policy along the paths `paths` of `batch`, recording the whole
/// recursion on `tape`. Weights at `t_i` see the wealth reached at `t_i`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    tape: &mut Tape,
    policy: &RecordedPolicy<'_>,
    batch: &PathBatch,
    paths: std::ops::Range<usize>,
    grid: &TimeGrid,
    x0: f64,
    betas: Option<Vec<f64>>,
    order_seed: u64,
    form: WealthForm,
) -> Result<Rollout> {
    let b = paths.len();
    if b == 0 {
        return Err(Error::InvalidDimension("rollout over zero paths".into()));
    }
    if batch.n_steps() != grid.n_steps() || batch.n_assets() != policy.policy().n_assets() {
        return Err(Error::ShapeMismatch {
            op: "rollout",
            detail: format!(
                "paths have {} steps x {} assets, grid {} steps, policy {} assets",
                batch.n_steps(),
                batch.n_assets(),
                grid.n_steps(),
                policy.policy().n_assets()
            ),
        });
    }
    let d = batch.n_assets();
    let mut stepper = policy.stepper(b, betas, order_seed)?;
    let mut x = tape.constant(NumArray::vector(vec![x0; b]));
    let mut weights = Vec::with_capacity(grid.n_steps());
    let mut wealth = Vec::with_capacity(grid.n_steps());
    for i in 0..grid.n_steps() {
        let vars = batch.step_variances(i, paths.clone());
        let w = stepper.weights(tape, i, grid.date(i), x, vars.as_deref())?;
        let y = NumArray::matrix(d, b, batch.step_yields(i, paths.clone()))?;
        wealth.push(x);
        weights.push(w);
        x = step_wealth(tape, x, w, y, form)?;
    }
    Ok(Rollout {
        terminal_wealth: x,
        weights,
        wealth,
    })
}

fn step_wealth(tape: &mut Tape, x: NodeId, w: NodeId, y: NumArray, form: WealthForm) -> Result<NodeId> {
    match form {
        WealthForm::Additive => {
            let y = tape.constant(y);
            let wy = tape.mul(w, y)?;
            let r = tape.sum_rows(wy)?;
            let gain = tape.mul(x, r)?;
            tape.add(x, gain)
        }
        WealthForm::Multiplicative => {
            let mut gross = y;
            gross.data_mut().iter_mut().for_each(|v| *v += 1.0);
            let g = tape.constant(gross);
            let wg = tape.mul(w, g)?;
            let f = tape.sum_rows(wg)?;
            tape.mul(x, f)
        }
    }
}

/// Terminal wealth of fixed weight trajectories, without a tape.
/// `weights[i]` is the weight vector used on every path at date `i`.
pub fn terminal_wealth_fixed(batch: &PathBatch, weights: &[Vec<f64>], x0: f64) -> Vec<f64> {
    let d = batch.n_assets();
    (0..batch.n_paths())
        .map(|p| {
            let mut x = x0;
            for (i, w) in weights.iter().enumerate() {
                let r: f64 = (0..d).map(|j| w[j] * batch.yield_at(p, i, j)).sum();
                x += x * r;
            }
            x
        })
        .collect()
}
