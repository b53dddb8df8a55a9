//! Continuous-time Mean-Variance solution under Black-Scholes dynamics with
//! zero interest rate, and its Monte Carlo evaluation on a rebalancing grid.

use rayon::prelude::*;

use crate::autodiff::biased_variance;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, cholesky_solve};
use crate::market::{BlackScholesModel, MarketModel, TimeGrid};

/// Paths simulated per parallel work unit.
const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticSolution {
    /// `(σρσ)⁻¹ μ`.
    pub kelly: Vec<f64>,
    /// `μ · (σρσ)⁻¹ μ`, per year.
    pub rate: f64,
}

impl AnalyticSolution {
    pub fn growth(&self, horizon: f64) -> f64 {
        (self.rate * horizon).exp()
    }
}

pub fn solve_analytic(model: &BlackScholesModel) -> Result<AnalyticSolution> {
    let d = model.n_assets();
    let l = cholesky_factor(d, &model.covariance())?;
    let kelly = cholesky_solve(d, &l, model.mu());
    let rate = kelly.iter().zip(model.mu()).map(|(k, m)| k * m).sum();
    Ok(AnalyticSolution { kelly, rate })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("beta = {beta}")))
    }
}

/// Amounts held in each asset at wealth `wealth`:
/// `-(σρσ)⁻¹ μ (X - x₀ - e^{RT} / (2β))`. The control does not depend on time.
pub fn optimal_control(
    wealth: f64,
    beta: f64,
    solution: &AnalyticSolution,
    horizon: f64,
    x0: f64,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let target = x0 + solution.growth(horizon) / (2.0 * beta);
    Ok(solution.kelly.iter().map(|k| -k * (wealth - target)).collect())
}

/// `(mean, variance)` of terminal wealth under continuous rebalancing.
pub fn closed_form_frontier(beta: f64, solution: &AnalyticSolution, horizon: f64, x0: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    let g = solution.growth(horizon) - 1.0;
    Ok((x0 + g / (2.0 * beta), g / (4.0 * beta * beta)))
}

/// Monte Carlo estimate of the frontier point reached by applying the
/// continuous control at each grid date.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticPoint {
    pub beta: f64,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub n_samples: usize,
}

/// Terminal wealth samples under the grid-applied optimal control.
pub fn simulate_optimal_wealth(
    beta: f64,
    model: &BlackScholesModel,
    grid: &TimeGrid,
    x0: f64,
    n_sims: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if n_sims < 2 {
        return Err(Error::OutOfRange(format!("n_sims = {n_sims}")));
    }
    let sol = solve_analytic(model)?;
    let target = x0 + sol.growth(grid.horizon()) / (2.0 * beta);
    let d = model.n_assets();
    let market = MarketModel::BlackScholes(model.clone());
    let starts: Vec<usize> = (0..n_sims).step_by(CHUNK).collect();
    let chunks: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let n = CHUNK.min(n_sims - start);
            let paths = market.simulate(grid, seed, start as u64, n);
            (0..n)
                .map(|p| {
                    let mut x = x0;
                    for i in 0..grid.n_steps() {
                        let gap = x - target;
                        let gain: f64 = (0..d)
                            .map(|j| -sol.kelly[j] * gap * paths.yield_at(p, i, j))
                            .sum();
                        x += gain;
                    }
                    x
                })
                .collect()
        })
        .collect();
    Ok(chunks.concat())
}

pub fn analytic_frontier_point(
    beta: f64,
    model: &BlackScholesModel,
    grid: &TimeGrid,
    x0: f64,
    n_sims: usize,
    seed: u64,
) -> Result<AnalyticPoint> {
    let x = simulate_optimal_wealth(beta, model, grid, x0, n_sims, seed)?;
    let s = SampleMoments::of(&x);
    Ok(AnalyticPoint {
        beta,
        mean: s.mean,
        variance: s.variance,
        se_mean: s.se_mean(),
        se_variance: s.se_variance(),
        n_samples: x.len(),
    })
}

/// Mean, biased variance and fourth central moment of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub fourth: f64,
}

impl SampleMoments {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let variance = biased_variance(x);
        let fourth = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64;
        SampleMoments {
            n,
            mean,
            variance,
            fourth,
        }
    }

    pub fn se_mean(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }

    /// Delta-method standard error of the sample variance.
    pub fn se_variance(&self) -> f64 {
        ((self.fourth - self.variance * self.variance).max(0.0) / self.n as f64).sqrt()
    }
}
