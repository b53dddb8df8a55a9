//! Run configuration: a TOML file with a top-level `seed` and the sections
//! `market`, `strategy`, `objective`, `sweep`, `train` and `output`.
//!
//! ```toml
//! seed = 7
//! [market]
//! preset = "bs4-continuous"
//! [strategy]
//! kind = "unconstrained"
//! [objective]
//! criterion = "mv_direct"
//! [sweep]
//! mode = "point"
//! labels = [0.2, 2.0]
//! [train]
//! n_iterations = 5000
//! ```
//!
//! Unknown keys are rejected. Every check of the inner modules runs again at
//! load, and errors name the offending key.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::frontier::{Problem, SweepMode, SweepSpec, TrainConfig};
use crate::market::{preset, BlackScholesModel, Correlation, HestonModel, MarketModel, TimeGrid};
use crate::objectives::{BetaSampler, Criterion, ObjectiveSpec, PenaltyModel, DEFAULT_EPSILON};
use crate::strategy::{Bounds, InitialWeights, MoveLimit, StrategyKind, StrategySpec};

/// A number applied to every asset, or one number per asset.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PerAsset {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerAsset {
    fn expand(&self, d: usize) -> Vec<f64> {
        match self {
            PerAsset::Uniform(v) => vec![*v; d],
            PerAsset::Each(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub preset: Option<String>,
    /// `black_scholes` or `heston`, for markets given inline.
    pub model: Option<String>,
    pub n_steps: Option<usize>,
    pub horizon: Option<f64>,
    pub x0: Option<f64>,
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub kappa: Option<Vec<f64>>,
    pub vbar: Option<Vec<f64>>,
    pub sigbar: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub rho: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: String,
    pub lo: Option<PerAsset>,
    pub hi: Option<PerAsset>,
    pub eta: Option<PerAsset>,
    pub initial_weights: Option<String>,
    #[serde(default)]
    pub permute_projection: bool,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub criterion: String,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub penalty_model: Option<String>,
    pub groups: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub mode: String,
    #[serde(default)]
    pub labels: Vec<f64>,
    /// `uniform` or `squared_uniform`, for `global_rand`.
    pub sampler: Option<String>,
    pub sampler_lower: Option<f64>,
    pub sampler_upper: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub n_iterations: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_final: Option<f64>,
    pub eval_samples: Option<usize>,
    pub stabilization_every: Option<usize>,
    pub stabilization_samples: Option<usize>,
    pub stabilization_tol: Option<f64>,
    pub n_restarts: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// The file as written, before interpretation.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub seed: u64,
    pub market: MarketSection,
    pub strategy: StrategySection,
    pub objective: ObjectiveSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A validated run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: Problem,
    pub sweep: SweepSpec,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            Error::validation(field, e.message().trim().to_string())
        })?;
        raw.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }
}

fn name_error(field: &str, value: &str, choices: &[&str]) -> Error {
    Error::validation(field, format!("unknown value `{value}`; expected one of {}", choices.join(", ")))
}

fn as_field(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Validation { .. } => e,
        other => Error::validation(field, other.to_string()),
    }
}

impl RawConfig {
    pub fn resolve(&self) -> Result<RunConfig> {
        let (market, grid, x0) = self.market.resolve()?;
        let d = market.n_assets();
        let strategy = self.strategy.resolve(d)?;
        let objective = self.objective.resolve()?;
        let sweep = self.sweep.resolve()?;
        let mut train = self.train.resolve(self.seed);
        if let Some(g) = self.objective.groups {
            train.groups = g;
        }
        let problem = Problem {
            market,
            grid,
            x0,
            strategy,
            objective,
        };
        problem.validate()?;
        sweep.validate(problem.objective.criterion)?;
        train.validate()?;
        Ok(RunConfig {
            problem,
            sweep,
            train,
            output_dir: self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

impl MarketSection {
    fn resolve(&self) -> Result<(MarketModel, TimeGrid, f64)> {
        let (model, grid, x0) = match (&self.preset, &self.model) {
            (Some(_), Some(_)) => {
                return Err(Error::validation("market.model", "give either a preset or an inline model"))
            }
            (Some(name), None) => {
                let p = preset(name).map_err(as_field("market.preset"))?;
                let horizon = self.horizon.unwrap_or(p.grid.horizon());
                let n_steps = self.n_steps.unwrap_or(p.grid.n_steps());
                (p.model, TimeGrid::new(horizon, n_steps)?, p.x0)
            }
            (None, Some(kind)) => {
                let horizon = self
                    .horizon
                    .ok_or_else(|| Error::validation("market.horizon", "required for inline models"))?;
                let n_steps = self
                    .n_steps
                    .ok_or_else(|| Error::validation("market.n_steps", "required for inline models"))?;
                (self.inline(kind)?, TimeGrid::new(horizon, n_steps)?, 1.0)
            }
            (None, None) => return Err(Error::validation("market.preset", "a preset or an inline model is required")),
        };
        Ok((model, grid, self.x0.unwrap_or(x0)))
    }

    fn inline(&self, kind: &str) -> Result<MarketModel> {
        fn need<'a>(v: &'a Option<Vec<f64>>, field: &str) -> Result<&'a Vec<f64>> {
            v.as_ref().ok_or_else(|| Error::validation(field, "required for this model"))
        }
        let rho = self
            .rho
            .as_ref()
            .ok_or_else(|| Error::validation("market.rho", "required for inline models"))?;
        let n = rho.len();
        if rho.iter().any(|r| r.len() != n) {
            return Err(Error::validation("market.rho", "must be square"));
        }
        let rho = Correlation::new(n, rho.concat()).map_err(as_field("market.rho"))?;
        let mu = need(&self.mu, "market.mu")?.clone();
        match kind {
            "black_scholes" => {
                let sigma = need(&self.sigma, "market.sigma")?.clone();
                BlackScholesModel::new(mu, sigma, rho)
                    .map(MarketModel::BlackScholes)
                    .map_err(as_field("market.sigma"))
            }
            "heston" => HestonModel::new(
                mu,
                need(&self.kappa, "market.kappa")?.clone(),
                need(&self.vbar, "market.vbar")?.clone(),
                need(&self.sigbar, "market.sigbar")?.clone(),
                need(&self.v0, "market.v0")?.clone(),
                rho,
            )
            .map(MarketModel::Heston)
            .map_err(as_field("market.rho")),
            other => Err(name_error("market.model", other, &["black_scholes", "heston"])),
        }
    }
}

impl StrategySection {
    fn resolve(&self, d: usize) -> Result<StrategySpec> {
        let kind = StrategyKind::from_name(&self.kind).ok_or_else(|| {
            name_error(
                "strategy.kind",
                &self.kind,
                &[
                    "unconstrained",
                    "simplex",
                    "box_projected",
                    "incremental",
                    "incremental_clipped",
                    "constant_mix",
                ],
            )
        })?;
        let mut spec = StrategySpec::new(kind);
        spec.permute_projection = self.permute_projection;
        if let Some(mode) = &self.initial_weights {
            spec.initial_weights = InitialWeights::from_name(mode)
                .ok_or_else(|| name_error("strategy.initial_weights", mode, &["optimized", "fixed-equal"]))?;
        }
        match (&self.lo, &self.hi) {
            (None, None) => {}
            (lo, hi) => {
                let lo = lo.as_ref().map_or(vec![0.0; d], |v| v.expand(d));
                let hi = hi.as_ref().map_or(vec![1.0; d], |v| v.expand(d));
                spec.bounds = Some(Bounds::new(lo, hi).map_err(as_field("strategy.lo"))?);
            }
        }
        if let Some(eta) = &self.eta {
            spec.move_limit = Some(MoveLimit::new(eta.expand(d)).map_err(as_field("strategy.eta"))?);
        }
        Ok(spec)
    }
}

impl ObjectiveSection {
    fn resolve(&self) -> Result<ObjectiveSpec> {
        let criterion = Criterion::from_name(&self.criterion)
            .ok_or_else(|| name_error("objective.criterion", &self.criterion, &["mv_direct", "mv_aux", "cvar"]))?;
        let mut spec = ObjectiveSpec::new(criterion);
        spec.alpha = self.alpha;
        spec.epsilon = self.epsilon.unwrap_or(DEFAULT_EPSILON);
        if let Some(m) = &self.penalty_model {
            spec.penalty_model = PenaltyModel::from_name(m)
                .ok_or_else(|| name_error("objective.penalty_model", m, &["none", "m1", "m2", "m3", "m4"]))?;
        }
        Ok(spec)
    }
}

impl SweepSection {
    fn resolve(&self) -> Result<SweepSpec> {
        let mode = match self.mode.as_str() {
            "point" => SweepMode::Point,
            "global_det" => SweepMode::GlobalDet,
            "static" => SweepMode::Static,
            "global_rand" => {
                let upper = self
                    .sampler_upper
                    .ok_or_else(|| Error::validation("sweep.sampler_upper", "required for global_rand"))?;
                let sampler = match self.sampler.as_deref().unwrap_or("squared_uniform") {
                    "squared_uniform" => BetaSampler::SquaredUniform { beta_max: upper },
                    "uniform" => BetaSampler::Uniform {
                        lower: self
                            .sampler_lower
                            .ok_or_else(|| Error::validation("sweep.sampler_lower", "required for a uniform sampler"))?,
                        upper,
                    },
                    other => return Err(name_error("sweep.sampler", other, &["uniform", "squared_uniform"])),
                };
                SweepMode::GlobalRand(sampler)
            }
            other => {
                return Err(name_error(
                    "sweep.mode",
                    other,
                    &["point", "global_det", "global_rand", "static"],
                ))
            }
        };
        Ok(SweepSpec {
            mode,
            labels: self.labels.clone(),
        })
    }
}

impl TrainSection {
    fn resolve(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            seed,
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            n_iterations: self.n_iterations.unwrap_or(d.n_iterations),
            lr_initial: self.lr_initial.unwrap_or(d.lr_initial),
            lr_final: self.lr_final.unwrap_or(d.lr_final),
            eval_samples: self.eval_samples.unwrap_or(d.eval_samples),
            stabilization_every: self.stabilization_every.unwrap_or(d.stabilization_every),
            stabilization_samples: self.stabilization_samples.unwrap_or(d.stabilization_samples),
            stabilization_tol: self.stabilization_tol.unwrap_or(d.stabilization_tol),
            n_restarts: self.n_restarts.unwrap_or(d.n_restarts),
            groups: d.groups,
        }
    }
}
