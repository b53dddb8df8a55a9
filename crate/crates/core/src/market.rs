//! Correlated multi-asset path generation under Black-Scholes and Heston
//! dynamics, plus the named market presets.
//!
//! The risk-free rate is zero throughout: drifts are excess returns.
//! Path `p` of a simulation seeded with `seed` draws from ChaCha stream `p`,
//! so a path set does not depend on how the work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, lower_matvec};

/// Variance floor applied after each Milstein step.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Relative slack used when comparing `2κV̄` against `σ̄²`.
const FELLER_RELATIVE_TOLERANCE: f64 = 1e-12;

/// Independent random stream for one path.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Mixes two words into a well-spread seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Validated correlation matrix with its lower Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    n: usize,
    matrix: Vec<f64>,
    chol: Vec<f64>,
}

impl Correlation {
    pub fn new(n: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != n * n || n == 0 {
            return Err(Error::InvalidModel(format!(
                "correlation has {} entries for dimension {n}",
                matrix.len()
            )));
        }
        for i in 0..n {
            if (matrix[i * n + i] - 1.0).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::InvalidModel(format!("rho[{i}][{i}] != 1")));
            }
            for j in 0..i {
                if (matrix[i * n + j] - matrix[j * n + i]).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::InvalidModel(format!("rho not symmetric at ({i},{j})")));
                }
            }
        }
        let chol = cholesky_factor(n, &matrix)?;
        Ok(Correlation { n, matrix, chol })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel("correlation rows are ragged".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let matrix: Vec<f64> = (0..n * n)
            .map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 })
            .collect();
        Correlation {
            n,
            chol: matrix.clone(),
            matrix,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn chol(&self) -> &[f64] {
        &self.chol
    }
}

/// `G = A Aᵀ` from a Gaussian `d x d` matrix, scaled to unit diagonal, then
/// shrunk toward the identity: `λ I + (1 - λ) G`.
pub fn random_correlation(d: usize, seed: u64, shrink: f64) -> Result<Correlation> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("random correlation needs d >= 2, got {d}")));
    }
    if !(0.0..=1.0).contains(&shrink) {
        return Err(Error::OutOfRange(format!("shrink factor {shrink}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            g[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum();
        }
    }
    let diag: Vec<f64> = (0..d).map(|i| g[i * d + i].sqrt()).collect();
    let mut rho = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            rho[i * d + j] = if i == j {
                1.0
            } else {
                (1.0 - shrink) * g[i * d + j] / (diag[i] * diag[j])
            };
        }
    }
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            rho[j * d + i] = rho[i * d + j];
        }
    }
    Correlation::new(d, rho)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::validation("market.n_steps", "must be at least 1"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::validation("market.horizon", "must be positive"));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn date(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.n_steps as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlackScholesModel {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    rho: Correlation,
}

impl BlackScholesModel {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, rho: Correlation) -> Result<Self> {
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidModel("volatilities must be positive".into()));
        }
        Self::new_allow_zero_vol(mu, sigma, rho)
    }

    /// Like [`BlackScholesModel::new`] but admits `σ = 0`; only meant for
    /// deterministic diagnostics.
    pub fn new_allow_zero_vol(mu: Vec<f64>, sigma: Vec<f64>, rho: Correlation) -> Result<Self> {
        let d = mu.len();
        if d == 0 || sigma.len() != d || rho.dim() != d {
            return Err(Error::InvalidModel(format!(
                "dimensions mu {d}, sigma {}, rho {}",
                sigma.len(),
                rho.dim()
            )));
        }
        if sigma.iter().any(|&s| s < 0.0 || !s.is_finite()) || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidModel("non-finite or negative parameters".into()));
        }
        Ok(BlackScholesModel { mu, sigma, rho })
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rho(&self) -> &Correlation {
        &self.rho
    }

    /// `σ ρ σ`, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.n_assets();
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = self.sigma[i] * self.rho.get(i, j) * self.sigma[j];
            }
        }
        c
    }

    fn fill_path(&self, grid: &TimeGrid, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let d = self.n_assets();
        let dt = grid.dt();
        let sq = dt.sqrt();
        let drift: Vec<f64> = (0..d)
            .map(|j| (self.mu[j] - 0.5 * self.sigma[j] * self.sigma[j]) * dt)
            .collect();
        let mut g = vec![0.0; d];
        let mut z = vec![0.0; d];
        for step in out.chunks_mut(d) {
            g.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
            lower_matvec(d, self.rho.chol(), &g, &mut z);
            for j in 0..d {
                step[j] = (drift[j] + self.sigma[j] * sq * z[j]).exp_m1();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HestonModel {
    mu: Vec<f64>,
    kappa: Vec<f64>,
    vbar: Vec<f64>,
    sigbar: Vec<f64>,
    v0: Vec<f64>,
    /// Correlation of `(W¹_1..W¹_d, W²_1..W²_d)`.
    rho: Correlation,
}

impl HestonModel {
    pub fn new(
        mu: Vec<f64>,
        kappa: Vec<f64>,
        vbar: Vec<f64>,
        sigbar: Vec<f64>,
        v0: Vec<f64>,
        rho: Correlation,
    ) -> Result<Self> {
        let d = mu.len();
        if d == 0 || [&kappa, &vbar, &sigbar, &v0].iter().any(|v| v.len() != d) {
            return Err(Error::InvalidModel("Heston parameter lengths differ".into()));
        }
        if rho.dim() != 2 * d {
            return Err(Error::InvalidModel(format!(
                "Heston correlation must be {0}x{0}, got {1}",
                2 * d,
                rho.dim()
            )));
        }
        for (name, v) in [("kappa", &kappa), ("vbar", &vbar), ("sigbar", &sigbar), ("v0", &v0)] {
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidModel(format!("{name} entries must be positive")));
            }
        }
        Ok(HestonModel {
            mu,
            kappa,
            vbar,
            sigbar,
            v0,
            rho,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn vbar(&self) -> &[f64] {
        &self.vbar
    }

    pub fn sigbar(&self) -> &[f64] {
        &self.sigbar
    }

    pub fn v0(&self) -> &[f64] {
        &self.v0
    }

    pub fn rho(&self) -> &Correlation {
        &self.rho
    }

    /// Per asset, whether `2 κ V̄ ≥ σ̄²` holds (the standard Feller direction).
    pub fn feller_check(&self) -> Vec<bool> {
        (0..self.n_assets())
            .map(|j| {
                let lhs = 2.0 * self.kappa[j] * self.vbar[j];
                let rhs = self.sigbar[j] * self.sigbar[j];
                lhs >= rhs * (1.0 - FELLER_RELATIVE_TOLERANCE)
            })
            .collect()
    }

    fn fill_path(
        &self,
        grid: &TimeGrid,
        rng: &mut ChaCha8Rng,
        yields: &mut [f64],
        variances: &mut [f64],
    ) {
        let d = self.n_assets();
        let dt = grid.dt();
        let sq = dt.sqrt();
        let mut g = vec![0.0; 2 * d];
        let mut z = vec![0.0; 2 * d];
        let mut v = self.v0.clone();
        for (ys, vs) in yields.chunks_mut(d).zip(variances.chunks_mut(d)) {
            g.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
            lower_matvec(2 * d, self.rho.chol(), &g, &mut z);
            vs.copy_from_slice(&v);
            for j in 0..d {
                let vj = v[j];
                ys[j] = ((self.mu[j] - 0.5 * vj) * dt + (vj * dt).sqrt() * z[j]).exp_m1();
                let dw = sq * z[d + j];
                let sb = self.sigbar[j];
                let next = (vj
                    + self.kappa[j] * self.vbar[j] * dt
                    + sb * vj.sqrt() * dw
                    + 0.25 * sb * sb * (dw * dw - dt))
                    / (1.0 + self.kappa[j] * dt);
                v[j] = next.max(VARIANCE_FLOOR);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MarketModel {
    BlackScholes(BlackScholesModel),
    Heston(HestonModel),
}

impl MarketModel {
    pub fn n_assets(&self) -> usize {
        match self {
            MarketModel::BlackScholes(m) => m.n_assets(),
            MarketModel::Heston(m) => m.n_assets(),
        }
    }

    pub fn is_heston(&self) -> bool {
        matches!(self, MarketModel::Heston(_))
    }

    /// Initial variances for state normalization (Heston only).
    pub fn initial_variances(&self) -> Option<&[f64]> {
        match self {
            MarketModel::Heston(m) => Some(m.v0()),
            MarketModel::BlackScholes(_) => None,
        }
    }

    /// Simulates paths `first_path .. first_path + n_paths` of stream family `seed`.
    pub fn simulate(&self, grid: &TimeGrid, seed: u64, first_path: u64, n_paths: usize) -> PathBatch {
        let d = self.n_assets();
        let n = grid.n_steps();
        let stride = n * d;
        let mut yields = vec![0.0; n_paths * stride];
        match self {
            MarketModel::BlackScholes(m) => {
                yields
                    .par_chunks_mut(stride)
                    .enumerate()
                    .for_each(|(p, out)| {
                        let mut rng = path_rng(seed, first_path + p as u64);
                        m.fill_path(grid, &mut rng, out);
                    });
                PathBatch {
                    n_paths,
                    n_steps: n,
                    n_assets: d,
                    yields,
                    variances: None,
                }
            }
            MarketModel::Heston(m) => {
                let mut variances = vec![0.0; n_paths * stride];
                yields
                    .par_chunks_mut(stride)
                    .zip(variances.par_chunks_mut(stride))
                    .enumerate()
                    .for_each(|(p, (ys, vs))| {
                        let mut rng = path_rng(seed, first_path + p as u64);
                        m.fill_path(grid, &mut rng, ys, vs);
                    });
                PathBatch {
                    n_paths,
                    n_steps: n,
                    n_assets: d,
                    yields,
                    variances: Some(variances),
                }
            }
        }
    }
}

/// Simulated per-step yields `(S_{t+1} - S_t) / S_t`, laid out
/// `[path][step][asset]`. Heston batches also carry the variance at the start
/// of each step, which is part of the policy state.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    n_paths: usize,
    n_steps: usize,
    n_assets: usize,
    yields: Vec<f64>,
    variances: Option<Vec<f64>>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn yields(&self) -> &[f64] {
        &self.yields
    }

    pub fn variances(&self) -> Option<&[f64]> {
        self.variances.as_deref()
    }

    #[inline]
    fn index(&self, path: usize, step: usize, asset: usize) -> usize {
        (path * self.n_steps + step) * self.n_assets + asset
    }

    pub fn yield_at(&self, path: usize, step: usize, asset: usize) -> f64 {
        self.yields[self.index(path, step, asset)]
    }

    pub fn variance_at(&self, path: usize, step: usize, asset: usize) -> Option<f64> {
        let k = self.index(path, step, asset);
        self.variances.as_ref().map(|v| v[k])
    }

    fn gather(&self, src: &[f64], step: usize, paths: std::ops::Range<usize>) -> Vec<f64> {
        let b = paths.len();
        let mut out = vec![0.0; self.n_assets * b];
        for (col, p) in paths.enumerate() {
            let base = self.index(p, step, 0);
            for j in 0..self.n_assets {
                out[j * b + col] = src[base + j];
            }
        }
        out
    }

    /// Feature-major `assets x paths` block of yields at one step.
    pub fn step_yields(&self, step: usize, paths: std::ops::Range<usize>) -> Vec<f64> {
        self.gather(&self.yields, step, paths)
    }

    pub fn step_variances(&self, step: usize, paths: std::ops::Range<usize>) -> Option<Vec<f64>> {
        self.variances
            .as_ref()
            .map(|v| self.gather(v, step, paths))
    }

    /// Sub-batch of consecutive paths.
    pub fn slice(&self, paths: std::ops::Range<usize>) -> PathBatch {
        let stride = self.n_steps * self.n_assets;
        let r = paths.start * stride..paths.end * stride;
        PathBatch {
            n_paths: paths.len(),
            n_steps: self.n_steps,
            n_assets: self.n_assets,
            yields: self.yields[r.clone()].to_vec(),
            variances: self.variances.as_ref().map(|v| v[r].to_vec()),
        }
    }
}

/// Market, grid and initial wealth addressable by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub model: MarketModel,
    pub grid: TimeGrid,
    pub x0: f64,
}

pub const PRESET_NAMES: [&str; 6] = [
    "bs4-continuous",
    "bs20-continuous",
    "bs4-discrete",
    "bs20-discrete",
    "heston4",
    "heston10",
];

/// Seeds for correlations that are generated rather than printed.
pub const BS20_CONTINUOUS_RHO_SEED: u64 = 20_200;
pub const BS20_DISCRETE_RHO_SEED: u64 = 20_120;
pub const HESTON10_RHO_SEED: u64 = 10_120;

const MU4: [f64; 4] = [0.01, 0.0225, 0.035, 0.0475];
const SIGMA4: [f64; 4] = [0.05, 0.1, 0.15, 0.2];

const RHO4_CONTINUOUS: [[f64; 4]; 4] = [
    [1.0, 0.26, -0.43, 0.233],
    [0.26, 1.0, 0.003, 0.06],
    [-0.43, 0.003, 1.0, -0.33],
    [0.233, 0.06, -0.33, 1.0],
];

const RHO4_DISCRETE: [[f64; 4]; 4] = [
    [1.0, 0.805, -0.894, 0.59],
    [0.805, 1.0, -0.571, 0.473],
    [-0.894, -0.571, 1.0, -0.772],
    [0.59, 0.473, -0.772, 1.0],
];

const RHO_HESTON4: [[f64; 8]; 8] = [
    [1.0, -0.383, 0.378, -0.324, -0.751, -0.110, 0.272, 0.465],
    [-0.383, 1.0, -0.938, -0.411, -0.053, 0.276, -0.226, -0.349],
    [0.378, -0.938, 1.0, 0.145, -0.051, -0.398, 0.249, 0.401],
    [-0.324, -0.411, 0.145, 1.0, 0.655, 0.329, -0.264, -0.048],
    [-0.751, -0.053, -0.051, 0.655, 1.0, -0.172, -0.464, -0.105],
    [-0.110, 0.276, -0.398, 0.329, -0.172, 1.0, 0.044, -0.348],
    [0.272, -0.226, 0.249, -0.264, -0.464, 0.044, 1.0, -0.580],
    [0.465, -0.349, 0.401, -0.048, -0.105, -0.348, -0.580, 1.0],
];

fn rows<const N: usize>(m: &[[f64; N]; N]) -> Vec<&[f64]> {
    m.iter().map(|r| r.as_slice()).collect()
}

/// `μ_i = 0.01 + (i-1)/400`, `σ_i = 0.05 + (i-1)/100`.
fn graded_assets(d: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = (0..d).map(|i| 0.01 + i as f64 / 400.0).collect();
    let sigma = (0..d).map(|i| 0.05 + i as f64 / 100.0).collect();
    (mu, sigma)
}

pub fn preset(name: &str) -> Result<Preset> {
    let continuous = TimeGrid::new(1.0, 104)?;
    let monthly = TimeGrid::new(10.0, 120)?;
    let (name, model, grid): (&'static str, MarketModel, TimeGrid) = match name {
        "bs4-continuous" => (
            "bs4-continuous",
            MarketModel::BlackScholes(BlackScholesModel::new(
                MU4.to_vec(),
                SIGMA4.to_vec(),
                Correlation::from_rows(&rows(&RHO4_CONTINUOUS))?,
            )?),
            continuous,
        ),
        "bs20-continuous" => {
            let (mu, sigma) = graded_assets(20);
            (
                "bs20-continuous",
                MarketModel::BlackScholes(BlackScholesModel::new(
                    mu,
                    sigma,
                    random_correlation(20, BS20_CONTINUOUS_RHO_SEED, 0.5)?,
                )?),
                continuous,
            )
        }
        "bs4-discrete" => (
            "bs4-discrete",
            MarketModel::BlackScholes(BlackScholesModel::new(
                MU4.to_vec(),
                SIGMA4.to_vec(),
                Correlation::from_rows(&rows(&RHO4_DISCRETE))?,
            )?),
            monthly,
        ),
        "bs20-discrete" => {
            let (mu, sigma) = graded_assets(20);
            (
                "bs20-discrete",
                MarketModel::BlackScholes(BlackScholesModel::new(
                    mu,
                    sigma,
                    random_correlation(20, BS20_DISCRETE_RHO_SEED, 0.2)?,
                )?),
                monthly,
            )
        }
        "heston4" => {
            let v: Vec<f64> = SIGMA4.iter().map(|s| s * s).collect();
            (
                "heston4",
                MarketModel::Heston(HestonModel::new(
                    MU4.to_vec(),
                    vec![0.5; 4],
                    v.clone(),
                    SIGMA4.to_vec(),
                    v,
                    Correlation::from_rows(&rows(&RHO_HESTON4))?,
                )?),
                monthly,
            )
        }
        "heston10" => {
            let (mu, s) = graded_assets(10);
            let v: Vec<f64> = s.iter().map(|x| x * x).collect();
            (
                "heston10",
                MarketModel::Heston(HestonModel::new(
                    mu,
                    vec![0.5; 10],
                    v.clone(),
                    s,
                    v,
                    random_correlation(20, HESTON10_RHO_SEED, 0.1)?,
                )?),
                monthly,
            )
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(Preset {
        name,
        model,
        grid,
        x0: 1.0,
    })
}
