//! Sample moments of simulated paths against their closed forms.

use frontierlab::analytic::SampleMoments;
use frontierlab::market::{preset, MarketModel};

fn log_returns(paths: &frontierlab::market::PathBatch, step: usize, asset: usize) -> Vec<f64> {
    (0..paths.n_paths())
        .map(|p| paths.yield_at(p, step, asset).ln_1p())
        .collect()
}

#[test]
fn black_scholes_log_returns_have_the_model_moments() {
    let p = preset("bs4-discrete").unwrap();
    let MarketModel::BlackScholes(m) = &p.model else { unreachable!() };
    let paths = p.model.simulate(&p.grid, 11, 0, 40_000);
    let dt = p.grid.dt();
    for j in 0..4 {
        let s = SampleMoments::of(&log_returns(&paths, 5, j));
        let sig = m.sigma()[j];
        let mean = (m.mu()[j] - 0.5 * sig * sig) * dt;
        assert!((s.mean - mean).abs() < 4.0 * s.se_mean(), "asset {j} mean {} vs {mean}", s.mean);
        let var = sig * sig * dt;
        assert!((s.variance - var).abs() < 4.0 * s.se_variance(), "asset {j} variance {} vs {var}", s.variance);
    }
    // gross yields are lognormal with mean e^{μ Δ}
    for j in 0..4 {
        let y: Vec<f64> = (0..paths.n_paths()).map(|q| paths.yield_at(q, 0, j)).collect();
        let s = SampleMoments::of(&y);
        let expect = (m.mu()[j] * dt).exp_m1();
        assert!((s.mean - expect).abs() < 4.0 * s.se_mean());
    }
}

#[test]
fn black_scholes_correlations_match() {
    let p = preset("bs4-discrete").unwrap();
    let MarketModel::BlackScholes(m) = &p.model else { unreachable!() };
    let paths = p.model.simulate(&p.grid, 12, 0, 40_000);
    let r: Vec<Vec<f64>> = (0..4).map(|j| log_returns(&paths, 3, j)).collect();
    let n = r[0].len() as f64;
    for a in 0..4 {
        for b in (a + 1)..4 {
            let (ma, mb) = (r[a].iter().sum::<f64>() / n, r[b].iter().sum::<f64>() / n);
            let cov: f64 = r[a].iter().zip(&r[b]).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            let va: f64 = r[a].iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
            let vb: f64 = r[b].iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
            let corr = cov / (va * vb).sqrt();
            let expect = m.rho().get(a, b);
            // standard error of a sample correlation is (1 - ρ²)/√n
            let se = (1.0 - expect * expect) / n.sqrt();
            assert!((corr - expect).abs() < 5.0 * se + 1e-3, "rho[{a}][{b}] = {corr} vs {expect}");
        }
    }
}

#[test]
fn heston_variances_stay_positive_and_mean_revert() {
    let p = preset("heston4").unwrap();
    let MarketModel::Heston(h) = &p.model else { unreachable!() };
    let paths = p.model.simulate(&p.grid, 13, 0, 5_000);
    let v = paths.variances().unwrap();
    assert!(v.iter().all(|&x| x > 0.0), "non-positive variance");
    // V₀ = V̄, so E[V_t] = V̄ at every date
    let last = p.grid.n_steps() - 1;
    for j in 0..4 {
        let vs: Vec<f64> = (0..paths.n_paths()).map(|q| paths.variance_at(q, last, j).unwrap()).collect();
        let s = SampleMoments::of(&vs);
        let target = h.vbar()[j];
        assert!(
            (s.mean - target).abs() < 5.0 * s.se_mean() + 0.02 * target,
            "asset {j}: mean variance {} vs {target}",
            s.mean
        );
    }
}

#[test]
fn feller_report_matches_hand_check() {
    for name in ["heston4", "heston10"] {
        let p = preset(name).unwrap();
        let MarketModel::Heston(h) = &p.model else { unreachable!() };
        // the presets set V̄ = σ², σ̄ = σ and κ = 1/2, so 2κV̄ = σ̄² exactly: on the boundary
        let hand: Vec<bool> = (0..h.n_assets())
            .map(|j| {
                let lhs = 2.0 * h.kappa()[j] * h.vbar()[j];
                let rhs = h.sigbar()[j].powi(2);
                (lhs - rhs).abs() <= 1e-12 * rhs || lhs > rhs
            })
            .collect();
        assert_eq!(h.feller_check(), hand);
        assert!(hand.iter().all(|&b| b));
    }
}
