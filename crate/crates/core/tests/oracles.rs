//! Oracle checks: closed-form conjugate quantities against independent
//! quadrature, and the recursive likelihood/path algorithms against
//! exhaustive path enumeration.

use rand::Rng;
use rttseg_core::dpmm::DpmmModel;
use rttseg_core::hmm::{forward_log_likelihood, viterbi, HmmModel};
use rttseg_core::prob::{
    nix_posterior, nix_posterior_predictive_logpdf, GaussParams, NixParams,
};
use rttseg_core::rng::rng_from_seed;
use rttseg_core::scalar::Scalar;
use rttseg_core::series::RegularSeries;
use rttseg_testkit::enumerate::{forward_by_enumeration, viterbi_by_enumeration};
use rttseg_testkit::quad::{nix_pdf, nix_predictive_by_quadrature, normal_pdf};

#[test]
fn predictive_matches_2d_quadrature() {
    let params = NixParams::<f64>::new(0.0, 1.0, 3.0, 2.0).unwrap();
    let numeric = nix_predictive_by_quadrature(0.0, 1.0, 3.0, 2.0, 1.7);
    let closed = nix_posterior_predictive_logpdf(&params, 1.7).exp();
    let rel = (closed - numeric).abs() / numeric;
    assert!(rel < 1e-6, "closed {closed} vs quadrature {numeric} (rel {rel})");
}

#[test]
fn posterior_density_matches_grid_normalization() {
    // Posterior ∝ prior × likelihood, checked pointwise after normalizing
    // both sides over the same (mu, var) grid.
    let prior = NixParams::<f64>::new(0.0, 1.0, 1.0, 1.0).unwrap();
    let mut rng = rng_from_seed(77);
    let data: Vec<f64> = (0..50)
        .map(|_| 10.0 + 2.0 * f64::sample_standard_normal(&mut rng))
        .collect();
    let post = nix_posterior(&prior, &data);

    // Grid around the posterior mass.
    let mu_sd = (post.sigma0_sq / post.kappa0).sqrt();
    let mu_grid: Vec<f64> = (0..81).map(|i| post.mu0 + (i as f64 - 40.0) * 0.2 * mu_sd).collect();
    let var_grid: Vec<f64> = (0..81)
        .map(|i| post.sigma0_sq * (0.08 * (i as f64 - 40.0)).exp())
        .collect();

    let mut closed = Vec::new();
    let mut oracle = Vec::new();
    for &mu in &mu_grid {
        for &var in &var_grid {
            closed.push(post.logpdf(mu, var).exp());
            // Longhand prior × likelihood.
            let prior_pdf = nix_pdf(mu, var, prior.mu0, prior.kappa0, prior.nu0, prior.sigma0_sq);
            let loglik: f64 = data.iter().map(|&y| normal_pdf(y, mu, var).ln()).sum();
            oracle.push((prior_pdf.ln() + loglik).exp());
        }
    }
    let closed_total: f64 = closed.iter().sum();
    let oracle_total: f64 = oracle.iter().sum();
    let peak = closed.iter().cloned().fold(0.0f64, f64::max) / closed_total;
    let mut checked = 0;
    for (c, o) in closed.iter().zip(&oracle) {
        let c = c / closed_total;
        let o = o / oracle_total;
        if c > peak * 1e-9 {
            let rel = (c - o).abs() / o;
            assert!(rel < 1e-6, "normalized {c} vs {o} (rel {rel})");
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} grid points carried mass");
}

#[test]
fn predictive_quadrature_across_settings() {
    let settings = [
        (0.0, 1.0, 3.0, 2.0),
        (5.0, 0.5, 2.0, 1.0),
        (-3.0, 2.0, 4.0, 0.5),
        (100.0, 0.01, 2.0, 25.0),
        (10.0, 5.0, 1.0, 4.0),
    ];
    for (mu0, kappa0, nu0, sigma0_sq) in settings {
        let params = NixParams::<f64>::new(mu0, kappa0, nu0, sigma0_sq).unwrap();
        let scale = (sigma0_sq * (kappa0 + 1.0) / kappa0).sqrt();
        for i in 0..5 {
            let y = mu0 + (i as f64 - 2.0) * 1.3 * scale;
            let numeric = nix_predictive_by_quadrature(mu0, kappa0, nu0, sigma0_sq, y);
            let closed = nix_posterior_predictive_logpdf(&params, y).exp();
            let rel = (closed - numeric).abs() / numeric;
            assert!(
                rel < 1e-6,
                "params ({mu0},{kappa0},{nu0},{sigma0_sq}) y={y}: rel {rel}"
            );
        }
    }
}

fn random_model(k: usize, rng: &mut rttseg_core::rng::SeedRng) -> HmmModel<f64> {
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    let initial: Vec<f64> = raw.into_iter().map(|x| x / total).collect();
    let emissions = (0..k)
        .map(|_| {
            let mu = 20.0 * rng.gen::<f64>();
            let sigma_sq = 0.5 + 3.0 * rng.gen::<f64>();
            DpmmModel::new(vec![(1.0, GaussParams { mu, sigma_sq })], 1.0).unwrap()
        })
        .collect();
    HmmModel::new(rows, initial, emissions).unwrap()
}

fn random_series(t_len: usize, rng: &mut rttseg_core::rng::SeedRng) -> RegularSeries<f64> {
    let values = (0..t_len)
        .map(|_| {
            if rng.gen::<f64>() < 0.15 {
                None
            } else {
                Some(20.0 * rng.gen::<f64>())
            }
        })
        .collect();
    RegularSeries::new(0, 240, values).unwrap()
}

#[test]
fn forward_and_viterbi_match_enumeration() {
    let mut rng = rng_from_seed(12345);
    for trial in 0..40 {
        let k = 1 + (trial % 3);
        let t_len = 2 + (trial % 7);
        let model = random_model(k, &mut rng);
        let series = random_series(t_len, &mut rng);

        let emission_log: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                (0..k)
                    .map(|s| series.value(t).map_or(0.0, |y| model.emissions()[s].logpdf(y)))
                    .collect()
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..k).map(|i| model.transition_row(i).to_vec()).collect();

        let fwd = forward_log_likelihood(&model, &series);
        let fwd_oracle = forward_by_enumeration(model.initial(), &rows, &emission_log);
        assert!(
            (fwd - fwd_oracle).abs() < 1e-9,
            "trial {trial}: forward {fwd} vs {fwd_oracle}"
        );

        let (path, score) = viterbi(&model, &series);
        let (path_oracle, score_oracle) = viterbi_by_enumeration(model.initial(), &rows, &emission_log);
        assert!(
            (score - score_oracle).abs() < 1e-9,
            "trial {trial}: viterbi {score} vs {score_oracle}"
        );
        assert_eq!(path, path_oracle, "trial {trial}");
    }
}
