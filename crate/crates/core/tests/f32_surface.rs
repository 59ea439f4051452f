//! The numeric core is generic over the scalar type; drive the main paths
//! at f32 to keep that claim honest.

use rttseg_core::dpmm::{dpmm_fit, DpmmModel};
use rttseg_core::hdphmm::{fit, HdpHmmConfig};
use rttseg_core::hmm::{forward_log_likelihood, simulate, viterbi, HmmModel};
use rttseg_core::prob::{nix_posterior, nix_posterior_predictive_logpdf, GaussParams, NixParams};
use rttseg_core::rng::rng_from_seed;
use rttseg_core::scalar::Scalar;
use rttseg_core::series::RegularSeries;

#[test]
fn conjugacy_and_mixtures_run_at_f32() {
    let prior = NixParams::<f32>::new(0.0, 1.0, 2.0, 1.0).unwrap();
    let post = nix_posterior(&prior, &[2.0, 3.0]);
    assert!(post.kappa0 == 3.0 && post.nu0 == 4.0);
    assert!(nix_posterior_predictive_logpdf(&post, 2.5).is_finite());

    let mut rng = rng_from_seed(1);
    let data: Vec<f32> = (0..150)
        .map(|i| if i % 2 == 0 { 0.0 } else { 20.0 } + f32::sample_standard_normal(&mut rng))
        .collect();
    let model = dpmm_fit(&data, 1.0, NixParams::default_for(&data).unwrap(), 80, 30, &mut rng).unwrap();
    assert_eq!(model.num_components(), 2);
}

#[test]
fn sampler_and_evaluation_run_at_f32() {
    let emission = |mu: f32| {
        DpmmModel::new(vec![(1.0, GaussParams { mu, sigma_sq: 1.0 })], 1.0).unwrap()
    };
    let truth = HmmModel::<f32>::new(
        vec![vec![0.97, 0.03], vec![0.03, 0.97]],
        vec![0.5, 0.5],
        vec![emission(10.0), emission(40.0)],
    )
    .unwrap();
    let mut gen = rng_from_seed(2);
    let (series, _) = simulate(&truth, 150, &mut gen);
    let ll = forward_log_likelihood(&truth, &series);
    assert!(ll.is_finite());
    let (path, score) = viterbi(&truth, &series);
    assert_eq!(path.len(), series.len());
    assert!(score <= ll + 1e-3);

    let config = HdpHmmConfig::<f32> { sweeps: 60, burn_in: 20, chains: 1, seed: 5, ..Default::default() };
    let result = fit(&series, &config).unwrap();
    assert_eq!(result.model.num_states(), 2);
    assert!(result.log_likelihood.is_finite());
}

#[test]
fn f32_and_f64_agree_on_simple_quantities() {
    let series32 = RegularSeries::<f32>::new(0, 240, vec![Some(1.0), None, Some(3.0)]).unwrap();
    let series64 = RegularSeries::<f64>::new(0, 240, vec![Some(1.0), None, Some(3.0)]).unwrap();
    assert_eq!(series32.count_present(), series64.count_present());
    let p32 = nix_posterior_predictive_logpdf(&NixParams::<f32>::new(0.0, 1.0, 3.0, 2.0).unwrap(), 1.7);
    let p64 = nix_posterior_predictive_logpdf(&NixParams::<f64>::new(0.0, 1.0, 3.0, 2.0).unwrap(), 1.7);
    assert!((p32 as f64 - p64).abs() < 1e-5, "{p32} vs {p64}");
}
