//! Model-fit validation by simulation: compare the likelihood of each
//! observed series against the likelihood of a series simulated from its
//! own fitted model. If the models fit, the two samples come from the same
//! distribution.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hdphmm::SegmentationResult;
use crate::hmm::{forward_log_likelihood, simulate};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("need at least 2 pairs, got {0}")]
    TooFew(usize),
    #[error("io error: {0}")]
    Io(String),
}

/// Observed vs simulated log-likelihood for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodPair<F> {
    pub series_id: String,
    pub observed_loglik: F,
    pub simulated_loglik: F,
    pub len: usize,
}

/// For each result, simulates a series of the same length from its model
/// and evaluates both forward log-likelihoods under that model.
pub fn likelihood_pairs<F: Scalar, R: Rng + ?Sized>(
    results: &[SegmentationResult<F>],
    rng: &mut R,
) -> Vec<LikelihoodPair<F>> {
    results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t_len = r.series.len();
            let observed = forward_log_likelihood(&r.model, &r.series);
            let (synthetic, _) = simulate(&r.model, t_len, rng);
            let simulated = forward_log_likelihood(&r.model, &synthetic);
            LikelihoodPair {
                series_id: i.to_string(),
                observed_loglik: observed,
                simulated_loglik: simulated,
                len: t_len,
            }
        })
        .collect()
}

/// Sorted observed quantiles against sorted simulated quantiles.
pub fn qq_points<F: Scalar>(pairs: &[LikelihoodPair<F>]) -> Result<Vec<(F, F)>, ValidationError> {
    if pairs.len() < 2 {
        return Err(ValidationError::TooFew(pairs.len()));
    }
    let mut observed: Vec<F> = pairs.iter().map(|p| p.observed_loglik).collect();
    let mut simulated: Vec<F> = pairs.iter().map(|p| p.simulated_loglik).collect();
    observed.sort_by(|a, b| a.partial_cmp(b).expect("finite log-likelihoods"));
    simulated.sort_by(|a, b| a.partial_cmp(b).expect("finite log-likelihoods"));
    Ok(observed.into_iter().zip(simulated).collect())
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn two_sample_ks<F: Scalar>(a: &[F], b: &[F]) -> F {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs non-empty samples");
    let mut xs: Vec<F> = a.to_vec();
    let mut ys: Vec<F> = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d = F::zero();
    while i < n && j < m {
        // Step past every tie of the current value on both sides before
        // comparing the empirical CDFs there.
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        let fa = F::of_usize(i) / F::of_usize(n);
        let fb = F::of_usize(j) / F::of_usize(m);
        d = d.max((fa - fb).abs());
    }
    d
}

/// Large-sample critical value `c(significance)·sqrt((n+m)/(n·m))` with
/// `c(s) = sqrt(-ln(s/2)/2)`.
pub fn ks_critical_value<F: Scalar>(significance: F, n: usize, m: usize) -> F {
    let half = F::of(0.5);
    let c = (-(significance * half).ln() * half).sqrt();
    c * ((F::of_usize(n) + F::of_usize(m)) / (F::of_usize(n) * F::of_usize(m))).sqrt()
}

/// Writes `observed,simulated` CSV rows for external plotting.
pub fn write_pairs_csv<F: Scalar>(
    pairs: &[LikelihoodPair<F>],
    path: &Path,
) -> Result<(), ValidationError> {
    use std::io::Write as _;
    let mut out = std::fs::File::create(path).map_err(|e| ValidationError::Io(e.to_string()))?;
    let mut write = |s: String| out.write_all(s.as_bytes()).map_err(|e| ValidationError::Io(e.to_string()));
    write("observed,simulated\n".to_string())?;
    for p in pairs {
        write(format!("{},{}\n", p.observed_loglik.into_f64(), p.simulated_loglik.into_f64()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpmm::DpmmModel;
    use crate::hmm::HmmModel;
    use crate::prob::GaussParams;
    use crate::rng::rng_from_seed;

    fn toy_model(sigma_sq: f64) -> HmmModel<f64> {
        let e = |mu: f64| DpmmModel::new(vec![(1.0, GaussParams { mu, sigma_sq })], 1.0).unwrap();
        HmmModel::new(
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![0.5, 0.5],
            vec![e(10.0), e(30.0)],
        )
        .unwrap()
    }

    fn results_from_model(model: &HmmModel<f64>, count: usize, t_len: usize) -> Vec<SegmentationResult<f64>> {
        let mut gen = rng_from_seed(42);
        (0..count)
            .map(|_| {
                let (series, states) = simulate(model, t_len, &mut gen);
                let log_likelihood = forward_log_likelihood(model, &series);
                SegmentationResult {
                    series,
                    states,
                    model: model.clone(),
                    log_likelihood,
                    sweep_diagnostics: vec![],
                }
            })
            .collect()
    }

    #[test]
    fn pairs_are_deterministic_under_seed() {
        let model = toy_model(2.0);
        let results = results_from_model(&model, 5, 60);
        let a = likelihood_pairs(&results, &mut rng_from_seed(7));
        let b = likelihood_pairs(&results, &mut rng_from_seed(7));
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.len == 60));
    }

    #[test]
    fn degenerate_emission_gives_similar_likelihoods() {
        let e = DpmmModel::new(vec![(1.0, GaussParams { mu: 10.0, sigma_sq: 1e-6 })], 1.0).unwrap();
        let model = HmmModel::new(vec![vec![1.0]], vec![1.0], vec![e]).unwrap();
        let results = results_from_model(&model, 1, 100);
        let pairs = likelihood_pairs(&results, &mut rng_from_seed(3));
        let p = &pairs[0];
        let rel = (p.observed_loglik - p.simulated_loglik).abs()
            / p.observed_loglik.abs().max(p.simulated_loglik.abs());
        assert!(rel < 0.1, "observed {} vs simulated {}", p.observed_loglik, p.simulated_loglik);
    }

    #[test]
    fn self_consistency_ks_is_small() {
        let model = toy_model(2.0);
        let results = results_from_model(&model, 100, 80);
        let pairs = likelihood_pairs(&results, &mut rng_from_seed(11));
        let observed: Vec<f64> = pairs.iter().map(|p| p.observed_loglik).collect();
        let simulated: Vec<f64> = pairs.iter().map(|p| p.simulated_loglik).collect();
        let d = two_sample_ks(&observed, &simulated);
        let crit = ks_critical_value(0.01, observed.len(), simulated.len());
        assert!(d < crit, "KS {d} vs critical {crit}");
    }

    #[test]
    fn qq_identical_lists_sit_on_diagonal() {
        let pairs: Vec<LikelihoodPair<f64>> = [3.0, 1.0, 2.0]
            .iter()
            .map(|&v| LikelihoodPair {
                series_id: String::new(),
                observed_loglik: v,
                simulated_loglik: v,
                len: 1,
            })
            .collect();
        let qq = qq_points(&pairs).unwrap();
        assert_eq!(qq, vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
    }

    #[test]
    fn qq_sorts_both_coordinates() {
        let pairs = vec![
            LikelihoodPair { series_id: String::new(), observed_loglik: 3.0, simulated_loglik: 4.0, len: 1 },
            LikelihoodPair { series_id: String::new(), observed_loglik: 1.0, simulated_loglik: 2.0, len: 1 },
        ];
        let qq = qq_points(&pairs).unwrap();
        assert_eq!(qq, vec![(1.0, 2.0), (3.0, 4.0)]);
        // Monotone in both coordinates and x-multiset preserved.
        for w in qq.windows(2) {
            assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
        assert!(matches!(qq_points::<f64>(&pairs[..1]), Err(ValidationError::TooFew(1))));
    }

    #[test]
    fn ks_statistic_basics() {
        let a = [1.0f64, 2.0, 3.0];
        assert_eq!(two_sample_ks(&a, &a), 0.0);
        let b = [10.0f64, 11.0, 12.0];
        assert_eq!(two_sample_ks(&a, &b), 1.0);
    }
}
