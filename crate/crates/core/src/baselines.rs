//! Parametric baselines: Gaussian mixtures by EM and Gaussian HMMs by
//! Baum-Welch, with BIC order selection over a range of candidate sizes.
//!
//! EM is sensitive to its starting point, so every public fit behind
//! [`select_k_by_bic`] runs a few restarts and keeps the best likelihood.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpmm::{DpmmModel, MixtureComponent};
use crate::hmm::{forward_log_likelihood, HmmModel};
use crate::prob::{gauss_logpdf, logsumexp, GaussParams, VAR_FLOOR};
use crate::rng::SeedRng;
use crate::scalar::Scalar;
use crate::series::RegularSeries;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least {k} points for k={k}, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroComponents,
    #[error("empty candidate range")]
    EmptyRange,
    #[error("every candidate order failed: {0}")]
    AllFailed(String),
}

/// A plain parametric Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel<F> {
    pub components: Vec<MixtureComponent<F>>,
}

impl<F: Scalar> GmmModel<F> {
    pub fn logpdf(&self, y: F) -> F {
        let terms: Vec<F> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.params.logpdf(y))
            .collect();
        logsumexp(&terms)
    }

    pub fn log_likelihood(&self, data: &[F]) -> F {
        data.iter().map(|&y| self.logpdf(y)).sum()
    }

    /// Most probable component for `y`.
    pub fn map_component(&self, y: F) -> usize {
        let mut best = 0;
        let mut best_score = F::neg_infinity();
        for (i, c) in self.components.iter().enumerate() {
            let s = c.weight.ln() + c.params.logpdf(y);
            if s > best_score {
                best_score = s;
                best = i;
            }
        }
        best
    }
}

/// The fitted form behind a [`FitReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub enum FittedModel<F> {
    Gmm(GmmModel<F>),
    Hmm(HmmModel<F>),
}

/// Outcome of one penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct FitReport<F> {
    pub model: FittedModel<F>,
    pub k: usize,
    pub log_likelihood: F,
    pub n_params: usize,
    pub bic: F,
    pub iterations_used: usize,
    pub converged: bool,
}

/// `-2 log L + p ln n`.
pub fn bic<F: Scalar>(log_likelihood: F, n_params: usize, n_obs: usize) -> F {
    -F::of(2.0) * log_likelihood + F::of_usize(n_params) * F::of_usize(n_obs).ln()
}

/// Free parameters of a k-component Gaussian mixture: k means, k
/// variances, k-1 independent weights.
pub fn gmm_param_count(k: usize) -> usize {
    3 * k - 1
}

/// Free parameters of a k-state Gaussian HMM: k(k-1) transitions, k-1
/// initial probabilities, 2k emission parameters.
pub fn hmm_param_count(k: usize) -> usize {
    k * (k - 1) + (k - 1) + 2 * k
}

const EM_RESTARTS_ON_DEGENERACY: usize = 3;

/// Seeds `k` centers by distance-squared weighting.
fn kmeans_plus_plus<F: Scalar, R: Rng + ?Sized>(data: &[F], k: usize, rng: &mut R) -> Vec<F> {
    let mut centers = Vec::with_capacity(k);
    centers.push(data[(F::sample_uniform(rng).into_f64() * data.len() as f64) as usize % data.len()]);
    let mut d2: Vec<F> = data.iter().map(|&y| (y - centers[0]) * (y - centers[0])).collect();
    while centers.len() < k {
        let total: F = d2.iter().cloned().sum();
        let pick = if total > F::zero() {
            let mut u = F::sample_uniform(rng) * total;
            let mut idx = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            data[idx]
        } else {
            // All mass collapsed (duplicated points); fall back to uniform.
            data[(F::sample_uniform(rng).into_f64() * data.len() as f64) as usize % data.len()]
        };
        centers.push(pick);
        for (dist, &y) in d2.iter_mut().zip(data) {
            let cand = (y - pick) * (y - pick);
            if cand < *dist {
                *dist = cand;
            }
        }
    }
    centers
}

fn sample_variance<F: Scalar>(data: &[F]) -> F {
    let n = F::of_usize(data.len());
    let mean: F = data.iter().cloned().sum::<F>() / n;
    let ss: F = data.iter().map(|&y| (y - mean) * (y - mean)).sum();
    (ss / n).max(F::of(VAR_FLOOR))
}

struct GmmAttempt<F> {
    model: GmmModel<F>,
    log_likelihood: F,
    iterations: usize,
    converged: bool,
    degenerate: bool,
    /// Per-iteration log-likelihoods; the monotonicity test reads it.
    #[allow(dead_code)]
    trace: Vec<F>,
}

fn gmm_em_attempt<F: Scalar, R: Rng + ?Sized>(
    data: &[F],
    k: usize,
    max_iters: usize,
    tol: F,
    rng: &mut R,
) -> GmmAttempt<F> {
    let n = data.len();
    let nf = F::of_usize(n);
    let floor = F::of(VAR_FLOOR);
    let mut mus = kmeans_plus_plus(data, k, rng);
    let mut vars = vec![sample_variance(data); k];
    let mut weights = vec![F::one() / F::of_usize(k); k];
    let mut resp = vec![F::zero(); n * k];
    let mut prev_ll = F::neg_infinity();
    let mut trace = Vec::new();
    let mut degenerate = false;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iters {
        iterations = iter + 1;
        // E-step.
        let mut ll = F::zero();
        for (i, &y) in data.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for c in 0..k {
                row[c] = weights[c].ln() + gauss_logpdf(y, mus[c], vars[c]);
            }
            let norm = logsumexp(row);
            ll += norm;
            for v in row.iter_mut() {
                *v = (*v - norm).exp();
            }
        }
        debug_assert!(ll + F::of(1e-9) >= prev_ll, "EM log-likelihood decreased");
        trace.push(ll);
        // M-step.
        for c in 0..k {
            let nk: F = (0..n).map(|i| resp[i * k + c]).sum();
            if nk <= F::zero() {
                degenerate = true;
                break;
            }
            let mu: F = (0..n).map(|i| resp[i * k + c] * data[i]).sum::<F>() / nk;
            let var: F = (0..n)
                .map(|i| resp[i * k + c] * (data[i] - mu) * (data[i] - mu))
                .sum::<F>()
                / nk;
            if var < floor && nk < F::of(2.0) {
                degenerate = true;
                break;
            }
            weights[c] = nk / nf;
            mus[c] = mu;
            vars[c] = var.max(floor);
        }
        if degenerate {
            break;
        }
        if (ll - prev_ll).abs() <= tol * (F::one() + ll.abs()) && iter > 0 {
            converged = true;
            break;
        }
        prev_ll = ll;
    }

    let components = (0..k)
        .map(|c| MixtureComponent {
            weight: weights[c],
            params: GaussParams { mu: mus[c], sigma_sq: vars[c] },
        })
        .collect();
    let model = GmmModel { components };
    let log_likelihood = model.log_likelihood(data);
    GmmAttempt { model, log_likelihood, iterations, converged, degenerate, trace }
}

/// Fits a k-component Gaussian mixture by EM with k-means++ seeding.
///
/// A component collapsing onto fewer than two points restarts the fit
/// (up to three times); if every start collapses, the best attempt is
/// reported with `converged: false`.
pub fn gmm_em_fit<F: Scalar, R: Rng + ?Sized>(
    data: &[F],
    k: usize,
    max_iters: usize,
    tol: F,
    rng: &mut R,
) -> Result<FitReport<F>, BaselineError> {
    if k == 0 {
        return Err(BaselineError::ZeroComponents);
    }
    if data.len() < k {
        return Err(BaselineError::TooFewPoints { n: data.len(), k });
    }
    let mut best: Option<GmmAttempt<F>> = None;
    for _ in 0..EM_RESTARTS_ON_DEGENERACY {
        let attempt = gmm_em_attempt(data, k, max_iters, tol, rng);
        let clean = !attempt.degenerate;
        let better = best
            .as_ref()
            .map_or(true, |b| attempt.log_likelihood > b.log_likelihood);
        if better {
            best = Some(attempt);
        }
        if clean {
            break;
        }
    }
    let best = best.expect("at least one attempt");
    let n_params = gmm_param_count(k);
    Ok(FitReport {
        k,
        log_likelihood: best.log_likelihood,
        n_params,
        bic: bic(best.log_likelihood, n_params, data.len()),
        iterations_used: best.iterations,
        converged: best.converged && !best.degenerate,
        model: FittedModel::Gmm(best.model),
    })
}

struct BwAttempt<F> {
    model: HmmModel<F>,
    log_likelihood: F,
    iterations: usize,
    converged: bool,
    degenerate: bool,
}

fn hmm_bw_attempt<F: Scalar, R: Rng + ?Sized>(
    series: &RegularSeries<F>,
    k: usize,
    max_iters: usize,
    tol: F,
    rng: &mut R,
) -> BwAttempt<F> {
    let t_len = series.len();
    let floor = F::of(VAR_FLOOR);
    let present = series.present_values();
    let mut mus = kmeans_plus_plus(&present, k, rng);
    let mut vars = vec![sample_variance(&present); k];
    let mut initial = vec![F::one() / F::of_usize(k); k];
    // Mildly sticky start: diagonal-heavy rows converge on segmented data.
    let self_p = if k == 1 { F::one() } else { F::of(0.8) };
    let off_p = if k == 1 { F::zero() } else { F::of(0.2) / F::of_usize(k - 1) };
    let mut trans: Vec<F> = (0..k * k)
        .map(|idx| if idx / k == idx % k { self_p } else { off_p })
        .collect();

    let emission = |mus: &[F], vars: &[F], t: usize, s: usize| -> F {
        match series.value(t) {
            Some(y) => gauss_logpdf(y, mus[s], vars[s]),
            None => F::zero(),
        }
    };

    let mut log_alpha = vec![F::zero(); t_len * k];
    let mut log_beta = vec![F::zero(); t_len * k];
    let mut prev_ll = F::neg_infinity();
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;
    let mut terms = vec![F::zero(); k];

    for iter in 0..max_iters {
        iterations = iter + 1;
        // Forward.
        for s in 0..k {
            log_alpha[s] = initial[s].ln() + emission(&mus, &vars, 0, s);
        }
        for t in 1..t_len {
            for s in 0..k {
                for (j, term) in terms.iter_mut().enumerate() {
                    *term = log_alpha[(t - 1) * k + j] + trans[j * k + s].ln();
                }
                log_alpha[t * k + s] = logsumexp(&terms) + emission(&mus, &vars, t, s);
            }
        }
        let ll = logsumexp(&log_alpha[(t_len - 1) * k..t_len * k]);
        debug_assert!(ll + F::of(1e-9) >= prev_ll, "Baum-Welch log-likelihood decreased");
        // Backward.
        for s in 0..k {
            log_beta[(t_len - 1) * k + s] = F::zero();
        }
        for t in (0..t_len - 1).rev() {
            for s in 0..k {
                for (j, term) in terms.iter_mut().enumerate() {
                    *term = trans[s * k + j].ln()
                        + emission(&mus, &vars, t + 1, j)
                        + log_beta[(t + 1) * k + j];
                }
                log_beta[t * k + s] = logsumexp(&terms);
            }
        }
        // Accumulators.
        let mut new_trans = vec![F::zero(); k * k];
        let mut gamma_sum = vec![F::zero(); k];
        let mut mu_num = vec![F::zero(); k];
        let mut var_num = vec![F::zero(); k];
        let mut obs_weight = vec![F::zero(); k];
        let mut gamma0 = vec![F::zero(); k];
        for t in 0..t_len {
            for s in 0..k {
                let g = (log_alpha[t * k + s] + log_beta[t * k + s] - ll).exp();
                if t == 0 {
                    gamma0[s] = g;
                }
                if t + 1 < t_len {
                    gamma_sum[s] += g;
                }
                if let Some(y) = series.value(t) {
                    obs_weight[s] += g;
                    mu_num[s] += g * y;
                    var_num[s] += g * y * y;
                }
            }
            if t + 1 < t_len {
                for s in 0..k {
                    for j in 0..k {
                        let x = (log_alpha[t * k + s]
                            + trans[s * k + j].ln()
                            + emission(&mus, &vars, t + 1, j)
                            + log_beta[(t + 1) * k + j]
                            - ll)
                            .exp();
                        new_trans[s * k + j] += x;
                    }
                }
            }
        }
        // M-step.
        for s in 0..k {
            if obs_weight[s] <= F::of(1e-12) {
                degenerate = true;
                break;
            }
            let mu = mu_num[s] / obs_weight[s];
            let var = (var_num[s] / obs_weight[s] - mu * mu).max(F::zero());
            if var < floor && obs_weight[s] < F::of(2.0) {
                degenerate = true;
                break;
            }
            mus[s] = mu;
            vars[s] = var.max(floor);
            if gamma_sum[s] > F::zero() {
                for j in 0..k {
                    trans[s * k + j] = (new_trans[s * k + j] / gamma_sum[s]).max(F::of(1e-12));
                }
                let row_total: F = trans[s * k..(s + 1) * k].iter().cloned().sum();
                for j in 0..k {
                    trans[s * k + j] = trans[s * k + j] / row_total;
                }
            }
            initial[s] = gamma0[s].max(F::of(1e-12));
        }
        let init_total: F = initial.iter().cloned().sum();
        for p in initial.iter_mut() {
            *p = *p / init_total;
        }
        if degenerate {
            break;
        }
        if (ll - prev_ll).abs() <= tol * (F::one() + ll.abs()) && iter > 0 {
            converged = true;
            break;
        }
        prev_ll = ll;
    }

    let emissions: Vec<DpmmModel<F>> = (0..k)
        .map(|s| {
            DpmmModel::new(vec![(F::one(), GaussParams { mu: mus[s], sigma_sq: vars[s] })], F::one())
                .expect("floored variance is valid")
        })
        .collect();
    let rows: Vec<Vec<F>> = (0..k).map(|s| trans[s * k..(s + 1) * k].to_vec()).collect();
    let model = HmmModel::new(rows, initial, emissions).expect("normalized parameters");
    let log_likelihood = forward_log_likelihood(&model, series);
    BwAttempt { model, log_likelihood, iterations, converged, degenerate }
}

/// Fits a k-state Gaussian HMM by Baum-Welch; gaps contribute emission
/// factor one and do not update the emission moments.
pub fn hmm_baum_welch_fit<F: Scalar, R: Rng + ?Sized>(
    series: &RegularSeries<F>,
    k: usize,
    max_iters: usize,
    tol: F,
    rng: &mut R,
) -> Result<FitReport<F>, BaselineError> {
    if k == 0 {
        return Err(BaselineError::ZeroComponents);
    }
    let n_obs = series.count_present();
    if n_obs < k.max(2) {
        return Err(BaselineError::TooFewPoints { n: n_obs, k });
    }
    let mut best: Option<BwAttempt<F>> = None;
    for _ in 0..EM_RESTARTS_ON_DEGENERACY {
        let attempt = hmm_bw_attempt(series, k, max_iters, tol, rng);
        let clean = !attempt.degenerate;
        let better = best
            .as_ref()
            .map_or(true, |b| attempt.log_likelihood > b.log_likelihood);
        if better {
            best = Some(attempt);
        }
        if clean {
            break;
        }
    }
    let best = best.expect("at least one attempt");
    let n_params = hmm_param_count(k);
    Ok(FitReport {
        k,
        log_likelihood: best.log_likelihood,
        n_params,
        bic: bic(best.log_likelihood, n_params, n_obs),
        iterations_used: best.iterations,
        converged: best.converged && !best.degenerate,
        model: FittedModel::Hmm(best.model),
    })
}

/// Default number of restarts per candidate order.
pub const SELECT_RESTARTS: usize = 3;

/// Runs `fit` over every candidate order (three restarts each, best
/// likelihood kept) and returns the minimum-BIC report; ties go to the
/// smaller order. Individual failures are tolerated unless every
/// candidate fails.
pub fn select_k_by_bic<F, G>(
    mut fit: G,
    k_range: impl IntoIterator<Item = usize>,
    rng: &mut SeedRng,
) -> Result<FitReport<F>, BaselineError>
where
    F: Scalar,
    G: FnMut(usize, &mut SeedRng) -> Result<FitReport<F>, BaselineError>,
{
    let mut best: Option<FitReport<F>> = None;
    let mut last_err: Option<BaselineError> = None;
    let mut saw_candidate = false;
    for k in k_range {
        saw_candidate = true;
        let mut best_for_k: Option<FitReport<F>> = None;
        for _ in 0..SELECT_RESTARTS {
            match fit(k, rng) {
                Ok(report) => {
                    if best_for_k
                        .as_ref()
                        .map_or(true, |b| report.log_likelihood > b.log_likelihood)
                    {
                        best_for_k = Some(report);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        if let Some(report) = best_for_k {
            if best.as_ref().map_or(true, |b| report.bic < b.bic) {
                best = Some(report);
            }
        }
    }
    if !saw_candidate {
        return Err(BaselineError::EmptyRange);
    }
    best.ok_or_else(|| {
        BaselineError::AllFailed(last_err.map_or_else(|| "no fits".into(), |e| e.to_string()))
    })
}
