//! Collapsed Gibbs sampler for the Dirichlet-process Gaussian mixture.
//!
//! Component parameters are marginalized out through Normal-Inverse-χ²
//! conjugacy, so an assignment is resampled from
//! `n_{-i,c} · pred_c(y)` for existing clusters and `alpha · pred_prior(y)`
//! for a fresh one. The same engine backs the per-state emission models of
//! the sticky HDP-HMM.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{
    consistency_tol, logsumexp, nix_marginal_loglik, nix_posterior_from_stats,
    nix_posterior_predictive_logpdf, sample_categorical_log, GaussParams, GaussStats, NixParams,
    VAR_FLOOR,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum DpmmError {
    #[error("no observations")]
    EmptyData,
    #[error("need sweeps > burn_in, got sweeps={sweeps} burn_in={burn_in}")]
    InvalidRun { sweeps: usize, burn_in: usize },
    #[error("inconsistent sampler state: {0}")]
    Inconsistent(String),
}

/// Marker index for "open a new cluster" in assignment weight vectors.
pub(crate) const NEW_CLUSTER: usize = usize::MAX;

/// Sufficient-statistics view of a DP mixture with cluster slots.
///
/// Emptied slots stay allocated on a free list and are reused by later
/// births, so removals never relabel live clusters mid-sweep.
#[derive(Debug, Clone)]
pub(crate) struct CollapsedMixture<F> {
    clusters: Vec<GaussStats<F>>,
    free: Vec<usize>,
    total: usize,
    pub(crate) alpha: F,
    pub(crate) prior: NixParams<F>,
}

impl<F: Scalar> CollapsedMixture<F> {
    pub(crate) fn new(alpha: F, prior: NixParams<F>) -> Self {
        Self { clusters: Vec::new(), free: Vec::new(), total: 0, alpha, prior }
    }

    pub(crate) fn total(&self) -> usize {
        self.total
    }

    pub(crate) fn num_live(&self) -> usize {
        self.clusters.len() - self.free.len()
    }

    pub(crate) fn live(&self) -> impl Iterator<Item = (usize, &GaussStats<F>)> {
        self.clusters.iter().enumerate().filter(|(_, s)| s.n > 0)
    }

    pub(crate) fn stats_of(&self, cluster: usize) -> &GaussStats<F> {
        &self.clusters[cluster]
    }

    /// Posterior predictive log density of `y` under one cluster's posterior.
    fn cluster_log_predictive(&self, stats: &GaussStats<F>, y: F) -> F {
        let post = nix_posterior_from_stats(&self.prior, stats);
        nix_posterior_predictive_logpdf(&post, y)
    }

    pub(crate) fn prior_log_predictive(&self, y: F) -> F {
        nix_posterior_predictive_logpdf(&self.prior, y)
    }

    /// Unnormalized assignment log weights for `y`: one entry per live
    /// cluster plus the new-cluster entry (id [`NEW_CLUSTER`]).
    pub(crate) fn assignment_log_weights(&self, y: F, ids: &mut Vec<usize>, log_w: &mut Vec<F>) {
        ids.clear();
        log_w.clear();
        for (id, stats) in self.live() {
            ids.push(id);
            log_w.push(F::of_usize(stats.n).ln() + self.cluster_log_predictive(stats, y));
        }
        ids.push(NEW_CLUSTER);
        log_w.push(self.alpha.ln() + self.prior_log_predictive(y));
    }

    /// Collapsed predictive `p(y | everything assigned here)`: the
    /// assignment mixture marginalized, normalized by `total + alpha`.
    /// With `exclude` set, that cluster's stats are first reduced by `y`
    /// (used when `y` itself is currently assigned there).
    pub(crate) fn log_predictive_scratch(
        &self,
        y: F,
        exclude: Option<usize>,
        scratch: &mut Vec<F>,
    ) -> F {
        let mut total = self.total;
        scratch.clear();
        for (id, stats) in self.live() {
            let mut stats = *stats;
            if exclude == Some(id) {
                stats.remove(y);
                total -= 1;
                if stats.n == 0 {
                    continue;
                }
            }
            scratch.push(F::of_usize(stats.n).ln() + self.cluster_log_predictive(&stats, y));
        }
        scratch.push(self.alpha.ln() + self.prior_log_predictive(y));
        logsumexp(scratch) - (F::of_usize(total) + self.alpha).ln()
    }

    /// Adds `y` to an existing cluster, or to a fresh slot for
    /// [`NEW_CLUSTER`]. Returns the slot used.
    pub(crate) fn insert(&mut self, y: F, cluster: usize) -> usize {
        self.total += 1;
        if cluster != NEW_CLUSTER {
            debug_assert!(self.clusters[cluster].n > 0, "inserting into dead slot");
            self.clusters[cluster].add(y);
            return cluster;
        }
        let slot = match self.free.pop() {
            Some(s) => s,
            None => {
                self.clusters.push(GaussStats::empty());
                self.clusters.len() - 1
            }
        };
        self.clusters[slot].add(y);
        slot
    }

    pub(crate) fn remove(&mut self, y: F, cluster: usize) {
        debug_assert!(self.total > 0);
        self.total -= 1;
        self.clusters[cluster].remove(y);
        if self.clusters[cluster].n == 0 {
            self.free.push(cluster);
        }
    }

    /// CRP partition prior plus per-cluster marginal likelihoods; the
    /// emission part of every joint-posterior score in this crate.
    pub(crate) fn joint_log_score(&self) -> F {
        if self.total == 0 {
            return F::zero();
        }
        let n = F::of_usize(self.total);
        let mut score = F::of_usize(self.num_live()) * self.alpha.ln() + self.alpha.ln_gamma()
            - (self.alpha + n).ln_gamma();
        for (_, stats) in self.live() {
            score += F::of_usize(stats.n).ln_gamma();
            score += nix_marginal_loglik(&self.prior, stats);
        }
        score
    }

    /// Folds cluster `dead` into `keep`.
    pub(crate) fn merge_slots(&mut self, keep: usize, dead: usize) {
        debug_assert!(keep != dead);
        let absorbed = self.clusters[dead];
        let target = &mut self.clusters[keep];
        target.n += absorbed.n;
        target.sum += absorbed.sum;
        target.sum_sq += absorbed.sum_sq;
        self.clusters[dead] = GaussStats::empty();
        self.free.push(dead);
    }

    /// Takes over every live cluster of `other`; returns a map from
    /// `other`'s slot ids to slots in `self`.
    pub(crate) fn absorb(&mut self, other: &CollapsedMixture<F>) -> Vec<usize> {
        let mut map = vec![usize::MAX; other.clusters.len()];
        for (id, stats) in other.live() {
            let slot = match self.free.pop() {
                Some(s) => s,
                None => {
                    self.clusters.push(GaussStats::empty());
                    self.clusters.len() - 1
                }
            };
            self.clusters[slot] = *stats;
            map[id] = slot;
        }
        self.total += other.total;
        map
    }

    /// Live slots renumbered densely; returns old-slot → dense-id map.
    pub(crate) fn compact(&mut self) -> Vec<usize> {
        let mut map = vec![usize::MAX; self.clusters.len()];
        let mut dense = Vec::with_capacity(self.num_live());
        for (id, stats) in self.clusters.iter().enumerate() {
            if stats.n > 0 {
                map[id] = dense.len();
                dense.push(*stats);
            }
        }
        self.clusters = dense;
        self.free.clear();
        map
    }

    /// Posterior-mean Gaussian for one cluster.
    pub(crate) fn cluster_params(&self, stats: &GaussStats<F>) -> GaussParams<F> {
        let post = nix_posterior_from_stats(&self.prior, stats);
        let two = F::of(2.0);
        let sigma_sq = if post.nu0 > two {
            post.nu0 * post.sigma0_sq / (post.nu0 - two)
        } else {
            post.sigma0_sq
        };
        GaussParams { mu: post.mu0, sigma_sq: sigma_sq.max(F::of(VAR_FLOOR)) }
    }

    /// Finite mixture summary of the current partition (weights `n_c / n`).
    pub(crate) fn to_model(&self) -> DpmmModel<F> {
        if self.total == 0 {
            let params = self.cluster_params(&GaussStats::empty());
            return DpmmModel::new(vec![(F::one(), params)], self.alpha).expect("valid fallback");
        }
        let n = F::of_usize(self.total);
        let components = self
            .live()
            .map(|(_, stats)| (F::of_usize(stats.n) / n, self.cluster_params(stats)))
            .collect();
        DpmmModel::new(components, self.alpha).expect("weights from counts")
    }
}

/// State of the collapsed Gibbs chain over one data set.
#[derive(Debug, Clone)]
pub struct DpmmState<F> {
    assignments: Vec<usize>,
    mixture: CollapsedMixture<F>,
}

impl<F: Scalar> DpmmState<F> {
    /// Starts the chain with every observation in its own cluster.
    /// Collapsed Gibbs merges singletons freely but opens new clusters
    /// only one rare birth at a time, so the split start is the one that
    /// mixes.
    pub fn init(data: &[F], alpha_dp: F, prior: NixParams<F>) -> Result<Self, DpmmError> {
        if data.is_empty() {
            return Err(DpmmError::EmptyData);
        }
        let mut mixture = CollapsedMixture::new(alpha_dp, prior);
        let assignments = data.iter().map(|&y| mixture.insert(y, NEW_CLUSTER)).collect();
        Ok(Self { assignments, mixture })
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn num_clusters(&self) -> usize {
        self.mixture.num_live()
    }

    pub fn alpha_dp(&self) -> F {
        self.mixture.alpha
    }

    pub fn prior(&self) -> &NixParams<F> {
        &self.mixture.prior
    }

    /// Per-cluster sufficient statistics, ordered by cluster id.
    pub fn cluster_stats(&self) -> Vec<GaussStats<F>> {
        self.mixture.live().map(|(_, s)| *s).collect()
    }

    /// One full Gibbs sweep: every assignment resampled in turn from the
    /// collapsed conditional; emptied clusters are dropped and ids kept
    /// dense across sweeps.
    pub fn sweep<R: Rng + ?Sized>(&mut self, data: &[F], rng: &mut R) {
        assert_eq!(self.assignments.len(), data.len(), "state built for other data");
        let mut ids = Vec::new();
        let mut log_w = Vec::new();
        for (i, &y) in data.iter().enumerate() {
            self.mixture.remove(y, self.assignments[i]);
            self.mixture.assignment_log_weights(y, &mut ids, &mut log_w);
            let pick = sample_categorical_log(&log_w, rng);
            self.assignments[i] = self.mixture.insert(y, ids[pick]);
        }
        let map = self.mixture.compact();
        for a in self.assignments.iter_mut() {
            *a = map[*a];
            debug_assert!(*a != usize::MAX);
        }
        debug_assert!(self.check_consistency(data).is_ok());
    }

    /// Verifies the running statistics against a recomputation from the
    /// assignments.
    pub fn check_consistency(&self, data: &[F]) -> Result<(), DpmmError> {
        let k = self.num_clusters();
        let mut rebuilt = vec![GaussStats::<F>::empty(); k];
        for (&a, &y) in self.assignments.iter().zip(data) {
            if a >= k {
                return Err(DpmmError::Inconsistent(format!("assignment {a} out of range {k}")));
            }
            rebuilt[a].add(y);
        }
        let scale = F::one() + data.iter().map(|&y| y.abs()).fold(F::zero(), F::max);
        let tol = consistency_tol::<F>() * scale * F::of_usize(data.len().max(1));
        for (id, stats) in self.mixture.live() {
            if !rebuilt[id].approx_eq(stats, tol) {
                return Err(DpmmError::Inconsistent(format!(
                    "cluster {id}: running {:?} vs rebuilt {:?}",
                    stats, rebuilt[id]
                )));
            }
        }
        Ok(())
    }

    /// CRP prior + marginal likelihood of the current partition.
    pub fn joint_log_posterior(&self) -> F {
        self.mixture.joint_log_score()
    }

    /// Folds cluster pairs while doing so raises the joint posterior.
    /// Per-site Gibbs drains overlapping duplicate clusters only through a
    /// slow unbiased walk; the fold removes them outright and never fires
    /// when the partition genuinely wants both.
    pub fn fold_clusters_uphill(&mut self) {
        loop {
            let live: Vec<(usize, GaussStats<F>)> =
                self.mixture.live().map(|(id, s)| (id, *s)).collect();
            if live.len() < 2 {
                break;
            }
            let mut best: Option<(usize, usize, F)> = None;
            for a in 0..live.len() {
                for b in (a + 1)..live.len() {
                    let (ia, sa) = live[a];
                    let (ib, sb) = live[b];
                    let mut union = sa;
                    union.n += sb.n;
                    union.sum += sb.sum;
                    union.sum_sq += sb.sum_sq;
                    let delta = nix_marginal_loglik(&self.mixture.prior, &union)
                        - nix_marginal_loglik(&self.mixture.prior, &sa)
                        - nix_marginal_loglik(&self.mixture.prior, &sb)
                        + F::of_usize(union.n).ln_gamma()
                        - F::of_usize(sa.n).ln_gamma()
                        - F::of_usize(sb.n).ln_gamma()
                        - self.mixture.alpha.ln();
                    if delta > F::zero() && best.map_or(true, |(_, _, d)| delta > d) {
                        best = Some((ia, ib, delta));
                    }
                }
            }
            let Some((keep, dead, _)) = best else { break };
            self.mixture.merge_slots(keep, dead);
            for a in self.assignments.iter_mut() {
                if *a == dead {
                    *a = keep;
                }
            }
        }
        let map = self.mixture.compact();
        for a in self.assignments.iter_mut() {
            *a = map[*a];
        }
    }

    pub(crate) fn mixture(&self) -> &CollapsedMixture<F> {
        &self.mixture
    }
}

/// One mixture component: a weight and its Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent<F> {
    pub weight: F,
    pub params: GaussParams<F>,
}

/// Finite summary of a fitted DP mixture, components sorted by descending
/// weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpmmModel<F> {
    components: Vec<MixtureComponent<F>>,
    pub alpha_dp: F,
}

impl<F: Scalar> DpmmModel<F> {
    pub fn new(components: Vec<(F, GaussParams<F>)>, alpha_dp: F) -> Result<Self, DpmmError> {
        if components.is_empty() {
            return Err(DpmmError::EmptyData);
        }
        let total: F = components.iter().map(|(w, _)| *w).sum();
        if (total - F::one()).abs() > consistency_tol::<F>() || components.iter().any(|(w, _)| *w <= F::zero()) {
            return Err(DpmmError::Inconsistent(format!("weights sum to {total}")));
        }
        let mut components: Vec<MixtureComponent<F>> = components
            .into_iter()
            .map(|(weight, params)| MixtureComponent { weight, params })
            .collect();
        components.sort_by(|a, b| b.weight.partial_cmp(&a.weight).expect("finite weights"));
        Ok(Self { components, alpha_dp })
    }

    pub fn components(&self) -> &[MixtureComponent<F>] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Stable mixture log density `log Σ_k w_k N(y; mu_k, sigma_sq_k)`.
    pub fn logpdf(&self, y: F) -> F {
        let terms: Vec<F> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.params.logpdf(y))
            .collect();
        logsumexp(&terms)
    }

    /// Mixture mean.
    pub fn mean(&self) -> F {
        self.components.iter().map(|c| c.weight * c.params.mu).sum()
    }

    /// Mixture variance (between-component spread included).
    pub fn variance(&self) -> F {
        let mean = self.mean();
        let second: F = self
            .components
            .iter()
            .map(|c| c.weight * (c.params.sigma_sq + c.params.mu * c.params.mu))
            .sum();
        (second - mean * mean).max(F::of(VAR_FLOOR))
    }

    /// Index of the component most likely to have produced `y`.
    pub fn map_component(&self, y: F) -> usize {
        let mut best = 0;
        let mut best_score = F::neg_infinity();
        for (i, c) in self.components.iter().enumerate() {
            let score = c.weight.ln() + c.params.logpdf(y);
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        best
    }
}

/// Runs the collapsed sampler and summarizes the highest-posterior
/// assignment snapshot seen after burn-in.
pub fn dpmm_fit<F: Scalar, R: Rng + ?Sized>(
    data: &[F],
    alpha_dp: F,
    prior: NixParams<F>,
    sweeps: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<DpmmModel<F>, DpmmError> {
    if sweeps <= burn_in {
        return Err(DpmmError::InvalidRun { sweeps, burn_in });
    }
    let mut state = DpmmState::init(data, alpha_dp, prior)?;
    let mut best_score = F::neg_infinity();
    let mut best: Option<DpmmState<F>> = None;
    for sweep in 0..sweeps {
        state.sweep(data, rng);
        if sweep >= burn_in {
            let score = state.joint_log_posterior();
            if score > best_score {
                best_score = score;
                best = Some(state.clone());
            }
        }
    }
    let best = best.expect("sweeps > burn_in leaves at least one snapshot");
    Ok(best.mixture().to_model())
}
