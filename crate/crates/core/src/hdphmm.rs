//! Direct-assignment Gibbs sampler for the sticky HDP-HMM with DP-mixture
//! emissions.
//!
//! State labels are resampled one step at a time with transition rows and
//! emission parameters marginalized out. The conditional for `z_t` is the
//! product of an incoming factor (how well the previous state explains a
//! jump here, with extra mass `kappa` on staying put), an outgoing factor
//! (how well this state explains the next one), and the state's collapsed
//! emission predictive. A brand-new state competes with weight
//! `alpha² · beta_rem · beta_{z_{t+1}} / (alpha + kappa)²`, so the number of
//! states grows or shrinks as the data demand.
//!
//! The shared base weights `(beta_1..beta_K, beta_rem)` are refreshed each
//! sweep through the usual auxiliary table counts, a Dirichlet of order
//! K+1. The reported segmentation is the highest joint-posterior snapshot
//! seen after burn-in.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpmm::{CollapsedMixture, DpmmModel, DpmmState, NEW_CLUSTER};
use crate::hmm::{forward_log_likelihood, HmmModel};
use crate::prob::{sample_categorical_log, NixParams};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;
use crate::series::RegularSeries;

#[derive(Debug, Error, PartialEq)]
pub enum HdpHmmError {
    #[error("series has no present values")]
    AllMissing,
    #[error("need at least 2 present values, got {present}")]
    TooShort { present: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Optional hyperparameter resampling: Gamma priors on the top-level
/// concentration and on `alpha + kappa`, a Beta prior on the sticky share
/// `kappa / (alpha + kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior<F> {
    pub gamma_shape: F,
    pub gamma_rate: F,
    pub conc_shape: F,
    pub conc_rate: F,
    pub rho_a: F,
    pub rho_b: F,
}

impl<F: Scalar> Default for HyperPrior<F> {
    fn default() -> Self {
        Self {
            gamma_shape: F::one(),
            gamma_rate: F::one(),
            conc_shape: F::one(),
            conc_rate: F::one(),
            rho_a: F::of(10.0),
            rho_b: F::one(),
        }
    }
}

/// Sampler configuration. `emission_prior = None` derives a weakly
/// informative prior from the series itself (median location, squared-MAD
/// scale), which is what batch pipelines want.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdpHmmConfig<F> {
    pub alpha: F,
    pub gamma: F,
    pub kappa: F,
    pub emission_prior: Option<NixParams<F>>,
    pub emission_alpha: F,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub hyperprior: Option<HyperPrior<F>>,
    /// Independent chains per fit; the highest joint-posterior snapshot
    /// across them is reported. Single-site moves struggle to split or
    /// merge whole runs, so a handful of starts is what buys robustness.
    pub chains: usize,
}

impl<F: Scalar> Default for HdpHmmConfig<F> {
    fn default() -> Self {
        Self {
            alpha: F::one(),
            gamma: F::one(),
            kappa: F::of(10.0),
            emission_prior: None,
            emission_alpha: F::one(),
            sweeps: 500,
            burn_in: 200,
            seed: 0,
            hyperprior: None,
            chains: 3,
        }
    }
}

impl<F: Scalar> HdpHmmConfig<F> {
    fn validate(&self) -> Result<(), HdpHmmError> {
        if !(self.alpha > F::zero()) || !(self.gamma > F::zero()) || self.kappa < F::zero() {
            return Err(HdpHmmError::InvalidConfig(format!(
                "alpha={} gamma={} kappa={}",
                self.alpha, self.gamma, self.kappa
            )));
        }
        if !(self.emission_alpha > F::zero()) {
            return Err(HdpHmmError::InvalidConfig(format!(
                "emission_alpha={}",
                self.emission_alpha
            )));
        }
        if self.sweeps <= self.burn_in {
            return Err(HdpHmmError::InvalidConfig(format!(
                "sweeps={} must exceed burn_in={}",
                self.sweeps, self.burn_in
            )));
        }
        if self.chains == 0 {
            return Err(HdpHmmError::InvalidConfig("chains must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mutable state of one Gibbs chain.
#[derive(Debug, Clone)]
pub struct SamplerState<F> {
    /// State label per time step; gaps carry a label too.
    z: Vec<usize>,
    /// Emission cluster per present step (`usize::MAX` on gaps).
    cluster_of: Vec<usize>,
    /// `(beta_1..beta_K, beta_rem)`.
    beta: Vec<F>,
    /// K×K transition counts, row-major.
    trans: Vec<u64>,
    row_sums: Vec<u64>,
    occupancy: Vec<u64>,
    emissions: Vec<CollapsedMixture<F>>,
    num_states: usize,
}

const NO_CLUSTER: usize = usize::MAX;

/// Collapsed DPMM sweeps used to seed the chain from the value regimes.
const INIT_CLUSTER_SWEEPS: usize = 50;

impl<F: Scalar> SamplerState<F> {
    /// Everything starts in a single state holding one emission cluster;
    /// the new-state move grows K from there.
    pub fn init(series: &RegularSeries<F>, emission_alpha: F, prior: NixParams<F>) -> Self {
        let t_len = series.len();
        let mut emission = CollapsedMixture::new(emission_alpha, prior);
        let mut cluster_of = vec![NO_CLUSTER; t_len];
        let mut first = true;
        for (t, y) in series.present() {
            let target = if first { NEW_CLUSTER } else { 0 };
            cluster_of[t] = emission.insert(y, target);
            first = false;
        }
        let trans = vec![(t_len - 1) as u64];
        Self {
            z: vec![0; t_len],
            cluster_of,
            beta: vec![F::of(0.5), F::of(0.5)],
            row_sums: trans.clone(),
            trans,
            occupancy: vec![t_len as u64],
            emissions: vec![emission],
            num_states: 1,
        }
    }

    /// Seeds the chain from a value clustering: a short collapsed DPMM run
    /// over the present values, each step labelled by its value's cluster
    /// and gaps carrying the preceding label. Single-step Gibbs moves merge
    /// and polish far more readily than they split whole runs, so starting
    /// from the model's own view of the marginal value regimes matters;
    /// the sweeps then own all temporal structure.
    pub fn init_from_value_clusters<R: Rng + ?Sized>(
        series: &RegularSeries<F>,
        config: &HdpHmmConfig<F>,
        prior: NixParams<F>,
        rng: &mut R,
    ) -> Self {
        let values = series.present_values();
        let mut clustering = DpmmState::init(&values, config.emission_alpha, prior)
            .expect("fit checks for present values");
        for _ in 0..INIT_CLUSTER_SWEEPS {
            clustering.sweep(&values, rng);
        }
        // Transient or overlapping clusters in the final sweep would
        // freeze into states; fold them down to the partition the joint
        // actually wants.
        clustering.fold_clusters_uphill();
        let k = clustering.num_clusters();
        let t_len = series.len();

        // Labels per step: the value's cluster, gaps inheriting backwards
        // (leading gaps take the first label).
        let mut z = vec![usize::MAX; t_len];
        for ((t, _), &label) in series.present().zip(clustering.assignments()) {
            z[t] = label;
        }
        let first = *z.iter().find(|&&l| l != usize::MAX).expect("present value exists");
        let mut last = first;
        for label in z.iter_mut() {
            if *label == usize::MAX {
                *label = last;
            } else {
                last = *label;
            }
        }

        let mut state = Self {
            z,
            cluster_of: vec![NO_CLUSTER; t_len],
            beta: vec![F::one() / F::of_usize(k + 1); k + 1],
            trans: vec![0; k * k],
            row_sums: vec![0; k],
            occupancy: vec![0; k],
            emissions: (0..k)
                .map(|_| CollapsedMixture::new(config.emission_alpha, prior))
                .collect(),
            num_states: k,
        };
        for t in 0..t_len {
            state.occupancy[state.z[t]] += 1;
            if t + 1 < t_len {
                let (from, to) = (state.z[t], state.z[t + 1]);
                state.trans[from * k + to] += 1;
                state.row_sums[from] += 1;
            }
        }
        // Each state's emission starts as a single cluster; the inner
        // sweeps split them where the data want more components.
        for (t, y) in series.present() {
            let s = state.z[t];
            let target = if state.emissions[s].total() == 0 { NEW_CLUSTER } else { 0 };
            state.cluster_of[t] = state.emissions[s].insert(y, target);
        }
        state
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn beta(&self) -> &[F] {
        &self.beta
    }

    pub fn occupancy(&self) -> &[u64] {
        &self.occupancy
    }

    pub fn transition_count(&self, from: usize, to: usize) -> u64 {
        self.trans[from * self.num_states + to]
    }

    /// Number of segments (maximal runs of one state) in the current labels.
    pub fn num_segments(&self) -> usize {
        1 + self.z.windows(2).filter(|w| w[0] != w[1]).count()
    }

    fn trans_inc(&mut self, from: usize, to: usize) {
        self.trans[from * self.num_states + to] += 1;
        self.row_sums[from] += 1;
    }

    fn trans_dec(&mut self, from: usize, to: usize) {
        let c = &mut self.trans[from * self.num_states + to];
        debug_assert!(*c > 0, "decrementing empty transition count");
        *c -= 1;
        self.row_sums[from] -= 1;
    }

    /// Appends a fresh state, breaking the remainder stick with a
    /// Beta(1, gamma) fraction.
    fn create_state<R: Rng + ?Sized>(&mut self, gamma: F, emission_alpha: F, prior: NixParams<F>, rng: &mut R) -> usize {
        let old_k = self.num_states;
        let new_k = old_k + 1;
        let mut trans = vec![0u64; new_k * new_k];
        for i in 0..old_k {
            trans[i * new_k..i * new_k + old_k].copy_from_slice(&self.trans[i * old_k..(i + 1) * old_k]);
        }
        self.trans = trans;
        self.row_sums.push(0);
        self.occupancy.push(0);
        self.emissions.push(CollapsedMixture::new(emission_alpha, prior));
        let rem = self.beta[old_k];
        let frac = F::sample_beta(F::one(), gamma, rng);
        self.beta[old_k] = frac * rem;
        self.beta.push((F::one() - frac) * rem);
        self.num_states = new_k;
        old_k
    }

    /// Drops an empty state, moving the last label into its slot. The freed
    /// base weight returns to the remainder.
    fn remove_state(&mut self, dead: usize) {
        debug_assert_eq!(self.occupancy[dead], 0);
        debug_assert_eq!(self.row_sums[dead], 0);
        let old_k = self.num_states;
        let last = old_k - 1;
        let new_k = old_k - 1;
        let source = |i: usize| if i == dead { last } else { i };
        let mut trans = vec![0u64; new_k * new_k];
        for i in 0..new_k {
            for j in 0..new_k {
                trans[i * new_k + j] = self.trans[source(i) * old_k + source(j)];
            }
        }
        self.trans = trans;
        if dead != last {
            for label in self.z.iter_mut() {
                if *label == last {
                    *label = dead;
                }
            }
            self.row_sums.swap(dead, last);
            self.occupancy.swap(dead, last);
            self.emissions.swap(dead, last);
        }
        self.row_sums.pop();
        self.occupancy.pop();
        self.emissions.pop();
        self.beta[old_k] = self.beta[old_k] + self.beta[dead];
        self.beta[dead] = self.beta[last];
        self.beta.remove(last);
        self.num_states = new_k;
    }

    /// The state with `absorbed` relabelled into `keep`: labels rewritten,
    /// transition rows and columns folded together, base weights added,
    /// emission clusters pooled without reassignment.
    fn merged(&self, keep: usize, absorbed: usize) -> Self {
        debug_assert!(keep != absorbed);
        let old_k = self.num_states;
        let mut merged = self.clone();
        let remap = merged.emissions[keep].absorb(&self.emissions[absorbed]);
        for t in 0..merged.z.len() {
            if merged.z[t] == absorbed {
                merged.z[t] = keep;
                if merged.cluster_of[t] != NO_CLUSTER {
                    merged.cluster_of[t] = remap[merged.cluster_of[t]];
                }
            }
        }
        let fold = |i: usize| if i == absorbed { keep } else { i };
        let mut trans = vec![0u64; old_k * old_k];
        for i in 0..old_k {
            for j in 0..old_k {
                trans[fold(i) * old_k + fold(j)] += self.trans[i * old_k + j];
            }
        }
        merged.trans = trans;
        merged.row_sums[keep] += merged.row_sums[absorbed];
        merged.row_sums[absorbed] = 0;
        merged.occupancy[keep] += merged.occupancy[absorbed];
        merged.occupancy[absorbed] = 0;
        merged.beta[keep] = merged.beta[keep] + merged.beta[absorbed];
        merged.beta[absorbed] = F::zero();
        merged.emissions[absorbed] = CollapsedMixture::new(self.emissions[0].alpha, self.emissions[0].prior);
        merged.remove_state(absorbed);
        merged
    }

    /// Rebuilds every derived count from `z` and the series and compares;
    /// the sweep asserts this in debug builds.
    pub fn check_consistency(&self, series: &RegularSeries<F>) -> Result<(), HdpHmmError> {
        let k = self.num_states;
        let mut trans = vec![0u64; k * k];
        let mut occ = vec![0u64; k];
        for t in 0..self.z.len() {
            let s = self.z[t];
            if s >= k {
                return Err(HdpHmmError::InvalidConfig(format!("label {s} out of range {k}")));
            }
            occ[s] += 1;
            if t + 1 < self.z.len() {
                trans[s * k + self.z[t + 1]] += 1;
            }
        }
        if trans != self.trans {
            return Err(HdpHmmError::InvalidConfig("transition counts drifted".into()));
        }
        if occ != self.occupancy {
            return Err(HdpHmmError::InvalidConfig("occupancy drifted".into()));
        }
        if occ.iter().any(|&c| c == 0) {
            return Err(HdpHmmError::InvalidConfig("live state with zero occupancy".into()));
        }
        let beta_sum: F = self.beta.iter().cloned().sum();
        if (beta_sum - F::one()).abs() > crate::prob::consistency_tol::<F>() {
            return Err(HdpHmmError::InvalidConfig(format!("beta sums to {beta_sum}")));
        }
        let mut totals = vec![0usize; k];
        for (t, y) in series.present() {
            let c = self.cluster_of[t];
            let stats = self.emissions[self.z[t]].stats_of(c);
            if stats.n == 0 {
                return Err(HdpHmmError::InvalidConfig("observation points at dead cluster".into()));
            }
            let _ = y;
            totals[self.z[t]] += 1;
        }
        for (s, &n) in totals.iter().enumerate() {
            if self.emissions[s].total() != n {
                return Err(HdpHmmError::InvalidConfig(format!(
                    "state {s} emission total {} vs {n}",
                    self.emissions[s].total()
                )));
            }
        }
        Ok(())
    }
}

/// Unnormalized log weights of the conditional for `z_t`: one entry per
/// live state plus the new-state entry last. Transition counts exclude the
/// two transitions touching `t`, and the emission predictive excludes
/// `y_t` itself.
pub fn state_log_weights<F: Scalar>(
    state: &SamplerState<F>,
    t: usize,
    series: &RegularSeries<F>,
    alpha: F,
    kappa: F,
) -> Vec<F> {
    let mut buf = Vec::new();
    let mut scratch = Vec::new();
    state_log_weights_into(state, t, series, alpha, kappa, &mut buf, &mut scratch);
    buf
}

fn state_log_weights_into<F: Scalar>(
    state: &SamplerState<F>,
    t: usize,
    series: &RegularSeries<F>,
    alpha: F,
    kappa: F,
    out: &mut Vec<F>,
    scratch: &mut Vec<F>,
) {
    let k_num = state.num_states;
    let cur = state.z[t];
    let prev = if t > 0 { Some(state.z[t - 1]) } else { None };
    let next = if t + 1 < state.z.len() { Some(state.z[t + 1]) } else { None };
    let y = series.value(t);
    let beta_rem = state.beta[k_num];
    let conc = alpha + kappa;

    // Counts with the transitions (t-1 -> t) and (t -> t+1) removed.
    let n_excl = |j: usize, l: usize| -> u64 {
        let mut c = state.trans[j * k_num + l];
        if prev == Some(j) && cur == l {
            c -= 1;
        }
        if j == cur && next == Some(l) {
            c -= 1;
        }
        c
    };
    let row_excl = |j: usize| -> u64 {
        let mut c = state.row_sums[j];
        if prev == Some(j) {
            c -= 1;
        }
        if j == cur && next.is_some() {
            c -= 1;
        }
        c
    };

    out.clear();
    // The incoming row normalizer (alpha + kappa + n_{z_{t-1},·}) is the
    // same for every candidate, the fresh state included, and drops out.
    for cand in 0..k_num {
        let incoming = match prev {
            Some(p) => {
                let sticky = if p == cand { kappa } else { F::zero() };
                alpha * state.beta[cand] + F::of(n_excl(p, cand) as f64) + sticky
            }
            None => state.beta[cand],
        };
        let outgoing = match next {
            Some(nx) => {
                // The sticky mass rides on the (cand -> next) cell itself,
                // and when z_{t-1} = cand the incoming transition has
                // already claimed one seat in that row: the exact
                // conditional of the row-wise Dirichlet-multinomial.
                let sticky = if cand == nx { kappa } else { F::zero() };
                let double = if prev == Some(cand) && cand == nx { F::one() } else { F::zero() };
                let extra = if prev == Some(cand) { F::one() } else { F::zero() };
                (alpha * state.beta[nx] + F::of(n_excl(cand, nx) as f64) + sticky + double)
                    / (conc + F::of(row_excl(cand) as f64) + extra)
            }
            None => F::one(),
        };
        let emission = match y {
            Some(yv) => {
                let exclude = if cand == cur { Some(state.cluster_of[t]) } else { None };
                state.emissions[cand].log_predictive_scratch(yv, exclude, scratch)
            }
            None => F::zero(),
        };
        out.push(incoming.ln() + outgoing.ln() + emission);
    }

    // Fresh state, every unused atom taken together: incoming mass
    // alpha·beta_rem, outgoing a bare prior row.
    let incoming_new = match prev {
        Some(_) => alpha * beta_rem,
        None => beta_rem,
    };
    let outgoing_new = match next {
        Some(nx) => alpha * state.beta[nx] / conc,
        None => F::one(),
    };
    let emission_new = match y {
        Some(yv) => state.emissions[0].prior_log_predictive(yv),
        None => F::zero(),
    };
    out.push(incoming_new.ln() + outgoing_new.ln() + emission_new);
}

/// Resamples `z_t` in place from its conditional; may create a state
/// (returned id) or retire the one it left empty.
pub fn sample_state_at<F: Scalar, R: Rng + ?Sized>(
    t: usize,
    state: &mut SamplerState<F>,
    series: &RegularSeries<F>,
    config: &HdpHmmConfig<F>,
    rng: &mut R,
) -> usize {
    let mut buf = Vec::new();
    let mut scratch = Vec::new();
    sample_state_at_buffered(t, state, series, config.alpha, config.kappa, config.gamma, rng, &mut buf, &mut scratch)
}

#[allow(clippy::too_many_arguments)]
fn sample_state_at_buffered<F: Scalar, R: Rng + ?Sized>(
    t: usize,
    state: &mut SamplerState<F>,
    series: &RegularSeries<F>,
    alpha: F,
    kappa: F,
    gamma: F,
    rng: &mut R,
    buf: &mut Vec<F>,
    scratch: &mut Vec<F>,
) -> usize {
    state_log_weights_into(state, t, series, alpha, kappa, buf, scratch);
    let pick = sample_categorical_log(buf, rng);
    let cur = state.z[t];
    if pick == cur {
        return cur;
    }
    let prev = if t > 0 { Some(state.z[t - 1]) } else { None };
    let next = if t + 1 < state.z.len() { Some(state.z[t + 1]) } else { None };
    let y = series.value(t);

    if let Some(p) = prev {
        state.trans_dec(p, cur);
    }
    if let Some(nx) = next {
        state.trans_dec(cur, nx);
    }
    state.occupancy[cur] -= 1;
    if let Some(yv) = y {
        state.emissions[cur].remove(yv, state.cluster_of[t]);
        state.cluster_of[t] = NO_CLUSTER;
    }

    let target = if pick == state.num_states {
        let (emission_alpha, prior) = {
            let m = &state.emissions[0];
            (m.alpha, m.prior)
        };
        state.create_state(gamma, emission_alpha, prior, rng)
    } else {
        pick
    };

    state.z[t] = target;
    state.occupancy[target] += 1;
    if let Some(p) = prev {
        state.trans_inc(p, target);
    }
    if let Some(nx) = next {
        state.trans_inc(target, nx);
    }
    if let Some(yv) = y {
        state.cluster_of[t] = {
            let mut ids = Vec::new();
            let mut log_w = Vec::new();
            state.emissions[target].assignment_log_weights(yv, &mut ids, &mut log_w);
            let c = sample_categorical_log(&log_w, rng);
            state.emissions[target].insert(yv, ids[c])
        };
    }
    if state.occupancy[cur] == 0 {
        state.remove_state(cur);
    }
    state.z[t]
}

/// Auxiliary table counts behind one beta refresh, kept around for the
/// optional hyperparameter moves.
struct TableCounts {
    /// Per-column totals after the sticky override, initial step included.
    adjusted_columns: Vec<u64>,
    /// Total tables over all rows, before the override.
    tables_total: u64,
    /// Total tables after the override, initial step included.
    adjusted_total: u64,
    /// Total override count.
    overrides_total: u64,
}

fn sample_tables<F: Scalar, R: Rng + ?Sized>(
    state: &SamplerState<F>,
    alpha: F,
    kappa: F,
    rng: &mut R,
) -> TableCounts {
    let k = state.num_states;
    let conc = alpha + kappa;
    let rho = (kappa / conc).into_f64();
    let mut columns = vec![0u64; k];
    let mut tables_total = 0u64;
    let mut overrides_total = 0u64;
    for j in 0..k {
        for l in 0..k {
            let n = state.trans[j * k + l];
            if n == 0 {
                continue;
            }
            let mass = (alpha * state.beta[l] + if j == l { kappa } else { F::zero() }).into_f64();
            let mut m = 0u64;
            for i in 0..n {
                let p = mass / (mass + i as f64);
                if f64::sample_uniform(rng) < p {
                    m += 1;
                }
            }
            tables_total += m;
            // Sticky override: self-transition tables may be explained by
            // the kappa mass instead of the shared base weights.
            if j == l && m > 0 && rho > 0.0 {
                let beta_l = state.beta[l].into_f64();
                let p_override = rho / (rho + beta_l * (1.0 - rho));
                let w = Binomial::new(m, p_override).expect("binomial params").sample(rng);
                overrides_total += w;
                m -= w;
            }
            columns[l] += m;
        }
    }
    // The first step is a draw straight from the base measure: one table.
    columns[state.z[0]] += 1;
    let adjusted_total = columns.iter().sum();
    TableCounts { adjusted_columns: columns, tables_total, adjusted_total, overrides_total }
}

/// Redraws `(beta_1..beta_K, beta_rem)` from the Dirichlet of order K+1
/// given fresh auxiliary table counts.
pub fn sample_beta<F: Scalar, R: Rng + ?Sized>(
    state: &SamplerState<F>,
    gamma: F,
    kappa: F,
    alpha: F,
    rng: &mut R,
) -> Vec<F> {
    if state.num_states == 0 {
        return vec![F::one()];
    }
    let tables = sample_tables(state, alpha, kappa, rng);
    draw_beta(&tables, gamma, rng)
}

fn draw_beta<F: Scalar, R: Rng + ?Sized>(tables: &TableCounts, gamma: F, rng: &mut R) -> Vec<F> {
    let mut conc: Vec<F> = tables
        .adjusted_columns
        .iter()
        .map(|&m| {
            debug_assert!(m > 0, "live state lost every table");
            F::of(m as f64)
        })
        .collect();
    conc.push(gamma);
    crate::prob::sample_dirichlet(&conc, rng).expect("K+1 >= 2 entries")
}

/// Joint log posterior of a labelled configuration: the initial draw from
/// the base weights, a Dirichlet-multinomial score per transition row
/// (sticky mass included), and each state's emission partition score.
/// Invariant under relabelling states together with their beta entries.
pub fn joint_log_posterior<F: Scalar>(state: &SamplerState<F>, alpha: F, kappa: F) -> F {
    let k = state.num_states;
    let conc = alpha + kappa;
    let mut score = state.beta[state.z[0]].ln();
    for j in 0..k {
        if state.row_sums[j] > 0 {
            score += conc.ln_gamma() - (conc + F::of(state.row_sums[j] as f64)).ln_gamma();
        }
        for l in 0..k {
            let n = state.trans[j * k + l];
            if n == 0 {
                continue;
            }
            let mass = alpha * state.beta[l] + if j == l { kappa } else { F::zero() };
            score += (mass + F::of(n as f64)).ln_gamma() - mass.ln_gamma();
        }
    }
    for emission in &state.emissions {
        score += emission.joint_log_score();
    }
    score
}

/// Per-sweep trace entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostic<F> {
    pub num_states: usize,
    pub joint_log_posterior: F,
}

/// A finished segmentation: the labelled series, the finite model realized
/// from the best snapshot, and the sweep trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct SegmentationResult<F> {
    pub series: RegularSeries<F>,
    pub states: Vec<usize>,
    pub model: HmmModel<F>,
    pub log_likelihood: F,
    pub sweep_diagnostics: Vec<SweepDiagnostic<F>>,
}

struct Snapshot<F> {
    state: SamplerState<F>,
    alpha: F,
    kappa: F,
    score: F,
}

/// Runs the sampler on one series.
///
/// Each sweep resamples every `z_t` in order, runs one collapsed sweep over
/// the per-state emission clusters, refreshes the base weights, and (when
/// enabled) the hyperparameters. After burn-in the highest joint-posterior
/// snapshot is kept and realized into a finite model: posterior-mean
/// transition rows, occupancy-frequency initial distribution, per-state
/// mixtures from the assigned values, states relabelled by descending
/// occupancy.
pub fn fit<F: Scalar>(
    series: &RegularSeries<F>,
    config: &HdpHmmConfig<F>,
) -> Result<SegmentationResult<F>, HdpHmmError> {
    config.validate()?;
    let present = series.present_values();
    if present.is_empty() {
        return Err(HdpHmmError::AllMissing);
    }
    if present.len() < 2 {
        return Err(HdpHmmError::TooShort { present: present.len() });
    }
    let prior = match config.emission_prior {
        Some(p) => p,
        None => NixParams::default_for(&present)
            .map_err(|e| HdpHmmError::InvalidConfig(e.to_string()))?,
    };
    let mut best: Option<(Snapshot<F>, Vec<SweepDiagnostic<F>>)> = None;
    for chain in 0..config.chains {
        let chain_seed = if config.chains == 1 {
            config.seed
        } else {
            crate::rng::derive_seed(config.seed, &["chain", &chain.to_string()])
        };
        let (snapshot, diagnostics) = run_chain(series, config, prior, chain_seed);
        if best.as_ref().map_or(true, |(b, _)| snapshot.score > b.score) {
            best = Some((snapshot, diagnostics));
        }
    }
    let (snapshot, diagnostics) = best.expect("at least one chain");
    Ok(finalize(snapshot, series, diagnostics))
}

fn run_chain<F: Scalar>(
    series: &RegularSeries<F>,
    config: &HdpHmmConfig<F>,
    prior: NixParams<F>,
    seed: u64,
) -> (Snapshot<F>, Vec<SweepDiagnostic<F>>) {
    let mut rng = rng_from_seed(seed);
    let mut state = SamplerState::init_from_value_clusters(series, config, prior, &mut rng);
    let mut alpha = config.alpha;
    let mut kappa = config.kappa;
    let mut gamma = config.gamma;
    state.beta = sample_beta(&state, gamma, kappa, alpha, &mut rng);

    let t_len = series.len();
    let mut buf = Vec::new();
    let mut scratch = Vec::new();
    let mut ids = Vec::new();
    let mut log_w = Vec::new();
    let mut best: Option<Snapshot<F>> = None;
    let mut diagnostics = Vec::with_capacity(config.sweeps);

    for sweep in 0..config.sweeps {
        for t in 0..t_len {
            sample_state_at_buffered(t, &mut state, series, alpha, kappa, gamma, &mut rng, &mut buf, &mut scratch);
        }
        // One collapsed sweep over the emission clusters of every state.
        for (t, y) in series.present() {
            let s = state.z[t];
            let mixture = &mut state.emissions[s];
            mixture.remove(y, state.cluster_of[t]);
            mixture.assignment_log_weights(y, &mut ids, &mut log_w);
            let c = sample_categorical_log(&log_w, &mut rng);
            state.cluster_of[t] = mixture.insert(y, ids[c]);
        }
        // Duplicate states over the same level drain through single-step
        // moves only by an unbiased boundary walk; fold state pairs
        // outright whenever doing so raises the joint posterior.
        while state.num_states > 1 {
            let current = joint_log_posterior(&state, alpha, kappa);
            let mut best_pair: Option<(usize, usize, F)> = None;
            for i in 0..state.num_states {
                for j in (i + 1)..state.num_states {
                    let delta = joint_log_posterior(&state.merged(i, j), alpha, kappa) - current;
                    if delta > F::zero() && best_pair.map_or(true, |(_, _, d)| delta > d) {
                        best_pair = Some((i, j, delta));
                    }
                }
            }
            match best_pair {
                Some((i, j, _)) => state = state.merged(i, j),
                None => break,
            }
        }
        let tables = sample_tables(&state, alpha, kappa, &mut rng);
        state.beta = draw_beta(&tables, gamma, &mut rng);
        if let Some(hp) = &config.hyperprior {
            let (a, k2, g) = resample_hyper(&state, &tables, hp, alpha, kappa, gamma, &mut rng);
            alpha = a;
            kappa = k2;
            gamma = g;
        }
        debug_assert!(state.check_consistency(series).is_ok());

        let score = joint_log_posterior(&state, alpha, kappa);
        diagnostics.push(SweepDiagnostic { num_states: state.num_states, joint_log_posterior: score });
        if sweep >= config.burn_in && best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Snapshot { state: state.clone(), alpha, kappa, score });
        }
    }

    (best.expect("sweeps > burn_in leaves a snapshot"), diagnostics)
}

fn resample_hyper<F: Scalar, R: Rng + ?Sized>(
    state: &SamplerState<F>,
    tables: &TableCounts,
    hp: &HyperPrior<F>,
    alpha: F,
    kappa: F,
    gamma: F,
    rng: &mut R,
) -> (F, F, F) {
    let conc = alpha + kappa;
    // alpha + kappa given per-row customer/table counts.
    let mut shape = hp.conc_shape + F::of(tables.tables_total as f64);
    let mut rate = hp.conc_rate;
    for j in 0..state.num_states {
        let n_j = state.row_sums[j];
        if n_j == 0 {
            continue;
        }
        let n_j = F::of(n_j as f64);
        let r = F::sample_beta(conc + F::one(), n_j, rng);
        rate -= r.ln();
        let p_s = n_j / (n_j + conc);
        if F::sample_uniform(rng) < p_s {
            shape -= F::one();
        }
    }
    let new_conc = F::sample_gamma(shape.max(F::of(1e-3)), F::one() / rate, rng);
    // Sticky share from override counts.
    let w = F::of(tables.overrides_total as f64);
    let m = F::of(tables.tables_total as f64);
    let rho = F::sample_beta(hp.rho_a + w, (hp.rho_b + m - w).max(F::of(1e-3)), rng);
    let new_kappa = rho * new_conc;
    let new_alpha = (F::one() - rho) * new_conc;
    // Top-level concentration given total adjusted tables and K dishes.
    let m_total = F::of(tables.adjusted_total as f64);
    let k = F::of_usize(state.num_states);
    let eta = F::sample_beta(gamma + F::one(), m_total, rng);
    let denom = hp.gamma_rate - eta.ln();
    let odds = (hp.gamma_shape + k - F::one()) / (m_total * denom);
    let shape_g = if F::sample_uniform(rng) < odds / (odds + F::one()) {
        hp.gamma_shape + k
    } else {
        hp.gamma_shape + k - F::one()
    };
    let new_gamma = F::sample_gamma(shape_g.max(F::of(1e-3)), F::one() / denom, rng);
    (new_alpha.max(F::of(1e-6)), new_kappa, new_gamma.max(F::of(1e-6)))
}

fn finalize<F: Scalar>(
    snapshot: Snapshot<F>,
    series: &RegularSeries<F>,
    diagnostics: Vec<SweepDiagnostic<F>>,
) -> SegmentationResult<F> {
    let mut state = snapshot.state;
    let alpha = snapshot.alpha;
    let kappa = snapshot.kappa;
    let k = state.num_states;

    // Relabel by descending occupancy (stable, so ties keep their order).
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(state.occupancy[i]));
    apply_permutation(&mut state, &order);

    let t_len = series.len();
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let mut row: Vec<F> = (0..k)
            .map(|j| {
                alpha * state.beta[j]
                    + F::of(state.trans[i * k + j] as f64)
                    + if i == j { kappa } else { F::zero() }
            })
            .collect();
        let total: F = row.iter().cloned().sum();
        for p in row.iter_mut() {
            *p = *p / total;
        }
        rows.push(row);
    }
    let initial: Vec<F> = state
        .occupancy
        .iter()
        .map(|&c| F::of(c as f64) / F::of_usize(t_len))
        .collect();
    let emissions: Vec<DpmmModel<F>> = state.emissions.iter().map(|m| m.to_model()).collect();
    let model = HmmModel::with_beta(rows, initial, emissions, state.beta.clone())
        .expect("finalized model is well-formed");
    let log_likelihood = forward_log_likelihood(&model, series);
    SegmentationResult {
        series: series.clone(),
        states: state.z,
        model,
        log_likelihood,
        sweep_diagnostics: diagnostics,
    }
}

/// Applies `order` (new id -> old id) to every labelled structure.
fn apply_permutation<F: Scalar>(state: &mut SamplerState<F>, order: &[usize]) {
    let k = state.num_states;
    debug_assert_eq!(order.len(), k);
    let mut inverse = vec![0usize; k];
    for (new_id, &old_id) in order.iter().enumerate() {
        inverse[old_id] = new_id;
    }
    for label in state.z.iter_mut() {
        *label = inverse[*label];
    }
    let mut trans = vec![0u64; k * k];
    for new_i in 0..k {
        for new_j in 0..k {
            trans[new_i * k + new_j] = state.trans[order[new_i] * k + order[new_j]];
        }
    }
    state.trans = trans;
    state.row_sums = order.iter().map(|&o| state.row_sums[o]).collect();
    state.occupancy = order.iter().map(|&o| state.occupancy[o]).collect();
    let mut emissions = Vec::with_capacity(k);
    let mut old_emissions: Vec<Option<CollapsedMixture<F>>> =
        state.emissions.drain(..).map(Some).collect();
    for &o in order {
        emissions.push(old_emissions[o].take().expect("permutation is a bijection"));
    }
    state.emissions = emissions;
    let rem = state.beta[k];
    let mut beta: Vec<F> = order.iter().map(|&o| state.beta[o]).collect();
    beta.push(rem);
    state.beta = beta;
}
