//! Evaluation and simulation for finite HMMs with mixture emissions:
//! forward log-likelihood, most-likely state path, synthetic generation,
//! and the self-transition duration statistic.
//!
//! Everything runs in log space; a week of four-minute ticks underflows
//! plain products long before the end of the recursion.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpmm::DpmmModel;
use crate::prob::{consistency_tol, logsumexp, sample_categorical};
use crate::scalar::{sample_normal, Scalar};
use crate::series::{RegularSeries, SeriesError};

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("self-transition probability {0} outside [0, 1)")]
    Domain(f64),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Per-state summary derived from the model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct StateSummary<F> {
    /// Emission mixture mean (ms).
    pub mean_ms: F,
    /// Emission mixture standard deviation (ms).
    pub std_ms: F,
    /// Expected sojourn `1 / (1 - self_transition)`, in steps. Infinite for
    /// an absorbing state (a single-state model), carried as `null` in
    /// JSON.
    #[serde(with = "duration_serde")]
    pub expected_duration_steps: F,
}

/// JSON cannot hold IEEE infinities; an unbounded sojourn crosses the wire
/// as `null`.
mod duration_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<S: Serializer, F: Scalar>(value: &F, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            serializer.serialize_some(&value.into_f64())
        } else {
            serializer.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>, F: Scalar>(deserializer: D) -> Result<F, D::Error> {
        let raw = Option::<f64>::deserialize(deserializer)?;
        Ok(raw.map_or_else(F::infinity, F::of))
    }
}

/// A finite hidden Markov model with one mixture emission per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct HmmModel<F> {
    num_states: usize,
    /// Row-stochastic transition matrix, row-major.
    transition: Vec<F>,
    initial: Vec<F>,
    emissions: Vec<DpmmModel<F>>,
    /// Shared transition base weights (length `num_states + 1`, last entry
    /// the unused remainder mass).
    beta: Vec<F>,
    per_state: Vec<StateSummary<F>>,
}

impl<F: Scalar> HmmModel<F> {
    pub fn new(
        transition: Vec<Vec<F>>,
        initial: Vec<F>,
        emissions: Vec<DpmmModel<F>>,
    ) -> Result<Self, HmmError> {
        let k = emissions.len();
        let beta = vec![F::one() / F::of_usize(k + 1); k + 1];
        Self::with_beta(transition, initial, emissions, beta)
    }

    pub fn with_beta(
        transition: Vec<Vec<F>>,
        initial: Vec<F>,
        emissions: Vec<DpmmModel<F>>,
        beta: Vec<F>,
    ) -> Result<Self, HmmError> {
        let k = emissions.len();
        if k == 0 {
            return Err(HmmError::InvalidModel("no states".into()));
        }
        if transition.len() != k || initial.len() != k || beta.len() != k + 1 {
            return Err(HmmError::InvalidModel(format!(
                "shape mismatch: {} rows, {} initial, {} beta for K={k}",
                transition.len(),
                initial.len(),
                beta.len()
            )));
        }
        let tol = consistency_tol::<F>();
        let mut flat = Vec::with_capacity(k * k);
        for (i, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(HmmError::InvalidModel(format!("row {i} has {} entries", row.len())));
            }
            let total: F = row.iter().cloned().sum();
            if (total - F::one()).abs() > tol || row.iter().any(|&p| p < F::zero()) {
                return Err(HmmError::InvalidModel(format!("row {i} sums to {total}")));
            }
            flat.extend_from_slice(row);
        }
        let init_total: F = initial.iter().cloned().sum();
        if (init_total - F::one()).abs() > tol {
            return Err(HmmError::InvalidModel(format!("initial sums to {init_total}")));
        }
        let per_state = (0..k)
            .map(|i| {
                let p_self = flat[i * k + i];
                StateSummary {
                    mean_ms: emissions[i].mean(),
                    std_ms: emissions[i].variance().sqrt(),
                    expected_duration_steps: F::one() / (F::one() - p_self),
                }
            })
            .collect();
        Ok(Self { num_states: k, transition: flat, initial, emissions, beta, per_state })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn transition(&self, from: usize, to: usize) -> F {
        self.transition[from * self.num_states + to]
    }

    pub fn transition_row(&self, from: usize) -> &[F] {
        &self.transition[from * self.num_states..(from + 1) * self.num_states]
    }

    pub fn initial(&self) -> &[F] {
        &self.initial
    }

    pub fn emissions(&self) -> &[DpmmModel<F>] {
        &self.emissions
    }

    pub fn beta(&self) -> &[F] {
        &self.beta
    }

    pub fn per_state(&self) -> &[StateSummary<F>] {
        &self.per_state
    }
}

/// Expected sojourn time, in steps, of a state with self-transition
/// probability `p_self`.
pub fn expected_duration<F: Scalar>(p_self: F) -> Result<F, HmmError> {
    if p_self < F::zero() || p_self >= F::one() {
        return Err(HmmError::Domain(p_self.into_f64()));
    }
    Ok(F::one() / (F::one() - p_self))
}

/// Emission log density per state, with gaps contributing factor one.
fn emission_log<F: Scalar>(model: &HmmModel<F>, value: Option<F>, state: usize) -> F {
    match value {
        Some(y) => model.emissions()[state].logpdf(y),
        None => F::zero(),
    }
}

/// Exact `log p(y | model)` by the scaled forward recursion.
pub fn forward_log_likelihood<F: Scalar>(model: &HmmModel<F>, series: &RegularSeries<F>) -> F {
    let k = model.num_states();
    let mut cur: Vec<F> = (0..k)
        .map(|s| model.initial()[s].ln() + emission_log(model, series.value(0), s))
        .collect();
    let mut next = vec![F::zero(); k];
    let mut terms = vec![F::zero(); k];
    for t in 1..series.len() {
        let y = series.value(t);
        for s in 0..k {
            for (j, term) in terms.iter_mut().enumerate() {
                *term = cur[j] + model.transition(j, s).ln();
            }
            next[s] = logsumexp(&terms) + emission_log(model, y, s);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    logsumexp(&cur)
}

/// Most likely state path in log space; ties break toward the lower state
/// id. Returns the path and its joint log probability.
pub fn viterbi<F: Scalar>(model: &HmmModel<F>, series: &RegularSeries<F>) -> (Vec<usize>, F) {
    let k = model.num_states();
    let t_len = series.len();
    let mut score: Vec<F> = (0..k)
        .map(|s| model.initial()[s].ln() + emission_log(model, series.value(0), s))
        .collect();
    let mut backptr = vec![0usize; k * t_len];
    let mut next = vec![F::zero(); k];
    for t in 1..t_len {
        let y = series.value(t);
        for s in 0..k {
            let mut best_j = 0;
            let mut best = F::neg_infinity();
            for j in 0..k {
                let cand = score[j] + model.transition(j, s).ln();
                if cand > best {
                    best = cand;
                    best_j = j;
                }
            }
            backptr[t * k + s] = best_j;
            next[s] = best + emission_log(model, y, s);
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    let mut best = F::neg_infinity();
    for (s, &v) in score.iter().enumerate() {
        if v > best {
            best = v;
            last = s;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = backptr[t * k + path[t]];
    }
    (path, best)
}

/// Interval used for simulated series (the platform's four-minute tick).
pub const SIMULATED_INTERVAL: i64 = 240;

/// Draws states from the chain and observations from the per-state
/// mixtures. Returns the series (starting at epoch 0 on the default grid)
/// and the true state sequence.
pub fn simulate<F: Scalar, R: Rng + ?Sized>(
    model: &HmmModel<F>,
    t_len: usize,
    rng: &mut R,
) -> (RegularSeries<F>, Vec<usize>) {
    assert!(t_len >= 1, "cannot simulate an empty series");
    let mut states = Vec::with_capacity(t_len);
    let mut values = Vec::with_capacity(t_len);
    let mut state = sample_categorical(model.initial(), rng);
    for t in 0..t_len {
        if t > 0 {
            state = sample_categorical(model.transition_row(state), rng);
        }
        states.push(state);
        let mixture = &model.emissions()[state];
        let weights: Vec<F> = mixture.components().iter().map(|c| c.weight).collect();
        let comp = &mixture.components()[sample_categorical(&weights, rng)];
        let draw = sample_normal(comp.params.mu, comp.params.sigma_sq.sqrt(), rng);
        // Emissions model RTTs, which cannot go below zero.
        values.push(Some(draw.max(F::zero())));
    }
    let series = RegularSeries::new(0, SIMULATED_INTERVAL, values).expect("simulated values valid");
    (series, states)
}
