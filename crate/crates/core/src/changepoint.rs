//! Changepoint extraction from state sequences, label-based scoring, and
//! cross-series change-frequency aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::median;
use crate::scalar::Scalar;
use crate::series::RegularSeries;

#[derive(Debug, Error, PartialEq)]
pub enum ChangepointError {
    #[error("states length {states} != series length {series}")]
    LengthMismatch { states: usize, series: usize },
    #[error("empty window: start {start} >= stop {stop}")]
    EmptyWindow { start: i64, stop: i64 },
    #[error("bucket width must be positive, got {0}")]
    InvalidBucket(i64),
    #[error("truth file error at line {line}: {msg}")]
    Truth { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Times (first tick of each new segment) a series changed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointSet {
    pub series_id: String,
    pub change_times: Vec<i64>,
}

impl ChangePointSet {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.series_id = id.into();
        self
    }
}

/// Changepoints of a state sequence: every index `t >= 1` where the label
/// differs from the previous step, mapped onto the series' tick grid.
pub fn extract_changepoints<F: Scalar>(
    states: &[usize],
    series: &RegularSeries<F>,
) -> Result<ChangePointSet, ChangepointError> {
    if states.len() != series.len() {
        return Err(ChangepointError::LengthMismatch { states: states.len(), series: series.len() });
    }
    let change_times = (1..states.len())
        .filter(|&t| states[t] != states[t - 1])
        .map(|t| series.time_of(t))
        .collect();
    Ok(ChangePointSet { series_id: String::new(), change_times })
}

/// One labelled true change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledChange<F> {
    pub time: i64,
    pub magnitude: F,
}

/// Ground-truth changes of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSet<F> {
    pub series_id: String,
    pub changes: Vec<LabeledChange<F>>,
}

impl<F: Scalar> TruthSet<F> {
    pub fn new(series_id: impl Into<String>, mut changes: Vec<LabeledChange<F>>) -> Self {
        changes.sort_by_key(|c| c.time);
        Self { series_id: series_id.into(), changes }
    }
}

/// Builds a truth set from a labelled state sequence, weighting each change
/// by the absolute difference of the segment medians on either side.
pub fn truth_from_states<F: Scalar>(
    series_id: impl Into<String>,
    states: &[usize],
    series: &RegularSeries<F>,
) -> Result<TruthSet<F>, ChangepointError> {
    if states.len() != series.len() {
        return Err(ChangepointError::LengthMismatch { states: states.len(), series: series.len() });
    }
    let mut boundaries: Vec<usize> = vec![0];
    boundaries.extend((1..states.len()).filter(|&t| states[t] != states[t - 1]));
    boundaries.push(states.len());
    let mut changes = Vec::new();
    for w in boundaries.windows(3) {
        let (prev_start, t, next_end) = (w[0], w[1], w[2]);
        let left: Vec<F> = (prev_start..t).filter_map(|i| series.value(i)).collect();
        let right: Vec<F> = (t..next_end).filter_map(|i| series.value(i)).collect();
        let magnitude = if left.is_empty() || right.is_empty() {
            F::zero()
        } else {
            (median(&left) - median(&right)).abs()
        };
        changes.push(LabeledChange { time: series.time_of(t), magnitude });
    }
    Ok(TruthSet::new(series_id, changes))
}

/// Reads a `time,magnitude` CSV.
pub fn read_truth_csv<F: Scalar>(path: &Path) -> Result<TruthSet<F>, ChangepointError> {
    let text = std::fs::read_to_string(path).map_err(|e| ChangepointError::Io(e.to_string()))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ChangepointError::Truth { line: 1, msg: "empty file".into() })?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields != ["time", "magnitude"] {
        return Err(ChangepointError::Truth {
            line: 1,
            msg: format!("expected header 'time,magnitude', got '{header}'"),
        });
    }
    let mut changes = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (t, m) = line.split_once(',').ok_or_else(|| ChangepointError::Truth {
            line: idx + 1,
            msg: "missing magnitude column".into(),
        })?;
        let time: i64 = t.trim().parse().map_err(|_| ChangepointError::Truth {
            line: idx + 1,
            msg: format!("bad time '{t}'"),
        })?;
        let magnitude: f64 = m.trim().parse().map_err(|_| ChangepointError::Truth {
            line: idx + 1,
            msg: format!("bad magnitude '{m}'"),
        })?;
        changes.push(LabeledChange { time, magnitude: F::of(magnitude) });
    }
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    Ok(TruthSet::new(id, changes))
}

/// Writes a `time,magnitude` CSV.
pub fn write_truth_csv<F: Scalar>(truth: &TruthSet<F>, path: &Path) -> Result<(), ChangepointError> {
    use std::io::Write as _;
    let mut out = std::fs::File::create(path).map_err(|e| ChangepointError::Io(e.to_string()))?;
    let write = |out: &mut std::fs::File, s: String| {
        out.write_all(s.as_bytes()).map_err(|e| ChangepointError::Io(e.to_string()))
    };
    write(&mut out, "time,magnitude\n".to_string())?;
    for c in &truth.changes {
        write(&mut out, format!("{},{}\n", c.time, c.magnitude.into_f64()))?;
    }
    Ok(())
}

/// Detection counts and rates for one or many series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpdMetrics<F> {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub precision: F,
    pub recall: F,
    pub weighted_recall: F,
}

struct MatchTally<F> {
    tp: usize,
    fp: usize,
    fn_: usize,
    matched_magnitude: F,
    total_magnitude: F,
}

fn match_one<F: Scalar>(
    predicted: &ChangePointSet,
    truth: &TruthSet<F>,
    tolerance: i64,
) -> MatchTally<F> {
    assert!(tolerance >= 0, "tolerance must be non-negative");
    let mut preds = predicted.change_times.clone();
    preds.sort_unstable();
    let mut truths = truth.changes.clone();
    truths.sort_by_key(|c| c.time);
    let mut used = vec![false; truths.len()];
    let mut tp = 0;
    let mut matched_magnitude = F::zero();
    for &p in &preds {
        // Earliest unmatched true change within the window.
        let hit = truths
            .iter()
            .enumerate()
            .find(|(i, c)| !used[*i] && (c.time - p).abs() <= tolerance);
        if let Some((i, c)) = hit {
            used[i] = true;
            tp += 1;
            matched_magnitude += c.magnitude;
        }
    }
    let total_magnitude = truths.iter().map(|c| c.magnitude).sum();
    MatchTally {
        tp,
        fp: preds.len() - tp,
        fn_: truths.len() - tp,
        matched_magnitude,
        total_magnitude,
    }
}

fn metrics_from_tally<F: Scalar>(t: MatchTally<F>) -> CpdMetrics<F> {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            F::one()
        } else {
            F::of_usize(num) / F::of_usize(den)
        }
    };
    let weighted_recall = if t.total_magnitude > F::zero() {
        t.matched_magnitude / t.total_magnitude
    } else {
        F::one()
    };
    CpdMetrics {
        true_positive: t.tp,
        false_positive: t.fp,
        false_negative: t.fn_,
        precision: ratio(t.tp, t.tp + t.fp),
        recall: ratio(t.tp, t.tp + t.fn_),
        weighted_recall,
    }
}

/// Greedy one-to-one matching in time order: each predicted change takes
/// the earliest unmatched true change within `±tolerance` seconds.
/// Conventions: empty predictions score precision 1 (no false alarms);
/// empty truth scores recall 1.
pub fn score<F: Scalar>(
    predicted: &ChangePointSet,
    truth: &TruthSet<F>,
    tolerance: i64,
) -> CpdMetrics<F> {
    metrics_from_tally(match_one(predicted, truth, tolerance))
}

/// Aggregate metrics over matched (prediction, truth) pairs: counts and
/// magnitudes pooled before the rates are formed.
pub fn score_many<F: Scalar>(
    pairs: &[(&ChangePointSet, &TruthSet<F>)],
    tolerance: i64,
) -> CpdMetrics<F> {
    let mut total = MatchTally {
        tp: 0,
        fp: 0,
        fn_: 0,
        matched_magnitude: F::zero(),
        total_magnitude: F::zero(),
    };
    for (pred, truth) in pairs {
        let t = match_one(pred, truth, tolerance);
        total.tp += t.tp;
        total.fp += t.fp;
        total.fn_ += t.fn_;
        total.matched_magnitude += t.matched_magnitude;
        total.total_magnitude += t.total_magnitude;
    }
    metrics_from_tally(total)
}

/// Changepoint counts per fixed-width bucket across many series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeFrequency {
    pub bucket_start: i64,
    pub bucket_width: i64,
    pub counts: Vec<u64>,
}

impl ChangeFrequency {
    /// Time of the left edge of bucket `i`.
    pub fn bucket_time(&self, i: usize) -> i64 {
        self.bucket_start + i as i64 * self.bucket_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the fullest bucket (first one on ties).
    pub fn peak_bucket(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

/// Default aggregation bucket: six minutes, wide enough to cover the
/// measurement jitter around the four-minute tick.
pub const DEFAULT_BUCKET_WIDTH: i64 = 360;

/// Counts changepoints across all sets in `[window_start + i·w,
/// window_start + (i+1)·w)`; changes outside the window are ignored.
pub fn change_frequency(
    sets: &[ChangePointSet],
    window_start: i64,
    window_stop: i64,
    bucket_width: i64,
) -> Result<ChangeFrequency, ChangepointError> {
    if window_start >= window_stop {
        return Err(ChangepointError::EmptyWindow { start: window_start, stop: window_stop });
    }
    if bucket_width <= 0 {
        return Err(ChangepointError::InvalidBucket(bucket_width));
    }
    let n_buckets = ((window_stop - window_start) as u64).div_ceil(bucket_width as u64) as usize;
    let mut counts = vec![0u64; n_buckets];
    for set in sets {
        for &t in &set.change_times {
            if t < window_start || t >= window_stop {
                continue;
            }
            counts[((t - window_start) / bucket_width) as usize] += 1;
        }
    }
    Ok(ChangeFrequency { bucket_start: window_start, bucket_width, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(len: usize) -> RegularSeries<f64> {
        RegularSeries::new(0, 240, vec![Some(1.0); len]).unwrap()
    }

    fn preds(times: &[i64]) -> ChangePointSet {
        ChangePointSet { series_id: "s".into(), change_times: times.to_vec() }
    }

    fn truth(changes: &[(i64, f64)]) -> TruthSet<f64> {
        TruthSet::new(
            "s",
            changes.iter().map(|&(time, magnitude)| LabeledChange { time, magnitude }).collect(),
        )
    }

    #[test]
    fn extract_finds_state_changes() {
        let s = grid(5);
        let cps = extract_changepoints(&[0, 0, 1, 1, 0], &s).unwrap();
        assert_eq!(cps.change_times, vec![480, 960]);
    }

    #[test]
    fn extract_constant_and_alternating() {
        assert!(extract_changepoints(&[2, 2, 2, 2], &grid(4)).unwrap().change_times.is_empty());
        assert_eq!(
            extract_changepoints(&[0, 1, 0, 1], &grid(4)).unwrap().change_times.len(),
            3
        );
        assert!(matches!(
            extract_changepoints(&[0, 0], &grid(3)),
            Err(ChangepointError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn extract_is_invariant_under_relabelling() {
        let s = grid(6);
        let a = extract_changepoints(&[0, 0, 1, 2, 2, 0], &s).unwrap();
        let b = extract_changepoints(&[5, 5, 9, 0, 0, 5], &s).unwrap();
        assert_eq!(a.change_times, b.change_times);
    }

    #[test]
    fn score_exact_hit() {
        let m = score(&preds(&[100]), &truth(&[(100, 5.0)]), 0);
        assert_eq!((m.true_positive, m.false_positive, m.false_negative), (1, 0, 0));
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.weighted_recall, 1.0);
    }

    #[test]
    fn score_hand_worked_matching() {
        let m = score(&preds(&[100, 500]), &truth(&[(110, 2.0), (900, 8.0)]), 60);
        assert_eq!((m.true_positive, m.false_positive, m.false_negative), (1, 1, 1));
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert!((m.weighted_recall - 0.2).abs() < 1e-12);
    }

    #[test]
    fn score_empty_prediction_convention() {
        let m = score(&preds(&[]), &truth(&[(100, 1.0)]), 60);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.weighted_recall, 0.0);
        let m = score::<f64>(&preds(&[]), &truth(&[]), 60);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.weighted_recall, 1.0);
    }

    #[test]
    fn score_is_shift_invariant() {
        let base = score(&preds(&[100, 500]), &truth(&[(110, 2.0), (900, 8.0)]), 60);
        for shift in [-100_000i64, 7, 99_999] {
            let p = preds(&[100 + shift, 500 + shift]);
            let t = truth(&[(110 + shift, 2.0), (900 + shift, 8.0)]);
            let m = score(&p, &t, 60);
            assert_eq!(
                (m.true_positive, m.false_positive, m.false_negative),
                (base.true_positive, base.false_positive, base.false_negative)
            );
        }
    }

    #[test]
    fn score_matching_is_one_to_one() {
        // Two predictions near one true change: only one may claim it.
        let m = score(&preds(&[100, 120]), &truth(&[(110, 3.0)]), 60);
        assert_eq!((m.true_positive, m.false_positive, m.false_negative), (1, 1, 0));
    }

    #[test]
    fn frequency_counts_buckets() {
        let sets = vec![preds(&[0, 700]), preds(&[100])];
        let f = change_frequency(&sets, 0, 1080, 360).unwrap();
        assert_eq!(f.counts, vec![2, 1, 0]);
        assert_eq!(f.total(), 3);
        assert_eq!(f.peak_bucket(), 0);
    }

    #[test]
    fn frequency_no_sets_is_all_zero() {
        let f = change_frequency(&[], 0, 720, 360).unwrap();
        assert_eq!(f.counts, vec![0, 0]);
    }

    #[test]
    fn frequency_conserves_in_window_changes() {
        let sets = vec![preds(&[-50, 0, 359, 360, 1079, 1080, 2000])];
        let f = change_frequency(&sets, 0, 1080, 360).unwrap();
        // -50, 1080 and 2000 fall outside [0, 1080).
        assert_eq!(f.total(), 4);
        assert_eq!(f.counts, vec![2, 1, 1]);
    }

    #[test]
    fn frequency_rejects_bad_windows() {
        assert!(matches!(
            change_frequency(&[], 10, 10, 360),
            Err(ChangepointError::EmptyWindow { .. })
        ));
        assert!(matches!(
            change_frequency(&[], 0, 100, 0),
            Err(ChangepointError::InvalidBucket(0))
        ));
    }

    #[test]
    fn truth_from_states_uses_segment_medians() {
        let series = RegularSeries::<f64>::new(
            0,
            240,
            vec![Some(10.0), Some(12.0), Some(20.0), Some(22.0), Some(24.0)],
        )
        .unwrap();
        let t = truth_from_states("s", &[0, 0, 1, 1, 1], &series).unwrap();
        assert_eq!(t.changes.len(), 1);
        assert_eq!(t.changes[0].time, 480);
        assert!((t.changes[0].magnitude - 11.0).abs() < 1e-12);
    }

    #[test]
    fn truth_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let t = truth(&[(480, 11.0), (960, 3.5)]);
        write_truth_csv(&t, &path).unwrap();
        let back: TruthSet<f64> = read_truth_csv(&path).unwrap();
        assert_eq!(back.changes, t.changes);
        assert_eq!(back.series_id, "labels");
    }
}
