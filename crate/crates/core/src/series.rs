//! Measurement ingestion: raw ticks, regular missing-aware series, the
//! artifact's file formats, and a mockable measurement-platform client.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("empty window: start {start} >= stop {stop}")]
    EmptyWindow { start: i64, stop: i64 },
    #[error("interval must be positive, got {0}")]
    InvalidInterval(i64),
    #[error("invalid tick at t={timestamp}: value {value}")]
    InvalidTick { timestamp: i64, value: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("no measurement for msm_id={msm_id} prb_id={prb_id}")]
    NotFound { msm_id: u64, prb_id: u64 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("series too short: {present} present values")]
    TooShort { present: usize },
}

impl From<std::io::Error> for SeriesError {
    fn from(e: std::io::Error) -> Self {
        SeriesError::Transport(e.to_string())
    }
}

/// One measurement slot as delivered by the platform: a timestamp and up to
/// a handful of raw round-trip times (empty when every probe failed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTick {
    pub timestamp: i64,
    pub rtt_values: Vec<f64>,
}

impl RawTick {
    pub fn new(timestamp: i64, rtt_values: Vec<f64>) -> Self {
        Self { timestamp, rtt_values }
    }
}

/// Evenly spaced RTT observations with explicit gaps.
///
/// Slot `s` covers `[start + s·interval, start + (s+1)·interval)`; a `None`
/// value is a slot no measurement fell into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularSeries<F> {
    start_time: i64,
    interval: i64,
    values: Vec<Option<F>>,
}

impl<F: Scalar> RegularSeries<F> {
    pub fn new(start_time: i64, interval: i64, values: Vec<Option<F>>) -> Result<Self, SeriesError> {
        if interval <= 0 {
            return Err(SeriesError::InvalidInterval(interval));
        }
        if values.is_empty() {
            return Err(SeriesError::EmptyWindow { start: start_time, stop: start_time });
        }
        for (i, v) in values.iter().enumerate() {
            if let Some(x) = v {
                if !x.is_finite() || *x < F::zero() {
                    return Err(SeriesError::InvalidTick {
                        timestamp: start_time + i as i64 * interval,
                        value: x.into_f64(),
                    });
                }
            }
        }
        Ok(Self { start_time, interval, values })
    }

    pub fn start_time(&self) -> i64 {
        self.start_time
    }

    pub fn interval(&self) -> i64 {
        self.interval
    }

    /// Exclusive end of the covered window.
    pub fn stop_time(&self) -> i64 {
        self.start_time + self.values.len() as i64 * self.interval
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<F>] {
        &self.values
    }

    pub fn value(&self, index: usize) -> Option<F> {
        self.values[index]
    }

    pub fn time_of(&self, index: usize) -> i64 {
        self.start_time + index as i64 * self.interval
    }

    /// Indices and values of the present observations.
    pub fn present(&self) -> impl Iterator<Item = (usize, F)> + '_ {
        self.values.iter().enumerate().filter_map(|(i, v)| v.map(|x| (i, x)))
    }

    pub fn present_values(&self) -> Vec<F> {
        self.present().map(|(_, v)| v).collect()
    }

    pub fn count_present(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Re-expresses the series as one tick per present slot.
    pub fn to_ticks(&self) -> Vec<RawTick> {
        self.present()
            .map(|(i, v)| RawTick::new(self.time_of(i), vec![v.into_f64()]))
            .collect()
    }
}

/// Buckets raw ticks onto a regular grid over `[start, stop)`.
///
/// Each slot keeps the minimum RTT over every value of every tick that falls
/// into it (duplicates collapse into the min); slots nothing fell into are
/// explicit gaps. Ticks outside the window are ignored.
pub fn regularize<F: Scalar>(
    ticks: &[RawTick],
    start: i64,
    stop: i64,
    interval: i64,
) -> Result<RegularSeries<F>, SeriesError> {
    if start >= stop {
        return Err(SeriesError::EmptyWindow { start, stop });
    }
    if interval <= 0 {
        return Err(SeriesError::InvalidInterval(interval));
    }
    let len = ((stop - start) as u64).div_ceil(interval as u64) as usize;
    let mut mins: Vec<Option<f64>> = vec![None; len];
    for tick in ticks {
        for &v in &tick.rtt_values {
            if !v.is_finite() || v < 0.0 {
                return Err(SeriesError::InvalidTick { timestamp: tick.timestamp, value: v });
            }
        }
        if tick.timestamp < start || tick.timestamp >= stop {
            continue;
        }
        let slot = ((tick.timestamp - start) / interval) as usize;
        for &v in &tick.rtt_values {
            let m = &mut mins[slot];
            *m = Some(m.map_or(v, |cur: f64| cur.min(v)));
        }
    }
    RegularSeries::new(start, interval, mins.into_iter().map(|v| v.map(F::of)).collect())
}

/// On-disk encodings of a regular series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFormat {
    /// Header `timestamp,rtt`; empty rtt field marks a gap.
    Csv,
    /// One `{"t": <epoch s>, "rtt": <ms|null>}` object per line.
    Jsonl,
}

impl SeriesFormat {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") | Some("json") => SeriesFormat::Jsonl,
            _ => SeriesFormat::Csv,
        }
    }
}

/// Tick interval assumed when a file holds a single row and the spacing
/// cannot be inferred (the platform default of four minutes).
pub const DEFAULT_TICK_INTERVAL: i64 = 240;

#[derive(Deserialize, Serialize)]
struct JsonlRow {
    t: i64,
    rtt: Option<f64>,
}

/// Reads a regular series from `path`.
///
/// Timestamps must lie on a common grid; rows may be omitted entirely or
/// carry an empty/null value, and either way the slot comes back as a gap.
pub fn read_series<F: Scalar>(path: &Path, format: SeriesFormat) -> Result<RegularSeries<F>, SeriesError> {
    let rows = match format {
        SeriesFormat::Csv => read_csv_rows(path)?,
        SeriesFormat::Jsonl => read_jsonl_rows(path)?,
    };
    series_from_rows(rows)
}

fn read_csv_rows(path: &Path) -> Result<Vec<(usize, i64, Option<f64>)>, SeriesError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| SeriesError::Schema("empty file".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields != ["timestamp", "rtt"] {
        return Err(SeriesError::Schema(format!(
            "expected header 'timestamp,rtt', got '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (ts_str, rtt_str) = line
            .split_once(',')
            .ok_or_else(|| SeriesError::Parse { line: lineno, msg: "missing rtt column".into() })?;
        let ts: i64 = ts_str.trim().parse().map_err(|_| SeriesError::Parse {
            line: lineno,
            msg: format!("bad timestamp '{ts_str}'"),
        })?;
        let rtt_str = rtt_str.trim();
        let rtt = if rtt_str.is_empty() {
            None
        } else {
            Some(rtt_str.parse::<f64>().map_err(|_| SeriesError::Parse {
                line: lineno,
                msg: format!("bad rtt '{rtt_str}'"),
            })?)
        };
        rows.push((lineno, ts, rtt));
    }
    Ok(rows)
}

fn read_jsonl_rows(path: &Path) -> Result<Vec<(usize, i64, Option<f64>)>, SeriesError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(line).map_err(|e| SeriesError::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        rows.push((idx + 1, row.t, row.rtt));
    }
    Ok(rows)
}

fn series_from_rows<F: Scalar>(
    mut rows: Vec<(usize, i64, Option<f64>)>,
) -> Result<RegularSeries<F>, SeriesError> {
    if rows.is_empty() {
        return Err(SeriesError::Schema("no data rows".into()));
    }
    rows.sort_by_key(|&(_, t, _)| t);
    let start = rows[0].1;
    let interval = rows
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .filter(|&gap| gap > 0)
        .min()
        .unwrap_or(DEFAULT_TICK_INTERVAL);
    let span = rows.last().unwrap().1 - start;
    let len = (span / interval) as usize + 1;
    let mut values: Vec<Option<F>> = vec![None; len];
    let mut seen: Vec<Option<usize>> = vec![None; len];
    for &(line, t, rtt) in &rows {
        let offset = t - start;
        if offset % interval != 0 {
            return Err(SeriesError::Parse {
                line,
                msg: format!("timestamp {t} off the {interval}s grid starting at {start}"),
            });
        }
        let slot = (offset / interval) as usize;
        if let Some(prev) = seen[slot] {
            return Err(SeriesError::Parse {
                line,
                msg: format!("duplicate timestamp {t} (first at line {prev})"),
            });
        }
        seen[slot] = Some(line);
        values[slot] = rtt.map(F::of);
    }
    RegularSeries::new(start, interval, values)
}

/// Writes a regular series to `path` in the given format.
pub fn write_series<F: Scalar>(
    series: &RegularSeries<F>,
    path: &Path,
    format: SeriesFormat,
) -> Result<(), SeriesError> {
    let mut out = fs::File::create(path)?;
    match format {
        SeriesFormat::Csv => {
            writeln!(out, "timestamp,rtt")?;
            for (i, v) in series.values().iter().enumerate() {
                match v {
                    Some(x) => writeln!(out, "{},{}", series.time_of(i), x.into_f64())?,
                    None => writeln!(out, "{},", series.time_of(i))?,
                }
            }
        }
        SeriesFormat::Jsonl => {
            for (i, v) in series.values().iter().enumerate() {
                let row = JsonlRow { t: series.time_of(i), rtt: v.map(|x| x.into_f64()) };
                writeln!(out, "{}", serde_json::to_string(&row).expect("row serializes"))?;
            }
        }
    }
    Ok(())
}

/// Access to a measurement platform, keyed by measurement and probe id.
///
/// Implementations must be shareable across concurrent requests.
pub trait MeasurementClient: Send + Sync {
    /// Raw ticks for the pair in `[start, stop)`; order is not guaranteed.
    fn fetch(&self, msm_id: u64, prb_id: u64, start: i64, stop: i64) -> Result<Vec<RawTick>, SeriesError>;
}

/// Fetches ticks through a client (empty window yields an empty list).
pub fn fetch_measurement(
    client: &dyn MeasurementClient,
    msm_id: u64,
    prb_id: u64,
    start: i64,
    stop: i64,
) -> Result<Vec<RawTick>, SeriesError> {
    client.fetch(msm_id, prb_id, start, stop)
}

/// `rtt` field of a fixture line: a single value, a list of probe results,
/// or null for a failed tick.
#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureRtt {
    Many(Vec<f64>),
    One(f64),
    Null,
}

#[derive(Deserialize)]
struct FixtureRow {
    t: i64,
    rtt: FixtureRtt,
}

/// Local measurement store with the layout `<root>/<msm_id>/<prb_id>.jsonl`,
/// one `{"t": ..., "rtt": <number|list|null>}` object per line. Lets every
/// pipeline run offline.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    root: PathBuf,
}

impl FixtureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn pair_path(&self, msm_id: u64, prb_id: u64) -> PathBuf {
        self.root.join(msm_id.to_string()).join(format!("{prb_id}.jsonl"))
    }
}

impl MeasurementClient for FixtureStore {
    fn fetch(&self, msm_id: u64, prb_id: u64, start: i64, stop: i64) -> Result<Vec<RawTick>, SeriesError> {
        let path = self.pair_path(msm_id, prb_id);
        if !path.is_file() {
            return Err(SeriesError::NotFound { msm_id, prb_id });
        }
        let text = fs::read_to_string(&path)?;
        let mut ticks = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: FixtureRow = serde_json::from_str(line).map_err(|e| SeriesError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
            if row.t < start || row.t >= stop {
                continue;
            }
            let values = match row.rtt {
                FixtureRtt::Many(vs) => vs,
                FixtureRtt::One(v) => vec![v],
                FixtureRtt::Null => Vec::new(),
            };
            ticks.push(RawTick::new(row.t, values));
        }
        Ok(ticks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tick(t: i64, vs: &[f64]) -> RawTick {
        RawTick::new(t, vs.to_vec())
    }

    #[test]
    fn regularize_takes_slot_minimum() {
        let ticks = [tick(0, &[10.0, 12.0, 11.0]), tick(240, &[9.0])];
        let s: RegularSeries<f64> = regularize(&ticks, 0, 480, 240).unwrap();
        assert_eq!(s.values(), &[Some(10.0), Some(9.0)]);
    }

    #[test]
    fn regularize_inserts_missing_slots() {
        let ticks = [tick(0, &[10.0]), tick(480, &[8.0])];
        let s: RegularSeries<f64> = regularize(&ticks, 0, 720, 240).unwrap();
        assert_eq!(s.values(), &[Some(10.0), None, Some(8.0)]);
    }

    #[test]
    fn regularize_collapses_duplicates_in_slot() {
        let ticks = [tick(5, &[7.0]), tick(10, &[6.0])];
        let s: RegularSeries<f64> = regularize(&ticks, 0, 240, 240).unwrap();
        assert_eq!(s.values(), &[Some(6.0)]);
    }

    #[test]
    fn regularize_rejects_empty_window_and_bad_values() {
        assert!(matches!(
            regularize::<f64>(&[], 100, 100, 240),
            Err(SeriesError::EmptyWindow { .. })
        ));
        assert!(matches!(
            regularize::<f64>(&[tick(0, &[-1.0])], 0, 240, 240),
            Err(SeriesError::InvalidTick { .. })
        ));
        assert!(matches!(
            regularize::<f64>(&[tick(0, &[f64::NAN])], 0, 240, 240),
            Err(SeriesError::InvalidTick { .. })
        ));
    }

    #[test]
    fn regularize_is_idempotent_on_regular_input() {
        let ticks = [tick(0, &[10.0]), tick(480, &[8.0]), tick(720, &[9.5])];
        let s: RegularSeries<f64> = regularize(&ticks, 0, 960, 240).unwrap();
        let again: RegularSeries<f64> = regularize(&s.to_ticks(), 0, 960, 240).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn length_depends_only_on_window() {
        let s: RegularSeries<f64> = regularize(&[tick(0, &[1.0])], 0, 1000, 240).unwrap();
        assert_eq!(s.len(), 5); // ceil(1000/240)
        let t: RegularSeries<f64> = regularize(&[], 0, 1000, 240).unwrap();
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn csv_round_trip_and_gap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "timestamp,rtt\n0,10.5\n240,\n480,9.0\n").unwrap();
        let s: RegularSeries<f64> = read_series(&path, SeriesFormat::Csv).unwrap();
        assert_eq!(s.values(), &[Some(10.5), None, Some(9.0)]);
        assert_eq!(s.interval(), 240);

        let out = dir.path().join("out.csv");
        write_series(&s, &out, SeriesFormat::Csv).unwrap();
        let back: RegularSeries<f64> = read_series(&out, SeriesFormat::Csv).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn jsonl_matches_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        fs::write(&path, "{\"t\":0,\"rtt\":10.5}\n{\"t\":240,\"rtt\":null}\n{\"t\":480,\"rtt\":9.0}\n")
            .unwrap();
        let s: RegularSeries<f64> = read_series(&path, SeriesFormat::Jsonl).unwrap();
        assert_eq!(s.values(), &[Some(10.5), None, Some(9.0)]);
    }

    #[test]
    fn csv_parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "timestamp,rtt\n0,abc\n").unwrap();
        match read_series::<f64>(&path, SeriesFormat::Csv) {
            Err(SeriesError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_schema_error_on_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "time,value\n0,1.0\n").unwrap();
        assert!(matches!(
            read_series::<f64>(&path, SeriesFormat::Csv),
            Err(SeriesError::Schema(_))
        ));
    }

    #[test]
    fn omitted_rows_become_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "timestamp,rtt\n0,10.0\n720,9.0\n480,8.0\n").unwrap();
        let s: RegularSeries<f64> = read_series(&path, SeriesFormat::Csv).unwrap();
        assert_eq!(s.values(), &[Some(10.0), None, Some(8.0), Some(9.0)]);
    }

    fn fixture_store() -> (tempfile::TempDir, FixtureStore) {
        let dir = tempfile::tempdir().unwrap();
        let pair_dir = dir.path().join("1437285");
        fs::create_dir_all(&pair_dir).unwrap();
        fs::write(
            pair_dir.join("6222.jsonl"),
            "{\"t\":0,\"rtt\":[10.0,12.0]}\n{\"t\":240,\"rtt\":9.5}\n{\"t\":480,\"rtt\":null}\n",
        )
        .unwrap();
        let store = FixtureStore::new(dir.path());
        (dir, store)
    }

    #[test]
    fn fixture_store_passthrough() {
        let (_dir, store) = fixture_store();
        let ticks = fetch_measurement(&store, 1437285, 6222, 0, 720).unwrap();
        assert_eq!(ticks.len(), 3);
        assert_eq!(ticks[0].rtt_values, vec![10.0, 12.0]);
        assert_eq!(ticks[1].rtt_values, vec![9.5]);
        assert!(ticks[2].rtt_values.is_empty());
    }

    #[test]
    fn fixture_store_unknown_pair() {
        let (_dir, store) = fixture_store();
        assert!(matches!(
            store.fetch(1, 2, 0, 720),
            Err(SeriesError::NotFound { msm_id: 1, prb_id: 2 })
        ));
    }

    #[test]
    fn fixture_store_empty_window() {
        let (_dir, store) = fixture_store();
        let ticks = store.fetch(1437285, 6222, 240, 240).unwrap();
        assert!(ticks.is_empty());
    }
}
