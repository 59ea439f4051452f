//! The five subcommands: segment, score, aggregate, compare, serve.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use rttseg_core::baselines::{
    gmm_em_fit, hmm_baum_welch_fit, select_k_by_bic, FitReport, FittedModel,
};
use rttseg_core::changepoint::{
    change_frequency, extract_changepoints, read_truth_csv, score_many, ChangePointSet,
    CpdMetrics, TruthSet, DEFAULT_BUCKET_WIDTH,
};
use rttseg_core::dpmm::dpmm_fit;
use rttseg_core::hdphmm::{fit, HdpHmmConfig, SweepDiagnostic};
use rttseg_core::hmm::{forward_log_likelihood, viterbi, HmmModel};
use rttseg_core::prob::NixParams;
use rttseg_core::rng::{derive_seed, rng_from_seed};
use rttseg_core::series::{read_series, RegularSeries, SeriesFormat};

use crate::{data_err, CliError};

/// Everything a segmentation run writes per series: the configuration it
/// ran with, the labels, and the realized model.
#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentOutput {
    pub series_id: String,
    pub config: HdpHmmConfig<f64>,
    pub start_time: i64,
    pub stop_time: i64,
    pub interval: i64,
    /// The regularized values, so downstream commands can re-evaluate the
    /// model without the original files.
    pub values: Vec<Option<f64>>,
    pub num_states: usize,
    pub states: Vec<usize>,
    pub change_times: Vec<i64>,
    pub log_likelihood: f64,
    pub model: HmmModel<f64>,
    pub sweep_diagnostics: Vec<SweepDiagnostic<f64>>,
}

/// Sampler knobs shared by `segment` and `compare`.
#[derive(Debug, Clone)]
pub struct SamplerArgs {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub emission_alpha: f64,
    pub chains: usize,
}

impl Default for SamplerArgs {
    fn default() -> Self {
        let c = HdpHmmConfig::<f64>::default();
        Self {
            sweeps: c.sweeps,
            burn_in: c.burn_in,
            seed: c.seed,
            alpha: c.alpha,
            gamma: c.gamma,
            kappa: c.kappa,
            emission_alpha: c.emission_alpha,
            chains: c.chains,
        }
    }
}

impl SamplerArgs {
    fn config(&self, seed: u64) -> HdpHmmConfig<f64> {
        HdpHmmConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            kappa: self.kappa,
            emission_prior: None,
            emission_alpha: self.emission_alpha,
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            seed,
            hyperprior: None,
            chains: self.chains,
        }
    }
}

fn series_id_of(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("series").to_string()
}

fn segment_one(
    path: &Path,
    args: &SamplerArgs,
) -> Result<SegmentOutput, CliError> {
    let series: RegularSeries<f64> =
        read_series(path, SeriesFormat::from_path(path)).map_err(data_err)?;
    let series_id = series_id_of(path);
    // Independent of input order and thread schedule.
    let config = args.config(derive_seed(args.seed, &[&series_id]));
    let result = fit(&series, &config).map_err(data_err)?;
    let change_times = extract_changepoints(&result.states, &series)
        .map_err(|e| CliError::Internal(e.to_string()))?
        .change_times;
    Ok(SegmentOutput {
        series_id,
        config,
        start_time: series.start_time(),
        stop_time: series.stop_time(),
        interval: series.interval(),
        values: series.values().to_vec(),
        num_states: result.model.num_states(),
        states: result.states,
        change_times,
        log_likelihood: result.log_likelihood,
        model: result.model,
        sweep_diagnostics: result.sweep_diagnostics,
    })
}

/// `rttseg segment`: one JSON result per input, fitted by a pool of
/// `threads` workers. Parse or fit failures fail the run (after flushing
/// whatever finished), and outputs are identical for any thread count.
pub fn segment(
    inputs: &[PathBuf],
    out_dir: &Path,
    args: &SamplerArgs,
    threads: usize,
) -> Result<Vec<PathBuf>, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("segment needs at least one series file".into()));
    }
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(data_err)?;
    let next = AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<PathBuf, CliError>>>> =
        inputs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(inputs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let outcome = segment_one(&inputs[i], args).and_then(|output| {
                    let path = out_dir.join(format!("{}.json", output.series_id));
                    let json = serde_json::to_string_pretty(&output)
                        .map_err(|e| CliError::Internal(e.to_string()))?;
                    std::fs::write(&path, json).map_err(data_err)?;
                    Ok(path)
                });
                *results[i].lock().expect("result slot") = Some(outcome);
            });
        }
    });
    let mut written = Vec::with_capacity(inputs.len());
    for slot in results {
        match slot.into_inner().expect("result slot") {
            Some(Ok(path)) => written.push(path),
            Some(Err(e)) => return Err(e),
            None => return Err(CliError::Internal("worker dropped an input".into())),
        }
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
pub struct ScoreOutput {
    pub tolerance_seconds: i64,
    pub aggregate: CpdMetrics<f64>,
    pub per_series: Vec<SeriesScore>,
}

#[derive(Debug, Serialize)]
pub struct SeriesScore {
    pub series_id: String,
    pub metrics: CpdMetrics<f64>,
}

fn read_segment_outputs(pred_dir: &Path) -> Result<Vec<SegmentOutput>, CliError> {
    let mut outputs = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(pred_dir)
        .map_err(data_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    entries.sort();
    for path in entries {
        let raw = std::fs::read_to_string(&path).map_err(data_err)?;
        let output: SegmentOutput = serde_json::from_str(&raw)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        outputs.push(output);
    }
    if outputs.is_empty() {
        return Err(CliError::Data(format!("no segment results under {}", pred_dir.display())));
    }
    Ok(outputs)
}

/// `rttseg score`: matches predicted changepoints against labelled truth.
/// `truth` is a `<series_id>.csv` directory, or a single CSV when scoring
/// a single prediction. The tolerance is given in ticks and converted per
/// series.
pub fn score_cmd(
    pred_dir: &Path,
    truth: &Path,
    tolerance_ticks: i64,
) -> Result<ScoreOutput, CliError> {
    if tolerance_ticks < 0 {
        return Err(CliError::Usage("--tolerance must be non-negative".into()));
    }
    let outputs = read_segment_outputs(pred_dir)?;
    let mut truths: Vec<TruthSet<f64>> = Vec::new();
    for output in &outputs {
        let path = if truth.is_dir() {
            truth.join(format!("{}.csv", output.series_id))
        } else {
            if outputs.len() > 1 {
                return Err(CliError::Usage(
                    "--truth must be a directory when scoring multiple series".into(),
                ));
            }
            truth.to_path_buf()
        };
        if !path.is_file() {
            return Err(CliError::Data(format!("missing truth file {}", path.display())));
        }
        truths.push(read_truth_csv(&path).map_err(data_err)?);
    }
    let mut per_series = Vec::new();
    let mut pairs: Vec<(ChangePointSet, &TruthSet<f64>)> = Vec::new();
    for (output, truth_set) in outputs.iter().zip(&truths) {
        let pred = ChangePointSet {
            series_id: output.series_id.clone(),
            change_times: output.change_times.clone(),
        };
        let tolerance = tolerance_ticks * output.interval;
        let metrics = rttseg_core::changepoint::score(&pred, truth_set, tolerance);
        per_series.push(SeriesScore { series_id: output.series_id.clone(), metrics });
        pairs.push((pred, truth_set));
    }
    // All series share the tick interval in practice; pool with the first.
    let tolerance_seconds = tolerance_ticks * outputs[0].interval;
    let borrowed: Vec<(&ChangePointSet, &TruthSet<f64>)> =
        pairs.iter().map(|(p, t)| (p, *t)).collect();
    let aggregate = score_many(&borrowed, tolerance_seconds);
    Ok(ScoreOutput { tolerance_seconds, aggregate, per_series })
}

/// `rttseg aggregate`: change-frequency CSV (`bucket_start,count`) across
/// segment results. The window defaults to the union of the inputs' spans.
pub fn aggregate(
    results: &[PathBuf],
    bucket_width: i64,
    window: Option<(i64, i64)>,
) -> Result<String, CliError> {
    if results.is_empty() {
        return Err(CliError::Usage("aggregate needs at least one result file".into()));
    }
    let mut sets = Vec::new();
    let mut span: Option<(i64, i64)> = None;
    for path in results {
        let raw = std::fs::read_to_string(path).map_err(data_err)?;
        let output: SegmentOutput = serde_json::from_str(&raw)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        span = Some(match span {
            None => (output.start_time, output.stop_time),
            Some((lo, hi)) => (lo.min(output.start_time), hi.max(output.stop_time)),
        });
        sets.push(ChangePointSet { series_id: output.series_id, change_times: output.change_times });
    }
    let (start, stop) = window.or(span).expect("at least one input");
    let freq = change_frequency(&sets, start, stop, bucket_width).map_err(data_err)?;
    let mut csv = String::from("bucket_start,count\n");
    for (i, count) in freq.counts.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", freq.bucket_time(i), count));
    }
    Ok(csv)
}

pub const KNOWN_MODELS: [&str; 4] = ["gmm", "hmm", "dpmm", "hdphmm"];

#[derive(Debug, Serialize)]
pub struct CompareEntry {
    pub model: String,
    pub k: usize,
    pub log_likelihood: f64,
    /// Present for the penalized parametric fits only.
    pub bic: Option<f64>,
    /// Per-tick label; `null` where an iid mixture has no state for a gap.
    pub states: Vec<Option<usize>>,
    pub num_segments: usize,
}

#[derive(Debug, Serialize)]
pub struct CompareOutput {
    pub series_id: String,
    pub start_time: i64,
    pub interval: i64,
    pub models: Vec<CompareEntry>,
}

fn mixture_states(
    series: &RegularSeries<f64>,
    classify: impl Fn(f64) -> usize,
) -> Vec<Option<usize>> {
    (0..series.len()).map(|i| series.value(i).map(&classify)).collect()
}

fn segments_of(states: &[Option<usize>]) -> usize {
    let present: Vec<usize> = states.iter().filter_map(|s| *s).collect();
    if present.is_empty() {
        return 0;
    }
    1 + present.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Fits the requested models on one series and reports their labels and
/// penalized scores side by side.
pub fn compare(
    series: &RegularSeries<f64>,
    series_id: &str,
    models: &[String],
    max_k: usize,
    args: &SamplerArgs,
) -> Result<CompareOutput, CliError> {
    if models.is_empty() {
        return Err(CliError::Usage("--models must name at least one model".into()));
    }
    let values = series.present_values();
    let mut entries = Vec::new();
    for name in models {
        let entry = match name.as_str() {
            "gmm" => {
                let mut rng = rng_from_seed(derive_seed(args.seed, &[series_id, "gmm"]));
                let report: FitReport<f64> =
                    select_k_by_bic(|k, r| gmm_em_fit(&values, k, 500, 1e-6, r), 1..=max_k, &mut rng)
                        .map_err(data_err)?;
                let FittedModel::Gmm(model) = &report.model else {
                    return Err(CliError::Internal("gmm fit returned foreign model".into()));
                };
                let states = mixture_states(series, |y| model.map_component(y));
                CompareEntry {
                    model: name.clone(),
                    k: report.k,
                    log_likelihood: report.log_likelihood,
                    bic: Some(report.bic),
                    num_segments: segments_of(&states),
                    states,
                }
            }
            "hmm" => {
                let mut rng = rng_from_seed(derive_seed(args.seed, &[series_id, "hmm"]));
                let report: FitReport<f64> = select_k_by_bic(
                    |k, r| hmm_baum_welch_fit(series, k, 500, 1e-6, r),
                    1..=max_k,
                    &mut rng,
                )
                .map_err(data_err)?;
                let FittedModel::Hmm(model) = &report.model else {
                    return Err(CliError::Internal("hmm fit returned foreign model".into()));
                };
                let (path, _) = viterbi(model, series);
                let states: Vec<Option<usize>> = path.into_iter().map(Some).collect();
                CompareEntry {
                    model: name.clone(),
                    k: report.k,
                    log_likelihood: report.log_likelihood,
                    bic: Some(report.bic),
                    num_segments: segments_of(&states),
                    states,
                }
            }
            "dpmm" => {
                let mut rng = rng_from_seed(derive_seed(args.seed, &[series_id, "dpmm"]));
                let prior = NixParams::default_for(&values).map_err(data_err)?;
                let model = dpmm_fit(&values, args.emission_alpha, prior, 300, 100, &mut rng)
                    .map_err(data_err)?;
                let loglik: f64 = values.iter().map(|&y| model.logpdf(y)).sum();
                let states = mixture_states(series, |y| model.map_component(y));
                CompareEntry {
                    model: name.clone(),
                    k: model.num_components(),
                    log_likelihood: loglik,
                    bic: None,
                    num_segments: segments_of(&states),
                    states,
                }
            }
            "hdphmm" => {
                let config = args.config(derive_seed(args.seed, &[series_id, "hdphmm"]));
                let result = fit(series, &config).map_err(data_err)?;
                let states: Vec<Option<usize>> = result.states.iter().map(|&s| Some(s)).collect();
                CompareEntry {
                    model: name.clone(),
                    k: result.model.num_states(),
                    log_likelihood: forward_log_likelihood(&result.model, series),
                    bic: None,
                    num_segments: segments_of(&states),
                    states,
                }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown model '{other}' (known: {})",
                    KNOWN_MODELS.join(", ")
                )))
            }
        };
        entries.push(entry);
    }
    Ok(CompareOutput {
        series_id: series_id.to_string(),
        start_time: series.start_time(),
        interval: series.interval(),
        models: entries,
    })
}

/// `rttseg compare` on a file.
pub fn compare_file(
    path: &Path,
    models: &[String],
    max_k: usize,
    args: &SamplerArgs,
) -> Result<CompareOutput, CliError> {
    let series: RegularSeries<f64> =
        read_series(path, SeriesFormat::from_path(path)).map_err(data_err)?;
    compare(&series, &series_id_of(path), models, max_k, args)
}

/// Re-exported default for the aggregate flag.
pub fn default_bucket_width() -> i64 {
    DEFAULT_BUCKET_WIDTH
}

/// `rttseg validate`: for each segment result, simulates a series of the
/// same length from its model and evaluates both log-likelihoods; emits
/// `observed,simulated` CSV rows ready for Q-Q plotting.
pub fn validate(results: &[PathBuf], seed: u64) -> Result<String, CliError> {
    if results.is_empty() {
        return Err(CliError::Usage("validate needs at least one result file".into()));
    }
    let mut reconstructed = Vec::new();
    for path in results {
        let raw = std::fs::read_to_string(path).map_err(data_err)?;
        let output: SegmentOutput = serde_json::from_str(&raw)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let series = RegularSeries::new(output.start_time, output.interval, output.values.clone())
            .map_err(data_err)?;
        reconstructed.push(rttseg_core::hdphmm::SegmentationResult {
            series,
            states: output.states.clone(),
            model: output.model.clone(),
            log_likelihood: output.log_likelihood,
            sweep_diagnostics: vec![],
        });
    }
    let mut rng = rng_from_seed(seed);
    let pairs = rttseg_core::validation::likelihood_pairs(&reconstructed, &mut rng);
    let mut csv = String::from("observed,simulated\n");
    for pair in &pairs {
        csv.push_str(&format!("{},{}\n", pair.observed_loglik, pair.simulated_loglik));
    }
    Ok(csv)
}
