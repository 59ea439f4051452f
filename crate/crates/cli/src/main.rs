//! `rttseg`: segment RTT series with a sticky HDP-HMM, score changepoints,
//! aggregate change frequencies, compare against parametric baselines, and
//! serve the trends HTTP API.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use rttseg_cli::commands::{self, SamplerArgs};
use rttseg_cli::CliError;

#[derive(Parser)]
#[command(name = "rttseg", version, about = "RTT time-series segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SamplerFlags {
    /// Gibbs sweeps per chain.
    #[arg(long, default_value_t = 500)]
    sweeps: usize,
    /// Sweeps discarded before snapshot tracking.
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    /// Base seed; per-series seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transition DP concentration.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Top-level DP concentration.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Extra self-transition mass.
    #[arg(long, default_value_t = 10.0)]
    kappa: f64,
    /// Per-state emission DP concentration.
    #[arg(long, default_value_t = 1.0)]
    emission_alpha: f64,
    /// Independent chains per fit (best snapshot wins).
    #[arg(long, default_value_t = 3)]
    chains: usize,
}

impl SamplerFlags {
    fn to_args(&self) -> Result<SamplerArgs, CliError> {
        if self.sweeps <= self.burn_in {
            return Err(CliError::Usage(format!(
                "--sweeps ({}) must exceed --burn-in ({})",
                self.sweeps, self.burn_in
            )));
        }
        Ok(SamplerArgs {
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            seed: self.seed,
            alpha: self.alpha,
            gamma: self.gamma,
            kappa: self.kappa,
            emission_alpha: self.emission_alpha,
            chains: self.chains,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Segment series files; writes one JSON result per input.
    Segment {
        /// Input series (CSV `timestamp,rtt` or JSONL `{"t","rtt"}`).
        #[arg(required = true)]
        series: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[command(flatten)]
        sampler: SamplerFlags,
    },
    /// Score predicted changepoints against labelled truth.
    Score {
        /// Directory of segment results.
        #[arg(long)]
        pred: PathBuf,
        /// Truth CSV (`time,magnitude`) or a directory of `<id>.csv`.
        #[arg(long)]
        truth: PathBuf,
        /// Matching tolerance in ticks.
        #[arg(long, default_value_t = 2)]
        tolerance: i64,
    },
    /// Aggregate changepoints into a change-frequency CSV.
    Aggregate {
        /// Segment result files.
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Bucket width in seconds.
        #[arg(long, default_value_t = 360)]
        bucket: i64,
        /// Window start (epoch s; defaults to the inputs' span).
        #[arg(long)]
        start: Option<i64>,
        /// Window stop (epoch s).
        #[arg(long)]
        stop: Option<i64>,
        /// Output CSV path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit several models on one series and report them side by side.
    Compare {
        series: PathBuf,
        /// Comma-separated subset of gmm,hmm,dpmm,hdphmm.
        #[arg(long, value_delimiter = ',', default_value = "gmm,hmm,dpmm,hdphmm")]
        models: Vec<String>,
        /// Largest candidate order for the BIC fits.
        #[arg(long, default_value_t = 12)]
        max_k: usize,
        #[command(flatten)]
        sampler: SamplerFlags,
    },
    /// Compare observed vs model-simulated log-likelihoods per result.
    Validate {
        /// Segment result files.
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Simulation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the trends HTTP API over a fixture store.
    Serve {
        /// Listen address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Fixture root (`<root>/<msm_id>/<prb_id>.jsonl`).
        #[arg(long)]
        fixtures: PathBuf,
        /// Tick interval in seconds.
        #[arg(long, default_value_t = 240)]
        interval: i64,
        /// Seed salt for request-derived seeds.
        #[arg(long, default_value_t = 0)]
        seed_salt: u64,
        /// Per-request segmentation budget in seconds.
        #[arg(long, default_value_t = 10)]
        timeout: u64,
        #[command(flatten)]
        sampler: SamplerFlags,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Segment { series, out, threads, sampler } => {
            let args = sampler.to_args()?;
            let written = commands::segment(&series, &out, &args, threads)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Score { pred, truth, tolerance } => {
            let output = commands::score_cmd(&pred, &truth, tolerance)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&output).map_err(|e| CliError::Internal(e.to_string()))?
            );
            Ok(())
        }
        Command::Aggregate { results, bucket, start, stop, out } => {
            let window = match (start, stop) {
                (Some(a), Some(b)) => Some((a, b)),
                (None, None) => None,
                _ => {
                    return Err(CliError::Usage(
                        "--start and --stop must be given together".into(),
                    ))
                }
            };
            let csv = commands::aggregate(&results, bucket, window)?;
            match out {
                Some(path) => std::fs::write(path, csv).map_err(|e| CliError::Data(e.to_string()))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Compare { series, models, max_k, sampler } => {
            let args = sampler.to_args()?;
            let output = commands::compare_file(&series, &models, max_k, &args)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&output).map_err(|e| CliError::Internal(e.to_string()))?
            );
            Ok(())
        }
        Command::Validate { results, seed, out } => {
            let csv = commands::validate(&results, seed)?;
            match out {
                Some(path) => std::fs::write(path, csv).map_err(|e| CliError::Data(e.to_string()))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Serve { listen, fixtures, interval, seed_salt, timeout, sampler } => {
            let args = sampler.to_args()?;
            let config = rttseg_service::ServiceConfig {
                fixture_root: fixtures,
                interval,
                sweeps: args.sweeps,
                burn_in: args.burn_in,
                chains: args.chains,
                seed_salt,
                fit_timeout: std::time::Duration::from_secs(timeout),
                ..Default::default()
            };
            let state = Arc::new(rttseg_service::AppState::with_fixtures(config));
            eprintln!("listening on http://{listen}");
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::Internal(e.to_string()))?;
            runtime
                .block_on(rttseg_service::serve(listen, state))
                .map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; everything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
