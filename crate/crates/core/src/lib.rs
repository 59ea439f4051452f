//! Bayesian segmentation of network round-trip-time series.
//!
//! The centerpiece is a sticky HDP-HMM (infinite HMM) with Dirichlet-process
//! Gaussian-mixture emissions, fitted by a collapsed direct-assignment Gibbs
//! sampler ([`hdphmm`]). Around it: tick ingestion and file formats
//! ([`series`]), the conjugate Normal-Inverse-χ² machinery ([`prob`]),
//! standalone DP mixtures ([`dpmm`]), finite-HMM evaluation and simulation
//! ([`hmm`]), EM/BIC parametric baselines ([`baselines`]), changepoint
//! extraction and scoring ([`changepoint`]), and goodness-of-fit validation
//! by simulation ([`validation`]).
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the default double-precision pipeline.

pub mod baselines;
pub mod changepoint;
pub mod dpmm;
pub mod hdphmm;
pub mod hmm;
pub mod prob;
pub mod rng;
pub mod scalar;
pub mod series;
pub mod validation;

pub use scalar::Scalar;

/// Double-precision aliases for the common pipeline.
pub type RegularSeries = series::RegularSeries<f64>;
pub type NixParams = prob::NixParams<f64>;
pub type GaussParams = prob::GaussParams<f64>;
pub type DpmmModel = dpmm::DpmmModel<f64>;
pub type DpmmState = dpmm::DpmmState<f64>;
pub type HmmModel = hmm::HmmModel<f64>;
pub type HdpHmmConfig = hdphmm::HdpHmmConfig<f64>;
pub type SegmentationResult = hdphmm::SegmentationResult<f64>;
pub type FitReport = baselines::FitReport<f64>;
pub type TruthSet = changepoint::TruthSet<f64>;
pub type CpdMetrics = changepoint::CpdMetrics<f64>;
pub type LikelihoodPair = validation::LikelihoodPair<f64>;
