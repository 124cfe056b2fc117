//! Analysis toolkit: per-level value estimation, Gaussian-mixture fitting
//! with AIC model selection, exact variance decomposition and baseline
//! checks on tabular level sets, the variance-versus-level-count curve, and
//! a Monte Carlo estimate of a critic's prediction error.

mod curves;
mod exact;
mod gmm;
mod oracle;
mod selection;
mod values;

use thiserror::Error;

pub use curves::{variance_vs_levels, write_curve_csv, CurvePoint, VarianceCurveConfig};
pub use exact::{
    default_tabular_set, expected_return, lemma1_check, lemma2_sweep, policy_gradient, tabular_set,
    variance_decomposition, Lemma1Report, Lemma2Report, VarianceDecomposition, LAMBDA_GRID, LEMMA1_TOLERANCE,
};
pub use gmm::{aic_score, em_fit, log_likelihood, param_count, EmOptions, GmmFit, VARIANCE_FLOOR};
pub use oracle::{prediction_error_mc, OracleConfig, PredictionErrorReport};
pub use selection::{
    clustering_hypothesis_test, histogram, select_num_clusters, ClusterReport, ClusterSelection, Histogram,
};
pub use values::{
    estimate_true_values, exact_value_matrix, sample_probe_set, FineTuneConfig, FineTuneResult, FlaggedLevel, ProbeSet,
    ValueMatrix,
};

use crate::diffcore::DiffError;
use crate::envs::EnvError;
use crate::models::ModelError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("exact enumeration needs tabular levels: {0}")]
    NotTabular(String),
    #[error("degenerate value matrix: every row is identical")]
    Degenerate,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
