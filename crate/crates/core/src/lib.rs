//! Bayesian analysis of randomized-trial data augmented with individually
//! weighted external patient data, and Monte-Carlo design of such trials.
//!
//! The pipeline is:
//!
//! 1. [`dataset`]: load and validate patient-level data, build design matrices.
//! 2. [`similarity`]: score each external patient against the internal
//!    population and turn the scores into borrowing weights in `[0, 1]`.
//! 3. [`inference`]: sample the weighted logistic posterior.
//! 4. [`estimand`]: turn parameter draws into subgroup effects and decisions.
//! 5. [`design`]: design priors, operating characteristics, sample size.
//! 6. [`simlab`]: scenario-based simulation study of the analysis methods.

pub mod analysis;
pub mod dataset;
pub mod design;
pub mod error;
pub mod estimand;
pub mod inference;
pub mod matrix;
pub mod rng;
pub mod simlab;
pub mod similarity;
pub mod stats;

pub use analysis::{AnalysisContext, AnalysisMethod, AnalysisOutcome, WeightingConfig};
pub use dataset::{
    CovValue, CovariateKind, CovariateRole, CovariateSpec, DesignEncoder, DesignMatrixBundle,
    Formula, PatientRecord, Predicate, Schema, TrialDataset,
};
pub use error::{Error, Result};
pub use estimand::{DecisionRule, EstimandDraws, SubgroupSpec};
pub use inference::{
    ParameterVector, PosteriorDraws, PriorSpec, SamplerConfig, WeightedModel,
};
pub use matrix::Matrix;
pub use similarity::{Normalization, SimilarityModel, Truncation, WeightVector};
