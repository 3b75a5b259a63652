//! Per-external-patient borrowing weights.
//!
//! Three scoring methods are offered: the posterior-predictive similarity
//! model ([`SimilarityModel`]), Gower similarity ([`gower_weights`]) and a
//! membership propensity model ([`propensity_weights`]). All of them produce a
//! [`WeightVector`] with entries in `[0, 1]`, which can then be truncated so
//! that the borrowed effective sample size stays below the trial size.

mod gower;
mod predictive;
mod propensity;
mod truncation;

use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateRole, Schema};
use crate::error::{Error, Result};

pub use gower::gower_weights;
pub use predictive::{
    compute_weights, fit_similarity_model, raw_weight, silverman_bandwidth, BandwidthRule,
    Component, Kde, Normalization, PredictiveMode, SimilarityModel, SimilarityOptions,
};
pub use propensity::{propensity_weights, PropensityOptions};
pub use truncation::{effective_sample_size, truncate, TruncationRule};

/// How a weight vector was truncated, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    None,
    /// Cumulative weight capped at the internal sample size.
    EssCap { cap: f64 },
    /// The lowest `fraction` of patients by weight discarded.
    Quantile { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    /// Score before normalization (equal to `weights` for methods that are
    /// already on the unit interval).
    pub raw: Vec<f64>,
    pub weights: Vec<f64>,
    pub truncation: Truncation,
    pub cutoff: Option<f64>,
    pub retained: Vec<bool>,
}

impl WeightVector {
    pub fn new(raw: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if raw.len() != weights.len() {
            return Err(Error::Dimension {
                expected: weights.len(),
                got: raw.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidArgument(format!("weight {w} outside [0, 1]")));
        }
        let n = weights.len();
        Ok(WeightVector {
            raw,
            weights,
            truncation: Truncation::None,
            cutoff: None,
            retained: vec![true; n],
        })
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights.clone(), weights)
    }

    /// Same weight for every patient; `1` is full borrowing, `0` none.
    pub fn constant(n: usize, w: f64) -> Result<Self> {
        Self::from_weights(vec![w; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Exponent actually applied to patient `i` (zero once truncated away).
    pub fn effective(&self, i: usize) -> f64 {
        if self.retained[i] {
            self.weights[i]
        } else {
            0.0
        }
    }

    pub fn effective_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.effective(i)).collect()
    }
}

/// Resolve the weighting covariates: an explicit list, or by default every
/// prognostic-only covariate. Effect modifiers are refused.
pub(crate) fn weighting_covariates(schema: &Schema, requested: Option<&[String]>) -> Result<Vec<usize>> {
    let names: Vec<String> = match requested {
        Some(r) => r.to_vec(),
        None => schema.prognostic_only(),
    };
    let mut idx = Vec::with_capacity(names.len());
    for name in &names {
        let i = schema.require(name)?;
        if schema.covariates()[i].role != CovariateRole::PrognosticOnly {
            return Err(Error::Similarity(format!(
                "'{name}' is an effect modifier; weighting on modifiers down-weights the sparse subgroups borrowing is meant to enrich"
            )));
        }
        if idx.contains(&i) {
            return Err(Error::Similarity(format!("'{name}' listed twice")));
        }
        idx.push(i);
    }
    Ok(idx)
}
