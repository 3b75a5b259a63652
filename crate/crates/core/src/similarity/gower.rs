//! Gower similarity between each external patient and the internal sample.

use log::warn;

use crate::dataset::{CovValue, CovariateKind, TrialDataset};
use crate::error::{Error, Result};

use super::{weighting_covariates, WeightVector};

/// `w_n` = mean over internal patients of `1 - mean_k d_k`, where `d_k` is
/// the range-scaled absolute difference for continuous covariates (range over
/// both samples) and a 0/1 mismatch otherwise.
pub fn gower_weights(
    internal: &TrialDataset,
    external: &TrialDataset,
    weighting: Option<&[String]>,
) -> Result<WeightVector> {
    if internal.schema() != external.schema() {
        return Err(Error::Schema("internal and external schemas differ".into()));
    }
    if internal.is_empty() {
        return Err(Error::Empty("internal dataset".into()));
    }
    let schema = internal.schema();
    let cols = weighting_covariates(schema, weighting)?;
    for &k in &cols {
        if !internal.available()[k] || !external.available()[k] {
            return Err(Error::Similarity(format!(
                "'{}' must be observed in both sources for Gower weights",
                schema.covariates()[k].name
            )));
        }
    }
    if cols.is_empty() {
        return WeightVector::constant(external.len(), 1.0);
    }

    // Range per continuous covariate; zero means the covariate carries no
    // distance information.
    let ranges: Vec<Option<f64>> = cols
        .iter()
        .map(|&k| match schema.covariates()[k].kind {
            CovariateKind::Continuous => {
                let vals = internal
                    .patients()
                    .iter()
                    .chain(external.patients())
                    .filter_map(|p| p.covariates[k].map(CovValue::as_f64));
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                let r = hi - lo;
                if r <= 0.0 {
                    warn!(
                        "covariate '{}' has zero range; it contributes no Gower distance",
                        schema.covariates()[k].name
                    );
                }
                Some(r)
            }
            _ => None,
        })
        .collect();

    let kdist = |a: CovValue, b: CovValue, range: Option<f64>| -> f64 {
        match range {
            Some(r) if r > 0.0 => (a.as_f64() - b.as_f64()).abs() / r,
            Some(_) => 0.0,
            None => f64::from(u8::from(a != b)),
        }
    };

    let n_cols = cols.len() as f64;
    let weights = external
        .patients()
        .iter()
        .map(|e| {
            let total: f64 = internal
                .patients()
                .iter()
                .map(|i| {
                    let d: f64 = cols
                        .iter()
                        .zip(&ranges)
                        .map(|(&k, &r)| kdist(e.covariates[k].unwrap(), i.covariates[k].unwrap(), r))
                        .sum();
                    1.0 - d / n_cols
                })
                .sum();
            (total / internal.len() as f64).clamp(0.0, 1.0)
        })
        .collect();
    WeightVector::from_weights(weights)
}
