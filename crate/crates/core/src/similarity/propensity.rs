//! Membership propensity weights: a logistic model for "internal vs external"
//! fitted by (optionally ridge-penalized) maximum likelihood; an external
//! patient's weight is their estimated probability of internal membership.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{CovValue, CovariateKind, TrialDataset};
use crate::error::{Error, Result};
use crate::stats::inv_logit;

use super::{weighting_covariates, WeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensityOptions {
    /// Ridge penalty on the non-intercept coefficients (standardized scale).
    pub penalty: f64,
    pub max_iter: usize,
}

impl Default for PropensityOptions {
    fn default() -> Self {
        PropensityOptions {
            penalty: 0.0,
            max_iter: 100,
        }
    }
}

/// Linear-predictor magnitude beyond which an unpenalized fit is treated as
/// separated.
const SEPARATION_LP: f64 = 30.0;

pub fn propensity_weights(
    internal: &TrialDataset,
    external: &TrialDataset,
    weighting: Option<&[String]>,
    options: &PropensityOptions,
) -> Result<WeightVector> {
    if internal.schema() != external.schema() {
        return Err(Error::Schema("internal and external schemas differ".into()));
    }
    if options.penalty < 0.0 || !options.penalty.is_finite() {
        return Err(Error::InvalidArgument("penalty must be non-negative".into()));
    }
    let schema = internal.schema();
    let cols = weighting_covariates(schema, weighting)?;
    let n_int = internal.len();
    let n = n_int + external.len();
    if n_int == 0 || external.is_empty() {
        return Err(Error::Empty("propensity model needs both sources".into()));
    }

    // Build the pooled design: intercept, standardized continuous columns,
    // binary columns as-is, categorical dummies against the first level.
    let rows: Vec<&[Option<CovValue>]> = internal
        .patients()
        .iter()
        .chain(external.patients())
        .map(|p| p.covariates.as_slice())
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for &k in &cols {
        let spec = &schema.covariates()[k];
        let values: Vec<CovValue> = rows
            .iter()
            .map(|r| {
                r[k].ok_or_else(|| {
                    Error::Similarity(format!("'{}' must be observed in both sources", spec.name))
                })
            })
            .collect::<Result<_>>()?;
        match &spec.kind {
            CovariateKind::Continuous => {
                let xs: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
                let m = crate::stats::mean(&xs);
                let s = crate::stats::sd(&xs);
                let s = if s > 0.0 { s } else { 1.0 };
                columns.push(xs.iter().map(|x| (x - m) / s).collect());
            }
            CovariateKind::Binary => columns.push(values.iter().map(|v| v.as_f64()).collect()),
            CovariateKind::Categorical { levels } => {
                for l in 1..levels.len() {
                    columns.push(values.iter().map(|v| f64::from(u8::from(*v == CovValue::Level(l)))).collect());
                }
            }
        }
    }
    let d = columns.len();
    let x = DMatrix::from_fn(n, d, |i, j| columns[j][i]);
    let y = DVector::from_fn(n, |i, _| if i < n_int { 1.0 } else { 0.0 });

    let beta = fit_logistic(&x, &y, options)?;
    let lp = &x * &beta;
    let weights = (n_int..n).map(|i| inv_logit(lp[i])).collect();
    WeightVector::from_weights(weights)
}

fn penalized_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, penalty: f64) -> f64 {
    let lp = x * beta;
    let ll: f64 = lp
        .iter()
        .zip(y.iter())
        .map(|(&eta, &yy)| yy * crate::stats::log_inv_logit(eta) + (1.0 - yy) * crate::stats::log_inv_logit(-eta))
        .sum();
    let ridge: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll - 0.5 * penalty * ridge
}

fn fit_logistic(x: &DMatrix<f64>, y: &DVector<f64>, options: &PropensityOptions) -> Result<DVector<f64>> {
    let (n, d) = x.shape();
    let frac = y.sum() / n as f64;
    let mut beta = DVector::zeros(d);
    beta[0] = (frac / (1.0 - frac)).ln();
    let mut current = penalized_loglik(x, y, &beta, options.penalty);
    let mut converged = false;
    for _ in 0..options.max_iter {
        let lp = x * &beta;
        let p = lp.map(inv_logit);
        let mut grad = x.transpose() * (y - &p);
        let w = p.map(|v| v * (1.0 - v));
        let mut hess = x.transpose() * DMatrix::from_diagonal(&w) * x;
        for j in 1..d {
            grad[j] -= options.penalty * beta[j];
            hess[(j, j)] += options.penalty;
        }
        let chol = hess.clone().cholesky().ok_or_else(|| {
            Error::Separation("information matrix is singular (collinear or separated covariates)".into())
        })?;
        let step = chol.solve(&grad);
        // Step halving keeps the objective monotone.
        let mut scale = 1.0;
        let mut next = &beta + &step;
        let mut value = penalized_loglik(x, y, &next, options.penalty);
        while value < current - 1e-12 && scale > 1e-8 {
            scale *= 0.5;
            next = &beta + &step * scale;
            value = penalized_loglik(x, y, &next, options.penalty);
        }
        beta = next;
        let delta = (value - current).abs();
        current = value;
        if step.amax() * scale < 1e-10 || delta < 1e-14 {
            converged = true;
            break;
        }
    }
    let max_lp = (x * &beta).amax();
    if options.penalty == 0.0 && (!converged || max_lp > SEPARATION_LP) {
        return Err(Error::Separation(format!(
            "linear predictor reached {max_lp:.1} (converged: {converged})"
        )));
    }
    if !converged {
        return Err(Error::Similarity("membership model did not converge".into()));
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CovariateSpec, PatientRecord, Schema};
    use std::sync::Arc;

    fn ds(schema: &Arc<Schema>, vals: &[f64]) -> TrialDataset {
        let recs = vals
            .iter()
            .map(|&v| PatientRecord {
                outcome: 0,
                arm: 0,
                covariates: vec![Some(CovValue::Num(v))],
            })
            .collect();
        TrialDataset::new("d", schema.clone(), recs).unwrap()
    }

    #[test]
    fn intercept_only_gives_membership_fraction() {
        let schema = Arc::new(Schema::new(vec![CovariateSpec::continuous("x")]).unwrap());
        let w = propensity_weights(
            &ds(&schema, &[0.1, 0.2, 0.3]),
            &ds(&schema, &[1.0, 2.0, 3.0, 4.0, 5.0]),
            Some(&[]),
            &PropensityOptions::default(),
        )
        .unwrap();
        for v in w.weights {
            assert!((v - 3.0 / 8.0).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_distributions_give_half() {
        let schema = Arc::new(Schema::new(vec![CovariateSpec::continuous("x")]).unwrap());
        let vals: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let w = propensity_weights(&ds(&schema, &vals), &ds(&schema, &vals), None, &PropensityOptions::default())
            .unwrap();
        for v in w.weights {
            assert!((v - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn separation_needs_penalty() {
        let schema = Arc::new(Schema::new(vec![CovariateSpec::continuous("x")]).unwrap());
        let internal = ds(&schema, &[0.0, 0.1, 0.2, 0.3]);
        let external = ds(&schema, &[5.0, 5.1, 5.2, 5.3]);
        let err = propensity_weights(&internal, &external, None, &PropensityOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Separation(_)), "{err}");

        let opts = PropensityOptions {
            penalty: 1.0,
            ..Default::default()
        };
        let w = propensity_weights(&internal, &external, None, &opts).unwrap();
        for v in w.weights {
            assert!(v < 0.5 && v > 1e-6, "{v}");
        }
    }
}
