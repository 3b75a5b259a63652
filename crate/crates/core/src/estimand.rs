//! Subgroup quantities computed from posterior draws: conditional effects,
//! the sensitive set, the marginal risk difference `Gamma` and the decision
//! rule built on it.
//!
//! For draw `r` and reference rows `n = 1..N` with averaging weights `v_rn`
//! (Dirichlet(1) or uniform),
//!
//! ```text
//! Gamma_r = sum_n v_rn [F(x_n'beta_r + s'psi_r) - F(x_n'beta_r)]
//! ```
//!
//! where the modifier covariates in `x_n` are set to the subgroup's values.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovValue, DesignEncoder, TrialDataset};
use crate::error::{Error, Result};
use crate::inference::PosteriorDraws;
use crate::matrix::{dot, Matrix};
use crate::rng::substream;
use crate::stats::inv_logit;

/// The subgroup whose effect is summarized, and the covariate rows over
/// which the effect is averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSpec {
    /// Values of the effect-modifier covariates defining the subgroup.
    pub modifier_values: BTreeMap<String, String>,
    /// Encoded prognostic rows, with modifier covariates overridden.
    pub reference_x: Matrix,
    /// Encoded modifier design vector `s` of the subgroup.
    pub s: Vec<f64>,
    /// Where the reference rows came from.
    pub reference_source: String,
}

impl SubgroupSpec {
    /// Encode `reference` rows with every modifier covariate set to the
    /// subgroup's value. All modifiers of the formula must be given.
    pub fn new(
        encoder: &DesignEncoder,
        modifier_values: &BTreeMap<String, String>,
        reference: &TrialDataset,
    ) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::Empty(format!(
                "no reference rows in '{}' for the subgroup",
                reference.source_id()
            )));
        }
        let schema = encoder.schema();
        let mut overrides: Vec<(usize, CovValue)> = Vec::new();
        for (name, raw) in modifier_values {
            let idx = schema.require(name)?;
            overrides.push((idx, schema.parse_value(name, raw)?));
        }
        for name in encoder.modifier_covariates() {
            if !modifier_values.contains_key(&name) {
                return Err(Error::InvalidArgument(format!(
                    "subgroup does not fix effect modifier '{name}'"
                )));
            }
        }
        let (p, q) = (encoder.p(), encoder.q());
        let mut reference_x = Matrix::zeros(reference.len(), p);
        let mut s = vec![0.0; q];
        let mut s_row = vec![0.0; q];
        for (i, rec) in reference.patients().iter().enumerate() {
            let mut covs = rec.covariates.clone();
            for &(idx, v) in &overrides {
                covs[idx] = Some(v);
            }
            encoder.encode_into(&covs, reference_x.row_mut(i), &mut s_row)?;
            if i == 0 {
                s.copy_from_slice(&s_row);
            }
        }
        Ok(SubgroupSpec {
            modifier_values: modifier_values.clone(),
            reference_x,
            s,
            reference_source: reference.source_id().to_string(),
        })
    }

    /// Build directly from encoded rows.
    pub fn from_design(reference_x: Matrix, s: Vec<f64>, source: &str) -> Result<Self> {
        if reference_x.nrows() == 0 {
            return Err(Error::Empty("no reference rows for the subgroup".into()));
        }
        Ok(SubgroupSpec {
            modifier_values: BTreeMap::new(),
            reference_x,
            s,
            reference_source: source.to_string(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.reference_x.nrows()
    }
}

/// One marginal effect per posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandDraws {
    pub gamma: Vec<f64>,
    pub subgroup: SubgroupSpec,
    pub bootstrap: bool,
}

impl EstimandDraws {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Reject the null when `tau > threshold`, with
/// `tau = P(lower < Gamma < upper | data)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub lower: f64,
    pub upper: f64,
    pub threshold: f64,
}

impl DecisionRule {
    pub fn new(lower: f64, upper: f64, threshold: f64) -> Result<Self> {
        let rule = DecisionRule {
            lower,
            upper,
            threshold,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || self.lower.is_nan() || self.upper.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "interval ({}, {}) is empty",
                self.lower, self.upper
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn contains(&self, gamma: f64) -> bool {
        gamma > self.lower && gamma < self.upper
    }
}

/// `s'psi` for every draw.
pub fn conditional_effect_draws(draws: &PosteriorDraws, s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != draws.q {
        return Err(Error::Dimension {
            expected: draws.q,
            got: s.len(),
        });
    }
    Ok((0..draws.len()).map(|r| dot(draws.psi(r), s)).collect())
}

/// Candidates whose conditional effect exceeds `delta` with posterior
/// frequency above `1 - epsilon`.
pub fn sensitive_set(
    draws: &PosteriorDraws,
    candidates: &[Vec<f64>],
    delta: f64,
    epsilon: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for s in candidates {
        let g = conditional_effect_draws(draws, s)?;
        let freq = g.iter().filter(|&&v| v > delta).count() as f64 / g.len().max(1) as f64;
        if freq > 1.0 - epsilon {
            out.push(s.clone());
        }
    }
    Ok(out)
}

/// Risk difference averaged over reference rows with the given weights.
pub fn gamma_at(beta: &[f64], psi: &[f64], subgroup: &SubgroupSpec, weights: Option<&[f64]>) -> f64 {
    let effect = dot(psi, &subgroup.s);
    let n = subgroup.n_rows();
    let mut total = 0.0;
    for (i, x) in subgroup.reference_x.rows_iter().enumerate() {
        let base = dot(x, beta);
        let w = weights.map_or(1.0 / n as f64, |w| w[i]);
        total += w * (inv_logit(base + effect) - inv_logit(base));
    }
    total
}

/// Marginal subgroup effect per posterior draw. With `bootstrap`, the row
/// weights of draw `r` are Dirichlet(1, ..., 1), drawn from the stream
/// `(seed, r)`; otherwise rows are averaged uniformly.
pub fn marginal_effect_draws(
    draws: &PosteriorDraws,
    subgroup: &SubgroupSpec,
    bootstrap: bool,
    seed: u64,
) -> Result<EstimandDraws> {
    if subgroup.n_rows() == 0 {
        return Err(Error::Empty("no reference rows for the subgroup".into()));
    }
    if subgroup.reference_x.ncols() != draws.p || subgroup.s.len() != draws.q {
        return Err(Error::Dimension {
            expected: draws.p + draws.q,
            got: subgroup.reference_x.ncols() + subgroup.s.len(),
        });
    }
    let n = subgroup.n_rows();
    let gamma = (0..draws.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |w, r| {
                if bootstrap {
                    let mut rng = substream(seed, "bootstrap", r as u64);
                    let mut sum = 0.0;
                    for v in w.iter_mut() {
                        *v = rng.sample(Exp1);
                        sum += *v;
                    }
                    w.iter_mut().for_each(|v| *v /= sum);
                    gamma_at(draws.beta(r), draws.psi(r), subgroup, Some(w))
                } else {
                    gamma_at(draws.beta(r), draws.psi(r), subgroup, None)
                }
            },
        )
        .collect();
    Ok(EstimandDraws {
        gamma,
        subgroup: subgroup.clone(),
        bootstrap,
    })
}

/// Fraction of draws strictly inside `(lower, upper)`.
pub fn decision_probability(gamma: &[f64], interval: (f64, f64)) -> f64 {
    if gamma.is_empty() {
        return f64::NAN;
    }
    gamma.iter().filter(|&&g| g > interval.0 && g < interval.1).count() as f64 / gamma.len() as f64
}

pub fn decide(tau: f64, rule: &DecisionRule) -> bool {
    tau > rule.threshold
}

/// Summary used in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub lower_95: f64,
    pub upper_95: f64,
    pub tau: f64,
}

pub fn summarize(gamma: &[f64], interval: (f64, f64)) -> EstimandSummary {
    let mut sorted = gamma.to_vec();
    sorted.sort_by(f64::total_cmp);
    EstimandSummary {
        mean: crate::stats::mean(gamma),
        median: crate::stats::quantile_sorted(&sorted, 0.5),
        sd: crate::stats::sd(gamma),
        lower_95: crate::stats::quantile_sorted(&sorted, 0.025),
        upper_95: crate::stats::quantile_sorted(&sorted, 0.975),
        tau: decision_probability(gamma, interval),
    }
}

/// Histogram with `bins` equal-width bins spanning the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Histogram {
            edges: vec![],
            counts: vec![],
        };
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}
