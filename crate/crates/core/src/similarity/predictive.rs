//! Posterior-predictive similarity: the weight of an external patient is the
//! predictive density of their weighting covariates under a model fitted to
//! the internal covariates.
//!
//! The model is a product of independent per-covariate factors:
//! a Gaussian kernel density estimate for continuous covariates, a
//! Beta-Binomial predictive for binary ones and a Dirichlet-Multinomial
//! predictive for categorical ones.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovValue, CovariateKind, Schema, TrialDataset};
use crate::error::{Error, Result};
use crate::stats;

use super::{weighting_covariates, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Silverman,
    Scott,
    Fixed(f64),
}

/// `Posterior` conditions the similarity model on the internal covariates.
/// `Prior` uses pseudocounts alone (continuous factors become flat).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMode {
    #[default]
    Posterior,
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityOptions {
    pub bandwidth: BandwidthRule,
    /// Pseudocount added to every binary/categorical cell.
    pub pseudocount: f64,
    pub mode: PredictiveMode,
}

impl Default for SimilarityOptions {
    fn default() -> Self {
        SimilarityOptions {
            bandwidth: BandwidthRule::Silverman,
            pseudocount: 1.0,
            mode: PredictiveMode::Posterior,
        }
    }
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub points: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((2.0 * PI).sqrt() * h * self.points.len() as f64);
        norm * self
            .points
            .iter()
            .map(|&xi| {
                let u = (x - xi) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
    }
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to the sd when the
/// IQR vanishes.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let sd = stats::sd(xs);
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (xs.len() as f64).powf(-0.2)
}

fn scott_bandwidth(xs: &[f64]) -> f64 {
    1.06 * stats::sd(xs) * (xs.len() as f64).powf(-0.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Component {
    /// `None` under the prior-predictive mode (flat factor).
    Continuous(Option<Kde>),
    Binary { p_one: f64 },
    Categorical { probs: Vec<f64> },
}

impl Component {
    fn factor(&self, v: CovValue) -> f64 {
        match (self, v) {
            (Component::Continuous(Some(kde)), CovValue::Num(x)) => kde.density(x),
            (Component::Continuous(None), _) => 1.0,
            (Component::Binary { p_one }, CovValue::Num(x)) => {
                if x == 1.0 {
                    *p_one
                } else {
                    1.0 - p_one
                }
            }
            (Component::Categorical { probs }, CovValue::Level(l)) => probs[l],
            // Unreachable for validated records.
            _ => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    schema: Arc<Schema>,
    /// Schema indices of the weighting covariates, paired with their factors.
    covariates: Vec<usize>,
    components: Vec<Component>,
    /// Per internal patient, the factor of each weighting covariate.
    internal_factors: Vec<Vec<f64>>,
}

impl SimilarityModel {
    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates
            .iter()
            .map(|&i| self.schema.covariates()[i].name.clone())
            .collect()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Largest raw weight among internal patients, using only the factors in
    /// `mask` (the covariates an external source actually observed).
    fn internal_max(&self, mask: &[bool]) -> f64 {
        self.internal_factors
            .iter()
            .map(|f| f.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).product::<f64>())
            .fold(0.0, f64::max)
    }

    /// Product of the available factors; the mask records which were used.
    fn raw_masked(&self, z: &[Option<CovValue>]) -> Result<(f64, Vec<bool>)> {
        if z.len() != self.schema.len() {
            return Err(Error::Dimension {
                expected: self.schema.len(),
                got: z.len(),
            });
        }
        let mut w = 1.0;
        let mut mask = Vec::with_capacity(self.covariates.len());
        for (&k, comp) in self.covariates.iter().zip(&self.components) {
            match z[k] {
                Some(v) => {
                    w *= comp.factor(v);
                    mask.push(true);
                }
                None => mask.push(false),
            }
        }
        Ok((w, mask))
    }
}

pub fn fit_similarity_model(
    internal: &TrialDataset,
    weighting: Option<&[String]>,
    options: &SimilarityOptions,
) -> Result<SimilarityModel> {
    let schema = internal.schema().clone();
    let covariates = weighting_covariates(&schema, weighting)?;
    if internal.is_empty() {
        return Err(Error::Empty("internal dataset".into()));
    }
    if options.pseudocount <= 0.0 || !options.pseudocount.is_finite() {
        return Err(Error::InvalidArgument("pseudocount must be positive".into()));
    }
    let n = internal.len() as f64;
    let prior_only = options.mode == PredictiveMode::Prior;
    let mut components = Vec::with_capacity(covariates.len());
    for &k in &covariates {
        let spec = &schema.covariates()[k];
        if !internal.available()[k] {
            return Err(Error::Similarity(format!(
                "'{}' is not observed in the internal data",
                spec.name
            )));
        }
        let column: Vec<CovValue> = internal
            .patients()
            .iter()
            .map(|p| p.covariates[k].expect("available covariate"))
            .collect();
        let a = options.pseudocount;
        let comp = match &spec.kind {
            CovariateKind::Continuous => {
                if prior_only {
                    Component::Continuous(None)
                } else {
                    let xs: Vec<f64> = column.iter().map(|v| v.as_f64()).collect();
                    let h = match options.bandwidth {
                        BandwidthRule::Silverman => silverman_bandwidth(&xs),
                        BandwidthRule::Scott => scott_bandwidth(&xs),
                        BandwidthRule::Fixed(h) => h,
                    };
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(Error::Similarity(format!(
                            "'{}' has no spread in the internal data (bandwidth {h}); declare it binary or categorical, or drop it from the weighting set",
                            spec.name
                        )));
                    }
                    Component::Continuous(Some(Kde { points: xs, bandwidth: h }))
                }
            }
            CovariateKind::Binary => {
                let ones = if prior_only {
                    0.0
                } else {
                    column.iter().filter(|v| v.as_f64() == 1.0).count() as f64
                };
                let total = if prior_only { 0.0 } else { n };
                Component::Binary {
                    p_one: (ones + a) / (total + 2.0 * a),
                }
            }
            CovariateKind::Categorical { levels } => {
                let mut counts = vec![0.0; levels.len()];
                if !prior_only {
                    for v in &column {
                        if let CovValue::Level(l) = v {
                            counts[*l] += 1.0;
                        }
                    }
                }
                let total: f64 = counts.iter().sum::<f64>() + a * levels.len() as f64;
                Component::Categorical {
                    probs: counts.iter().map(|c| (c + a) / total).collect(),
                }
            }
        };
        components.push(comp);
    }
    let internal_factors = internal
        .patients()
        .iter()
        .map(|p| {
            covariates
                .iter()
                .zip(&components)
                .map(|(&k, c)| c.factor(p.covariates[k].expect("available covariate")))
                .collect()
        })
        .collect();
    Ok(SimilarityModel {
        schema,
        covariates,
        components,
        internal_factors,
    })
}

/// Unnormalized predictive density of `z` (schema-aligned). Every weighting
/// covariate must be present.
pub fn raw_weight(model: &SimilarityModel, z: &[Option<CovValue>]) -> Result<f64> {
    let (w, mask) = model.raw_masked(z)?;
    if let Some(j) = mask.iter().position(|m| !m) {
        return Err(Error::Similarity(format!(
            "missing value for weighting covariate '{}'",
            model.schema.covariates()[model.covariates[j]].name
        )));
    }
    Ok(w)
}

/// How raw predictive densities are mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the largest raw weight among internal patients.
    #[default]
    MaxInternal,
    /// Divide by the largest raw weight among external patients.
    MaxExternal,
    /// Use raw weights directly, clipped at one.
    CapAtOne,
}

/// Normalized weights for every external patient. Covariates a source never
/// recorded are marginalized out, which for a predictive density means their
/// factor is dropped from both the patient and the normalizer.
pub fn compute_weights(
    model: &SimilarityModel,
    external: &TrialDataset,
    normalization: Normalization,
) -> Result<WeightVector> {
    if external.schema() != &model.schema {
        return Err(Error::Schema("external data schema differs from the internal schema".into()));
    }
    let scored: Vec<(f64, Vec<bool>)> = external
        .patients()
        .par_iter()
        .map(|p| model.raw_masked(&p.covariates))
        .collect::<Result<_>>()?;

    let mut cache: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut normalizer = |mask: &Vec<bool>| -> f64 {
        if let Some((_, v)) = cache.iter().find(|(m, _)| m == mask) {
            return *v;
        }
        let v = match normalization {
            Normalization::MaxInternal => model.internal_max(mask),
            Normalization::MaxExternal => scored
                .iter()
                .filter(|(_, m)| m == mask)
                .map(|(w, _)| *w)
                .fold(0.0, f64::max),
            Normalization::CapAtOne => 1.0,
        };
        cache.push((mask.clone(), v));
        v
    };

    let mut raw = Vec::with_capacity(scored.len());
    let mut weights = Vec::with_capacity(scored.len());
    for (w, mask) in &scored {
        let norm = normalizer(mask);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Similarity(format!("normalizer is {norm}")));
        }
        raw.push(*w);
        weights.push((w / norm).min(1.0));
    }
    WeightVector::new(raw, weights)
}
