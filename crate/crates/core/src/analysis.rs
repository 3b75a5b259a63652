//! One complete analysis of an internal trial: weights, posterior sampling,
//! marginal subgroup effect and decision probability.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{split_subgroup, DesignEncoder, DesignMatrixBundle, Predicate, TrialDataset};
use crate::error::{Error, Result};
use crate::estimand::{self, DecisionRule, EstimandDraws, EstimandSummary, SubgroupSpec};
use crate::inference::{sample_posterior, PosteriorDraws, PriorSpec, SamplerConfig, WeightedModel};
use crate::rng::child_seed;
use crate::similarity::{
    compute_weights, effective_sample_size, fit_similarity_model, gower_weights, propensity_weights, truncate,
    Normalization, PropensityOptions, SimilarityOptions, TruncationRule, WeightVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    #[default]
    Predictive,
    Gower,
    Propensity,
}

/// Truncation as configured; the ESS cap resolves to the internal sample
/// size at analysis time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationSetting {
    #[default]
    None,
    EssCap,
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingConfig {
    pub method: WeightMethod,
    /// Weighting covariates; all prognostic-only covariates when absent.
    pub covariates: Option<Vec<String>>,
    pub normalization: Normalization,
    pub truncation: TruncationSetting,
    pub similarity: SimilarityOptions,
    pub propensity: PropensityOptions,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            method: WeightMethod::Predictive,
            covariates: None,
            normalization: Normalization::MaxInternal,
            truncation: TruncationSetting::None,
            similarity: SimilarityOptions::default(),
            propensity: PropensityOptions::default(),
        }
    }
}

impl WeightingConfig {
    pub fn with_covariates(mut self, names: &[&str]) -> Self {
        self.covariates = Some(names.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_truncation(mut self, t: TruncationSetting) -> Self {
        self.truncation = t;
        self
    }

    /// Weights for every external patient, truncated as configured.
    pub fn compute(&self, internal: &TrialDataset, external: &TrialDataset) -> Result<WeightVector> {
        let covs = self.covariates.as_deref();
        let raw = match self.method {
            WeightMethod::Predictive => {
                let model = fit_similarity_model(internal, covs, &self.similarity)?;
                compute_weights(&model, external, self.normalization)?
            }
            WeightMethod::Gower => gower_weights(internal, external, covs)?,
            WeightMethod::Propensity => propensity_weights(internal, external, covs, &self.propensity)?,
        };
        match self.truncation {
            TruncationSetting::None => Ok(raw),
            TruncationSetting::EssCap => truncate(&raw, TruncationRule::EssCap(internal.len() as f64)),
            TruncationSetting::Quantile(f) => truncate(&raw, TruncationRule::Quantile(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisMethod {
    /// Internal data only.
    NoBorrow,
    /// Internal and external data pooled with weight one.
    FullBorrow,
    /// External patients weighted individually.
    Weighted(WeightingConfig),
}

impl AnalysisMethod {
    pub fn label(&self) -> &'static str {
        match self {
            AnalysisMethod::NoBorrow => "no_borrow",
            AnalysisMethod::FullBorrow => "full_borrow",
            AnalysisMethod::Weighted(_) => "weighted",
        }
    }
}

/// Which covariate rows the marginal effect averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceRows {
    /// Internal patients belonging to the subgroup.
    #[default]
    InternalSubgroup,
    /// All internal patients.
    Internal,
    /// External patients belonging to the subgroup.
    ExternalSubgroup,
}

/// Everything needed to analyze an internal dataset except the data itself.
#[derive(Debug, Clone)]
pub struct AnalysisContext {
    pub encoder: DesignEncoder,
    pub external: Option<TrialDataset>,
    external_design: Option<DesignMatrixBundle>,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    /// Modifier covariate values defining the subgroup.
    pub subgroup: BTreeMap<String, String>,
    pub reference: ReferenceRows,
    pub rule: DecisionRule,
    pub bootstrap: bool,
}

/// Summary of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub method: String,
    pub tau: f64,
    pub reject: bool,
    pub gamma: EstimandSummary,
    pub converged: bool,
    /// Sum of effective external weights (zero without borrowing).
    pub borrowed_ess: f64,
    pub posterior_mean: Vec<f64>,
    pub posterior_sd: Vec<f64>,
}

impl AnalysisContext {
    pub fn new(
        encoder: DesignEncoder,
        external: Option<TrialDataset>,
        prior: PriorSpec,
        sampler: SamplerConfig,
        subgroup: BTreeMap<String, String>,
        rule: DecisionRule,
    ) -> Result<Self> {
        rule.validate()?;
        sampler.validate()?;
        let d = encoder.p() + encoder.q();
        if prior.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: prior.dim(),
            });
        }
        let external_design = external.as_ref().map(|e| encoder.build(e)).transpose()?;
        for name in subgroup.keys() {
            encoder.schema().require(name)?;
        }
        Ok(AnalysisContext {
            encoder,
            external,
            external_design,
            prior,
            sampler,
            subgroup,
            reference: ReferenceRows::InternalSubgroup,
            rule,
            bootstrap: true,
        })
    }

    pub fn with_reference(mut self, reference: ReferenceRows) -> Self {
        self.reference = reference;
        self
    }

    pub fn with_bootstrap(mut self, bootstrap: bool) -> Self {
        self.bootstrap = bootstrap;
        self
    }

    fn require_external(&self) -> Result<(&TrialDataset, &DesignMatrixBundle)> {
        match (&self.external, &self.external_design) {
            (Some(e), Some(d)) => Ok((e, d)),
            _ => Err(Error::InvalidArgument("this analysis method needs external data".into())),
        }
    }

    /// External weights implied by `method`, if it borrows.
    pub fn weights(&self, method: &AnalysisMethod, internal: &TrialDataset) -> Result<Option<WeightVector>> {
        match method {
            AnalysisMethod::NoBorrow => Ok(None),
            AnalysisMethod::FullBorrow => {
                let (ext, _) = self.require_external()?;
                Ok(Some(WeightVector::constant(ext.len(), 1.0)?))
            }
            AnalysisMethod::Weighted(cfg) => {
                let (ext, _) = self.require_external()?;
                Ok(Some(cfg.compute(internal, ext)?))
            }
        }
    }

    pub fn model(&self, internal: &TrialDataset, weights: Option<&WeightVector>) -> Result<WeightedModel> {
        let design = self.encoder.build(internal)?;
        let external = match weights {
            Some(w) => Some((self.require_external()?.1, w)),
            None => None,
        };
        WeightedModel::new(&design, external, self.prior.clone())
    }

    pub fn fit(&self, model: &WeightedModel, seed: u64) -> Result<PosteriorDraws> {
        let cfg = self.sampler.clone().with_seed(child_seed(seed, "fit", 0));
        let mut draws = sample_posterior(model, &cfg)?;
        draws.names = self.encoder.coefficient_names();
        Ok(draws)
    }

    /// The subgroup with its reference rows resolved against `internal`.
    pub fn subgroup_spec(&self, internal: &TrialDataset) -> Result<SubgroupSpec> {
        let predicate = Predicate::from_pairs(self.subgroup.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        let rows = match self.reference {
            ReferenceRows::Internal => internal.clone(),
            ReferenceRows::InternalSubgroup => split_subgroup(internal, &predicate)?,
            ReferenceRows::ExternalSubgroup => split_subgroup(self.require_external()?.0, &predicate)?,
        };
        SubgroupSpec::new(&self.encoder, &self.subgroup, &rows)
    }

    pub fn estimate(&self, draws: &PosteriorDraws, internal: &TrialDataset, seed: u64) -> Result<EstimandDraws> {
        let spec = self.subgroup_spec(internal)?;
        estimand::marginal_effect_draws(draws, &spec, self.bootstrap, child_seed(seed, "bootstrap", 0))
    }

    /// Weights, fit, marginal effect and decision in one call.
    pub fn analyze(&self, method: &AnalysisMethod, internal: &TrialDataset, seed: u64) -> Result<AnalysisOutcome> {
        let weights = self.weights(method, internal)?;
        let model = self.model(internal, weights.as_ref())?;
        let draws = self.fit(&model, seed)?;
        let gamma = self.estimate(&draws, internal, seed)?;
        let summary = estimand::summarize(&gamma.gamma, self.rule.interval());
        Ok(AnalysisOutcome {
            method: method.label().to_string(),
            tau: summary.tau,
            reject: estimand::decide(summary.tau, &self.rule),
            gamma: summary,
            converged: draws.converged(),
            borrowed_ess: weights.as_ref().map_or(0.0, effective_sample_size),
            posterior_mean: draws.mean(),
            posterior_sd: draws.sd(),
        })
    }
}
