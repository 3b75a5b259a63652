//! Bayesian trial design with design priors extracted from external data.
//!
//! The posterior of the analysis model given the external data alone is
//! split by whether the marginal subgroup effect falls inside the
//! alternative region. Internal trials are then simulated from either part,
//! analyzed, and the share of trials that reject the null gives the Bayesian
//! type-I error (null part) or power (alternative part).

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisContext, AnalysisMethod};
use crate::dataset::{DesignEncoder, DesignMatrixBundle, TrialDataset};
use crate::error::{Error, Result};
use crate::estimand::{gamma_at, DecisionRule, SubgroupSpec};
use crate::inference::{sample_posterior, PosteriorDraws, PriorSpec, SamplerConfig, WeightedModel};
use crate::matrix::{dot, Matrix};
use crate::rng::{child_seed, substream, StreamRng};
use crate::similarity::WeightVector;
use crate::stats::inv_logit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Effect outside the alternative region.
    Null,
    /// Effect inside the alternative region.
    Alternative,
    /// No conditioning.
    Unconditioned,
}

/// Parameter draws to simulate trials from, plus the covariate rows that
/// simulated patients are resampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPrior {
    pub hypothesis: Hypothesis,
    pub p: usize,
    pub q: usize,
    pub draws: Matrix,
    /// Marginal effect of each draw on the design reference rows.
    pub gamma: Vec<f64>,
    pub retained_fraction: f64,
    pub covariates: TrialDataset,
}

impl DesignPrior {
    /// A prior concentrated on a single parameter vector.
    pub fn point(theta: &[f64], p: usize, hypothesis: Hypothesis, covariates: TrialDataset) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::Empty("covariate generator".into()));
        }
        Ok(DesignPrior {
            hypothesis,
            p,
            q: theta.len() - p,
            draws: Matrix::from_vec(1, theta.len(), theta.to_vec()),
            gamma: vec![f64::NAN],
            retained_fraction: 1.0,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }
}

/// Posterior given external data only, under a proper baseline prior.
/// Directions the external data do not inform revert to the prior.
pub fn external_posterior(
    external: &TrialDataset,
    weights: Option<&WeightVector>,
    baseline: &PriorSpec,
    encoder: &DesignEncoder,
    sampler: &SamplerConfig,
) -> Result<PosteriorDraws> {
    if !baseline.is_proper() {
        return Err(Error::InvalidArgument(
            "the baseline design prior must be proper; external data may not identify every coefficient".into(),
        ));
    }
    let design = encoder.build(external)?;
    let ones;
    let w = match weights {
        Some(w) => w,
        None => {
            ones = WeightVector::constant(external.len(), 1.0)?;
            &ones
        }
    };
    let empty = DesignMatrixBundle::empty(encoder.p(), encoder.q());
    let model = WeightedModel::new(&empty, Some((&design, w)), baseline.clone())?;
    let mut draws = sample_posterior(&model, sampler)?;
    draws.names = encoder.coefficient_names();
    Ok(draws)
}

pub const DEFAULT_MIN_DRAWS: usize = 200;

/// Split draws by whether their uniformly averaged marginal effect lies in
/// the rule's interval.
pub fn split_design_priors(
    draws: &PosteriorDraws,
    rule: &DecisionRule,
    reference: &SubgroupSpec,
    covariates: &TrialDataset,
    min_draws: usize,
) -> Result<(DesignPrior, DesignPrior)> {
    let gamma: Vec<f64> = (0..draws.len())
        .map(|r| gamma_at(draws.beta(r), draws.psi(r), reference, None))
        .collect();
    let total = draws.len() as f64;
    let mut parts = [
        (Hypothesis::Null, Matrix::zeros(0, draws.dim()), Vec::new()),
        (Hypothesis::Alternative, Matrix::zeros(0, draws.dim()), Vec::new()),
    ];
    for (r, &g) in gamma.iter().enumerate() {
        let k = usize::from(rule.contains(g));
        parts[k].1.push_row(draws.draws.row(r));
        parts[k].2.push(g);
    }
    for (h, m, _) in &parts {
        if m.nrows() < min_draws {
            return Err(Error::Starvation(format!(
                "{h:?} design prior keeps {} of {} draws (minimum {min_draws}); supply that prior manually",
                m.nrows(),
                draws.len()
            )));
        }
    }
    let [(h0, m0, g0), (h1, m1, g1)] = parts;
    let make = |hypothesis, draws: Matrix, gamma: Vec<f64>| DesignPrior {
        hypothesis,
        p: reference.reference_x.ncols(),
        q: reference.s.len(),
        retained_fraction: draws.nrows() as f64 / total,
        draws,
        gamma,
        covariates: covariates.clone(),
    };
    Ok((make(h0, m0, g0), make(h1, m1, g1)))
}

/// All draws as one design prior, without conditioning on the effect.
pub fn unconditioned_prior(
    draws: &PosteriorDraws,
    reference: &SubgroupSpec,
    covariates: &TrialDataset,
) -> Result<DesignPrior> {
    if draws.is_empty() || covariates.is_empty() {
        return Err(Error::Empty("design prior".into()));
    }
    Ok(DesignPrior {
        hypothesis: Hypothesis::Unconditioned,
        p: draws.p,
        q: draws.q,
        draws: draws.draws.clone(),
        gamma: (0..draws.len())
            .map(|r| gamma_at(draws.beta(r), draws.psi(r), reference, None))
            .collect(),
        retained_fraction: 1.0,
        covariates: covariates.clone(),
    })
}

/// A simulated internal trial and the parameters it was generated from.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub data: TrialDataset,
    pub theta: Vec<f64>,
}

/// Draw `theta` from the prior, resample `n` covariate rows, randomize arms
/// with probability `allocation` of arm 1 and generate outcomes.
pub fn simulate_internal_trial(
    prior: &DesignPrior,
    encoder: &DesignEncoder,
    n: usize,
    allocation: f64,
    rng: &mut StreamRng,
) -> Result<SimulatedTrial> {
    if n == 0 {
        return Err(Error::InvalidArgument("trial size must be positive".into()));
    }
    if !(allocation > 0.0 && allocation < 1.0) {
        return Err(Error::InvalidArgument("allocation must lie in (0, 1)".into()));
    }
    if prior.is_empty() || prior.covariates.is_empty() {
        return Err(Error::Empty("design prior".into()));
    }
    let r = rng.random_range(0..prior.len());
    let theta = prior.draws.row(r).to_vec();
    let (beta, psi) = theta.split_at(prior.p);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..prior.covariates.len())).collect();
    let base = prior.covariates.select(&idx, "simulated");
    let mut arms = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let (mut x, mut s) = (vec![0.0; encoder.p()], vec![0.0; encoder.q()]);
    for rec in base.patients() {
        let a = u8::from(rng.random::<f64>() < allocation);
        encoder.encode_into(&rec.covariates, &mut x, &mut s)?;
        let eta = dot(&x, beta) + f64::from(a) * dot(&s, psi);
        outcomes.push(u8::from(rng.random::<f64>() < inv_logit(eta)));
        arms.push(a);
    }
    Ok(SimulatedTrial {
        data: base.with_assignments(&arms, &outcomes, "simulated")?,
        theta,
    })
}

/// Trial-level settings shared by operating-characteristic runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSettings {
    pub allocation: f64,
    pub n_reps: usize,
    /// Largest tolerated share of non-converged replicates.
    pub max_excluded: f64,
}

impl Default for TrialSettings {
    fn default() -> Self {
        TrialSettings {
            allocation: 0.5,
            n_reps: 100,
            max_excluded: 0.05,
        }
    }
}

/// Decision probabilities of every analysis variant on the same simulated
/// trials. `taus[v][rep]` is `None` when the fit did not converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSample {
    pub n_internal: usize,
    pub variants: Vec<String>,
    pub taus: Vec<Vec<Option<f64>>>,
}

impl TauSample {
    /// Converged decision probabilities of variant `v`.
    pub fn converged(&self, v: usize) -> Vec<f64> {
        self.taus[v].iter().flatten().copied().collect()
    }

    pub fn excluded(&self, v: usize) -> usize {
        self.taus[v].iter().filter(|t| t.is_none()).count()
    }
}

/// Simulate `n_reps` trials of size `n` and analyze each with every method.
/// Trial `rep` depends only on `(seed, n, rep)`, so every method sees the
/// same trials.
pub fn simulate_taus(
    prior: &DesignPrior,
    ctx: &AnalysisContext,
    methods: &[(String, AnalysisMethod)],
    n: usize,
    settings: &TrialSettings,
    seed: u64,
) -> Result<TauSample> {
    if settings.n_reps == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let label = format!("trial-n{n}");
    let per_rep: Vec<Vec<Option<f64>>> = (0..settings.n_reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Option<f64>>> {
            let mut rng = substream(seed, &label, rep as u64);
            let trial = simulate_internal_trial(prior, &ctx.encoder, n, settings.allocation, &mut rng)?;
            let analysis_seed = child_seed(seed, "analysis", rep as u64);
            methods
                .iter()
                .map(|(_, m)| {
                    let out = ctx.analyze(m, &trial.data, analysis_seed)?;
                    Ok(out.converged.then_some(out.tau))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut taus = vec![Vec::with_capacity(settings.n_reps); methods.len()];
    for row in per_rep {
        for (v, t) in row.into_iter().enumerate() {
            taus[v].push(t);
        }
    }
    let sample = TauSample {
        n_internal: n,
        variants: methods.iter().map(|(l, _)| l.clone()).collect(),
        taus,
    };
    for v in 0..methods.len() {
        let excluded = sample.excluded(v);
        if excluded as f64 > settings.max_excluded * settings.n_reps as f64 {
            return Err(Error::Convergence {
                excluded,
                total: settings.n_reps,
            });
        }
        if excluded > 0 {
            log::warn!("{}: {excluded} non-converged replicates excluded", sample.variants[v]);
        }
    }
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub rejection_rate: f64,
    pub mc_standard_error: f64,
    /// Replicates used (converged).
    pub n_reps: usize,
    pub excluded: usize,
    pub n_internal: usize,
    pub threshold: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: String,
}

/// Rejection rate of `tau > threshold` over a stored sample.
pub fn rejection_rate(taus: &[f64], threshold: f64) -> f64 {
    if taus.is_empty() {
        return f64::NAN;
    }
    taus.iter().filter(|&&t| t > threshold).count() as f64 / taus.len() as f64
}

/// Operating characteristics from converged decision probabilities.
pub fn summarize_oc(taus: &[f64], excluded: usize, n: usize, rule: &DecisionRule, method: &str) -> OperatingCharacteristics {
    let r = rejection_rate(taus, rule.threshold);
    OperatingCharacteristics {
        rejection_rate: r,
        mc_standard_error: (r * (1.0 - r) / taus.len() as f64).sqrt(),
        n_reps: taus.len(),
        excluded,
        n_internal: n,
        threshold: rule.threshold,
        lower: rule.lower,
        upper: rule.upper,
        method: method.to_string(),
    }
}

/// Type-I error (null prior) or power (alternative prior) of one analysis.
pub fn operating_characteristics(
    prior: &DesignPrior,
    ctx: &AnalysisContext,
    method: &AnalysisMethod,
    n: usize,
    settings: &TrialSettings,
    seed: u64,
) -> Result<OperatingCharacteristics> {
    let label = method.label().to_string();
    let sample = simulate_taus(prior, ctx, &[(label.clone(), method.clone())], n, settings, seed)?;
    Ok(summarize_oc(&sample.converged(0), sample.excluded(0), n, &ctx.rule, &label))
}

/// Smallest grid threshold whose rejection rate on `taus` is within budget.
/// Returns the threshold and its rate.
pub fn calibrate_from_taus(taus: &[f64], nu_grid: &[f64], budget: f64) -> Result<(f64, f64)> {
    if nu_grid.is_empty() || nu_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("threshold grid must be non-empty and ascending".into()));
    }
    if nu_grid.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::InvalidArgument("thresholds must lie in (0, 1)".into()));
    }
    let mut best = (nu_grid[0], f64::INFINITY);
    for &nu in nu_grid {
        let rate = rejection_rate(taus, nu);
        if rate <= budget {
            return Ok((nu, rate));
        }
        if rate < best.1 {
            best = (nu, rate);
        }
    }
    Err(Error::Infeasible {
        budget,
        best_nu: best.0,
        best_rate: best.1,
    })
}

/// Calibrate the decision threshold on simulated null trials.
pub fn calibrate_nu(
    null_prior: &DesignPrior,
    ctx: &AnalysisContext,
    method: &AnalysisMethod,
    n: usize,
    budget: f64,
    nu_grid: &[f64],
    settings: &TrialSettings,
    seed: u64,
) -> Result<Calibration> {
    let label = method.label().to_string();
    let sample = simulate_taus(null_prior, ctx, &[(label, method.clone())], n, settings, seed)?;
    let taus = sample.converged(0);
    let (nu, rate) = calibrate_from_taus(&taus, nu_grid, budget)?;
    Ok(Calibration {
        threshold: nu,
        type_one_error: rate,
        taus,
        excluded: sample.excluded(0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub type_one_error: f64,
    /// The null decision probabilities the threshold was chosen on.
    pub taus: Vec<f64>,
    pub excluded: usize,
}

/// How a power-curve variant chooses its decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdChoice {
    Fixed(f64),
    /// Calibrated on null trials at every sample size.
    Calibrated { budget: f64, grid: Vec<f64> },
    /// One threshold for every variant marked shared: the smallest grid
    /// value that meets the budget for each of them at that sample size.
    Shared { budget: f64, grid: Vec<f64> },
}

impl ThresholdChoice {
    fn needs_null(&self) -> bool {
        !matches!(self, ThresholdChoice::Fixed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerVariant {
    pub label: String,
    pub method: AnalysisMethod,
    pub threshold: ThresholdChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub n: usize,
    pub variant: String,
    pub threshold: f64,
    pub power: f64,
    pub mc_se: f64,
    pub type_one_error: Option<f64>,
    pub excluded: usize,
}

/// Power of every variant at every grid size, with common random numbers
/// across variants. Calibrated and shared thresholds need `null_prior`;
/// with it, every point also reports the type-I error at its threshold.
pub fn power_curve(
    alt_prior: &DesignPrior,
    null_prior: Option<&DesignPrior>,
    ctx: &AnalysisContext,
    variants: &[PowerVariant],
    n_grid: &[usize],
    settings: &TrialSettings,
    seed: u64,
) -> Result<Vec<PowerPoint>> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("sample-size grid must be ascending".into()));
    }
    let methods: Vec<(String, AnalysisMethod)> = variants.iter().map(|v| (v.label.clone(), v.method.clone())).collect();
    let needs_null = variants.iter().any(|v| v.threshold.needs_null());
    let shared: Vec<usize> = (0..variants.len())
        .filter(|&v| matches!(variants[v].threshold, ThresholdChoice::Shared { .. }))
        .collect();
    let mut out = Vec::new();
    for &n in n_grid {
        log::info!("power curve: n = {n}");
        // Null trials are simulated whenever a null prior is given, so fixed
        // thresholds also report their type-I error.
        let null_sample = match null_prior {
            Some(prior) => Some(simulate_taus(prior, ctx, &methods, n, settings, child_seed(seed, "null", 0))?),
            None if needs_null => {
                return Err(Error::InvalidArgument("calibrated thresholds need a null design prior".into()))
            }
            None => None,
        };
        let alt = simulate_taus(alt_prior, ctx, &methods, n, settings, child_seed(seed, "alternative", 0))?;
        let mut shared_nu = None;
        for &v in &shared {
            if let ThresholdChoice::Shared { budget, grid } = &variants[v].threshold {
                let taus = null_sample.as_ref().expect("null sample").converged(v);
                let (nu, _) = calibrate_from_taus(&taus, grid, *budget)?;
                shared_nu = Some(shared_nu.map_or(nu, |s: f64| s.max(nu)));
            }
        }
        for (v, variant) in variants.iter().enumerate() {
            let (threshold, type_one_error) = match &variant.threshold {
                ThresholdChoice::Fixed(nu) => (
                    *nu,
                    null_sample.as_ref().map(|ns| rejection_rate(&ns.converged(v), *nu)),
                ),
                ThresholdChoice::Calibrated { budget, grid } => {
                    let taus = null_sample.as_ref().expect("null sample").converged(v);
                    let (nu, rate) = calibrate_from_taus(&taus, grid, *budget)?;
                    (nu, Some(rate))
                }
                ThresholdChoice::Shared { .. } => {
                    let nu = shared_nu.expect("shared threshold");
                    let taus = null_sample.as_ref().expect("null sample").converged(v);
                    (nu, Some(rejection_rate(&taus, nu)))
                }
            };
            let taus = alt.converged(v);
            let power = rejection_rate(&taus, threshold);
            out.push(PowerPoint {
                n,
                variant: variant.label.clone(),
                threshold,
                power,
                mc_se: (power * (1.0 - power) / taus.len() as f64).sqrt(),
                type_one_error,
                excluded: alt.excluded(v),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    /// Smallest grid size reaching the target.
    pub grid: usize,
    /// Linear interpolation between the bracketing grid points.
    pub interpolated: f64,
}

pub fn sample_size(curve: &[PowerPoint], variant: &str, target: f64) -> Result<SampleSize> {
    let mut pts: Vec<(usize, f64)> = curve.iter().filter(|p| p.variant == variant).map(|p| (p.n, p.power)).collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument(format!("no curve points for variant '{variant}'")));
    }
    pts.sort_by_key(|p| p.0);
    let max_power = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let k = pts
        .iter()
        .position(|p| p.1 >= target)
        .ok_or(Error::Unreachable { target, max_power })?;
    let interpolated = if k == 0 {
        pts[0].0 as f64
    } else {
        let (n0, p0) = (pts[k - 1].0 as f64, pts[k - 1].1);
        let (n1, p1) = (pts[k].0 as f64, pts[k].1);
        n0 + (target - p0) / (p1 - p0) * (n1 - n0)
    };
    Ok(SampleSize {
        grid: pts[k].0,
        interpolated,
    })
}

/// Enlarge external data by resampling with replacement within each arm,
/// keeping the arm proportions of the source.
pub fn synthesize_external(data: &TrialDataset, n_total: usize, seed: u64) -> Result<TrialDataset> {
    if data.is_empty() {
        return Err(Error::Empty("external data to resample".into()));
    }
    let mut rng = substream(seed, "synthesize", 0);
    let strata: Vec<Vec<usize>> = (0..=1u8)
        .map(|a| (0..data.len()).filter(|&i| data.patients()[i].arm == a).collect())
        .collect();
    let n = data.len() as f64;
    let n0 = ((strata[0].len() as f64 / n) * n_total as f64).round() as usize;
    let sizes = [n0, n_total - n0];
    let mut idx = Vec::with_capacity(n_total);
    for (stratum, &size) in strata.iter().zip(&sizes) {
        for _ in 0..size {
            idx.push(*stratum.choose(&mut rng).expect("non-empty stratum"));
        }
    }
    Ok(data.select(&idx, &format!("{}-resampled", data.source_id())))
}
