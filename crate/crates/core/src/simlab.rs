//! Scenario-based simulation study of the analysis methods.
//!
//! Three sources are generated from one logistic model with covariates
//! `x = (1, x1, x2, x3, x4)` and modifiers `s = (1, x4)`: an internal
//! randomized trial, a retrospective cohort (all control) and a single-arm
//! trial (all treated). Each source has its own covariate law and the
//! single-arm trial may have its own interaction coefficient. Every method
//! analyzes the same simulated data with a model that omits `x2`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisContext, AnalysisMethod, TruncationSetting, WeightingConfig};
use crate::dataset::{CovValue, CovariateRole, CovariateSpec, Formula, PatientRecord, Schema, TrialDataset};
use crate::error::{Error, Result};
use crate::estimand::DecisionRule;
use crate::inference::{PriorSpec, SamplerConfig, DEFAULT_PRIOR_SCALE};
use crate::rng::{child_seed, substream, StreamRng};
use crate::stats::{inv_logit, mean};

/// Distribution of `(x1, x2, x3, x4)` in one source. `(x1, x2)` is bivariate
/// normal (correlation set per scenario); `x3`, `x4` are Bernoulli.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateLaw {
    pub mean: [f64; 2],
    pub sd: [f64; 2],
    pub p_x3: f64,
    pub p_x4: f64,
}

impl CovariateLaw {
    pub const fn standard() -> Self {
        CovariateLaw {
            mean: [0.0, 0.0],
            sd: [1.0, 1.0],
            p_x3: 0.5,
            p_x4: 0.3,
        }
    }

    /// Shift both continuous means by `shift` standard deviations and the
    /// `x3` probability by `p_shift`.
    pub fn shifted(&self, shift: f64, p_shift: f64) -> Self {
        CovariateLaw {
            mean: [self.mean[0] + shift * self.sd[0], self.mean[1] + shift * self.sd[1]],
            p_x3: self.p_x3 + p_shift,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| p > 0.0 && p < 1.0;
        if !(self.sd[0] > 0.0 && self.sd[1] > 0.0) || !prob_ok(self.p_x3) || !prob_ok(self.p_x4) {
            return Err(Error::InvalidArgument(
                "covariate law needs positive sds and probabilities in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn draw(&self, rho: f64, rng: &mut StreamRng) -> [f64; 4] {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x1 = self.mean[0] + self.sd[0] * z1;
        let x2 = self.mean[1] + self.sd[1] * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        let x3 = f64::from(u8::from(rng.random::<f64>() < self.p_x3));
        let x4 = f64::from(u8::from(rng.random::<f64>() < self.p_x4));
        [x1, x2, x3, x4]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub label: String,
    /// Coefficients of `(1, x1, x2, x3, x4)`.
    pub beta: [f64; 5],
    pub psi0: f64,
    pub psi1_rct: f64,
    pub psi1_sct: f64,
    pub rho: f64,
    pub n_rct: usize,
    pub n_res: usize,
    pub n_sct: usize,
    pub rct: CovariateLaw,
    pub res: CovariateLaw,
    pub sct: CovariateLaw,
}

pub const DEFAULT_BETA: [f64; 5] = [-0.5, 0.4, 0.4, 0.3, 0.3];
pub const DEFAULT_PSI0: f64 = 0.3;
pub const DEFAULT_PSI1: f64 = 0.6;
/// Interaction in the single-arm trial when it is discordant.
pub const DISCORDANT_PSI1: f64 = 1.2;
/// Mean shift of the continuous covariates, in standard deviations. The
/// retrospective cohort is shifted down and the single-arm trial up.
pub const COVARIATE_SHIFT: f64 = 0.5;
pub const PROBABILITY_SHIFT: f64 = 0.2;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("correlation {} outside [-1, 1]", self.rho)));
        }
        if self.n_rct == 0 || self.n_res == 0 || self.n_sct == 0 {
            return Err(Error::InvalidArgument("every source needs at least one patient".into()));
        }
        if self.beta.iter().chain([&self.psi0, &self.psi1_rct, &self.psi1_sct]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.rct.validate()?;
        self.res.validate()?;
        self.sct.validate()
    }

    /// A scenario with the default coefficients and sizes.
    pub fn base(label: &str, covariate_discordance: bool, psi1_sct: f64, rho: f64, n_res: usize, n_sct: usize) -> Self {
        let rct = CovariateLaw::standard();
        let (res, sct) = if covariate_discordance {
            (
                rct.shifted(-COVARIATE_SHIFT, -PROBABILITY_SHIFT),
                rct.shifted(COVARIATE_SHIFT, PROBABILITY_SHIFT),
            )
        } else {
            (rct, rct)
        };
        ScenarioConfig {
            label: label.to_string(),
            beta: DEFAULT_BETA,
            psi0: DEFAULT_PSI0,
            psi1_rct: DEFAULT_PSI1,
            psi1_sct,
            rho,
            n_rct: 200,
            n_res,
            n_sct,
            rct,
            res: CovariateLaw { p_x4: 0.5, ..res },
            sct: CovariateLaw { p_x4: 0.5, ..sct },
        }
    }

    /// Same scenario without any treatment effect in the internal trial.
    pub fn null(mut self, psi1_sct: f64) -> Self {
        self.psi0 = 0.0;
        self.psi1_rct = 0.0;
        self.psi1_sct = psi1_sct;
        self
    }

    pub fn covariate_discordance(&self) -> bool {
        self.res != CovariateLaw { p_x4: self.res.p_x4, ..self.rct } || self.sct != CovariateLaw { p_x4: self.sct.p_x4, ..self.rct }
    }
}

/// Alternative-hypothesis scenarios 1-8.
pub fn default_alternative_scenarios() -> Vec<ScenarioConfig> {
    let grid = [
        (true, false, 0.0, 500, 100),
        (true, false, 0.5, 500, 100),
        (false, true, 0.0, 500, 100),
        (false, true, 0.5, 500, 100),
        (true, true, 0.0, 500, 100),
        (true, true, 0.5, 500, 100),
        (true, true, 0.0, 1000, 300),
        (true, true, 0.5, 1000, 300),
    ];
    grid.iter()
        .enumerate()
        .map(|(i, &(cov, eff, rho, n1, n2))| {
            let psi1 = if eff { DISCORDANT_PSI1 } else { DEFAULT_PSI1 };
            ScenarioConfig::base(&format!("{}", i + 1), cov, psi1, rho, n1, n2)
        })
        .collect()
}

/// Null scenarios 01-03: covariate discordance, no internal effect, and an
/// increasing effect in the single-arm trial.
pub fn default_null_scenarios() -> Vec<ScenarioConfig> {
    [(0.0, 0.0), (0.3, 0.5), (0.6, 0.5)]
        .iter()
        .enumerate()
        .map(|(i, &(psi1, rho))| ScenarioConfig::base(&format!("0{}", i + 1), true, 0.0, rho, 500, 100).null(psi1))
        .collect()
}

/// One row of the scenario summary tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTableRow {
    pub scenario: String,
    pub hypothesis: String,
    pub covariate_discordance: bool,
    pub psi1_discordance: bool,
    pub psi1_sct: f64,
    pub rho: f64,
    pub n_res: usize,
    pub n_sct: usize,
}

pub fn scenario_table() -> Vec<ScenarioTableRow> {
    let row = |s: &ScenarioConfig, hypothesis: &str| ScenarioTableRow {
        scenario: s.label.clone(),
        hypothesis: hypothesis.to_string(),
        covariate_discordance: s.covariate_discordance(),
        psi1_discordance: s.psi1_sct != s.psi1_rct,
        psi1_sct: s.psi1_sct,
        rho: s.rho,
        n_res: s.n_res,
        n_sct: s.n_sct,
    };
    default_alternative_scenarios()
        .iter()
        .map(|s| row(s, "alternative"))
        .chain(default_null_scenarios().iter().map(|s| row(s, "null")))
        .collect()
}

/// Schema of the simulated covariates; `x4` is the effect modifier.
pub fn simulation_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            CovariateSpec::continuous("x1"),
            CovariateSpec::continuous("x2"),
            CovariateSpec::binary("x3"),
            CovariateSpec::binary("x4").with_role(CovariateRole::Both),
        ])
        .expect("valid simulation schema"),
    )
}

/// The analysis model: `x2` is left out.
pub fn analysis_formula() -> Formula {
    Formula::new(&["x1", "x3", "x4"], &["x4"])
}

#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub rct: TrialDataset,
    pub res: TrialDataset,
    pub sct: TrialDataset,
}

impl ScenarioData {
    /// Both external sources stacked.
    pub fn external(&self) -> TrialDataset {
        TrialDataset::concat(&[&self.res, &self.sct], "external").expect("same schema")
    }
}

fn generate_source(
    cfg: &ScenarioConfig,
    law: &CovariateLaw,
    n: usize,
    psi1: f64,
    arm: Option<u8>,
    source: &str,
    rng: &mut StreamRng,
) -> Result<TrialDataset> {
    let patients = (0..n)
        .map(|_| {
            let x = law.draw(cfg.rho, rng);
            let a = arm.unwrap_or_else(|| u8::from(rng.random::<f64>() < 0.5));
            let lp = cfg.beta[0] + (0..4).map(|j| cfg.beta[j + 1] * x[j]).sum::<f64>()
                + f64::from(a) * (cfg.psi0 + psi1 * x[3]);
            let y = u8::from(rng.random::<f64>() < inv_logit(lp));
            PatientRecord {
                outcome: y,
                arm: a,
                covariates: x.iter().map(|&v| Some(CovValue::Num(v))).collect(),
            }
        })
        .collect();
    TrialDataset::new(source, simulation_schema(), patients)
}

pub fn generate_scenario(cfg: &ScenarioConfig, rng: &mut StreamRng) -> Result<ScenarioData> {
    cfg.validate()?;
    Ok(ScenarioData {
        rct: generate_source(cfg, &cfg.rct, cfg.n_rct, cfg.psi1_rct, None, "rct", rng)?,
        res: generate_source(cfg, &cfg.res, cfg.n_res, cfg.psi1_rct, Some(0), "res", rng)?,
        sct: generate_source(cfg, &cfg.sct, cfg.n_sct, cfg.psi1_sct, Some(1), "sct", rng)?,
    })
}

/// Monte-Carlo value of the subgroup (`x4 = 1`) risk difference under the
/// internal covariate law and coefficients, with its standard error.
pub fn true_marginal_effect(cfg: &ScenarioConfig, n_oracle: usize, rng: &mut StreamRng) -> (f64, f64) {
    let effect = cfg.psi0 + cfg.psi1_rct;
    let diffs: Vec<f64> = (0..n_oracle.max(2))
        .map(|_| {
            let x = cfg.rct.draw(cfg.rho, rng);
            let lp = cfg.beta[0] + cfg.beta[1] * x[0] + cfg.beta[2] * x[1] + cfg.beta[3] * x[2] + cfg.beta[4];
            inv_logit(lp + effect) - inv_logit(lp)
        })
        .collect();
    let m = mean(&diffs);
    (m, crate::stats::sd(&diffs) / (diffs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodLabel {
    #[serde(rename = "FB")]
    FullBorrow,
    #[serde(rename = "IW")]
    Weighted,
    #[serde(rename = "IW.t")]
    WeightedTruncated,
    #[serde(rename = "IW.m")]
    WeightedMissing,
    #[serde(rename = "IW.m.t")]
    WeightedMissingTruncated,
    #[serde(rename = "NB")]
    NoBorrow,
}

impl MethodLabel {
    pub const ALL: [MethodLabel; 6] = [
        MethodLabel::FullBorrow,
        MethodLabel::Weighted,
        MethodLabel::WeightedTruncated,
        MethodLabel::WeightedMissing,
        MethodLabel::WeightedMissingTruncated,
        MethodLabel::NoBorrow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodLabel::FullBorrow => "FB",
            MethodLabel::Weighted => "IW",
            MethodLabel::WeightedTruncated => "IW.t",
            MethodLabel::WeightedMissing => "IW.m",
            MethodLabel::WeightedMissingTruncated => "IW.m.t",
            MethodLabel::NoBorrow => "NB",
        }
    }

    /// The analysis this label stands for, with `base` supplying the
    /// weighting options (method, normalization, ...).
    pub fn method(self, base: &WeightingConfig) -> AnalysisMethod {
        let all = base.clone().with_covariates(&["x1", "x2", "x3"]);
        let partial = base.clone().with_covariates(&["x1", "x3"]);
        match self {
            MethodLabel::FullBorrow => AnalysisMethod::FullBorrow,
            MethodLabel::NoBorrow => AnalysisMethod::NoBorrow,
            MethodLabel::Weighted => AnalysisMethod::Weighted(all),
            MethodLabel::WeightedTruncated => AnalysisMethod::Weighted(all.with_truncation(TruncationSetting::EssCap)),
            MethodLabel::WeightedMissing => AnalysisMethod::Weighted(partial),
            MethodLabel::WeightedMissingTruncated => {
                AnalysisMethod::Weighted(partial.with_truncation(TruncationSetting::EssCap))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenarios: Vec<ScenarioConfig>,
    pub methods: Vec<MethodLabel>,
    pub n_reps: usize,
    /// Decision thresholds at which rejection rates are reported.
    pub thresholds: Vec<f64>,
    pub prior_scale: f64,
    pub weighting: WeightingConfig,
    pub sampler: SamplerConfig,
    pub n_oracle: usize,
    pub bootstrap: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            scenarios: default_alternative_scenarios(),
            methods: MethodLabel::ALL.to_vec(),
            n_reps: 100,
            thresholds: vec![0.95, 0.975],
            prior_scale: DEFAULT_PRIOR_SCALE,
            weighting: WeightingConfig::default(),
            sampler: SamplerConfig {
                chains: 2,
                warmup: 500,
                draws: 1000,
                ..SamplerConfig::default()
            },
            n_oracle: 1_000_000,
            bootstrap: true,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 || self.methods.is_empty() || self.thresholds.is_empty() {
            return Err(Error::InvalidArgument("need replicates, methods and thresholds".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        for &t in &self.thresholds {
            DecisionRule::new(0.0, f64::INFINITY, t)?;
        }
        self.sampler.validate()
    }
}

/// Result of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub scenario: String,
    pub rep: usize,
    pub method: MethodLabel,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub tau: f64,
    pub converged: bool,
    pub borrowed_ess: f64,
}

/// Run `methods` on one simulated data set; every method uses the same
/// analysis seed.
pub fn run_methods(
    data: &ScenarioData,
    methods: &[MethodLabel],
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<Vec<(MethodLabel, crate::analysis::AnalysisOutcome)>> {
    let schema = simulation_schema();
    let encoder = analysis_formula().compile(&schema)?;
    let d = encoder.p() + encoder.q();
    let rule = DecisionRule::new(0.0, f64::INFINITY, cfg.thresholds[0])?;
    let subgroup = BTreeMap::from([("x4".to_string(), "1".to_string())]);
    let ctx = AnalysisContext::new(
        encoder,
        Some(data.external()),
        PriorSpec::normal(d, 0.0, cfg.prior_scale)?,
        cfg.sampler.clone(),
        subgroup,
        rule,
    )?
    .with_bootstrap(cfg.bootstrap);
    methods
        .iter()
        .map(|&m| Ok((m, ctx.analyze(&m.method(&cfg.weighting), &data.rct, seed)?)))
        .collect()
}

/// Simulate and analyze every replicate of one scenario.
pub fn run_scenario(scenario: &ScenarioConfig, cfg: &SimulationConfig, seed: u64) -> Result<Vec<RepResult>> {
    let label = format!("scenario-{}", scenario.label);
    let reps: Vec<Vec<RepResult>> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<RepResult>> {
            let mut rng = substream(seed, &label, rep as u64);
            let data = generate_scenario(scenario, &mut rng)?;
            let outcomes = run_methods(&data, &cfg.methods, cfg, child_seed(seed, "analysis", rep as u64))?;
            Ok(outcomes
                .into_iter()
                .map(|(method, o)| RepResult {
                    scenario: scenario.label.clone(),
                    rep,
                    method,
                    median: o.gamma.median,
                    mean: o.gamma.mean,
                    sd: o.gamma.sd,
                    lower: o.gamma.lower_95,
                    upper: o.gamma.upper_95,
                    tau: o.tau,
                    converged: o.converged,
                    borrowed_ess: o.borrowed_ess,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(reps.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: MethodLabel,
    pub truth: f64,
    pub n_reps: usize,
    pub excluded: usize,
    pub coverage: f64,
    pub bias: f64,
    /// Standard error of the mean bias across replicates.
    pub bias_se: f64,
    pub rmse: f64,
    pub mean_sd: f64,
    /// Rejection rate at each configured threshold.
    pub rejection: Vec<f64>,
}

/// Metrics for one method from its replicate results (non-converged
/// replicates are excluded and counted).
pub fn aggregate_metrics(results: &[RepResult], truth: f64, thresholds: &[f64]) -> Result<MetricsRow> {
    let first = results.first().ok_or_else(|| Error::Empty("no replicate results".into()))?;
    let used: Vec<&RepResult> = results.iter().filter(|r| r.converged).collect();
    if used.is_empty() {
        return Err(Error::Convergence {
            excluded: results.len(),
            total: results.len(),
        });
    }
    let n = used.len() as f64;
    let errors: Vec<f64> = used.iter().map(|r| r.median - truth).collect();
    Ok(MetricsRow {
        scenario: first.scenario.clone(),
        method: first.method,
        truth,
        n_reps: used.len(),
        excluded: results.len() - used.len(),
        coverage: used.iter().filter(|r| r.lower <= truth && truth <= r.upper).count() as f64 / n,
        bias: mean(&errors),
        bias_se: if used.len() > 1 { crate::stats::sd(&errors) / n.sqrt() } else { f64::NAN },
        rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mean_sd: used.iter().map(|r| r.sd).sum::<f64>() / n,
        rejection: thresholds
            .iter()
            .map(|&t| used.iter().filter(|r| r.tau > t).count() as f64 / n)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub reps: Vec<RepResult>,
    pub metrics: Vec<MetricsRow>,
    pub truths: Vec<(String, f64, f64)>,
}

/// Run every configured scenario and aggregate per (scenario, method).
pub fn run_simulation(cfg: &SimulationConfig, seed: u64) -> Result<SimulationReport> {
    cfg.validate()?;
    let mut report = SimulationReport {
        reps: Vec::new(),
        metrics: Vec::new(),
        truths: Vec::new(),
    };
    for (k, scenario) in cfg.scenarios.iter().enumerate() {
        log::info!("scenario {} ({} replicates)", scenario.label, cfg.n_reps);
        let mut oracle_rng = substream(seed, "truth", k as u64);
        let (truth, truth_se) = true_marginal_effect(scenario, cfg.n_oracle, &mut oracle_rng);
        let reps = run_scenario(scenario, cfg, seed)?;
        for &m in &cfg.methods {
            let mine: Vec<RepResult> = reps.iter().filter(|r| r.method == m).cloned().collect();
            report.metrics.push(aggregate_metrics(&mine, truth, &cfg.thresholds)?);
        }
        report.truths.push((scenario.label.clone(), truth, truth_se));
        report.reps.extend(reps);
    }
    Ok(report)
}
