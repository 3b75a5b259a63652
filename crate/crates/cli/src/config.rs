//! Run configuration: a TOML file, overridden by `--set key=value` pairs.
//!
//! Every section has defaults, so an empty file is a valid configuration
//! for commands that need no data (`simulate`). Relative data paths are
//! resolved against the directory of the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use borrowkit::analysis::{ReferenceRows, TruncationSetting, WeightMethod};
use borrowkit::design::{Hypothesis, PowerVariant, ThresholdChoice, TrialSettings};
use borrowkit::inference::{PriorSpec, SamplerConfig, DEFAULT_PRIOR_SCALE};
use borrowkit::simlab::{self, MethodLabel, ScenarioConfig, SimulationConfig};
use borrowkit::{AnalysisMethod, CovariateSpec, DecisionRule, DesignEncoder, Formula, WeightingConfig};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub schema: Vec<CovariateSpec>,
    pub formula: Formula,
    pub analysis: AnalysisConfig,
    pub weighting: WeightingConfig,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub estimand: EstimandConfig,
    pub design: DesignConfig,
    pub simulation: SimulationSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            data: DataConfig::default(),
            schema: Vec::new(),
            formula: Formula::default(),
            analysis: AnalysisConfig::default(),
            weighting: WeightingConfig::default(),
            prior: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            estimand: EstimandConfig::default(),
            design: DesignConfig::default(),
            simulation: SimulationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub path: PathBuf,
    /// Covariates this source never recorded.
    #[serde(default)]
    pub absent: Vec<String>,
    /// Source label; the file stem when absent.
    #[serde(default)]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub internal: Option<PathBuf>,
    pub external: Vec<SourceConfig>,
    pub delimiter: char,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            internal: None,
            external: Vec::new(),
            delimiter: ',',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    NoBorrow,
    FullBorrow,
    #[default]
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub method: MethodKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normal {
    pub location: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub location: f64,
    pub scale: f64,
    /// Per-coefficient overrides keyed by coefficient name (`beta.x1`).
    pub coefficients: BTreeMap<String, Normal>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            location: 0.0,
            scale: DEFAULT_PRIOR_SCALE,
            coefficients: BTreeMap::new(),
        }
    }
}

impl PriorConfig {
    pub fn build(&self, encoder: &DesignEncoder) -> Result<PriorSpec, CliError> {
        let names = encoder.coefficient_names();
        for key in self.coefficients.keys() {
            if !names.contains(key) {
                return Err(CliError::Config(format!(
                    "prior override for unknown coefficient '{key}' (known: {})",
                    names.join(", ")
                )));
            }
        }
        let (loc, scale) = names
            .iter()
            .map(|n| match self.coefficients.get(n) {
                Some(o) => (o.location, o.scale),
                None => (self.location, self.scale),
            })
            .unzip();
        Ok(PriorSpec::new(loc, scale)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimandConfig {
    /// Effect-modifier values defining the subgroup. Numbers and booleans
    /// are accepted and read as their text form.
    #[serde(deserialize_with = "string_map")]
    pub subgroup: BTreeMap<String, String>,
    pub reference: ReferenceRows,
    pub lower: f64,
    pub upper: f64,
    pub threshold: f64,
    pub bootstrap: bool,
    pub histogram_bins: usize,
}

impl Default for EstimandConfig {
    fn default() -> Self {
        EstimandConfig {
            subgroup: BTreeMap::new(),
            reference: ReferenceRows::InternalSubgroup,
            lower: 0.0,
            upper: f64::INFINITY,
            threshold: 0.95,
            bootstrap: true,
            histogram_bins: 40,
        }
    }
}

impl EstimandConfig {
    pub fn rule(&self) -> Result<DecisionRule, CliError> {
        Ok(DecisionRule::new(self.lower, self.upper, self.threshold)?)
    }
}

fn string_map<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeMap<String, String>, D::Error> {
    let raw = BTreeMap::<String, Value>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            let text = match v {
                Value::String(s) => s,
                Value::Integer(i) => i.to_string(),
                Value::Float(f) => f.to_string(),
                Value::Boolean(b) => b.to_string(),
                other => return Err(serde::de::Error::custom(format!("subgroup value for '{k}' must be scalar, got {other}"))),
            };
            Ok((k, text))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSource {
    /// Simulated trials resample the internal covariate rows.
    #[default]
    Internal,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Trial size for `oc` and `calibrate`.
    pub n_internal: usize,
    pub allocation: f64,
    pub n_reps: usize,
    pub max_excluded: f64,
    /// Which design prior `oc` simulates from.
    pub hypothesis: Hypothesis,
    /// External data for the design priors; `data.external` when empty.
    pub prior_external: Vec<SourceConfig>,
    pub covariates: CovariateSource,
    pub baseline_scale: f64,
    pub min_draws: usize,
    pub prior_sampler: SamplerConfig,
    /// Type-I error budget for calibrated thresholds.
    pub alpha: f64,
    pub nu_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub target_power: Vec<f64>,
    pub variants: Vec<PowerVariant>,
    /// Existing power-curve table for `ssd`; computed when absent.
    pub curve: Option<PathBuf>,
    /// Size of the resampled external data from `synthesize-external`.
    pub synthesize_n: usize,
}

pub fn default_nu_grid() -> Vec<f64> {
    (0..100).map(|i| f64::from(500 + 5 * i) / 1000.0).collect()
}

impl Default for DesignConfig {
    fn default() -> Self {
        let calibrated = ThresholdChoice::Calibrated {
            budget: 0.1,
            grid: default_nu_grid(),
        };
        DesignConfig {
            n_internal: 100,
            allocation: 0.5,
            n_reps: 100,
            max_excluded: 0.05,
            hypothesis: Hypothesis::Alternative,
            prior_external: Vec::new(),
            covariates: CovariateSource::Internal,
            baseline_scale: DEFAULT_PRIOR_SCALE,
            min_draws: borrowkit::design::DEFAULT_MIN_DRAWS,
            prior_sampler: SamplerConfig::default(),
            alpha: 0.1,
            nu_grid: default_nu_grid(),
            n_grid: vec![100, 200, 300, 400, 500, 600],
            target_power: vec![0.6, 0.7, 0.8],
            variants: vec![
                PowerVariant {
                    label: "no_borrow".into(),
                    method: AnalysisMethod::NoBorrow,
                    threshold: calibrated.clone(),
                },
                PowerVariant {
                    label: "weighted".into(),
                    method: AnalysisMethod::Weighted(WeightingConfig {
                        truncation: TruncationSetting::None,
                        method: WeightMethod::Predictive,
                        ..WeightingConfig::default()
                    }),
                    threshold: calibrated,
                },
            ],
            curve: None,
            synthesize_n: 1000,
        }
    }
}

impl DesignConfig {
    pub fn trial_settings(&self) -> TrialSettings {
        TrialSettings {
            allocation: self.allocation,
            n_reps: self.n_reps,
            max_excluded: self.max_excluded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSet {
    #[default]
    Alternative,
    Null,
    All,
    /// Use `simulation.scenarios`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub preset: ScenarioSet,
    pub scenarios: Vec<ScenarioConfig>,
    pub methods: Vec<MethodLabel>,
    pub n_reps: usize,
    pub thresholds: Vec<f64>,
    pub n_oracle: usize,
    pub bootstrap: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        SimulationSection {
            preset: ScenarioSet::Alternative,
            scenarios: Vec::new(),
            methods: d.methods,
            n_reps: d.n_reps,
            thresholds: d.thresholds,
            n_oracle: d.n_oracle,
            bootstrap: d.bootstrap,
        }
    }
}

impl Config {
    pub fn analysis_method(&self) -> AnalysisMethod {
        match self.analysis.method {
            MethodKind::NoBorrow => AnalysisMethod::NoBorrow,
            MethodKind::FullBorrow => AnalysisMethod::FullBorrow,
            MethodKind::Weighted => AnalysisMethod::Weighted(self.weighting.clone()),
        }
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        let s = &self.simulation;
        let scenarios = match s.preset {
            ScenarioSet::Alternative => simlab::default_alternative_scenarios(),
            ScenarioSet::Null => simlab::default_null_scenarios(),
            ScenarioSet::All => {
                let mut v = simlab::default_alternative_scenarios();
                v.extend(simlab::default_null_scenarios());
                v
            }
            ScenarioSet::Custom => s.scenarios.clone(),
        };
        SimulationConfig {
            scenarios,
            methods: s.methods.clone(),
            n_reps: s.n_reps,
            thresholds: s.thresholds.clone(),
            prior_scale: self.prior.scale,
            weighting: self.weighting.clone(),
            sampler: self.sampler.clone(),
            n_oracle: s.n_oracle,
            bootstrap: s.bootstrap,
        }
    }

    /// Resolve relative data paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.data.internal.as_mut() {
            fix(p);
        }
        for s in self.data.external.iter_mut().chain(self.design.prior_external.iter_mut()) {
            fix(&mut s.path);
        }
        if let Some(p) = self.design.curve.as_mut() {
            fix(p);
        }
    }
}

/// Parse an override value as TOML, falling back to a plain string.
fn parse_override(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Set `path` (dot-separated) in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key '{key}'")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{key}': '{part}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override(raw.trim()));
    Ok(())
}

/// Load the file (if any), apply overrides, and deserialize.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: Config = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    let base = path
        .and_then(|p| p.parent())
        .map(Path::to_path_buf)
        .unwrap_or_default();
    cfg.resolve_paths(&base);
    Ok(cfg)
}

pub fn to_toml(cfg: &Config) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence() {
        let mut t: toml::Table = "[sampler]\nchains = 4\n".parse().unwrap();
        apply_override(&mut t, "sampler.chains=2").unwrap();
        apply_override(&mut t, "estimand.subgroup.x4=1").unwrap();
        apply_override(&mut t, "analysis.method=no_borrow").unwrap();
        let cfg: Config = Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.sampler.chains, 2);
        assert_eq!(cfg.analysis.method, MethodKind::NoBorrow);
        assert_eq!(cfg.estimand.subgroup["x4"], "1");
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = to_toml(&cfg).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[sampler]\nchians = 2\n").is_err());
    }
}
