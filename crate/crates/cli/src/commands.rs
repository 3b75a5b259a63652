//! Subcommands. Each one computes all of its outputs in memory from the
//! configuration, seed and input files; `run` then writes them together
//! with the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use borrowkit::dataset::{load_dataset, write_dataset, LoadOptions};
use borrowkit::design::{
    self, external_posterior, split_design_priors, unconditioned_prior, DesignPrior, Hypothesis, PowerPoint,
};
use borrowkit::estimand::{self, histogram};
use borrowkit::inference::PriorSpec;
use borrowkit::rng::child_seed;
use borrowkit::similarity::effective_sample_size;
use borrowkit::simlab;
use borrowkit::{AnalysisContext, DesignEncoder, Schema, TrialDataset};
use clap::Subcommand;
use serde_json::json;

use crate::config::{to_toml, Config, CovariateSource, SourceConfig};
use crate::output::{fmt_f64, fmt_opt, sha256_file, Artifacts, RunManifest};
use crate::{load_config, CliError};

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Similarity weights of the external patients.
    Weights,
    /// Sample the weighted posterior.
    Fit,
    /// Fit, then summarize the marginal subgroup effect.
    Estimate,
    /// Scenario-based simulation study.
    Simulate {
        /// Only write the default scenario tables.
        #[arg(long)]
        scenario_table: bool,
    },
    /// Rejection rate under one design prior.
    Oc,
    /// Calibrate the decision threshold on null trials.
    Calibrate,
    /// Power over a grid of trial sizes.
    PowerCurve,
    /// Sample size reaching each target power.
    Ssd,
    /// Resample the external data to a fixed size, stratified by arm.
    SynthesizeExternal,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Weights => "weights",
            Command::Fit => "fit",
            Command::Estimate => "estimate",
            Command::Simulate { .. } => "simulate",
            Command::Oc => "oc",
            Command::Calibrate => "calibrate",
            Command::PowerCurve => "power-curve",
            Command::Ssd => "ssd",
            Command::SynthesizeExternal => "synthesize-external",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub overrides: Vec<String>,
}

/// Outcome of a command that computed successfully.
struct Computed {
    artifacts: Artifacts,
    /// Set when a fit did not converge; outputs are still written.
    not_converged: Option<String>,
}

impl From<Artifacts> for Computed {
    fn from(artifacts: Artifacts) -> Self {
        Computed {
            artifacts,
            not_converged: None,
        }
    }
}

/// Run one command end to end and return the files written.
pub fn run(command: &Command, opts: &RunOptions) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let mut cfg = load_config(opts.config.as_deref(), &opts.overrides)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let resolved = to_toml(&cfg)?;
    let mut inputs = BTreeMap::new();
    for path in input_files(&cfg, command, opts.config.as_deref()) {
        inputs.insert(path.display().to_string(), sha256_file(&path)?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let threads = pool.current_num_threads();
    log::info!("{}: seed {}, {} threads", command.name(), cfg.seed, threads);
    let computed = pool.install(|| compute(command, &cfg))?;
    let manifest = RunManifest {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: resolved,
        inputs,
        outputs: computed.artifacts.names(),
        threads,
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    let written = computed.artifacts.commit(&opts.out_dir, &manifest)?;
    if let Some(name) = computed.not_converged {
        return Err(CliError::NotConverged(opts.out_dir.join(name)));
    }
    Ok(written)
}

fn input_files(cfg: &Config, command: &Command, config: Option<&Path>) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = config.map(Path::to_path_buf).into_iter().collect();
    if matches!(command, Command::Simulate { .. }) {
        return files;
    }
    files.extend(cfg.data.internal.clone());
    files.extend(cfg.data.external.iter().map(|s| s.path.clone()));
    if matches!(command, Command::Oc | Command::Calibrate | Command::PowerCurve | Command::Ssd) {
        files.extend(cfg.design.prior_external.iter().map(|s| s.path.clone()));
    }
    if matches!(command, Command::Ssd) {
        files.extend(cfg.design.curve.clone());
    }
    files.sort();
    files.dedup();
    files
}

fn compute(command: &Command, cfg: &Config) -> Result<Computed, CliError> {
    match command {
        Command::Weights => weights(cfg).map(Into::into),
        Command::Fit => fit(cfg, false),
        Command::Estimate => fit(cfg, true),
        Command::Simulate { scenario_table } => simulate(cfg, *scenario_table).map(Into::into),
        Command::Oc => oc(cfg).map(Into::into),
        Command::Calibrate => calibrate(cfg).map(Into::into),
        Command::PowerCurve => power(cfg).map(Into::into),
        Command::Ssd => ssd(cfg).map(Into::into),
        Command::SynthesizeExternal => synthesize(cfg).map(Into::into),
    }
}

/// Data, encoder and analysis context shared by the data-driven commands.
struct Workspace {
    schema: Arc<Schema>,
    encoder: DesignEncoder,
    internal: Option<TrialDataset>,
    external: Option<TrialDataset>,
}

fn delimiter(cfg: &Config) -> Result<u8, CliError> {
    u8::try_from(cfg.data.delimiter)
        .map_err(|_| CliError::Config(format!("delimiter '{}' is not a single byte", cfg.data.delimiter)))
}

fn load_sources(cfg: &Config, schema: &Arc<Schema>, sources: &[SourceConfig], id: &str) -> Result<Option<TrialDataset>, CliError> {
    let delimiter = delimiter(cfg)?;
    let parts = sources
        .iter()
        .map(|s| {
            let options = LoadOptions {
                delimiter,
                absent: s.absent.clone(),
            };
            let source_id = s.id.clone().unwrap_or_else(|| {
                s.path.file_stem().map_or_else(|| id.to_string(), |f| f.to_string_lossy().into_owned())
            });
            load_dataset(&s.path, schema.clone(), &source_id, &options)
        })
        .collect::<borrowkit::Result<Vec<_>>>()?;
    match parts.len() {
        0 => Ok(None),
        1 => Ok(parts.into_iter().next()),
        _ => {
            let refs: Vec<&TrialDataset> = parts.iter().collect();
            Ok(Some(TrialDataset::concat(&refs, id)?))
        }
    }
}

impl Workspace {
    fn load(cfg: &Config) -> Result<Self, CliError> {
        if cfg.schema.is_empty() {
            return Err(CliError::Config("no covariates declared under [[schema]]".into()));
        }
        let schema = Arc::new(Schema::new(cfg.schema.clone())?);
        let encoder = cfg.formula.compile(&schema)?;
        let internal = match &cfg.data.internal {
            Some(path) => {
                let options = LoadOptions {
                    delimiter: delimiter(cfg)?,
                    absent: Vec::new(),
                };
                Some(load_dataset(path, schema.clone(), "internal", &options)?)
            }
            None => None,
        };
        let external = load_sources(cfg, &schema, &cfg.data.external, "external")?;
        Ok(Workspace {
            schema,
            encoder,
            internal,
            external,
        })
    }

    fn internal(&self) -> Result<&TrialDataset, CliError> {
        self.internal
            .as_ref()
            .ok_or_else(|| CliError::Config("data.internal is required for this command".into()))
    }

    fn external(&self) -> Result<&TrialDataset, CliError> {
        self.external
            .as_ref()
            .ok_or_else(|| CliError::Config("at least one [[data.external]] source is required".into()))
    }

    fn context(&self, cfg: &Config) -> Result<AnalysisContext, CliError> {
        let prior = cfg.prior.build(&self.encoder)?;
        Ok(AnalysisContext::new(
            self.encoder.clone(),
            self.external.clone(),
            prior,
            cfg.sampler.clone(),
            cfg.estimand.subgroup.clone(),
            cfg.estimand.rule()?,
        )?
        .with_reference(cfg.estimand.reference)
        .with_bootstrap(cfg.estimand.bootstrap))
    }
}

fn weights(cfg: &Config) -> Result<Artifacts, CliError> {
    let ws = Workspace::load(cfg)?;
    let w = cfg.weighting.compute(ws.internal()?, ws.external()?)?;
    let rows: Vec<Vec<String>> = (0..w.len())
        .map(|i| {
            vec![
                i.to_string(),
                fmt_f64(w.raw[i]),
                fmt_f64(w.weights[i]),
                u8::from(w.retained[i]).to_string(),
            ]
        })
        .collect();
    let mut out = Artifacts::new();
    out.add_table("weights.csv", &["external_row_index", "raw_weight", "weight", "retained"], &rows)?;
    out.add_json(
        "weights_summary.json",
        &json!({
            "method": cfg.weighting.method,
            "normalization": cfg.weighting.normalization,
            "truncation": w.truncation,
            "ess": effective_sample_size(&w),
            "cutoff": w.cutoff,
            "n_external": w.len(),
            "n_retained": w.retained.iter().filter(|&&r| r).count(),
        }),
    )?;
    Ok(out)
}

fn fit(cfg: &Config, with_estimand: bool) -> Result<Computed, CliError> {
    let ws = Workspace::load(cfg)?;
    let internal = ws.internal()?;
    let ctx = ws.context(cfg)?;
    let method = cfg.analysis_method();
    let weights = ctx.weights(&method, internal)?;
    let model = ctx.model(internal, weights.as_ref())?;
    let draws = ctx.fit(&model, cfg.seed)?;

    let mut out = Artifacts::new();
    let rows: Vec<Vec<String>> = (0..draws.len())
        .map(|r| draws.draws.row(r).iter().map(|&v| fmt_f64(v)).collect())
        .collect();
    let header: Vec<&str> = draws.names.iter().map(String::as_str).collect();
    out.add_table("draws.csv", &header, &rows)?;
    out.add_json(
        "diagnostics.json",
        &json!({
            "method": method.label(),
            "chains": draws.chains,
            "draws_per_chain": draws.len() / draws.chains.max(1),
            "names": draws.names,
            "mean": draws.mean(),
            "sd": draws.sd(),
            "borrowed_ess": weights.as_ref().map_or(0.0, effective_sample_size),
            "unique_rows": model.unique_rows(),
            "diagnostics": draws.diagnostics,
        }),
    )?;

    if with_estimand {
        let gamma = ctx.estimate(&draws, internal, cfg.seed)?;
        let rule = ctx.rule;
        let summary = estimand::summarize(&gamma.gamma, rule.interval());
        let rows: Vec<Vec<String>> = gamma
            .gamma
            .iter()
            .enumerate()
            .map(|(i, g)| vec![i.to_string(), fmt_f64(*g)])
            .collect();
        out.add_table("gamma_draws.csv", &["draw", "gamma"], &rows)?;
        out.add_json(
            "estimand_summary.json",
            &json!({
                "method": method.label(),
                "subgroup": cfg.estimand.subgroup,
                "reference": cfg.estimand.reference,
                "reference_rows": gamma.subgroup.n_rows(),
                "bootstrap": gamma.bootstrap,
                "lower": rule.lower,
                "upper": rule.upper,
                "threshold": rule.threshold,
                "reject": estimand::decide(summary.tau, &rule),
                "summary": summary,
            }),
        )?;
        let h = histogram(&gamma.gamma, cfg.estimand.histogram_bins);
        let rows: Vec<Vec<String>> = h
            .counts
            .iter()
            .enumerate()
            .map(|(i, c)| vec![fmt_f64(h.edges[i]), fmt_f64(h.edges[i + 1]), c.to_string()])
            .collect();
        out.add_table("gamma_histogram.csv", &["lower", "upper", "count"], &rows)?;
    }
    let not_converged = (!draws.converged()).then(|| "diagnostics.json".to_string());
    Ok(Computed {
        artifacts: out,
        not_converged,
    })
}

fn simulate(cfg: &Config, table_only: bool) -> Result<Artifacts, CliError> {
    let mut out = Artifacts::new();
    if table_only {
        let rows: Vec<Vec<String>> = simlab::scenario_table()
            .iter()
            .map(|r| {
                vec![
                    r.scenario.clone(),
                    r.hypothesis.clone(),
                    u8::from(r.covariate_discordance).to_string(),
                    u8::from(r.psi1_discordance).to_string(),
                    fmt_f64(r.psi1_sct),
                    fmt_f64(r.rho),
                    r.n_res.to_string(),
                    r.n_sct.to_string(),
                ]
            })
            .collect();
        out.add_table(
            "scenario_table.csv",
            &["scenario", "hypothesis", "covariate_discordance", "psi1_discordance", "psi1_sct", "rho", "n_res", "n_sct"],
            &rows,
        )?;
        let mut all = simlab::default_alternative_scenarios();
        all.extend(simlab::default_null_scenarios());
        out.add_json("scenarios.json", &all)?;
        return Ok(out);
    }
    let sim = cfg.simulation_config();
    let report = simlab::run_simulation(&sim, cfg.seed)?;
    let rows: Vec<Vec<String>> = report
        .reps
        .iter()
        .map(|r| {
            vec![
                r.scenario.clone(),
                r.rep.to_string(),
                r.method.name().to_string(),
                fmt_f64(r.median),
                fmt_f64(r.mean),
                fmt_f64(r.sd),
                fmt_f64(r.lower),
                fmt_f64(r.upper),
                fmt_f64(r.tau),
                u8::from(r.converged).to_string(),
                fmt_f64(r.borrowed_ess),
            ]
        })
        .collect();
    out.add_table(
        "reps.csv",
        &["scenario", "rep", "method", "median", "mean", "sd", "lower", "upper", "tau", "converged", "borrowed_ess"],
        &rows,
    )?;
    let mut header: Vec<String> = ["scenario", "method", "truth", "n_reps", "excluded", "coverage", "bias", "bias_se", "rmse", "mean_sd"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(sim.thresholds.iter().map(|t| format!("reject_{t}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = report
        .metrics
        .iter()
        .map(|m| {
            let mut row = vec![
                m.scenario.clone(),
                m.method.name().to_string(),
                fmt_f64(m.truth),
                m.n_reps.to_string(),
                m.excluded.to_string(),
                fmt_f64(m.coverage),
                fmt_f64(m.bias),
                fmt_f64(m.bias_se),
                fmt_f64(m.rmse),
                fmt_f64(m.mean_sd),
            ];
            row.extend(m.rejection.iter().map(|&r| fmt_f64(r)));
            row
        })
        .collect();
    out.add_table("metrics.csv", &header, &rows)?;
    let rows: Vec<Vec<String>> = report
        .truths
        .iter()
        .map(|(s, t, se)| vec![s.clone(), fmt_f64(*t), fmt_f64(*se)])
        .collect();
    out.add_table("truths.csv", &["scenario", "truth", "mc_se"], &rows)?;
    Ok(out)
}

/// Null and alternative (or unconditioned) design priors from the external
/// posterior under a proper baseline prior.
struct DesignPriors {
    null: DesignPrior,
    alternative: DesignPrior,
    unconditioned: DesignPrior,
}

fn design_priors(cfg: &Config, ws: &Workspace, ctx: &AnalysisContext) -> Result<DesignPriors, CliError> {
    let internal = ws.internal()?;
    let source = if cfg.design.prior_external.is_empty() {
        ws.external()?.clone()
    } else {
        load_sources(cfg, &ws.schema, &cfg.design.prior_external, "prior_external")?
            .expect("non-empty source list")
    };
    let d = ws.encoder.p() + ws.encoder.q();
    let baseline = PriorSpec::normal(d, 0.0, cfg.design.baseline_scale)?;
    let sampler = cfg.design.prior_sampler.clone().with_seed(child_seed(cfg.seed, "design-prior", 0));
    let draws = external_posterior(&source, None, &baseline, &ws.encoder, &sampler)?;
    if !draws.converged() {
        log::warn!("external posterior for the design priors did not converge: {:?}", draws.diagnostics.warnings);
    }
    let covariates = match cfg.design.covariates {
        CovariateSource::Internal => internal.clone(),
        CovariateSource::External => source.clone(),
    };
    let spec = ctx.subgroup_spec(internal)?;
    let (null, alternative) = split_design_priors(&draws, &ctx.rule, &spec, &covariates, cfg.design.min_draws)?;
    let unconditioned = unconditioned_prior(&draws, &spec, &covariates)?;
    Ok(DesignPriors {
        null,
        alternative,
        unconditioned,
    })
}

fn prior_summary(priors: &DesignPriors) -> serde_json::Value {
    json!({
        "null": { "draws": priors.null.len(), "retained_fraction": priors.null.retained_fraction },
        "alternative": { "draws": priors.alternative.len(), "retained_fraction": priors.alternative.retained_fraction },
        "unconditioned": { "draws": priors.unconditioned.len() },
    })
}

fn tau_rows(taus: &[Option<f64>]) -> Vec<Vec<String>> {
    taus.iter()
        .enumerate()
        .map(|(rep, t)| vec![rep.to_string(), fmt_opt(*t), u8::from(t.is_some()).to_string()])
        .collect()
}

fn oc(cfg: &Config) -> Result<Artifacts, CliError> {
    let ws = Workspace::load(cfg)?;
    let ctx = ws.context(cfg)?;
    let priors = design_priors(cfg, &ws, &ctx)?;
    let prior = match cfg.design.hypothesis {
        Hypothesis::Null => &priors.null,
        Hypothesis::Alternative => &priors.alternative,
        Hypothesis::Unconditioned => &priors.unconditioned,
    };
    let method = cfg.analysis_method();
    let label = method.label().to_string();
    let n = cfg.design.n_internal;
    let sample = design::simulate_taus(prior, &ctx, &[(label.clone(), method)], n, &cfg.design.trial_settings(), cfg.seed)?;
    let oc = design::summarize_oc(&sample.converged(0), sample.excluded(0), n, &ctx.rule, &label);
    let mut out = Artifacts::new();
    out.add_table("taus.csv", &["rep", "tau", "converged"], &tau_rows(&sample.taus[0]))?;
    out.add_json(
        "oc.json",
        &json!({
            "hypothesis": cfg.design.hypothesis,
            "design_priors": prior_summary(&priors),
            "operating_characteristics": oc,
        }),
    )?;
    Ok(out)
}

fn calibrate(cfg: &Config) -> Result<Artifacts, CliError> {
    let ws = Workspace::load(cfg)?;
    let ctx = ws.context(cfg)?;
    let priors = design_priors(cfg, &ws, &ctx)?;
    let method = cfg.analysis_method();
    let label = method.label().to_string();
    let n = cfg.design.n_internal;
    let sample = design::simulate_taus(&priors.null, &ctx, &[(label.clone(), method)], n, &cfg.design.trial_settings(), cfg.seed)?;
    let taus = sample.converged(0);
    let (nu, rate) = design::calibrate_from_taus(&taus, &cfg.design.nu_grid, cfg.design.alpha)?;
    let mut out = Artifacts::new();
    out.add_table("taus.csv", &["rep", "tau", "converged"], &tau_rows(&sample.taus[0]))?;
    out.add_json(
        "calibration.json",
        &json!({
            "method": label,
            "n_internal": n,
            "budget": cfg.design.alpha,
            "threshold": nu,
            "type_one_error": rate,
            "n_reps": taus.len(),
            "excluded": sample.excluded(0),
            "design_priors": prior_summary(&priors),
        }),
    )?;
    Ok(out)
}

fn compute_curve(cfg: &Config) -> Result<(Vec<PowerPoint>, serde_json::Value), CliError> {
    if cfg.design.variants.is_empty() {
        return Err(CliError::Config("design.variants is empty".into()));
    }
    let ws = Workspace::load(cfg)?;
    let ctx = ws.context(cfg)?;
    let priors = design_priors(cfg, &ws, &ctx)?;
    let curve = design::power_curve(
        &priors.alternative,
        Some(&priors.null),
        &ctx,
        &cfg.design.variants,
        &cfg.design.n_grid,
        &cfg.design.trial_settings(),
        cfg.seed,
    )?;
    Ok((curve, prior_summary(&priors)))
}

const CURVE_HEADER: [&str; 7] = ["n", "variant", "threshold", "power", "mc_se", "type_one_error", "excluded"];

fn curve_rows(curve: &[PowerPoint]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                p.variant.clone(),
                fmt_f64(p.threshold),
                fmt_f64(p.power),
                fmt_f64(p.mc_se),
                fmt_opt(p.type_one_error),
                p.excluded.to_string(),
            ]
        })
        .collect()
}

fn power(cfg: &Config) -> Result<Artifacts, CliError> {
    let (curve, priors) = compute_curve(cfg)?;
    let mut out = Artifacts::new();
    out.add_table("power_curve.csv", &CURVE_HEADER, &curve_rows(&curve))?;
    out.add_json("design_priors.json", &priors)?;
    Ok(out)
}

/// Read a table previously written by `power-curve`.
pub fn read_curve(path: &Path) -> Result<Vec<PowerPoint>, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().ne(CURVE_HEADER.iter().copied()) {
        return Err(bad(format!("expected columns {}", CURVE_HEADER.join(","))));
    }
    let num = |s: &str| -> Result<f64, CliError> {
        if s == "NA" {
            Ok(f64::NAN)
        } else {
            s.parse().map_err(|_| bad(format!("bad number '{s}'")))
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer '{s}'")));
        out.push(PowerPoint {
            n: int(&rec[0])?,
            variant: rec[1].to_string(),
            threshold: num(&rec[2])?,
            power: num(&rec[3])?,
            mc_se: num(&rec[4])?,
            type_one_error: (&rec[5] != "NA").then(|| num(&rec[5])).transpose()?,
            excluded: int(&rec[6])?,
        });
    }
    Ok(out)
}

fn ssd(cfg: &Config) -> Result<Artifacts, CliError> {
    let mut out = Artifacts::new();
    let curve = match &cfg.design.curve {
        Some(path) => read_curve(path)?,
        None => {
            let (curve, priors) = compute_curve(cfg)?;
            out.add_table("power_curve.csv", &CURVE_HEADER, &curve_rows(&curve))?;
            out.add_json("design_priors.json", &priors)?;
            curve
        }
    };
    let mut variants: Vec<String> = Vec::new();
    for p in &curve {
        if !variants.contains(&p.variant) {
            variants.push(p.variant.clone());
        }
    }
    let mut rows = Vec::new();
    for v in &variants {
        for &target in &cfg.design.target_power {
            let row = match design::sample_size(&curve, v, target) {
                Ok(s) => vec![v.clone(), fmt_f64(target), s.grid.to_string(), fmt_f64(s.interpolated), "ok".into()],
                Err(borrowkit::Error::Unreachable { .. }) => {
                    vec![v.clone(), fmt_f64(target), "NA".into(), "NA".into(), "unreachable".into()]
                }
                Err(e) => return Err(e.into()),
            };
            rows.push(row);
        }
    }
    out.add_table("sample_size.csv", &["variant", "target_power", "n_grid", "n_interpolated", "status"], &rows)?;
    Ok(out)
}

fn synthesize(cfg: &Config) -> Result<Artifacts, CliError> {
    let ws = Workspace::load(cfg)?;
    let data = design::synthesize_external(ws.external()?, cfg.design.synthesize_n, cfg.seed)?;
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &data, delimiter(cfg)?)?;
    let mut out = Artifacts::new();
    out.add("external_synthetic.csv", bytes);
    out.add_json(
        "synthesis_summary.json",
        &json!({
            "n_source": ws.external()?.len(),
            "n_total": data.len(),
            "arm1": data.patients().iter().filter(|p| p.arm == 1).count(),
        }),
    )?;
    Ok(out)
}
