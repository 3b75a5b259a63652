use std::collections::BTreeMap;

use borrowkit::design::{
    calibrate_from_taus, external_posterior, power_curve, rejection_rate, sample_size, simulate_internal_trial,
    simulate_taus, split_design_priors, synthesize_external, DesignPrior, Hypothesis, PowerVariant, ThresholdChoice,
    TrialSettings,
};
use borrowkit::rng::substream;
use borrowkit::simlab::{analysis_formula, generate_scenario, simulation_schema, ScenarioConfig};
use borrowkit::{AnalysisContext, AnalysisMethod, DecisionRule, Error, PriorSpec, SamplerConfig, WeightingConfig};
use proptest::prelude::*;

fn grid() -> Vec<f64> {
    (1..100).map(|i| f64::from(i) / 100.0).collect()
}

/// Small simulated data: internal covariates and 150 external patients.
fn context() -> (AnalysisContext, DesignPrior) {
    let data = generate_scenario(&ScenarioConfig::base("design", false, 0.6, 0.0, 100, 50), &mut substream(5, "design", 0))
        .unwrap();
    let encoder = analysis_formula().compile(&simulation_schema()).unwrap();
    let theta = [-0.5, 0.4, 0.3, 0.3, 0.3, 0.6];
    let prior = DesignPrior::point(&theta, encoder.p(), Hypothesis::Alternative, data.rct.clone()).unwrap();
    let ctx = AnalysisContext::new(
        encoder,
        Some(data.external()),
        PriorSpec::normal(6, 0.0, 2.5).unwrap(),
        SamplerConfig {
            chains: 2,
            warmup: 200,
            draws: 200,
            max_rhat: 1.1,
            ..SamplerConfig::default()
        },
        BTreeMap::from([("x4".to_string(), "1".to_string())]),
        DecisionRule::new(0.0, f64::INFINITY, 0.9).unwrap(),
    )
    .unwrap()
    .with_bootstrap(false);
    (ctx, prior)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn calibrated_threshold_is_the_smallest_within_budget(
        taus in prop::collection::vec(0.0..=1.0f64, 1..200),
        budget in 0.0..0.5f64,
    ) {
        let g = grid();
        match calibrate_from_taus(&taus, &g, budget) {
            Ok((nu, rate)) => {
                prop_assert_eq!(rate, rejection_rate(&taus, nu));
                prop_assert!(rate <= budget);
                prop_assert!(g.iter().filter(|&&v| v < nu).all(|&v| rejection_rate(&taus, v) > budget));
            }
            Err(Error::Infeasible { best_rate, .. }) => {
                prop_assert!(g.iter().all(|&v| rejection_rate(&taus, v) > budget));
                prop_assert!(best_rate > budget);
            }
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn larger_budget_never_raises_the_threshold(
        taus in prop::collection::vec(0.0..=1.0f64, 1..200),
        a in 0.0..0.5f64,
        b in 0.0..0.5f64,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if let (Ok((strict, _)), Ok((loose, _))) = (calibrate_from_taus(&taus, &grid(), lo), calibrate_from_taus(&taus, &grid(), hi)) {
            prop_assert!(loose <= strict);
        }
    }

    #[test]
    fn rejection_rate_falls_with_the_threshold(taus in prop::collection::vec(0.0..=1.0f64, 1..200), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rejection_rate(&taus, hi) <= rejection_rate(&taus, lo));
    }
}

#[test]
fn synthesized_external_keeps_arm_shares() {
    let data = generate_scenario(&ScenarioConfig::base("s", true, 0.6, 0.0, 60, 40), &mut substream(1, "s", 0)).unwrap();
    let ext = data.external();
    let big = synthesize_external(&ext, 1000, 3).unwrap();
    assert_eq!(big.len(), 1000);
    let treated = big.patients().iter().filter(|p| p.arm == 1).count();
    assert_eq!(treated, 400);
    assert!(big.patients().iter().all(|p| ext.patients().contains(p)));
    assert_eq!(big, synthesize_external(&ext, 1000, 3).unwrap());
    assert_ne!(big, synthesize_external(&ext, 1000, 4).unwrap());
}

#[test]
fn simulated_trials_depend_only_on_their_stream() {
    let (ctx, prior) = context();
    let a = simulate_internal_trial(&prior, &ctx.encoder, 50, 0.5, &mut substream(9, "trial", 0)).unwrap();
    let b = simulate_internal_trial(&prior, &ctx.encoder, 50, 0.5, &mut substream(9, "trial", 0)).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(a.data.len(), 50);
    assert!(simulate_internal_trial(&prior, &ctx.encoder, 50, 1.0, &mut substream(9, "trial", 0)).is_err());
}

#[test]
fn identical_variants_see_identical_trials() {
    let (ctx, prior) = context();
    let settings = TrialSettings {
        n_reps: 6,
        max_excluded: 1.0,
        ..TrialSettings::default()
    };
    let weighted = AnalysisMethod::Weighted(WeightingConfig::default().with_covariates(&["x1", "x2", "x3"]));
    let methods = vec![
        ("a".to_string(), weighted.clone()),
        ("b".to_string(), weighted.clone()),
        ("nb".to_string(), AnalysisMethod::NoBorrow),
    ];
    let sample = simulate_taus(&prior, &ctx, &methods, 40, &settings, 17).unwrap();
    assert_eq!(sample.taus[0], sample.taus[1]);

    // Replicate k does not depend on how many replicates run.
    let fewer = TrialSettings { n_reps: 3, ..settings };
    let prefix = simulate_taus(&prior, &ctx, &methods, 40, &fewer, 17).unwrap();
    assert_eq!(prefix.taus[2], sample.taus[2][..3].to_vec());

    let variants: Vec<PowerVariant> = methods
        .iter()
        .map(|(label, method)| PowerVariant {
            label: label.clone(),
            method: method.clone(),
            threshold: ThresholdChoice::Fixed(0.9),
        })
        .collect();
    let curve = power_curve(&prior, None, &ctx, &variants, &[40], &settings, 17).unwrap();
    assert_eq!(curve[0].power, curve[1].power);
    assert!(curve.iter().all(|p| p.type_one_error.is_none()));
    let calibrated = vec![PowerVariant {
        threshold: ThresholdChoice::Calibrated { budget: 0.1, grid: grid() },
        ..variants[2].clone()
    }];
    assert!(power_curve(&prior, None, &ctx, &calibrated, &[40], &settings, 17).is_err());
}

#[test]
fn design_priors_partition_the_external_posterior() {
    let (ctx, _) = context();
    let ext = ctx.external.clone().unwrap();
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 300,
        draws: 500,
        ..SamplerConfig::default()
    };
    let draws = external_posterior(&ext, None, &PriorSpec::normal(6, 0.0, 2.5).unwrap(), &ctx.encoder, &sampler).unwrap();
    let spec = ctx.subgroup_spec(&ext).unwrap();
    let (null, alt) = split_design_priors(&draws, &ctx.rule, &spec, &ext, 10).unwrap();
    assert_eq!(null.len() + alt.len(), draws.len());
    assert!(alt.gamma.iter().all(|&g| ctx.rule.contains(g)));
    assert!(null.gamma.iter().all(|&g| !ctx.rule.contains(g)));
    assert!((null.retained_fraction + alt.retained_fraction - 1.0).abs() < 1e-12);
    let flat = PriorSpec::flat(6);
    assert!(external_posterior(&ext, None, &flat, &ctx.encoder, &sampler).is_err());
    assert!(matches!(
        split_design_priors(&draws, &ctx.rule, &spec, &ext, draws.len()),
        Err(Error::Starvation(_))
    ));
}

#[test]
fn sample_size_interpolates_between_bracketing_points() {
    let (ctx, prior) = context();
    let settings = TrialSettings {
        n_reps: 4,
        max_excluded: 1.0,
        ..TrialSettings::default()
    };
    let variant = PowerVariant {
        label: "nb".into(),
        method: AnalysisMethod::NoBorrow,
        threshold: ThresholdChoice::Fixed(0.5),
    };
    let curve = power_curve(&prior, None, &ctx, &[variant], &[20, 60], &settings, 2).unwrap();
    let top = curve.iter().map(|p| p.power).fold(0.0, f64::max);
    if top > 0.0 {
        let s = sample_size(&curve, "nb", top).unwrap();
        assert!(s.interpolated <= s.grid as f64 && s.interpolated >= 20.0);
    }
    assert!(matches!(sample_size(&curve, "nb", 1.01), Err(Error::Unreachable { .. })));
}
