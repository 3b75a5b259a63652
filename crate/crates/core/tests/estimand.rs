use borrowkit::estimand::{
    decide, decision_probability, gamma_at, histogram, marginal_effect_draws, summarize, DecisionRule, SubgroupSpec,
};
use borrowkit::inference::Diagnostics;
use borrowkit::stats::inv_logit;
use borrowkit::{Matrix, PosteriorDraws, SamplerConfig};
use proptest::prelude::*;

fn draws(rows: &[Vec<f64>], p: usize) -> PosteriorDraws {
    let d = rows[0].len();
    PosteriorDraws {
        names: vec![],
        p,
        q: d - p,
        draws: Matrix::from_rows(d, rows),
        chains: 1,
        diagnostics: Diagnostics {
            rhat: vec![],
            ess_bulk: vec![],
            acceptance_rate: 1.0,
            divergences: 0,
            step_sizes: vec![],
            converged: true,
            warnings: vec![],
        },
        config: SamplerConfig::default(),
    }
}

/// Reference rows `(1, x)` and subgroup vector `(1, 1)`.
fn subgroup(xs: &[f64]) -> SubgroupSpec {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
    SubgroupSpec::from_design(Matrix::from_rows(2, &rows), vec![1.0, 1.0], "test").unwrap()
}

fn row_effects(theta: &[f64], xs: &[f64]) -> Vec<f64> {
    let effect = theta[2] + theta[3];
    xs.iter()
        .map(|&x| {
            let base = theta[0] + theta[1] * x;
            inv_logit(base + effect) - inv_logit(base)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bootstrap_gamma_stays_within_row_effects(
        thetas in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 4), 1..20),
        xs in prop::collection::vec(-2.0..2.0f64, 1..15),
        seed in any::<u64>(),
    ) {
        let spec = subgroup(&xs);
        let out = marginal_effect_draws(&draws(&thetas, 2), &spec, true, seed).unwrap();
        for (theta, g) in thetas.iter().zip(&out.gamma) {
            let eff = row_effects(theta, &xs);
            let lo = eff.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*g >= lo - 1e-12 && *g <= hi + 1e-12);
        }
        let uniform = marginal_effect_draws(&draws(&thetas, 2), &spec, false, seed).unwrap();
        for (theta, g) in thetas.iter().zip(&uniform.gamma) {
            let eff = row_effects(theta, &xs);
            prop_assert!((g - eff.iter().sum::<f64>() / eff.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_is_reproducible_per_seed(
        thetas in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 4), 1..10),
        xs in prop::collection::vec(-2.0..2.0f64, 2..10),
        seed in any::<u64>(),
    ) {
        let d = draws(&thetas, 2);
        let spec = subgroup(&xs);
        let a = marginal_effect_draws(&d, &spec, true, seed).unwrap();
        let b = marginal_effect_draws(&d, &spec, true, seed).unwrap();
        prop_assert_eq!(a.gamma, b.gamma);
    }

    #[test]
    fn gamma_sign_follows_the_subgroup_effect(theta in prop::collection::vec(-2.0..2.0f64, 4), xs in prop::collection::vec(-2.0..2.0f64, 1..10)) {
        let g = gamma_at(&theta[..2], &theta[2..], &subgroup(&xs), None);
        let effect = theta[2] + theta[3];
        prop_assert!(g.signum() == effect.signum() || g == 0.0);
    }

    #[test]
    fn tau_grows_with_the_interval(gamma in prop::collection::vec(-1.0..1.0f64, 1..200), a in -1.0..1.0f64, b in 0.0..0.5f64) {
        let narrow = decision_probability(&gamma, (a, a + b));
        let wide = decision_probability(&gamma, (a - 0.1, a + b + 0.1));
        prop_assert!(narrow <= wide);
        prop_assert!((0.0..=1.0).contains(&wide));
    }

    #[test]
    fn decision_is_monotone_in_tau(t1 in 0.0..=1.0f64, t2 in 0.0..=1.0f64, nu in 0.01..0.99f64) {
        let rule = DecisionRule::new(0.0, f64::INFINITY, nu).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(!decide(lo, &rule) || decide(hi, &rule));
    }

    #[test]
    fn histogram_counts_every_value(values in prop::collection::vec(-5.0..5.0f64, 1..300), bins in 1usize..50) {
        let h = histogram(&values, bins);
        prop_assert_eq!(h.counts.iter().sum::<usize>(), values.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
    }
}

#[test]
fn decision_is_strict_at_the_threshold() {
    let rule = DecisionRule::new(0.0, f64::INFINITY, 0.75).unwrap();
    assert!(!decide(0.75, &rule));
    assert!(decide(0.7500001, &rule));
    // Draws on the interval boundary do not count.
    assert_eq!(decision_probability(&[0.0, 0.0, 0.1, 0.2], (0.0, f64::INFINITY)), 0.5);
}

#[test]
fn summary_quantiles_bracket_the_median() {
    let gamma: Vec<f64> = (0..1001).map(|i| f64::from(i) / 1000.0).collect();
    let s = summarize(&gamma, (0.25, f64::INFINITY));
    assert!((s.median - 0.5).abs() < 1e-12);
    assert!(s.lower_95 < s.median && s.median < s.upper_95);
    assert!((s.tau - 750.0 / 1001.0).abs() < 1e-12);
}

#[test]
fn empty_interval_is_rejected() {
    assert!(DecisionRule::new(0.1, 0.1, 0.9).is_err());
    assert!(DecisionRule::new(0.0, 1.0, 1.0).is_err());
}
