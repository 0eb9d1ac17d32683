use curse_lab::assign::{capacities_from_observed, Matching};
use curse_lab::envgen::{
    build_causal_model, category_frequencies, sample_covariates, sample_history, true_value, CovariateMarginal, EnvironmentConfig,
    FxPipeline, Restriction,
};
use curse_lab::seeds::rng_from_seed;
use rand::seq::SliceRandom;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p_value(observed: &[f64], expected_probs: &[f64], n: usize) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected_probs)
        .map(|(&f, &p)| {
            let e = p * n as f64;
            (f * n as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (expected_probs.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn small_env() -> EnvironmentConfig {
    EnvironmentConfig {
        fx: FxPipeline {
            n_fit: 4000,
            trees: 30,
            ..FxPipeline::default()
        },
        ..EnvironmentConfig::default()
    }
}

#[test]
fn categorical_marginals_pass_chi_square() {
    let config = EnvironmentConfig::default();
    let schema = config.schema().unwrap();
    let n = 50_000;
    let records = sample_covariates(&config, n, 17, Restriction::Any).unwrap();
    for m in &config.covariates {
        if let CovariateMarginal::Categorical { name, probs, .. } = m {
            let freq = category_frequencies(&records, &schema, name).unwrap();
            let p = chi_square_p_value(&freq, probs, n);
            assert!(p > 1e-4, "{name}: chi-square p = {p}");
        }
    }
}

#[test]
fn logged_locations_follow_the_assignment_profile() {
    let config = small_env();
    let model = build_causal_model(&config, 3).unwrap();
    let n = 40_000;
    let data = sample_history(&model, &config, n, 4, 3, Restriction::Any).unwrap().dataset;
    let counts = capacities_from_observed(&data);
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let p = chi_square_p_value(&freq, &config.location_probs().unwrap(), n);
    assert!(p > 1e-4, "location chi-square p = {p}");
}

#[test]
fn free_only_sampling_pins_case_restriction() {
    let config = EnvironmentConfig::default();
    let schema = config.schema().unwrap();
    let records = sample_covariates(&config, 2000, 5, Restriction::FreeOnly).unwrap();
    let freq = category_frequencies(&records, &schema, "case_restriction").unwrap();
    assert_eq!(freq, vec![0.0, 1.0]);
}

#[test]
fn matchings_with_full_capacity_share_one_true_value() {
    let config = small_env();
    let model = build_causal_model(&config, 21).unwrap();
    let data = sample_history(&model, &config, 500, 22, 21, Restriction::FreeOnly).unwrap().dataset;
    let logged = data.locations().to_vec();
    let reference = true_value(&model, data.records(), &Matching::new(logged.clone())).unwrap();
    let caps = capacities_from_observed(&data);
    let mut rng = rng_from_seed(23);
    for _ in 0..100 {
        let mut assignment = logged.clone();
        assignment.shuffle(&mut rng);
        let matching = Matching::new(assignment);
        assert!(matching.is_feasible(&caps));
        let v = true_value(&model, data.records(), &matching).unwrap();
        assert!((v - reference).abs() < 1e-9, "{v} vs {reference}");
    }
}
