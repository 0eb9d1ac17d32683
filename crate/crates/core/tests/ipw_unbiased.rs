use curse_lab::assign::{capacities_from_observed, solve, AssignmentInstance};
use curse_lab::envgen::{build_causal_model, resample_assignments, sample_history, true_value, EnvironmentConfig, FxPipeline, ResampleMode, Restriction};
use curse_lab::evaluate::ipw;
use curse_lab::learners::score_matrix;
use curse_lab::seeds::SeedTree;
use rayon::prelude::*;

#[test]
fn ipw_is_unbiased_under_redrawn_assignments() {
    let config = EnvironmentConfig {
        n_locations: 10,
        fx: FxPipeline {
            n_fit: 3000,
            trees: 20,
            ..FxPipeline::default()
        },
        ..EnvironmentConfig::default()
    };
    let model = build_causal_model(&config, 1).unwrap();
    let test = sample_history(&model, &config, 300, 2, 1, Restriction::FreeOnly).unwrap().dataset;
    // Any fixed matching works; use the truth-optimal one.
    let instance = AssignmentInstance::new(score_matrix(&model, test.records()).unwrap(), capacities_from_observed(&test)).unwrap();
    let (matching, _) = solve(&instance);
    let truth = true_value(&model, test.records(), &matching).unwrap();

    let seeds = SeedTree::new(3);
    let draws = 2000;
    let estimates: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let data = resample_assignments(&model, &test, ResampleMode::Redraw, seeds.derive("redraw", b)).unwrap();
            ipw(&matching, &data).unwrap().employment_count
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / draws as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    assert!((mean - truth).abs() < 3.0 * se, "mean {mean}, truth {truth}, se {se}");
}
