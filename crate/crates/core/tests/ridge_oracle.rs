use curse_lab::learners::{fit_ols, fit_ridge, NormalEquations};
use curse_lab::seeds::rng_from_seed;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Minimize (1/2n)‖y − Xβ‖² + (λ/2)‖β‖² by plain gradient descent.
fn gradient_descent(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut beta = vec![0.0; d];
    let step = 0.1;
    for _ in 0..50_000 {
        let mut grad: Vec<f64> = beta.iter().map(|b| lambda * b).collect();
        for i in 0..n {
            let r = (0..d).map(|j| x[(i, j)] * beta[j]).sum::<f64>() - y[i];
            for j in 0..d {
                grad[j] += x[(i, j)] * r / n as f64;
            }
        }
        let mut change = 0.0f64;
        for j in 0..d {
            beta[j] -= step * grad[j];
            change = change.max((step * grad[j]).abs());
        }
        if change < 1e-14 {
            break;
        }
    }
    beta
}

fn design(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let truth: Vec<f64> = (0..d).map(|j| j as f64 - 1.0).collect();
    let y = (0..n)
        .map(|i| (0..d).map(|j| x[(i, j)] * truth[j]).sum::<f64>() + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

#[test]
fn ridge_matches_gradient_descent() {
    for (seed, lambda) in [(1, 0.01), (2, 0.5), (3, 3.0)] {
        let (x, y) = design(200, 4, seed);
        let closed = fit_ridge(&x, &y, lambda).unwrap();
        let oracle = gradient_descent(&x, &y, lambda);
        for (a, b) in closed.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "lambda {lambda}: {closed:?} vs {oracle:?}");
        }
    }
}

#[test]
fn ridge_on_nearly_collinear_features_splits_the_signal() {
    // x and t·x with t = 1 almost always: the penalty spreads b evenly.
    let mut rng = rng_from_seed(9);
    let (n, b, lambda) = (20_000, 1.0, 0.5);
    let mut ne = NormalEquations::new(3);
    for _ in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let t = if rng.random::<f64>() < 0.999 { 1.0 } else { 0.0 };
        ne.add_dense(&[t, x, t * x], b * x + rng.sample::<f64, _>(StandardNormal));
    }
    let beta = ne.solve_ridge(lambda).unwrap();
    let half = b / (2.0 + lambda);
    assert!((beta[1] - half).abs() < 0.05 && (beta[2] - half).abs() < 0.05, "{beta:?}");
    assert!(beta[0].abs() < 0.05);
}

#[test]
fn ols_is_ridge_limit() {
    let (x, y) = design(300, 5, 4);
    let ols = fit_ols(&x, &y).unwrap();
    assert!(!ols.rank_deficient);
    let ridge = fit_ridge(&x, &y, 1e-10).unwrap();
    for (a, b) in ols.coefficients.iter().zip(&ridge) {
        assert!((a - b).abs() < 1e-7);
    }
}
