//! L1-penalized logistic regression by IRLS with cyclic coordinate descent.
//!
//! Objective: (1/n) Σ [log(1 + e^{η_i}) − y_i η_i] + λ‖β‖₁ with
//! η_i = β₀ + x_iᵀβ and the intercept β₀ unpenalized. Each outer step forms
//! the weighted quadratic approximation at the current iterate and solves
//! it by soft-thresholded coordinate updates, sweeping the active set until
//! it settles before re-checking every coordinate. If a step raises the
//! penalized objective it is halved until it does not.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbm::sigmoid;
use super::LearnError;
use crate::seeds::rng_from_seed;

const MIN_WEIGHT: f64 = 1e-5;
const MAX_OUTER: usize = 100;
const MAX_HALVINGS: usize = 30;
const LOSS_CLIP: f64 = 1e-15;

/// Column-compressed design matrix.
#[derive(Debug, Clone)]
pub struct SparseDesign {
    n_rows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseDesign {
    /// Build from the rows `select` of `rows`, each a list of
    /// `(column, value)` pairs.
    pub fn from_rows(rows: &[Vec<(usize, f64)>], select: &[usize], n_cols: usize) -> Self {
        let mut counts = vec![0usize; n_cols + 1];
        for &i in select {
            for &(j, _) in &rows[i] {
                counts[j + 1] += 1;
            }
        }
        for j in 0..n_cols {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let nnz = col_ptr[n_cols];
        let mut row_idx = vec![0u32; nnz];
        let mut values = vec![0.0; nnz];
        let mut next = counts;
        for (r, &i) in select.iter().enumerate() {
            for &(j, v) in &rows[i] {
                row_idx[next[j]] = r as u32;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            n_rows: select.len(),
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&i, &v)| (i as usize, v))
    }

    fn linear_predictor(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![intercept; self.n_rows];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (i, v) in self.column(j) {
                    eta[i] += v * b;
                }
            }
        }
        eta
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LogitCoefficients {
    pub intercept: f64,
    pub beta: Vec<f64>,
}

impl LogitCoefficients {
    pub fn zeros(dim: usize) -> Self {
        Self {
            intercept: 0.0,
            beta: vec![0.0; dim],
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn mean_logistic_loss(eta: &[f64], y: &[f64]) -> f64 {
    let total: f64 = eta.iter().zip(y).map(|(&e, &yi)| softplus(e) - yi * e).sum();
    total / eta.len() as f64
}

fn penalized_objective(eta: &[f64], y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    mean_logistic_loss(eta, y) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Gradient of the mean logistic loss with respect to each non-intercept
/// coefficient: −(1/n) Σ x_ij (y_i − p_i).
pub fn loss_gradient(design: &SparseDesign, y: &[f64], coef: &LogitCoefficients) -> Vec<f64> {
    let eta = design.linear_predictor(coef.intercept, &coef.beta);
    let n = design.n_rows() as f64;
    (0..design.n_cols())
        .map(|j| -design.column(j).map(|(i, v)| v * (y[i] - sigmoid(eta[i]))).sum::<f64>() / n)
        .collect()
}

/// Smallest λ at which every non-intercept coefficient is zero.
pub fn lambda_max(design: &SparseDesign, y: &[f64]) -> f64 {
    let n = design.n_rows() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    (0..design.n_cols())
        .map(|j| (design.column(j).map(|(i, v)| v * (y[i] - ybar)).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// Geometric grid from `lambda_max` down four decades.
pub fn lambda_grid(lambda_max: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lambda_max];
    }
    (0..points)
        .map(|k| lambda_max * 10f64.powf(-4.0 * k as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// Coordinate sweeps (full and active-set) allowed per outer step.
    pub max_sweeps: usize,
}

/// Solve at one λ starting from `coef` (warm start). Returns whether the
/// outer iteration converged; on failure `coef` holds the last iterate.
pub fn solve(design: &SparseDesign, y: &[f64], lambda: f64, coef: &mut LogitCoefficients, opts: SolveOptions) -> bool {
    let n = design.n_rows();
    let m = design.n_cols();
    let nf = n as f64;
    let mut eta = design.linear_predictor(coef.intercept, &coef.beta);
    let mut w = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut xwx = vec![0.0; m];

    for _ in 0..MAX_OUTER {
        let old = coef.clone();
        let old_obj = penalized_objective(&eta, y, &coef.beta, lambda);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            w[i] = (p * (1.0 - p)).max(MIN_WEIGHT);
            r[i] = y[i] - p;
        }
        let w_sum = w.iter().sum::<f64>() / nf;
        for (j, slot) in xwx.iter_mut().enumerate() {
            *slot = design.column(j).map(|(i, v)| w[i] * v * v).sum::<f64>() / nf;
        }

        let sweep = |coords: &mut dyn Iterator<Item = usize>, coef: &mut LogitCoefficients, eta: &mut [f64], r: &mut [f64]| {
            let d0 = (r.iter().sum::<f64>() / nf) / w_sum;
            let mut max_delta = d0.abs();
            if d0 != 0.0 {
                coef.intercept += d0;
                for i in 0..n {
                    r[i] -= w[i] * d0;
                    eta[i] += d0;
                }
            }
            for j in coords {
                if xwx[j] <= 0.0 {
                    continue;
                }
                let g = design.column(j).map(|(i, v)| v * r[i]).sum::<f64>() / nf + xwx[j] * coef.beta[j];
                let new = soft_threshold(g, lambda) / xwx[j];
                let delta = new - coef.beta[j];
                if delta != 0.0 {
                    coef.beta[j] = new;
                    for (i, v) in design.column(j) {
                        r[i] -= w[i] * v * delta;
                        eta[i] += v * delta;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            max_delta
        };

        let mut budget = opts.max_sweeps;
        while budget > 0 {
            budget -= 1;
            if sweep(&mut (0..m), coef, &mut eta, &mut r) < opts.tol {
                break;
            }
            let active: Vec<usize> = (0..m).filter(|&j| coef.beta[j] != 0.0).collect();
            while budget > 0 {
                budget -= 1;
                if sweep(&mut active.iter().copied(), coef, &mut eta, &mut r) < opts.tol {
                    break;
                }
            }
        }

        let mut new_obj = penalized_objective(&eta, y, &coef.beta, lambda);
        if new_obj > old_obj + 1e-12 * old_obj.abs() {
            let target = coef.clone();
            let mut step = 1.0;
            for _ in 0..MAX_HALVINGS {
                step *= 0.5;
                coef.intercept = old.intercept + step * (target.intercept - old.intercept);
                for j in 0..m {
                    coef.beta[j] = old.beta[j] + step * (target.beta[j] - old.beta[j]);
                }
                eta = design.linear_predictor(coef.intercept, &coef.beta);
                new_obj = penalized_objective(&eta, y, &coef.beta, lambda);
                if new_obj <= old_obj {
                    break;
                }
            }
        }

        let change = coef
            .beta
            .iter()
            .zip(&old.beta)
            .map(|(a, b)| (a - b).abs())
            .fold((coef.intercept - old.intercept).abs(), f64::max);
        if change < opts.tol {
            return true;
        }
    }
    false
}

/// Mean held-out log-loss with probabilities clipped away from 0 and 1.
pub fn log_loss(p: &[f64], y: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let pi = pi.clamp(LOSS_CLIP, 1.0 - LOSS_CLIP);
            -(yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln())
        })
        .sum();
    total / p.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoParams {
    /// Fixed penalty, used when `cv_folds < 2`.
    pub lambda: f64,
    pub cv_folds: usize,
    pub grid_points: usize,
    pub solve: SolveOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coefficients: LogitCoefficients,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    /// Mean cross-validated log-loss per grid point, up to the shortest
    /// fold path (empty without CV).
    pub cv_loss: Vec<f64>,
    pub converged: bool,
}

/// A fold's path stops once its held-out loss has failed to improve on
/// its minimum for this many consecutive grid points.
const CV_PATIENCE: usize = 3;

/// Fraction of null deviance explained beyond which the path stops.
const MAX_DEV_RATIO: f64 = 0.999;
/// Relative gain in explained deviance below which the path stops.
const MIN_DEV_GAIN: f64 = 1e-5;

/// Warm-started fits down `lambdas`. The path is cut short once the fit
/// saturates (explained deviance above 0.999, or gaining less than a
/// 1e-5 fraction between consecutive penalties), so the returned path
/// may be shorter than the grid.
fn path_fit(design: &SparseDesign, y: &[f64], lambdas: &[f64], opts: SolveOptions) -> (Vec<LogitCoefficients>, bool) {
    path_fit_until(design, y, lambdas, opts, |_| false)
}

/// As [`path_fit`], also stopping after any fit for which `stop` returns
/// true.
fn path_fit_until(
    design: &SparseDesign,
    y: &[f64],
    lambdas: &[f64],
    opts: SolveOptions,
    mut stop: impl FnMut(&LogitCoefficients) -> bool,
) -> (Vec<LogitCoefficients>, bool) {
    let mut coef = LogitCoefficients::zeros(design.n_cols());
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let null_loss = mean_logistic_loss(&vec![super::gbm::logit(ybar.clamp(LOSS_CLIP, 1.0 - LOSS_CLIP)); y.len()], y);
    let mut converged = true;
    let mut out = Vec::with_capacity(lambdas.len());
    let mut prev_ratio = 0.0;
    for &lambda in lambdas {
        converged &= solve(design, y, lambda, &mut coef, opts);
        out.push(coef.clone());
        if null_loss <= 0.0 || stop(&coef) {
            break;
        }
        let ratio = 1.0 - mean_logistic_loss(&design.linear_predictor(coef.intercept, &coef.beta), y) / null_loss;
        if out.len() > 1 && (ratio > MAX_DEV_RATIO || ratio - prev_ratio < MIN_DEV_GAIN * ratio) {
            break;
        }
        prev_ratio = ratio;
    }
    (out, converged)
}

fn predict_rows(rows: &[Vec<(usize, f64)>], select: &[usize], coef: &LogitCoefficients) -> Vec<f64> {
    select
        .iter()
        .map(|&i| sigmoid(coef.intercept + rows[i].iter().map(|&(j, v)| v * coef.beta[j]).sum::<f64>()))
        .collect()
}

/// Fit on sparse rows with binary `y`, choosing λ by K-fold CV log-loss
/// (ties go to the larger λ) unless `cv_folds < 2`.
pub fn fit_lasso(rows: &[Vec<(usize, f64)>], y: &[f64], dim: usize, params: &LassoParams) -> Result<LassoFit, LearnError> {
    if rows.is_empty() {
        return Err(LearnError::EmptyData("lasso-logit needs at least one row".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(LearnError::NonBinaryOutcome(*bad));
    }
    let all: Vec<usize> = (0..rows.len()).collect();
    let design = SparseDesign::from_rows(rows, &all, dim);

    if params.cv_folds < 2 {
        let mut coef = LogitCoefficients::zeros(dim);
        let converged = solve(&design, y, params.lambda, &mut coef, params.solve);
        if !converged {
            log::warn!("lasso-logit did not converge at lambda {}; returning last iterate", params.lambda);
        }
        return Ok(LassoFit {
            coefficients: coef,
            lambda: params.lambda,
            lambda_grid: vec![params.lambda],
            cv_loss: Vec::new(),
            converged,
        });
    }

    let folds = params.cv_folds.min(rows.len());
    let grid = lambda_grid(lambda_max(&design, y), params.grid_points);
    let mut order = all.clone();
    order.shuffle(&mut rng_from_seed(params.seed));
    let mut fold_of = vec![0usize; rows.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let fold_losses: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = all.iter().copied().filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = all.iter().copied().filter(|&i| fold_of[i] == k).collect();
            let d = SparseDesign::from_rows(rows, &train, dim);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let yh: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let mut losses = Vec::new();
            let mut best = f64::INFINITY;
            let mut rising = 0;
            path_fit_until(&d, &yt, &grid, params.solve, |c| {
                let loss = log_loss(&predict_rows(rows, &test, c), &yh);
                losses.push(loss);
                if loss < best {
                    best = loss;
                    rising = 0;
                } else {
                    rising += 1;
                }
                rising >= CV_PATIENCE
            });
            losses
        })
        .collect();
    let reached = fold_losses.iter().map(Vec::len).min().unwrap_or(0);
    let cv_loss: Vec<f64> = (0..reached)
        .map(|g| fold_losses.iter().map(|f| f[g]).sum::<f64>() / folds as f64)
        .collect();
    let mut best = 0;
    for g in 1..reached {
        if cv_loss[g] < cv_loss[best] {
            best = g;
        }
    }
    let (mut path, converged) = path_fit(&design, y, &grid[..=best], params.solve);
    if !converged {
        log::warn!("lasso-logit path did not fully converge; returning last iterates");
    }
    let chosen = path.len() - 1;
    Ok(LassoFit {
        coefficients: path.pop().expect("grid is nonempty"),
        lambda: grid[chosen],
        lambda_grid: grid,
        cv_loss,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use rand::Rng;

    const OPTS: SolveOptions = SolveOptions {
        tol: 1e-7,
        max_sweeps: 1000,
    };

    fn toy(n: usize, seed: u64) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x0: f64 = rng.random_range(-1.0..1.0);
            let x1: f64 = rng.random_range(-1.0..1.0);
            let x2 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let p = sigmoid(0.3 + 1.5 * x0 - 0.7 * x2);
            y.push(if rng.random_bool(p) { 1.0 } else { 0.0 });
            rows.push(vec![(0, x0), (1, x1), (2, x2)]);
        }
        (rows, y)
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (rows, y) = toy(400, 1);
        let all: Vec<usize> = (0..rows.len()).collect();
        let d = SparseDesign::from_rows(&rows, &all, 3);
        let mut coef = LogitCoefficients::zeros(3);
        assert!(solve(&d, &y, lambda_max(&d, &y) * 1.0001, &mut coef, OPTS));
        assert!(coef.beta.iter().all(|&b| b == 0.0));
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        assert!((sigmoid(coef.intercept) - ybar).abs() < 1e-6);
    }

    #[test]
    fn kkt_conditions_hold() {
        let (rows, y) = toy(600, 2);
        let all: Vec<usize> = (0..rows.len()).collect();
        let d = SparseDesign::from_rows(&rows, &all, 3);
        let lambda = 0.2 * lambda_max(&d, &y);
        let mut coef = LogitCoefficients::zeros(3);
        assert!(solve(&d, &y, lambda, &mut coef, OPTS));
        let grad = loss_gradient(&d, &y, &coef);
        for (g, b) in grad.iter().zip(&coef.beta) {
            if *b == 0.0 {
                assert!(g.abs() <= lambda + 1e-5);
            } else {
                assert!((g + lambda * b.signum()).abs() <= 1e-5, "g {g} b {b}");
            }
        }
    }

    #[test]
    fn cross_validation_picks_a_grid_point() {
        let (rows, y) = toy(800, 3);
        let params = LassoParams {
            lambda: 0.0,
            cv_folds: 5,
            grid_points: 12,
            solve: OPTS,
            seed: 4,
        };
        let fit = fit_lasso(&rows, &y, 3, &params).unwrap();
        assert!(fit.lambda_grid.contains(&fit.lambda));
        assert_eq!(fit.lambda_grid.len(), 12);
        assert!(!fit.cv_loss.is_empty() && fit.cv_loss.len() <= 12);
        let best = fit.lambda_grid.iter().position(|&l| l == fit.lambda).unwrap();
        assert!(fit.cv_loss.iter().all(|&l| l >= fit.cv_loss[best]));
        assert!(fit.coefficients.beta[0] > 0.5);
        let last = fit.lambda_grid[11] / fit.lambda_grid[0];
        assert!((last - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn non_binary_outcomes_are_rejected() {
        let rows = vec![vec![(0, 1.0)], vec![(0, 2.0)]];
        let params = LassoParams {
            lambda: 0.1,
            cv_folds: 0,
            grid_points: 5,
            solve: OPTS,
            seed: 0,
        };
        assert!(matches!(fit_lasso(&rows, &[0.0, 0.5], 1, &params), Err(LearnError::NonBinaryOutcome(_))));
    }
}
