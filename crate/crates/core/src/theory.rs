//! Numerical checks of two stylized winner's-curse constructions.
//!
//! *Piecewise-linear example.* The true outcome f*(t) rises linearly from
//! 0 at t = 0 to `y_max` at `t0`, then falls linearly to 0 at t = 1. A
//! through-the-origin OLS fit βt on t ~ Uniform[0, 1] has slope
//! (1 + t0)·y_max/2, picks t̂ = 1, and reports that slope as the value of a
//! treatment whose true outcome is 0.
//!
//! *Ridge example.* Features φ(x, t) = [t, x, tx] with x ~ N(0, 1),
//! t ~ Bernoulli(p), y = bx + σε, so β* = [0, b, 0]. With p near 1 the
//! columns x and tx are nearly collinear; ridge splits b evenly between
//! them, which is accurate on the logged distribution but makes the
//! induced policy t = 1 iff β₁ + β₃x ≥ 0 look valuable when it is not.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use thiserror::Error;

use crate::learners::NormalEquations;
use crate::seeds::SeedTree;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("sample-size hypothesis violated: need n^(1/4) >= 4*sqrt(log(8/delta))/b, got {lhs} < {rhs}")]
    Hypothesis { lhs: f64, rhs: f64 },

    #[error("writing report: {0}")]
    Io(String),
}

// ── Report ──

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckKind {
    /// |computed − target| ≤ tolerance.
    Equal { tolerance: f64 },
    /// computed ≤ target.
    AtMost,
    /// computed ≥ target.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheck {
    pub name: String,
    pub computed: f64,
    pub target: f64,
    pub kind: CheckKind,
    pub pass: bool,
}

impl TheoryCheck {
    pub fn new(name: impl Into<String>, computed: f64, target: f64, kind: CheckKind) -> Self {
        let pass = match kind {
            CheckKind::Equal { tolerance } => (computed - target).abs() <= tolerance,
            CheckKind::AtMost => computed <= target,
            CheckKind::AtLeast => computed >= target,
        };
        Self {
            name: name.into(),
            computed,
            target,
            kind,
            pass,
        }
    }

    pub fn equal(name: impl Into<String>, computed: f64, target: f64, tolerance: f64) -> Self {
        Self::new(name, computed, target, CheckKind::Equal { tolerance })
    }

    fn relation(&self) -> (&'static str, f64) {
        match self.kind {
            CheckKind::Equal { tolerance } => ("equal", tolerance),
            CheckKind::AtMost => ("at-most", 0.0),
            CheckKind::AtLeast => ("at-least", 0.0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub checks: Vec<TheoryCheck>,
}

impl TheoryReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&TheoryCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TheoryError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| TheoryError::Io(e.to_string());
        w.write_record(["check", "relation", "computed", "target", "tolerance", "pass"]).map_err(io)?;
        for c in &self.checks {
            let (relation, tolerance) = c.relation();
            w.write_record([
                c.name.clone(),
                relation.to_string(),
                c.computed.to_string(),
                c.target.to_string(),
                tolerance.to_string(),
                c.pass.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| TheoryError::Io(e.to_string()))
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let (relation, tolerance) = c.relation();
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            let op = match relation {
                "equal" => format!("≈ {:.6} (±{tolerance:e})", c.target),
                "at-most" => format!("<= {:.6}", c.target),
                _ => format!(">= {:.6}", c.target),
            };
            writeln!(f, "{verdict}  {:<44} {:.6} {op}", c.name, c.computed)?;
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        write!(f, "{passed}/{} checks passed", self.checks.len())
    }
}

// ── Piecewise-linear example ──

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseEnvParams {
    pub t0: f64,
    pub y_max: f64,
}

impl PiecewiseEnvParams {
    pub fn new(t0: f64, y_max: f64) -> Result<Self, TheoryError> {
        if !(t0 > 0.0 && t0 < 1.0) {
            return Err(TheoryError::InvalidParams(format!("t0 must lie in (0, 1), got {t0}")));
        }
        if !y_max.is_finite() {
            return Err(TheoryError::InvalidParams(format!("y_max must be finite, got {y_max}")));
        }
        Ok(Self { t0, y_max })
    }

    /// ε = 1 − t0.
    pub fn eps(&self) -> f64 {
        1.0 - self.t0
    }
}

pub fn piecewise_f_star(t: f64, params: &PiecewiseEnvParams) -> f64 {
    let PiecewiseEnvParams { t0, y_max } = *params;
    if t <= t0 {
        y_max * t / t0
    } else {
        y_max * (1.0 - t) / (1.0 - t0)
    }
}

/// Closed-form OLS slope (1 + t0)·y_max/2; also the winner's-curse bias.
pub fn ols_slope_closed_form(params: &PiecewiseEnvParams) -> f64 {
    (1.0 + params.t0) * params.y_max / 2.0
}

fn slope_from_points(params: &PiecewiseEnvParams, points: impl Iterator<Item = f64>) -> f64 {
    let (mut tf, mut tt) = (0.0, 0.0);
    for t in points {
        tf += t * piecewise_f_star(t, params);
        tt += t * t;
    }
    tf / tt
}

/// E[t f*(t)] / E[t²] by the composite midpoint rule.
pub fn ols_slope_grid(params: &PiecewiseEnvParams, grid: usize) -> f64 {
    let h = 1.0 / grid as f64;
    slope_from_points(params, (0..grid).map(|k| (k as f64 + 0.5) * h))
}

/// The same slope from `draws` uniform samples, one drawn uniformly inside
/// each of `draws` equal strata.
pub fn ols_slope_monte_carlo(params: &PiecewiseEnvParams, draws: usize, seed: u64) -> f64 {
    let mut rng = SeedTree::new(seed).rng("piecewise-draws", 0);
    let h = 1.0 / draws as f64;
    let points: Vec<f64> = (0..draws).map(|k| (k as f64 + rng.random::<f64>()) * h).collect();
    slope_from_points(params, points.into_iter())
}

pub fn verify_lemma1(params: &PiecewiseEnvParams, grid: usize, seed: u64) -> Vec<TheoryCheck> {
    let tag = format!("t0={},y_max={}", params.t0, params.y_max);
    let grid_slope = ols_slope_grid(params, grid);
    let mc_slope = ols_slope_monte_carlo(params, grid, seed);
    vec![
        TheoryCheck::equal(format!("ols-slope[{tag}]"), grid_slope, ols_slope_closed_form(params), 1e-3),
        TheoryCheck::equal(format!("ols-slope-monte-carlo[{tag}]"), mc_slope, grid_slope, 1e-3),
    ]
}

/// t̂ = argmax of β̂t over an evenly spaced grid on [0, 1].
pub fn plug_in_argmax(slope: f64, grid: usize) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=grid {
        let t = k as f64 / grid as f64;
        if slope * t > best.0 {
            best = (slope * t, t);
        }
    }
    best.1
}

pub fn verify_prop1(params: &PiecewiseEnvParams, grid: usize) -> Vec<TheoryCheck> {
    let tag = format!("t0={},y_max={}", params.t0, params.y_max);
    let slope = ols_slope_grid(params, grid);
    let t_hat = plug_in_argmax(slope, grid);
    let estimated = slope * t_hat;
    let realized = piecewise_f_star(t_hat, params);
    let bias = estimated - realized;
    let mut checks = vec![
        TheoryCheck::equal(format!("plug-in-argmax[{tag}]"), t_hat, 1.0, 0.0),
        TheoryCheck::equal(format!("realized-outcome[{tag}]"), realized, 0.0, 1e-12),
        TheoryCheck::equal(format!("optimism-bias[{tag}]"), bias, ols_slope_closed_form(params), 1e-3),
    ];
    if params.t0 >= 0.5 {
        checks.push(TheoryCheck::new(
            format!("optimism-bias-exceeds-half-peak[{tag}]"),
            bias,
            params.y_max / 2.0,
            CheckKind::AtLeast,
        ));
    }
    checks
}

/// ∫₀¹ (β̂t − f*(t))² dt by the midpoint rule.
pub fn mse_grid(params: &PiecewiseEnvParams, grid: usize) -> f64 {
    let slope = ols_slope_grid(params, grid);
    let h = 1.0 / grid as f64;
    (0..grid)
        .map(|k| {
            let t = (k as f64 + 0.5) * h;
            (slope * t - piecewise_f_star(t, params)).powi(2)
        })
        .sum::<f64>()
        * h
}

/// 2ε·y_max² + ε²·y_max²/3.
pub fn mse_bound(params: &PiecewiseEnvParams) -> f64 {
    let (e, y2) = (params.eps(), params.y_max * params.y_max);
    2.0 * e * y2 + e * e * y2 / 3.0
}

pub fn verify_prop2(params: &PiecewiseEnvParams, grid: usize) -> Result<TheoryCheck, TheoryError> {
    if params.eps() > 0.5 {
        return Err(TheoryError::InvalidParams(format!(
            "the MSE bound needs eps = 1 - t0 <= 1/2, got {}",
            params.eps()
        )));
    }
    Ok(TheoryCheck::new(
        format!("mse-bound[eps={:.4},y_max={}]", params.eps(), params.y_max),
        mse_grid(params, grid),
        mse_bound(params),
        CheckKind::AtMost,
    ))
}

// ── Ridge example ──

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeExampleParams {
    pub b: f64,
    pub p: f64,
    pub n: usize,
    pub sigma: f64,
    pub delta: f64,
    /// Penalty multiplier; `None` means n^(1/4).
    pub alpha: Option<f64>,
}

impl Default for RidgeExampleParams {
    fn default() -> Self {
        Self {
            b: 1.0,
            p: 0.999,
            n: 100_000,
            sigma: 1.0,
            delta: 0.05,
            alpha: None,
        }
    }
}

impl RidgeExampleParams {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: String| Err(TheoryError::InvalidParams(m));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.n < 2 || !(self.sigma >= 0.0) || !(self.b > 0.0) {
            return bad("need n >= 2, sigma >= 0 and b > 0".into());
        }
        if !(self.alpha() > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha()));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or((self.n as f64).powf(0.25))
    }

    pub fn log_term(&self) -> f64 {
        (8.0 / self.delta).ln()
    }

    /// λ = α·√(18·log(8/δ)/n).
    pub fn lambda(&self) -> f64 {
        self.alpha() * (18.0 * self.log_term() / self.n as f64).sqrt()
    }

    /// The gap Δ = 2(1 − p) implied by the chosen p.
    pub fn gap(&self) -> f64 {
        2.0 * (1.0 - self.p)
    }

    pub fn beta_star(&self) -> [f64; 3] {
        [0.0, self.b, 0.0]
    }

    /// n^(1/4) ≥ 4√(log(8/δ))/b.
    pub fn check_hypothesis(&self) -> Result<(), TheoryError> {
        let lhs = (self.n as f64).powf(0.25);
        let rhs = 4.0 * self.log_term().sqrt() / self.b;
        if lhs < rhs {
            return Err(TheoryError::Hypothesis { lhs, rhs });
        }
        Ok(())
    }

    /// 6b²λ + 72·log(8/δ)/n.
    pub fn accuracy_bound(&self) -> f64 {
        6.0 * self.b * self.b * self.lambda() + 72.0 * self.log_term() / self.n as f64
    }

    fn root_term(&self) -> f64 {
        (self.log_term() / (self.alpha() * (self.n as f64).sqrt())).sqrt()
    }

    /// 8b/α + 4√(log(8/δ)/(α√n)).
    pub fn stability_bound(&self) -> f64 {
        8.0 * self.b / self.alpha() + 4.0 * self.root_term()
    }

    /// Policy-value stability radius R.
    pub fn curse_radius(&self) -> f64 {
        let (a, b) = (self.alpha(), self.b);
        24.0 * b / a + 12.0 * self.root_term() + 128.0 / (a * a)
            + 32.0 * self.log_term() / (a * b * b * (self.n as f64).sqrt())
    }
}

/// b/(2√(2π)): the limiting optimism bias.
pub fn asymptotic_bias(b: f64) -> f64 {
    b / (2.0 * (2.0 * PI).sqrt())
}

/// Optimism bias of the population ridge target at penalty λ: the policy
/// t = 1 iff x ≥ 0 evaluated under β̄ gains b/(2+λ)·E[x; x ≥ 0].
pub fn finite_lambda_bias(b: f64, lambda: f64) -> f64 {
    b / (2.0 + lambda) / (2.0 * PI).sqrt()
}

/// (β̄, Σ) with β̄ = [0, b/(2+λ), b/(2+λ)] and Σ = E[φφᵀ].
pub fn ridge_population_target(params: &RidgeExampleParams, lambda: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let p = params.p;
    let half = params.b / (2.0 + lambda);
    ([0.0, half, half], [[p, 0.0, 0.0], [0.0, 1.0, p], [0.0, p, p]])
}

pub fn features(x: f64, t: f64) -> [f64; 3] {
    [t, x, t * x]
}

/// Ridge fit on one synthetic dataset of size n.
pub fn fit_ridge_example(params: &RidgeExampleParams, seed: u64) -> [f64; 3] {
    let mut rng = SeedTree::new(seed).rng("ridge-data", 0);
    let mut ne = NormalEquations::new(3);
    for _ in 0..params.n {
        let x: f64 = rng.sample(StandardNormal);
        let t = if rng.random::<f64>() < params.p { 1.0 } else { 0.0 };
        let noise: f64 = rng.sample(StandardNormal);
        ne.add_dense(&features(x, t), params.b * x + params.sigma * noise);
    }
    let beta = ne.solve_ridge(params.lambda()).expect("lambda is positive");
    [beta[0], beta[1], beta[2]]
}

/// ‖Σ^{1/2}(β − β*)‖² = (β − β*)ᵀ Σ (β − β*).
pub fn excess_mse(beta: &[f64; 3], params: &RidgeExampleParams) -> f64 {
    let (_, sigma) = ridge_population_target(params, 0.0);
    let star = params.beta_star();
    let d: Vec<f64> = (0..3).map(|k| beta[k] - star[k]).collect();
    (0..3).map(|i| (0..3).map(|j| d[i] * sigma[i][j] * d[j]).sum::<f64>()).sum()
}

pub fn f_beta(beta: &[f64; 3], x: f64, t: f64) -> f64 {
    let phi = features(x, t);
    beta[0] * phi[0] + beta[1] * phi[1] + beta[2] * phi[2]
}

/// Plug-in policy: t = 1 iff β₁ + β₃x ≥ 0.
pub fn policy(beta: &[f64; 3], x: f64) -> f64 {
    if beta[0] + beta[2] * x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// P(β; β′) = E_x[f^{β′}(x, π^β(x))] averaged over `xs`.
pub fn policy_value(beta: &[f64; 3], eval: &[f64; 3], xs: &[f64]) -> f64 {
    xs.iter().map(|&x| f_beta(eval, x, policy(beta, x))).sum::<f64>() / xs.len() as f64
}

/// R(β; β′) = P(β; β′) − P(β; β*).
pub fn optimism_bias(beta: &[f64; 3], eval: &[f64; 3], xs: &[f64], params: &RidgeExampleParams) -> f64 {
    policy_value(beta, eval, xs) - policy_value(beta, &params.beta_star(), xs)
}

fn normal_draws(seed: u64, label: &str, n: usize) -> Vec<f64> {
    let mut rng = SeedTree::new(seed).rng(label, 0);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn l2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop3Outcome {
    pub checks: Vec<TheoryCheck>,
    pub betas: Vec<[f64; 3]>,
    /// Optimism bias R(β̂_k; β̂_{k+1}) per replicate pair.
    pub biases: Vec<f64>,
}

/// Accuracy, stability and winner's-curse checks over `reps` independent
/// ridge fits. Replicate k is evaluated against replicate k+1 (cyclically).
pub fn verify_prop3(params: &RidgeExampleParams, reps: usize, mc_draws: usize, seed: u64) -> Result<Prop3Outcome, TheoryError> {
    params.validate()?;
    params.check_hypothesis()?;
    if reps < 2 {
        return Err(TheoryError::InvalidParams("need at least 2 replicates".into()));
    }
    let seeds = SeedTree::new(seed);
    let lambda = params.lambda();
    let betas: Vec<[f64; 3]> = (0..reps)
        .into_par_iter()
        .map(|k| fit_ridge_example(params, seeds.derive("ridge-rep", k as u64)))
        .collect();
    let biases: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let xs = normal_draws(seeds.derive("bias-draws", k as u64), "x", mc_draws);
            optimism_bias(&betas[k], &betas[(k + 1) % reps], &xs, params)
        })
        .collect();

    let (target, _) = ridge_population_target(params, lambda);
    let coverage = |ok: usize| ok as f64 / reps as f64;
    let min_coverage = 1.0 - 2.0 * params.delta;
    let tag = format!("b={},n={},p={}", params.b, params.n, params.p);
    let accurate = betas.iter().filter(|b| excess_mse(b, params) <= params.accuracy_bound()).count();
    let stable = (0..reps)
        .filter(|&k| l2(&betas[k], &betas[(k + 1) % reps]) <= params.stability_bound())
        .count();
    let curse_floor = asymptotic_bias(params.b) - params.curse_radius();
    let cursed = biases.iter().filter(|&&r| r >= curse_floor).count();
    let mean_bias = biases.iter().sum::<f64>() / reps as f64;
    let first = &betas[0];

    let checks = vec![
        TheoryCheck::equal(format!("ridge-distance-to-population-target[{tag}]"), l2(first, &target), 0.0, 0.05),
        TheoryCheck::equal(format!("ridge-coefficient-sum[{tag}]"), first[1] + first[2], target[1] + target[2], 0.05),
        TheoryCheck::new(format!("ridge-coefficient-gap[{tag}]"), (first[1] - first[2]).abs(), 0.1, CheckKind::AtMost),
        TheoryCheck::new(format!("accuracy-coverage[{tag}]"), coverage(accurate), min_coverage, CheckKind::AtLeast),
        TheoryCheck::new(format!("stability-coverage[{tag}]"), coverage(stable), min_coverage, CheckKind::AtLeast),
        TheoryCheck::new(format!("curse-lower-bound-coverage[{tag}]"), coverage(cursed), min_coverage, CheckKind::AtLeast),
        TheoryCheck::equal(format!("mean-optimism-bias[{tag}]"), mean_bias, asymptotic_bias(params.b), 0.05 * params.b),
        TheoryCheck::equal(format!("mean-optimism-bias-at-lambda[{tag}]"), mean_bias, finite_lambda_bias(params.b, lambda), 0.01 * params.b),
    ];
    Ok(Prop3Outcome { checks, betas, biases })
}

/// Monte Carlo E_{x,t}[(f^β − f^{β*})²] and its standard error.
pub fn excess_mse_monte_carlo(beta: &[f64; 3], params: &RidgeExampleParams, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = SeedTree::new(seed).rng("excess-mse", 0);
    let star = params.beta_star();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let x: f64 = rng.sample(StandardNormal);
        let t = if rng.random::<f64>() < params.p { 1.0 } else { 0.0 };
        let e = (f_beta(beta, x, t) - f_beta(&star, x, t)).powi(2);
        sum += e;
        sum_sq += e * e;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var.max(0.0) / n).sqrt())
}

/// (Monte Carlo − closed form) / standard error of the excess MSE for
/// `n_beta` random β = β* + N(0, I). Standard normal when the identity holds.
pub fn excess_mse_z_scores(params: &RidgeExampleParams, n_beta: usize, draws: usize, seed: u64) -> Vec<f64> {
    let seeds = SeedTree::new(seed);
    (0..n_beta)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeds.rng("random-beta", k as u64);
            let star = params.beta_star();
            let beta = [
                star[0] + rng.sample::<f64, _>(StandardNormal),
                star[1] + rng.sample::<f64, _>(StandardNormal),
                star[2] + rng.sample::<f64, _>(StandardNormal),
            ];
            let (mc, se) = excess_mse_monte_carlo(&beta, params, draws, seeds.derive("mse-draws", k as u64));
            (mc - excess_mse(&beta, params)) / se
        })
        .collect()
}

/// Fraction of `n_beta` random β whose Monte Carlo excess MSE lies within
/// 3 standard errors of the closed form.
pub fn verify_excess_mse_identity(params: &RidgeExampleParams, n_beta: usize, draws: usize, seed: u64) -> TheoryCheck {
    let z = excess_mse_z_scores(params, n_beta, draws, seed);
    let within = z.iter().filter(|z| z.abs() <= 3.0).count();
    TheoryCheck::new(
        format!("excess-mse-identity-within-3se[p={}]", params.p),
        within as f64 / n_beta as f64,
        1.0,
        CheckKind::AtLeast,
    )
}

/// Largest |P(β; β₁) − P(β; β₂)| / ‖β₁ − β₂‖ over random perturbations;
/// the feature-norm bound caps it at 3.
pub fn verify_policy_sensitivity(params: &RidgeExampleParams, perturbations: usize, draws: usize, seed: u64) -> TheoryCheck {
    let seeds = SeedTree::new(seed);
    let xs = normal_draws(seed, "sensitivity-x", draws);
    let ratio = (0..perturbations)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeds.rng("perturbation", k as u64);
            let draw = |rng: &mut crate::seeds::SimRng| -> [f64; 3] {
                [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ]
            };
            let beta = draw(&mut rng);
            let base = draw(&mut rng);
            let eta = rng.random_range(1e-3..1.0);
            let dir = draw(&mut rng);
            let norm = l2(&dir, &[0.0; 3]);
            let moved = [
                base[0] + eta * dir[0] / norm,
                base[1] + eta * dir[1] / norm,
                base[2] + eta * dir[2] / norm,
            ];
            (policy_value(&beta, &base, &xs) - policy_value(&beta, &moved, &xs)).abs() / eta
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max);
    TheoryCheck::new(format!("policy-value-sensitivity[p={}]", params.p), ratio, 3.0, CheckKind::AtMost)
}

// ── Full suite ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub seed: u64,
    pub grid: usize,
    /// (t0, y_max) pairs for the slope and bias checks.
    pub piecewise_cases: Vec<(f64, f64)>,
    /// ε values for the MSE bound (with y_max = 1).
    pub mse_eps: Vec<f64>,
    pub ridge: RidgeExampleParams,
    pub reps: usize,
    pub mc_draws: usize,
    pub identity_betas: usize,
    pub identity_draws: usize,
    pub perturbations: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: 1_000_000,
            piecewise_cases: vec![(0.5, 2.0), (0.9, 1.0), (0.99, 1.0)],
            mse_eps: vec![0.01, 0.1, 0.5],
            ridge: RidgeExampleParams::default(),
            reps: 100,
            mc_draws: 1_000_000,
            identity_betas: 100,
            identity_draws: 200_000,
            perturbations: 100,
        }
    }
}

/// Piecewise-linear checks only.
pub fn run_piecewise(config: &TheoryConfig) -> Result<Vec<TheoryCheck>, TheoryError> {
    let seeds = SeedTree::new(config.seed);
    let mut checks = Vec::new();
    for (k, &(t0, y_max)) in config.piecewise_cases.iter().enumerate() {
        let params = PiecewiseEnvParams::new(t0, y_max)?;
        checks.extend(verify_lemma1(&params, config.grid, seeds.derive("piecewise", k as u64)));
        checks.extend(verify_prop1(&params, config.grid));
    }
    for &eps in &config.mse_eps {
        checks.push(verify_prop2(&PiecewiseEnvParams::new(1.0 - eps, 1.0)?, config.grid)?);
    }
    Ok(checks)
}

pub fn run_all(config: &TheoryConfig) -> Result<TheoryReport, TheoryError> {
    let seeds = SeedTree::new(config.seed);
    let mut checks = run_piecewise(config)?;
    checks.extend(verify_prop3(&config.ridge, config.reps, config.mc_draws, seeds.derive("ridge", 0))?.checks);
    checks.push(verify_excess_mse_identity(
        &config.ridge,
        config.identity_betas,
        config.identity_draws,
        seeds.derive("identity", 0),
    ));
    checks.push(verify_policy_sensitivity(
        &config.ridge,
        config.perturbations,
        config.identity_draws,
        seeds.derive("sensitivity", 0),
    ));
    Ok(TheoryReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_star_shape() {
        let p = PiecewiseEnvParams::new(0.5, 2.0).unwrap();
        assert_eq!(piecewise_f_star(0.5, &p), 2.0);
        assert_eq!(piecewise_f_star(0.0, &p), 0.0);
        assert_eq!(piecewise_f_star(1.0, &p), 0.0);
        assert_eq!(piecewise_f_star(0.25, &p), 1.0);
        assert!(PiecewiseEnvParams::new(1.0, 1.0).is_err());
    }

    #[test]
    fn slope_targets() {
        assert_eq!(ols_slope_closed_form(&PiecewiseEnvParams::new(0.5, 2.0).unwrap()), 1.5);
        let near_one = ols_slope_closed_form(&PiecewiseEnvParams::new(0.999, 1.0).unwrap());
        assert!((near_one - 0.9995).abs() < 1e-12);
        assert!((ols_slope_closed_form(&PiecewiseEnvParams::new(0.9, 1.0).unwrap()) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn mse_bounds() {
        let b = mse_bound(&PiecewiseEnvParams::new(0.9, 1.0).unwrap());
        assert!((b - (0.2 + 0.01 / 3.0)).abs() < 1e-12);
        let b = mse_bound(&PiecewiseEnvParams::new(0.5, 1.0).unwrap());
        assert!((b - (1.0 + 0.25 / 3.0)).abs() < 1e-12);
        let small = PiecewiseEnvParams::new(0.99, 1.0).unwrap();
        assert!(mse_grid(&small, 100_000) < 0.03);
        assert!(verify_prop2(&PiecewiseEnvParams::new(0.3, 1.0).unwrap(), 100).is_err());
    }

    #[test]
    fn argmax_is_scale_invariant() {
        for y_max in [0.1, 1.0, 7.5, 1e3] {
            let p = PiecewiseEnvParams::new(0.7, y_max).unwrap();
            assert_eq!(plug_in_argmax(ols_slope_grid(&p, 10_000), 10_000), 1.0);
        }
    }

    #[test]
    fn population_target_and_covariance() {
        let params = RidgeExampleParams {
            p: 0.9,
            ..RidgeExampleParams::default()
        };
        let (beta, sigma) = ridge_population_target(&params, 0.01);
        assert!((beta[1] - 1.0 / 2.01).abs() < 1e-12);
        assert_eq!(beta[1], beta[2]);
        assert_eq!(sigma, [[0.9, 0.0, 0.0], [0.0, 1.0, 0.9], [0.0, 0.9, 0.9]]);
        let two = RidgeExampleParams {
            b: 2.0,
            ..params
        };
        assert_eq!(ridge_population_target(&two, 0.0).0, [0.0, 1.0, 1.0]);
    }

    #[test]
    fn truth_evaluates_truth_without_bias() {
        let params = RidgeExampleParams::default();
        let star = params.beta_star();
        assert_eq!(excess_mse(&star, &params), 0.0);
        let xs = normal_draws(1, "x", 1000);
        assert_eq!(optimism_bias(&star, &star, &xs, &params), 0.0);
    }

    #[test]
    fn asymptotic_bias_value() {
        assert!((asymptotic_bias(1.0) - 0.199471).abs() < 1e-6);
        assert_eq!(finite_lambda_bias(1.0, 0.0), asymptotic_bias(1.0));
    }

    #[test]
    fn hypothesis_is_enforced() {
        let params = RidgeExampleParams {
            n: 16,
            ..RidgeExampleParams::default()
        };
        assert!(matches!(verify_prop3(&params, 4, 100, 0), Err(TheoryError::Hypothesis { .. })));
    }

    #[test]
    fn check_kinds() {
        assert!(TheoryCheck::equal("a", 1.0, 1.0005, 1e-3).pass);
        assert!(!TheoryCheck::equal("a", 1.0, 1.01, 1e-3).pass);
        assert!(TheoryCheck::new("b", 1.0, 2.0, CheckKind::AtMost).pass);
        assert!(!TheoryCheck::new("c", 1.0, 2.0, CheckKind::AtLeast).pass);
    }
}
