//! End-to-end simulation protocol.
//!
//! One causal world and one training history per run. For each learner
//! family: fit β̂, then for every replication draw a free-case test set,
//! take capacities from its logged locations, solve the assignment under
//! β̂ and record model-based, IPW and oracle estimates. Replication 0 also
//! runs B bootstrap refits and B assignment-resampled IPW draws.
//!
//! Seed tree, rooted at the master seed (`derive(label, index)`):
//!
//! | purpose                      | label / index                          |
//! |------------------------------|----------------------------------------|
//! | causal model                 | `env`, 0                               |
//! | training history             | `train`, 0 (or replication with refit) |
//! | learner fit                  | child `fit`, 0 → `<family>`, rep       |
//! | test set of replication r    | `test`, r                              |
//! | bootstrap refits             | child `bootstrap`, 0 → `<family>`, 0   |
//! | resampled-IPW draw b         | child `ipw-resample`, 0 → `draw`, b    |
//! | diagnostics hold-out         | `diagnostics`, 0                       |
//! | ground-truth calibration     | `truth-calibration`, 0                 |

mod config;
mod output;

pub use config::{LearnerOverrides, Preset, RunConfig, RunSettings};
pub use output::{read_family_report, write_family_report, write_run_outputs, ESTIMATES_FILE, HISTOGRAMS_FILE, MANIFEST_FILE, SUMMARY_FILE};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

use crate::assign::{capacities_from_observed, solve, AssignError, AssignmentInstance};
use crate::envgen::{build_causal_model, resample_assignments, sample_history, CausalDiagnostics, CausalModel, EnvError, Restriction};
use crate::evaluate::{
    bootstrap_model_based, calibration_curve, ipw, logged_predictions, model_based, oracle, roc_auc, CalibrationBin, EstimateRow,
    EvalError, EvalReport, Method, PolicyEstimate, RocCurve,
};
use crate::learners::{fit, score_matrix, Family, LearnError, ModelParams, OutcomeModel, OutcomePredictor, TrainConfig};
use crate::seeds::SeedTree;
use crate::tabular::Dataset;

#[derive(Debug, Error)]
pub enum ExptError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Learn(#[from] LearnError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error(transparent)]
    Assign(#[from] AssignError),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("output format: {0}")]
    Format(String),
}

// ── Results ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub model_digest: String,
    pub matching_digest: String,
    pub estimates: Vec<PolicyEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDiagnostics {
    pub roc: RocCurve,
    pub calibration: Vec<CalibrationBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    /// Family name, or `oracle-scorer` for the β̂ := f test hook.
    pub label: String,
    pub replications: Vec<ReplicationRecord>,
    /// (replication, reason) for aborted replications.
    pub failures: Vec<(usize, String)>,
    pub diagnostics: Option<FamilyDiagnostics>,
}

impl FamilyResult {
    pub fn rows(&self) -> Vec<EstimateRow> {
        self.replications
            .iter()
            .flat_map(|r| r.estimates.iter().map(move |e| EstimateRow::from_estimate(r.replication, e)))
            .collect()
    }

    pub fn report(&self) -> EvalReport {
        EvalReport::new(self.rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub env_digest: String,
    pub causal_digest: String,
    pub causal_diagnostics: CausalDiagnostics,
    pub training_digest: String,
    pub families: Vec<FamilyResult>,
    pub truth_calibration: Vec<CalibrationBin>,
    pub elapsed_secs: f64,
}

impl RunResult {
    pub fn family(&self, label: &str) -> Option<&FamilyResult> {
        self.families.iter().find(|f| f.label == label)
    }
}

// ── Protocol ──

/// The persistent world of one run: causal model and training history.
pub struct Environment {
    pub causal: CausalModel,
    pub train: Dataset,
    pub env_seed: u64,
    pub env_digest: String,
}

fn seeds(config: &RunConfig) -> SeedTree {
    SeedTree::new(config.run.master_seed)
}

fn train_seed(config: &RunConfig, replication: usize) -> u64 {
    let index = if config.run.refit_per_rep { replication as u64 } else { 0 };
    seeds(config).derive("train", index)
}

fn fit_seed(config: &RunConfig, family: Family, replication: usize) -> u64 {
    let index = if config.run.refit_per_rep { replication as u64 } else { 0 };
    seeds(config).child("fit", 0).derive(family.name(), index)
}

pub fn build_environment(config: &RunConfig) -> Result<Environment, ExptError> {
    config.validate()?;
    let env_seed = seeds(config).derive("env", 0);
    let causal = build_causal_model(&config.env, env_seed)?;
    let train = sample_history(&causal, &config.env, config.run.n_train, train_seed(config, 0), env_seed, Restriction::Any)?.dataset;
    Ok(Environment {
        causal,
        train,
        env_seed,
        env_digest: config.env.digest(env_seed),
    })
}

fn test_set(config: &RunConfig, env: &Environment, replication: usize) -> Result<Dataset, ExptError> {
    let seed = seeds(config).derive("test", replication as u64);
    Ok(sample_history(&env.causal, &config.env, config.run.n_test, seed, env.env_seed, Restriction::FreeOnly)?.dataset)
}

struct Bootstrap<'a> {
    train: &'a Dataset,
    model: &'a OutcomeModel,
}

/// Training config for bootstrap refits. LASSO reuses the penalty chosen on
/// the original data: cross-validating on a bootstrap sample puts copies of
/// a row on both sides of a fold and drives the choice toward no penalty.
pub fn bootstrap_train_config(config: &RunConfig, model: &OutcomeModel) -> TrainConfig {
    let mut c = config.train_config(model.family());
    if let ModelParams::Logit { fit } = model.params() {
        c.cv_folds = 0;
        c.lambda = fit.lambda;
    }
    c
}

/// One replication with scorer β̂: test set, assignment, estimates.
fn replicate(
    config: &RunConfig,
    env: &Environment,
    replication: usize,
    scorer: &dyn OutcomePredictor,
    model_digest: String,
    bootstrap: Option<Bootstrap<'_>>,
) -> Result<ReplicationRecord, ExptError> {
    let test = test_set(config, env, replication)?;
    let instance = AssignmentInstance::new(score_matrix(scorer, test.records())?, capacities_from_observed(&test))?;
    let (matching, _) = solve(&instance);
    let mut estimates = vec![
        model_based(scorer, &matching, &test)?.with_digest(model_digest.clone()),
        ipw(&matching, &test)?,
        oracle(&env.causal, &matching, &test)?,
    ];
    if replication == 0 && config.run.bootstraps > 0 {
        if let Some(b) = bootstrap {
            let seed = seeds(config).child("bootstrap", 0).derive(b.model.family().name(), 0);
            let train_config = bootstrap_train_config(config, b.model);
            estimates.extend(bootstrap_model_based(b.train, &matching, &test, &train_config, config.run.bootstraps, seed, true)?);
        }
        let draws = seeds(config).child("ipw-resample", 0);
        let resampled = (0..config.run.bootstraps)
            .into_par_iter()
            .map(|b| {
                let data = resample_assignments(&env.causal, &test, config.run.ipw_resample_mode, draws.derive("draw", b as u64))?;
                let est = ipw(&matching, &data)?;
                Ok(PolicyEstimate {
                    method: Method::IpwResampled,
                    ..est
                }
                .with_bootstrap_index(b))
            })
            .collect::<Result<Vec<_>, ExptError>>()?;
        estimates.extend(resampled);
    }
    Ok(ReplicationRecord {
        replication,
        model_digest,
        matching_digest: matching.digest(),
        estimates,
    })
}

fn collect(label: String, outcomes: Vec<Result<ReplicationRecord, ExptError>>) -> FamilyResult {
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => replications.push(rec),
            Err(e) => {
                log::warn!("{label}: replication {r} aborted: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    FamilyResult {
        label,
        replications,
        failures,
        diagnostics: None,
    }
}

fn family_diagnostics(config: &RunConfig, model: &dyn OutcomePredictor, holdout: &Dataset) -> Result<FamilyDiagnostics, ExptError> {
    let (scores, labels) = logged_predictions(model, holdout)?;
    Ok(FamilyDiagnostics {
        roc: roc_auc(&scores, &labels)?,
        calibration: calibration_curve(&scores, &labels, config.run.calibration_bins)?,
    })
}

fn holdout(config: &RunConfig, env: &Environment, n: usize, label: &str) -> Result<Dataset, ExptError> {
    let seed = seeds(config).derive(label, 0);
    Ok(sample_history(&env.causal, &config.env, n, seed, env.env_seed, Restriction::Any)?.dataset)
}

/// Fit `family` and run every replication.
pub fn run_family(config: &RunConfig, env: &Environment, family: Family) -> Result<FamilyResult, ExptError> {
    let label = family.name().to_string();
    let base = config.train_config(family);
    if config.run.refit_per_rep {
        let outcomes = (0..config.run.replications)
            .into_par_iter()
            .map(|r| {
                let train = if r == 0 {
                    env.train.clone()
                } else {
                    sample_history(&env.causal, &config.env, config.run.n_train, train_seed(config, r), env.env_seed, Restriction::Any)?
                        .dataset
                };
                let model = fit(&train, &base.clone().with_seed(fit_seed(config, family, r)))?;
                replicate(config, env, r, &model, model.digest(), Some(Bootstrap { train: &train, model: &model }))
            })
            .collect();
        return Ok(collect(label, outcomes));
    }
    let model = fit(&env.train, &base.with_seed(fit_seed(config, family, 0)))?;
    for t in model.constant_locations() {
        log::warn!("{family}: location {t} fell back to a constant prediction");
    }
    let digest = model.digest();
    let outcomes = (0..config.run.replications)
        .into_par_iter()
        .map(|r| {
            replicate(
                config,
                env,
                r,
                &model,
                digest.clone(),
                Some(Bootstrap {
                    train: &env.train,
                    model: &model,
                }),
            )
        })
        .collect();
    let mut result = collect(label, outcomes);
    if config.run.diagnostics_n > 0 {
        let data = holdout(config, env, config.run.diagnostics_n, "diagnostics")?;
        result.diagnostics = Some(family_diagnostics(config, &model, &data)?);
    }
    Ok(result)
}

/// Test hook: every replication scores with the ground truth itself, so
/// the model-based estimate is the oracle. No bootstrap refits.
pub fn run_oracle_scorer(config: &RunConfig, env: &Environment) -> FamilyResult {
    let digest = env.causal.digest();
    let outcomes = (0..config.run.replications)
        .into_par_iter()
        .map(|r| replicate(config, env, r, &env.causal, digest.clone(), None))
        .collect();
    collect("oracle-scorer".into(), outcomes)
}

/// Calibration of f itself on a logged sample: the outcome draws come
/// from f, so every bin should be calibrated up to sampling noise.
pub fn truth_calibration(config: &RunConfig, env: &Environment) -> Result<Vec<CalibrationBin>, ExptError> {
    if config.run.truth_calibration_n == 0 {
        return Ok(Vec::new());
    }
    let data = holdout(config, env, config.run.truth_calibration_n, "truth-calibration")?;
    let (scores, labels) = logged_predictions(&env.causal, &data)?;
    Ok(calibration_curve(&scores, &labels, config.run.calibration_bins)?)
}

/// Metadata written next to a sampled history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSidecar {
    pub env_digest: String,
    pub causal_digest: String,
    pub env_seed: u64,
    pub sample_seed: u64,
    pub n: usize,
    pub restriction: Restriction,
    pub f_l: Vec<f64>,
    pub causal_diagnostics: CausalDiagnostics,
}

/// Sample a history of `n` refugees from the run's causal world. With the
/// same master seed and `n = n_train` this is the run's training set.
pub fn sample_environment(config: &RunConfig, n: usize, restriction: Restriction) -> Result<(Dataset, EnvSidecar), ExptError> {
    config.env.validate()?;
    let env_seed = seeds(config).derive("env", 0);
    let sample_seed = train_seed(config, 0);
    let causal = build_causal_model(&config.env, env_seed)?;
    let sample = sample_history(&causal, &config.env, n, sample_seed, env_seed, restriction)?;
    let sidecar = EnvSidecar {
        env_digest: config.env.digest(env_seed),
        causal_digest: causal.digest(),
        env_seed,
        sample_seed,
        n,
        restriction,
        f_l: causal.f_l().to_vec(),
        causal_diagnostics: causal.diagnostics().clone(),
    };
    Ok((sample.dataset, sidecar))
}

pub fn run_protocol(config: &RunConfig) -> Result<RunResult, ExptError> {
    let start = Instant::now();
    let env = build_environment(config)?;
    log::info!("environment {} built; training set of {}", env.env_digest, env.train.len());
    let mut families = Vec::new();
    for family in config.families()? {
        log::info!("running {family}");
        families.push(run_family(config, &env, family)?);
    }
    Ok(RunResult {
        config: config.clone(),
        env_digest: env.env_digest.clone(),
        causal_digest: env.causal.digest(),
        causal_diagnostics: env.causal.diagnostics().clone(),
        training_digest: env.train.digest(),
        truth_calibration: truth_calibration(config, &env)?,
        families,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
