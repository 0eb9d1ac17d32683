//! The null-effect environment.
//!
//! Employment probability is f(x, t) = ½ f_X(x) + ½ f_L(t). Because there is
//! no covariate-location interaction, every assignment that fills all
//! locations to capacity has the same expected employment count.
//!
//! f_X is built by drawing random logit coefficients over encoded covariates
//! and locations, sampling outcomes from that logit, and regressing those
//! outcomes on covariates alone with a random forest. f_L is drawn i.i.d.
//! from a Beta distribution per location.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Normal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::assign::Matching;
use crate::learners::{fit_forest, sigmoid, Forest, ForestParams, LearnError, MaxFeatures, OutcomePredictor};
use crate::seeds::{digest_hex, rng_from_seed, SeedTree, SimRng};
use crate::tabular::{
    CovariateDescriptor, CovariateKind, CovariateSchema, CovariateValue, Dataset, FeatureMap, FeatureMode,
    RefugeeRecord, TabularError,
};

const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),

    #[error("infeasible matching: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Tabular(#[from] TabularError),

    #[error(transparent)]
    Learn(#[from] LearnError),
}

// ── Configuration ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBin {
    pub lo: f64,
    pub hi: f64,
    pub prob: f64,
}

/// Sampling marginal for one covariate. Numeric covariates draw a bin, then
/// a uniform value inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateMarginal {
    Numeric {
        name: String,
        bins: Vec<UniformBin>,
    },
    Categorical {
        name: String,
        categories: Vec<String>,
        probs: Vec<f64>,
    },
}

impl CovariateMarginal {
    pub fn name(&self) -> &str {
        match self {
            CovariateMarginal::Numeric { name, .. } | CovariateMarginal::Categorical { name, .. } => name,
        }
    }

    fn probs(&self) -> Vec<f64> {
        match self {
            CovariateMarginal::Numeric { bins, .. } => bins.iter().map(|b| b.prob).collect(),
            CovariateMarginal::Categorical { probs, .. } => probs.clone(),
        }
    }

    fn categorical(name: &str, categories: &[&str], probs: Vec<f64>) -> Self {
        CovariateMarginal::Categorical {
            name: name.into(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            probs,
        }
    }
}

/// The covariate marginals used by the resettlement study the environment
/// imitates.
pub fn default_marginals() -> Vec<CovariateMarginal> {
    let bin = |lo: f64, hi: f64, prob: f64| UniformBin { lo, hi, prob };
    let mut origin = vec![0.23, 0.2, 0.13, 0.11, 0.07];
    origin.extend([26.0 / 900.0; 9]);
    let mut months = vec![6.0 / 69.0; 9];
    months.extend([5.0 / 69.0; 3]);
    let mut years = vec![4.0 / 23.0; 5];
    years.push(3.0 / 23.0);
    vec![
        CovariateMarginal::Numeric {
            name: "age".into(),
            bins: vec![bin(18.0, 30.0, 0.44), bin(30.0, 40.0, 0.28), bin(40.0, 50.0, 0.16), bin(50.0, 60.0, 0.12)],
        },
        CovariateMarginal::categorical("gender", &["female", "male"], vec![0.47, 0.53]),
        CovariateMarginal::categorical(
            "education",
            &["none", "little", "secondary", "advanced", "university"],
            vec![0.18, 0.39, 0.21, 0.10, 0.12],
        ),
        CovariateMarginal::categorical("english", &["false", "true"], vec![0.57, 0.43]),
        CovariateMarginal::categorical("case_restriction", &["restricted", "free"], vec![0.72, 0.28]),
        CovariateMarginal::categorical(
            "origin",
            &[
                "burma",
                "iraq",
                "bhutan",
                "somalia",
                "afghanistan",
                "drc",
                "iran",
                "eritrea",
                "ukraine",
                "syria",
                "sudan",
                "ethiopia",
                "moldova",
                "other",
            ],
            origin,
        ),
        CovariateMarginal::categorical("arrival_year", &["2011", "2012", "2013", "2014", "2015", "2016"], years),
        CovariateMarginal::categorical(
            "arrival_month",
            &["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"],
            months,
        ),
    ]
}

/// Settings for the f_X construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FxPipeline {
    /// Standard deviation of the random logit coefficients.
    pub coef_scale: f64,
    pub n_fit: usize,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    pub max_bins: usize,
    /// f_X is clipped into `[clip.0, clip.1]`.
    pub clip: (f64, f64),
}

impl Default for FxPipeline {
    fn default() -> Self {
        Self {
            coef_scale: 1.0,
            n_fit: 40_000,
            trees: 200,
            max_depth: 8,
            min_leaf: 25,
            max_features: MaxFeatures::Sqrt,
            max_bins: 64,
            clip: (0.02, 0.98),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub covariates: Vec<CovariateMarginal>,
    pub n_locations: usize,
    /// Explicit assignment probabilities; when absent a geometric profile
    /// with max/min ratio `location_ratio`, ascending, is used.
    pub location_probs: Option<Vec<f64>>,
    pub location_ratio: f64,
    /// Beta(α, β) parameters of the location effects.
    pub beta_params: (f64, f64),
    pub free_case_covariate: String,
    pub free_case_category: String,
    /// Logit coefficient given to the free-case indicator.
    pub free_case_boost: f64,
    pub fx: FxPipeline,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            covariates: default_marginals(),
            n_locations: 43,
            location_probs: None,
            location_ratio: 20.0,
            beta_params: (1.0, 2.0),
            free_case_covariate: "case_restriction".into(),
            free_case_category: "free".into(),
            free_case_boost: 1.0,
            fx: FxPipeline::default(),
        }
    }
}

fn check_probs(what: &str, probs: &[f64]) -> Result<(), EnvError> {
    if probs.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(EnvError::InvalidConfig(format!("{what}: probabilities must be strictly positive")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(EnvError::InvalidConfig(format!("{what}: probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.n_locations < 2 {
            return bad(format!("need at least 2 locations, got {}", self.n_locations));
        }
        check_probs("location_probs", &self.location_probs()?)?;
        for m in &self.covariates {
            check_probs(m.name(), &m.probs())?;
            match m {
                CovariateMarginal::Numeric { name, bins } => {
                    if bins.iter().any(|b| !(b.lo < b.hi)) {
                        return bad(format!("{name}: every bin needs lo < hi"));
                    }
                }
                CovariateMarginal::Categorical {
                    name,
                    categories,
                    probs,
                } => {
                    if categories.len() != probs.len() {
                        return bad(format!("{name}: {} categories but {} probabilities", categories.len(), probs.len()));
                    }
                }
            }
        }
        self.free_case_position()?;
        let (a, b) = self.beta_params;
        if !(a > 0.0 && b > 0.0) {
            return bad(format!("beta parameters must be positive, got ({a}, {b})"));
        }
        let (lo, hi) = self.fx.clip;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad(format!("f_X clip range ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"));
        }
        if self.fx.n_fit == 0 || self.fx.trees == 0 || self.fx.min_leaf == 0 {
            return bad("fx.n_fit, fx.trees and fx.min_leaf must be positive".into());
        }
        if !(self.fx.coef_scale >= 0.0 && self.fx.coef_scale.is_finite()) {
            return bad(format!("fx.coef_scale must be nonnegative, got {}", self.fx.coef_scale));
        }
        self.schema()?;
        Ok(())
    }

    pub fn location_probs(&self) -> Result<Vec<f64>, EnvError> {
        match &self.location_probs {
            Some(p) if p.len() != self.n_locations => Err(EnvError::InvalidConfig(format!(
                "location_probs has {} entries for {} locations",
                p.len(),
                self.n_locations
            ))),
            Some(p) => Ok(p.clone()),
            None => {
                if !(self.location_ratio >= 1.0) {
                    return Err(EnvError::InvalidConfig(format!(
                        "location_ratio must be at least 1, got {}",
                        self.location_ratio
                    )));
                }
                Ok(geometric_profile(self.n_locations, self.location_ratio))
            }
        }
    }

    pub fn schema(&self) -> Result<CovariateSchema, EnvError> {
        let descriptors = self
            .covariates
            .iter()
            .map(|m| match m {
                CovariateMarginal::Numeric { name, bins } => {
                    let lo = bins.iter().map(|b| b.lo).fold(f64::INFINITY, f64::min);
                    let hi = bins.iter().map(|b| b.hi).fold(f64::NEG_INFINITY, f64::max);
                    CovariateDescriptor::numeric(name.clone(), lo, hi)
                }
                CovariateMarginal::Categorical { name, categories, .. } => {
                    CovariateDescriptor::categorical(name.clone(), categories.iter().cloned())
                }
            })
            .collect();
        Ok(CovariateSchema::new(descriptors)?)
    }

    /// (descriptor index, category index) of the free-case indicator.
    fn free_case_position(&self) -> Result<(usize, usize), EnvError> {
        let missing = || {
            EnvError::InvalidConfig(format!(
                "no categorical covariate `{}` with category `{}`",
                self.free_case_covariate, self.free_case_category
            ))
        };
        let k = self
            .covariates
            .iter()
            .position(|m| m.name() == self.free_case_covariate)
            .ok_or_else(missing)?;
        match &self.covariates[k] {
            CovariateMarginal::Categorical { categories, .. } => {
                let c = categories.iter().position(|c| *c == self.free_case_category).ok_or_else(missing)?;
                Ok((k, c))
            }
            CovariateMarginal::Numeric { .. } => Err(missing()),
        }
    }

    /// Hash of the config and environment seed.
    pub fn digest(&self, env_seed: u64) -> String {
        let mut bytes = serde_json::to_vec(self).expect("configs serialize");
        bytes.extend_from_slice(&env_seed.to_le_bytes());
        digest_hex(&bytes)
    }
}

/// q_t ∝ r^t with r chosen so q_{L−1}/q_0 = `ratio`.
pub fn geometric_profile(n: usize, ratio: f64) -> Vec<f64> {
    let r = if n > 1 { ratio.powf(1.0 / (n - 1) as f64) } else { 1.0 };
    let raw: Vec<f64> = (0..n).map(|t| r.powi(t as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|q| q / total).collect()
}

// ── Covariate sampling ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Restriction {
    Any,
    FreeOnly,
}

struct CovariateSampler {
    draws: Vec<(WeightedIndex<f64>, Option<Vec<UniformBin>>)>,
    free: (usize, usize),
}

impl CovariateSampler {
    fn new(config: &EnvironmentConfig) -> Result<Self, EnvError> {
        let draws = config
            .covariates
            .iter()
            .map(|m| {
                let index = WeightedIndex::new(m.probs()).map_err(|e| EnvError::InvalidConfig(format!("{}: {e}", m.name())))?;
                let bins = match m {
                    CovariateMarginal::Numeric { bins, .. } => Some(bins.clone()),
                    CovariateMarginal::Categorical { .. } => None,
                };
                Ok((index, bins))
            })
            .collect::<Result<_, EnvError>>()?;
        Ok(Self {
            draws,
            free: config.free_case_position()?,
        })
    }

    fn sample(&self, rng: &mut SimRng, restriction: Restriction) -> RefugeeRecord {
        let mut values: Vec<CovariateValue> = self
            .draws
            .iter()
            .map(|(index, bins)| {
                let k = index.sample(rng);
                match bins {
                    Some(bins) => CovariateValue::Numeric(rng.random_range(bins[k].lo..bins[k].hi)),
                    None => CovariateValue::Category(k),
                }
            })
            .collect();
        if restriction == Restriction::FreeOnly {
            values[self.free.0] = CovariateValue::Category(self.free.1);
        }
        RefugeeRecord::new(values)
    }
}

/// Draw `n` records with independent covariates.
pub fn sample_covariates(
    config: &EnvironmentConfig,
    n: usize,
    seed: u64,
    restriction: Restriction,
) -> Result<Vec<RefugeeRecord>, EnvError> {
    config.validate()?;
    let sampler = CovariateSampler::new(config)?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| sampler.sample(&mut rng, restriction)).collect())
}

/// Location effects f_L(t) drawn i.i.d. from the configured Beta.
pub fn draw_location_effects(config: &EnvironmentConfig, seed: u64) -> Result<Vec<f64>, EnvError> {
    let (a, b) = config.beta_params;
    let beta = Beta::new(a, b).map_err(|e| EnvError::InvalidConfig(format!("beta parameters: {e}")))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..config.n_locations).map(|_| beta.sample(&mut rng)).collect())
}

// ── Causal model ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FxModel {
    Forest { forest: Forest, clip: (f64, f64) },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CausalDiagnostics {
    /// True when the fitted f_X is constant in the covariates.
    pub fx_degenerate: bool,
    /// Mean of the logit-sampled outcomes used to fit f_X.
    pub fit_outcome_rate: f64,
    /// Mean fitted f_X over the fitting sample.
    pub fx_mean: f64,
}

/// Ground-truth employment probability f(x, t) = ½ f_X(x) + ½ f_L(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalModel {
    map: FeatureMap,
    fx: FxModel,
    f_l: Vec<f64>,
    diagnostics: CausalDiagnostics,
}

impl CausalModel {
    /// Model with a constant refugee effect; mainly for tests and the
    /// degenerate case.
    pub fn with_constant_fx(schema: Arc<CovariateSchema>, fx: f64, f_l: Vec<f64>) -> Result<Self, EnvError> {
        let map = FeatureMap::new(schema, f_l.len(), FeatureMode::CovariatesOnly)?;
        let model = Self {
            map,
            fx: FxModel::Constant { value: fx },
            f_l,
            diagnostics: CausalDiagnostics {
                fx_degenerate: true,
                fit_outcome_rate: fx,
                fx_mean: fx,
            },
        };
        model.check_range()?;
        Ok(model)
    }

    fn check_range(&self) -> Result<(), EnvError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if let FxModel::Constant { value } = self.fx {
            if !in_unit(value) {
                return Err(EnvError::InvalidConfig(format!("f_X = {value} is outside [0, 1]")));
            }
        }
        if let Some(v) = self.f_l.iter().find(|&&v| !in_unit(v)) {
            return Err(EnvError::InvalidConfig(format!("f_L = {v} is outside [0, 1]")));
        }
        Ok(())
    }

    pub fn f_l(&self) -> &[f64] {
        &self.f_l
    }

    pub fn fx_model(&self) -> &FxModel {
        &self.fx
    }

    pub fn diagnostics(&self) -> &CausalDiagnostics {
        &self.diagnostics
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        self.map.schema()
    }

    pub fn f_x(&self, record: &RefugeeRecord) -> Result<f64, EnvError> {
        match &self.fx {
            FxModel::Constant { value } => {
                self.map.schema().validate(record)?;
                Ok(*value)
            }
            FxModel::Forest { forest, clip } => {
                let x = self.map.covariate_block(record)?;
                Ok(forest.predict(&x).clamp(clip.0, clip.1))
            }
        }
    }

    pub fn f(&self, record: &RefugeeRecord, location: usize) -> Result<f64, EnvError> {
        let fl = *self.f_l.get(location).ok_or(TabularError::LocationOutOfRange {
            location,
            n_locations: self.f_l.len(),
        })?;
        Ok(0.5 * self.f_x(record)? + 0.5 * fl)
    }

    pub fn digest(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("causal models serialize"))
    }
}

impl OutcomePredictor for CausalModel {
    fn n_locations(&self) -> usize {
        self.f_l.len()
    }

    fn predict(&self, record: &RefugeeRecord, location: usize) -> Result<f64, LearnError> {
        self.f(record, location).map_err(|e| match e {
            EnvError::Tabular(t) => LearnError::Tabular(t),
            EnvError::Learn(l) => l,
            other => LearnError::Numerical(other.to_string()),
        })
    }

    fn predict_locations(&self, record: &RefugeeRecord) -> Result<Vec<f64>, LearnError> {
        let fx = self.f_x(record).map_err(|e| match e {
            EnvError::Tabular(t) => LearnError::Tabular(t),
            other => LearnError::Numerical(other.to_string()),
        })?;
        Ok(self.f_l.iter().map(|&fl| 0.5 * fx + 0.5 * fl).collect())
    }
}

/// Build the environment's causal model from `seed`.
pub fn build_causal_model(config: &EnvironmentConfig, seed: u64) -> Result<CausalModel, EnvError> {
    config.validate()?;
    let seeds = SeedTree::new(seed);
    let schema = Arc::new(config.schema()?);
    let l = config.n_locations;
    let fx = &config.fx;

    let records = sample_covariates(config, fx.n_fit, seeds.derive("fx-records", 0), Restriction::Any)?;
    let loc_index = WeightedIndex::new(config.location_probs()?).map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
    let mut rng = seeds.rng("fx-locations", 0);
    let locations: Vec<usize> = (0..fx.n_fit).map(|_| loc_index.sample(&mut rng)).collect();

    // Random logit over standardized covariates plus location indicators.
    let logit_map = FeatureMap::fit(schema.clone(), l, FeatureMode::CovariatesPlusLocation, &records)?;
    let normal = Normal::new(0.0, fx.coef_scale.max(f64::MIN_POSITIVE))
        .map_err(|e| EnvError::InvalidConfig(format!("coef_scale: {e}")))?;
    let mut rng = seeds.rng("fx-coefficients", 0);
    let mut coef: Vec<f64> = (0..logit_map.dim())
        .map(|_| if fx.coef_scale > 0.0 { normal.sample(&mut rng) } else { 0.0 })
        .collect();
    // Pin the case-restriction block so the free-case contrast is exactly
    // the configured boost.
    let (k, c) = config.free_case_position()?;
    let start = logit_map.offsets()[k];
    let n_cat = schema.descriptors()[k].n_categories().unwrap_or(1);
    for (j, slot) in coef[start..start + n_cat].iter_mut().enumerate() {
        *slot = if j == c { config.free_case_boost } else { 0.0 };
    }

    let mut rng = seeds.rng("fx-outcomes", 0);
    let mut x = Vec::new();
    let mut y = Vec::with_capacity(fx.n_fit);
    for (record, &t) in records.iter().zip(&locations) {
        logit_map.encode_sparse(record, t, &mut x)?;
        let eta: f64 = x.iter().map(|&(j, v)| v * coef[j]).sum();
        y.push(if rng.random::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 });
    }
    let fit_outcome_rate = y.iter().sum::<f64>() / y.len() as f64;

    // Regress the sampled outcomes on covariates only.
    let map = FeatureMap::fit(schema, l, FeatureMode::CovariatesOnly, &records)?;
    let rows = records.iter().map(|r| map.covariate_block(r)).collect::<Result<Vec<_>, _>>()?;
    let params = ForestParams {
        trees: fx.trees,
        max_depth: fx.max_depth,
        min_leaf: fx.min_leaf,
        max_features: fx.max_features,
        max_bins: fx.max_bins,
    };
    let forest = fit_forest(&rows, &y, &params, seeds.derive("fx-forest", 0));
    let fx_degenerate = forest.trees().iter().all(|t| t.nodes().len() == 1);
    if fx_degenerate {
        log::warn!("fitted f_X is constant in the covariates");
    }
    let fitted: f64 = rows.iter().map(|r| forest.predict(r).clamp(fx.clip.0, fx.clip.1)).sum();

    let f_l = draw_location_effects(config, seeds.derive("location-effects", 0))?;
    Ok(CausalModel {
        map,
        fx: FxModel::Forest { forest, clip: fx.clip },
        f_l,
        diagnostics: CausalDiagnostics {
            fx_degenerate,
            fit_outcome_rate,
            fx_mean: fitted / rows.len() as f64,
        },
    })
}

// ── Historical samples ──

#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalSample {
    pub dataset: Dataset,
    pub env_seed: u64,
    pub sample_seed: u64,
}

fn bernoulli(rng: &mut SimRng, p: f64) -> u8 {
    (rng.random::<f64>() < p) as u8
}

/// Randomized historical placements: covariates from the marginals,
/// locations i.i.d. from `location_probs`, outcomes from f.
pub fn sample_history(
    model: &CausalModel,
    config: &EnvironmentConfig,
    n: usize,
    seed: u64,
    env_seed: u64,
    restriction: Restriction,
) -> Result<HistoricalSample, EnvError> {
    if n == 0 {
        return Err(EnvError::InvalidConfig("sample size must be at least 1".into()));
    }
    if model.n_locations() != config.n_locations {
        return Err(EnvError::InvalidConfig(format!(
            "model has {} locations but the config has {}",
            model.n_locations(),
            config.n_locations
        )));
    }
    let seeds = SeedTree::new(seed);
    let records = sample_covariates(config, n, seeds.derive("covariates", 0), restriction)?;
    let probs = config.location_probs()?;
    let loc_index = WeightedIndex::new(&probs).map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
    let mut rng = seeds.rng("locations", 0);
    let locations: Vec<usize> = (0..n).map(|_| loc_index.sample(&mut rng)).collect();
    let mut rng = seeds.rng("outcomes", 0);
    let mut outcomes = Vec::with_capacity(n);
    for (record, &t) in records.iter().zip(&locations) {
        outcomes.push(bernoulli(&mut rng, model.f(record, t)?));
    }
    let shared: Arc<[f64]> = Arc::from(probs);
    let dataset = Dataset::new(
        model.schema().clone(),
        config.n_locations,
        records,
        locations,
        outcomes,
        vec![shared; n],
    )?;
    Ok(HistoricalSample {
        dataset,
        env_seed,
        sample_seed: seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMode {
    /// Permute the logged locations across refugees.
    Shuffle,
    /// Redraw each location from that refugee's propensity vector.
    Redraw,
}

/// Regenerate assignments and outcomes for the same refugees.
pub fn resample_assignments(model: &CausalModel, dataset: &Dataset, mode: ResampleMode, seed: u64) -> Result<Dataset, EnvError> {
    let seeds = SeedTree::new(seed);
    let mut rng = seeds.rng("assignments", 0);
    let locations = match mode {
        ResampleMode::Shuffle => {
            let mut l = dataset.locations().to_vec();
            l.shuffle(&mut rng);
            l
        }
        ResampleMode::Redraw => dataset
            .propensities()
            .iter()
            .map(|p| {
                WeightedIndex::new(p.iter().copied())
                    .map(|w| w.sample(&mut rng))
                    .map_err(|e| EnvError::InvalidConfig(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let mut rng = seeds.rng("outcomes", 0);
    let mut outcomes = Vec::with_capacity(dataset.len());
    for (record, &t) in dataset.records().iter().zip(&locations) {
        outcomes.push(bernoulli(&mut rng, model.f(record, t)?));
    }
    Ok(dataset.with_assignments(locations, outcomes, dataset.propensities().to_vec())?)
}

/// Expected employment count Σ_i f(X_i, π(i)) under the ground truth.
pub fn true_value(model: &CausalModel, records: &[RefugeeRecord], matching: &Matching) -> Result<f64, EnvError> {
    if matching.len() != records.len() {
        return Err(EnvError::Infeasible(format!(
            "matching covers {} refugees but there are {}",
            matching.len(),
            records.len()
        )));
    }
    let mut total = 0.0;
    for (record, &t) in records.iter().zip(matching.assignment()) {
        if t >= model.n_locations() {
            return Err(EnvError::Infeasible(format!("location {t} does not exist")));
        }
        total += model.f(record, t)?;
    }
    Ok(total)
}

/// Kind-checked view of a marginal's schema descriptor, for tests and the
/// goodness-of-fit diagnostics.
pub fn category_frequencies(records: &[RefugeeRecord], schema: &CovariateSchema, name: &str) -> Option<Vec<f64>> {
    let k = schema.index_of(name)?;
    let n_cat = match &schema.descriptors()[k].kind {
        CovariateKind::Categorical { categories } => categories.len(),
        CovariateKind::Numeric { .. } => return None,
    };
    let mut counts = vec![0.0; n_cat];
    for r in records {
        counts[r.values[k].as_category()?] += 1.0;
    }
    let n = records.len() as f64;
    Some(counts.into_iter().map(|c| c / n).collect())
}
