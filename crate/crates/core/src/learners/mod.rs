//! Outcome-model families behind one interface.
//!
//! Linear families (OLS, ridge) and LASSO-logit train pooled on the
//! interaction feature map. Honest forests and boosted trees train one
//! submodel per location on that location's logged subsample, using the
//! covariate block only.

mod forest;
mod gbm;
mod lasso;
mod linear;
mod tree;

pub use forest::{
    estimate_leaves, fit_forest, fit_honest_forest, grow_structure, honest_halves, Forest, ForestParams,
    MaxFeatures,
};
pub use gbm::{fit_boosted, fit_boosted_observed, logit, sigmoid, BoostParams, BoostedTrees};
pub use lasso::{
    fit_lasso, lambda_grid, lambda_max, log_loss, loss_gradient, solve as solve_lasso, LassoFit, LassoParams,
    LogitCoefficients, SolveOptions, SparseDesign,
};
pub use linear::{fit_ols, fit_ridge, LinearFit, NormalEquations};
pub use tree::{grow, BinnedMatrix, GrowParams, GrownTree, Node, Tree};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use thiserror::Error;

use crate::seeds::{digest_hex, SeedTree};
use crate::tabular::{Dataset, FeatureMap, FeatureMode, RefugeeRecord, TabularError};

/// Probability predictions are kept inside `[PROB_FLOOR, 1 − PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-6;

const MODEL_FORMAT: &str = "curse-lab-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    EmptyData(String),

    #[error("outcome {0} is not binary")]
    NonBinaryOutcome(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Tabular(#[from] TabularError),

    #[error("model file: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Ols,
    Ridge,
    LassoLogit,
    HonestRf,
    Gbm,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Ols, Family::Ridge, Family::LassoLogit, Family::HonestRf, Family::Gbm];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::LassoLogit => "lasso-logit",
            Family::HonestRf => "honest-rf",
            Family::Gbm => "gbm",
        }
    }

    /// Whether predictions are probabilities (clipped) rather than
    /// unconstrained linear fits.
    pub fn is_probability(self) -> bool {
        !matches!(self, Family::Ols | Family::Ridge)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ols" => Ok(Family::Ols),
            "ridge" => Ok(Family::Ridge),
            "lasso-logit" | "lasso" => Ok(Family::LassoLogit),
            "honest-rf" => Ok(Family::HonestRf),
            "gbm" => Ok(Family::Gbm),
            other => Err(LearnError::InvalidConfig(format!("unknown learner family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub family: Family,
    /// Ridge penalty, or the fixed LASSO penalty when `cv_folds < 2`.
    pub lambda: f64,
    pub cv_folds: usize,
    pub lambda_grid: usize,
    pub max_sweeps: usize,
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub honesty_fraction: f64,
    pub max_features: MaxFeatures,
    pub max_bins: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for `family`; fields a family does not use keep neutral
    /// values.
    pub fn new(family: Family) -> Self {
        let base = TrainConfig {
            family,
            lambda: 0.01,
            cv_folds: 5,
            lambda_grid: 30,
            max_sweeps: 1000,
            trees: 200,
            max_depth: 12,
            learning_rate: 0.1,
            min_leaf: 10,
            honesty_fraction: 0.5,
            max_features: MaxFeatures::All,
            max_bins: 64,
            seed: 0,
        };
        match family {
            Family::Gbm => TrainConfig {
                trees: 150,
                max_depth: 3,
                ..base
            },
            _ => base,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |msg: String| Err(LearnError::InvalidConfig(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.family == Family::Ridge && self.lambda == 0.0 {
            return bad("ridge needs a positive lambda".into());
        }
        if self.family == Family::LassoLogit && self.cv_folds < 2 && self.lambda == 0.0 {
            return bad("lasso-logit without cross-validation needs a positive lambda".into());
        }
        if self.trees == 0 || self.min_leaf == 0 || self.lambda_grid == 0 || self.max_sweeps == 0 {
            return bad("trees, min_leaf, lambda_grid and max_sweeps must be positive".into());
        }
        if self.max_bins < 2 || self.max_bins > 256 {
            return bad(format!("max_bins must be in [2, 256], got {}", self.max_bins));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return bad(format!("honesty_fraction must be in (0, 1), got {}", self.honesty_fraction));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("max_features fraction must be in (0, 1], got {f}"));
            }
        }
        Ok(())
    }
}

/// Anything that scores (covariates, location) pairs: fitted models and the
/// ground-truth causal model alike.
pub trait OutcomePredictor: Sync {
    fn n_locations(&self) -> usize;

    fn predict(&self, record: &RefugeeRecord, location: usize) -> Result<f64, LearnError>;

    fn predict_locations(&self, record: &RefugeeRecord) -> Result<Vec<f64>, LearnError> {
        (0..self.n_locations()).map(|t| self.predict(record, t)).collect()
    }
}

/// N×L score matrix, rows in record order.
pub fn score_matrix(model: &dyn OutcomePredictor, records: &[RefugeeRecord]) -> Result<Vec<Vec<f64>>, LearnError> {
    records.par_iter().map(|r| model.predict_locations(r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocationModel {
    Forest { forest: Forest },
    Boosted { model: BoostedTrees },
    /// Fallback when the location's subsample is too small to fit.
    Constant { value: f64, reason: String },
}

impl LocationModel {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            LocationModel::Forest { forest } => forest.predict(x),
            LocationModel::Boosted { model } => model.predict(x),
            LocationModel::Constant { value, .. } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear { coefficients: Vec<f64>, rank_deficient: bool },
    Logit { fit: LassoFit },
    PerLocation { submodels: Vec<LocationModel> },
}

/// A fitted β̂: predicts E[Y(t) | X] for every location t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    config: TrainConfig,
    map: FeatureMap,
    params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: OutcomeModel,
}

impl OutcomeModel {
    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Locations whose submodel fell back to a constant.
    pub fn constant_locations(&self) -> Vec<usize> {
        match &self.params {
            ModelParams::PerLocation { submodels } => submodels
                .iter()
                .enumerate()
                .filter(|(_, m)| matches!(m, LocationModel::Constant { .. }))
                .map(|(t, _)| t)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Short content hash of the fitted state.
    pub fn digest(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("models serialize"))
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), LearnError> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(writer, &file).map_err(|e| LearnError::Format(e.to_string()))
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, LearnError> {
        let file: ModelFile = serde_json::from_reader(reader).map_err(|e| LearnError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(LearnError::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.model)
    }

    fn clip(&self, p: f64) -> f64 {
        if self.config.family.is_probability() {
            p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
        } else {
            p
        }
    }
}

fn sparse_dot(x: &[(usize, f64)], beta: &[f64]) -> f64 {
    x.iter().map(|&(j, v)| v * beta[j]).sum()
}

impl OutcomePredictor for OutcomeModel {
    fn n_locations(&self) -> usize {
        self.map.n_locations()
    }

    fn predict(&self, record: &RefugeeRecord, location: usize) -> Result<f64, LearnError> {
        let raw = match &self.params {
            ModelParams::Linear { coefficients, .. } => {
                let mut x = Vec::new();
                self.map.encode_sparse(record, location, &mut x)?;
                sparse_dot(&x, coefficients)
            }
            ModelParams::Logit { fit } => {
                let mut x = Vec::new();
                self.map.encode_sparse(record, location, &mut x)?;
                sigmoid(fit.coefficients.intercept + sparse_dot(&x, &fit.coefficients.beta))
            }
            ModelParams::PerLocation { submodels } => {
                let model = submodels.get(location).ok_or(TabularError::LocationOutOfRange {
                    location,
                    n_locations: submodels.len(),
                })?;
                model.predict(&self.map.covariate_block(record)?)
            }
        };
        Ok(self.clip(raw))
    }

    fn predict_locations(&self, record: &RefugeeRecord) -> Result<Vec<f64>, LearnError> {
        match &self.params {
            ModelParams::PerLocation { submodels } => {
                let x = self.map.covariate_block(record)?;
                Ok(submodels.iter().map(|m| self.clip(m.predict(&x))).collect())
            }
            _ => (0..self.n_locations()).map(|t| self.predict(record, t)).collect(),
        }
    }
}

// ── Fitting ──

/// Fit the configured family on a logged dataset.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<OutcomeModel, LearnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(LearnError::EmptyData("training dataset is empty".into()));
    }
    let schema = dataset.schema().clone();
    let l = dataset.n_locations();
    let y: Vec<f64> = dataset.outcomes().iter().map(|&v| v as f64).collect();
    match config.family {
        Family::Ols | Family::Ridge => {
            let map = FeatureMap::fit(schema, l, FeatureMode::Interactions, dataset.records())?;
            let mut ne = NormalEquations::new(map.dim());
            let mut x = Vec::new();
            for (record, (&t, &yi)) in dataset.records().iter().zip(dataset.locations().iter().zip(&y)) {
                map.encode_sparse(record, t, &mut x)?;
                ne.add_sparse(&x, yi);
            }
            let (coefficients, rank_deficient) = if config.family == Family::Ols {
                let fit = ne.solve_ols()?;
                if fit.rank_deficient {
                    log::info!("ols design is rank deficient; using the minimum-norm solution");
                }
                (fit.coefficients, fit.rank_deficient)
            } else {
                (ne.solve_ridge(config.lambda)?, false)
            };
            Ok(OutcomeModel {
                config: config.clone(),
                map,
                params: ModelParams::Linear {
                    coefficients,
                    rank_deficient,
                },
            })
        }
        Family::LassoLogit => {
            let map = FeatureMap::fit(schema, l, FeatureMode::Interactions, dataset.records())?;
            let rows = dataset
                .records()
                .iter()
                .zip(dataset.locations())
                .map(|(r, &t)| {
                    let mut x = Vec::new();
                    map.encode_sparse(r, t, &mut x).map(|_| x)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let params = LassoParams {
                lambda: config.lambda,
                cv_folds: config.cv_folds,
                grid_points: config.lambda_grid,
                solve: SolveOptions {
                    tol: 1e-7,
                    max_sweeps: config.max_sweeps,
                },
                seed: SeedTree::new(config.seed).derive("cv-folds", 0),
            };
            let fit = fit_lasso(&rows, &y, map.dim(), &params)?;
            Ok(OutcomeModel {
                config: config.clone(),
                map,
                params: ModelParams::Logit { fit },
            })
        }
        Family::HonestRf | Family::Gbm => {
            let map = FeatureMap::fit(schema, l, FeatureMode::CovariatesOnly, dataset.records())?;
            let blocks = dataset
                .records()
                .iter()
                .map(|r| map.covariate_block(r))
                .collect::<Result<Vec<_>, _>>()?;
            let pooled_mean = dataset.observed_rate();
            let seeds = SeedTree::new(config.seed);
            let submodels = (0..l)
                .into_par_iter()
                .map(|t| {
                    let idx = dataset.indices_at(t);
                    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| blocks[i].clone()).collect();
                    let yt: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                    fit_location(config, &rows, &yt, pooled_mean, seeds.derive("location", t as u64))
                })
                .collect();
            Ok(OutcomeModel {
                config: config.clone(),
                map,
                params: ModelParams::PerLocation { submodels },
            })
        }
    }
}

fn fit_location(config: &TrainConfig, rows: &[Vec<f64>], y: &[f64], pooled_mean: f64, seed: u64) -> LocationModel {
    if rows.is_empty() {
        return LocationModel::Constant {
            value: pooled_mean,
            reason: "no training rows at this location; using the pooled mean".into(),
        };
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    match config.family {
        Family::HonestRf => {
            if rows.len() < 2 * config.min_leaf {
                return LocationModel::Constant {
                    value: mean,
                    reason: format!("{} rows is fewer than 2 * min_leaf", rows.len()),
                };
            }
            let params = ForestParams {
                trees: config.trees,
                max_depth: config.max_depth,
                min_leaf: config.min_leaf,
                max_features: config.max_features,
                max_bins: config.max_bins,
            };
            LocationModel::Forest {
                forest: fit_honest_forest(rows, y, &params, config.honesty_fraction, seed),
            }
        }
        Family::Gbm => {
            let params = BoostParams {
                trees: config.trees,
                max_depth: config.max_depth,
                learning_rate: config.learning_rate,
                min_leaf: config.min_leaf,
                max_bins: config.max_bins,
            };
            LocationModel::Boosted {
                model: fit_boosted(rows, y, &params),
            }
        }
        _ => unreachable!("only per-location families reach fit_location"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::dataset_tests::toy_dataset;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("forest".parse::<Family>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(Family::Gbm).validate().is_ok());
        let mut c = TrainConfig::new(Family::Gbm);
        c.learning_rate = 1.5;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(Family::HonestRf);
        c.honesty_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(Family::Ridge);
        c.lambda = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_family_fits_and_round_trips() {
        let data = toy_dataset(400);
        for family in Family::ALL {
            let mut config = TrainConfig::new(family).with_seed(3);
            config.trees = 10;
            let model = fit(&data, &config).unwrap();
            let mut buf = Vec::new();
            model.save(&mut buf).unwrap();
            let loaded = OutcomeModel::load(buf.as_slice()).unwrap();
            for r in data.records().iter().take(20) {
                let a = model.predict_locations(r).unwrap();
                assert_eq!(a, loaded.predict_locations(r).unwrap());
                for (t, &p) in a.iter().enumerate() {
                    assert_eq!(p, model.predict(r, t).unwrap());
                    if family.is_probability() {
                        assert!((PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p));
                    }
                }
            }
            assert_eq!(model.digest(), loaded.digest());
        }
    }

    #[test]
    fn load_rejects_other_versions() {
        let text = r#"{"format":"curse-lab-model","version":99,"model":null}"#;
        assert!(OutcomeModel::load(text.as_bytes()).is_err());
    }
}
