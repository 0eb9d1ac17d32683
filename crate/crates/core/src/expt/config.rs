//! Run configuration: presets, TOML layering and per-family overrides.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

use super::ExptError;
use crate::envgen::{EnvironmentConfig, ResampleMode};
use crate::learners::{Family, MaxFeatures, TrainConfig};
use crate::theory::TheoryConfig;

/// Optional per-family overrides of [`TrainConfig`] defaults. The seed is
/// always derived from the master seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sweeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub honesty_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_features: Option<MaxFeatures>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_bins: Option<usize>,
}

impl LearnerOverrides {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(lambda, cv_folds, lambda_grid, max_sweeps, trees, max_depth, learning_rate, min_leaf, honesty_fraction, max_features, max_bins);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub n_train: usize,
    pub n_test: usize,
    pub replications: usize,
    /// B: bootstrap refits and assignment-resampled IPW draws, both run on
    /// replication 0.
    pub bootstraps: usize,
    pub families: Vec<String>,
    pub master_seed: u64,
    /// Draw a fresh training set and refit for every replication.
    pub refit_per_rep: bool,
    pub ipw_resample_mode: ResampleMode,
    pub histogram_bins: usize,
    /// Held-out logged sample for per-family ROC and calibration.
    pub diagnostics_n: usize,
    /// Sample used to check the calibration of the ground truth itself.
    pub truth_calibration_n: usize,
    pub calibration_bins: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Preset::Desk.settings()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Smoke,
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = ExptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoke" => Ok(Preset::Smoke),
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(ExptError::Config(format!("unknown preset `{other}` (expected smoke, desk or full)"))),
        }
    }
}

const HEADLINE_FAMILIES: [Family; 3] = [Family::LassoLogit, Family::HonestRf, Family::Gbm];

impl Preset {
    fn settings(self) -> RunSettings {
        let (n_train, n_test, replications, bootstraps) = match self {
            Preset::Smoke => (1_500, 150, 3, 3),
            Preset::Desk => (8_000, 500, 50, 50),
            Preset::Full => (33_000, 1_000, 250, 250),
        };
        RunSettings {
            n_train,
            n_test,
            replications,
            bootstraps,
            families: HEADLINE_FAMILIES.iter().map(|f| f.name().to_string()).collect(),
            master_seed: 0,
            refit_per_rep: false,
            ipw_resample_mode: ResampleMode::Shuffle,
            histogram_bins: 20,
            diagnostics_n: if self == Preset::Smoke { 1_000 } else { 10_000 },
            truth_calibration_n: if self == Preset::Smoke { 2_000 } else { 50_000 },
            calibration_bins: 10,
        }
    }

    pub fn config(self) -> RunConfig {
        let mut env = EnvironmentConfig::default();
        let mut learners = BTreeMap::new();
        if self == Preset::Smoke {
            env.fx.n_fit = 4_000;
            env.fx.trees = 30;
            for family in [Family::HonestRf, Family::Gbm] {
                learners.insert(
                    family.name().to_string(),
                    LearnerOverrides {
                        trees: Some(20),
                        ..LearnerOverrides::default()
                    },
                );
            }
            learners.insert(
                Family::LassoLogit.name().to_string(),
                LearnerOverrides {
                    lambda_grid: Some(8),
                    cv_folds: Some(3),
                    ..LearnerOverrides::default()
                },
            );
        }
        let mut theory = TheoryConfig::default();
        if self == Preset::Smoke {
            theory.grid = 100_000;
            theory.reps = 10;
            theory.mc_draws = 100_000;
            theory.identity_betas = 20;
            theory.identity_draws = 20_000;
        }
        RunConfig {
            env,
            learners,
            run: self.settings(),
            theory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvironmentConfig,
    /// Keyed by family name.
    pub learners: BTreeMap<String, LearnerOverrides>,
    pub run: RunSettings,
    /// Settings of the `theory` subcommand; its seed is the master seed.
    pub theory: TheoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Preset::Desk.config()
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parse `text` layered over `base`: tables merge key by key, any other
    /// value replaces the base value. Unknown keys are rejected.
    pub fn from_toml_over(text: &str, base: &RunConfig) -> Result<Self, ExptError> {
        let top: toml::Value = toml::from_str(text).map_err(|e| ExptError::Config(e.to_string()))?;
        let mut merged = toml::Value::try_from(base).map_err(|e| ExptError::Config(e.to_string()))?;
        merge(&mut merged, top);
        let config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| ExptError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, ExptError> {
        toml::to_string(self).map_err(|e| ExptError::Config(e.to_string()))
    }

    /// Theory settings seeded from the master seed.
    pub fn theory_config(&self) -> TheoryConfig {
        TheoryConfig {
            seed: self.run.master_seed,
            ..self.theory.clone()
        }
    }

    pub fn families(&self) -> Result<Vec<Family>, ExptError> {
        self.run
            .families
            .iter()
            .map(|name| Family::from_str(name).map_err(|e| ExptError::Config(e.to_string())))
            .collect()
    }

    /// Defaults for `family` with this config's overrides applied.
    pub fn train_config(&self, family: Family) -> TrainConfig {
        let base = TrainConfig::new(family);
        match self.learners.get(family.name()) {
            Some(o) => o.apply(base),
            None => base,
        }
    }

    pub fn validate(&self) -> Result<(), ExptError> {
        let r = &self.run;
        if r.n_train == 0 || r.n_test == 0 || r.replications == 0 {
            return Err(ExptError::Config("n_train, n_test and replications must be positive".into()));
        }
        if r.histogram_bins == 0 || r.calibration_bins < 2 {
            return Err(ExptError::Config("need histogram_bins >= 1 and calibration_bins >= 2".into()));
        }
        let families = self.families()?;
        if families.is_empty() {
            return Err(ExptError::Config("no learner families selected".into()));
        }
        for name in self.learners.keys() {
            Family::from_str(name).map_err(|e| ExptError::Config(format!("[learners.{name}]: {e}")))?;
        }
        for f in families {
            self.train_config(f).validate().map_err(|e| ExptError::Config(format!("{f}: {e}")))?;
        }
        self.env.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in [Preset::Smoke, Preset::Desk, Preset::Full] {
            p.config().validate().unwrap();
        }
        let desk = Preset::Desk.config();
        assert_eq!((desk.run.n_train, desk.run.n_test, desk.run.replications, desk.run.bootstraps), (8000, 500, 50, 50));
        assert_eq!(desk.env.n_locations, 43);
    }

    #[test]
    fn toml_layering_and_overrides() {
        let text = r#"
            [run]
            replications = 7
            families = ["gbm"]

            [learners.gbm]
            trees = 12

            [env.fx]
            n_fit = 999
        "#;
        let c = RunConfig::from_toml_over(text, &Preset::Desk.config()).unwrap();
        assert_eq!(c.run.replications, 7);
        assert_eq!(c.run.n_train, 8000);
        assert_eq!(c.env.fx.n_fit, 999);
        assert_eq!(c.env.fx.trees, 200);
        let gbm = c.train_config(Family::Gbm);
        assert_eq!((gbm.trees, gbm.max_depth), (12, 3));
    }

    #[test]
    fn unknown_keys_rejected() {
        let base = Preset::Smoke.config();
        assert!(RunConfig::from_toml_over("[run]\nreplicates = 3\n", &base).is_err());
        assert!(RunConfig::from_toml_over("[learners.gbm]\ntress = 3\n", &base).is_err());
        assert!(RunConfig::from_toml_over("[learners.svm]\ntrees = 3\n", &base).is_err());
        assert!(RunConfig::from_toml_over("[bogus]\nx = 1\n", &base).is_err());
        assert!(RunConfig::from_toml_over("[run]\nfamilies = [\"svm\"]\n", &base).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = Preset::Smoke.config();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_over(&text, &Preset::Full.config()).unwrap(), c);
    }

    #[test]
    fn zero_counts_rejected() {
        let mut c = Preset::Smoke.config();
        c.run.replications = 0;
        assert!(c.validate().is_err());
    }
}
