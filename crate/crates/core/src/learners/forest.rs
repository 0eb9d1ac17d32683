//! Random-forest regression and the honest variant.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, BinnedMatrix, GrowParams, Tree};
use crate::seeds::{SeedTree, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().round() as usize,
            MaxFeatures::Fraction(f) => (f * n_features as f64).ceil() as usize,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    pub max_bins: usize,
}

/// Average of regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn constant(value: f64) -> Self {
        Self {
            trees: vec![Tree::constant(value)],
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        // Sequential sum in tree order keeps predictions bit-stable.
        let total: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        total / self.trees.len() as f64
    }
}

fn bootstrap(n: usize, rng: &mut SimRng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn grow_params(params: &ForestParams, n_features: usize) -> GrowParams {
    GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: params.max_features.resolve(n_features),
    }
}

/// Breiman forest: each tree grown on a bootstrap resample with in-bag leaf
/// means.
pub fn fit_forest(rows: &[Vec<f64>], target: &[f64], params: &ForestParams, seed: u64) -> Forest {
    assert_eq!(rows.len(), target.len());
    if rows.is_empty() {
        return Forest::constant(0.0);
    }
    let data = BinnedMatrix::from_rows(rows, params.max_bins);
    let gp = grow_params(params, data.n_features());
    let seeds = SeedTree::new(seed);
    let trees = (0..params.trees.max(1))
        .into_par_iter()
        .map(|k| {
            let mut rng = seeds.rng("tree", k as u64);
            let sample: Vec<u32> = bootstrap(rows.len(), &mut rng).into_iter().map(|i| i as u32).collect();
            grow(&data, target, sample, gp, &mut rng).tree
        })
        .collect();
    Forest { trees }
}

/// Grow a tree's structure on `structure` rows only. Node values are
/// structure-sample means until [`estimate_leaves`] overwrites them.
pub fn grow_structure(data: &BinnedMatrix, target: &[f64], structure: &[usize], params: GrowParams, rng: &mut SimRng) -> Tree {
    let rows = structure.iter().map(|&i| i as u32).collect();
    grow(data, target, rows, params, rng).tree
}

/// Replace every node value with the mean outcome of the `estimation` rows
/// reaching it. Empty nodes inherit their parent's value.
pub fn estimate_leaves(tree: &mut Tree, rows: &[Vec<f64>], target: &[f64], estimation: &[usize]) {
    let fallback = tree.nodes()[0].value();
    tree.reestimate(rows, target, estimation, fallback);
}

/// Split a bootstrap resample into structure and estimation halves.
pub fn honest_halves(n: usize, honesty_fraction: f64, rng: &mut SimRng) -> (Vec<usize>, Vec<usize>) {
    let mut sample = bootstrap(n, rng);
    sample.shuffle(rng);
    let n_structure = ((n as f64) * honesty_fraction).ceil() as usize;
    let n_structure = n_structure.clamp(1, n);
    let estimation = sample.split_off(n_structure);
    (sample, estimation)
}

/// Honest forest: splits chosen on one half of each bootstrap resample,
/// leaf values estimated on the other.
pub fn fit_honest_forest(
    rows: &[Vec<f64>],
    target: &[f64],
    params: &ForestParams,
    honesty_fraction: f64,
    seed: u64,
) -> Forest {
    assert_eq!(rows.len(), target.len());
    if rows.is_empty() {
        return Forest::constant(0.0);
    }
    let data = BinnedMatrix::from_rows(rows, params.max_bins);
    let gp = grow_params(params, data.n_features());
    let seeds = SeedTree::new(seed);
    let trees = (0..params.trees.max(1))
        .into_par_iter()
        .map(|k| {
            let mut rng = seeds.rng("honest-tree", k as u64);
            let (structure, estimation) = honest_halves(rows.len(), honesty_fraction, &mut rng);
            let mut tree = grow_structure(&data, target, &structure, gp, &mut rng);
            if !estimation.is_empty() {
                estimate_leaves(&mut tree, rows, target, &estimation);
            }
            tree
        })
        .collect();
    Forest { trees }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;

    fn params() -> ForestParams {
        ForestParams {
            trees: 50,
            max_depth: 6,
            min_leaf: 5,
            max_features: MaxFeatures::All,
            max_bins: 32,
        }
    }

    #[test]
    fn forest_recovers_step_function() {
        let mut rng = rng_from_seed(3);
        let rows: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] > 0.5 { 1.0 } else { 0.0 }).collect();
        let f = fit_forest(&rows, &y, &params(), 11);
        assert!((f.predict(&[0.9, 0.3]) - 1.0).abs() < 0.05);
        assert!(f.predict(&[0.1, 0.3]).abs() < 0.05);
    }

    #[test]
    fn honest_halves_have_requested_sizes() {
        let (s, e) = honest_halves(101, 0.5, &mut rng_from_seed(0));
        assert_eq!(s.len(), 51);
        assert_eq!(e.len(), 50);
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(100), 10);
        assert_eq!(MaxFeatures::All.resolve(7), 7);
        assert_eq!(MaxFeatures::Fraction(0.01).resolve(7), 1);
    }

    #[test]
    fn fits_are_seed_deterministic() {
        let mut rng = rng_from_seed(5);
        let rows: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[0]).collect();
        let a = fit_honest_forest(&rows, &y, &params(), 0.5, 9);
        let b = fit_honest_forest(&rows, &y, &params(), 0.5, 9);
        assert_eq!(a, b);
    }
}
