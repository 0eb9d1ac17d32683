//! Gradient-boosted classification trees under logistic loss.

use serde::{Deserialize, Serialize};

use super::tree::{grow, BinnedMatrix, GrowParams, Tree};
use crate::seeds::rng_from_seed;

const PROB_CLIP: f64 = 1e-6;
const MIN_HESSIAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub max_bins: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    init: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl BoostedTrees {
    pub fn n_stages(&self) -> usize {
        self.trees.len()
    }

    /// F after the first `stages` trees (F₀ when `stages == 0`).
    pub fn raw_score_at(&self, x: &[f64], stages: usize) -> f64 {
        let mut f = self.init;
        for tree in self.trees.iter().take(stages) {
            f += self.learning_rate * tree.predict(x);
        }
        f
    }

    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.raw_score_at(x, self.trees.len())
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }
}

/// Fit with no stage observer.
pub fn fit_boosted(rows: &[Vec<f64>], y: &[f64], params: &BoostParams) -> BoostedTrees {
    fit_boosted_observed(rows, y, params, |_, _| {})
}

/// Fit, calling `observer(stage, residuals)` with the negative gradients
/// each stage's tree is fitted to (stage counts from 1).
pub fn fit_boosted_observed(
    rows: &[Vec<f64>],
    y: &[f64],
    params: &BoostParams,
    mut observer: impl FnMut(usize, &[f64]),
) -> BoostedTrees {
    assert_eq!(rows.len(), y.len());
    let n = rows.len();
    let mean = if n == 0 { 0.5 } else { y.iter().sum::<f64>() / n as f64 };
    let init = logit(mean.clamp(PROB_CLIP, 1.0 - PROB_CLIP));
    let mut model = BoostedTrees {
        init,
        learning_rate: params.learning_rate,
        trees: Vec::with_capacity(params.trees),
    };
    if n == 0 || mean <= 0.0 || mean >= 1.0 {
        return model;
    }

    let data = BinnedMatrix::from_rows(rows, params.max_bins);
    let gp = GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: data.n_features(),
    };
    // Every feature is scanned, so the RNG is never consulted.
    let mut rng = rng_from_seed(0);
    let mut f = vec![init; n];
    let mut residuals = vec![0.0; n];
    for stage in 1..=params.trees {
        for i in 0..n {
            residuals[i] = y[i] - sigmoid(f[i]);
        }
        observer(stage, &residuals);
        let grown = grow(&data, &residuals, (0..n as u32).collect(), gp, &mut rng);
        let mut tree = grown.tree;
        for (leaf, members) in &grown.leaves {
            let (mut g, mut h) = (0.0, 0.0);
            for &i in members {
                let p = sigmoid(f[i as usize]);
                g += residuals[i as usize];
                h += p * (1.0 - p);
            }
            let value = if h < MIN_HESSIAN { 0.0 } else { g / h };
            tree.set_leaf_value(*leaf, value);
            for &i in members {
                f[i as usize] += params.learning_rate * value;
            }
        }
        model.trees.push(tree);
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn depth_zero_single_stage_predicts_mean() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..100).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let params = BoostParams {
            trees: 1,
            max_depth: 0,
            learning_rate: 0.1,
            min_leaf: 1,
            max_bins: 32,
        };
        let m = fit_boosted(&rows, &y, &params);
        for r in &rows {
            assert!((m.predict(r) - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_labels_give_clipped_constant() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let params = BoostParams {
            trees: 5,
            max_depth: 2,
            learning_rate: 0.1,
            min_leaf: 1,
            max_bins: 8,
        };
        let ones = fit_boosted(&rows, &[1.0; 10], &params);
        assert_eq!(ones.n_stages(), 0);
        assert!((ones.predict(&[3.0]) - (1.0 - PROB_CLIP)).abs() < 1e-12);
        let zeros = fit_boosted(&rows, &[0.0; 10], &params);
        assert!((zeros.predict(&[3.0]) - PROB_CLIP).abs() < 1e-12);
    }

    #[test]
    fn observed_residuals_match_logistic_gradient() {
        let mut rng = crate::seeds::rng_from_seed(4);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] + 0.3 * r[1] > 0.6 { 1.0 } else { 0.0 }).collect();
        let params = BoostParams {
            trees: 8,
            max_depth: 2,
            learning_rate: 0.1,
            min_leaf: 5,
            max_bins: 32,
        };
        let mut seen = Vec::new();
        let model = fit_boosted_observed(&rows, &y, &params, |k, r| seen.push((k, r.to_vec())));
        for (k, residuals) in &seen {
            for (i, r) in rows.iter().enumerate() {
                let f = model.raw_score_at(r, k - 1);
                assert!((residuals[i] - (y[i] - sigmoid(f))).abs() < 1e-10);
            }
        }
    }
}
