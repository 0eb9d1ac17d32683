//! Least squares and ridge via the normal equations.
//!
//! Both use the 1/n-scaled Gram matrix Σ̂ = ZᵀZ/n and moment vector ZᵀY/n,
//! so ridge is β̂ = (Σ̂ + λI)⁻¹ ZᵀY/n.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::LearnError;

/// Relative eigenvalue cutoff below which the Gram matrix is treated as
/// singular.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    /// True when OLS fell back to the minimum-norm pseudo-inverse solution.
    pub rank_deficient: bool,
}

/// Accumulates Σ̂ and ZᵀY/n from dense or sparse rows.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    n: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(dim, dim),
            moment: DVector::zeros(dim),
            n: 0,
        }
    }

    pub fn add_dense(&mut self, x: &[f64], y: f64) {
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            self.moment[a] += xa * y;
            for (b, &xb) in x.iter().enumerate().skip(a) {
                self.gram[(a, b)] += xa * xb;
            }
        }
        self.n += 1;
    }

    /// `x` lists nonzero `(index, value)` pairs in ascending index order.
    pub fn add_sparse(&mut self, x: &[(usize, f64)], y: f64) {
        for (k, &(a, xa)) in x.iter().enumerate() {
            self.moment[a] += xa * y;
            for &(b, xb) in &x[k..] {
                self.gram[(a, b)] += xa * xb;
            }
        }
        self.n += 1;
    }

    fn scaled(&self) -> Result<(DMatrix<f64>, DVector<f64>), LearnError> {
        if self.n == 0 {
            return Err(LearnError::EmptyData("no rows for least squares".into()));
        }
        let n = self.n as f64;
        let mut gram = self.gram.clone() / n;
        gram.fill_lower_triangle_with_upper_triangle();
        Ok((gram, &self.moment / n))
    }

    pub fn solve_ols(&self) -> Result<LinearFit, LearnError> {
        let (gram, moment) = self.scaled()?;
        solve_psd(gram, moment)
    }

    pub fn solve_ridge(&self, lambda: f64) -> Result<Vec<f64>, LearnError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LearnError::InvalidConfig(format!("ridge penalty must be positive, got {lambda}")));
        }
        let (mut gram, moment) = self.scaled()?;
        for d in 0..gram.nrows() {
            gram[(d, d)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| LearnError::Numerical("ridge system is not positive definite".into()))?;
        Ok(chol.solve(&moment).iter().copied().collect())
    }
}

fn solve_psd(gram: DMatrix<f64>, moment: DVector<f64>) -> Result<LinearFit, LearnError> {
    let eig = SymmetricEigen::new(gram.clone());
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = RANK_TOL * max_eig.max(f64::MIN_POSITIVE);
    let full_rank = eig.eigenvalues.iter().all(|&v| v > tol);
    if full_rank {
        if let Some(chol) = gram.cholesky() {
            return Ok(LinearFit {
                coefficients: chol.solve(&moment).iter().copied().collect(),
                rank_deficient: false,
            });
        }
    }
    // Minimum-norm solution V diag(1/λ⁺) Vᵀ m.
    let vt_m = eig.eigenvectors.transpose() * &moment;
    let scaled = DVector::from_iterator(
        vt_m.len(),
        vt_m.iter().zip(eig.eigenvalues.iter()).map(|(&c, &v)| if v > tol { c / v } else { 0.0 }),
    );
    let beta = &eig.eigenvectors * scaled;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(LearnError::Numerical("least-squares solution is not finite".into()));
    }
    Ok(LinearFit {
        coefficients: beta.iter().copied().collect(),
        rank_deficient: !full_rank,
    })
}

fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Result<NormalEquations, LearnError> {
    if x.nrows() != y.len() {
        return Err(LearnError::Shape(format!("design has {} rows but y has {}", x.nrows(), y.len())));
    }
    let mut ne = NormalEquations::new(x.ncols());
    let mut row = vec![0.0; x.ncols()];
    for (i, &yi) in y.iter().enumerate() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        ne.add_dense(&row, yi);
    }
    Ok(ne)
}

/// Minimize ‖Xβ − y‖². Rank-deficient designs get the minimum-norm
/// solution and `rank_deficient = true`.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearFit, LearnError> {
    normal_equations(x, y)?.solve_ols()
}

/// β̂ = (XᵀX/n + λI)⁻¹ XᵀY/n.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>, LearnError> {
    normal_equations(x, y)?.solve_ridge(lambda)
}
