//! Least squares and ridge regression.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{argmin_smallest, assign_folds, CvPoint, FoldMoments, PenaltyGrid};
use crate::error::{Error, Result};

/// Pivot magnitude, relative to the largest, below which a QR column is
/// treated as dependent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (x * beta).iter().map(|v| v + self.intercept).collect()
    }
}

/// A penalized fit with its cross-validation profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedLinear {
    pub model: LinearModel,
    pub lambda: f64,
    pub profile: Vec<CvPoint>,
}

fn check_shape(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::validation(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::validation("cannot fit on zero rows"));
    }
    Ok(())
}

/// Least squares with intercept via Householder QR of `[1 X]`.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
    check_shape(x, y)?;
    let (n, k) = x.shape();
    if n < k + 1 {
        return Err(Error::RankDeficient {
            rank: n,
            columns: k + 1,
        });
    }
    let a = x.clone().insert_column(0, 1.0);
    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..=k).map(|i| r[(i, i)].abs()).collect();
    let top = diag.iter().copied().fold(0.0, f64::max);
    let rank = diag.iter().filter(|&&d| d > RANK_TOL * top).count();
    if rank <= k {
        return Err(Error::RankDeficient {
            rank,
            columns: k + 1,
        });
    }
    let qty = qr.q().tr_mul(&DVector::from_column_slice(y));
    let theta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank, columns: k + 1 })?;
    Ok(LinearModel {
        intercept: theta[0],
        coefficients: theta.rows(1, k).iter().copied().collect(),
    })
}

fn centered(x: &DMatrix<f64>, y: &[f64]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    let n = x.nrows() as f64;
    let mx = x.row_sum().transpose() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mx[j]);
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - my));
    (xc, yc, mx, my)
}

/// Minimizer of `||y - b0 - X beta||^2 + lambda ||beta||^2`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LinearModel> {
    check_shape(x, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::validation(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let (xc, yc, mx, my) = centered(x, y);
    let mut a = xc.tr_mul(&xc);
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let beta = a
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::RankDeficient {
            rank: x.ncols().saturating_sub(1),
            columns: x.ncols(),
        })?;
    Ok(LinearModel {
        intercept: my - mx.dot(&beta),
        coefficients: beta.iter().copied().collect(),
    })
}

/// Largest penalty of the default ridge path: `1000 * max_j |x_j' y|` on
/// centered data.
pub fn ridge_lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let (xc, yc, _, _) = centered(x, y);
    1000.0 * xc.tr_mul(&yc).amax()
}

/// Ridge with the penalty chosen by k-fold RMSE.
///
/// Each fold's training Gram matrix is eigendecomposed once, after which
/// every grid point costs a diagonal rescale.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], grid: &PenaltyGrid, seed: u64) -> Result<TunedLinear> {
    check_shape(x, y)?;
    grid.validate()?;
    let lambdas = grid.resolve(ridge_lambda_max(x, y));
    let fold = assign_folds(x.nrows(), grid.folds, seed)?;
    let moments = FoldMoments::new(x, y, &fold, grid.folds);

    let fold_sse: Vec<Vec<f64>> = (0..grid.folds)
        .into_par_iter()
        .map(|f| {
            let train = moments.training(f);
            let held = &moments.folds[f];
            let (c, b) = train.centered();
            let n = train.n as f64;
            let eig = SymmetricEigen::new(c * n);
            let proj = eig.eigenvectors.tr_mul(&(b * n));
            let (mx, my) = train.means();
            lambdas
                .iter()
                .map(|&l| {
                    let scaled = DVector::from_iterator(
                        proj.len(),
                        proj.iter()
                            .zip(eig.eigenvalues.iter())
                            .map(|(a, e)| a / (e.max(0.0) + l)),
                    );
                    let beta = &eig.eigenvectors * scaled;
                    held.sse(my - mx.dot(&beta), &beta)
                })
                .collect()
        })
        .collect();

    let profile = cv_profile(&lambdas, &fold_sse, &moments);
    let pick = argmin_smallest(&profile);
    let model = ridge_solve(x, y, lambdas[pick])?;
    Ok(TunedLinear {
        model,
        lambda: lambdas[pick],
        profile,
    })
}

/// Mean over folds of the held-out RMSE at each grid point.
pub(crate) fn cv_profile(lambdas: &[f64], fold_sse: &[Vec<f64>], m: &FoldMoments) -> Vec<CvPoint> {
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let score = fold_sse
                .iter()
                .zip(&m.folds)
                .map(|(s, f)| (s[i] / f.n as f64).sqrt())
                .sum::<f64>()
                / fold_sse.len() as f64;
            CvPoint { value: l, score }
        })
        .collect()
}
