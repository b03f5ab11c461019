//! Fold assignment, penalty grids and per-fold sufficient statistics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, task_rng};

/// Scores closer than this count as tied in hyperparameter selection.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyGrid {
    /// Explicit grid; when absent a log-spaced path below `lambda_max` is used.
    pub lambdas: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub folds: usize,
}

impl Default for PenaltyGrid {
    fn default() -> Self {
        PenaltyGrid {
            lambdas: None,
            n_lambda: 100,
            min_ratio: 1e-4,
            folds: 10,
        }
    }
}

impl PenaltyGrid {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::validation(format!(
                "cross-validation needs at least 2 folds, got {}",
                self.folds
            )));
        }
        match &self.lambdas {
            Some(l) => validate_lambdas(l),
            None if self.n_lambda == 0 => Err(Error::validation("n_lambda must be positive")),
            None if !(self.min_ratio > 0.0 && self.min_ratio < 1.0) => Err(Error::validation(
                format!("min_ratio must lie in (0, 1), got {}", self.min_ratio),
            )),
            None => Ok(()),
        }
    }

    /// The explicit grid, or `n_lambda` log-spaced values from `lambda_max`
    /// down to `min_ratio * lambda_max`.
    pub fn resolve(&self, lambda_max: f64) -> Vec<f64> {
        if let Some(l) = &self.lambdas {
            return l.clone();
        }
        let top = if lambda_max > 0.0 { lambda_max } else { 1e-8 };
        if self.n_lambda == 1 {
            return vec![top];
        }
        let step = self.min_ratio.ln() / (self.n_lambda - 1) as f64;
        (0..self.n_lambda)
            .map(|i| top * (step * i as f64).exp())
            .collect()
    }
}

pub fn validate_lambdas(l: &[f64]) -> Result<()> {
    if l.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    if l.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::validation("lambda grid must be strictly positive"));
    }
    if l.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("lambda grid must be strictly decreasing"));
    }
    Ok(())
}

/// Balanced random fold labels in `0..k`.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(Error::validation(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut task_rng(seed, streams::FOLDS));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

/// A single hyperparameter value and its cross-validated score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub value: f64,
    pub score: f64,
}

/// Index of the lowest score; ties go to the smallest hyperparameter value.
pub fn argmin_smallest(points: &[CvPoint]) -> usize {
    let best = points
        .iter()
        .map(|p| p.score)
        .fold(f64::INFINITY, f64::min);
    let mut pick = 0;
    let mut pick_value = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        if p.score <= best + TIE_TOL && p.value < pick_value {
            pick = i;
            pick_value = p.value;
        }
    }
    pick
}

/// Raw cross-products of a block of rows.
#[derive(Debug, Clone)]
pub struct Moments {
    pub n: usize,
    pub sx: DVector<f64>,
    pub sy: f64,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
}

impl Moments {
    pub fn of(x: &DMatrix<f64>, y: &[f64]) -> Self {
        let yv = DVector::from_column_slice(y);
        Moments {
            n: x.nrows(),
            sx: x.row_sum().transpose(),
            sy: yv.sum(),
            xtx: x.tr_mul(x),
            xty: x.tr_mul(&yv),
            yty: yv.dot(&yv),
        }
    }

    fn minus(&self, other: &Moments) -> Moments {
        Moments {
            n: self.n - other.n,
            sx: &self.sx - &other.sx,
            sy: self.sy - other.sy,
            xtx: &self.xtx - &other.xtx,
            xty: &self.xty - &other.xty,
            yty: self.yty - other.yty,
        }
    }

    pub fn means(&self) -> (DVector<f64>, f64) {
        let n = self.n as f64;
        (&self.sx / n, self.sy / n)
    }

    /// Centered Gram matrix and cross-product, both divided by `n`.
    pub fn centered(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n as f64;
        let (mx, my) = self.means();
        let c = &self.xtx / n - &mx * mx.transpose();
        let b = &self.xty / n - &mx * my;
        (c, b)
    }

    /// Sum of squared errors of `intercept + x' beta` over these rows.
    pub fn sse(&self, intercept: f64, beta: &DVector<f64>) -> f64 {
        let n = self.n as f64;
        let v = self.yty - 2.0 * intercept * self.sy + n * intercept * intercept
            - 2.0 * beta.dot(&(&self.xty - &self.sx * intercept))
            + beta.dot(&(&self.xtx * beta));
        v.max(0.0)
    }
}

/// Per-fold moments; the training part of a fold is the total minus the fold.
pub struct FoldMoments {
    pub folds: Vec<Moments>,
    pub total: Moments,
}

impl FoldMoments {
    pub fn new(x: &DMatrix<f64>, y: &[f64], fold: &[usize], k: usize) -> Self {
        let folds: Vec<Moments> = (0..k)
            .map(|f| {
                let rows: Vec<usize> = (0..x.nrows()).filter(|&i| fold[i] == f).collect();
                let xf = x.select_rows(&rows);
                let yf: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                Moments::of(&xf, &yf)
            })
            .collect();
        let mut total = folds[0].clone();
        for m in &folds[1..] {
            total.n += m.n;
            total.sx += &m.sx;
            total.sy += m.sy;
            total.xtx += &m.xtx;
            total.xty += &m.xty;
            total.yty += m.yty;
        }
        FoldMoments { folds, total }
    }

    pub fn training(&self, f: usize) -> Moments {
        self.total.minus(&self.folds[f])
    }
}
