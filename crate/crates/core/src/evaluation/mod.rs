//! RMSE, SKU-panel bootstrap tests and price marginal effects.

pub mod report;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datamodel::DesignMatrix;
use crate::error::{Error, Result};
use crate::learners::Predictor;
use crate::rng::{derive_seed, streams, task_rng};

pub use report::EvalReport;

pub const DEFAULT_REPLICATIONS: usize = 1000;
pub const PERTURBATION_RANGE: (f64, f64) = (0.01, 1.0);

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::validation(format!(
            "rmse of {} predictions against {} actual values",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::validation("rmse of an empty set"));
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).powi(2))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// Rows grouped by SKU, the resampling unit of the panel bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct SkuPanel {
    groups: Vec<Vec<usize>>,
}

impl SkuPanel {
    pub fn new<'a>(skus: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in skus.into_iter().enumerate() {
            map.entry(s).or_default().push(i);
        }
        if map.len() < 2 {
            return Err(Error::validation(format!(
                "panel bootstrap needs at least 2 distinct SKUs, got {}",
                map.len()
            )));
        }
        Ok(SkuPanel {
            groups: map.into_values().collect(),
        })
    }

    pub fn from_design(dm: &DesignMatrix) -> Result<Self> {
        SkuPanel::new(dm.row_keys.iter().map(|k| k.sku.as_str()))
    }

    pub fn n_skus(&self) -> usize {
        self.groups.len()
    }

    pub fn n_rows(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// How many times each SKU is drawn in one resample.
    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<u32> {
        let g = self.groups.len();
        let mut m = vec![0u32; g];
        for _ in 0..g {
            m[rng.random_range(0..g)] += 1;
        }
        m
    }

    /// Per-SKU sums of a row statistic.
    fn group_sums(&self, values: impl Fn(usize) -> f64) -> Vec<f64> {
        self.groups
            .iter()
            .map(|rows| rows.iter().map(|&i| values(i)).sum())
            .collect()
    }

    fn group_sizes(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.len() as f64).collect()
    }
}

fn weighted_total(m: &[u32], v: &[f64]) -> f64 {
    m.iter().zip(v).map(|(&k, x)| f64::from(k) * x).sum()
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_p_value(t: f64) -> f64 {
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - z.cdf(t.abs()))
}

fn mean_and_sd(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    if draws.len() < 2 {
        return (mean, 0.0);
    }
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replications: usize,
    pub draws: Vec<f64>,
    pub point: f64,
    pub standard_error: f64,
    /// Absent when the bootstrap distribution is degenerate.
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl BootstrapResult {
    pub fn from_draws(point: f64, draws: Vec<f64>) -> Self {
        let (_, se) = mean_and_sd(&draws);
        let (t, p) = if se > 0.0 {
            let t = point / se;
            (Some(t), Some(normal_p_value(t)))
        } else {
            (None, None)
        };
        BootstrapResult {
            replications: draws.len(),
            draws,
            point,
            standard_error: se,
            t_statistic: t,
            p_value: p,
        }
    }
}

fn check_replications(r: usize) -> Result<()> {
    if r < 2 {
        return Err(Error::validation("bootstrap needs at least 2 replications"));
    }
    Ok(())
}

/// `RMSE(a) - RMSE(b)` on the test rows, with a bootstrap over SKUs.
pub fn bootstrap_rmse_diff(
    pred_a: &[f64],
    pred_b: &[f64],
    actual: &[f64],
    panel: &SkuPanel,
    replications: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    check_replications(replications)?;
    if pred_a.len() != panel.n_rows() || pred_b.len() != panel.n_rows() {
        return Err(Error::validation("predictions do not match the panel rows"));
    }
    let point = rmse(pred_a, actual)? - rmse(pred_b, actual)?;
    let sse_a = panel.group_sums(|i| (pred_a[i] - actual[i]).powi(2));
    let sse_b = panel.group_sums(|i| (pred_b[i] - actual[i]).powi(2));
    let sizes = panel.group_sizes();
    let root = derive_seed(seed, streams::BOOTSTRAP);
    let draws: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let m = panel.draw(&mut task_rng(root, r as u64));
            let n = weighted_total(&m, &sizes);
            (weighted_total(&m, &sse_a) / n).sqrt() - (weighted_total(&m, &sse_b) / n).sqrt()
        })
        .collect();
    Ok(BootstrapResult::from_draws(point, draws))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEffectEstimate {
    /// Change in predicted packs per standard deviation of log price.
    pub mean_effect: f64,
    pub standard_error: f64,
    pub replications: usize,
    pub perturbation_range: (f64, f64),
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
}

/// Step sizes and SKU resamples shared by every model evaluated with the
/// same seed, so effects of different models are directly comparable.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectDraws {
    pub deltas: Vec<f64>,
    multiplicity: Vec<Vec<u32>>,
    range: (f64, f64),
}

impl EffectDraws {
    pub fn new(panel: &SkuPanel, replications: usize, range: (f64, f64), seed: u64) -> Result<Self> {
        check_replications(replications)?;
        if !(range.0 > 0.0 && range.0 <= range.1 && range.1.is_finite()) {
            return Err(Error::validation(format!(
                "perturbation range must satisfy 0 < low <= high, got {range:?}"
            )));
        }
        let root = derive_seed(seed, streams::EFFECT);
        let (deltas, multiplicity) = (0..replications)
            .map(|r| {
                let mut rng = task_rng(root, r as u64);
                let delta = if range.0 == range.1 {
                    range.0
                } else {
                    rng.random_range(range.0..=range.1)
                };
                (delta, panel.draw(&mut rng))
            })
            .unzip();
        Ok(EffectDraws {
            deltas,
            multiplicity,
            range,
        })
    }

    /// Effects from base predictions and the rows x replications matrix of
    /// shifted predictions.
    pub fn estimate(&self, panel: &SkuPanel, base: &[f64], shifted: &DMatrix<f64>) -> MarginalEffectEstimate {
        let sizes = panel.group_sizes();
        let effects: Vec<f64> = (0..self.deltas.len())
            .map(|r| {
                let col = shifted.column(r);
                let diffs = panel.group_sums(|i| col[i] - base[i]);
                let m = &self.multiplicity[r];
                weighted_total(m, &diffs) / (self.deltas[r] * weighted_total(m, &sizes))
            })
            .collect();
        let (mean, se) = mean_and_sd(&effects);
        let (t, p) = if se > 0.0 {
            (Some(mean / se), Some(normal_p_value(mean / se)))
        } else {
            (None, None)
        };
        MarginalEffectEstimate {
            mean_effect: mean,
            standard_error: se,
            replications: effects.len(),
            perturbation_range: self.range,
            t_statistic: t,
            p_value: p,
        }
    }
}

/// Mean finite-difference effect of adding `delta ~ U[range]` to `column`,
/// over SKU-bootstrap resamples of the rows of `x`.
pub fn marginal_effect(
    model: &dyn Predictor,
    x: &DMatrix<f64>,
    column: usize,
    panel: &SkuPanel,
    replications: usize,
    seed: u64,
) -> Result<MarginalEffectEstimate> {
    if panel.n_rows() != x.nrows() {
        return Err(Error::validation("panel does not match the design rows"));
    }
    let draws = EffectDraws::new(panel, replications, PERTURBATION_RANGE, seed)?;
    let base = model.predict(x)?;
    let shifted = model.predict_shifted(x, column, &draws.deltas)?;
    Ok(draws.estimate(panel, &base, &shifted))
}

/// Relative pivot below which a column is dropped from a resample's fit.
const PIVOT_TOL: f64 = 1e-10;

/// Solves `a theta = b` for symmetric positive semidefinite `a` on the
/// columns a left-to-right Cholesky scan can pivot on. Dropped columns come
/// back as NaN.
fn solve_identified(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = a.nrows();
    // Rows of the lower factor for the kept columns, in kept order.
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    let mut factor: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut row = Vec::with_capacity(kept.len() + 1);
        for (c, &i) in kept.iter().enumerate() {
            let dot: f64 = (0..c).map(|t| row[t] * factor[c][t]).sum();
            row.push((a[(j, i)] - dot) / factor[c][c]);
        }
        let pivot = a[(j, j)] - row.iter().map(|v| v * v).sum::<f64>();
        if a[(j, j)] > 0.0 && pivot > PIVOT_TOL * a[(j, j)] {
            row.push(pivot.sqrt());
            factor.push(row);
            kept.push(j);
        }
    }
    let m = kept.len();
    let mut z = vec![0.0; m];
    for r in 0..m {
        let dot: f64 = (0..r).map(|t| factor[r][t] * z[t]).sum();
        z[r] = (b[kept[r]] - dot) / factor[r][r];
    }
    let mut sol = vec![0.0; m];
    for r in (0..m).rev() {
        let dot: f64 = (r + 1..m).map(|t| factor[t][r] * sol[t]).sum();
        sol[r] = (z[r] - dot) / factor[r][r];
    }
    let mut theta = DVector::from_element(k, f64::NAN);
    for (r, &j) in kept.iter().enumerate() {
        theta[j] = sol[r];
    }
    theta
}

/// SKU-bootstrap distributions of every OLS slope, refitting from per-SKU
/// cross-products. `points` are the full-sample slopes. A column a resample
/// cannot identify (a dummy whose SKUs were not drawn) contributes no draw
/// for that column; a column with fewer than two draws gets se 0.
pub fn bootstrap_ols_coefficients(
    x: &DMatrix<f64>,
    y: &[f64],
    panel: &SkuPanel,
    points: &[f64],
    replications: usize,
    seed: u64,
) -> Result<Vec<BootstrapResult>> {
    check_replications(replications)?;
    if points.len() != x.ncols() || panel.n_rows() != x.nrows() || y.len() != x.nrows() {
        return Err(Error::validation("coefficient bootstrap inputs do not line up"));
    }
    let xt = x.clone().insert_column(0, 1.0);
    let grams: Vec<(DMatrix<f64>, DVector<f64>)> = panel
        .groups
        .par_iter()
        .map(|rows| {
            let xg = xt.select_rows(rows.iter());
            let yg = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
            (xg.tr_mul(&xg), xg.tr_mul(&yg))
        })
        .collect();
    let k = xt.ncols();
    let root = derive_seed(seed, streams::BOOTSTRAP);
    let draws: Vec<DVector<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let m = panel.draw(&mut task_rng(root, r as u64));
            let mut a = DMatrix::zeros(k, k);
            let mut b = DVector::zeros(k);
            for ((g, v), &c) in grams.iter().zip(&m) {
                if c > 0 {
                    a += g * f64::from(c);
                    b += v * f64::from(c);
                }
            }
            solve_identified(&a, &b)
        })
        .collect();
    Ok(points
        .iter()
        .enumerate()
        .map(|(j, &point)| {
            let column = draws.iter().map(|t| t[j + 1]).filter(|v| v.is_finite()).collect();
            BootstrapResult::from_draws(point, column)
        })
        .collect())
}
