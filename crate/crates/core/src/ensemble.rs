//! Stacking with weights on the probability simplex.
//!
//! Weights minimize `|y - P w|^2` subject to `w >= 0` and `sum(w) = 1`,
//! where `P` holds the members' validation predictions column-wise.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::censored::CensoredModel;
use crate::error::{Error, Result};
use crate::learners::Predictor;

const MAX_ITER: usize = 100_000;
const STALL_TOL: f64 = 1e-12;
const STALL_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingWeights {
    pub weights: Vec<f64>,
    /// Set when every column of `P` was identical and weights are uniform.
    pub degenerate: bool,
    pub iterations: usize,
    /// Mean squared error `|y - P w|^2 / n` at the returned weights.
    pub objective: f64,
}

/// Euclidean projection onto `{w : w >= 0, sum(w) = 1}` by the sort-based
/// threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

struct Quadratic {
    /// `P'P / n`
    gram: DMatrix<f64>,
    /// `P'y / n`
    cross: DVector<f64>,
    yy: f64,
}

impl Quadratic {
    fn new(p: &DMatrix<f64>, y: &[f64]) -> Self {
        let n = y.len() as f64;
        let yv = DVector::from_column_slice(y);
        Quadratic {
            gram: p.tr_mul(p) / n,
            cross: p.tr_mul(&yv) / n,
            yy: yv.norm_squared() / n,
        }
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        (w.dot(&(&self.gram * w)) - 2.0 * self.cross.dot(w) + self.yy).max(0.0)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.gram * w - &self.cross) * 2.0
    }

    /// Largest eigenvalue of the gradient's Lipschitz matrix `2 P'P / n`.
    fn lipschitz(&self) -> f64 {
        let k = self.cross.len();
        let mut v = DVector::from_element(k, 1.0 / (k as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..10_000 {
            let next = &self.gram * &v;
            let norm = next.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = next / norm;
            let converged = (norm - est).abs() <= 1e-12 * norm;
            est = norm;
            if converged {
                break;
            }
        }
        // A slight overestimate keeps the step safely below 1/L.
        2.0 * est * (1.0 + 1e-6)
    }

    /// Exact minimizer on the face `{w_j = 0, j not in support}`, if it is
    /// feasible.
    fn solve_on_support(&self, support: &[usize]) -> Option<DVector<f64>> {
        let s = support.len();
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * self.gram[(i, j)];
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = 2.0 * self.cross[i];
        }
        rhs[s] = 1.0;
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().take(s).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return None;
        }
        let mut w = DVector::zeros(self.cross.len());
        for (a, &i) in support.iter().enumerate() {
            w[i] = sol[a];
        }
        Some(w)
    }
}

/// Largest violation of the simplex optimality conditions: every weighted
/// member's gradient component must equal the smallest component.
pub fn simplex_kkt_gap(p: &DMatrix<f64>, y: &[f64], w: &[f64]) -> f64 {
    let q = Quadratic::new(p, y);
    let g = q.gradient(&DVector::from_column_slice(w));
    let gmin = g.min();
    w.iter()
        .zip(g.iter())
        .filter(|(&wj, _)| wj > 0.0)
        .map(|(_, &gj)| gj - gmin)
        .fold(0.0, f64::max)
}

/// Projected gradient with step `1/L`, finished by an exact solve on the
/// detected support.
pub fn fit_weights(p: &DMatrix<f64>, y: &[f64]) -> Result<StackingWeights> {
    let (n, k) = p.shape();
    if k == 0 {
        return Err(Error::validation("stacking needs at least one member"));
    }
    if n != y.len() {
        return Err(Error::validation("prediction matrix and response differ in length"));
    }
    if n <= k {
        return Err(Error::validation(format!(
            "stacking needs more rows than members ({n} <= {k})"
        )));
    }
    let q = Quadratic::new(p, y);
    if k == 1 {
        let w = DVector::from_element(1, 1.0);
        return Ok(StackingWeights {
            objective: q.value(&w),
            weights: vec![1.0],
            degenerate: false,
            iterations: 0,
        });
    }
    let scale = p.amax().max(1.0);
    let identical = (1..k).all(|j| (p.column(j) - p.column(0)).amax() <= 1e-12 * scale);
    if identical {
        warn!("all stacking members predict identically; using uniform weights");
        let w = DVector::from_element(k, 1.0 / k as f64);
        return Ok(StackingWeights {
            objective: q.value(&w),
            weights: w.iter().copied().collect(),
            degenerate: true,
            iterations: 0,
        });
    }

    let lip = q.lipschitz();
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut w = DVector::from_element(k, 1.0 / k as f64);
    let mut f = q.value(&w);
    let mut stalled = 0;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let g = q.gradient(&w);
        let next = DVector::from_vec(project_simplex((&w - g * step).as_slice()));
        let f_next = q.value(&next);
        stalled = if f - f_next < STALL_TOL { stalled + 1 } else { 0 };
        w = next;
        f = f_next;
        if stalled >= STALL_STEPS {
            break;
        }
    }

    let support: Vec<usize> = (0..k).filter(|&j| w[j] > 1e-9).collect();
    if let Some(exact) = q.solve_on_support(&support) {
        if q.value(&exact) <= f {
            w = exact;
            f = q.value(&w);
        }
    }
    let total: f64 = w.iter().map(|v| v.max(0.0)).sum();
    let weights: Vec<f64> = w.iter().map(|v| v.max(0.0) / total).collect();
    Ok(StackingWeights {
        objective: f,
        weights,
        degenerate: false,
        iterations,
    })
}

/// Weighted sum of member predictions, accumulated in member order.
pub fn blend(weights: &[f64], predictions: &[Vec<f64>]) -> Vec<f64> {
    let n = predictions.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (w, pred) in weights.iter().zip(predictions) {
        for (o, v) in out.iter_mut().zip(pred) {
            *o += w * v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<CensoredModel>,
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

impl EnsembleModel {
    /// Stacks `members` on validation rows `(x, y)`.
    pub fn fit(members: Vec<CensoredModel>, x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let preds = members
            .iter()
            .map(|m| m.predict(x))
            .collect::<Result<Vec<_>>>()?;
        let p = DMatrix::from_fn(y.len(), members.len(), |i, j| preds[j][i]);
        let fit = fit_weights(&p, y)?;
        Ok(EnsembleModel {
            members,
            weights: fit.weights,
            degenerate: fit.degenerate,
        })
    }
}

impl Predictor for EnsembleModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let preds = self
            .members
            .iter()
            .map(|m| m.predict(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(blend(&self.weights, &preds))
    }

    fn predict_shifted(&self, x: &DMatrix<f64>, column: usize, deltas: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), deltas.len());
        for (w, m) in self.weights.iter().zip(&self.members) {
            out += m.predict_shifted(x, column, deltas)? * *w;
        }
        Ok(out)
    }
}
