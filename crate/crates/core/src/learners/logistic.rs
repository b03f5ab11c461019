//! Logistic regression: plain IRLS, and an L1 or L2 penalized path solved
//! by proximal Newton steps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{argmin_smallest, assign_folds, CvPoint, PenaltyGrid};
use super::linear::LinearModel;
use crate::error::{Error, Result};

pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;
const PATH_TOL: f64 = 1e-7;
const PATH_MAX_ITER: usize = 500;
/// Stop once a step lowers the objective by less than this fraction.
const PATH_REL_DECREASE: f64 = 1e-10;
const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `lambda * |beta|_1`
    L1,
    /// `lambda / 2 * |beta|^2`
    L2,
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Mean binomial deviance of probabilities against 0/1 labels.
pub fn mean_deviance(prob: &[f64], d: &[f64]) -> f64 {
    let total: f64 = prob
        .iter()
        .zip(d)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -2.0 * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / prob.len() as f64
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// `X' diag(w) X` without forming the diagonal.
fn weighted_gram(xt: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = xt.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[i].sqrt();
    }
    scaled.tr_mul(&scaled)
}

fn split(theta: &DVector<f64>) -> LinearModel {
    LinearModel {
        intercept: theta[0],
        coefficients: theta.iter().skip(1).copied().collect(),
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unpenalized maximum likelihood by iteratively reweighted least squares.
pub fn fit_logistic(x: &DMatrix<f64>, d: &[f64]) -> Result<LinearModel> {
    let xt = with_intercept(x);
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let mut theta = DVector::zeros(xt.ncols());
    theta[0] = logit(mean);
    let mut dev_old = f64::INFINITY;
    let mut change = f64::INFINITY;
    for _ in 0..IRLS_MAX_ITER {
        let eta = &xt * &theta;
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let dev = mean_deviance(&p, d) * n as f64;
        change = (dev - dev_old).abs() / (dev.abs() + 0.1);
        if change < IRLS_TOL {
            return Ok(split(&theta));
        }
        dev_old = dev;
        let w: Vec<f64> = p.iter().map(|&q| (q * (1.0 - q)).max(1e-10)).collect();
        let z = DVector::from_iterator(
            n,
            (0..n).map(|i| w[i] * eta[i] + (d[i] - p[i])),
        );
        let gram = weighted_gram(&xt, &w);
        let rhs = xt.tr_mul(&z);
        theta = match gram.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => {
                let top = gram.diagonal().amax();
                return Err(Error::RankDeficient {
                    rank: gram.rank(1e-10 * top),
                    columns: xt.ncols(),
                });
            }
        };
    }
    Err(Error::NonConvergence {
        solver: "logistic IRLS",
        iterations: IRLS_MAX_ITER,
        last_change: change,
    })
}

struct PathProblem<'a> {
    xt: &'a DMatrix<f64>,
    d: &'a [f64],
    penalty: Penalty,
    /// `X'X / (4n)`, a global upper bound on the Hessian.
    majorizer: DMatrix<f64>,
}

impl PathProblem<'_> {
    fn n(&self) -> f64 {
        self.d.len() as f64
    }

    fn loss(&self, eta: &DVector<f64>) -> f64 {
        eta.iter()
            .zip(self.d)
            .map(|(&e, &y)| softplus(e) - y * e)
            .sum::<f64>()
            / self.n()
    }

    fn penalty(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        let slopes = theta.rows(1, theta.len() - 1);
        match self.penalty {
            Penalty::L1 => lambda * slopes.iter().map(|b| b.abs()).sum::<f64>(),
            Penalty::L2 => 0.5 * lambda * slopes.norm_squared(),
        }
    }

    fn gradient(&self, eta: &DVector<f64>) -> DVector<f64> {
        let r = DVector::from_iterator(
            eta.len(),
            eta.iter().zip(self.d).map(|(&e, &y)| sigmoid(e) - y),
        );
        self.xt.tr_mul(&r) / self.n()
    }

    fn hessian(&self, eta: &DVector<f64>) -> DMatrix<f64> {
        let w: Vec<f64> = eta
            .iter()
            .map(|&e| {
                let p = sigmoid(e);
                p * (1.0 - p)
            })
            .collect();
        weighted_gram(self.xt, &w) / self.n()
    }

    /// Minimizer of `g'(u - theta) + (u - theta)'H(u - theta)/2 + penalty(u)`.
    fn model_step(
        &self,
        theta: &DVector<f64>,
        grad: &DVector<f64>,
        h: &DMatrix<f64>,
        lambda: f64,
    ) -> DVector<f64> {
        let m = theta.len();
        match self.penalty {
            Penalty::L2 => {
                let mut a = h.clone();
                let mut rhs = -grad.clone();
                for j in 1..m {
                    a[(j, j)] += lambda;
                    rhs[j] -= lambda * theta[j];
                }
                let delta = a
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .unwrap_or_else(|| {
                        for j in 0..m {
                            a[(j, j)] += 1e-10;
                        }
                        a.cholesky().map(|c| c.solve(&rhs)).unwrap_or(rhs)
                    });
                theta + delta
            }
            Penalty::L1 => {
                let mut u = theta.clone();
                // Gradient of the quadratic model at u.
                let mut q = grad.clone();
                for _ in 0..1000 {
                    let mut change = 0.0f64;
                    for j in 0..m {
                        let hjj = h[(j, j)];
                        if hjj <= 0.0 {
                            continue;
                        }
                        let z = hjj * u[j] - q[j];
                        let new = if j == 0 {
                            z / hjj
                        } else if z > lambda {
                            (z - lambda) / hjj
                        } else if z < -lambda {
                            (z + lambda) / hjj
                        } else {
                            0.0
                        };
                        let delta = new - u[j];
                        if delta != 0.0 {
                            u[j] = new;
                            q.axpy(delta, &h.column(j), 1.0);
                            change = change.max(delta.abs());
                        }
                    }
                    if change < 1e-10 {
                        break;
                    }
                }
                u
            }
        }
    }

    /// Solutions along a decreasing grid, warm started, reusing the Hessian
    /// until a step needs backtracking or progress stalls.
    fn path(&self, lambdas: &[f64]) -> Result<Vec<DVector<f64>>> {
        let m = self.xt.ncols();
        let mean = self.d.iter().sum::<f64>() / self.n();
        let mut theta = DVector::zeros(m);
        theta[0] = logit(mean);
        let mut eta = self.xt * &theta;
        let mut hess: Option<DMatrix<f64>> = None;
        let mut out = Vec::with_capacity(lambdas.len());

        for &lambda in lambdas {
            let mut iter = 0;
            let mut refresh_at = 5;
            loop {
                if iter >= PATH_MAX_ITER {
                    return Err(Error::NonConvergence {
                        solver: "penalized logistic",
                        iterations: iter,
                        last_change: f64::NAN,
                    });
                }
                iter += 1;
                if hess.is_none() || iter == refresh_at {
                    hess = Some(self.hessian(&eta));
                    refresh_at = iter + 5;
                }
                let h = hess.as_ref().expect("set above");
                let grad = self.gradient(&eta);
                let f0 = self.loss(&eta) + self.penalty(&theta, lambda);

                let target = self.model_step(&theta, &grad, h, lambda);
                let mut delta = &target - &theta;
                let decrease =
                    grad.dot(&delta) + self.penalty(&target, lambda) - self.penalty(&theta, lambda);
                if decrease > -1e-16 || delta.amax() < 1e-12 {
                    break;
                }
                let mut xdelta = self.xt * &delta;
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..30 {
                    let cand = &theta + &delta * t;
                    let cand_eta = &eta + &xdelta * t;
                    let f = self.loss(&cand_eta) + self.penalty(&cand, lambda);
                    if f <= f0 + 1e-4 * t * decrease {
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if t < 1.0 {
                    hess = None;
                }
                if !accepted {
                    // A majorization step always descends.
                    let target = self.model_step(&theta, &grad, &self.majorizer, lambda);
                    delta = &target - &theta;
                    xdelta = self.xt * &delta;
                    t = 1.0;
                }
                theta += &delta * t;
                eta += &xdelta * t;
                let f = self.loss(&eta) + self.penalty(&theta, lambda);
                if (&delta * t).amax() < PATH_TOL || f0 - f <= PATH_REL_DECREASE * f0.abs() {
                    break;
                }
            }
            out.push(theta.clone());
        }
        Ok(out)
    }
}

/// Largest useful penalty: all slopes vanish for L1 at `max_j |n^-1 x_j'(d - mean)|`;
/// the L2 path starts a thousand times higher.
pub fn logistic_lambda_max(x: &DMatrix<f64>, d: &[f64], penalty: Penalty) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let r = DVector::from_iterator(d.len(), d.iter().map(|v| v - mean));
    let l1 = x.tr_mul(&r).amax() / n;
    match penalty {
        Penalty::L1 => l1,
        Penalty::L2 => 1000.0 * l1,
    }
}

/// Penalized logistic solutions at each penalty of a decreasing grid.
pub fn logistic_path(
    x: &DMatrix<f64>,
    d: &[f64],
    penalty: Penalty,
    lambdas: &[f64],
) -> Result<Vec<LinearModel>> {
    super::cv::validate_lambdas(lambdas)?;
    let xt = with_intercept(x);
    let problem = PathProblem {
        majorizer: xt.tr_mul(&xt) / (4.0 * d.len() as f64),
        xt: &xt,
        d,
        penalty,
    };
    Ok(problem.path(lambdas)?.iter().map(split).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedLogistic {
    pub model: LinearModel,
    pub lambda: f64,
    pub profile: Vec<CvPoint>,
}

/// Penalized logistic regression tuned by mean held-out deviance.
pub fn fit_penalized_logistic(
    x: &DMatrix<f64>,
    d: &[f64],
    penalty: Penalty,
    grid: &PenaltyGrid,
    seed: u64,
) -> Result<TunedLogistic> {
    grid.validate()?;
    let lambdas = grid.resolve(logistic_lambda_max(x, d, penalty));
    let fold = assign_folds(d.len(), grid.folds, seed)?;
    let fold_dev: Vec<Vec<f64>> = (0..grid.folds)
        .into_par_iter()
        .map(|f| {
            let tr: Vec<usize> = (0..d.len()).filter(|&i| fold[i] != f).collect();
            let te: Vec<usize> = (0..d.len()).filter(|&i| fold[i] == f).collect();
            let dtr: Vec<f64> = tr.iter().map(|&i| d[i]).collect();
            let dte: Vec<f64> = te.iter().map(|&i| d[i]).collect();
            let xte = x.select_rows(&te);
            let path = logistic_path(&x.select_rows(&tr), &dtr, penalty, &lambdas)?;
            Ok(path
                .iter()
                .map(|m| {
                    let p: Vec<f64> = m.predict(&xte).into_iter().map(sigmoid).collect();
                    mean_deviance(&p, &dte)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let profile: Vec<CvPoint> = lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| CvPoint {
            value: l,
            score: fold_dev.iter().map(|f| f[i]).sum::<f64>() / grid.folds as f64,
        })
        .collect();
    let pick = argmin_smallest(&profile);
    let model = logistic_path(x, d, penalty, &lambdas[..=pick])?
        .pop()
        .expect("nonempty path");
    Ok(TunedLogistic {
        model,
        lambda: lambdas[pick],
        profile,
    })
}
