//! Lasso by cyclic coordinate descent on the Gram matrix, with warm starts
//! along a decreasing penalty path.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::cv::{argmin_smallest, assign_folds, FoldMoments, PenaltyGrid};
use super::linear::{cv_profile, LinearModel, TunedLinear};
use crate::error::{Error, Result};

pub const COORD_TOL: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 10_000;

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimizes `0.5 b'Cb - c'b + lambda |b|_1` for each penalty in turn,
/// starting each from the previous solution.
///
/// `gram` and `cross` are the centered `X'X / n` and `X'y / n`.
pub(crate) fn cd_path(
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    lambdas: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let p = cross.len();
    let mut beta = DVector::zeros(p);
    // grad = cross - gram * beta, i.e. n^-1 X'r.
    let mut grad = cross.clone();
    let mut out = Vec::with_capacity(lambdas.len());

    let update = |j: usize, lambda: f64, beta: &mut DVector<f64>, grad: &mut DVector<f64>| {
        let cjj = gram[(j, j)];
        if cjj <= 0.0 {
            return 0.0;
        }
        let old = beta[j];
        let new = soft_threshold(grad[j] + cjj * old, lambda) / cjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            grad.axpy(-delta, &gram.column(j), 1.0);
        }
        delta.abs()
    };

    for &lambda in lambdas {
        let mut sweeps = 0;
        loop {
            let mut full = 0.0f64;
            for j in 0..p {
                full = full.max(update(j, lambda, &mut beta, &mut grad));
            }
            sweeps += 1;
            if full < COORD_TOL {
                break;
            }
            // Iterate on the active set until it settles, then re-check all.
            let mut inner = 0;
            loop {
                let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
                let mut change = 0.0f64;
                for &j in &active {
                    change = change.max(update(j, lambda, &mut beta, &mut grad));
                }
                sweeps += 1;
                inner += 1;
                if change < COORD_TOL {
                    break;
                }
                if inner % FACE_SOLVE_EVERY == 0 && face_solve(gram, cross, lambda, &mut beta, &mut grad) {
                    continue;
                }
                if sweeps >= MAX_SWEEPS {
                    return Err(Error::NonConvergence {
                        solver: "lasso coordinate descent",
                        iterations: sweeps,
                        last_change: change,
                    });
                }
            }
        }
        out.push(beta.clone());
    }
    Ok(out)
}

/// Active-set sweeps between attempts at an exact solve on the current face.
const FACE_SOLVE_EVERY: usize = 20;

fn objective(gram: &DMatrix<f64>, cross: &DVector<f64>, lambda: f64, beta: &DVector<f64>) -> f64 {
    0.5 * beta.dot(&(gram * beta)) - cross.dot(beta) + lambda * beta.lp_norm(1)
}

/// Cholesky of `a`, adding a growing diagonal jitter when `a` is singular
/// to working precision.
fn jittered_cholesky(mut a: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut added = 0.0;
    for power in [0, 12, 10, 8] {
        let jitter = if power == 0 { 0.0 } else { scale * 10f64.powi(-power) };
        for i in 0..a.nrows() {
            a[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(c) = a.clone().cholesky() {
            return Some(c);
        }
    }
    None
}

/// With the active set and signs held fixed the objective is a quadratic.
/// Move toward its minimizer, stopping where a coefficient first reaches
/// zero and dropping it, until the minimizer keeps every sign. The move is
/// kept only if the objective does not increase. Returns whether `beta`
/// changed.
fn face_solve(
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    lambda: f64,
    beta: &mut DVector<f64>,
    grad: &mut DVector<f64>,
) -> bool {
    let start = beta.clone();
    let mut active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    let mut moved = false;
    while !active.is_empty() {
        let Some(chol) = jittered_cholesky(gram.select_rows(&active).select_columns(&active)) else {
            break;
        };
        let rhs = DVector::from_iterator(
            active.len(),
            active.iter().map(|&j| cross[j] - lambda * beta[j].signum()),
        );
        let sol = chol.solve(&rhs);
        if sol.iter().any(|b| !b.is_finite()) {
            break;
        }
        // Largest step in [0, 1] that keeps every sign.
        let mut step = 1.0;
        let mut hit = None;
        for (i, &j) in active.iter().enumerate() {
            if sol[i] == 0.0 || sol[i].signum() != beta[j].signum() {
                let t = beta[j] / (beta[j] - sol[i]);
                if t < step {
                    step = t;
                    hit = Some(i);
                }
            }
        }
        for (i, &j) in active.iter().enumerate() {
            beta[j] += step * (sol[i] - beta[j]);
        }
        moved = true;
        match hit {
            Some(i) => {
                beta[active[i]] = 0.0;
                active.remove(i);
            }
            None => break,
        }
    }
    if moved && objective(gram, cross, lambda, beta) > objective(gram, cross, lambda, &start) {
        *beta = start;
        return false;
    }
    if moved {
        *grad = cross - gram * &*beta;
    }
    moved
}

struct Centered {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    mx: DVector<f64>,
    my: f64,
}

fn center(x: &DMatrix<f64>, y: &[f64]) -> Centered {
    let n = x.nrows() as f64;
    let mx = x.row_sum().transpose() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mx[j]);
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - my));
    Centered {
        gram: xc.tr_mul(&xc) / n,
        cross: xc.tr_mul(&yc) / n,
        mx,
        my,
    }
}

/// Smallest penalty at which every slope is zero: `max_j |n^-1 x_j' y|` on
/// centered data.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    center(x, y).cross.amax()
}

/// Solutions at each penalty of a decreasing grid.
pub fn lasso_path(x: &DMatrix<f64>, y: &[f64], lambdas: &[f64]) -> Result<Vec<LinearModel>> {
    if x.nrows() != y.len() || x.nrows() == 0 {
        return Err(Error::validation("lasso needs matching, nonempty x and y"));
    }
    super::cv::validate_lambdas(lambdas)?;
    let c = center(x, y);
    Ok(cd_path(&c.gram, &c.cross, lambdas)?
        .into_iter()
        .map(|b| LinearModel {
            intercept: c.my - c.mx.dot(&b),
            coefficients: b.iter().copied().collect(),
        })
        .collect())
}

/// Lasso with the penalty chosen by k-fold RMSE. Fold fits reuse the
/// full-data grid and work from fold sufficient statistics.
pub fn fit_lasso(x: &DMatrix<f64>, y: &[f64], grid: &PenaltyGrid, seed: u64) -> Result<TunedLinear> {
    if x.nrows() != y.len() || x.nrows() == 0 {
        return Err(Error::validation("lasso needs matching, nonempty x and y"));
    }
    grid.validate()?;
    let full = center(x, y);
    let lambdas = grid.resolve(full.cross.amax());
    let fold = assign_folds(x.nrows(), grid.folds, seed)?;
    let moments = FoldMoments::new(x, y, &fold, grid.folds);

    let fold_sse: Vec<Vec<f64>> = (0..grid.folds)
        .into_par_iter()
        .map(|f| {
            let train = moments.training(f);
            let (gram, cross) = train.centered();
            let (mx, my) = train.means();
            let path = cd_path(&gram, &cross, &lambdas)?;
            Ok(path
                .iter()
                .map(|b| moments.folds[f].sse(my - mx.dot(b), b))
                .collect())
        })
        .collect::<Result<_>>()?;

    let profile = cv_profile(&lambdas, &fold_sse, &moments);
    let pick = argmin_smallest(&profile);
    let beta = cd_path(&full.gram, &full.cross, &lambdas[..=pick])?
        .pop()
        .expect("nonempty path");
    Ok(TunedLinear {
        model: LinearModel {
            intercept: full.my - full.mx.dot(&beta),
            coefficients: beta.iter().copied().collect(),
        },
        lambda: lambdas[pick],
        profile,
    })
}
