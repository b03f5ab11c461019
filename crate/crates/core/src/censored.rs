//! Two-stage censored estimator.
//!
//! A classifier estimates `P(zero sales | x)`. Training rows whose
//! probability exceeds a threshold `alpha` are treated as censored and left
//! out of the regressor's training set; at prediction time the same rule
//! sends a row to zero. `alpha` is chosen on validation RMSE.

use std::path::Path;

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::design::independent_columns;
use crate::datamodel::DesignMatrix;
use crate::error::{Error, Result};
use crate::evaluation::rmse;
use crate::learners::forest::select_mtry;
use crate::learners::{
    self, CvPoint, Family, FittedLearner, LearnerSpec, Mtry, Params, Predictor, Task,
};
use crate::rng::{derive_seed, streams};

/// RMSE values closer than this count as tied when choosing alpha.
const ALPHA_TIE_TOL: f64 = 1e-12;

/// `{0.05, 0.10, ..., 0.95, 1.0}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=20).map(|i| f64::from(i) / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    /// Validation RMSE, absent when the threshold was skipped.
    pub rmse: Option<f64>,
    pub training_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredModel {
    pub family: Family,
    pub classifier: FittedLearner,
    pub regressor: FittedLearner,
    pub alpha: f64,
    pub alpha_profile: Vec<AlphaPoint>,
}

/// Row flagged censored iff its probability is strictly above `alpha`.
pub fn flag_censored(prob: &[f64], alpha: f64) -> Vec<bool> {
    prob.iter().map(|&p| p > alpha).collect()
}

pub fn classify_rows(classifier: &FittedLearner, x: &DMatrix<f64>, alpha: f64) -> Result<Vec<bool>> {
    Ok(flag_censored(&classifier.predict(x)?, alpha))
}

/// Zero when the row is classified censored or the regression is negative.
pub fn combine(prob: f64, regression: f64, alpha: f64) -> f64 {
    if prob > alpha || regression < 0.0 {
        0.0
    } else {
        regression
    }
}

fn regressor_spec(spec: &LearnerSpec) -> LearnerSpec {
    LearnerSpec {
        seed: derive_seed(spec.seed, streams::REGRESSOR),
        ..spec.clone()
    }
}

/// Regressor spec with a cross-validated forest `mtry` resolved once on all
/// training rows, so every alpha refit shares it.
fn tuned_regressor_spec(spec: &LearnerSpec, train: &DesignMatrix) -> Result<(LearnerSpec, Vec<CvPoint>)> {
    let mut reg = regressor_spec(spec);
    if reg.family != Family::RandomForest || matches!(reg.forest.mtry, Mtry::Fixed(_)) {
        return Ok((reg, vec![]));
    }
    reg.forest.validate(train.ncols())?;
    let (m, profile) = select_mtry(&train.x, &train.y, &reg.forest, false, reg.seed)?;
    reg.forest.mtry = Mtry::Fixed(m);
    Ok((reg, profile))
}

/// Refits on the columns that are linearly independent on these rows, the
/// design rebuild a rank-deficient linear fit asks for. Dropped columns get
/// zero coefficients so the model keeps the full column layout.
fn fit_on_independent(spec: &LearnerSpec, sub: &DesignMatrix) -> Result<FittedLearner> {
    let keep = independent_columns(&sub.x);
    let names: Vec<String> = keep.iter().map(|&j| sub.column_names[j].clone()).collect();
    debug!(
        "{}: refitting on {} of {} columns",
        spec.family,
        keep.len(),
        sub.ncols()
    );
    let mut model = FittedLearner::fit_regressor(spec, &sub.x.select_columns(&keep), &sub.y, &names)?;
    let Params::Linear(linear) = &mut model.params else {
        return Err(Error::RankDeficient {
            rank: keep.len(),
            columns: sub.ncols(),
        });
    };
    let mut full = vec![0.0; sub.ncols()];
    for (c, &j) in keep.iter().enumerate() {
        full[j] = linear.coefficients[c];
    }
    linear.coefficients = full;
    model.columns = sub.column_names.clone();
    Ok(model)
}

fn with_profile(mut model: FittedLearner, profile: &[CvPoint]) -> FittedLearner {
    if !profile.is_empty() {
        model.cv_profile = profile.to_vec();
    }
    model
}

fn classifier_spec(spec: &LearnerSpec) -> LearnerSpec {
    LearnerSpec {
        seed: derive_seed(spec.seed, streams::CLASSIFIER),
        ..spec.clone()
    }
}

fn validate_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::validation("alpha grid is empty"));
    }
    if grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::validation("alpha grid values must lie in [0, 1]"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    Ok(sorted)
}

/// Fits the classifier once, then for every alpha refits the regressor on
/// the rows not flagged censored and scores the combined rule on
/// validation rows.
pub fn fit_censored(
    train: &DesignMatrix,
    validation: &DesignMatrix,
    spec: &LearnerSpec,
    alpha_grid: &[f64],
) -> Result<CensoredModel> {
    if train.column_names != validation.column_names {
        return Err(Error::ColumnMismatch(
            "training and validation designs differ".into(),
        ));
    }
    let grid = validate_grid(alpha_grid)?;
    let columns = &train.column_names;
    let classifier =
        FittedLearner::fit_classifier(&classifier_spec(spec), &train.x, &train.d, columns)?;
    let prob_train = classifier.predict(&train.x)?;
    let prob_val = classifier.predict(&validation.x)?;
    let (reg_spec, mtry_profile) = tuned_regressor_spec(spec, train)?;
    let min_rows = 2 * train.ncols();

    let mut profile = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, FittedLearner)> = None;
    let mut previous: Option<(Vec<usize>, FittedLearner)> = None;
    for &alpha in &grid {
        let keep: Vec<usize> = (0..train.nrows()).filter(|&i| prob_train[i] <= alpha).collect();
        let mut point = AlphaPoint {
            alpha,
            rmse: None,
            training_rows: keep.len(),
        };
        if keep.len() < min_rows {
            warn!(
                "{}: alpha {alpha:.2} leaves {} training rows (< {min_rows}); skipped",
                spec.family,
                keep.len()
            );
            profile.push(point);
            continue;
        }
        // The same rows give the same fit; thresholds inside a probability gap reuse it.
        let regressor = match previous.take() {
            Some((rows, model)) if rows == keep => model,
            _ => {
                let sub = train.subset(&keep);
                let fit = match FittedLearner::fit_regressor(&reg_spec, &sub.x, &sub.y, columns) {
                    Err(Error::RankDeficient { .. }) => fit_on_independent(&reg_spec, &sub),
                    other => other,
                };
                match fit {
                    Ok(m) => m,
                    Err(e @ Error::RankDeficient { .. }) => {
                        warn!("{}: alpha {alpha:.2} skipped: {e}", spec.family);
                        profile.push(point);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let reg_val = regressor.predict(&validation.x)?;
        let pred: Vec<f64> = prob_val
            .iter()
            .zip(&reg_val)
            .map(|(&p, &r)| combine(p, r, alpha))
            .collect();
        let score = rmse(&pred, &validation.y)?;
        debug!("{}: alpha {alpha:.2} validation rmse {score:.5}", spec.family);
        point.rmse = Some(score);
        profile.push(point);
        if best.as_ref().is_none_or(|(s, _, _)| score < s - ALPHA_TIE_TOL) {
            best = Some((score, alpha, regressor.clone()));
        }
        previous = Some((keep, regressor));
    }
    let (_, alpha, regressor) = best.ok_or_else(|| {
        Error::validation(format!(
            "{}: every alpha left too few uncensored training rows",
            spec.family
        ))
    })?;
    Ok(CensoredModel {
        family: spec.family,
        classifier,
        regressor: with_profile(regressor, &mtry_profile),
        alpha,
        alpha_profile: profile,
    })
}

/// Baseline treating every row as uncensored: a constant-zero classifier
/// with `alpha = 0`, so the rule reduces to `max(0, regression)`.
pub fn fit_uncensored(train: &DesignMatrix, spec: &LearnerSpec) -> Result<CensoredModel> {
    let columns = &train.column_names;
    let (reg_spec, mtry_profile) = tuned_regressor_spec(spec, train)?;
    let regressor = with_profile(
        FittedLearner::fit_regressor(&reg_spec, &train.x, &train.y, columns)?,
        &mtry_profile,
    );
    Ok(CensoredModel {
        family: spec.family,
        classifier: FittedLearner::constant(spec.family, Task::Classification, columns, 0.0),
        regressor,
        alpha: 0.0,
        alpha_profile: vec![],
    })
}

impl CensoredModel {
    pub fn is_uncensored(&self) -> bool {
        matches!(self.classifier.params, learners::Params::Constant { .. })
    }

    pub fn predict_design(&self, dm: &DesignMatrix) -> Result<Vec<f64>> {
        self.regressor.check_columns(&dm.column_names)?;
        self.predict(&dm.x)
    }

    /// Validation RMSE at the chosen alpha.
    pub fn selected_rmse(&self) -> Option<f64> {
        self.alpha_profile
            .iter()
            .find(|p| p.alpha == self.alpha)
            .and_then(|p| p.rmse)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        learners::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        learners::read_json(path)
    }
}

impl Predictor for CensoredModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let prob = self.classifier.predict(x)?;
        let reg = self.regressor.predict(x)?;
        Ok(prob
            .iter()
            .zip(&reg)
            .map(|(&p, &r)| combine(p, r, self.alpha))
            .collect())
    }

    fn predict_shifted(&self, x: &DMatrix<f64>, column: usize, deltas: &[f64]) -> Result<DMatrix<f64>> {
        let prob = self.classifier.predict_shifted(x, column, deltas)?;
        let mut reg = self.regressor.predict_shifted(x, column, deltas)?;
        for (r, &p) in reg.iter_mut().zip(prob.iter()) {
            *r = combine(p, *r, self.alpha);
        }
        Ok(reg)
    }
}
