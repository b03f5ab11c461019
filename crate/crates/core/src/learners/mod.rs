//! The four learner families, each usable as a regressor or as a
//! probability classifier for the zero-sales indicator.

pub mod cv;
pub mod forest;
pub mod lasso;
pub mod linear;
pub mod logistic;

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use cv::{CvPoint, PenaltyGrid};
pub use forest::{Forest, ForestParams, Mtry, MtryRule};
pub use linear::LinearModel;
use logistic::{sigmoid, Penalty};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ols,
    Ridge,
    Lasso,
    RandomForest,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Ols, Family::Ridge, Family::Lasso, Family::RandomForest];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::Lasso => "lasso",
            Family::RandomForest => "random_forest",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::Ols => "Linear regression",
            Family::Ridge => "Ridge",
            Family::Lasso => "Lasso",
            Family::RandomForest => "Random Forest",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    #[serde(default)]
    pub penalty: PenaltyGrid,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        LearnerSpec {
            family,
            penalty: PenaltyGrid::default(),
            forest: ForestParams::default(),
            seed,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self.family {
            Family::Ols => Ok(()),
            Family::Ridge | Family::Lasso => self.penalty.validate(),
            Family::RandomForest => self.forest.validate(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Params {
    /// Prediction `b0 + x'b`.
    Linear(LinearModel),
    /// Prediction `sigmoid(b0 + x'b)`.
    Logistic(LinearModel),
    Forest(Forest),
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    pub family: Family,
    pub task: Task,
    pub columns: Vec<String>,
    pub params: Params,
    pub lambda: Option<f64>,
    pub mtry: Option<usize>,
    /// Cross-validation profile over lambda or mtry.
    pub cv_profile: Vec<CvPoint>,
    pub oob_rmse: Option<f64>,
    pub n_train: usize,
    pub seed: u64,
    pub version: String,
}

fn check_rows(x: &DMatrix<f64>, n: usize, columns: &[String]) -> Result<()> {
    if x.nrows() != n {
        return Err(Error::validation(format!(
            "design has {} rows but target has {n}",
            x.nrows()
        )));
    }
    if x.ncols() != columns.len() {
        return Err(Error::ColumnMismatch(format!(
            "{} names for {} columns",
            columns.len(),
            x.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::validation("cannot fit on zero rows"));
    }
    Ok(())
}

impl FittedLearner {
    fn base(spec: &LearnerSpec, task: Task, columns: &[String], params: Params, n: usize) -> Self {
        FittedLearner {
            family: spec.family,
            task,
            columns: columns.to_vec(),
            params,
            lambda: None,
            mtry: None,
            cv_profile: vec![],
            oob_rmse: None,
            n_train: n,
            seed: spec.seed,
            version: VERSION.to_string(),
        }
    }

    /// A model predicting `value` everywhere.
    pub fn constant(family: Family, task: Task, columns: &[String], value: f64) -> Self {
        FittedLearner::base(
            &LearnerSpec::new(family, 0),
            task,
            columns,
            Params::Constant { value },
            0,
        )
    }

    pub fn fit_regressor(
        spec: &LearnerSpec,
        x: &DMatrix<f64>,
        y: &[f64],
        columns: &[String],
    ) -> Result<Self> {
        check_rows(x, y.len(), columns)?;
        spec.validate(x.ncols())?;
        let n = y.len();
        let task = Task::Regression;
        Ok(match spec.family {
            Family::Ols => {
                let m = linear::fit_ols(x, y)?;
                FittedLearner::base(spec, task, columns, Params::Linear(m), n)
            }
            Family::Ridge | Family::Lasso => {
                let fit = if spec.family == Family::Ridge {
                    linear::fit_ridge(x, y, &spec.penalty, spec.seed)?
                } else {
                    lasso::fit_lasso(x, y, &spec.penalty, spec.seed)?
                };
                let mut out = FittedLearner::base(spec, task, columns, Params::Linear(fit.model), n);
                out.lambda = Some(fit.lambda);
                out.cv_profile = fit.profile;
                out
            }
            Family::RandomForest => forest_learner(spec, task, x, y, columns, false)?,
        })
    }

    /// Probability model for a binary target; both classes must be present.
    pub fn fit_classifier(
        spec: &LearnerSpec,
        x: &DMatrix<f64>,
        d: &[bool],
        columns: &[String],
    ) -> Result<Self> {
        check_rows(x, d.len(), columns)?;
        spec.validate(x.ncols())?;
        if d.iter().all(|&v| v) || d.iter().all(|&v| !v) {
            return Err(Error::validation(
                "classifier training rows contain a single class",
            ));
        }
        let y: Vec<f64> = d.iter().map(|&v| f64::from(u8::from(v))).collect();
        let n = y.len();
        let task = Task::Classification;
        Ok(match spec.family {
            Family::Ols => {
                let m = logistic::fit_logistic(x, &y)?;
                FittedLearner::base(spec, task, columns, Params::Logistic(m), n)
            }
            Family::Ridge | Family::Lasso => {
                let penalty = if spec.family == Family::Ridge {
                    Penalty::L2
                } else {
                    Penalty::L1
                };
                let fit =
                    logistic::fit_penalized_logistic(x, &y, penalty, &spec.penalty, spec.seed)?;
                let mut out =
                    FittedLearner::base(spec, task, columns, Params::Logistic(fit.model), n);
                out.lambda = Some(fit.lambda);
                out.cv_profile = fit.profile;
                out
            }
            Family::RandomForest => forest_learner(spec, task, x, &y, columns, true)?,
        })
    }

    fn check_width(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.columns.len() {
            return Err(Error::ColumnMismatch(format!(
                "model expects {} columns, input has {}",
                self.columns.len(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Fails unless `names` is exactly the training column layout.
    pub fn check_columns(&self, names: &[String]) -> Result<()> {
        if names != self.columns.as_slice() {
            let first = names
                .iter()
                .zip(&self.columns)
                .position(|(a, b)| a != b)
                .unwrap_or(names.len().min(self.columns.len()));
            return Err(Error::ColumnMismatch(format!(
                "input has {} columns, model has {}; first difference at position {first}",
                names.len(),
                self.columns.len()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(match &self.params {
            Params::Linear(m) => m.predict(x),
            Params::Logistic(m) => m.predict(x).into_iter().map(sigmoid).collect(),
            Params::Forest(f) => f.predict(x),
            Params::Constant { value } => vec![*value; x.nrows()],
        })
    }

    /// Predictions with `deltas[j]` added to `column`, as a rows x shifts
    /// matrix.
    pub fn predict_shifted(
        &self,
        x: &DMatrix<f64>,
        column: usize,
        deltas: &[f64],
    ) -> Result<DMatrix<f64>> {
        self.check_width(x)?;
        if column >= x.ncols() {
            return Err(Error::ColumnMismatch(format!(
                "column index {column} out of range for {} columns",
                x.ncols()
            )));
        }
        let (n, m) = (x.nrows(), deltas.len());
        Ok(match &self.params {
            Params::Linear(lm) => {
                let base = lm.predict(x);
                let b = lm.coefficients[column];
                DMatrix::from_fn(n, m, |i, j| base[i] + b * deltas[j])
            }
            Params::Logistic(lm) => {
                let eta = lm.predict(x);
                let b = lm.coefficients[column];
                DMatrix::from_fn(n, m, |i, j| sigmoid(eta[i] + b * deltas[j]))
            }
            Params::Forest(f) => f.predict_shifted(x, column, deltas),
            Params::Constant { value } => DMatrix::from_element(n, m, *value),
        })
    }

    /// Coefficient of a named column for linear and logistic models.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let j = self.columns.iter().position(|c| c == name)?;
        match &self.params {
            Params::Linear(m) | Params::Logistic(m) => Some(m.coefficients[j]),
            _ => None,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Anything that maps design rows to predictions, including with one
/// column shifted.
pub trait Predictor {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;

    /// Rows x shifts matrix of predictions with `deltas[j]` added to `column`.
    fn predict_shifted(&self, x: &DMatrix<f64>, column: usize, deltas: &[f64])
        -> Result<DMatrix<f64>>;
}

impl Predictor for FittedLearner {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        FittedLearner::predict(self, x)
    }

    fn predict_shifted(
        &self,
        x: &DMatrix<f64>,
        column: usize,
        deltas: &[f64],
    ) -> Result<DMatrix<f64>> {
        FittedLearner::predict_shifted(self, x, column, deltas)
    }
}

fn forest_learner(
    spec: &LearnerSpec,
    task: Task,
    x: &DMatrix<f64>,
    y: &[f64],
    columns: &[String],
    vote: bool,
) -> Result<FittedLearner> {
    let fit = forest::fit_forest(x, y, &spec.forest, vote, spec.seed)?;
    let mut out = FittedLearner::base(spec, task, columns, Params::Forest(fit.forest), y.len());
    if let Params::Forest(f) = &out.params {
        out.mtry = Some(f.mtry);
    }
    out.oob_rmse = fit.oob_rmse;
    out.cv_profile = fit.mtry_profile;
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
