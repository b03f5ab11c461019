//! Dummy encoding, standardization and collinearity screening.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::schema::{Categorical, Dataset, Observation};
use super::split::SplitIndices;
use crate::error::{Error, Result};

pub const LOG_PRICE: &str = "log_price";

/// Relative residual norm below which a column counts as a linear
/// combination of the intercept and the columns kept before it.
pub const COLLINEARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSource {
    LogPrice,
    Weight,
    Promotion,
    Holiday,
    Dummy { variable: Categorical, level: u16 },
}

impl ColumnSource {
    fn raw(&self, o: &Observation) -> f64 {
        match *self {
            ColumnSource::LogPrice => o.price.ln(),
            ColumnSource::Weight => o.weight,
            ColumnSource::Promotion => f64::from(u8::from(o.promotion)),
            ColumnSource::Holiday => f64::from(u8::from(o.holiday)),
            ColumnSource::Dummy { variable, level } => {
                f64::from(u8::from(o.category(variable) == level))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub source: ColumnSource,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Constant,
    Collinear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

/// Column layout and standardization parameters, estimated on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingPlan {
    pub columns: Vec<EncodedColumn>,
    pub dropped: Vec<DroppedColumn>,
    /// Reference (omitted) level of each categorical variable.
    pub reference_levels: Vec<(Categorical, String)>,
}

impl EncodingPlan {
    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&EncodedColumn> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub sku: String,
    pub store: String,
    pub date: NaiveDate,
}

/// Standardized regressors, response and censorship indicator.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// `d[i]` is true exactly when `y[i] == 0`.
    pub d: Vec<bool>,
    pub row_keys: Vec<RowKey>,
    /// Index of each row in the source dataset.
    pub source_rows: Vec<usize>,
    pub column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn d_f64(&self) -> Vec<f64> {
        self.d.iter().map(|&b| f64::from(u8::from(b))).collect()
    }

    /// Rows `rows` (positions in this matrix), in the given order.
    pub fn subset(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            x: self.x.select_rows(rows.iter()),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            d: rows.iter().map(|&i| self.d[i]).collect(),
            row_keys: rows.iter().map(|&i| self.row_keys[i].clone()).collect(),
            source_rows: rows.iter().map(|&i| self.source_rows[i]).collect(),
            column_names: self.column_names.clone(),
        }
    }
}

/// Where the encoding plan comes from.
#[derive(Debug, Clone, Copy)]
pub enum PlanSource<'a> {
    /// Estimate standardization and drop rules on the training rows of the split.
    FitOnTrain(&'a SplitIndices),
    Fixed(&'a EncodingPlan),
}

fn candidate_columns(dataset: &Dataset) -> (Vec<(String, ColumnSource)>, Vec<(Categorical, String)>) {
    let mut cols = vec![
        (LOG_PRICE.to_string(), ColumnSource::LogPrice),
        ("weight".to_string(), ColumnSource::Weight),
        ("promotion".to_string(), ColumnSource::Promotion),
        ("holiday".to_string(), ColumnSource::Holiday),
    ];
    let mut references = Vec::new();
    for cat in Categorical::ALL {
        let levels = dataset.schema.levels(cat);
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| levels[a].cmp(&levels[b]));
        references.push((cat, levels[order[0]].clone()));
        for &code in &order[1..] {
            cols.push((
                format!("{}={}", cat.name(), levels[code]),
                ColumnSource::Dummy {
                    variable: cat,
                    level: code as u16,
                },
            ));
        }
    }
    (cols, references)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis grown one column at a time, seeded with the intercept.
struct Orthogonalizer {
    basis: Vec<Vec<f64>>,
}

impl Orthogonalizer {
    fn new(n: usize) -> Self {
        let inv = 1.0 / (n as f64).sqrt();
        Orthogonalizer {
            basis: vec![vec![inv; n]],
        }
    }

    /// Adds `z` unless it lies in the current span to relative tolerance
    /// `COLLINEARITY_TOL`.
    fn admit(&mut self, z: Vec<f64>) -> bool {
        let norm = dot(&z, &z).sqrt();
        let mut r = z;
        // Two Gram-Schmidt passes keep the residual accurate to roundoff.
        for _ in 0..2 {
            for q in &self.basis {
                let c = dot(q, &r);
                r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
            }
        }
        let rnorm = dot(&r, &r).sqrt();
        if !(rnorm > COLLINEARITY_TOL * norm) {
            return false;
        }
        r.iter_mut().for_each(|v| *v /= rnorm);
        self.basis.push(r);
        true
    }
}

/// Indices of the columns of `x` kept by a left-to-right scan that drops
/// constant columns and columns in the span of the intercept and earlier
/// kept columns.
pub fn independent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis = Orthogonalizer::new(x.nrows());
    (0..x.ncols())
        .filter(|&j| {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            basis.admit(col)
        })
        .collect()
}

fn fit_plan(dataset: &Dataset, split: &SplitIndices) -> Result<EncodingPlan> {
    let train = &split.train;
    if train.len() < 2 {
        return Err(Error::validation(
            "training split needs at least two rows to estimate standardization",
        ));
    }
    if let Some(&bad) = split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .find(|&&i| i >= dataset.len())
    {
        return Err(Error::validation(format!(
            "split references row {bad} but the dataset has {} rows",
            dataset.len()
        )));
    }
    let (candidates, reference_levels) = candidate_columns(dataset);
    let n = train.len();

    let mut basis = Orthogonalizer::new(n);
    let mut columns = Vec::new();
    let mut dropped = Vec::new();

    for (name, source) in candidates {
        let raw: Vec<f64> = train
            .iter()
            .map(|&i| source.raw(&dataset.observations[i]))
            .collect();
        let (mean, sd) = mean_sd(&raw);
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            if !matches!(source, ColumnSource::Dummy { .. }) {
                log::warn!("dropping zero-variance column `{name}` on training rows");
            }
            dropped.push(DroppedColumn {
                name,
                reason: DropReason::Constant,
            });
            continue;
        }
        let z: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
        if !basis.admit(z) {
            dropped.push(DroppedColumn {
                name,
                reason: DropReason::Collinear,
            });
            continue;
        }
        columns.push(EncodedColumn {
            name,
            source,
            mean,
            sd,
        });
    }
    if columns.is_empty() {
        return Err(Error::validation("every candidate column was dropped"));
    }
    Ok(EncodingPlan {
        columns,
        dropped,
        reference_levels,
    })
}

/// Encodes every dataset row with a fitted or supplied plan.
///
/// The returned matrix covers all rows in dataset order; use
/// [`DesignMatrix::subset`] with the split indices to obtain each set.
pub fn build_design(dataset: &Dataset, source: PlanSource<'_>) -> Result<(DesignMatrix, EncodingPlan)> {
    let plan = match source {
        PlanSource::FitOnTrain(split) => fit_plan(dataset, split)?,
        PlanSource::Fixed(plan) => plan.clone(),
    };
    let n = dataset.len();
    let k = plan.columns.len();
    let x = DMatrix::from_fn(n, k, |i, j| {
        let c = &plan.columns[j];
        (c.source.raw(&dataset.observations[i]) - c.mean) / c.sd
    });
    let y: Vec<f64> = dataset.observations.iter().map(|o| f64::from(o.sales)).collect();
    let d = y.iter().map(|&v| v == 0.0).collect();
    let row_keys = dataset
        .observations
        .iter()
        .map(|o| RowKey {
            sku: o.sku_id.clone(),
            store: o.store_id.clone(),
            date: o.date,
        })
        .collect();
    Ok((
        DesignMatrix {
            x,
            y,
            d,
            row_keys,
            source_rows: (0..n).collect(),
            column_names: plan.column_names(),
        },
        plan,
    ))
}
