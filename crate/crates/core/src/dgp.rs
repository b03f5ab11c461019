//! Synthetic censored-demand generator with a known latent linear model.
//!
//! Latent demand is
//! `y* = c + beta_price * z(log price) + sum(beta_other * f) + sum(gamma * f_a * f_b) + eps`
//! with `eps ~ N(0, noise_sd^2)`, and observed sales are
//! `min(cap, round(max(0, y*)))`. The intercept `c` is solved numerically so
//! the share of zero sales hits the configured target.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Categorical, Dataset, DesignMatrix, EncodingPlan, Observation, Schema, LOG_PRICE,
};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, task_rng};

const WEIGHT_LEVELS: [f64; 13] = [
    150.0, 200.0, 250.0, 300.0, 350.0, 400.0, 450.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0,
];
const SALES_CAP: f64 = 1000.0;
const PRICE_RANGE: (f64, f64) = (9.0, 120.0);

/// Vocabulary sizes of the product, store and calendar categoricals.
const VOCAB: [(Categorical, &str, usize); 7] = [
    (Categorical::Brand, "B", 38),
    (Categorical::Country, "CO", 6),
    (Categorical::Colour, "CL", 5),
    (Categorical::Form, "F", 22),
    (Categorical::Flour, "FL", 8),
    (Categorical::PackageType, "PK", 2),
    (Categorical::StoreType, "ST", 5),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    /// `weight`, `promotion`, `holiday` or `<categorical>=<level>`.
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub first: String,
    pub second: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub n_skus: usize,
    pub n_stores: usize,
    pub start_year: i32,
    pub years: u32,
    /// Latent effect of one standard deviation of log price.
    pub beta_price: f64,
    pub beta_other: Vec<Coefficient>,
    pub noise_sd: f64,
    pub target_zero_fraction: f64,
    /// Fixed intercept; when absent it is solved from `target_zero_fraction`.
    pub intercept: Option<f64>,
    pub nonlinear_terms: Vec<Interaction>,
    pub promotion_rate: f64,
    pub promotion_discount: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 20_000,
            n_skus: 200,
            n_stores: 20,
            start_year: 2009,
            years: 5,
            beta_price: -1.0,
            beta_other: default_beta_other(),
            noise_sd: 0.7,
            target_zero_fraction: 0.60,
            intercept: None,
            nonlinear_terms: vec![
                Interaction {
                    first: "store_type=ST1".into(),
                    second: "holiday".into(),
                    value: 1.0,
                },
                Interaction {
                    first: "colour=CL2".into(),
                    second: "store_type=ST3".into(),
                    value: 0.8,
                },
                Interaction {
                    first: "package_type=PK2".into(),
                    second: "weight".into(),
                    value: 0.6,
                },
            ],
            promotion_rate: 0.15,
            promotion_discount: 0.20,
            seed: 1,
        }
    }
}

/// Fixed level effects, drawn once from a constant stream so every default
/// config describes the same latent model.
fn default_beta_other() -> Vec<Coefficient> {
    let mut rng = rng_from_seed(0x00C0_FFEE);
    let mut out = vec![
        Coefficient {
            feature: "weight".into(),
            value: 0.3,
        },
        Coefficient {
            feature: "promotion".into(),
            value: 0.5,
        },
        Coefficient {
            feature: "holiday".into(),
            value: 0.3,
        },
    ];
    let spread = [
        (Categorical::Brand, 0.5),
        (Categorical::Country, 0.3),
        (Categorical::Colour, 0.3),
        (Categorical::Form, 0.4),
        (Categorical::Flour, 0.3),
        (Categorical::PackageType, 0.3),
        (Categorical::StoreType, 0.5),
        (Categorical::Year, 0.3),
        (Categorical::Month, 0.3),
        (Categorical::DayOfWeek, 0.3),
    ];
    let schema = vocabulary(2009, 5);
    for (cat, sd) in spread {
        let normal = Normal::new(0.0, sd).expect("positive sd");
        for level in schema.levels(cat) {
            out.push(Coefficient {
                feature: format!("{}={}", cat.name(), level),
                value: normal.sample(&mut rng),
            });
        }
    }
    out
}

/// The fixed vocabularies of generated data.
pub fn vocabulary(start_year: i32, years: u32) -> Schema {
    let mut v = BTreeMap::new();
    for (cat, prefix, size) in VOCAB {
        let width = if size >= 10 { 2 } else { 1 };
        v.insert(
            cat.name().to_string(),
            (1..=size)
                .map(|i| format!("{prefix}{i:0width$}"))
                .collect(),
        );
    }
    v.insert(
        "year".to_string(),
        (0..years as i32)
            .map(|y| (start_year + y).to_string())
            .collect(),
    );
    Schema::new(v).expect("generated vocabulary is valid")
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if self.n == 0 {
            return fail("n must be positive".into());
        }
        if self.n_skus == 0 || self.n_stores == 0 || self.years == 0 {
            return fail("n_skus, n_stores and years must be positive".into());
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return fail(format!("noise_sd must be > 0, got {}", self.noise_sd));
        }
        if self.intercept.is_none()
            && !(self.target_zero_fraction > 0.0 && self.target_zero_fraction < 1.0)
        {
            return fail(format!(
                "target_zero_fraction must lie in (0, 1), got {}",
                self.target_zero_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.promotion_rate)
            || !(0.0..1.0).contains(&self.promotion_discount)
        {
            return fail("promotion_rate and promotion_discount must lie in [0, 1)".into());
        }
        let days = self.day_count();
        let cells = self.n_skus as f64 * self.n_stores as f64 * days as f64;
        if self.n as f64 > 0.5 * cells {
            return fail(format!(
                "n = {} is too large for {} sku x store x day cells",
                self.n, cells
            ));
        }
        let schema = vocabulary(self.start_year, self.years);
        for c in &self.beta_other {
            Feature::parse(&c.feature, &schema)?;
        }
        for t in &self.nonlinear_terms {
            Feature::parse(&t.first, &schema)?;
            Feature::parse(&t.second, &schema)?;
        }
        Ok(())
    }

    fn start(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.start_year, 1, 1).expect("valid year")
    }

    fn day_count(&self) -> i64 {
        let end = NaiveDate::from_ymd_opt(self.start_year + self.years as i32, 1, 1)
            .expect("valid year");
        (end - self.start()).num_days()
    }
}

/// A latent-model regressor addressed by name.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Feature {
    Weight,
    Promotion,
    Holiday,
    Level(Categorical, u16),
}

impl Feature {
    fn parse(name: &str, schema: &Schema) -> Result<Self> {
        match name {
            "weight" => return Ok(Feature::Weight),
            "promotion" => return Ok(Feature::Promotion),
            "holiday" => return Ok(Feature::Holiday),
            _ => {}
        }
        let bad = || Error::validation(format!("unknown latent feature `{name}`"));
        let (var, level) = name.split_once('=').ok_or_else(bad)?;
        let cat = Categorical::from_name(var).ok_or_else(bad)?;
        let code = schema.code(cat, level).ok_or_else(bad)?;
        Ok(Feature::Level(cat, code))
    }

    fn value(self, o: &Observation, weight_z: f64) -> f64 {
        match self {
            Feature::Weight => weight_z,
            Feature::Promotion => f64::from(u8::from(o.promotion)),
            Feature::Holiday => f64::from(u8::from(o.holiday)),
            Feature::Level(cat, code) => f64::from(u8::from(o.category(cat) == code)),
        }
    }
}

/// Everything needed to evaluate the latent mean of any generated row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: DgpConfig,
    pub intercept: f64,
    pub log_price_mean: f64,
    pub log_price_sd: f64,
    pub weight_mean: f64,
    pub weight_sd: f64,
    pub achieved_zero_fraction: f64,
    /// Share of latent variance explained by the mean function.
    pub latent_r_squared: f64,
}

impl GroundTruth {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("truth serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn latent(&self, schema: &Schema) -> Result<LatentModel> {
        LatentModel::new(&self.config, schema, self)
    }
}

struct LatentModel {
    beta_price: f64,
    linear: Vec<(Feature, f64)>,
    pairs: Vec<(Feature, Feature, f64)>,
    lp_mean: f64,
    lp_sd: f64,
    w_mean: f64,
    w_sd: f64,
}

impl LatentModel {
    fn new(config: &DgpConfig, schema: &Schema, scale: &GroundTruth) -> Result<Self> {
        Ok(LatentModel {
            beta_price: config.beta_price,
            linear: config
                .beta_other
                .iter()
                .map(|c| Ok((Feature::parse(&c.feature, schema)?, c.value)))
                .collect::<Result<_>>()?,
            pairs: config
                .nonlinear_terms
                .iter()
                .map(|t| {
                    Ok((
                        Feature::parse(&t.first, schema)?,
                        Feature::parse(&t.second, schema)?,
                        t.value,
                    ))
                })
                .collect::<Result<_>>()?,
            lp_mean: scale.log_price_mean,
            lp_sd: scale.log_price_sd,
            w_mean: scale.weight_mean,
            w_sd: scale.weight_sd,
        })
    }

    /// Latent mean without the intercept.
    fn index(&self, o: &Observation) -> f64 {
        let wz = (o.weight - self.w_mean) / self.w_sd;
        let mut v = self.beta_price * (o.price.ln() - self.lp_mean) / self.lp_sd;
        for &(f, b) in &self.linear {
            v += b * f.value(o, wz);
        }
        for &(f, g, b) in &self.pairs {
            v += b * f.value(o, wz) * g.value(o, wz);
        }
        v
    }
}

fn is_holiday(date: NaiveDate) -> bool {
    let fixed = matches!(
        (date.month(), date.day()),
        (1, 1..=8) | (2, 23) | (3, 8) | (5, 1) | (5, 9) | (6, 12) | (11, 4)
    );
    fixed || date.weekday().number_from_monday() >= 6
}

fn sample_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = if values.len() > 1 {
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

fn observed_sales(latent: f64) -> u32 {
    latent.max(0.0).round().min(SALES_CAP) as u32
}

/// A generated dataset and the latent model that produced it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

struct Sku {
    categories: [u16; 6],
    weight: f64,
    log_price: f64,
}

/// Draws a dataset; identical configs give identical output.
pub fn generate(config: &DgpConfig) -> Result<Generated> {
    config.validate()?;
    let schema = vocabulary(config.start_year, config.years);
    let mut rng = task_rng(config.seed, 0);
    let size = |c: Categorical| schema.levels(c).len();

    // Catalogue: brand fixes country and shifts the price level.
    let brand_country: Vec<u16> = (0..size(Categorical::Brand))
        .map(|_| rng.random_range(0..size(Categorical::Country)) as u16)
        .collect();
    let brand_price = Normal::new(0.0, 0.3).expect("sd > 0");
    let brand_shift: Vec<f64> = (0..size(Categorical::Brand))
        .map(|_| brand_price.sample(&mut rng))
        .collect();
    let sku_noise = Normal::new(0.0, 0.25).expect("sd > 0");
    let skus: Vec<Sku> = (0..config.n_skus)
        .map(|_| {
            let brand = rng.random_range(0..size(Categorical::Brand)) as u16;
            let weight = WEIGHT_LEVELS[rng.random_range(0..WEIGHT_LEVELS.len())];
            let cats = [
                brand,
                brand_country[brand as usize],
                rng.random_range(0..size(Categorical::Colour)) as u16,
                rng.random_range(0..size(Categorical::Form)) as u16,
                rng.random_range(0..size(Categorical::Flour)) as u16,
                rng.random_range(0..size(Categorical::PackageType)) as u16,
            ];
            let log_price = 35f64.ln()
                + 0.6 * (weight / 450.0).ln()
                + brand_shift[brand as usize]
                + sku_noise.sample(&mut rng);
            Sku {
                categories: cats,
                weight,
                log_price,
            }
        })
        .collect();
    let store_types: Vec<u16> = (0..config.n_stores)
        .map(|_| rng.random_range(0..size(Categorical::StoreType)) as u16)
        .collect();

    let days = config.day_count();
    let start = config.start();
    let mut seen = HashSet::with_capacity(config.n);
    let mut observations = Vec::with_capacity(config.n);
    while observations.len() < config.n {
        let sku = rng.random_range(0..config.n_skus);
        let store = rng.random_range(0..config.n_stores);
        let day = rng.random_range(0..days);
        if !seen.insert((sku, store, day)) {
            continue;
        }
        let date = start + Duration::days(day);
        let promotion = rng.random::<f64>() < config.promotion_rate;
        let s = &skus[sku];
        let discount = if promotion {
            1.0 - config.promotion_discount
        } else {
            1.0
        };
        let price = (s.log_price.exp() * discount).clamp(PRICE_RANGE.0, PRICE_RANGE.1);
        let price = (price * 100.0).round() / 100.0;
        let mut categories = [0u16; 10];
        categories[..6].copy_from_slice(&s.categories);
        categories[Categorical::StoreType.index()] = store_types[store];
        categories[Categorical::Year.index()] = (date.year() - config.start_year) as u16;
        categories[Categorical::Month.index()] = date.month0() as u16;
        categories[Categorical::DayOfWeek.index()] =
            date.weekday().num_days_from_monday() as u16;
        observations.push(Observation {
            sku_id: format!("SKU{:04}", sku + 1),
            store_id: format!("S{:03}", store + 1),
            date,
            sales: 0,
            price,
            weight: s.weight,
            promotion,
            holiday: is_holiday(date),
            categories,
        });
    }

    let log_prices: Vec<f64> = observations.iter().map(|o| o.price.ln()).collect();
    let weights: Vec<f64> = observations.iter().map(|o| o.weight).collect();
    let (lp_mean, lp_sd) = sample_sd(&log_prices);
    let (w_mean, w_sd) = sample_sd(&weights);
    let mut truth = GroundTruth {
        config: config.clone(),
        intercept: 0.0,
        log_price_mean: lp_mean,
        log_price_sd: lp_sd,
        weight_mean: w_mean,
        weight_sd: w_sd,
        achieved_zero_fraction: 0.0,
        latent_r_squared: 0.0,
    };
    let latent = truth.latent(&schema)?;
    let index: Vec<f64> = observations.iter().map(|o| latent.index(o)).collect();
    let noise = Normal::new(0.0, config.noise_sd).expect("validated sd");
    let eps: Vec<f64> = (0..config.n).map(|_| noise.sample(&mut rng)).collect();

    let intercept = match config.intercept {
        Some(c) => c,
        None => solve_intercept(&index, &eps, config.target_zero_fraction)?,
    };
    for ((o, &m), &e) in observations.iter_mut().zip(&index).zip(&eps) {
        o.sales = observed_sales(intercept + m + e);
    }
    let dataset = Dataset {
        schema,
        observations,
    };
    let var_index = {
        let (_, sd) = sample_sd(&index);
        if index.len() > 1 {
            sd * sd
        } else {
            0.0
        }
    };
    truth.intercept = intercept;
    truth.achieved_zero_fraction = dataset.zero_fraction();
    truth.latent_r_squared = var_index / (var_index + config.noise_sd.powi(2));
    if config.intercept.is_none()
        && (truth.achieved_zero_fraction - config.target_zero_fraction).abs() > 0.03
    {
        return Err(Error::Infeasible(format!(
            "zero fraction {:.4} cannot be brought within 0.03 of {}",
            truth.achieved_zero_fraction, config.target_zero_fraction
        )));
    }
    Ok(Generated { dataset, truth })
}

/// Bisection on the intercept; a row is zero exactly when `y* < 0.5`.
fn solve_intercept(index: &[f64], eps: &[f64], target: f64) -> Result<f64> {
    let zero_share = |c: f64| {
        let zeros = index
            .iter()
            .zip(eps)
            .filter(|(m, e)| observed_sales(c + *m + *e) == 0)
            .count();
        zeros as f64 / index.len() as f64
    };
    let span = index
        .iter()
        .zip(eps)
        .map(|(m, e)| (m + e).abs())
        .fold(0.0f64, f64::max)
        + 10.0;
    let (mut lo, mut hi) = (-span, span);
    if zero_share(lo) < target || zero_share(hi) > target {
        return Err(Error::Infeasible(format!(
            "intercept search cannot bracket zero fraction {target}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if zero_share(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever bracket end lands closer to the target.
    let (zl, zh) = (zero_share(lo), zero_share(hi));
    Ok(if (zl - target).abs() < (zh - target).abs() {
        lo
    } else {
        hi
    })
}

/// Marginal effect of the log-price design column, averaged over the rows
/// of `at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEffect {
    /// Derivative of the pre-rounding mean `E[max(0, y*)]`, by Monte Carlo.
    pub effect: f64,
    pub standard_error: f64,
    pub draws: usize,
    /// Finite-difference effect on expected observed sales for a step
    /// `delta ~ U[range]`, the quantity the perturbation estimator targets.
    pub perturbation_effect: f64,
    pub perturbation_range: (f64, f64),
}

/// Standard normal cdf.
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[min(cap, round(max(0, m + eps)))]` for `eps ~ N(0, sd^2)`, which is
/// `sum_{k=1..cap} P(m + eps >= k - 1/2)`.
pub fn expected_sales(m: f64, sd: f64) -> f64 {
    let reach = 10.0 * sd;
    let first = (m - reach + 0.5).ceil().max(1.0);
    let last = (m + reach + 0.5).floor().min(SALES_CAP);
    // Terms below `first` are 1 to double precision.
    let mut total = (first - 1.0).clamp(0.0, SALES_CAP);
    let mut k = first;
    while k <= last {
        total += normal_cdf((m - k + 0.5) / sd);
        k += 1.0;
    }
    total
}

/// Mean over `delta ~ U[lo, hi]` of `(expected_sales(m + slope delta) -
/// expected_sales(m)) / delta`, by Simpson's rule on `delta`.
fn mean_step_effect(m: f64, sd: f64, slope: f64, (lo, hi): (f64, f64)) -> f64 {
    let base = expected_sales(m, sd);
    let f = |d: f64| (expected_sales(m + slope * d, sd) - base) / d;
    if hi <= lo {
        return f(lo);
    }
    const PANELS: usize = 32;
    let h = (hi - lo) / PANELS as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..PANELS {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0 / (hi - lo)
}

/// Pathwise estimator: `d max(0, m + eps)/dm = 1{m + eps > 0}`, scaled to
/// one unit of the design's standardized log-price column. The
/// perturbation effect is exact up to quadrature on `delta`.
pub fn true_marginal_effect(
    truth: &GroundTruth,
    dataset: &Dataset,
    at: &DesignMatrix,
    plan: &EncodingPlan,
    draws: usize,
    range: (f64, f64),
    seed: u64,
) -> Result<OracleEffect> {
    if !(range.0 > 0.0 && range.0 <= range.1 && range.1.is_finite()) {
        return Err(Error::validation(format!(
            "perturbation range must satisfy 0 < low <= high, got {range:?}"
        )));
    }
    if draws < 2 {
        return Err(Error::validation("oracle needs at least two draws"));
    }
    if at.nrows() == 0 {
        return Err(Error::validation("oracle needs at least one row"));
    }
    let column = plan
        .column(LOG_PRICE)
        .ok_or_else(|| Error::validation("design has no log-price column"))?;
    let slope = truth.config.beta_price / truth.log_price_sd * column.sd;
    let latent = truth.latent(&dataset.schema)?;
    let means: Vec<f64> = at
        .source_rows
        .iter()
        .map(|&i| {
            dataset
                .observations
                .get(i)
                .map(|o| truth.intercept + latent.index(o))
                .ok_or_else(|| Error::validation(format!("row {i} is not in the dataset")))
        })
        .collect::<Result<_>>()?;

    let noise = Normal::new(0.0, truth.config.noise_sd)
        .map_err(|e| Error::validation(e.to_string()))?;
    let per_draw: Vec<f64> = (0..draws)
        .map(|r| {
            let mut rng = task_rng(seed, r as u64);
            let positive = means
                .iter()
                .filter(|&&m| m + noise.sample(&mut rng) > 0.0)
                .count();
            slope * positive as f64 / means.len() as f64
        })
        .collect();
    let mean = per_draw.iter().sum::<f64>() / draws as f64;
    let var = per_draw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
    let sd = truth.config.noise_sd;
    let stepped = means
        .par_iter()
        .map(|&m| mean_step_effect(m, sd, slope, range))
        .sum::<f64>();
    Ok(OracleEffect {
        effect: mean,
        standard_error: (var / draws as f64).sqrt(),
        draws,
        perturbation_effect: stepped / means.len() as f64,
        perturbation_range: range,
    })
}

/// Latent mean (intercept included) of each row of `at`.
pub fn latent_means(truth: &GroundTruth, dataset: &Dataset, at: &DesignMatrix) -> Result<Vec<f64>> {
    let latent = truth.latent(&dataset.schema)?;
    Ok(at
        .source_rows
        .iter()
        .map(|&i| truth.intercept + latent.index(&dataset.observations[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{build_design, PlanSource, SplitIndices};

    fn small(seed: u64) -> DgpConfig {
        DgpConfig {
            n: 3000,
            n_skus: 60,
            n_stores: 8,
            seed,
            ..DgpConfig::default()
        }
    }

    fn all_rows(n: usize) -> SplitIndices {
        SplitIndices {
            train: (0..n).collect(),
            validation: vec![],
            test: vec![],
        }
    }

    /// Standard normal cdf by composite Simpson quadrature of the density.
    fn phi_by_quadrature(z: f64) -> f64 {
        let lo = -12.0f64;
        if z <= lo {
            return 0.0;
        }
        let m = 4000;
        let h = (z - lo) / m as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(lo) + f(z);
        for i in 1..m {
            let t = lo + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        s * h / 3.0
    }

    #[test]
    fn degenerate_noise_gives_rounded_intercept() {
        let cfg = DgpConfig {
            beta_price: 0.0,
            beta_other: vec![],
            nonlinear_terms: vec![],
            noise_sd: 1e-9,
            intercept: Some(3.2),
            ..small(4)
        };
        let g = generate(&cfg).unwrap();
        assert!(g.dataset.observations.iter().all(|o| o.sales == 3));
        assert_eq!(g.truth.achieved_zero_fraction, 0.0);
    }

    #[test]
    fn hits_sixty_percent_zeros() {
        let g = generate(&DgpConfig::default()).unwrap();
        let z = g.dataset.zero_fraction();
        assert!((0.57..=0.63).contains(&z), "zero share {z}");
        assert_eq!(g.dataset.len(), 20_000);
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        generate(&small(3)).unwrap().dataset.write_csv(&a).unwrap();
        generate(&small(3)).unwrap().dataset.write_csv(&b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn seeds_share_vocabularies() {
        let a = generate(&small(1)).unwrap();
        let b = generate(&small(2)).unwrap();
        assert_eq!(a.dataset.schema, b.dataset.schema);
        assert_ne!(a.dataset.observations, b.dataset.observations);
    }

    #[test]
    fn country_is_a_function_of_brand() {
        let g = generate(&small(5)).unwrap();
        let mut map = BTreeMap::new();
        for o in &g.dataset.observations {
            let b = o.category(Categorical::Brand);
            let c = o.category(Categorical::Country);
            assert_eq!(*map.entry(b).or_insert(c), c);
        }
        let (lo, hi) = g
            .dataset
            .observations
            .iter()
            .fold((f64::MAX, 0.0f64), |(l, h), o| (l.min(o.price), h.max(o.price)));
        assert!(lo >= 9.0 && hi <= 120.0);
    }

    #[test]
    fn infeasible_target_is_reported() {
        let cfg = DgpConfig {
            beta_price: 0.0,
            beta_other: vec![],
            nonlinear_terms: vec![],
            noise_sd: 1e-300,
            ..small(1)
        };
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
        assert!(generate(&DgpConfig { n: 0, ..small(1) }).is_err());
    }

    #[test]
    fn zero_price_coefficient_has_zero_effect() {
        let cfg = DgpConfig {
            beta_price: 0.0,
            ..small(2)
        };
        let g = generate(&cfg).unwrap();
        let (dm, plan) =
            build_design(&g.dataset, PlanSource::FitOnTrain(&all_rows(g.dataset.len()))).unwrap();
        let e = true_marginal_effect(&g.truth, &g.dataset, &dm, &plan, 50, (0.01, 1.0), 1).unwrap();
        assert_eq!(e.effect, 0.0);
    }

    #[test]
    fn uncensored_region_recovers_slope() {
        let cfg = DgpConfig {
            intercept: Some(100.0),
            ..small(2)
        };
        let g = generate(&cfg).unwrap();
        let (dm, plan) =
            build_design(&g.dataset, PlanSource::FitOnTrain(&all_rows(g.dataset.len()))).unwrap();
        let e = true_marginal_effect(&g.truth, &g.dataset, &dm, &plan, 50, (0.01, 1.0), 1).unwrap();
        // Plan fitted on all rows: the design scale equals the generator's.
        assert!((e.effect - cfg.beta_price).abs() <= 2.0 * e.standard_error + 1e-12);
        // Linear in this region up to the periodic rounding error.
        assert!((e.perturbation_effect - cfg.beta_price).abs() < 1e-3);
    }

    #[test]
    fn censored_effect_matches_tobit_quadrature() {
        let g = generate(&small(6)).unwrap();
        let (dm, plan) =
            build_design(&g.dataset, PlanSource::FitOnTrain(&all_rows(g.dataset.len()))).unwrap();
        let e = true_marginal_effect(&g.truth, &g.dataset, &dm, &plan, 400, (0.01, 1.0), 11).unwrap();
        let means = latent_means(&g.truth, &g.dataset, &dm).unwrap();
        let slope = g.truth.config.beta_price / g.truth.log_price_sd
            * plan.column(LOG_PRICE).unwrap().sd;
        let closed = slope
            * means
                .iter()
                .map(|m| phi_by_quadrature(m / g.truth.config.noise_sd))
                .sum::<f64>()
            / means.len() as f64;
        assert!(e.effect.abs() > 0.0 && e.effect.abs() < slope.abs());
        assert!(
            (e.effect - closed).abs() < 4.0 * e.standard_error,
            "mc {} vs closed {} (se {})",
            e.effect,
            closed,
            e.standard_error
        );
    }

    /// `E[round(max(0, m + sd z))]` by Simpson quadrature over `z`, one
    /// integer plateau at a time.
    fn expected_sales_by_quadrature(m: f64, sd: f64) -> f64 {
        (1..60)
            .map(|k| 1.0 - phi_by_quadrature((k as f64 - 0.5 - m) / sd))
            .sum()
    }

    #[test]
    fn expected_sales_matches_quadrature() {
        for (m, sd) in [(-1.0, 0.7), (0.2, 0.7), (0.9, 0.7), (3.4, 1.3), (0.5, 0.2), (12.0, 2.0)] {
            let q = expected_sales_by_quadrature(m, sd);
            let e = expected_sales(m, sd);
            assert!((q - e).abs() < 1e-7, "m {m}: {q} vs {e}");
        }
        assert_eq!(expected_sales(-30.0, 0.7), 0.0);
        assert!((expected_sales(5000.0, 0.7) - SALES_CAP).abs() < 1e-12);
    }

    #[test]
    fn expected_sales_matches_simulation() {
        let noise = Normal::new(0.0, 0.7).unwrap();
        let mut rng = rng_from_seed(4);
        let m: f64 = 0.3;
        let n = 200_000;
        let sim = (0..n)
            .map(|_| (m + noise.sample(&mut rng)).max(0.0).round())
            .sum::<f64>()
            / n as f64;
        assert!((sim - expected_sales(m, 0.7)).abs() < 5e-3);
    }

    #[test]
    fn finite_steps_weaken_the_censored_effect() {
        // Expected sales are convex in a falling price index, so a finite
        // step moves less than the derivative.
        let g = generate(&small(6)).unwrap();
        let (dm, plan) =
            build_design(&g.dataset, PlanSource::FitOnTrain(&all_rows(g.dataset.len()))).unwrap();
        let e = true_marginal_effect(&g.truth, &g.dataset, &dm, &plan, 100, (0.01, 1.0), 2).unwrap();
        assert!(e.perturbation_effect < 0.0);
        assert!(e.perturbation_effect.abs() < e.effect.abs(), "{e:?}");
        // A tiny step recovers the derivative.
        let tiny = true_marginal_effect(&g.truth, &g.dataset, &dm, &plan, 100, (1e-4, 1e-4), 2).unwrap();
        assert!((tiny.perturbation_effect - e.effect).abs() < 4.0 * e.standard_error + 2e-3);
    }

    #[test]
    fn step_effect_matches_brute_force_average() {
        let (m, sd, slope) = (0.4, 0.7, -0.8);
        let grid = 20_000;
        let brute = (0..grid)
            .map(|i| {
                let d = 0.01 + 0.99 * (i as f64 + 0.5) / grid as f64;
                (expected_sales_by_quadrature(m + slope * d, sd) - expected_sales_by_quadrature(m, sd)) / d
            })
            .sum::<f64>()
            / grid as f64;
        let exact = mean_step_effect(m, sd, slope, (0.01, 1.0));
        assert!((brute - exact).abs() < 1e-5, "{brute} vs {exact}");
    }

    #[test]
    fn effect_grows_with_price_coefficient() {
        let mut last = 0.0;
        for beta in [-0.25, -0.5, -1.0, -1.5, -2.0] {
            let cfg = DgpConfig {
                beta_price: beta,
                ..small(8)
            };
            let g = generate(&cfg).unwrap();
            let (dm, plan) = build_design(
                &g.dataset,
                PlanSource::FitOnTrain(&all_rows(g.dataset.len())),
            )
            .unwrap();
            let e = true_marginal_effect(&g.truth, &g.dataset, &dm, &plan, 200, (0.01, 1.0), 3).unwrap();
            assert!(e.effect.abs() <= beta.abs() + 1e-12);
            assert!(e.effect.abs() >= last, "{beta}: {} < {last}", e.effect.abs());
            last = e.effect.abs();
        }
    }
}
