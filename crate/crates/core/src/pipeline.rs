//! End-to-end runs: data, split, design, model fits, ensembles and the
//! evaluation report, with every artifact written under one run directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::censored::{default_alpha_grid, fit_censored, fit_uncensored, CensoredModel};
use crate::datamodel::{
    build_design, load_dataset, make_split, Dataset, DesignMatrix, EncodingPlan, PlanSource,
    Schema, SplitIndices, DEFAULT_FRACTIONS, LOG_PRICE,
};
use crate::dgp::{generate, true_marginal_effect, DgpConfig, GroundTruth};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::evaluation::report::{
    CoefficientRow, ModelRow, OracleSummary, SplitRmse, TestSummary,
};
use crate::evaluation::{
    bootstrap_ols_coefficients, bootstrap_rmse_diff, rmse, EffectDraws, EvalReport,
    MarginalEffectEstimate, SkuPanel, DEFAULT_REPLICATIONS, PERTURBATION_RANGE,
};
use crate::learners::{self, Family, ForestParams, LearnerSpec, Params, PenaltyGrid, Predictor};
use crate::rng::derive_seed;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generate,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub dgp: DgpConfig,
    /// CSV file, for `source = "csv"`.
    pub path: Option<PathBuf>,
    /// Vocabulary JSON, for `source = "csv"`.
    pub schema: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Generate,
            dgp: DgpConfig::default(),
            path: None,
            schema: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: DEFAULT_FRACTIONS,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub penalty: PenaltyGrid,
    pub forest: ForestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Bootstrap replications of the RMSE difference.
    pub replications: usize,
    pub effect_replications: usize,
    pub perturbation_range: (f64, f64),
    pub coefficient_replications: usize,
    /// Monte Carlo draws of the true effect; generated data only.
    pub oracle_draws: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            replications: DEFAULT_REPLICATIONS,
            effect_replications: DEFAULT_REPLICATIONS,
            perturbation_range: PERTURBATION_RANGE,
            coefficient_replications: DEFAULT_REPLICATIONS,
            oracle_draws: 200,
        }
    }
}

/// Everything a run depends on. Written verbatim into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub families: Vec<Family>,
    pub alpha_grid: Vec<f64>,
    pub ensemble: bool,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub learners: LearnerConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output: PathBuf::from("run"),
            families: Family::ALL.to_vec(),
            alpha_grid: default_alpha_grid(),
            ensemble: true,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            learners: LearnerConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the run, split and generator seeds at once.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split.seed = Some(seed);
        self.data.dgp.seed = seed;
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::validation("at least one learner family is required"));
        }
        let mut seen = self.families.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.families.len() {
            return Err(Error::validation("learner families must be distinct"));
        }
        if self.alpha_grid.is_empty() {
            return Err(Error::validation("alpha grid is empty"));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::validation(format!("alpha {a} is outside (0, 1]")));
        }
        match self.data.source {
            DataSource::Generate => self.data.dgp.validate()?,
            DataSource::Csv => {
                if self.data.path.is_none() || self.data.schema.is_none() {
                    return Err(Error::validation(
                        "csv data needs both `data.path` and `data.schema`",
                    ));
                }
            }
        }
        self.learners.penalty.validate()?;
        let ev = &self.evaluation;
        for (name, value) in [
            ("replications", ev.replications),
            ("effect_replications", ev.effect_replications),
            ("coefficient_replications", ev.coefficient_replications),
            ("oracle_draws", ev.oracle_draws),
        ] {
            if value < 2 {
                return Err(Error::validation(format!("evaluation.{name} must be at least 2")));
            }
        }
        let (lo, hi) = ev.perturbation_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::validation("perturbation range must satisfy 0 < low <= high"));
        }
        Ok(())
    }

    fn learner_spec(&self, family: Family) -> LearnerSpec {
        LearnerSpec {
            family,
            penalty: self.learners.penalty.clone(),
            forest: self.learners.forest.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Censored,
    Uncensored,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Censored => "censored",
            ModelKind::Uncensored => "uncensored",
        }
    }
}

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("data").join("dataset.csv")
    }

    pub fn schema(&self) -> PathBuf {
        self.root.join("data").join("schema.json")
    }

    pub fn truth(&self) -> PathBuf {
        self.root.join("data").join("truth.json")
    }

    pub fn model(&self, kind: ModelKind, family: Family) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{}_{}.json", kind.name(), family.name()))
    }

    pub fn ensemble(&self, kind: ModelKind) -> PathBuf {
        self.root
            .join("models")
            .join(format!("ensemble_{}.json", kind.name()))
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join(EVALUATION_FILE)
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join(REPORT_JSON)
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join(REPORT_TEXT)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Data and designs shared by fitting and evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub truth: Option<GroundTruth>,
    pub split: SplitIndices,
    pub plan: EncodingPlan,
    pub train: DesignMatrix,
    pub validation: DesignMatrix,
    pub test: DesignMatrix,
}

impl Prepared {
    pub fn new(config: &RunConfig, dataset: Dataset, truth: Option<GroundTruth>) -> Result<Self> {
        let split = make_split(dataset.len(), config.split.fractions, config.split_seed())?;
        let (design, plan) = build_design(&dataset, PlanSource::FitOnTrain(&split))?;
        info!(
            "design: {} rows, {} columns, {} dropped",
            design.nrows(),
            design.ncols(),
            plan.dropped.len()
        );
        Ok(Prepared {
            train: design.subset(&split.train),
            validation: design.subset(&split.validation),
            test: design.subset(&split.test),
            dataset,
            truth,
            split,
            plan,
        })
    }

    /// Generates or loads the data named by the config, without touching disk
    /// for generated data.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (dataset, truth) = match config.data.source {
            DataSource::Generate => {
                let g = generate(&config.data.dgp)?;
                (g.dataset, Some(g.truth))
            }
            DataSource::Csv => load_configured_csv(config)?,
        };
        Prepared::new(config, dataset, truth)
    }

    pub fn log_price_column(&self) -> Result<usize> {
        self.test
            .column_index(LOG_PRICE)
            .ok_or_else(|| Error::validation("design has no log-price column"))
    }
}

fn load_configured_csv(config: &RunConfig) -> Result<(Dataset, Option<GroundTruth>)> {
    let (Some(path), Some(schema)) = (&config.data.path, &config.data.schema) else {
        return Err(Error::validation("csv data needs `data.path` and `data.schema`"));
    };
    let schema = Schema::read_json(schema)?;
    Ok((load_dataset(path, &schema)?, None))
}

/// Censored and uncensored models per family, plus their ensembles.
#[derive(Debug, Clone)]
pub struct FittedRun {
    pub families: Vec<Family>,
    pub censored: Vec<CensoredModel>,
    pub uncensored: Vec<CensoredModel>,
    pub ensemble_censored: Option<EnsembleModel>,
    pub ensemble_uncensored: Option<EnsembleModel>,
}

impl FittedRun {
    pub fn models(&self, kind: ModelKind) -> &[CensoredModel] {
        match kind {
            ModelKind::Censored => &self.censored,
            ModelKind::Uncensored => &self.uncensored,
        }
    }

    pub fn ensemble(&self, kind: ModelKind) -> Option<&EnsembleModel> {
        match kind {
            ModelKind::Censored => self.ensemble_censored.as_ref(),
            ModelKind::Uncensored => self.ensemble_uncensored.as_ref(),
        }
    }
}

pub fn fit_models(config: &RunConfig, data: &Prepared) -> Result<FittedRun> {
    config.validate()?;
    let mut censored = Vec::new();
    let mut uncensored = Vec::new();
    for &family in &config.families {
        let spec = config.learner_spec(family);
        info!("fitting {family}");
        let cen = fit_censored(&data.train, &data.validation, &spec, &config.alpha_grid)?;
        info!("{family}: alpha {}", cen.alpha);
        censored.push(cen);
        uncensored.push(fit_uncensored(&data.train, &spec)?);
    }
    let stack = |members: &[CensoredModel]| -> Result<Option<EnsembleModel>> {
        if !config.ensemble {
            return Ok(None);
        }
        EnsembleModel::fit(members.to_vec(), &data.validation.x, &data.validation.y).map(Some)
    };
    Ok(FittedRun {
        families: config.families.clone(),
        ensemble_censored: stack(&censored)?,
        ensemble_uncensored: stack(&uncensored)?,
        censored,
        uncensored,
    })
}

/// Ensemble file contents; members are stored in their own model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleArtifact {
    pub kind: String,
    pub members: Vec<Family>,
    pub weights: Vec<f64>,
    pub degenerate: bool,
    pub version: String,
}

impl EnsembleArtifact {
    fn new(kind: ModelKind, model: &EnsembleModel) -> Self {
        EnsembleArtifact {
            kind: kind.name().to_string(),
            members: model.members.iter().map(|m| m.family).collect(),
            weights: model.weights.clone(),
            degenerate: model.degenerate,
            version: learners::VERSION.to_string(),
        }
    }

    fn into_model(self, path: &Path, members: &[CensoredModel]) -> Result<EnsembleModel> {
        let corrupt = |message: String| Error::Corrupt {
            path: path.to_path_buf(),
            message,
        };
        if self.members.len() != self.weights.len() {
            return Err(corrupt("member and weight counts differ".into()));
        }
        let members = self
            .members
            .iter()
            .map(|f| {
                members
                    .iter()
                    .find(|m| m.family == *f)
                    .cloned()
                    .ok_or_else(|| corrupt(format!("member {f} has no model file")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel {
            members,
            weights: self.weights,
            degenerate: self.degenerate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub split_seed: u64,
    pub dgp_seed: Option<u64>,
    pub rows: usize,
    pub files: Vec<String>,
}

fn relative(layout: &RunLayout, path: &Path) -> String {
    path.strip_prefix(&layout.root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

pub fn write_models(layout: &RunLayout, run: &FittedRun) -> Result<Vec<PathBuf>> {
    create_dir(&layout.root.join("models"))?;
    let mut written = Vec::new();
    for kind in [ModelKind::Censored, ModelKind::Uncensored] {
        for model in run.models(kind) {
            let path = layout.model(kind, model.family);
            model.write_json(&path)?;
            written.push(path);
        }
        if let Some(e) = run.ensemble(kind) {
            let path = layout.ensemble(kind);
            learners::write_json(&path, &EnsembleArtifact::new(kind, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads every model file named by the config; any missing or corrupt
/// file is an error naming it.
pub fn read_models(layout: &RunLayout, config: &RunConfig) -> Result<FittedRun> {
    let read = |kind| {
        config
            .families
            .iter()
            .map(|&f| CensoredModel::read_json(&layout.model(kind, f)))
            .collect::<Result<Vec<_>>>()
    };
    let censored = read(ModelKind::Censored)?;
    let uncensored = read(ModelKind::Uncensored)?;
    let ensemble = |kind, members: &[CensoredModel]| -> Result<Option<EnsembleModel>> {
        if !config.ensemble {
            return Ok(None);
        }
        let path = layout.ensemble(kind);
        let art: EnsembleArtifact = learners::read_json(&path)?;
        art.into_model(&path, members).map(Some)
    };
    Ok(FittedRun {
        families: config.families.clone(),
        ensemble_censored: ensemble(ModelKind::Censored, &censored)?,
        ensemble_uncensored: ensemble(ModelKind::Uncensored, &uncensored)?,
        censored,
        uncensored,
    })
}

fn split_rmse(model: &dyn Predictor, data: &Prepared) -> Result<SplitRmse> {
    let on = |dm: &DesignMatrix| rmse(&model.predict(&dm.x)?, &dm.y);
    Ok(SplitRmse {
        train: on(&data.train)?,
        validation: on(&data.validation)?,
        test: on(&data.test)?,
    })
}

struct Evaluator<'a> {
    data: &'a Prepared,
    panel: SkuPanel,
    draws: EffectDraws,
    column: usize,
    replications: usize,
    seed: u64,
}

impl Evaluator<'_> {
    fn effect(&self, model: &dyn Predictor) -> Result<MarginalEffectEstimate> {
        let x = &self.data.test.x;
        let base = model.predict(x)?;
        let shifted = model.predict_shifted(x, self.column, &self.draws.deltas)?;
        Ok(self.draws.estimate(&self.panel, &base, &shifted))
    }

    fn row(
        &self,
        label: &str,
        censored: &dyn Predictor,
        uncensored: &dyn Predictor,
        alpha: Option<f64>,
        weights: (Option<f64>, Option<f64>),
    ) -> Result<ModelRow> {
        let test = &self.data.test;
        let diff = bootstrap_rmse_diff(
            &uncensored.predict(&test.x)?,
            &censored.predict(&test.x)?,
            &test.y,
            &self.panel,
            self.replications,
            self.seed,
        )?;
        Ok(ModelRow {
            model: label.to_string(),
            censored: split_rmse(censored, self.data)?,
            uncensored: split_rmse(uncensored, self.data)?,
            alpha,
            weight_censored: weights.0,
            weight_uncensored: weights.1,
            rmse_difference: TestSummary::from(&diff),
            effect_censored: self.effect(censored)?,
            effect_uncensored: self.effect(uncensored)?,
        })
    }
}

fn ols_slopes(model: &CensoredModel) -> Option<&[f64]> {
    match &model.regressor.params {
        Params::Linear(m) => Some(&m.coefficients),
        _ => None,
    }
}

/// Rows the censored regressor was trained on: not flagged at its alpha.
fn regressor_rows(model: &CensoredModel, train: &DesignMatrix) -> Result<Vec<usize>> {
    let prob = model.classifier.predict(&train.x)?;
    Ok((0..train.nrows()).filter(|&i| prob[i] <= model.alpha).collect())
}

fn coefficient_rows(
    config: &RunConfig,
    data: &Prepared,
    run: &FittedRun,
) -> Result<Vec<CoefficientRow>> {
    let Some(idx) = run.families.iter().position(|&f| f == Family::Ols) else {
        return Ok(vec![]);
    };
    let reps = config.evaluation.coefficient_replications;
    let boot = |model: &CensoredModel, rows: &[usize]| -> Result<Vec<(f64, f64)>> {
        let dm = data.train.subset(rows);
        let panel = SkuPanel::from_design(&dm)?;
        let slopes = ols_slopes(model).expect("OLS regressor is linear");
        let res = bootstrap_ols_coefficients(&dm.x, &dm.y, &panel, slopes, reps, config.seed)?;
        Ok(res.iter().map(|b| (b.point, b.standard_error)).collect())
    };
    let all: Vec<usize> = (0..data.train.nrows()).collect();
    let unc = boot(&run.uncensored[idx], &all)?;
    let cen_model = &run.censored[idx];
    let cen = boot(cen_model, &regressor_rows(cen_model, &data.train)?)?;
    let mut rows: Vec<CoefficientRow> = data
        .train
        .column_names
        .iter()
        .zip(unc.iter().zip(&cen))
        .map(|(name, (u, c))| CoefficientRow {
            column: name.clone(),
            uncensored: u.0,
            uncensored_se: u.1,
            censored: c.0,
            censored_se: c.1,
        })
        .collect();
    // Price first, the rest in design order.
    if let Some(p) = rows.iter().position(|r| r.column == LOG_PRICE) {
        let price = rows.remove(p);
        rows.insert(0, price);
    }
    Ok(rows)
}

/// Test-set RMSE, bootstrap tests, marginal effects and coefficient table.
pub fn evaluate(config: &RunConfig, data: &Prepared, run: &FittedRun) -> Result<EvalReport> {
    let ev = &config.evaluation;
    let panel = SkuPanel::from_design(&data.test)?;
    let column = data.log_price_column()?;
    let evaluator = Evaluator {
        draws: EffectDraws::new(&panel, ev.effect_replications, ev.perturbation_range, config.seed)?,
        panel,
        data,
        column,
        replications: ev.replications,
        seed: config.seed,
    };
    let weight = |kind: ModelKind, i: usize| run.ensemble(kind).map(|e| e.weights[i]);
    let mut rows = Vec::new();
    for (i, family) in run.families.iter().enumerate() {
        info!("evaluating {family}");
        let (cen, unc) = (&run.censored[i], &run.uncensored[i]);
        rows.push(evaluator.row(
            family.label(),
            cen,
            unc,
            Some(cen.alpha),
            (weight(ModelKind::Censored, i), weight(ModelKind::Uncensored, i)),
        )?);
    }
    if let (Some(cen), Some(unc)) = (&run.ensemble_censored, &run.ensemble_uncensored) {
        info!("evaluating ensembles");
        rows.push(evaluator.row("Ensemble", cen, unc, None, (None, None))?);
    }
    let oracle = match &data.truth {
        Some(truth) => {
            let o = true_marginal_effect(
                truth,
                &data.dataset,
                &data.test,
                &data.plan,
                ev.oracle_draws,
                ev.perturbation_range,
                derive_seed(config.seed, crate::rng::streams::EFFECT),
            )?;
            let sd = data.plan.column(LOG_PRICE).map_or(1.0, |c| c.sd);
            Some(OracleSummary {
                beta_price: truth.config.beta_price / truth.log_price_sd * sd,
                marginal_effect: o.effect,
                standard_error: o.standard_error,
                perturbation_effect: o.perturbation_effect,
            })
        }
        None => None,
    };
    Ok(EvalReport {
        version: learners::VERSION.to_string(),
        seed: config.seed,
        rows,
        coefficients: coefficient_rows(config, data, run)?,
        oracle,
        test_rows: data.test.nrows(),
        test_skus: evaluator.panel.n_skus(),
    })
}

fn write_config(layout: &RunLayout, config: &RunConfig) -> Result<()> {
    write_text(&layout.config(), &config.to_toml())
}

fn write_manifest(layout: &RunLayout, config: &RunConfig, rows: usize, files: &[PathBuf]) -> Result<()> {
    let mut names: Vec<String> = files.iter().map(|p| relative(layout, p)).collect();
    names.sort();
    let manifest = Manifest {
        version: learners::VERSION.to_string(),
        seed: config.seed,
        split_seed: config.split_seed(),
        dgp_seed: (config.data.source == DataSource::Generate).then_some(config.data.dgp.seed),
        rows,
        files: names,
    };
    learners::write_json(&layout.manifest(), &manifest)
}

/// Writes the generated dataset, its vocabulary and ground truth.
pub fn cmd_generate(config: &RunConfig) -> Result<RunLayout> {
    config.validate()?;
    if config.data.source != DataSource::Generate {
        return Err(Error::validation("`generate` needs `data.source = \"generate\"`"));
    }
    let g = generate(&config.data.dgp)?;
    let layout = RunLayout::new(&config.output);
    create_dir(&layout.root.join("data"))?;
    g.dataset.write_csv(&layout.dataset())?;
    g.dataset.schema.write_json(&layout.schema())?;
    g.truth.write_json(&layout.truth())?;
    write_config(&layout, config)?;
    info!(
        "generated {} rows, zero share {:.3}",
        g.dataset.len(),
        g.dataset.zero_fraction()
    );
    Ok(layout)
}

/// Data as the run directory holds it, generating it first when needed.
fn run_data(config: &RunConfig, layout: &RunLayout) -> Result<Prepared> {
    config.validate()?;
    let (dataset, truth) = match config.data.source {
        DataSource::Generate => {
            if !layout.dataset().exists() {
                cmd_generate(config)?;
            }
            let schema = Schema::read_json(&layout.schema())?;
            let dataset = load_dataset(&layout.dataset(), &schema)?;
            (dataset, Some(GroundTruth::read_json(&layout.truth())?))
        }
        DataSource::Csv => load_configured_csv(config)?,
    };
    Prepared::new(config, dataset, truth)
}

pub fn cmd_fit(config: &RunConfig) -> Result<RunLayout> {
    let layout = RunLayout::new(&config.output);
    let data = run_data(config, &layout)?;
    let run = fit_models(config, &data)?;
    let files = write_models(&layout, &run)?;
    write_config(&layout, config)?;
    write_manifest(&layout, config, data.dataset.len(), &files)?;
    Ok(layout)
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<EvalReport> {
    let layout = RunLayout::new(&config.output);
    let data = run_data(config, &layout)?;
    let run = read_models(&layout, config)?;
    let report = evaluate(config, &data, &run)?;
    learners::write_json(&layout.evaluation(), &report)?;
    Ok(report)
}

/// Writes the JSON and text reports of a fitted run directory and returns
/// the text.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    let layout = RunLayout::new(run_dir);
    let mut config = RunConfig::load(&layout.config())?;
    config.output = run_dir.to_path_buf();
    let run = read_models(&layout, &config)?;
    let report: EvalReport = if layout.evaluation().exists() {
        learners::read_json(&layout.evaluation())?
    } else {
        let data = run_data(&config, &layout)?;
        let report = evaluate(&config, &data, &run)?;
        learners::write_json(&layout.evaluation(), &report)?;
        report
    };
    let text = report.render();
    learners::write_json(&layout.report_json(), &report)?;
    write_text(&layout.report_text(), &text)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn seed_override_reaches_every_stream() {
        let mut c = RunConfig::default();
        c.override_seed(42);
        assert_eq!((c.seed, c.split_seed(), c.data.dgp.seed), (42, 42, 42));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RunConfig::from_toml("unknown = 3").is_err());
        let mut c = RunConfig::default();
        c.families.clear();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.dgp.n = 0;
        assert!(c.validate().unwrap_err().is_validation());
        let mut c = RunConfig::default();
        c.alpha_grid = vec![0.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.source = DataSource::Csv;
        assert!(c.validate().is_err());
    }

    #[test]
    fn generate_with_zero_rows_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.output = dir.path().join("run");
        c.data.dgp.n = 0;
        assert!(cmd_generate(&c).is_err());
        assert!(!c.output.exists());
    }
}
