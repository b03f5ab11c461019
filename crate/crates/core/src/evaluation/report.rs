//! Evaluation summary and its plain-text tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{BootstrapResult, MarginalEffectEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRmse {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

/// Bootstrap result without the draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub replications: usize,
    pub point: f64,
    pub standard_error: f64,
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl From<&BootstrapResult> for TestSummary {
    fn from(b: &BootstrapResult) -> Self {
        TestSummary {
            replications: b.replications,
            point: b.point,
            standard_error: b.standard_error,
            t_statistic: b.t_statistic,
            p_value: b.p_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    /// Family label, or "Ensemble".
    pub model: String,
    pub censored: SplitRmse,
    pub uncensored: SplitRmse,
    /// Chosen threshold; absent for the ensemble.
    pub alpha: Option<f64>,
    pub weight_censored: Option<f64>,
    pub weight_uncensored: Option<f64>,
    /// Uncensored minus censored test RMSE.
    pub rmse_difference: TestSummary,
    pub effect_censored: MarginalEffectEstimate,
    pub effect_uncensored: MarginalEffectEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub column: String,
    pub uncensored: f64,
    pub uncensored_se: f64,
    pub censored: f64,
    pub censored_se: f64,
}

/// Effect implied by the generating process, when the data are synthetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub beta_price: f64,
    /// Derivative of expected demand.
    pub marginal_effect: f64,
    pub standard_error: f64,
    /// Expected sales response to the same random price steps the models
    /// are perturbed by.
    pub perturbation_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub seed: u64,
    pub rows: Vec<ModelRow>,
    /// OLS coefficients, present when OLS is among the families.
    pub coefficients: Vec<CoefficientRow>,
    pub oracle: Option<OracleSummary>,
    pub test_rows: usize,
    pub test_skus: usize,
}

fn num(v: f64, places: usize) -> String {
    format!("{v:.places$}")
}

fn opt(v: Option<f64>, places: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |v| num(v, places))
}

fn se(v: f64) -> String {
    format!("({v:.3})")
}

fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.01 => "***",
        Some(p) if p < 0.05 => "**",
        Some(p) if p < 0.1 => "*",
        _ => "",
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let total = width.iter().sum::<usize>() + 2 * (width.len() - 1);
    let mut out = String::new();
    out.push_str(&line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>()));
    out.push('\n');
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

impl EvalReport {
    /// Test RMSE with and without censoring, ensemble weights and the
    /// bootstrap test of the difference.
    pub fn rmse_table(&self) -> String {
        let header = [
            "Model",
            "RMSE uncensored",
            "RMSE censored",
            "alpha",
            "Weight unc.",
            "Weight cens.",
            "Difference",
            "t-stat",
            "p-value",
        ];
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let d = &r.rmse_difference;
                vec![
                    r.model.clone(),
                    num(r.uncensored.test, 3),
                    num(r.censored.test, 3),
                    opt(r.alpha, 2),
                    opt(r.weight_uncensored, 4),
                    opt(r.weight_censored, 4),
                    format!("{}{}", num(d.point, 3), stars(d.p_value)),
                    opt(d.t_statistic, 2),
                    opt(d.p_value, 3),
                ]
            })
            .collect();
        let mut out = table(&header, &rows);
        let _ = writeln!(
            out,
            "Test set: {} rows, {} SKUs. Standard errors from a panel bootstrap over SKUs ({} replications).",
            self.test_rows,
            self.test_skus,
            self.rows.first().map_or(0, |r| r.rmse_difference.replications)
        );
        out
    }

    /// Mean marginal effect of log price, standard errors in parentheses.
    pub fn effect_table(&self) -> String {
        let header = ["Model", "Uncensored", "", "Censored", ""];
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let (u, c) = (&r.effect_uncensored, &r.effect_censored);
                vec![
                    r.model.clone(),
                    format!("{}{}", num(u.mean_effect, 3), stars(u.p_value)),
                    se(u.standard_error),
                    format!("{}{}", num(c.mean_effect, 3), stars(c.p_value)),
                    se(c.standard_error),
                ]
            })
            .collect();
        if let Some(o) = &self.oracle {
            rows.push(vec![
                "True effect (step)".into(),
                String::new(),
                String::new(),
                num(o.perturbation_effect, 3),
                String::new(),
            ]);
            rows.push(vec![
                "True effect (derivative)".into(),
                String::new(),
                String::new(),
                num(o.marginal_effect, 3),
                se(o.standard_error),
            ]);
        }
        let mut out = table(&header, &rows);
        if let Some(r) = self.rows.first() {
            let (lo, hi) = r.effect_censored.perturbation_range;
            let _ = writeln!(
                out,
                "Random perturbation of standardized log price on [{lo}; {hi}], {} bootstrap draws.",
                r.effect_censored.replications
            );
        }
        out
    }

    /// OLS coefficients with and without censoring.
    pub fn coefficient_table(&self) -> String {
        let header = ["Variable", "Linear regression", "", "Censored linear regression", ""];
        let mut rows: Vec<Vec<String>> = self
            .coefficients
            .iter()
            .map(|c| {
                vec![
                    c.column.clone(),
                    num(c.uncensored, 3),
                    se(c.uncensored_se),
                    num(c.censored, 3),
                    se(c.censored_se),
                ]
            })
            .collect();
        if let Some(o) = &self.oracle {
            rows.push(vec![
                "true log_price".into(),
                String::new(),
                String::new(),
                num(o.beta_price, 3),
                String::new(),
            ]);
        }
        table(&header, &rows)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.coefficients.is_empty() {
            out.push_str("Price coefficients\n\n");
            out.push_str(&self.coefficient_table());
            out.push('\n');
        }
        out.push_str("RMSE with and without censorship\n\n");
        out.push_str(&self.rmse_table());
        out.push('\n');
        out.push_str("Marginal effect of price\n\n");
        out.push_str(&self.effect_table());
        out
    }
}
