use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::svg::{render_svg, SvgOptions};
use super::{BreakdownError, BreakdownModel, ContributionTable, Warning};
use crate::scalar::Scalar;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(format!("unknown report format '{s}' (expected csv, json or svg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEntry {
    pub name: String,
    pub seconds: f64,
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system_id: String,
    #[serde(rename = "true")]
    pub true_score: f64,
    pub fitted: f64,
    pub residual: f64,
    pub contributions: Vec<ContributionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
    pub condition: f64,
}

/// Precision-independent view of a fitted model and its contribution table;
/// the unit every report format is written from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub schema: u32,
    pub target: String,
    pub regressors: Vec<String>,
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    pub systems: Vec<SystemReport>,
    pub warnings: Vec<Warning>,
    pub solver: SolverSummary,
}

impl BreakdownReport {
    pub fn new<T: Scalar>(model: &BreakdownModel<T>, table: &ContributionTable<T>) -> Result<Self, BreakdownError> {
        if table.target != model.target || table.regressor_names != model.regressor_names {
            return Err(BreakdownError::ModelMismatch("contribution table belongs to another model".into()));
        }
        let systems = table
            .systems
            .iter()
            .zip(&model.residuals)
            .map(|(s, &r)| SystemReport {
                system_id: s.system_id.clone(),
                true_score: s.true_score.as_f64(),
                fitted: s.fitted_score.as_f64(),
                residual: r.as_f64(),
                contributions: s
                    .entries
                    .iter()
                    .map(|e| ContributionEntry {
                        name: e.name.clone(),
                        seconds: e.seconds.as_f64(),
                        share: e.share.map(Scalar::as_f64),
                    })
                    .collect(),
            })
            .collect();
        let mut warnings = model.warnings.clone();
        warnings.extend(table.warnings.iter().cloned());
        Ok(Self {
            schema: REPORT_SCHEMA_VERSION,
            target: model.target.clone(),
            regressors: model.regressor_names.clone(),
            coefficients: model.coefficients.iter().map(|c| c.as_f64()).collect(),
            r_squared: model.r_squared.as_f64(),
            systems,
            warnings,
            solver: SolverSummary {
                iterations: model.solution.iterations,
                converged: model.solution.converged,
                residual_norm: model.solution.residual_norm.as_f64(),
                condition: model.solution.condition.as_f64(),
            },
        })
    }

    pub fn to_json(&self) -> Result<String, BreakdownError> {
        serde_json::to_string_pretty(self).map(|s| s + "\n").map_err(|e| BreakdownError::Report(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, BreakdownError> {
        let report: Self = serde_json::from_str(text).map_err(|e| BreakdownError::Report(e.to_string()))?;
        if report.schema != REPORT_SCHEMA_VERSION {
            return Err(BreakdownError::Report(format!("unsupported report schema {}", report.schema)));
        }
        Ok(report)
    }

    /// One row per system with its contribution per regressor, followed by
    /// `#`-prefixed lines for coefficients, residuals and warnings.
    pub fn to_csv(&self) -> Result<String, BreakdownError> {
        let csv_err = |e: csv::Error| BreakdownError::Report(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["system_id".to_string(), "true".into(), "fitted".into()];
        header.extend(self.regressors.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.systems {
            let mut row = vec![s.system_id.clone(), s.true_score.to_string(), s.fitted.to_string()];
            row.extend(s.contributions.iter().map(|c| c.seconds.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let mut out = String::from_utf8(w.into_inner().map_err(|e| BreakdownError::Report(e.to_string()))?)
            .expect("csv output is utf-8");
        let _ = writeln!(out, "# target,{}", self.target);
        let coefs: Vec<String> = self.coefficients.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "# coefficients,{}", coefs.join(","));
        let _ = writeln!(out, "# r_squared,{}", self.r_squared);
        for s in &self.systems {
            let _ = writeln!(out, "# residual,{},{}", s.system_id, s.residual);
        }
        for warning in &self.warnings {
            let _ = writeln!(out, "# warning,{}", warning.to_string().replace('\n', " "));
        }
        Ok(out)
    }

    pub fn to_svg(&self, options: &SvgOptions) -> String {
        render_svg(self, options)
    }

    pub fn render(&self, format: ReportFormat, svg: &SvgOptions) -> Result<String, BreakdownError> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
            ReportFormat::Svg => Ok(self.to_svg(svg)),
        }
    }

    /// Writes the report in `format` to `path`.
    pub fn write(&self, path: &Path, format: ReportFormat, svg: &SvgOptions) -> Result<(), BreakdownError> {
        let text = self.render(format, svg)?;
        fs::write(path, text).map_err(|source| BreakdownError::Io { path: path.display().to_string(), source })
    }

    pub fn read_json(path: &Path) -> Result<Self, BreakdownError> {
        let text = fs::read_to_string(path)
            .map_err(|source| BreakdownError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}
