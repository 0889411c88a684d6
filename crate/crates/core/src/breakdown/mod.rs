//! Regression of a target score on the factor scores across systems, and the
//! per-system decomposition of the fitted score into factor contributions.

mod report;
mod svg;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::linalg::Matrix;
use crate::nnls::{nnls_solve, NnlsError, NnlsProblem, NnlsSolution};
use crate::scalar::Scalar;

pub use report::{
    BreakdownReport, ContributionEntry, ReportFormat, SolverSummary, SystemReport, REPORT_SCHEMA_VERSION,
};
pub use svg::SvgOptions;

pub const INTERCEPT_NAME: &str = "intercept";
/// Passive-set condition estimate above which a collinearity warning is raised.
pub const COLLINEARITY_THRESHOLD: f64 = 1e8;

#[derive(Debug, Error)]
pub enum BreakdownError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nnls(#[from] NnlsError),
    #[error("model does not match dataset: {0}")]
    ModelMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions<T> {
    /// Overrides the solver's default gradient tolerance.
    pub tol: Option<T>,
    pub max_iter: Option<usize>,
    /// Appends a constant column, for sensitivity checks only.
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    UnderDetermined { systems: usize, regressors: usize },
    Collinearity { columns: Vec<String>, condition: f64 },
    RankDeficient { columns: Vec<String> },
    NotConverged { iterations: usize },
    ZeroFit { system_id: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::UnderDetermined { systems, regressors } => {
                write!(
                    f,
                    "under-determined: {systems} systems for {regressors} regressors; coefficients are not unique"
                )
            }
            Warning::Collinearity { columns, condition } => {
                write!(
                    f,
                    "collinear factors {} (condition {condition:.3e}); attribution among them is unreliable",
                    columns.join(", ")
                )
            }
            Warning::RankDeficient { columns } => {
                write!(f, "linearly dependent factors dropped: {}", columns.join(", "))
            }
            Warning::NotConverged { iterations } => {
                write!(f, "solver stopped after {iterations} iterations without convergence")
            }
            Warning::ZeroFit { system_id } => write!(f, "{system_id}: fitted score is zero, shares undefined"),
        }
    }
}

/// Fitted utilization degrees for one target.
#[derive(Debug, Clone)]
pub struct BreakdownModel<T> {
    pub target: String,
    pub regressor_names: Vec<String>,
    /// Nonnegative, in `regressor_names` order.
    pub coefficients: Vec<T>,
    pub system_ids: Vec<String>,
    pub observed: Vec<T>,
    pub fitted: Vec<T>,
    /// Observed minus fitted.
    pub residuals: Vec<T>,
    pub r_squared: T,
    pub warnings: Vec<Warning>,
    pub intercept: bool,
    pub solution: NnlsSolution<T>,
}

impl<T: Scalar> BreakdownModel<T> {
    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.regressor_names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }

    pub fn fitted_for(&self, system_id: &str) -> Option<T> {
        self.system_ids.iter().position(|s| s == system_id).map(|i| self.fitted[i])
    }

    /// Names of nonzero coefficients.
    pub fn active_factors(&self) -> Vec<&str> {
        self.regressor_names
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, &c)| c > T::zero())
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// `Σ_j c_j · x_j`, accumulated in regressor order. Fitted scores and
/// contribution sums both go through here so they agree bit for bit.
fn combine<T: Scalar>(coefficients: &[T], row: &[T]) -> T {
    coefficients.iter().zip(row).fold(T::zero(), |acc, (&c, &x)| acc + c * x)
}

type DesignParts<T> = (Matrix<T>, Vec<T>, Vec<String>, Vec<String>);

fn design_for<T: Scalar>(dataset: &Dataset, target: &str, intercept: bool) -> Result<DesignParts<T>, DatasetError> {
    let a = dataset.assemble(target)?;
    let mut design = a.design.map(T::of);
    let mut names = a.regressor_names;
    if intercept {
        design = design.with_constant_column(T::one());
        names.push(INTERCEPT_NAME.to_string());
    }
    Ok((design, a.y.into_iter().map(T::of).collect(), a.system_ids, names))
}

/// Fits `target` on `[loop31, C_Ia, …, C_Fsl]` by non-negative least squares
/// with no free intercept unless `options.intercept` is set.
pub fn fit<T: Scalar>(
    dataset: &Dataset,
    target: &str,
    options: &FitOptions<T>,
) -> Result<BreakdownModel<T>, BreakdownError> {
    let (design, y, system_ids, names) = design_for::<T>(dataset, target, options.intercept)?;
    fit_design(target, &design, y, system_ids, names, options)
}

/// [`fit`] on an already assembled design; `names` must include the
/// intercept column when `options.intercept` is set.
pub fn fit_design<T: Scalar>(
    target: &str,
    design: &Matrix<T>,
    y: Vec<T>,
    system_ids: Vec<String>,
    names: Vec<String>,
    options: &FitOptions<T>,
) -> Result<BreakdownModel<T>, BreakdownError> {
    let (n, p) = (design.rows(), design.cols());
    if system_ids.len() != n || names.len() != p {
        return Err(BreakdownError::ModelMismatch("labels do not match the design shape".into()));
    }
    let mut problem = NnlsProblem::new(design.clone(), y.clone())?;
    if let Some(tol) = options.tol {
        problem = problem.with_tol(tol);
    }
    if let Some(max_iter) = options.max_iter {
        problem = problem.with_max_iter(max_iter);
    }
    let solution = nnls_solve(&problem)?;
    let coefficients = solution.x.clone();

    let fitted: Vec<T> = (0..n).map(|i| combine(&coefficients, design.row(i))).collect();
    let residuals: Vec<T> = y.iter().zip(&fitted).map(|(&o, &f)| o - f).collect();
    let mean = y.iter().copied().sum::<T>() / T::of_usize(n);
    let ss_tot = y.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean));
    let ss_res = residuals.iter().fold(T::zero(), |acc, &r| acc + r * r);
    let r_squared = if ss_tot > T::zero() {
        T::one() - ss_res / ss_tot
    } else if ss_res == T::zero() {
        T::one()
    } else {
        T::zero()
    };

    let mut warnings = Vec::new();
    if n < p {
        warnings.push(Warning::UnderDetermined { systems: n, regressors: p });
    }
    if !solution.converged {
        warnings.push(Warning::NotConverged { iterations: solution.iterations });
    }
    if !solution.rank_deficient.is_empty() {
        warnings.push(Warning::RankDeficient {
            columns: solution.rank_deficient.iter().map(|&j| names[j].clone()).collect(),
        });
    }
    if solution.condition.as_f64() > COLLINEARITY_THRESHOLD {
        let columns = names.iter().zip(&coefficients).filter(|(_, &c)| c > T::zero()).map(|(n, _)| n.clone()).collect();
        warnings.push(Warning::Collinearity { columns, condition: solution.condition.as_f64() });
    }

    Ok(BreakdownModel {
        target: target.to_string(),
        regressor_names: names,
        coefficients,
        system_ids,
        observed: y,
        fitted,
        residuals,
        r_squared,
        warnings,
        intercept: options.intercept,
        solution,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contribution<T> {
    pub name: String,
    pub seconds: T,
    /// `None` when the fitted score is zero.
    pub share: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemContributions<T> {
    pub system_id: String,
    pub true_score: T,
    pub fitted_score: T,
    /// One entry per regressor, in regressor order.
    pub entries: Vec<Contribution<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTable<T> {
    pub target: String,
    pub regressor_names: Vec<String>,
    pub systems: Vec<SystemContributions<T>>,
    pub warnings: Vec<Warning>,
}

/// Splits every system's fitted score into `coefficient · factor` terms.
pub fn contributions<T: Scalar>(
    model: &BreakdownModel<T>,
    dataset: &Dataset,
) -> Result<ContributionTable<T>, BreakdownError> {
    let (design, y, system_ids, names) = design_for::<T>(dataset, &model.target, model.intercept)?;
    if system_ids != model.system_ids || names != model.regressor_names {
        return Err(BreakdownError::ModelMismatch("systems or regressors differ from the fitted ones".into()));
    }
    let mut warnings = Vec::new();
    let systems = system_ids
        .into_iter()
        .enumerate()
        .map(|(i, system_id)| {
            let row = design.row(i);
            let fitted_score = combine(&model.coefficients, row);
            let positive = fitted_score > T::zero();
            if !positive {
                warnings.push(Warning::ZeroFit { system_id: system_id.clone() });
            }
            let entries = names
                .iter()
                .zip(&model.coefficients)
                .zip(row)
                .map(|((name, &c), &x)| {
                    let seconds = c * x;
                    Contribution { name: name.clone(), seconds, share: positive.then(|| seconds / fitted_score) }
                })
                .collect();
            SystemContributions { system_id, true_score: y[i], fitted_score, entries }
        })
        .collect();
    Ok(ContributionTable { target: model.target.clone(), regressor_names: names, systems, warnings })
}
