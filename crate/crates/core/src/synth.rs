//! Synthetic fleets with known factor scores and known utilization degrees,
//! used to check that the breakdown recovers what was put in.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::breakdown::{contributions, BreakdownError, BreakdownModel};
use crate::compound::{CompoundName, CompoundScores, REFERENCE_LOG2_OPS};
use crate::dataset::{Dataset, DatasetError, RawSystem, SystemRecord, REGRESSOR_NAMES};
use crate::microbench::{clock_source, default_plan, scaled_plan, KernelConfig, KernelKind, MicrobenchResult};
use crate::scalar::Scalar;

pub const DEFAULT_RANGE: (f64, f64) = (0.1, 1.0);
/// A recovered coefficient counts as active above this fraction of the
/// largest recovered coefficient.
pub const ACTIVE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Breakdown(#[from] BreakdownError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    #[default]
    None,
    /// Target times scaled by `1 + σ·ε`, `ε` standard normal truncated to ±3.
    Multiplicative { sigma: f64 },
    /// Target times scaled by `1 + σ·|ε|`; never faster than noise-free.
    PositiveSkew { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationPair {
    pub a: String,
    pub b: String,
    pub rho: f64,
}

/// Which recovery metric `check` gates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CoefficientRmse,
    MaxContributionRelError,
    MaxFittedRelError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub metric: Metric,
    pub tolerance: f64,
    #[serde(default)]
    pub require_active_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_systems: usize,
    pub seed: u64,
    /// Per-regressor `[low, high]` in seconds; unlisted ones use
    /// [`DEFAULT_RANGE`].
    #[serde(default)]
    pub factor_cost_ranges: BTreeMap<String, (f64, f64)>,
    /// Target name → regressor name → coefficient; unlisted ones are zero.
    pub true_coefficients: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub noise: Noise,
    /// Off-diagonal entries of the factor correlation matrix; the rest is the
    /// identity.
    #[serde(default)]
    pub correlation: Vec<CorrelationPair>,
    #[serde(default)]
    pub check: Option<CheckSpec>,
}

/// True coefficients per target, every regressor listed.
pub type Truth = BTreeMap<String, BTreeMap<String, f64>>;

fn regressor_index(name: &str) -> Option<usize> {
    REGRESSOR_NAMES.iter().position(|n| *n == name)
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let spec: Self = toml::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SynthError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text =
            fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_systems == 0 {
            return bad("n_systems must be positive".into());
        }
        for (name, &(lo, hi)) in &self.factor_cost_ranges {
            if regressor_index(name).is_none() {
                return bad(format!("unknown regressor '{name}' in factor_cost_ranges"));
            }
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("range for {name} must satisfy 0 < low <= high < inf"));
            }
        }
        if self.true_coefficients.is_empty() {
            return bad("at least one target is required".into());
        }
        for (target, coefs) in &self.true_coefficients {
            if target.is_empty() || target == crate::dataset::SUSPECT_COLUMN {
                return bad(format!("invalid target name '{target}'"));
            }
            for (name, &c) in coefs {
                if regressor_index(name).is_none() {
                    return bad(format!("unknown regressor '{name}' for target {target}"));
                }
                if !(c >= 0.0 && c.is_finite()) {
                    return bad(format!("coefficient {target}.{name} must be nonnegative and finite"));
                }
            }
            if !coefs.values().any(|&c| c > 0.0) {
                return bad(format!("target {target} has no positive coefficient, so its scores would be zero"));
            }
        }
        match self.noise {
            Noise::None => {}
            Noise::Multiplicative { sigma } if !(0.0..1.0 / 3.0).contains(&sigma) => {
                return bad("multiplicative sigma must be in [0, 1/3)".into())
            }
            Noise::PositiveSkew { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return bad("positive_skew sigma must be nonnegative".into())
            }
            _ => {}
        }
        self.correlation_factor()?;
        Ok(())
    }

    fn range(&self, j: usize) -> (f64, f64) {
        self.factor_cost_ranges.get(REGRESSOR_NAMES[j]).copied().unwrap_or(DEFAULT_RANGE)
    }

    /// Full 12×12 correlation matrix.
    pub fn correlation_matrix(&self) -> Result<[[f64; 12]; 12], SynthError> {
        let mut c = [[0.0; 12]; 12];
        for (j, row) in c.iter_mut().enumerate() {
            row[j] = 1.0;
        }
        let mut seen = BTreeSet::new();
        for p in &self.correlation {
            let (Some(a), Some(b)) = (regressor_index(&p.a), regressor_index(&p.b)) else {
                return Err(SynthError::InvalidSpec(format!("unknown regressor in correlation {}/{}", p.a, p.b)));
            };
            if a == b || !(-1.0..=1.0).contains(&p.rho) || !seen.insert((a.min(b), a.max(b))) {
                return Err(SynthError::InvalidSpec(format!("bad correlation entry {}/{} = {}", p.a, p.b, p.rho)));
            }
            c[a][b] = p.rho;
            c[b][a] = p.rho;
        }
        Ok(c)
    }

    /// Lower-triangular `L` with `L·Lᵀ = C`; fails unless `C` is positive
    /// semidefinite.
    fn correlation_factor(&self) -> Result<[[f64; 12]; 12], SynthError> {
        let c = self.correlation_matrix()?;
        let mut l = [[0.0; 12]; 12];
        for j in 0..12 {
            let d = c[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
            if d < -1e-10 {
                return Err(SynthError::InvalidSpec("correlation matrix is not positive semidefinite".into()));
            }
            let d = d.max(0.0).sqrt();
            l[j][j] = d;
            for i in j + 1..12 {
                let s = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                l[i][j] = if d > 1e-12 {
                    s / d
                } else if s.abs() > 1e-8 {
                    return Err(SynthError::InvalidSpec("correlation matrix is not positive semidefinite".into()));
                } else {
                    0.0
                };
            }
        }
        Ok(l)
    }

    pub fn truth(&self) -> Truth {
        self.true_coefficients
            .iter()
            .map(|(t, coefs)| {
                let full =
                    REGRESSOR_NAMES.iter().map(|n| (n.to_string(), coefs.get(*n).copied().unwrap_or(0.0))).collect();
                (t.clone(), full)
            })
            .collect()
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn noise_factor(noise: Noise, rng: &mut ChaCha8Rng) -> f64 {
    match noise {
        Noise::None => 1.0,
        Noise::Multiplicative { sigma } => {
            let e: f64 = StandardNormal.sample(rng);
            1.0 + sigma * e.clamp(-3.0, 3.0)
        }
        Noise::PositiveSkew { sigma } => {
            let e: f64 = StandardNormal.sample(rng);
            1.0 + sigma * e.abs()
        }
    }
}

fn system_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(2);
    format!("sys{:0width$}", i + 1)
}

/// Factor values of every system, drawn through a Gaussian copula so the
/// requested correlation holds approximately while each column stays within
/// its range.
fn draw_factors(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 12]>, SynthError> {
    let l = spec.correlation_factor()?;
    Ok((0..spec.n_systems)
        .map(|_| {
            let z: [f64; 12] = std::array::from_fn(|_| StandardNormal.sample(&mut *rng));
            std::array::from_fn(|j| {
                let u: f64 = (0..=j).map(|k| l[j][k] * z[k]).sum();
                let (lo, hi) = spec.range(j);
                lo + (hi - lo) * normal_cdf(u)
            })
        })
        .collect())
}

fn score(coefs: &BTreeMap<String, f64>, x: &[f64; 12]) -> f64 {
    REGRESSOR_NAMES.iter().zip(x).fold(0.0, |acc, (n, &v)| acc + coefs[*n] * v)
}

fn record_from(id: String, x: &[f64; 12], targets: BTreeMap<String, f64>) -> SystemRecord {
    let values = CompoundName::ALL.iter().zip(&x[1..]).map(|(&c, &v)| (c, v)).collect();
    SystemRecord {
        system_id: id,
        metadata: BTreeMap::from([("source".to_string(), "synthetic".to_string())]),
        compound: CompoundScores { values, loop31: x[0], plan_shift: 0 },
        targets,
        suspect_flags: BTreeSet::new(),
    }
}

/// Draws a fleet and its target scores `y = Σ β_j x_j` (then noise).
/// Deterministic for a fixed seed.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, Truth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = spec.truth();
    let factors = draw_factors(spec, &mut rng)?;
    let records = factors
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let targets = truth
                .iter()
                .map(|(t, coefs)| (t.clone(), score(coefs, x) * noise_factor(spec.noise, &mut rng)))
                .collect();
            record_from(system_id(i, spec.n_systems), x, targets)
        })
        .collect();
    Ok((Dataset::new(records)?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawOptions {
    pub micro_trials: usize,
    pub target_trials: usize,
    /// Plan shift applied to the default sizes.
    pub shift: u32,
}

impl Default for RawOptions {
    fn default() -> Self {
        Self { micro_trials: 5, target_trials: 3, shift: 0 }
    }
}

/// Noise-free duration of one configuration: loop overhead plus `k`
/// operations of the configuration's class per iteration, for `2^n`
/// iterations, where the factor values are per 2^31 operations.
pub fn synthetic_duration(config: KernelConfig, factors: &[f64; 12]) -> f64 {
    let per_iter = match config.kind {
        KernelKind::Loop => factors[0],
        kind => {
            let j =
                1 + CompoundName::ALL.iter().position(|c| c.formula().kind == kind).expect("every kind has a compound");
            factors[0] + f64::from(config.k) * factors[j]
        }
    };
    per_iter * 2f64.powi(config.n as i32 - REFERENCE_LOG2_OPS)
}

/// The same fleet as [`generate`], emitted as raw trial rows for every plan
/// configuration, so the compound stage runs end to end. The noise is applied
/// to every trial independently.
pub fn generate_raw(spec: &SynthSpec, options: &RawOptions) -> Result<(Vec<RawSystem>, Truth), SynthError> {
    spec.validate()?;
    if options.micro_trials == 0 || options.target_trials == 0 {
        return Err(SynthError::InvalidSpec("trial counts must be positive".into()));
    }
    let plan = if options.shift == 0 {
        default_plan()
    } else {
        scaled_plan(options.shift).map_err(|e| SynthError::InvalidSpec(e.to_string()))?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = spec.truth();
    let factors = draw_factors(spec, &mut rng)?;
    let systems = factors
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let micro = plan
                .iter()
                .map(|&config| {
                    let t = synthetic_duration(config, x);
                    MicrobenchResult {
                        config,
                        trials: (0..options.micro_trials).map(|_| t * noise_factor(spec.noise, &mut rng)).collect(),
                        checksum: 0,
                        clock_source: format!("synthetic ({})", clock_source()),
                    }
                })
                .collect();
            let targets = truth
                .iter()
                .map(|(t, coefs)| {
                    let y = score(coefs, x);
                    (t.clone(), (0..options.target_trials).map(|_| y * noise_factor(spec.noise, &mut rng)).collect())
                })
                .collect();
            RawSystem {
                system_id: system_id(i, spec.n_systems),
                metadata: BTreeMap::from([("source".to_string(), "synthetic".to_string())]),
                micro,
                targets,
            }
        })
        .collect();
    Ok((systems, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecovery {
    pub target: String,
    pub coefficient_rmse: f64,
    /// Largest `|ĉ − c|` over systems and factors, relative to the system's
    /// noise-free score.
    pub max_contribution_rel_error: f64,
    /// Largest relative gap between the fitted and noise-free score.
    pub max_fitted_rel_error: f64,
    pub active_set_match: bool,
    pub true_active: Vec<String>,
    pub recovered_active: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub coefficient_rmse: f64,
    pub max_contribution_rel_error: f64,
    pub max_fitted_rel_error: f64,
    pub active_set_match: bool,
    pub per_target: Vec<TargetRecovery>,
}

impl RecoveryReport {
    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::CoefficientRmse => self.coefficient_rmse,
            Metric::MaxContributionRelError => self.max_contribution_rel_error,
            Metric::MaxFittedRelError => self.max_fitted_rel_error,
        }
    }

    /// Worst case over the given per-target results.
    pub fn combine(per_target: Vec<TargetRecovery>) -> Self {
        Self {
            coefficient_rmse: per_target.iter().map(|t| t.coefficient_rmse).fold(0.0, f64::max),
            max_contribution_rel_error: per_target.iter().map(|t| t.max_contribution_rel_error).fold(0.0, f64::max),
            max_fitted_rel_error: per_target.iter().map(|t| t.max_fitted_rel_error).fold(0.0, f64::max),
            active_set_match: per_target.iter().all(|t| t.active_set_match),
            per_target,
        }
    }
}

/// Compares a fitted model with the generating coefficients on the dataset
/// it was fitted on.
pub fn evaluate_recovery<T: Scalar>(
    model: &BreakdownModel<T>,
    dataset: &Dataset,
    truth: &Truth,
) -> Result<TargetRecovery, SynthError> {
    let beta = truth
        .get(&model.target)
        .ok_or_else(|| SynthError::InvalidSpec(format!("no true coefficients for target {}", model.target)))?;
    let table = contributions(model, dataset)?;
    let true_coef = |name: &str| beta.get(name).copied().unwrap_or(0.0);

    let coefs: Vec<f64> = model.coefficients.iter().map(|c| c.as_f64()).collect();
    let sq: f64 = model.regressor_names.iter().zip(&coefs).map(|(n, &c)| (c - true_coef(n)).powi(2)).sum();
    let coefficient_rmse = (sq / coefs.len() as f64).sqrt();

    let mut max_contribution_rel_error = 0.0f64;
    let mut max_fitted_rel_error = 0.0f64;
    for (system, record) in table.systems.iter().zip(dataset.records()) {
        debug_assert_eq!(system.system_id, record.system_id);
        let x = record.regressors();
        let true_total = REGRESSOR_NAMES.iter().zip(&x).fold(0.0, |acc, (n, &v)| acc + true_coef(n) * v);
        if true_total <= 0.0 {
            continue;
        }
        for e in &system.entries {
            let truth_c = regressor_index(&e.name).map_or(0.0, |j| true_coef(&e.name) * x[j]);
            max_contribution_rel_error =
                max_contribution_rel_error.max((e.seconds.as_f64() - truth_c).abs() / true_total);
        }
        max_fitted_rel_error = max_fitted_rel_error.max((system.fitted_score.as_f64() - true_total).abs() / true_total);
    }

    let (true_active, recovered_active) = active_sets(&model.regressor_names, &coefs, beta);
    Ok(TargetRecovery {
        target: model.target.clone(),
        coefficient_rmse,
        max_contribution_rel_error,
        max_fitted_rel_error,
        active_set_match: true_active == recovered_active,
        true_active,
        recovered_active,
    })
}

fn active_sets(names: &[String], coefs: &[f64], beta: &BTreeMap<String, f64>) -> (Vec<String>, Vec<String>) {
    let max = coefs.iter().copied().fold(0.0, f64::max);
    let threshold = ACTIVE_THRESHOLD * max;
    let recovered = names.iter().zip(coefs).filter(|(_, &c)| c > threshold).map(|(n, _)| n.clone()).collect();
    let truth = names.iter().filter(|n| beta.get(*n).is_some_and(|&c| c > 0.0)).cloned().collect();
    (truth, recovered)
}
