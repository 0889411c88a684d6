//! Compound scores: the difference of two unroll factors of one kernel,
//! normalized to the time of 2^31 operations, which cancels the loop overhead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{summarize_trials, Summarizer};
use crate::microbench::{KernelConfig, KernelKind, MicrobenchResult};
use crate::scalar::Scalar;

/// Every compound score is expressed as the time of 2^31 operations.
pub const REFERENCE_LOG2_OPS: i32 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CompoundName {
    #[serde(rename = "C_Ia")]
    IntAdd,
    #[serde(rename = "C_Im")]
    IntMul,
    #[serde(rename = "C_Iam")]
    IntAddMul,
    #[serde(rename = "C_Id")]
    IntDiv,
    #[serde(rename = "C_Is")]
    IntStore,
    #[serde(rename = "C_Isl")]
    IntStoreLoad,
    #[serde(rename = "C_Fa")]
    FpAdd,
    #[serde(rename = "C_Fm")]
    FpMul,
    #[serde(rename = "C_Fd")]
    FpDiv,
    #[serde(rename = "C_Fs")]
    FpStore,
    #[serde(rename = "C_Fsl")]
    FpStoreLoad,
}

/// Which kernel pair a compound score differences, and at what size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formula {
    pub kind: KernelKind,
    pub k_hi: u32,
    pub k_lo: u32,
    pub n: u32,
}

impl CompoundName {
    pub const ALL: [CompoundName; 11] = [
        CompoundName::IntAdd,
        CompoundName::IntMul,
        CompoundName::IntAddMul,
        CompoundName::IntDiv,
        CompoundName::IntStore,
        CompoundName::IntStoreLoad,
        CompoundName::FpAdd,
        CompoundName::FpMul,
        CompoundName::FpDiv,
        CompoundName::FpStore,
        CompoundName::FpStoreLoad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompoundName::IntAdd => "C_Ia",
            CompoundName::IntMul => "C_Im",
            CompoundName::IntAddMul => "C_Iam",
            CompoundName::IntDiv => "C_Id",
            CompoundName::IntStore => "C_Is",
            CompoundName::IntStoreLoad => "C_Isl",
            CompoundName::FpAdd => "C_Fa",
            CompoundName::FpMul => "C_Fm",
            CompoundName::FpDiv => "C_Fd",
            CompoundName::FpStore => "C_Fs",
            CompoundName::FpStoreLoad => "C_Fsl",
        }
    }

    pub fn formula(self) -> Formula {
        use KernelKind::*;
        let (kind, k_hi, k_lo, n) = match self {
            CompoundName::IntAdd => (IntAdd, 24, 6, 27),
            CompoundName::IntMul => (IntMul, 16, 4, 27),
            CompoundName::IntAddMul => (IntAddMul, 24, 6, 26),
            CompoundName::IntDiv => (IntDiv, 24, 6, 26),
            CompoundName::IntStore => (IntStore, 24, 6, 29),
            CompoundName::IntStoreLoad => (IntStoreLoad, 16, 4, 27),
            CompoundName::FpAdd => (FpAdd, 16, 4, 27),
            CompoundName::FpMul => (FpMul, 16, 4, 27),
            CompoundName::FpDiv => (FpDiv, 16, 4, 24),
            CompoundName::FpStore => (FpStore, 16, 4, 29),
            CompoundName::FpStoreLoad => (FpStoreLoad, 16, 4, 27),
        };
        Formula { kind, k_hi, k_lo, n }
    }

    pub fn interpretation(self) -> &'static str {
        match self {
            CompoundName::IntAdd => "integer add",
            CompoundName::IntMul => "integer multiply",
            CompoundName::IntAddMul => "interleaved integer add and multiply",
            CompoundName::IntDiv => "integer division",
            CompoundName::IntStore => "integer store to one address",
            CompoundName::IntStoreLoad => "interleaved integer store and load on one address",
            CompoundName::FpAdd => "floating point add",
            CompoundName::FpMul => "floating point multiply",
            CompoundName::FpDiv => "floating point divide",
            CompoundName::FpStore => "floating point store to one address",
            CompoundName::FpStoreLoad => "interleaved floating point store and load on one address",
        }
    }
}

impl fmt::Display for CompoundName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CompoundName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CompoundName::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown compound score '{s}'"))
    }
}

/// What to do when the larger unroll factor is not slower than the smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaPolicy {
    #[default]
    Strict,
    /// Clamp the score to zero and report it as suspect.
    Clamp,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompoundError {
    #[error("invalid compound input: {0}")]
    InvalidInput(String),
    #[error("{}: larger unroll was not slower (delta {delta:e} s)", name.map_or("compound score", |n| n.name()))]
    NonPositiveDelta { name: Option<CompoundName>, delta: f64 },
    #[error("{name}: missing measurement {config}")]
    MissingConfig { name: CompoundName, config: KernelConfig },
    #[error("suite has no loop measurement")]
    MissingLoop,
    #[error("configuration {0} measured more than once")]
    DuplicateConfig(KernelConfig),
    #[error("{config}: {reason}")]
    BadTrials { config: KernelConfig, reason: String },
}

/// `((t_hi − t_lo) / (k_hi − k_lo)) · 2^31 / 2^n`: the time of 2^31
/// operations of one class.
pub fn compound_one<T: Scalar>(
    t_hi: T,
    t_lo: T,
    k_hi: u32,
    k_lo: u32,
    n: u32,
    policy: DeltaPolicy,
) -> Result<T, CompoundError> {
    if k_lo < 1 || k_hi <= k_lo {
        return Err(CompoundError::InvalidInput(format!("need k_hi > k_lo >= 1, got {k_hi}, {k_lo}")));
    }
    if n < 1 {
        return Err(CompoundError::InvalidInput("n must be at least 1".into()));
    }
    if !(t_hi > T::zero() && t_lo > T::zero()) || !t_hi.is_finite() || !t_lo.is_finite() {
        return Err(CompoundError::InvalidInput(format!("durations must be positive and finite, got {t_hi}, {t_lo}")));
    }
    let delta = t_hi - t_lo;
    if delta <= T::zero() {
        return match policy {
            DeltaPolicy::Strict => Err(CompoundError::NonPositiveDelta { name: None, delta: delta.as_f64() }),
            DeltaPolicy::Clamp => Ok(T::zero()),
        };
    }
    let scale = T::of(2.0).powi(REFERENCE_LOG2_OPS - n as i32);
    Ok(delta / T::of(f64::from(k_hi - k_lo)) * scale)
}

/// Trials of one configuration, at any precision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSeries<T> {
    pub config: KernelConfig,
    pub trials: Vec<T>,
}

impl From<&MicrobenchResult> for TrialSeries<f64> {
    fn from(r: &MicrobenchResult) -> Self {
        Self { config: r.config, trials: r.trials.clone() }
    }
}

/// The eleven compound scores plus the loop score of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundScores<T> {
    pub values: BTreeMap<CompoundName, T>,
    /// Loop time scaled to 2^31 iterations.
    pub loop31: T,
    /// How far the measured plan was shifted below the default sizes.
    #[serde(default)]
    pub plan_shift: u32,
}

impl<T: Scalar> CompoundScores<T> {
    pub fn new(loop31: T, values: BTreeMap<CompoundName, T>, plan_shift: u32) -> Result<Self, CompoundError> {
        if loop31 <= T::zero() || !loop31.is_finite() {
            return Err(CompoundError::InvalidInput(format!("loop31 must be positive and finite, got {loop31}")));
        }
        for name in CompoundName::ALL {
            match values.get(&name) {
                None => return Err(CompoundError::InvalidInput(format!("{name} missing"))),
                Some(v) if !v.is_finite() => return Err(CompoundError::InvalidInput(format!("{name} is not finite"))),
                Some(_) => {}
            }
        }
        Ok(Self { values, loop31, plan_shift })
    }

    pub fn get(&self, name: CompoundName) -> T {
        self.values[&name]
    }

    /// `[loop31, C_Ia, …, C_Fsl]`.
    pub fn regressors(&self) -> [T; 12] {
        let mut out = [self.loop31; 12];
        for (slot, name) in out[1..].iter_mut().zip(CompoundName::ALL) {
            *slot = self.get(name);
        }
        out
    }
}

/// Summarizes each configuration's trials and evaluates all eleven compound
/// scores. A uniformly shifted plan is recognized from the loop size. Returns
/// the scores and the names clamped under [`DeltaPolicy::Clamp`].
pub fn compound_all<T: Scalar>(
    suite: &[TrialSeries<T>],
    summarizer: Summarizer,
    policy: DeltaPolicy,
) -> Result<(CompoundScores<T>, BTreeSet<CompoundName>), CompoundError> {
    let mut by_config = BTreeMap::new();
    for s in suite {
        if by_config.insert(s.config, s).is_some() {
            return Err(CompoundError::DuplicateConfig(s.config));
        }
    }
    let summary = |config: KernelConfig| -> Result<T, CompoundError> {
        let s = by_config[&config];
        summarize_trials(&s.trials, summarizer).map_err(|e| CompoundError::BadTrials { config, reason: e.to_string() })
    };

    let mut loops = suite.iter().filter(|s| s.config.kind == KernelKind::Loop);
    let loop_cfg = loops.next().ok_or(CompoundError::MissingLoop)?.config;
    if let Some(other) = loops.next() {
        return Err(CompoundError::InvalidInput(format!(
            "more than one loop measurement ({loop_cfg}, {})",
            other.config
        )));
    }
    let shift = (REFERENCE_LOG2_OPS as u32)
        .checked_sub(loop_cfg.n)
        .ok_or_else(|| CompoundError::InvalidInput(format!("{loop_cfg} is larger than loop(31)")))?;

    let mut values = BTreeMap::new();
    let mut suspect = BTreeSet::new();
    for name in CompoundName::ALL {
        let f = name.formula();
        let n = f.n.checked_sub(shift).filter(|&n| n >= 1).ok_or_else(|| {
            CompoundError::InvalidInput(format!("plan shift {shift} leaves no valid size for {name}"))
        })?;
        let hi = KernelConfig { kind: f.kind, k: f.k_hi, n };
        let lo = KernelConfig { kind: f.kind, k: f.k_lo, n };
        for config in [hi, lo] {
            if !by_config.contains_key(&config) {
                return Err(CompoundError::MissingConfig { name, config });
            }
        }
        let (t_hi, t_lo) = (summary(hi)?, summary(lo)?);
        let value = compound_one(t_hi, t_lo, f.k_hi, f.k_lo, n, policy).map_err(|e| match e {
            CompoundError::NonPositiveDelta { delta, .. } => {
                CompoundError::NonPositiveDelta { name: Some(name), delta }
            }
            other => other,
        })?;
        if value == T::zero() {
            suspect.insert(name);
        }
        values.insert(name, value);
    }
    let loop31 = summary(loop_cfg)? * T::of(2.0).powi(shift as i32);
    Ok((CompoundScores::new(loop31, values, shift)?, suspect))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_add_formula_by_hand() {
        let v = compound_one(1.80f64, 0.90, 24, 6, 27, DeltaPolicy::Strict).unwrap();
        assert!((v - 0.80).abs() <= 1e-12 * 0.80);
    }

    #[test]
    fn zero_delta_errors_or_clamps() {
        assert!(matches!(
            compound_one(0.7f64, 0.7, 16, 4, 27, DeltaPolicy::Strict),
            Err(CompoundError::NonPositiveDelta { .. })
        ));
        assert_eq!(compound_one(0.7f64, 0.7, 16, 4, 27, DeltaPolicy::Clamp).unwrap(), 0.0);
    }

    #[test]
    fn negative_delta_errors() {
        assert!(matches!(
            compound_one(0.50f64, 0.90, 24, 6, 27, DeltaPolicy::Strict),
            Err(CompoundError::NonPositiveDelta { .. })
        ));
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(compound_one(1.0f64, 0.5, 4, 4, 27, DeltaPolicy::Strict).is_err());
        assert!(compound_one(1.0f64, 0.5, 4, 0, 27, DeltaPolicy::Strict).is_err());
        assert!(compound_one(1.0f64, 0.5, 8, 4, 0, DeltaPolicy::Strict).is_err());
        assert!(compound_one(-1.0f64, 0.5, 8, 4, 3, DeltaPolicy::Strict).is_err());
        assert!(compound_one(f64::NAN, 0.5, 8, 4, 3, DeltaPolicy::Strict).is_err());
    }

    #[test]
    fn homogeneity_is_exact() {
        let a = compound_one(1.3f64, 0.7, 16, 4, 27, DeltaPolicy::Strict).unwrap();
        let b = compound_one(2.6f64, 1.4, 16, 4, 27, DeltaPolicy::Strict).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn names_round_trip_and_formulas_are_distinct() {
        for c in CompoundName::ALL {
            assert_eq!(c.name().parse::<CompoundName>().unwrap(), c);
            let f = c.formula();
            assert!(f.k_hi > f.k_lo);
        }
        let kinds: BTreeSet<_> = CompoundName::ALL.iter().map(|c| c.formula().kind).collect();
        assert_eq!(kinds.len(), 11);
    }

    #[test]
    fn single_precision_formula() {
        let v = compound_one(1.80f32, 0.90, 24, 6, 27, DeltaPolicy::Strict).unwrap();
        assert!((v - 0.80).abs() < 1e-6);
    }
}
