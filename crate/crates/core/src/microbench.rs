//! Microbenchmark kernels: one loop of `2^n` iterations whose body performs
//! `k` operations of a single class.
//!
//! Every arithmetic result is routed through a register-only optimization
//! barrier, so the optimizer can neither fold the `k` operations of one
//! iteration into fewer instructions nor hoist them out of the loop. Store and
//! load kernels hit one memory cell through volatile accesses.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compound::CompoundName;

/// Largest per-iteration operation count a kernel is compiled for.
pub const MAX_K: u32 = 32;
pub const MAX_N: u32 = 40;
pub const DEFAULT_TRIALS: usize = 5;
/// Environment variable overriding the number of trials per configuration.
pub const TRIALS_ENV: &str = "SCOREBREAK_TRIALS";

/// Warm-up runs are capped at this many doublings.
const WARMUP_MAX_N: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "loop")]
    Loop,
    #[serde(rename = "INTadd")]
    IntAdd,
    #[serde(rename = "INTmul")]
    IntMul,
    #[serde(rename = "INTaddmul")]
    IntAddMul,
    #[serde(rename = "INTdiv")]
    IntDiv,
    #[serde(rename = "INTstore")]
    IntStore,
    #[serde(rename = "INTstoreload")]
    IntStoreLoad,
    #[serde(rename = "FPadd")]
    FpAdd,
    #[serde(rename = "FPmul")]
    FpMul,
    #[serde(rename = "FPdiv")]
    FpDiv,
    #[serde(rename = "FPstore")]
    FpStore,
    #[serde(rename = "FPstoreload")]
    FpStoreLoad,
}

impl KernelKind {
    pub const ALL: [KernelKind; 12] = [
        KernelKind::Loop,
        KernelKind::IntAdd,
        KernelKind::IntMul,
        KernelKind::IntAddMul,
        KernelKind::IntDiv,
        KernelKind::IntStore,
        KernelKind::IntStoreLoad,
        KernelKind::FpAdd,
        KernelKind::FpMul,
        KernelKind::FpDiv,
        KernelKind::FpStore,
        KernelKind::FpStoreLoad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Loop => "loop",
            KernelKind::IntAdd => "INTadd",
            KernelKind::IntMul => "INTmul",
            KernelKind::IntAddMul => "INTaddmul",
            KernelKind::IntDiv => "INTdiv",
            KernelKind::IntStore => "INTstore",
            KernelKind::IntStoreLoad => "INTstoreload",
            KernelKind::FpAdd => "FPadd",
            KernelKind::FpMul => "FPmul",
            KernelKind::FpDiv => "FPdiv",
            KernelKind::FpStore => "FPstore",
            KernelKind::FpStoreLoad => "FPstoreload",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KernelKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown kernel '{s}'"))
    }
}

/// One kernel configuration: `k` operations per iteration, `2^n` iterations.
/// `k` is zero for [`KernelKind::Loop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub k: u32,
    pub n: u32,
}

impl KernelConfig {
    pub fn new(kind: KernelKind, k: u32, n: u32) -> Result<Self, MicrobenchError> {
        let c = Self { kind, k, n };
        c.validate()?;
        Ok(c)
    }

    pub fn looping(n: u32) -> Self {
        Self { kind: KernelKind::Loop, k: 0, n }
    }

    pub fn validate(&self) -> Result<(), MicrobenchError> {
        let bad = |reason: String| Err(MicrobenchError::ConfigInvalid { config: *self, reason });
        if self.n > MAX_N {
            return bad(format!("n must be in [0, {MAX_N}]"));
        }
        match self.kind {
            KernelKind::Loop if self.k != 0 => bad("loop takes no per-iteration count (k = 0)".into()),
            KernelKind::Loop => Ok(()),
            _ if self.k == 0 || self.k > MAX_K => bad(format!("k must be in [1, {MAX_K}]")),
            _ => Ok(()),
        }
    }

    pub fn iterations(&self) -> u64 {
        1u64 << self.n
    }
}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            KernelKind::Loop => write!(f, "loop({})", self.n),
            kind => write!(f, "{}({}, {})", kind, self.k, self.n),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicrobenchError {
    #[error("invalid kernel configuration {config}: {reason}")]
    ConfigInvalid { config: KernelConfig, reason: String },
    #[error("monotonic clock unavailable: {0}")]
    TimerUnavailable(String),
    #[error("measurement plan is empty")]
    EmptyPlan,
    #[error("trials per configuration must be positive")]
    ZeroTrials,
    #[error("plan shift {shift} would reduce {config} below n = 1")]
    ShiftTooLarge { shift: u32, config: KernelConfig },
    #[error("{config}: checksum changed between trials ({first:#x} vs {other:#x})")]
    ChecksumMismatch { config: KernelConfig, first: u64, other: u64 },
    #[error("{config}: {source}")]
    InConfig {
        config: KernelConfig,
        #[source]
        source: Box<MicrobenchError>,
    },
}

/// Measured trials for one configuration on the local machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrobenchResult {
    pub config: KernelConfig,
    /// Durations in seconds, in execution order.
    pub trials: Vec<f64>,
    pub checksum: u64,
    pub clock_source: String,
}

pub fn clock_source() -> &'static str {
    if cfg!(target_os = "linux") || cfg!(target_os = "android") {
        "CLOCK_MONOTONIC (std::time::Instant)"
    } else {
        "monotonic (std::time::Instant)"
    }
}

/// Runs one configuration and returns its duration in seconds together with
/// the kernel checksum.
pub fn run_kernel(config: KernelConfig) -> Result<(f64, u64), MicrobenchError> {
    config.validate()?;
    let (elapsed, checksum) = kernels::run(config.kind, config.k, config.iterations());
    let secs = elapsed.as_secs_f64();
    if secs <= 0.0 {
        return Err(MicrobenchError::TimerUnavailable(format!("clock did not advance across {config}")));
    }
    Ok((secs, checksum))
}

/// Runs one configuration without reporting its time.
pub fn kernel_checksum(config: KernelConfig) -> Result<u64, MicrobenchError> {
    config.validate()?;
    Ok(kernels::run(config.kind, config.k, config.iterations()).1)
}

/// Runs every configuration `trials_per_config` times, strictly one kernel at
/// a time on the calling thread. Each configuration gets one untimed warm-up
/// run first.
pub fn run_suite(plan: &[KernelConfig], trials_per_config: usize) -> Result<Vec<MicrobenchResult>, MicrobenchError> {
    if plan.is_empty() {
        return Err(MicrobenchError::EmptyPlan);
    }
    if trials_per_config == 0 {
        return Err(MicrobenchError::ZeroTrials);
    }
    let tag =
        |config: KernelConfig| move |e: MicrobenchError| MicrobenchError::InConfig { config, source: Box::new(e) };
    plan.iter()
        .map(|&config| {
            config.validate().map_err(tag(config))?;
            let warm = KernelConfig { n: config.n.min(WARMUP_MAX_N), ..config };
            black_box(kernels::run(warm.kind, warm.k, warm.iterations()));

            let mut trials = Vec::with_capacity(trials_per_config);
            let mut checksum = None;
            for _ in 0..trials_per_config {
                let (secs, sum) = run_kernel(config).map_err(tag(config))?;
                match checksum {
                    None => checksum = Some(sum),
                    Some(first) if first != sum => {
                        return Err(MicrobenchError::ChecksumMismatch { config, first, other: sum })
                    }
                    Some(_) => {}
                }
                trials.push(secs);
            }
            Ok(MicrobenchResult {
                config,
                trials,
                checksum: checksum.unwrap_or_default(),
                clock_source: clock_source().to_string(),
            })
        })
        .collect()
}

/// The 22 configurations consumed by the compound scores plus `loop(31)`.
pub fn default_plan() -> Vec<KernelConfig> {
    let mut plan = Vec::with_capacity(23);
    for name in CompoundName::ALL {
        let f = name.formula();
        plan.push(KernelConfig { kind: f.kind, k: f.k_hi, n: f.n });
        plan.push(KernelConfig { kind: f.kind, k: f.k_lo, n: f.n });
    }
    plan.push(KernelConfig::looping(31));
    plan
}

/// [`default_plan`] with every `n` reduced by `shift`.
pub fn scaled_plan(shift: u32) -> Result<Vec<KernelConfig>, MicrobenchError> {
    default_plan()
        .into_iter()
        .map(|c| {
            if c.n <= shift {
                Err(MicrobenchError::ShiftTooLarge { shift, config: c })
            } else {
                Ok(KernelConfig { n: c.n - shift, ..c })
            }
        })
        .collect()
}

/// Trials per configuration from `SCOREBREAK_TRIALS`, if set.
pub fn trials_from_env() -> Option<Result<usize, String>> {
    let raw = std::env::var(TRIALS_ENV).ok()?;
    Some(match raw.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("{TRIALS_ENV} must be a positive integer, got '{raw}'")),
        Ok(v) => Ok(v),
    })
}

/// Operand constants shared by the kernels and by reference interpreters.
pub mod operands {
    pub const INT_SEED: u64 = 0x9E37_79B9_7F4A_7C15;
    pub const INT_ADDEND: u64 = 0x2545_F491_4F6C_DD1D;
    /// Odd, so repeated multiplication never collapses to zero.
    pub const INT_FACTOR: u64 = 0x5851_F42D_4C95_7F2D;
    /// The division kernel iterates `x ← DIV_NUMERATOR / x`, which stays in
    /// `[1, DIV_NUMERATOR]` for any start in that range.
    pub const DIV_NUMERATOR: u64 = 0xFFFF_FFFF_FFFF_FFC5;
    pub const DIV_SEED: u64 = 0x0000_0001_2345_6789;
    pub const FP_SEED: f64 = 1.0;
    pub const FP_ADDEND: f64 = 1.0e-3;
    /// `1 + 2⁻⁴⁰`: 32·2⁴⁰ multiplications or divisions stay within `e^±32`.
    pub const FP_FACTOR: f64 = 1.0 + 1.0 / 1_099_511_627_776.0;
}

pub(crate) mod kernels {
    use std::hint::black_box;
    use std::ptr;
    use std::time::{Duration, Instant};

    use super::operands::*;
    use super::KernelKind;

    /// Makes `x` opaque to the optimizer without touching memory.
    #[inline(always)]
    fn opaque(mut x: u64) -> u64 {
        #[cfg(any(target_arch = "x86_64", target_arch = "aarch64"))]
        unsafe {
            std::arch::asm!("/* {0} */", inout(reg) x, options(nostack, preserves_flags));
        }
        #[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
        {
            x = black_box(x);
        }
        x
    }

    #[inline(always)]
    fn opaque_f64(mut x: f64) -> f64 {
        #[cfg(target_arch = "x86_64")]
        unsafe {
            std::arch::asm!("/* {0} */", inout(xmm_reg) x, options(nostack, preserves_flags));
        }
        #[cfg(target_arch = "aarch64")]
        unsafe {
            std::arch::asm!("/* {0:d} */", inout(vreg) x, options(nostack, preserves_flags));
        }
        #[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
        {
            x = black_box(x);
        }
        x
    }

    #[inline(always)]
    pub fn looping(iters: u64) -> u64 {
        let mut count = opaque(0);
        let mut i = 0;
        while i < iters {
            count = opaque(count + 1);
            i += 1;
        }
        count
    }

    #[inline(always)]
    pub fn int_add<const K: usize>(iters: u64) -> u64 {
        let b = opaque(INT_ADDEND);
        let mut acc = opaque(INT_SEED);
        let mut i = 0;
        while i < iters {
            for _ in 0..K {
                acc = opaque(acc.wrapping_add(b));
            }
            i += 1;
        }
        acc
    }

    #[inline(always)]
    pub fn int_mul<const K: usize>(iters: u64) -> u64 {
        let m = opaque(INT_FACTOR);
        let mut acc = opaque(INT_SEED);
        let mut i = 0;
        while i < iters {
            for _ in 0..K {
                acc = opaque(acc.wrapping_mul(m));
            }
            i += 1;
        }
        acc
    }

    #[inline(always)]
    pub fn int_add_mul<const K: usize>(iters: u64) -> u64 {
        let b = opaque(INT_ADDEND);
        let m = opaque(INT_FACTOR);
        let mut acc = opaque(INT_SEED);
        let mut i = 0;
        while i < iters {
            for _ in 0..K {
                acc = opaque(acc.wrapping_add(b));
                acc = opaque(acc.wrapping_mul(m));
            }
            i += 1;
        }
        acc
    }

    /// Division through a routine boundary so targets without a hardware
    /// divider still measure one division per step.
    #[inline(never)]
    fn divide(num: u64, den: u64) -> u64 {
        num / den
    }

    #[inline(always)]
    pub fn int_div<const K: usize>(iters: u64) -> u64 {
        let num = opaque(DIV_NUMERATOR);
        let mut x = opaque(DIV_SEED);
        let mut i = 0;
        while i < iters {
            for _ in 0..K {
                x = opaque(divide(num, x));
            }
            i += 1;
        }
        x
    }

    #[inline(always)]
    pub fn int_store<const K: usize>(iters: u64) -> u64 {
        let mut cell = 0u64;
        let p = ptr::addr_of_mut!(cell);
        let mut i = 0;
        while i < iters {
            let v = opaque(i);
            for _ in 0..K {
                unsafe { ptr::write_volatile(p, v) };
            }
            i += 1;
        }
        unsafe { ptr::read_volatile(p) }
    }

    #[inline(always)]
    pub fn int_store_load<const K: usize>(iters: u64) -> u64 {
        let mut cell = 0u64;
        let p = ptr::addr_of_mut!(cell);
        let mut acc = 0u64;
        let mut i = 0;
        while i < iters {
            let mut v = opaque(i);
            for _ in 0..K {
                unsafe {
                    ptr::write_volatile(p, v);
                    v = ptr::read_volatile(p);
                }
            }
            acc ^= v;
            i += 1;
        }
        acc
    }

    #[inline(always)]
    pub fn fp_add<const K: usize>(iters: u64) -> u64 {
        let b = opaque_f64(FP_ADDEND);
        let mut acc = opaque_f64(FP_SEED);
        let mut i = 0;
        while i < iters {
            for _ in 0..K {
                acc = opaque_f64(acc + b);
            }
            i += 1;
        }
        acc.to_bits()
    }

    #[inline(always)]
    pub fn fp_mul<const K: usize>(iters: u64) -> u64 {
        let m = opaque_f64(FP_FACTOR);
        let mut acc = opaque_f64(FP_SEED);
        let mut i = 0;
        while i < iters {
            for _ in 0..K {
                acc = opaque_f64(acc * m);
            }
            i += 1;
        }
        acc.to_bits()
    }

    #[inline(always)]
    pub fn fp_div<const K: usize>(iters: u64) -> u64 {
        let d = opaque_f64(FP_FACTOR);
        let mut acc = opaque_f64(FP_SEED);
        let mut i = 0;
        while i < iters {
            for _ in 0..K {
                acc = opaque_f64(acc / d);
            }
            i += 1;
        }
        acc.to_bits()
    }

    #[inline(always)]
    pub fn fp_store<const K: usize>(iters: u64) -> u64 {
        let mut cell = 0f64;
        let p = ptr::addr_of_mut!(cell);
        let mut i = 0;
        while i < iters {
            let v = opaque_f64(i as f64);
            for _ in 0..K {
                unsafe { ptr::write_volatile(p, v) };
            }
            i += 1;
        }
        unsafe { ptr::read_volatile(p) }.to_bits()
    }

    #[inline(always)]
    pub fn fp_store_load<const K: usize>(iters: u64) -> u64 {
        let mut cell = 0f64;
        let p = ptr::addr_of_mut!(cell);
        let mut acc = 0u64;
        let mut i = 0;
        while i < iters {
            let mut v = opaque_f64(i as f64);
            for _ in 0..K {
                unsafe {
                    ptr::write_volatile(p, v);
                    v = ptr::read_volatile(p);
                }
            }
            acc ^= v.to_bits();
            i += 1;
        }
        acc
    }

    #[inline(always)]
    fn timed(iters: u64, body: impl FnOnce(u64) -> u64) -> (Duration, u64) {
        let iters = black_box(iters);
        let start = Instant::now();
        let sum = body(iters);
        let elapsed = start.elapsed();
        (elapsed, black_box(sum))
    }

    macro_rules! by_k {
        ($kernel:ident, $k:expr, $iters:expr; $($n:literal)*) => {
            match $k {
                $($n => timed($iters, $kernel::<$n>),)*
                other => panic!("unsupported k = {other}"),
            }
        };
    }

    macro_rules! dispatch {
        ($kernel:ident, $k:expr, $iters:expr) => {
            by_k!($kernel, $k, $iters;
                1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16
                17 18 19 20 21 22 23 24 25 26 27 28 29 30 31 32)
        };
    }

    /// `k` must already be validated against `MAX_K`.
    #[inline(never)]
    pub fn run(kind: KernelKind, k: u32, iters: u64) -> (Duration, u64) {
        match kind {
            KernelKind::Loop => timed(iters, looping),
            KernelKind::IntAdd => dispatch!(int_add, k, iters),
            KernelKind::IntMul => dispatch!(int_mul, k, iters),
            KernelKind::IntAddMul => dispatch!(int_add_mul, k, iters),
            KernelKind::IntDiv => dispatch!(int_div, k, iters),
            KernelKind::IntStore => dispatch!(int_store, k, iters),
            KernelKind::IntStoreLoad => dispatch!(int_store_load, k, iters),
            KernelKind::FpAdd => dispatch!(fp_add, k, iters),
            KernelKind::FpMul => dispatch!(fp_mul, k, iters),
            KernelKind::FpDiv => dispatch!(fp_div, k, iters),
            KernelKind::FpStore => dispatch!(fp_store, k, iters),
            KernelKind::FpStoreLoad => dispatch!(fp_store_load, k, iters),
        }
    }
}

/// Untimed kernel instances with stable symbol names, for inspecting the
/// optimized machine code of the measurement loops.
pub mod probe {
    use super::kernels;

    #[no_mangle]
    #[inline(never)]
    pub extern "C" fn scorebreak_probe_int_add_k6(iters: u64) -> u64 {
        kernels::int_add::<6>(iters)
    }

    #[no_mangle]
    #[inline(never)]
    pub extern "C" fn scorebreak_probe_int_add_k24(iters: u64) -> u64 {
        kernels::int_add::<24>(iters)
    }

    #[no_mangle]
    #[inline(never)]
    pub extern "C" fn scorebreak_probe_fp_add_k16(iters: u64) -> u64 {
        kernels::fp_add::<16>(iters)
    }

    /// `(symbol, operation mnemonic family, k)` for every probe above.
    pub const PROBES: [(&str, &str, u32); 3] = [
        ("scorebreak_probe_int_add_k6", "add", 6),
        ("scorebreak_probe_int_add_k24", "add", 24),
        ("scorebreak_probe_fp_add_k16", "fadd", 16),
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loop_counts_iterations() {
        let (secs, sum) = run_kernel(KernelConfig::looping(4)).unwrap();
        assert_eq!(sum, 16);
        assert!(secs > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig::new(KernelKind::IntAdd, 0, 3).is_err());
        assert!(KernelConfig::new(KernelKind::IntAdd, MAX_K + 1, 3).is_err());
        assert!(KernelConfig::new(KernelKind::IntAdd, 1, MAX_N + 1).is_err());
        assert!(KernelConfig::new(KernelKind::Loop, 1, 3).is_err());
        assert!(KernelConfig::new(KernelKind::Loop, 0, MAX_N).is_ok());
        assert!(matches!(
            run_kernel(KernelConfig { kind: KernelKind::FpDiv, k: 0, n: 2 }),
            Err(MicrobenchError::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn default_plan_matches_compound_inputs() {
        let plan = default_plan();
        assert_eq!(plan.len(), 23);
        let mut sorted = plan.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 23);
        assert!(plan.contains(&KernelConfig { kind: KernelKind::FpDiv, k: 16, n: 24 }));
        assert!(plan.contains(&KernelConfig { kind: KernelKind::FpDiv, k: 4, n: 24 }));
        assert!(plan.contains(&KernelConfig::looping(31)));
        for c in &plan {
            c.validate().unwrap();
        }
    }

    #[test]
    fn scaled_plan_shifts_every_n() {
        assert_eq!(scaled_plan(0).unwrap(), default_plan());
        let p = scaled_plan(20).unwrap();
        assert!(p.contains(&KernelConfig { kind: KernelKind::IntAdd, k: 24, n: 7 }));
        assert!(p.contains(&KernelConfig::looping(11)));
        assert!(scaled_plan(23).is_ok());
        assert!(matches!(scaled_plan(24), Err(MicrobenchError::ShiftTooLarge { shift: 24, .. })));
    }

    #[test]
    fn suite_rejects_empty_plan_and_zero_trials() {
        assert_eq!(run_suite(&[], 5), Err(MicrobenchError::EmptyPlan));
        assert_eq!(run_suite(&[KernelConfig::looping(2)], 0), Err(MicrobenchError::ZeroTrials));
    }

    #[test]
    fn suite_records_every_trial() {
        let plan = [KernelConfig::looping(10), KernelConfig { kind: KernelKind::FpMul, k: 4, n: 6 }];
        let out = run_suite(&plan, 3).unwrap();
        assert_eq!(out.len(), 2);
        for r in &out {
            assert_eq!(r.trials.len(), 3);
            assert!(r.trials.iter().all(|&t| t > 0.0));
        }
        assert_eq!(out[0].checksum, 1024);
    }

    #[test]
    fn suite_tags_failing_config() {
        let bad = KernelConfig { kind: KernelKind::IntMul, k: 99, n: 2 };
        match run_suite(&[bad], 1) {
            Err(MicrobenchError::InConfig { config, .. }) => assert_eq!(config, bad),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in KernelKind::ALL {
            assert_eq!(k.name().parse::<KernelKind>().unwrap(), k);
        }
        assert!("INTsub".parse::<KernelKind>().is_err());
    }

    #[test]
    fn display_forms() {
        assert_eq!(KernelConfig::looping(31).to_string(), "loop(31)");
        assert_eq!(KernelConfig { kind: KernelKind::IntAdd, k: 24, n: 27 }.to_string(), "INTadd(24, 27)");
    }
}
