use proptest::prelude::*;
use scorebreak_core::compound::{compound_all, compound_one, CompoundError, CompoundName, DeltaPolicy};
use scorebreak_core::dataset::{export_raw_csv, parse_csv, IngestOptions, Summarizer};
use scorebreak_core::microbench::{KernelConfig, KernelKind};
use scorebreak_core::synth::{generate, generate_raw, RawOptions, SynthSpec};
use scorebreak_core::TrialSeries;

const SPEC: &str = r#"
n_systems = 6
seed = 99
[true_coefficients.work]
C_Ia = 1.0
C_Fd = 2.0
"#;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn formulas_match_hand_computed_values() {
    // t_hi = 1.80 s, t_lo = 0.90 s for every formula.
    let expected = [
        (CompoundName::IntAdd, KernelKind::IntAdd, 24, 6, 27, 0.80),
        (CompoundName::IntMul, KernelKind::IntMul, 16, 4, 27, 1.20),
        (CompoundName::IntAddMul, KernelKind::IntAddMul, 24, 6, 26, 1.60),
        (CompoundName::IntDiv, KernelKind::IntDiv, 24, 6, 26, 1.60),
        (CompoundName::IntStore, KernelKind::IntStore, 24, 6, 29, 0.20),
        (CompoundName::IntStoreLoad, KernelKind::IntStoreLoad, 16, 4, 27, 1.20),
        (CompoundName::FpAdd, KernelKind::FpAdd, 16, 4, 27, 1.20),
        (CompoundName::FpMul, KernelKind::FpMul, 16, 4, 27, 1.20),
        (CompoundName::FpDiv, KernelKind::FpDiv, 16, 4, 24, 9.60),
        (CompoundName::FpStore, KernelKind::FpStore, 16, 4, 29, 0.30),
        (CompoundName::FpStoreLoad, KernelKind::FpStoreLoad, 16, 4, 27, 1.20),
    ];
    assert_eq!(expected.len(), CompoundName::ALL.len());
    for (name, kind, hi, lo, n, value) in expected {
        let f = name.formula();
        assert_eq!((f.kind, f.k_hi, f.k_lo, f.n), (kind, hi, lo, n), "{name}");
        let got = compound_one(1.80, 0.90, hi, lo, n, DeltaPolicy::Strict).unwrap();
        assert!(rel(got, value) <= 1e-12, "{name}: {got} vs {value}");
    }
}

#[test]
fn non_positive_difference_follows_policy() {
    assert!(matches!(
        compound_one(0.9, 0.9, 24, 6, 27, DeltaPolicy::Strict),
        Err(CompoundError::NonPositiveDelta { .. })
    ));
    assert_eq!(compound_one(0.8, 0.9, 24, 6, 27, DeltaPolicy::Clamp).unwrap(), 0.0);
    assert!(compound_one(-1.0, 0.9, 24, 6, 27, DeltaPolicy::Clamp).is_err());
    assert!(compound_one(1.0, 0.9, 6, 6, 27, DeltaPolicy::Strict).is_err());
}

proptest! {
    #[test]
    fn loop_overhead_cancels(
        overhead in 0.0f64..10.0,
        cost in 1e-3f64..10.0,
        which in 0usize..11,
    ) {
        let f = CompoundName::ALL[which].formula();
        let time = |k: u32| (overhead + f64::from(k) * cost) * 2f64.powi(f.n as i32 - 31);
        let got = compound_one(time(f.k_hi), time(f.k_lo), f.k_hi, f.k_lo, f.n, DeltaPolicy::Strict).unwrap();
        prop_assert!(rel(got, cost) <= 1e-12, "{} vs {}", got, cost);
    }
}

fn series(shift: u32) -> Vec<Vec<TrialSeries>> {
    let spec = SynthSpec::from_toml_str(SPEC).unwrap();
    let (raw, _) = generate_raw(&spec, &RawOptions { shift, ..RawOptions::default() }).unwrap();
    raw.iter().map(|s| s.micro.iter().map(TrialSeries::from).collect()).collect()
}

#[test]
fn raw_timings_recover_planted_factors_at_any_plan_size() {
    let spec = SynthSpec::from_toml_str(SPEC).unwrap();
    let (planted, _) = generate(&spec).unwrap();
    for shift in [0, 8, 16] {
        for (suite, record) in series(shift).iter().zip(planted.records()) {
            let (scores, suspect) = compound_all(suite, Summarizer::Min, DeltaPolicy::Strict).unwrap();
            assert!(suspect.is_empty());
            assert_eq!(scores.plan_shift, shift);
            for (got, want) in scores.regressors().iter().zip(record.regressors()) {
                assert!(rel(*got, want) <= 1e-12, "shift {shift}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn raw_csv_round_trip_gives_the_same_scores() {
    let spec = SynthSpec::from_toml_str(SPEC).unwrap();
    let (raw, _) = generate_raw(&spec, &RawOptions::default()).unwrap();
    let (planted, _) = generate(&spec).unwrap();
    let text = export_raw_csv(&raw).unwrap();
    let records = parse_csv(&text, &IngestOptions::default()).unwrap();
    assert_eq!(records.len(), planted.len());
    for (r, p) in records.iter().zip(planted.records()) {
        assert_eq!(r.system_id, p.system_id);
        for (got, want) in r.regressors().iter().zip(p.regressors()) {
            assert!(rel(*got, want) <= 1e-12);
        }
        assert!(rel(r.targets["work"], p.targets["work"]) <= 1e-12);
        assert_eq!(r.metadata.get("source").map(String::as_str), Some("synthetic"));
    }
}

#[test]
fn incomplete_suites_are_rejected() {
    let mut suite = series(0).remove(0);
    let without_loop: Vec<_> = suite.iter().filter(|s| s.config.kind != KernelKind::Loop).cloned().collect();
    assert!(matches!(
        compound_all(&without_loop, Summarizer::Min, DeltaPolicy::Strict),
        Err(CompoundError::MissingLoop)
    ));

    let dup = suite[0].clone();
    suite.push(dup);
    assert!(matches!(
        compound_all(&suite, Summarizer::Min, DeltaPolicy::Strict),
        Err(CompoundError::DuplicateConfig(_))
    ));

    let mut missing = series(0).remove(0);
    missing.retain(|s| s.config != KernelConfig { kind: KernelKind::FpDiv, k: 4, n: 24 });
    assert!(matches!(
        compound_all(&missing, Summarizer::Min, DeltaPolicy::Strict),
        Err(CompoundError::MissingConfig { name: CompoundName::FpDiv, .. })
    ));
}

#[test]
fn inverted_pair_is_flagged_under_clamp() {
    let mut suite = series(0).remove(0);
    let f = CompoundName::IntStore.formula();
    let hi = suite.iter().position(|s| s.config.kind == f.kind && s.config.k == f.k_hi).unwrap();
    let lo = suite.iter().position(|s| s.config.kind == f.kind && s.config.k == f.k_lo).unwrap();
    let (a, b) = (suite[hi].trials.clone(), suite[lo].trials.clone());
    suite[hi].trials = b;
    suite[lo].trials = a;

    let strict = compound_all(&suite, Summarizer::Min, DeltaPolicy::Strict).unwrap_err();
    assert!(matches!(strict, CompoundError::NonPositiveDelta { name: Some(CompoundName::IntStore), .. }));
    let (scores, suspect) = compound_all(&suite, Summarizer::Min, DeltaPolicy::Clamp).unwrap();
    assert_eq!(scores.get(CompoundName::IntStore), 0.0);
    assert_eq!(suspect.into_iter().collect::<Vec<_>>(), vec![CompoundName::IntStore]);
}
