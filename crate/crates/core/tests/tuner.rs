use std::collections::BTreeMap;

use dptune::accountant::{worst_case_iterations, PrivacyParams};
use dptune::mechanisms::{NoiseSource, RandomStream, ZeroNoise};
use dptune::tuner::{
    run_schedule, run_tuning, scan_candidates, tune_and_train, tune_and_train_with_noise,
    IterationRecord, Termination, TunerState, TuningConfig,
};
use dptune::utility::{Candidate, Dataset, Record, SyntheticTrainer, TrainerError, UtilityTable};
use dptune::Error;
use proptest::prelude::*;
use rand::Rng;

fn config(n: usize, k: usize, g: f64, u0: f64, eps0: f64) -> TuningConfig {
    let candidates = (0..n).map(|i| Candidate::new(format!("c{i}"))).collect();
    TuningConfig::new(
        candidates,
        k,
        g,
        u0,
        PrivacyParams::new(1.0, 1e-5, eps0).unwrap(),
    )
    .unwrap()
}

/// Recomputes `u` and `step` from the accept/reject column alone.
fn replay(g: f64, u0: f64, trace: &[IterationRecord]) -> Vec<(f64, u64)> {
    let (mut u, mut step) = (u0, 1u64);
    trace
        .iter()
        .map(|r| {
            if r.accepted.is_some() {
                u += step as f64 * g;
                step *= 2;
            } else {
                step /= 2;
            }
            (u, step)
        })
        .collect()
}

fn check_trace(g: f64, u0: f64, n: usize, trace: &[IterationRecord], termination: Termination) {
    let cap = worst_case_iterations(g, u0).unwrap();
    assert!(!trace.is_empty());
    assert!(
        trace.len() as u64 <= cap,
        "{} iterations > cap {cap}",
        trace.len()
    );
    let mut prev_u = u0;
    for (i, (r, (u, step))) in trace.iter().zip(replay(g, u0, trace)).enumerate() {
        assert_eq!(r.iteration, i as u64 + 1);
        assert_eq!(r.u_after.to_bits(), u.to_bits());
        assert_eq!(r.step_after, step);
        assert!(step == 0 || step.is_power_of_two());
        assert!(r.u_after >= prev_u);
        let gained = r.u_after - u0;
        assert!((gained - (gained / g).round() * g).abs() < 1e-9);
        match r.accepted {
            Some(s) => {
                assert!(s < n);
                assert_eq!(r.scanned, s + 1);
            }
            None => assert_eq!(r.scanned, n),
        }
        // Non-final records are never terminal.
        if i + 1 < trace.len() {
            assert!(r.u_after < 1.0 && r.step_after > 0);
        }
        prev_u = r.u_after;
    }
    let last = trace.last().unwrap();
    match termination {
        Termination::UtilityCap => assert!(last.u_after >= 1.0),
        Termination::StepExhausted => assert!(last.step_after == 0 && last.u_after < 1.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn loop_invariants(
        g in 0.001f64..0.9,
        u0 in 0.0f64..0.9,
        n in 1usize..20,
        k in 1usize..20,
        eps0 in 0.01f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut rng = RandomStream::new(seed, 0);
        let utilities: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let table = UtilityTable::from_utilities(k, utilities).unwrap();
        let cfg = config(n, k, g, u0, eps0);
        let outcome = run_tuning(&cfg, &table, &mut RandomStream::new(seed, 1)).unwrap();
        check_trace(g, u0, n, &outcome.trace, outcome.termination);
        prop_assert_eq!(outcome.iterations, outcome.trace.len() as u64);
        prop_assert_eq!(outcome.privacy.iterations, outcome.iterations);
        let last = outcome.trace.last().unwrap();
        prop_assert_eq!(outcome.u_final, last.u_after);
        prop_assert_eq!(outcome.step_final, last.step_after);
        let last_accept = outcome.trace.iter().rev().find_map(|r| r.accepted);
        prop_assert_eq!(outcome.selected, last_accept);
        prop_assert_eq!(outcome.selected_candidate.clone(), last_accept.map(|s| cfg.candidates[s].clone()));

        let again = run_tuning(&cfg, &table, &mut RandomStream::new(seed, 1)).unwrap();
        prop_assert_eq!(again, outcome);
    }

    #[test]
    fn arbitrary_schedules_respect_cap(
        g in 0.01f64..0.9,
        u0 in 0.0f64..0.9,
        schedule in proptest::collection::vec(any::<bool>(), 0..400),
    ) {
        let trace = run_schedule(g, u0, schedule).unwrap();
        prop_assert!(trace.len() as u64 <= worst_case_iterations(g, u0).unwrap());
        if let Some(last) = trace.last() {
            let mut state = TunerState::initial(u0);
            for r in &trace {
                prop_assert!(!state.is_terminal());
                state.apply(r.accepted, g).unwrap();
            }
            prop_assert!(state.is_terminal() || trace.len() < 400);
            prop_assert_eq!(state.u, last.u_after);
        }
    }
}

#[test]
fn pre_doubling_step_accumulates() {
    let trace = run_schedule(0.1, 0.0, [true, true, false, true]).unwrap();
    let us: Vec<f64> = trace.iter().map(|r| r.u_after).collect();
    let steps: Vec<u64> = trace.iter().map(|r| r.step_after).collect();
    assert_eq!(steps, vec![2, 4, 2, 4]);
    // 0.1 * (1 + 2), then + 0.1 * 2 after one halving.
    let expected = [0.1, 0.1 + 0.2, 0.1 + 0.2, 0.1 + 0.2 + 0.2];
    for (u, e) in us.iter().zip(expected) {
        assert!((u - e).abs() < 1e-12);
    }
}

#[test]
fn alternating_schedule_at_g_001() {
    let alternating = (0..).map(|i| i % 2 == 0);
    let trace = run_schedule(0.01, 0.0, alternating).unwrap();
    assert_eq!(trace.len(), 199);
    assert!(trace.last().unwrap().u_after >= 1.0);
    assert_eq!(worst_case_iterations(0.01, 0.0).unwrap(), 201);
}

#[test]
fn all_rejections_stop_after_one_iteration() {
    let trace = run_schedule(0.5, 0.0, std::iter::repeat(false)).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace[0].step_after, 0);
}

#[test]
fn scan_tail_frequency_matches_laplace_tail() {
    // k = 10, eps0 = 0.1 gives a query noise scale of 4.
    let cfg = config(1, 10, 0.01, 0.0, 0.1);
    let table = UtilityTable::from_utilities(10, vec![0.0]).unwrap();
    let mut noise = RandomStream::new(31, 0);
    let trials = 100_000;
    let hits = (0..trials)
        .filter(|_| {
            scan_candidates(&table, 5.0, &cfg, &mut noise)
                .unwrap()
                .accepted
                .is_some()
        })
        .count();
    let expected = (-5.0f64 / 4.0).exp() / 2.0;
    assert!((expected - 0.143_252_398_430_095_05).abs() < 1e-15);
    let freq = hits as f64 / trials as f64;
    assert!((freq - expected).abs() <= 0.005, "{freq} vs {expected}");
}

#[test]
fn scan_stops_at_first_passing_candidate() {
    struct Counting(usize);
    impl NoiseSource for Counting {
        fn laplace(&mut self, _scale: dptune::mechanisms::LaplaceScale) -> f64 {
            self.0 += 1;
            0.0
        }
    }
    let cfg = config(4, 2, 0.1, 0.0, 0.5);
    let table = UtilityTable::from_utilities(2, vec![0.1, 0.6, 0.9, 0.7]).unwrap();
    let mut noise = Counting(0);
    let scan = scan_candidates(&table, 0.5, &cfg, &mut noise).unwrap();
    assert_eq!(scan.accepted, Some(1));
    assert_eq!(scan.scanned, 2);
    assert_eq!(noise.0, 2);
}

fn toy_data() -> (Dataset, Dataset) {
    let train = Dataset::new(
        (0..40)
            .map(|i| Record::new(i, vec![i as f64], (i % 2) as i64))
            .collect(),
    )
    .unwrap();
    let valid = Dataset::new(
        (0..10)
            .map(|i| Record::new(i, vec![i as f64], (i % 2) as i64))
            .collect(),
    )
    .unwrap();
    (train, valid)
}

#[test]
fn final_training_receives_full_data_and_budget() {
    let (train, valid) = toy_data();
    let cfg = TuningConfig::new(
        vec![
            Candidate::new("0.9"),
            Candidate::new("0.95"),
            Candidate::new("0.2"),
        ],
        4,
        0.05,
        0.0,
        PrivacyParams::new(2.0, 1e-6, 0.1).unwrap(),
    )
    .unwrap();
    let mut calls = Vec::new();
    let mut hook = |data: &Dataset, c: &Candidate, eps: f64, delta: f64, _s: &mut RandomStream| {
        calls.push((data.len(), c.clone(), eps, delta));
        Ok::<_, TrainerError>(c.as_str().to_string())
    };
    let trainer = SyntheticTrainer::default();
    let (outcome, model) = tune_and_train_with_noise(
        &cfg,
        &train,
        &valid,
        &trainer,
        &mut hook,
        &mut ZeroNoise,
        &RandomStream::new(1, 0),
    )
    .unwrap();
    // Noise-free oracle: threshold u + step*g, first utility at or above it.
    let utilities = [0.9, 0.95, 0.2];
    let (mut u, mut step, mut selected) = (0.0f64, 1u64, None);
    while step != 0 {
        let threshold = u + step as f64 * 0.05;
        match utilities.iter().position(|&x| x >= threshold) {
            Some(s) => {
                selected = Some(s);
                u += step as f64 * 0.05;
                step *= 2;
            }
            None => step /= 2,
        }
        if u >= 1.0 {
            break;
        }
    }
    assert_eq!(selected, Some(1));
    assert_eq!(outcome.selected, selected);
    assert_eq!(model, "0.95");
    assert_eq!(calls, vec![(40, Candidate::new("0.95"), 2.0, 1e-6)]);
    check_trace(0.05, 0.0, 3, &outcome.trace, outcome.termination);
}

#[test]
fn no_selection_is_an_error_and_skips_training() {
    let (train, valid) = toy_data();
    let cfg = TuningConfig::new(
        vec![Candidate::new("0.0")],
        4,
        0.05,
        0.0,
        PrivacyParams::new(1.0, 1e-5, 0.1).unwrap(),
    )
    .unwrap();
    let mut called = false;
    let mut hook = |_: &Dataset, _: &Candidate, _: f64, _: f64, _: &mut RandomStream| {
        called = true;
        Ok::<_, TrainerError>(())
    };
    let err = tune_and_train_with_noise(
        &cfg,
        &train,
        &valid,
        &SyntheticTrainer::default(),
        &mut hook,
        &mut ZeroNoise,
        &RandomStream::new(1, 0),
    )
    .unwrap_err();
    match err {
        Error::NoCandidateSelected(outcome) => {
            assert_eq!(outcome.selected, None);
            assert_eq!(outcome.termination, Termination::StepExhausted);
            assert_eq!(outcome.iterations, 1);
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(!called);
}

#[test]
fn tune_and_train_is_reproducible() {
    let (train, valid) = toy_data();
    let table: BTreeMap<Candidate, f64> = (0..20)
        .map(|i| (Candidate::new(format!("c{i}")), i as f64 / 20.0))
        .collect();
    let trainer = SyntheticTrainer::new(table);
    let cfg = config(20, 4, 0.02, 0.1, 0.1);
    let run = |seed| {
        let mut hook = |_: &Dataset, c: &Candidate, _: f64, _: f64, s: &mut RandomStream| {
            Ok::<_, TrainerError>((c.clone(), s.gen::<u64>()))
        };
        tune_and_train(
            &cfg,
            &train,
            &valid,
            &trainer,
            &mut hook,
            &RandomStream::new(seed, 0),
        )
    };
    let (a, b) = (run(5).unwrap(), run(5).unwrap());
    assert_eq!(a, b);
    check_trace(0.02, 0.1, 20, &a.0.trace, a.0.termination);
}

#[test]
fn invalid_configs_are_rejected() {
    let p = PrivacyParams::new(1.0, 1e-5, 0.1).unwrap();
    assert!(TuningConfig::new(vec![], 1, 1.5, 0.0, p).is_err());
    assert!(TuningConfig::new(vec![], 1, 0.0, 0.0, p).is_err());
    assert!(TuningConfig::new(vec![], 1, 0.1, 1.0, p).is_err());
    assert!(TuningConfig::new(vec![], 0, 0.1, 0.0, p).is_err());
    assert!(PrivacyParams::new(1.0, 1e-5, 0.0).is_err());
}
