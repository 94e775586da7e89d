use std::collections::HashMap;

use dptune::accountant::{
    advanced_composition, basic_composition, budget_comparison, composition_crossover,
    total_privacy, worst_case_iterations, CompositionMethod, PrivacyParams,
};
use dptune::tuner::{run_schedule, TunerState};
use proptest::prelude::*;

/// Longest run over every accept/reject schedule, found by memoised search
/// over the tuner's own state machine (floating-point `u` included).
fn longest_schedule(g: f64, u0: f64) -> u64 {
    fn go(state: TunerState, g: f64, memo: &mut HashMap<(u64, u64), u64>) -> u64 {
        if state.is_terminal() {
            return 0;
        }
        let key = (state.u.to_bits(), state.step);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut best = 0;
        for accepted in [Some(0), None] {
            let mut next = state;
            next.apply(accepted, g).unwrap();
            best = best.max(1 + go(next, g, memo));
        }
        memo.insert(key, best);
        best
    }
    go(TunerState::initial(u0), g, &mut HashMap::new())
}

/// Same maximum in exact integer arithmetic: `n` units of `g` gathered so
/// far, `units` needed, step `2^j`.
fn longest_schedule_exact(units: u64) -> u64 {
    fn go(n: u64, j: u32, units: u64, memo: &mut HashMap<(u64, u32), u64>) -> u64 {
        if let Some(&v) = memo.get(&(n, j)) {
            return v;
        }
        let gain = 1u64 << j;
        let accept = if n + gain >= units {
            1
        } else {
            1 + go(n + gain, j + 1, units, memo)
        };
        let reject = if j == 0 {
            1
        } else {
            1 + go(n, j - 1, units, memo)
        };
        let best = accept.max(reject);
        memo.insert((n, j), best);
        best
    }
    go(0, 0, units, &mut HashMap::new())
}

#[test]
fn cap_dominates_every_schedule_at_g_001() {
    let cap = worst_case_iterations(0.01, 0.0).unwrap();
    assert_eq!(cap, 201);
    let longest = longest_schedule(0.01, 0.0);
    assert!(longest <= cap);
    // The maximum is the alternating schedule: 100 accepts, 99 rejects.
    assert_eq!(longest, 199);
    assert_eq!(longest_schedule_exact(100), 199);
}

#[test]
fn cap_dominates_all_short_schedules() {
    for (g, u0, cap) in [(0.5, 0.0, 5u64), (0.5, 0.5, 3)] {
        assert_eq!(worst_case_iterations(g, u0).unwrap(), cap);
        for bits in 0u32..(1 << 16) {
            let schedule = (0..16).map(|i| bits >> i & 1 == 1);
            let trace = run_schedule(g, u0, schedule).unwrap();
            assert!(
                trace.len() as u64 <= cap,
                "g={g} u0={u0} schedule {bits:#b}"
            );
        }
    }
}

#[test]
fn cap_dominates_schedules_across_grid() {
    for g in [0.3, 0.25, 0.1, 0.07, 0.05, 0.02, 0.01] {
        for u0 in [0.0, 0.1, 0.35, 0.5, 0.9] {
            let cap = worst_case_iterations(g, u0).unwrap();
            let longest = longest_schedule(g, u0);
            assert!(longest <= cap, "g={g} u0={u0}: {longest} > {cap}");
        }
    }
}

#[test]
fn advanced_composition_matches_high_precision() {
    // Evaluated at 50 significant digits.
    let cases = [
        (200, 0.1, 9.537_262_739_212_629),
        (201, 0.1, 9.566_341_269_096_815),
        (20, 0.1, 2.561_129_836_628_095),
        (100, 1.0, 224.393_400_543_473_84),
    ];
    for (t, eps0, expected) in cases {
        let (eps, delta) = advanced_composition(t, eps0, 1e-6).unwrap();
        assert!(
            (eps - expected).abs() <= 1e-12 * expected,
            "T={t}: {eps} vs {expected}"
        );
        assert_eq!(delta, 1e-6);
    }
}

#[test]
fn total_privacy_advanced_at_cap() {
    let p = PrivacyParams::new(1.0, 1e-5, 0.1).unwrap();
    let r = total_privacy(&p, 201, 1e-6, CompositionMethod::Advanced).unwrap();
    assert!((r.eps_total - (1.0 + 9.566_341_269_096_815)).abs() < 1e-12);
    assert_eq!(r.eps_total, 1.0 + r.eps_additional);
    assert_eq!(r.delta_total, 1e-5 + 1e-6);
    assert_eq!(r.method, CompositionMethod::Advanced);
}

#[test]
fn crossover_scan() {
    let t_star = composition_crossover(0.1, 1e-6)
        .unwrap()
        .expect("crossover exists at eps0 = 0.1");
    let mut last_not_tighter = 0;
    for t in 1..=10_000u64 {
        let adv = advanced_composition(t, 0.1, 1e-6).unwrap().0;
        if adv >= basic_composition(t, 0.1) {
            last_not_tighter = t;
        }
    }
    assert_eq!(t_star, last_not_tighter);
    assert!(t_star < 10_000);
}

#[test]
fn comparison_rows() {
    let p = PrivacyParams::new(1.0, 1e-5, 0.1).unwrap();
    let cmp = budget_comparison(&p, Some(100), Some(20), 0.01, 0.0, 1e-6).unwrap();
    assert_eq!(cmp.randtune, [2.0, 3.0]);
    let observed = cmp.ours_observed.unwrap();
    assert_eq!(
        observed,
        total_privacy(&p, 20, 1e-6, CompositionMethod::Advanced).unwrap()
    );
    assert!((observed.eps_total - (1.0 + 2.561_129_836_628_095)).abs() < 1e-12);
    assert_eq!(cmp.ours_worst_case.iterations, 201);
    let naive = cmp.naive.unwrap();
    assert_eq!(
        naive.eps_total,
        advanced_composition(100, 1.0, 1e-6).unwrap().0
    );
}

proptest! {
    #[test]
    fn composition_monotone_in_iterations(t in 0u64..5_000, eps0 in 0.001f64..2.0, slack in 1e-9f64..0.5) {
        let (a0, _) = advanced_composition(t, eps0, slack).unwrap();
        let (a1, _) = advanced_composition(t + 1, eps0, slack).unwrap();
        prop_assert!(a1 >= a0);
        prop_assert!(basic_composition(t + 1, eps0) >= basic_composition(t, eps0));
    }

    #[test]
    fn composition_monotone_in_eps0(t in 0u64..5_000, eps0 in 0.001f64..2.0, bump in 0.0f64..1.0, slack in 1e-9f64..0.5) {
        let (a0, _) = advanced_composition(t, eps0, slack).unwrap();
        let (a1, _) = advanced_composition(t, eps0 + bump, slack).unwrap();
        prop_assert!(a1 >= a0);
        prop_assert!(basic_composition(t, eps0 + bump) >= basic_composition(t, eps0));
    }

    #[test]
    fn totals_add_up(t in 0u64..1_000, eps in 0.01f64..10.0, eps0 in 0.01f64..1.0, delta in 1e-9f64..0.1, slack in 1e-9f64..0.1) {
        let p = PrivacyParams::new(eps, delta, eps0).unwrap();
        for method in [CompositionMethod::Basic, CompositionMethod::Advanced] {
            let r = total_privacy(&p, t, slack, method).unwrap();
            prop_assert_eq!(r.eps_total, eps + r.eps_additional);
            prop_assert_eq!(r.delta_total, delta + r.delta_additional);
            prop_assert!(r.delta_total > 0.0 && r.delta_total < 1.0);
        }
    }

    #[test]
    fn advanced_wins_past_crossover(eps0 in 0.01f64..0.69, slack in 1e-9f64..0.1, extra in 1u64..5_000) {
        if let Some(t_star) = composition_crossover(eps0, slack).unwrap() {
            let t = t_star + extra;
            prop_assert!(advanced_composition(t, eps0, slack).unwrap().0 < basic_composition(t, eps0));
        }
    }
}
