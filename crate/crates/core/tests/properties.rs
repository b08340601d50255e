//! Cross-module invariants checked on random inputs.

use idc_core::diagnostics::dwell_runs;
use idc_core::discretise::DiscreteTrace;
use idc_core::idealise::segment_samples;
use idc_core::infer::{empirical_transition_matrix, mde_fit, mde_objective, MdeOptions};
use idc_core::signal::{make_kernel, synthesize_recording, KernelKind, NoiseSpec, SynthesisConfig};
use idc_core::vnd::{simulate_vnd, sum_transition_matrix, Branch, InitialState, ParamVector};
use proptest::prelude::*;

fn kernel_kind() -> impl Strategy<Value = KernelKind> {
    prop_oneof![
        Just(KernelKind::Identity),
        Just(KernelKind::BSpline2),
        (1usize..=6, 200.0f64..3000.0)
            .prop_map(|(order, cutoff_hz)| KernelKind::BesselFir { order, cutoff_hz }),
        prop::collection::vec(0.01f64..1.0, 1..8).prop_map(|taps| KernelKind::Custom { taps }),
    ]
}

fn theta(l: usize) -> impl Strategy<Value = ParamVector> {
    prop::collection::vec(0.05f64..0.95, 2 * l).prop_map(|flat| ParamVector::from_flat(&flat).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filtering_a_constant_returns_it(kind in kernel_kind(), c in -50.0f64..50.0, n in 1usize..200) {
        let k = make_kernel(kind, 1e4).unwrap();
        for y in k.filter(&vec![c; n]) {
            prop_assert!((y - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn filter_matches_direct_convolution_sum(
        kind in kernel_kind(),
        x in prop::collection::vec(-10.0f64..10.0, 1..300),
    ) {
        let k = make_kernel(kind, 1e4).unwrap();
        let y = k.filter(&x);
        for (i, yi) in y.iter().enumerate() {
            let mut direct = 0.0;
            for (j, w) in k.taps.iter().enumerate() {
                let xv = if j <= i { x[i - j] } else { x[0] };
                direct += w * xv;
            }
            prop_assert!((yi - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn recordings_are_seed_deterministic(seed in any::<u64>(), l in 1usize..4) {
        let cfg = SynthesisConfig {
            theta: ParamVector::constant(l, 0.9, 0.8).unwrap(),
            n: 300,
            sample_rate: 1e4,
            offset: 0.5,
            spacing: 2.0,
            kernel: KernelKind::BSpline2,
            noise: NoiseSpec::mixture(0.85, 0.1, 0.05),
            init: InitialState::AllClosed,
        };
        let a = synthesize_recording(&cfg, seed).unwrap();
        let b = synthesize_recording(&cfg, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn segmentations_tile_the_trace_and_pass_their_tests(
        y in prop::collection::vec(prop_oneof![-1.0f64..1.0, 4.0f64..6.0], 1..400),
        transient in 0usize..4,
        alpha in 0.01f64..0.9,
    ) {
        let (segs, feasible) = segment_samples(&y, transient, alpha).unwrap();
        prop_assert!(feasible);
        prop_assert_eq!(segs[0].start, 0);
        prop_assert_eq!(segs.last().unwrap().end, y.len());
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].level != w[1].level);
        }
    }

    #[test]
    fn lowering_alpha_never_adds_switches(
        y in prop::collection::vec(-2.0f64..2.0, 20..300),
        a in 0.05f64..0.9,
        shrink in 0.05f64..1.0,
    ) {
        let k_hi = segment_samples(&y, 1, a).unwrap().0.len();
        let k_lo = segment_samples(&y, 1, a * shrink).unwrap().0.len();
        prop_assert!(k_lo <= k_hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_is_nonnegative_and_zero_at_truth(t in (1usize..5).prop_flat_map(theta), u in (1usize..5).prop_flat_map(theta)) {
        let q = sum_transition_matrix(&t);
        prop_assert!(mde_objective(&t, &q).unwrap().abs() < 1e-24);
        if u.channels() == t.channels() {
            prop_assert!(mde_objective(&u, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn fit_descends_and_respects_its_branch(t in (1usize..4).prop_flat_map(theta), seed in any::<u64>()) {
        let l = t.channels();
        let counts = simulate_vnd(&t, 3_000, seed, &InitialState::AllClosed).unwrap().into_sum();
        let trace = DiscreteTrace::from_counts(counts, l).unwrap();
        let q_hat = empirical_transition_matrix(&trace).unwrap();
        let fit = mde_fit(&q_hat, l, &MdeOptions::default()).unwrap();
        prop_assert!(fit.objective <= fit.diagnostics.init_objective);
        prop_assert!(fit.objective >= 0.0);
        if l % 2 == 0 && !fit.diagnostics.degenerate {
            let half = l / 2;
            let slack = fit.theta_hat.lambda(half) - (1.0 - fit.theta_hat.eta(half));
            match fit.diagnostics.branch.as_ref().map(|b| b.chosen) {
                Some(Branch::Plus) => prop_assert!(slack >= -1e-9),
                Some(Branch::Minus) => prop_assert!(slack <= 1e-9),
                None => {}
            }
        }
    }

    #[test]
    fn self_concatenation_doubles_interior_dwells(
        v in prop::collection::vec(0u32..3, 3..200),
        state in 0u32..3,
    ) {
        // a state other than the end values keeps the seam from merging runs
        prop_assume!(v[0] != state && v[v.len() - 1] != state);
        let mut twice = v.clone();
        twice.extend(&v);
        prop_assert_eq!(dwell_runs(&twice, state).len(), 2 * dwell_runs(&v, state).len());
    }
}
