use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;
use ris_align::alignment::{
    align_continuous_noiseless, align_discrete, exhaustive_discrete_oracle, quantize_phase, random_benchmark,
    AlignmentConfig, AlignmentMode, EstimatorKind, SimulatedOracle,
};
use ris_align::estimation::{
    build_design_matrix, design_singular_values, dft_phase_estimate, linear_estimate, phase_from_x, project_onto_cone, trace_criterion,
    MeasurementPhaseSet, XEstimate,
};
use ris_align::harness::nap;
use ris_align::signal::{
    canonical_phase, received_power_noiseless, ChannelRealization, DiscretePhaseSet, NoiseStream, PhaseVector,
};
use ris_align::Error;

fn gains(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((0.05f64..3.0, 0.0..TAU), n).prop_map(|v| {
        v.into_iter().map(|(r, t)| Complex64::from_polar(r, t)).collect()
    })
}

fn channel(range: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = ChannelRealization> {
    prop::collection::vec((0.05f64..3.0, 0.0..TAU), range).prop_map(|v| {
        ChannelRealization::new(v.into_iter().map(|(r, t)| Complex64::from_polar(r, t)).collect(), 0.0).unwrap()
    })
}

fn powers(channel: &ChannelRealization, initial: &PhaseVector, trace: &ris_align::alignment::AlignmentTrace) -> Vec<f64> {
    let mut out = vec![received_power_noiseless(channel, initial).unwrap()];
    out.extend(trace.records.iter().map(|r| r.post_update_power.unwrap()));
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn trace_never_beats_equal_spacing(offsets in prop::collection::vec(0.0..TAU, 3..9)) {
        let l = offsets.len() as f64;
        let phi = MeasurementPhaseSet::new(offsets).unwrap();
        match trace_criterion(&phi) {
            Ok(t) => prop_assert!(t >= 5.0 / l - 1e-9, "{t} < 5/{l}"),
            Err(Error::SingularDesign(_)) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn equal_spacing_attains_bound(l in 3usize..12, rot in 0.0..TAU) {
        let phi = MeasurementPhaseSet::equally_spaced(l, rot).unwrap();
        let t = trace_criterion(&phi).unwrap();
        prop_assert!((t - 5.0 / l as f64).abs() <= 1e-9);
    }

    #[test]
    fn noiseless_linear_estimate_is_exact(
        offsets in prop::collection::vec(0.0..TAU, 3..7),
        z0 in (0.0f64..2.0, 0.0..TAU),
        z in (0.1f64..2.0, 0.0..TAU),
    ) {
        let phi = MeasurementPhaseSet::new(offsets).unwrap();
        prop_assume!(phi.is_admissible());
        let a = build_design_matrix(&phi);
        // exactness up to rounding needs a reasonably conditioned design
        prop_assume!(design_singular_values(&a)[2] >= 0.05);
        let truth = XEstimate::from_gains(Complex64::from_polar(z0.0, z0.1), Complex64::from_polar(z.0, z.1));
        let x = linear_estimate(&a.apply(&truth), &a).unwrap();
        let scale = truth.x1.max(1.0);
        prop_assert!((x.x1 - truth.x1).abs() <= 1e-9 * scale);
        prop_assert!((x.x2 - truth.x2).abs() <= 1e-9 * scale);
        prop_assert!((x.x3 - truth.x3).abs() <= 1e-9 * scale);
    }

    // The DFT estimator and the linear path agree on equally spaced designs.
    #[test]
    fn dft_matches_linear_path(l in 3usize..16, y in prop::collection::vec(0.0f64..10.0, 16)) {
        let y = &y[..l];
        let a = build_design_matrix(&MeasurementPhaseSet::equally_spaced(l, 0.0).unwrap());
        let lin = linear_estimate(y, &a).and_then(|x| phase_from_x(&x));
        match (dft_phase_estimate(y), lin) {
            (Ok(d), Ok(p)) => {
                let diff = canonical_phase(d.theta() - p.theta());
                prop_assert!(diff.min(TAU - diff) <= 1e-9);
            }
            (Err(Error::AmbiguousPhase), Err(Error::AmbiguousPhase)) => {}
            (d, p) => prop_assert!(false, "{d:?} vs {p:?}"),
        }
    }

    #[test]
    fn cone_projection_is_nearest(x in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), others in prop::collection::vec((0.0f64..3.0, 0.0..TAU, 0.0f64..1.0), 32)) {
        let x = XEstimate::new(x.0, x.1, x.2);
        let p = project_onto_cone(&x);
        prop_assert!(p.in_cone(1e-12));
        let again = project_onto_cone(&p);
        prop_assert!((again.x1 - p.x1).abs() + (again.x2 - p.x2).abs() + (again.x3 - p.x3).abs() <= 1e-14 * p.x1.max(1.0));
        let d = |q: &XEstimate| (q.x1 - x.x1).powi(2) + (q.x2 - x.x2).powi(2) + (q.x3 - x.x3).powi(2);
        for (r, t, f) in others {
            let q = XEstimate::new(r, f * r * t.cos(), f * r * t.sin());
            prop_assert!(d(&p) <= d(&q) + 1e-12);
        }
    }

    #[test]
    fn quantizer_maximizes_cosine(alpha in -10.0f64..10.0, k in 3usize..10) {
        let omega = DiscretePhaseSet::uniform(k).unwrap();
        let i = quantize_phase(alpha, &omega);
        let best = omega.values().iter().map(|w| (alpha - w).cos()).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(((alpha - omega.values()[i]).cos() - best).abs() <= 1e-12);
    }

    #[test]
    fn nap_lies_in_unit_interval(z in gains(6), t in prop::collection::vec(0.0..TAU, 6)) {
        let ch = ChannelRealization::new(z, 0.0).unwrap();
        let v = nap(&ch, &PhaseVector::from_radians(t)).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        prop_assert!((nap(&ch, &ch.genie_phases()).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn canonical_phase_range(a in -1e4f64..1e4) {
        let c = canonical_phase(a);
        prop_assert!((0.0..TAU).contains(&c));
        prop_assert!((Complex64::from_polar(1.0, c) - Complex64::from_polar(1.0, a)).norm() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn algorithm1_is_monotone_and_counts(ch in channel(1..=12), m in 1usize..6) {
        let n = ch.len();
        let cfg = AlignmentConfig::continuous(n, m, EstimatorKind::ClosedForm);
        let mut oracle = SimulatedOracle::new(&ch, NoiseStream::new(0, 0));
        let (phases, mut trace) = align_continuous_noiseless(&mut oracle, &cfg).unwrap();
        prop_assert_eq!(trace.total_measurements(), (3 * n * m) as u64);
        prop_assert_eq!(trace.final_phases(), phases);
        trace.annotate(&ch).unwrap();
        let p = powers(&ch, &cfg.initial_phases, &trace);
        for w in p.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12) - 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn algorithm4_is_feasible_monotone_and_bounded(ch in channel(1..=7), k in 3usize..6) {
        let n = ch.len();
        let omega = DiscretePhaseSet::uniform(k).unwrap();
        let cfg = AlignmentConfig::discrete(n, 20, omega.clone());
        let mut oracle = SimulatedOracle::new(&ch, NoiseStream::new(0, 0));
        let (phases, mut trace) = align_discrete(&mut oracle, &cfg).unwrap();
        prop_assert!(phases.iter().all(|t| omega.contains(t)));
        trace.annotate(&ch).unwrap();
        let p = powers(&ch, &cfg.initial_phases, &trace);
        for w in p.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12) - 1e-12);
        }
        let (_, best) = exhaustive_discrete_oracle(&ch, &omega).unwrap();
        prop_assert!(*p.last().unwrap() <= best * (1.0 + 1e-12));
    }

    #[test]
    fn random_benchmark_accounting(ch in channel(1..=10), m in 1usize..5, seed in any::<u64>()) {
        let n = ch.len();
        let cfg = AlignmentConfig::continuous(n, m, EstimatorKind::ClosedForm);
        let mut oracle = SimulatedOracle::new(&ch, NoiseStream::new(seed, 0));
        let mut rng = ris_align::signal::stream_rng(seed, 0, ris_align::signal::StreamPurpose::Algorithm);
        let (_, mut trace) = random_benchmark(&mut oracle, &cfg, &mut rng).unwrap();
        prop_assert_eq!(trace.total_measurements(), (n * m + 1) as u64);
        trace.annotate(&ch).unwrap();
        // noiseless, so accepted proposals never lower the power
        let p = powers(&ch, &cfg.initial_phases, &trace);
        for w in p.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].max(1.0));
        }
    }

    #[test]
    fn random_discrete_stays_in_alphabet(ch in channel(1..=8), seed in any::<u64>()) {
        let omega = DiscretePhaseSet::uniform(4).unwrap();
        let cfg = AlignmentConfig::discrete(ch.len(), 5, omega.clone());
        let discrete = matches!(cfg.mode, AlignmentMode::Discrete { .. });
        prop_assert!(discrete);
        let mut oracle = SimulatedOracle::new(&ch, NoiseStream::new(seed, 0));
        let mut rng = ris_align::signal::stream_rng(seed, 0, ris_align::signal::StreamPurpose::Algorithm);
        let (phases, trace) = random_benchmark(&mut oracle, &cfg, &mut rng).unwrap();
        prop_assert!(phases.iter().all(|t| omega.contains(t)));
        prop_assert!(trace.records.iter().all(|r| omega.contains(r.phase)));
    }
}
