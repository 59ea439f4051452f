//! Property suites over the pure parts of the pipeline.

use proptest::prelude::*;
use rttseg_core::changepoint::{
    change_frequency, extract_changepoints, score, ChangePointSet, LabeledChange, TruthSet,
};
use rttseg_core::prob::{nix_posterior, sample_dirichlet, NixParams};
use rttseg_core::rng::rng_from_seed;
use rttseg_core::series::{regularize, RawTick, RegularSeries};
use rttseg_core::validation::{qq_points, LikelihoodPair};

fn tick_strategy() -> impl Strategy<Value = RawTick> {
    (0i64..2400, proptest::collection::vec(0.0f64..500.0, 0..4))
        .prop_map(|(t, vs)| RawTick::new(t, vs))
}

proptest! {
    #[test]
    fn regularize_length_is_window_function(
        ticks in proptest::collection::vec(tick_strategy(), 0..40),
        slots in 1i64..12,
        interval in 1i64..600,
    ) {
        let stop = slots * interval;
        let series: RegularSeries<f64> = regularize(&ticks, 0, stop, interval).unwrap();
        prop_assert_eq!(series.len() as i64, slots);
    }

    #[test]
    fn regularize_keeps_slot_minima(
        ticks in proptest::collection::vec(tick_strategy(), 0..40),
        interval in 1i64..600,
    ) {
        let stop = 2400;
        let series: RegularSeries<f64> = regularize(&ticks, 0, stop, interval).unwrap();
        for tick in &ticks {
            if tick.timestamp < 0 || tick.timestamp >= stop {
                continue;
            }
            let slot = (tick.timestamp / interval) as usize;
            for &v in &tick.rtt_values {
                let held = series.value(slot).expect("slot with a tick has a value");
                prop_assert!(held <= v + 1e-12);
            }
        }
    }

    #[test]
    fn regularize_is_idempotent(
        ticks in proptest::collection::vec(tick_strategy(), 1..40),
        interval in 1i64..600,
    ) {
        let stop = 2400;
        let series: RegularSeries<f64> = regularize(&ticks, 0, stop, interval).unwrap();
        let again: RegularSeries<f64> = regularize(&series.to_ticks(), 0, stop, interval).unwrap();
        prop_assert_eq!(series, again);
    }

    #[test]
    fn nix_updates_compose(
        data in proptest::collection::vec(-50.0f64..50.0, 0..20),
        split in 0usize..20,
    ) {
        let split = split.min(data.len());
        let prior = NixParams::<f64>::new(1.0, 0.5, 2.0, 3.0).unwrap();
        let joint = nix_posterior(&prior, &data);
        let twostep = nix_posterior(&nix_posterior(&prior, &data[..split]), &data[split..]);
        prop_assert!((joint.mu0 - twostep.mu0).abs() < 1e-10);
        prop_assert!((joint.kappa0 - twostep.kappa0).abs() < 1e-10);
        prop_assert!((joint.nu0 - twostep.nu0).abs() < 1e-10);
        prop_assert!((joint.sigma0_sq - twostep.sigma0_sq).abs() < 1e-10);
    }

    #[test]
    fn dirichlet_draws_live_on_the_simplex(
        conc in proptest::collection::vec(0.05f64..20.0, 2..6),
        seed in 0u64..1000,
    ) {
        let mut rng = rng_from_seed(seed);
        let draw = sample_dirichlet(&conc, &mut rng).unwrap();
        prop_assert!((draw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(draw.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn changepoints_depend_only_on_equality_structure(
        states in proptest::collection::vec(0usize..4, 2..40),
        offset in 1usize..7,
    ) {
        let series = RegularSeries::<f64>::new(0, 240, vec![Some(1.0); states.len()]).unwrap();
        let relabelled: Vec<usize> = states.iter().map(|s| (s + offset) * 3).collect();
        let a = extract_changepoints(&states, &series).unwrap();
        let b = extract_changepoints(&relabelled, &series).unwrap();
        prop_assert_eq!(a.change_times, b.change_times);
    }

    #[test]
    fn score_is_shift_invariant(
        preds in proptest::collection::vec(0i64..5000, 0..10),
        truths in proptest::collection::vec((0i64..5000, 0.1f64..10.0), 0..10),
        tol in 0i64..400,
        shift in -100_000i64..100_000,
    ) {
        let pred = ChangePointSet { series_id: String::new(), change_times: preds.clone() };
        let truth = TruthSet::new(
            "t",
            truths.iter().map(|&(time, magnitude)| LabeledChange { time, magnitude }).collect(),
        );
        let base = score(&pred, &truth, tol);
        let pred_s = ChangePointSet {
            series_id: String::new(),
            change_times: preds.iter().map(|t| t + shift).collect(),
        };
        let truth_s = TruthSet::new(
            "t",
            truths
                .iter()
                .map(|&(time, magnitude)| LabeledChange { time: time + shift, magnitude })
                .collect(),
        );
        let shifted = score(&pred_s, &truth_s, tol);
        prop_assert_eq!(base.true_positive, shifted.true_positive);
        prop_assert_eq!(base.false_positive, shifted.false_positive);
        prop_assert_eq!(base.false_negative, shifted.false_negative);
        prop_assert!((base.weighted_recall - shifted.weighted_recall).abs() < 1e-12);
    }

    #[test]
    fn change_frequency_conserves_counts(
        times in proptest::collection::vec(-1000i64..6000, 0..60),
        width in 1i64..900,
    ) {
        let set = ChangePointSet { series_id: String::new(), change_times: times.clone() };
        let freq = change_frequency(&[set], 0, 5000, width).unwrap();
        let in_window = times.iter().filter(|&&t| (0..5000).contains(&t)).count() as u64;
        prop_assert_eq!(freq.total(), in_window);
        prop_assert_eq!(freq.counts.len(), 5000usize.div_ceil(width as usize));
    }

    #[test]
    fn qq_points_are_monotone_and_conserve(
        obs in proptest::collection::vec(-100.0f64..0.0, 2..30),
        sims in proptest::collection::vec(-100.0f64..0.0, 2..30),
    ) {
        let n = obs.len().min(sims.len());
        let pairs: Vec<LikelihoodPair<f64>> = obs[..n]
            .iter()
            .zip(&sims[..n])
            .map(|(&o, &s)| LikelihoodPair {
                series_id: String::new(),
                observed_loglik: o,
                simulated_loglik: s,
                len: 1,
            })
            .collect();
        let qq = qq_points(&pairs).unwrap();
        for w in qq.windows(2) {
            prop_assert!(w[0].0 <= w[1].0);
            prop_assert!(w[0].1 <= w[1].1);
        }
        let mut xs: Vec<f64> = qq.iter().map(|p| p.0).collect();
        let mut want: Vec<f64> = obs[..n].to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(xs, want);
    }
}
