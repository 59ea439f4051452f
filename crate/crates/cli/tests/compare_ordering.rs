//! On noisy multi-level data the sticky nonparametric model should hand
//! back fewer segments than the BIC-selected Baum-Welch fit, whose
//! Viterbi path flips freely wherever the levels overlap.

use rttseg_cli::commands::{compare, SamplerArgs};
use rttseg_core::rng::rng_from_seed;
use rttseg_core::scalar::Scalar;
use rttseg_core::series::RegularSeries;

fn noisy_three_level(seed: u64) -> RegularSeries<f64> {
    let mut rng = rng_from_seed(seed);
    let levels = [10.0, 20.0, 30.0];
    let mut values = Vec::with_capacity(150);
    for block in 0..5 {
        let level = levels[block % 3];
        for _ in 0..30 {
            let y: f64 = level + 4.0 * f64::sample_standard_normal(&mut rng);
            values.push(Some(y.max(0.0)));
        }
    }
    RegularSeries::new(0, 240, values).unwrap()
}

#[test]
fn hdphmm_segments_at_most_as_much_as_bic_hmm() {
    let args = SamplerArgs { sweeps: 150, burn_in: 50, chains: 2, ..Default::default() };
    let models = vec!["hmm".to_string(), "hdphmm".to_string()];
    let mut diffs = Vec::new();
    for seed in 0..20u64 {
        let series = noisy_three_level(4000 + seed);
        let mut args = args.clone();
        args.seed = seed;
        let output = compare(&series, &format!("s{seed}"), &models, 4, &args).unwrap();
        let hmm_segments = output.models[0].num_segments as i64;
        let hdp_segments = output.models[1].num_segments as i64;
        diffs.push(hdp_segments - hmm_segments);
    }
    diffs.sort_unstable();
    let median = diffs[diffs.len() / 2];
    assert!(median <= 0, "median segment-count difference {median} (want <= 0); diffs {diffs:?}");
}
