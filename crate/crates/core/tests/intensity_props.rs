use ndarray::{Array2, Array3};
use proptest::prelude::*;

use twophoton::intensity::{
    difference_map, frame_means, mean_equalize, mean_equalize_masked, pixel_stats, total_variance,
};
use twophoton::stack::FUNCTIONAL;
use twophoton::{synth, SynthConfig};

fn positive_channel(frames: usize, rows: usize, cols: usize) -> impl Strategy<Value = Array3<f32>> {
    prop::collection::vec(0.5f32..5000.0, frames * rows * cols)
        .prop_map(move |v| Array3::from_shape_vec((frames, rows, cols), v).unwrap())
}

fn any_channel() -> impl Strategy<Value = Array3<f32>> {
    (1usize..12, 1usize..8, 1usize..8).prop_flat_map(|(t, r, c)| positive_channel(t, r, c))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn equalized_frames_share_the_standard(ch in any_channel()) {
        let (out, report) = mean_equalize(ch.view()).unwrap();
        for m in frame_means(out.view()) {
            prop_assert!(rel(m, report.standard) <= 1e-6);
        }
        let naive = report.frame_means_before.iter().sum::<f64>() / ch.dim().0 as f64;
        prop_assert!(rel(report.standard, naive) <= 1e-12);
    }

    #[test]
    fn equalization_is_idempotent(ch in any_channel()) {
        let (once, _) = mean_equalize(ch.view()).unwrap();
        let (twice, _) = mean_equalize(once.view()).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!(rel(*b as f64, *a as f64) <= 1e-6);
        }
    }

    #[test]
    fn equalization_is_scale_equivariant(ch in any_channel(), c in 0.01f32..100.0) {
        let (base, _) = mean_equalize(ch.view()).unwrap();
        let scaled = ch.mapv(|v| v * c);
        let (out, _) = mean_equalize(scaled.view()).unwrap();
        for (a, b) in base.iter().zip(&out) {
            prop_assert!(rel(*b as f64, (*a * c) as f64) <= 1e-6);
        }
    }

    #[test]
    fn full_mask_equalization_matches_unmasked(ch in any_channel()) {
        let (_, rows, cols) = ch.dim();
        let (a, ra) = mean_equalize(ch.view()).unwrap();
        let (b, rb) = mean_equalize_masked(ch.view(), &Array2::from_elem((rows, cols), true)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(rel(ra.standard, rb.standard) <= 1e-12);
    }

    #[test]
    fn pixel_stats_match_two_pass_oracle(ch in positive_channel(16, 8, 8)) {
        let ps = pixel_stats(ch.view()).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let series: Vec<f64> = (0..16).map(|t| ch[[t, r, c]] as f64).collect();
                let mean = series.iter().sum::<f64>() / 16.0;
                let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 15.0;
                prop_assert!(rel(ps.mean_map[[r, c]], mean) <= 1e-6);
                prop_assert!((ps.var_map[[r, c]] - var).abs() <= 1e-6 * var.max(1.0));
            }
        }
        prop_assert!(total_variance(&ps) >= 0.0);
    }

    #[test]
    fn difference_map_is_antisymmetric(
        a in prop::collection::vec(-1e6f64..1e6, 12),
        b in prop::collection::vec(-1e6f64..1e6, 12),
    ) {
        let a = Array2::from_shape_vec((3, 4), a).unwrap();
        let b = Array2::from_shape_vec((3, 4), b).unwrap();
        let ab = difference_map(a.view(), b.view()).unwrap();
        let ba = difference_map(b.view(), a.view()).unwrap();
        prop_assert_eq!(ab, ba.mapv(|v| -v));
    }
}

#[test]
fn gain_wobble_is_undone_up_to_scale() {
    let cfg = SynthConfig {
        rows: 48,
        cols: 48,
        frames: 90,
        noise_sd: 0.0,
        global_gain_wobble: 0.2,
        seed: 12,
        ..SynthConfig::default()
    };
    let (stack, truth) = synth::generate(&cfg).unwrap();
    let (out, report) = mean_equalize(stack.channel(FUNCTIONAL).unwrap()).unwrap();
    for m in &report.frame_means_after {
        assert!(rel(*m, report.standard) <= 1e-6);
    }
    // Without noise every frame is gain_t times the same scene, so the frame
    // means are proportional to the gains.
    let ratio = report.frame_means_before[0] / truth.per_frame_gain[0];
    for (m, g) in report.frame_means_before.iter().zip(&truth.per_frame_gain) {
        assert!(rel(m / g, ratio) <= 1e-5);
    }
    let after = pixel_stats(out.view()).unwrap();
    assert!(total_variance(&after) < 1e-3 * report.total_var_before);
    assert!(report.total_var_after < report.total_var_before);
}

#[test]
fn gain_offsets_reduce_total_variance_with_noise() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            rows: 32,
            cols: 32,
            frames: 60,
            noise_sd: 3.0,
            global_gain_wobble: 0.05,
            seed,
            ..SynthConfig::default()
        };
        let (stack, _) = synth::generate(&cfg).unwrap();
        let (_, report) = mean_equalize(stack.channel(FUNCTIONAL).unwrap()).unwrap();
        assert!(
            report.total_var_after < report.total_var_before,
            "seed {seed}"
        );
        assert!(report.reduction_pct > 0.0);
    }
}
