//! The ground-truth dynamic image against a second derivation: rank pooling as
//! a ramp-weighted sum of running means of the frames.

use fdp::data::Image;
use fdp::dynimg::{dynamic_image, normalize, rank_pool, rank_pool_coefficients};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weights the running mean `v_t = (1/t) Σ_{τ≤t} x_τ` by `2t − T − 1` and
/// collects the contribution of each frame, without harmonic numbers.
fn running_mean_coefficients(frames: usize) -> Vec<f64> {
    let big_t = frames as f64;
    let mut alphas = vec![0.0; frames];
    for t in 1..=frames {
        let beta = 2.0 * t as f64 - big_t - 1.0;
        for a in alphas.iter_mut().take(t) {
            *a += beta / t as f64;
        }
    }
    alphas
}

fn random_clip(rng: &mut ChaCha8Rng, frames: usize, channels: usize, h: usize, w: usize) -> Vec<Image> {
    (0..frames)
        .map(|_| {
            let data = (0..channels * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
            Image::new(channels, h, w, data).unwrap()
        })
        .collect()
}

#[test]
fn hand_derived_two_and_three_frame_coefficients() {
    let c2 = rank_pool_coefficients(2).unwrap().alphas;
    assert!((c2[0] + 0.5).abs() < 1e-9 && (c2[1] - 0.5).abs() < 1e-9);
    let c3 = rank_pool_coefficients(3).unwrap().alphas;
    for (a, want) in c3.iter().zip([-4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]) {
        assert!((a - want).abs() < 1e-9);
    }
}

#[test]
fn coefficients_agree_with_running_mean_derivation_and_sum_to_zero() {
    for frames in 2..=64 {
        let closed = rank_pool_coefficients(frames).unwrap().alphas;
        let other = running_mean_coefficients(frames);
        for (a, b) in closed.iter().zip(&other) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "T = {frames}");
        }
        assert!(closed.iter().sum::<f64>().abs() < 1e-9, "T = {frames}");
    }
}

#[test]
fn pooled_map_matches_direct_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for frames in [2, 3, 7, 24] {
        let clip = random_clip(&mut rng, frames, 1, 5, 4);
        let alphas = running_mean_coefficients(frames);
        let pooled = rank_pool(&clip).unwrap();
        for (i, &p) in pooled.iter().enumerate() {
            let want: f64 = clip.iter().zip(&alphas).map(|(f, a)| a * f.data()[i] as f64).sum();
            assert!((p - want).abs() < 1e-9);
        }
    }
}

#[test]
fn two_frame_clip_is_the_normalized_half_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clip = random_clip(&mut rng, 2, 1, 6, 6);
    let half: Vec<f64> = clip[1]
        .data()
        .iter()
        .zip(clip[0].data())
        .map(|(&b, &a)| 0.5 * (b as f64 - a as f64))
        .collect();
    let want = normalize(&half);
    let d = dynamic_image(&clip).unwrap();
    for (&v, w) in d.data().iter().zip(want) {
        assert!((v as f64 - w).abs() < 1e-6);
    }
}

#[test]
fn constant_clip_is_uniform_mid_gray() {
    for frames in [2, 5, 16] {
        let clip = vec![Image::filled(3, 4, 4, 0.8); frames];
        assert!(dynamic_image(&clip).unwrap().data().iter().all(|&v| v == 0.5));
    }
}

#[test]
fn linear_ramp_pools_to_a_positive_constant() {
    for frames in 2..=20 {
        let clip: Vec<Image> = (1..=frames)
            .map(|t| Image::filled(1, 3, 3, t as f32 / frames as f32))
            .collect();
        let pooled = rank_pool(&clip).unwrap();
        assert!(pooled.iter().all(|&v| v > 0.0 && (v - pooled[0]).abs() < 1e-9));
        assert!(dynamic_image(&clip).unwrap().data().iter().all(|&v| v == 0.5));
    }
}

#[test]
fn gray_before_pooling_equals_pooling_each_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let clip = random_clip(&mut rng, 6, 3, 5, 5);
    let gray: Vec<Image> = clip.iter().map(Image::to_gray).collect();
    let pooled_gray = rank_pool(&gray).unwrap();
    let pooled_color = rank_pool(&clip).unwrap();
    let plane = 25;
    for i in 0..plane {
        let mean = (pooled_color[i] + pooled_color[plane + i] + pooled_color[2 * plane + i]) / 3.0;
        assert!((pooled_gray[i] - mean).abs() < 1e-6);
    }
}

proptest! {
    /// Adding the same constant to every frame leaves the image bit-identical.
    #[test]
    fn offset_invariance_is_exact(seed in 0u64..10_000, frames in 2usize..12, offset in -0.25f32..0.25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Quarter-steps keep the shifted samples exactly representable.
        let quant = |v: f32| (v * 256.0).round() / 256.0;
        let clip: Vec<Image> = random_clip(&mut rng, frames, 1, 4, 5)
            .into_iter()
            .map(|f| Image::new(1, 4, 5, f.data().iter().map(|&v| quant(v)).collect()).unwrap())
            .collect();
        let c = quant(offset);
        let shifted: Vec<Image> = clip
            .iter()
            .map(|f| Image::new(1, 4, 5, f.data().iter().map(|&v| v + c).collect()).unwrap())
            .collect();
        let a = dynamic_image(&clip).unwrap();
        let b = dynamic_image(&shifted).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn output_lies_in_the_unit_interval(seed in 0u64..10_000, frames in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dynamic_image(&random_clip(&mut rng, frames, 3, 4, 4)).unwrap();
        prop_assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(d.channels(), 1);
    }
}
