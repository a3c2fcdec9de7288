use hsplat_core::evaluate::{
    bad_pixel_analysis, bad_pixel_mask, complexity_report, masked_psnr, pixel_mse, psnr, psnr_from_mse, ssim,
    SsimError,
};
use hsplat_core::numerics::Tensor;
use hsplat_core::trainer::ModelConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
    Tensor::new(&[h, w, 3], (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn identical_images_have_infinite_psnr() {
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 4, 4);
    assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
}

#[test]
fn uniform_error_of_point_one_is_20_db() {
    let a = Tensor::full(&[3, 5, 3], 0.5f32);
    let b = Tensor::full(&[3, 5, 3], 0.6f32);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
}

#[test]
fn psnr_rejects_mismatched_shapes() {
    assert!(psnr(&Tensor::zeros(&[2, 2, 3]), &Tensor::zeros(&[2, 3, 3])).is_err());
}

proptest! {
    #[test]
    fn psnr_matches_a_direct_sum(seed in 0u64..1000, h in 1usize..6, w in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, h, w);
        let b = random_image(&mut rng, h, w);
        let mut sum = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let i = (y * w + x) * 3 + c;
                    sum += (a.data()[i] as f64 - b.data()[i] as f64).powi(2);
                }
            }
        }
        let want = 10.0 * (1.0 / (sum / (h * w * 3) as f64)).log10();
        prop_assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn bad_pixel_mask_ignores_channel_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 5, 4);
        let b = random_image(&mut rng, 5, 4);
        let swap = |t: &Tensor<f32>| {
            let d: Vec<f32> = t.data().chunks(3).flat_map(|p| [p[2], p[0], p[1]]).collect();
            Tensor::new(&[5, 4, 3], d).unwrap()
        };
        prop_assert_eq!(bad_pixel_mask(&a, &b).unwrap(), bad_pixel_mask(&swap(&a), &swap(&b)).unwrap());
    }
}

#[test]
fn ssim_of_an_image_with_itself_is_one() {
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(2), 16, 16);
    assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_of_a_negative_is_below_one() {
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(3), 16, 16);
    let neg = Tensor::new(&[16, 16, 3], img.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    assert!(ssim(&img, &neg).unwrap() < 0.0);
}

#[test]
fn ssim_of_two_constants_has_a_closed_form() {
    let (a, b) = (0.25f32, 0.75f32);
    let x = Tensor::full(&[12, 13, 3], a);
    let y = Tensor::full(&[12, 13, 3], b);
    let c1 = 0.01f64 * 0.01;
    let (a, b) = (a as f64, b as f64);
    let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    assert!((ssim(&x, &y).unwrap() - want).abs() < 1e-9);
}

#[test]
fn ssim_needs_a_full_window() {
    let x = Tensor::zeros(&[10, 16, 3]);
    assert_eq!(ssim(&x, &x), Err(SsimError::TooSmall { height: 10, width: 16 }));
}

/// 2x2 image whose per-pixel errors are 0, 0.04, 0.25 and 1.
fn graded_pair() -> (Tensor<f32>, Tensor<f32>) {
    let truth = Tensor::zeros(&[2, 2, 3]);
    let render = Tensor::new(&[2, 2, 3], [0.0f32, 0.2, 0.5, 1.0].iter().flat_map(|&d| [d; 3]).collect()).unwrap();
    (render, truth)
}

#[test]
fn bad_pixels_are_those_above_a_tenth_of_the_worst() {
    let (render, truth) = graded_pair();
    let e = pixel_mse(&render, &truth).unwrap();
    for (g, w) in e.iter().zip([0.0, 0.04, 0.25, 1.0]) {
        assert!((g - w).abs() < 1e-7);
    }
    let mask = bad_pixel_mask(&render, &truth).unwrap();
    assert_eq!(mask, [false, false, true, true]);
    let p = masked_psnr(&render, &truth, &mask).unwrap().unwrap();
    assert!((p - (-10.0 * 0.625f64.log10())).abs() < 1e-6);
    assert_eq!(masked_psnr(&render, &truth, &[false; 4]).unwrap(), None);
}

#[test]
fn a_perfect_render_leads_on_the_other_renders_bad_pixels() {
    let (render, truth) = graded_pair();
    let r = bad_pixel_analysis(&[render], &[truth.clone()], &[truth]).unwrap();
    assert_eq!(r.b_on_a, 100.0);
    assert!(r.b_lead_on_a() > 0.0);
    // the perfect render has no bad pixels of its own
    assert_eq!(r.empty_b, 1);
    assert!(r.a_on_b.is_nan());
}

#[test]
fn bad_pixel_analysis_checks_counts() {
    let (render, truth) = graded_pair();
    assert!(bad_pixel_analysis(&[render.clone()], &[], &[truth]).is_err());
}

#[test]
fn encoder_cost_scales_with_pixel_count() {
    let small = complexity_report(&ModelConfig::desk(32).unwrap());
    let large = complexity_report(&ModelConfig::desk(64).unwrap());
    assert_eq!(large.encoder_macs, 4 * small.encoder_macs);
    assert_eq!(large.child_macs, 4 * small.child_macs);
    assert_eq!(large.encoder_params, small.encoder_params);
    assert_eq!(small.child_params, 3834);
}

#[test]
fn child_heads_are_a_small_share_of_the_desk_model() {
    let r = complexity_report(&ModelConfig::desk(32).unwrap());
    assert!(r.child_share() < 0.05, "{}", r.child_share());
    let mut parents_only = ModelConfig::desk(32).unwrap();
    parents_only.children = false;
    let r = complexity_report(&parents_only);
    assert_eq!((r.child_params, r.child_macs), (0, 0));
}
