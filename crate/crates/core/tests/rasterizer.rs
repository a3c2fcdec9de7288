use hsplat_core::numerics::{gradcheck, Objective, Tape, Tensor};
use hsplat_core::rasterizer::{
    project, render, render_backward, render_batch, render_naive, sh_color_var, CullReason,
    Projection, RasterConfig, RenderLoss, RenderMode, SplatBatch, PACKED_WIDTH,
};
use hsplat_core::numerics::{NumericsError, Real, Var};
use hsplat_core::scene::{CameraPose, Gaussian3D, GaussianColor, GaussianMixture};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn identity_cam(w: usize, h: usize, f: f32) -> CameraPose {
    let mut e = [[0.0f32; 4]; 4];
    for i in 0..4 {
        e[i][i] = 1.0;
    }
    CameraPose::new(CameraPose::intrinsics_for(w, h, f), e, 0.1, 100.0).unwrap()
}

fn rgb_gaussian(mean: [f32; 3], scale: f32, opacity: f32, rgb: [f32; 3]) -> Gaussian3D {
    Gaussian3D::new(mean, [1.0, 0.0, 0.0, 0.0], [scale; 3], opacity, GaussianColor::Rgb(rgb)).unwrap()
}

fn random_mixture(rng: &mut ChaCha8Rng, n: usize) -> GaussianMixture {
    let gaussians = (0..n)
        .map(|_| {
            let q: [f32; 4] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
            Gaussian3D::new(
                [
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(2.0..6.0),
                ],
                if q.iter().map(|v| v * v).sum::<f32>() < 1e-3 { [1.0, 0.0, 0.0, 0.0] } else { q },
                core::array::from_fn(|_| rng.random_range(0.02..0.4)),
                rng.random_range(0.05..0.99),
                GaussianColor::Rgb(core::array::from_fn(|_| rng.random_range(0.0..1.0))),
            )
            .unwrap()
        })
        .collect();
    GaussianMixture::new(gaussians)
}

#[test]
fn on_axis_projection() {
    let (f, z, s) = (50.0f32, 4.0f32, 0.2f32);
    let cam = identity_cam(32, 32, f);
    let g = rgb_gaussian([0.0, 0.0, z], s, 0.5, [1.0; 3]);
    let sp = project(&g, &cam, 32, 32, &RasterConfig::default());
    let sp = sp.visible().expect("visible");
    assert!((sp.mean2d[0] - 16.0).abs() < 1e-6 && (sp.mean2d[1] - 16.0).abs() < 1e-6);
    let want = (f * s / z).powi(2) + 0.3;
    assert!((sp.cov2d[0][0] - want).abs() < 1e-4);
    assert!((sp.cov2d[1][1] - want).abs() < 1e-4);
    assert!(sp.cov2d[0][1].abs() < 1e-6);
    assert!((sp.depth - z).abs() < 1e-6);
}

#[test]
fn culling_rules() {
    let cam = identity_cam(32, 32, 40.0);
    let cfg = RasterConfig::default();
    let behind = rgb_gaussian([0.0, 0.0, -1.0], 0.1, 0.5, [1.0; 3]);
    assert_eq!(project(&behind, &cam, 32, 32, &cfg), Projection::Culled(CullReason::Depth));
    let far = rgb_gaussian([0.0, 0.0, 200.0], 0.1, 0.5, [1.0; 3]);
    assert_eq!(project(&far, &cam, 32, 32, &cfg), Projection::Culled(CullReason::Depth));
    // |u - cx| = 40 * 2 / 2 = 40 px > 1.3 * 16
    let side = rgb_gaussian([2.0, 0.0, 2.0], 0.1, 0.5, [1.0; 3]);
    assert_eq!(project(&side, &cam, 32, 32, &cfg), Projection::Culled(CullReason::Frustum));
    // 16 * 1.25 = 20 px off center stays inside the widened frustum
    let edge = rgb_gaussian([1.0, 0.0, 2.0], 0.1, 0.5, [1.0; 3]);
    assert!(project(&edge, &cam, 32, 32, &cfg).visible().is_some());
}

#[test]
fn translation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = CameraPose::intrinsics_for(32, 32, 40.0);
    let cfg = RasterConfig::default();
    for _ in 0..20 {
        let eye: [f32; 3] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), -3.0];
        let target = [0.0f32; 3];
        let shift: [f32; 3] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mean: [f32; 3] = core::array::from_fn(|_| rng.random_range(-0.3..0.3));
        let q = [0.9f32, 0.1, -0.3, 0.2];
        let g0 = Gaussian3D::new(mean, q, [0.1, 0.2, 0.05], 0.7, GaussianColor::Rgb([1.0; 3])).unwrap();
        let moved = [mean[0] + shift[0], mean[1] + shift[1], mean[2] + shift[2]];
        let g1 = Gaussian3D::new(moved, q, [0.1, 0.2, 0.05], 0.7, GaussianColor::Rgb([1.0; 3])).unwrap();
        let add = |p: [f32; 3]| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]];
        let c0 = CameraPose::look_at(eye, target, [0.0, 1.0, 0.0], k, 0.1, 10.0).unwrap();
        let c1 = CameraPose::look_at(add(eye), add(target), [0.0, 1.0, 0.0], k, 0.1, 10.0).unwrap();
        let a = project(&g0, &c0, 32, 32, &cfg);
        let b = project(&g1, &c1, 32, 32, &cfg);
        let (a, b) = (a.visible().unwrap(), b.visible().unwrap());
        for i in 0..2 {
            // relative to the magnitude of pixel coordinates
            assert!((a.mean2d[i] - b.mean2d[i]).abs() < 1e-5 * 32.0, "{a:?} {b:?}");
            for j in 0..2 {
                assert!((a.cov2d[i][j] - b.cov2d[i][j]).abs() < 1e-5 * a.cov2d[i][i].abs().max(1.0));
            }
        }
        assert!((a.depth - b.depth).abs() < 1e-5);
    }
}

#[test]
fn lone_splat_alpha_peaks_and_decays() {
    let (w, h, f, z) = (32usize, 32usize, 40.0f32, 4.0f32);
    let cam = identity_cam(w, h, f);
    // shift by half a pixel so the center lands on pixel (16, 16)'s center
    let g = rgb_gaussian([0.5 * z / f, 0.5 * z / f, z], 0.3, 0.98, [1.0; 3]);
    let out = render(&GaussianMixture::new(vec![g]), &cam, w, h, &RasterConfig::default()).unwrap();
    let a = |x: usize, y: usize| out.alpha[y * w + x];
    let peak = a(16, 16);
    assert!(out.alpha.iter().all(|&v| v <= peak));
    for (dx, dy) in [(1i32, 0i32), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, -1)] {
        let mut prev = peak;
        for r in 1..10 {
            let v = a((16 + dx * r) as usize, (16 + dy * r) as usize);
            assert!(v <= prev, "not monotone along ({dx},{dy}) at r={r}");
            prev = v;
        }
    }
}

#[test]
fn culled_mixture_is_background() {
    let cam = identity_cam(16, 16, 20.0);
    let cfg = RasterConfig {
        background: [0.2, 0.4, 0.6],
        ..RasterConfig::default()
    };
    let mix = GaussianMixture::new(vec![rgb_gaussian([0.0, 0.0, -2.0], 0.2, 0.9, [1.0; 3])]);
    let out = render(&mix, &cam, 16, 16, &cfg).unwrap();
    assert_eq!(out.diagnostics.culled, 1);
    for p in 0..256 {
        assert_eq!(&out.image[p * 3..p * 3 + 3], &[0.2, 0.4, 0.6]);
        assert_eq!(out.alpha[p], 0.0);
    }
    assert!(render(&GaussianMixture::new(vec![]), &cam, 16, 16, &cfg).is_err());
}

#[test]
fn two_splat_compositing() {
    let (f, w) = (20.0f32, 16usize);
    let cam = identity_cam(w, w, f);
    // both centered on pixel (8, 8)'s center
    let at = |z: f32| [0.5 * z / f, 0.5 * z / f, z];
    let red = rgb_gaussian(at(2.0), 0.1, 0.6, [1.0, 0.0, 0.0]);
    let blue = rgb_gaussian(at(3.0), 0.1, 0.6, [0.0, 0.0, 1.0]);
    for order in [vec![red.clone(), blue.clone()], vec![blue, red]] {
        let out = render(&GaussianMixture::new(order), &cam, w, w, &RasterConfig::default()).unwrap();
        let p = (8 * w + 8) * 3;
        assert!((out.image[p] - 0.6).abs() < 1e-6);
        assert!(out.image[p + 1].abs() < 1e-7);
        assert!((out.image[p + 2] - 0.24).abs() < 1e-6);
    }
}

#[test]
fn depth_ties_break_by_index() {
    let cam = identity_cam(16, 16, 20.0);
    let a = rgb_gaussian([0.0, 0.0, 3.0], 0.2, 0.9, [1.0, 0.0, 0.0]);
    let b = rgb_gaussian([0.0, 0.0, 3.0], 0.2, 0.9, [0.0, 1.0, 0.0]);
    let cfg = RasterConfig::default();
    let ab = render(&GaussianMixture::new(vec![a.clone(), b.clone()]), &cam, 16, 16, &cfg).unwrap();
    let ab2 = render(&GaussianMixture::new(vec![a.clone(), b.clone()]), &cam, 16, 16, &cfg).unwrap();
    let ba = render(&GaussianMixture::new(vec![b, a]), &cam, 16, 16, &cfg).unwrap();
    assert_eq!(ab, ab2);
    let p = (8 * 16 + 8) * 3;
    assert!(ab.image[p] > ab.image[p + 1]);
    assert!(ba.image[p] < ba.image[p + 1]);
}

#[test]
fn naive_and_tiled_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = RasterConfig {
        background: [0.1, 0.2, 0.3],
        ..RasterConfig::default()
    };
    for scene in 0..20 {
        let (w, h) = (rng.random_range(20..70), rng.random_range(20..70));
        let cam = identity_cam(w, h, 0.8 * w as f32);
        let mix = random_mixture(&mut rng, 30 + scene * 5);
        let a = render_naive(&mix, &cam, w, h, &cfg).unwrap();
        let b = render(&mix, &cam, w, h, &cfg).unwrap();
        let worst = a.image.iter().zip(&b.image).fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
        assert!(worst <= 1e-5, "scene {scene}: {worst}");
        assert_eq!(a.diagnostics, b.diagnostics);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_bound(seed in 0u64..1000, bg in prop::array::uniform3(0.0f32..1.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = random_mixture(&mut rng, 25);
        let cam = identity_cam(24, 24, 20.0);
        let cfg = RasterConfig { background: bg, ..RasterConfig::default() };
        let out = render(&mix, &cam, 24, 24, &cfg).unwrap();
        for p in 0..24 * 24 {
            prop_assert!((0.0..=1.0).contains(&out.alpha[p]));
            for ch in 0..3 {
                let v = out.image[p * 3 + ch];
                prop_assert!(v.is_finite() && v >= 0.0 && v <= 1.0 + bg[ch] + 1e-6);
            }
        }
    }
}

fn pack(mix: &[([f32; 3], [f32; 4], [f32; 3], f32, [f32; 3])]) -> Tensor<f32> {
    let mut data = Vec::new();
    for (m, q, s, o, c) in mix {
        data.extend_from_slice(m);
        data.extend_from_slice(q);
        data.extend_from_slice(s);
        data.push(*o);
        data.extend_from_slice(c);
    }
    Tensor::new(&[mix.len(), PACKED_WIDTH], data).unwrap()
}

fn render_packed(x: &Tensor<f32>, cam: &CameraPose, w: usize, h: usize) -> Vec<f32> {
    let tape = Tape::<f32>::new();
    let v = tape.constant(x.clone());
    let img = hsplat_core::rasterizer::render_var(
        v.channels(0, 3).unwrap(),
        v.channels(3, 4).unwrap(),
        v.channels(7, 3).unwrap(),
        v.channels(10, 1).unwrap(),
        v.channels(11, 3).unwrap(),
        cam,
        w,
        h,
        &RasterConfig::default(),
    )
    .unwrap();
    img.value().data().to_vec()
}

#[test]
fn render_loss_gradcheck_three_gaussians() {
    let cam = CameraPose::look_at(
        [0.3, -0.2, -3.0],
        [0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        CameraPose::intrinsics_for(16, 16, 18.0),
        0.1,
        10.0,
    )
    .unwrap();
    let x = pack(&[
        ([-0.5, -0.4, 0.1], [0.9, 0.2, -0.1, 0.3], [0.25, 0.15, 0.2], 0.7, [0.9, 0.2, 0.1]),
        ([0.45, 0.1, -0.2], [0.7, -0.3, 0.5, 0.1], [0.12, 0.3, 0.18], 0.55, [0.1, 0.8, 0.3]),
        ([0.0, 0.5, 0.4], [0.5, 0.5, 0.1, -0.6], [0.2, 0.2, 0.1], 0.8, [0.2, 0.3, 0.9]),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target: Vec<f32> = (0..16 * 16 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let loss = RenderLoss {
        cam,
        width: 16,
        height: 16,
        target,
        cfg: RasterConfig::untruncated(),
    };
    let report = gradcheck(&loss, &x, 1e-3, 1e-3).unwrap();
    assert!(report.passed, "max rel error {}", report.max_rel_error);
}

#[test]
fn opacity_gradient_is_positive() {
    let cam = identity_cam(16, 16, 20.0);
    let mix = GaussianMixture::new(vec![rgb_gaussian([0.1, 0.0, 3.0], 0.3, 0.5, [0.8, 0.6, 0.4])]);
    let batch = SplatBatch::from_mixture(&mix, &cam);
    let (out, trace) = render_batch(&batch, &cam, 16, 16, &RasterConfig::default(), RenderMode::Tiled).unwrap();
    let g = render_backward(&trace, &batch, &vec![1.0; out.image.len()]).unwrap();
    assert!(g.opacities[0] > 0.0);
    // per pixel: nudging opacity raises every pixel the kernel touches
    let x = pack(&[([0.1, 0.0, 3.0], [1.0, 0.0, 0.0, 0.0], [0.3; 3], 0.5, [0.8, 0.6, 0.4])]);
    let mut y = x.clone();
    y.data_mut()[10] += 0.01;
    let (a, b) = (render_packed(&x, &cam, 16, 16), render_packed(&y, &cam, 16, 16));
    for (p, q) in a.iter().zip(&b) {
        if *p > 0.0 {
            assert!(q > p);
        }
    }
}

#[test]
fn transparent_and_culled_splats_get_zero_gradient() {
    let cam = identity_cam(16, 16, 20.0);
    let batch = SplatBatch {
        means: vec![0.0, 0.0, 3.0, 0.1, 0.0, 3.5, 0.0, 0.0, -2.0],
        quats: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        scales: vec![0.3; 9],
        opacities: vec![0.0, 0.5, 0.5],
        colors: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    };
    let (out, trace) = render_batch(&batch, &cam, 16, 16, &RasterConfig::default(), RenderMode::Tiled).unwrap();
    let g = render_backward(&trace, &batch, &vec![1.0; out.image.len()]).unwrap();
    assert_eq!(&g.colors[0..3], &[0.0, 0.0, 0.0]);
    assert!(g.colors[4] > 0.0);
    assert!(g.means[6..9].iter().chain(&g.colors[6..9]).all(|v| *v == 0.0));
    assert_eq!(g.opacities[2], 0.0);
}

#[test]
fn naive_and_tiled_backward_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cam = identity_cam(40, 36, 30.0);
    let mix = random_mixture(&mut rng, 40);
    let batch = SplatBatch::from_mixture(&mix, &cam);
    let cfg = RasterConfig::default();
    let grad: Vec<f32> = (0..40 * 36 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, tn) = render_batch(&batch, &cam, 40, 36, &cfg, RenderMode::Naive).unwrap();
    let (_, tt) = render_batch(&batch, &cam, 40, 36, &cfg, RenderMode::Tiled).unwrap();
    let a = render_backward(&tn, &batch, &grad).unwrap();
    let b = render_backward(&tt, &batch, &grad).unwrap();
    assert_eq!(a, b);
}

struct ShLoss {
    center: [f32; 3],
    n: usize,
}

impl Objective for ShLoss {
    fn eval<'t, T: Real>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let x = x.reshape(&[self.n, 15])?;
        let rgb = sh_color_var(x.channels(0, 12)?, x.channels(12, 3)?, self.center)?;
        let w = Tensor::new(
            &[self.n, 3],
            (0..self.n * 3).map(|i| T::of(0.3 + 0.1 * i as f64)).collect(),
        )?;
        rgb.mul(tape.constant(w))?.sum()
    }
}

#[test]
fn sh_color_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 4;
    let data: Vec<f32> = (0..n)
        .flat_map(|_| {
            let mut row: Vec<f32> = (0..12).map(|_| rng.random_range(-0.3..0.3)).collect();
            row.extend((0..3).map(|_| rng.random_range(-1.0..1.0)));
            row
        })
        .collect();
    let x = Tensor::new(&[n * 15], data).unwrap();
    let report = gradcheck(&ShLoss { center: [0.2, -0.1, -3.0], n }, &x, 1e-3, 1e-3).unwrap();
    assert!(report.passed, "max rel error {}", report.max_rel_error);
}

#[test]
fn render_and_sh_gradients_match_finite_differences() {
    for c in hsplat_core::verify::rasterizer(5).unwrap() {
        assert!(c.passed, "{}: {:.3e} over {} entries", c.name, c.max_rel_error, c.entries);
    }
}
