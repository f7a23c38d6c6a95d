use edgs_core::deform::{GaussianPrimitive, GaussianSet};
use edgs_core::raster::{render_gaussians, CameraFrame, RenderMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> GaussianSet {
    let prims: Vec<GaussianPrimitive> = (0..n)
        .map(|i| {
            let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            GaussianPrimitive {
                position: [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(2.0..7.0)],
                scale: std::array::from_fn(|_| rng.gen_range(0.02..0.5)),
                quaternion: q.map(|v| v / qn),
                opacity: rng.gen_range(0.01..0.99),
                color: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                parent: (i, 0),
            }
        })
        .collect();
    GaussianSet::from_primitives(&prims)
}

fn camera(rng: &mut ChaCha8Rng) -> CameraFrame {
    // Sizes that are not tile multiples, looking slightly off axis.
    let w = rng.gen_range(20..70);
    let h = rng.gen_range(20..70);
    let eye = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..0.0)];
    CameraFrame::look_at(eye, [0.0, 0.0, 4.0], [0.0, 1.0, 0.0], 35.0, 35.0, w, h, 0.0)
}

#[test]
fn tiled_equals_naive_on_hundred_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(10..=200);
        let set = random_set(&mut rng, n);
        let cam = camera(&mut rng);
        let a = render_gaussians(&set, &cam, RenderMode::Naive);
        let b = render_gaussians(&set, &cam, RenderMode::Tiled);
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in a.transmittance.iter().zip(&b.transmittance) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-10, "max pixel difference {worst:e}");
}

#[test]
fn splats_outside_the_view_leave_the_image_black() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut prims = random_set(&mut rng, 20).to_primitives();
    for p in &mut prims {
        p.position[2] = -p.position[2];
    }
    let cam = CameraFrame::look_at([0.0; 3], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], 30.0, 30.0, 24, 24, 0.0);
    let out = render_gaussians(&GaussianSet::from_primitives(&prims), &cam, RenderMode::Tiled);
    assert!(out.image.data.iter().all(|&v| v == 0.0));
    assert!(out.transmittance.iter().all(|&t| t == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pixels_and_transmittance_stay_in_unit_range(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, n);
        let cam = camera(&mut rng);
        let out = render_gaussians(&set, &cam, RenderMode::Tiled);
        prop_assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(out.transmittance.iter().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn render_ignores_input_order(seed in any::<u64>(), n in 2usize..60, shift in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, n);
        let cam = camera(&mut rng);
        let mut prims = set.to_primitives();
        prims.rotate_left(shift % n);
        let a = render_gaussians(&set, &cam, RenderMode::Tiled);
        let b = render_gaussians(&GaussianSet::from_primitives(&prims), &cam, RenderMode::Tiled);
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_opacity_is_invisible(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prims = random_set(&mut rng, n).to_primitives();
        prims.iter_mut().for_each(|p| p.opacity = 0.0);
        let cam = camera(&mut rng);
        let out = render_gaussians(&GaussianSet::from_primitives(&prims), &cam, RenderMode::Naive);
        prop_assert!(out.image.data.iter().all(|&v| v == 0.0));
    }
}
