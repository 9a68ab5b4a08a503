use camforge::baselines::{eigen_cam, principal_direction, project_principal, score_cam};
use camforge::detector::{gen_synthetic_scene, SyntheticDetector};
use camforge::pipeline::PipelineConfig;
use camforge::tensor::{Grid2D, GridStack};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stack(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> GridStack {
    GridStack::new(
        (0..c)
            .map(|_| Grid2D::from_fn(w, h, |_, _| rng.random_range(-1.0..2.0)))
            .collect(),
    )
    .unwrap()
}

#[test]
fn power_iteration_matches_dense_eigensolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let stack = random_stack(&mut rng, 6, 6, 4);
        let n = 36;
        let m = DMatrix::from_fn(n, 4, |p, c| stack.get(c).data()[p]);
        let eig = SymmetricEigen::new(m.transpose() * &m);
        let top = eig.eigenvalues.imax();
        let want = eig.eigenvectors.column(top).into_owned();

        let (v, _) = principal_direction(&stack).unwrap();
        let cos: f64 = v
            .iter()
            .zip(want.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        assert!(cos >= 1.0 - 1e-8, "cosine {cos}");

        let proj = project_principal(&stack).unwrap();
        let dense = (&m * want).map(f64::abs);
        for p in 0..n {
            assert!((proj.data()[p] - dense[p]).abs() <= 1e-6);
        }
    }
}

#[test]
fn eigen_projection_ignores_channel_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let stack = random_stack(&mut rng, 7, 5, 6);
        let mut order: Vec<usize> = (0..6).collect();
        order.reverse();
        order.swap(1, 4);
        let permuted = stack.select(&order).unwrap();
        let a = project_principal(&stack).unwrap();
        let b = project_principal(&permuted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn baselines_are_nonnegative_and_weights_normalized() {
    let det = SyntheticDetector::default();
    for seed in 0..4u64 {
        let scene = gen_synthetic_scene(seed, seed as usize * 2, 64, 64).unwrap();
        let s = score_cam(&scene.image, &det, &PipelineConfig::default()).unwrap();
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(s.cam.raw.min() >= 0.0);
        let e = eigen_cam(&scene.image, &det).unwrap();
        assert!(e.raw.min() >= 0.0);
    }
}

#[test]
fn score_cam_on_empty_scene_is_uniform_and_nonzero() {
    let det = SyntheticDetector::default();
    let scene = gen_synthetic_scene(4, 0, 64, 64).unwrap();
    let s = score_cam(&scene.image, &det, &PipelineConfig::default()).unwrap();
    let u = 1.0 / s.weights.len() as f64;
    assert!(s.weights.iter().all(|w| (w - u).abs() <= 1e-15));
    assert!(!s.cam.is_empty());
}

#[test]
fn eigen_cam_ignores_detections() {
    let det = SyntheticDetector::default();
    let blind = SyntheticDetector {
        threshold: 10.0,
        ..SyntheticDetector::default()
    };
    let scene = gen_synthetic_scene(9, 4, 64, 64).unwrap();
    assert_eq!(
        eigen_cam(&scene.image, &det).unwrap(),
        eigen_cam(&scene.image, &blind).unwrap()
    );
}
