use camforge::detector::{gen_synthetic_scene, SyntheticDetector};
use camforge::imageio;

#[test]
fn detector_recalls_generated_trees() {
    let det = SyntheticDetector::default();
    let (mut hits, mut total) = (0usize, 0usize);
    for i in 0..50u64 {
        let scene = gen_synthetic_scene(300 + i, 3 + (i as usize % 10), 128, 128).unwrap();
        let found = det.detections(&scene.image);
        for (blob, gt) in scene.blobs.iter().zip(&scene.ground_truth) {
            if blob.radius < 6.0 {
                continue;
            }
            total += 1;
            hits += usize::from(found.iter().any(|d| d.bbox.iou(gt) >= 0.5));
        }
    }
    let recall = hits as f64 / total as f64;
    assert!(recall >= 0.9, "recall {recall} ({hits}/{total})");
}

#[test]
fn scenes_are_reproducible_through_png() {
    let a = gen_synthetic_scene(12, 7, 80, 64).unwrap();
    let b = gen_synthetic_scene(12, 7, 80, 64).unwrap();
    assert_eq!(
        imageio::encode_png(&a.image).unwrap(),
        imageio::encode_png(&b.image).unwrap()
    );
    assert_eq!(a.ground_truth, b.ground_truth);
    assert_ne!(
        gen_synthetic_scene(13, 7, 80, 64).unwrap().ground_truth,
        a.ground_truth
    );
}
