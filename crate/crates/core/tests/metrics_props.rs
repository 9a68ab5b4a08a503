use camforge::detector::BBox;
use camforge::metrics::{cam_iou, cam_iou_with, cam_mask, fg_bg_masks, BinaryMask, IouDenominator};
use camforge::pipeline::Cam;
use camforge::tensor::Grid2D;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[test]
fn iou_equals_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let (da, db): (f64, f64) = (rng.random(), rng.random());
        let a: Vec<bool> = (0..256).map(|_| rng.random_bool(da)).collect();
        let b: Vec<bool> = (0..256).map(|_| rng.random_bool(db)).collect();
        let got = cam_iou(
            &BinaryMask::new(16, 16, a.clone()).unwrap(),
            &BinaryMask::new(16, 16, b.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(got, brute_iou(&a, &b));
    }
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(any::<bool>(), w * h),
            prop::collection::vec(any::<bool>(), w * h),
        )
            .prop_map(move |(a, b)| {
                (
                    BinaryMask::new(w, h, a).unwrap(),
                    BinaryMask::new(w, h, b).unwrap(),
                )
            })
    })
}

fn boxes(w: usize, h: usize) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec(
        (
            -4.0f64..w as f64 + 4.0,
            -4.0f64..h as f64 + 4.0,
            0.1f64..10.0,
            0.1f64..10.0,
        )
            .prop_map(|(x, y, bw, bh)| BBox::new(x, y, x + bw, y + bh).unwrap()),
        0..5,
    )
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded((a, b) in mask_pair()) {
        let ab = cam_iou(&a, &b).unwrap();
        prop_assert_eq!(ab, cam_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        let s = cam_iou_with(&a, &b, IouDenominator::Sum).unwrap();
        prop_assert!(s <= ab && s <= 0.5);
    }

    #[test]
    fn fg_and_bg_partition_the_image(gt in boxes(20, 14)) {
        let (fg, bg) = fg_bg_masks(&gt, 20, 14);
        for (f, b) in fg.bits().iter().zip(bg.bits()) {
            prop_assert!(f ^ b);
        }
    }

    #[test]
    fn raising_threshold_never_adds_bits(
        data in prop::collection::vec(0.0f64..5.0, 64),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let cam = Cam::from_raw(Grid2D::new(8, 8, data).unwrap(), 0);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = cam_mask(&cam, lo).unwrap();
        let b = cam_mask(&cam, hi).unwrap();
        for (x, y) in a.bits().iter().zip(b.bits()) {
            prop_assert!(*x || !*y);
        }
    }

    #[test]
    fn mask_inside_bg_has_zero_fg_iou(gt in boxes(16, 16), density in 0.0f64..1.0, seed in any::<u64>()) {
        let (fg, bg) = fg_bg_masks(&gt, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_bg: Vec<bool> = bg.bits().iter().map(|&b| b && rng.random_bool(density)).collect();
        let in_fg: Vec<bool> = fg.bits().iter().map(|&b| b && rng.random_bool(density)).collect();
        let m_bg = BinaryMask::new(16, 16, in_bg).unwrap();
        let m_fg = BinaryMask::new(16, 16, in_fg).unwrap();
        prop_assert_eq!(cam_iou(&m_bg, &fg).unwrap(), 0.0);
        prop_assert_eq!(cam_iou(&m_fg, &bg).unwrap(), 0.0);
    }
}
