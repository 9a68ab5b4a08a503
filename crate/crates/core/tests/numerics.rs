use camforge::tensor::{
    bilinear_upsample, hadamard_mask, kl_divergence, minmax_normalize, pixelwise_channel_softmax,
    softmax, to_distribution, Grid2D, GridStack, ProbVector, RgbImage,
};
use proptest::prelude::*;

/// Direct tent-filter form of half-pixel bilinear sampling.
fn bilinear_oracle(src: &Grid2D, tw: usize, th: usize, x: usize, y: usize) -> f64 {
    let (sw, sh) = src.dims();
    let pos = |d: usize, s: usize, t: usize| {
        ((d as f64 + 0.5) * s as f64 / t as f64 - 0.5).clamp(0.0, (s - 1) as f64)
    };
    let (px, py) = (pos(x, sw, tw), pos(y, sh, th));
    let mut acc = 0.0;
    for j in 0..sh {
        for i in 0..sw {
            let wx = (1.0 - (px - i as f64).abs()).max(0.0);
            let wy = (1.0 - (py - j as f64).abs()).max(0.0);
            acc += wx * wy * src.get(i, j);
        }
    }
    acc
}

fn grid_strategy(max: usize) -> impl Strategy<Value = Grid2D> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(-10.0f64..10.0, w * h)
            .prop_map(move |d| Grid2D::new(w, h, d).unwrap())
    })
}

fn stack_strategy() -> impl Strategy<Value = GridStack> {
    (1usize..6, 1usize..6, 1usize..8).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(prop::collection::vec(-40.0f64..40.0, w * h), c).prop_map(
            move |chans| {
                GridStack::new(
                    chans
                        .into_iter()
                        .map(|d| Grid2D::new(w, h, d).unwrap())
                        .collect(),
                )
                .unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bilinear_matches_oracle(src in grid_strategy(6), ex in 0usize..14, ey in 0usize..14) {
        let (tw, th) = (src.width() + ex, src.height() + ey);
        let up = bilinear_upsample(&src, tw, th).unwrap();
        for y in 0..th {
            for x in 0..tw {
                prop_assert!((up.get(x, y) - bilinear_oracle(&src, tw, th, x, y)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn bilinear_stays_within_source_range(src in grid_strategy(5), ex in 0usize..9) {
        let up = bilinear_upsample(&src, src.width() + ex, src.height() + ex).unwrap();
        prop_assert!(up.min() >= src.min() - 1e-12 && up.max() <= src.max() + 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(stack in stack_strategy(), shift in -100.0f64..100.0) {
        let sm = pixelwise_channel_softmax(&stack).unwrap();
        let shifted = GridStack::new(stack.grids().iter().map(|g| g.map(|v| v + shift)).collect()).unwrap();
        let sm2 = pixelwise_channel_softmax(&shifted).unwrap();
        let n = stack.width() * stack.height();
        for i in 0..n {
            let s: f64 = sm.grids().iter().map(|g| g.data()[i]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            for c in 0..stack.channels() {
                prop_assert!((sm.get(c).data()[i] - sm2.get(c).data()[i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn vector_softmax_sums_to_one(v in prop::collection::vec(-500.0f64..500.0, 1..30)) {
        let s = softmax(&v);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(s.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(
        pair in (1usize..40).prop_flat_map(|n| (
            prop::collection::vec(-2.0f64..5.0, n),
            prop::collection::vec(-2.0f64..5.0, n),
        ))
    ) {
        let p = ProbVector::from_samples(&pair.0, 1e-8).unwrap();
        let q = ProbVector::from_samples(&pair.1, 1e-8).unwrap();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn distributions_sum_to_one(g in grid_strategy(8)) {
        let p = to_distribution(&g, 1e-8).unwrap();
        prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn minmax_lands_in_unit_interval(g in grid_strategy(8)) {
        let n = minmax_normalize(&g);
        prop_assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        if g.max() > g.min() {
            prop_assert_eq!(n.min(), 0.0);
            prop_assert_eq!(n.max(), 1.0);
        }
    }
}

#[test]
fn ones_mask_is_identity() {
    let img = RgbImage::from_fn(9, 6, |x, y| [x as f64 / 9.0, y as f64 / 6.0, 0.25]);
    let masked = hadamard_mask(&img, &Grid2D::filled(9, 6, 1.0)).unwrap();
    assert_eq!(masked, img);
    let black = hadamard_mask(&img, &Grid2D::zeros(9, 6)).unwrap();
    assert_eq!(black, RgbImage::black(9, 6));
}

#[test]
fn kl_rejects_length_mismatch() {
    let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
    let q = ProbVector::new(vec![1.0]).unwrap();
    assert!(kl_divergence(&p, &q).is_err());
}
