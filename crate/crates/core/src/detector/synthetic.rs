//! Deterministic blob-forest scenes and a matching rule-based detector.
//!
//! Trees are flat-topped green discs with a steep radial falloff over a
//! textured brown/gray floor. The detector thresholds the excess-green index
//! `2G - R - B`, labels 4-connected components and reports their bounding
//! boxes. Its backbone is a fixed filter bank pooled to three strides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BBox, Detection, DetectionSet, Detector, DetectorOutput};
use crate::error::{CamError, Result};
use crate::tensor::{Grid2D, GridStack, RgbImage};

/// Layer strides of the synthetic backbone, finest first.
pub const SYNTHETIC_STRIDES: [usize; 3] = [2, 4, 8];
/// Channels per synthetic layer.
pub const SYNTHETIC_CHANNELS: usize = 8;

const MIN_SCENE_DIM: usize = 32;
const MIN_RADIUS: f64 = 4.0;
const FALLOFF_POWER: i32 = 6;
const BROWN: [f64; 3] = [0.28, 0.22, 0.16];
const GRAY: [f64; 3] = [0.24, 0.24, 0.24];
const CANOPY: [f64; 3] = [0.32, 0.72, 0.28];
const FLOOR_NOISE: f64 = 0.02;

/// One placed tree. `radius` is the half-peak radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Blob {
    /// Canopy opacity at distance `r` from the centre; exactly 0.5 at `radius`.
    pub fn opacity(&self, x: f64, y: f64) -> f64 {
        let r = ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt() / self.radius;
        (-std::f64::consts::LN_2 * r.powi(FALLOFF_POWER)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: RgbImage,
    /// Half-peak bounding box of each blob, in placement order.
    pub ground_truth: Vec<BBox>,
    pub blobs: Vec<Blob>,
    pub seed: u64,
}

/// Renders a scene with `n_trees` blobs. Same seed, same bits.
pub fn gen_synthetic_scene(
    seed: u64,
    n_trees: usize,
    width: usize,
    height: usize,
) -> Result<SyntheticScene> {
    if width < MIN_SCENE_DIM || height < MIN_SCENE_DIM {
        return Err(CamError::invalid(format!(
            "synthetic scenes need at least {MIN_SCENE_DIM}x{MIN_SCENE_DIM}, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_radius = (width.min(height) as f64 / 8.0).max(MIN_RADIUS);

    let mut blobs: Vec<Blob> = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let radius = if max_radius > MIN_RADIUS {
            rng.random_range(MIN_RADIUS..=max_radius)
        } else {
            MIN_RADIUS
        };
        let blob = place_blob(&mut rng, &blobs, radius, width, height).ok_or_else(|| {
            CamError::invalid(format!(
                "cannot place {n_trees} distinct trees in a {width}x{height} scene"
            ))
        })?;
        blobs.push(blob);
    }

    let shade: Vec<f64> = blobs.iter().map(|_| rng.random_range(0.9..=1.0)).collect();
    let (fx, fy) = (rng.random_range(0.03..0.12), rng.random_range(0.03..0.12));
    let (px, py) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let mut noise = || {
        [
            rng.random_range(-FLOOR_NOISE..=FLOOR_NOISE),
            rng.random_range(-FLOOR_NOISE..=FLOOR_NOISE),
            rng.random_range(-FLOOR_NOISE..=FLOOR_NOISE),
        ]
    };

    let image = RgbImage::from_fn(width, height, |x, y| {
        let (xc, yc) = (x as f64 + 0.5, y as f64 + 0.5);
        let mix = 0.5 + 0.5 * (xc * fx + px).sin() * (yc * fy + py).sin();
        let n = noise();
        let floor: [f64; 3] = std::array::from_fn(|i| {
            (BROWN[i] * mix + GRAY[i] * (1.0 - mix) + n[i]).clamp(0.0, 1.0)
        });

        let (mut alpha, mut tone) = (0.0, 1.0);
        for (b, s) in blobs.iter().zip(&shade) {
            let a = b.opacity(xc, yc);
            if a > alpha {
                alpha = a;
                tone = *s;
            }
        }
        std::array::from_fn(|i| floor[i] * (1.0 - alpha) + CANOPY[i] * tone * alpha)
    });

    let ground_truth = blobs
        .iter()
        .map(|b| {
            BBox::new(
                b.cx - b.radius,
                b.cy - b.radius,
                b.cx + b.radius,
                b.cy + b.radius,
            )
            .and_then(|bb| {
                bb.clip(width, height)
                    .ok_or_else(|| CamError::invalid("blob outside scene"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticScene {
        image,
        ground_truth,
        blobs,
        seed,
    })
}

fn place_blob(
    rng: &mut ChaCha8Rng,
    placed: &[Blob],
    radius: f64,
    width: usize,
    height: usize,
) -> Option<Blob> {
    let (w, h) = (width as f64, height as f64);
    let draw = |rng: &mut ChaCha8Rng| Blob {
        cx: rng.random_range(radius..=(w - radius)),
        cy: rng.random_range(radius..=(h - radius)),
        radius,
    };
    // Prefer canopies whose detectable extents stay apart; fall back to
    // merely distinct centres when the scene is crowded.
    for min_gap in [1.25, 0.0] {
        for _ in 0..500 {
            let cand = draw(rng);
            let ok = placed.iter().all(|p| {
                let d = ((p.cx - cand.cx).powi(2) + (p.cy - cand.cy).powi(2)).sqrt();
                d >= (min_gap * (p.radius + cand.radius) + 2.0 * min_gap).max(1.0)
            });
            if ok {
                return Some(cand);
            }
        }
    }
    None
}

/// Excess-green index `2G - R - B` per pixel.
pub(crate) fn excess_green(image: &RgbImage) -> Grid2D {
    let (r, g, b) = (
        image.red().data(),
        image.green().data(),
        image.blue().data(),
    );
    let data = (0..r.len()).map(|i| 2.0 * g[i] - r[i] - b[i]).collect();
    Grid2D::new(image.width(), image.height(), data).expect("same size as image")
}

fn gradient_magnitude(g: &Grid2D, horizontal: bool) -> Grid2D {
    let (w, h) = g.dims();
    Grid2D::from_fn(w, h, |x, y| {
        let (a, b) = if horizontal {
            (g.get(x.saturating_sub(1), y), g.get((x + 1).min(w - 1), y))
        } else {
            (g.get(x, y.saturating_sub(1)), g.get(x, (y + 1).min(h - 1)))
        };
        0.5 * (b - a).abs()
    })
}

/// Mean over a `(2r+1)^2` window with replicated borders.
fn box_blur(g: &Grid2D, r: usize) -> Grid2D {
    let (w, h) = g.dims();
    let r = r as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    Grid2D::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += g.get(xx, yy);
            }
        }
        acc / n
    })
}

/// Block average over `stride x stride` cells; edge cells average what exists.
fn block_downsample(g: &Grid2D, stride: usize) -> Grid2D {
    let (w, h) = g.dims();
    let (ow, oh) = (w.div_ceil(stride), h.div_ceil(stride));
    Grid2D::from_fn(ow, oh, |ox, oy| {
        let (x0, y0) = (ox * stride, oy * stride);
        let (x1, y1) = ((x0 + stride).min(w), (y0 + stride).min(h));
        let mut acc = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                acc += g.get(x, y);
            }
        }
        acc / ((x1 - x0) * (y1 - y0)) as f64
    })
}

/// The fixed filter bank, one stack per stride in [`SYNTHETIC_STRIDES`].
///
/// Channel order within a layer: R, G, B, excess-green, |d/dx| and |d/dy| of
/// excess-green, 3x3 and 7x7 box blurs of excess-green.
pub fn synthetic_activations(image: &RgbImage) -> Vec<GridStack> {
    let exg = excess_green(image);
    let bank = [
        image.red().clone(),
        image.green().clone(),
        image.blue().clone(),
        exg.clone(),
        gradient_magnitude(&exg, true),
        gradient_magnitude(&exg, false),
        box_blur(&exg, 1),
        box_blur(&exg, 3),
    ];
    debug_assert_eq!(bank.len(), SYNTHETIC_CHANNELS);
    SYNTHETIC_STRIDES
        .iter()
        .map(|&s| {
            let grids = bank.iter().map(|g| block_downsample(g, s)).collect();
            GridStack::new(grids).expect("uniform layer size")
        })
        .collect()
}

/// Rule-based detector over the excess-green index.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticDetector {
    /// Pixels with `2G - R - B` strictly above this are foreground.
    pub threshold: f64,
    /// Mean excess-green that maps to confidence 1.
    pub saturation: f64,
}

impl Default for SyntheticDetector {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            saturation: 0.6,
        }
    }
}

impl SyntheticDetector {
    pub fn detections(&self, image: &RgbImage) -> DetectionSet {
        let exg = excess_green(image);
        let (w, h) = exg.dims();
        let fg: Vec<bool> = exg.data().iter().map(|&v| v > self.threshold).collect();
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut found = Vec::new();

        for start in 0..w * h {
            if !fg[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let (mut sum, mut count) = (0.0, 0usize);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                sum += exg.data()[i];
                count += 1;
                let mut visit = |j: usize| {
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            let bbox = BBox {
                x_min: x0 as f64,
                y_min: y0 as f64,
                x_max: (x1 + 1) as f64,
                y_max: (y1 + 1) as f64,
            };
            let confidence = (sum / count as f64 / self.saturation).clamp(0.0, 1.0);
            found.push(Detection { bbox, confidence });
        }
        DetectionSet::new(found)
    }
}

impl Detector for SyntheticDetector {
    fn detect(&self, image: &RgbImage, want_activations: bool) -> Result<DetectorOutput> {
        Ok(DetectorOutput {
            detections: self.detections(image),
            layer_activations: if want_activations {
                synthetic_activations(image)
            } else {
                Vec::new()
            },
        })
    }
}
