//! Gradient-free comparison methods adapted to detection.

use rayon::prelude::*;

use crate::detector::{DetectionSet, Detector};
use crate::error::{CamError, Result};
use crate::pipeline::{
    masked_detections, score_matches, upsample_layers, weighted_relu, Cam, PipelineConfig,
};
use crate::tensor::{softmax, Grid2D, GridStack, RgbImage};

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCamOutput {
    pub cam: Cam,
    pub detections: DetectionSet,
    /// Summed box scores per upsampled channel.
    pub channel_scores: Vec<f64>,
    /// Softmax of `channel_scores`.
    pub weights: Vec<f64>,
}

/// Score-CAM with a detection score: every channel masks the image, and its
/// scalar score is the sum of the per-box `IoU + |confidence change|` over
/// matched boxes. No selection and no suppression.
pub fn score_cam(
    image: &RgbImage,
    detector: &dyn Detector,
    cfg: &PipelineConfig,
) -> Result<ScoreCamOutput> {
    cfg.validate()?;
    let (w, h) = image.dims();
    let out = detector.detect(image, true)?;
    let upsampled = upsample_layers(&out.layer_activations, w, h)?;
    let original = out.detections;

    let channel_scores: Vec<f64> = if original.is_empty() {
        vec![0.0; upsampled.channels()]
    } else {
        upsampled
            .grids()
            .par_iter()
            .enumerate()
            .map(|(channel, act)| {
                let masked =
                    masked_detections(image, act, detector).map_err(|e| CamError::Pipeline {
                        channel,
                        source: Box::new(e),
                    })?;
                Ok(score_matches(&original, &masked, cfg.match_iou_min)
                    .iter()
                    .map(|m| m.score)
                    .sum())
            })
            .collect::<Result<Vec<_>>>()?
    };
    let weights = softmax(&channel_scores);
    let raw = weighted_relu(&upsampled, |c, _| weights[c])?;
    Ok(ScoreCamOutput {
        cam: Cam::from_raw(raw, 0),
        detections: original,
        channel_scores,
        weights,
    })
}

/// Leading right singular vector of the `pixels x channels` matrix, via power
/// iteration on its Gram matrix from the normalized all-ones start.
///
/// Returns the unit vector and the number of iterations used.
pub fn principal_direction(stack: &GridStack) -> Result<(Vec<f64>, usize)> {
    let n = stack.channels();
    if n == 0 {
        return Err(CamError::invalid("principal direction of an empty stack"));
    }
    let gram = gram_matrix(stack);
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut delta = f64::INFINITY;
    for it in 1..=POWER_MAX_ITERATIONS {
        let mut next: Vec<f64> = gram
            .iter()
            .map(|row| row.iter().zip(&v).map(|(g, x)| g * x).sum())
            .collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Zero matrix: every direction is principal.
            return Ok((v, it));
        }
        next.iter_mut().for_each(|x| *x /= norm);
        delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = next;
        if delta < POWER_TOLERANCE {
            return Ok((v, it));
        }
    }
    Err(CamError::Numeric {
        iterations: POWER_MAX_ITERATIONS,
        delta,
    })
}

#[allow(clippy::needless_range_loop)]
fn gram_matrix(stack: &GridStack) -> Vec<Vec<f64>> {
    let n = stack.channels();
    let mut gram = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a..n {
            let dot: f64 = stack
                .get(a)
                .data()
                .iter()
                .zip(stack.get(b).data())
                .map(|(x, y)| x * y)
                .sum();
            gram[a][b] = dot;
            gram[b][a] = dot;
        }
    }
    gram
}

/// `|M v|` for the principal direction `v`, reshaped to the raster.
pub fn project_principal(stack: &GridStack) -> Result<Grid2D> {
    let (v, _) = principal_direction(stack)?;
    let (w, h) = stack.dims();
    let mut proj = vec![0.0f64; w * h];
    for (g, &coef) in stack.grids().iter().zip(&v) {
        for (p, x) in proj.iter_mut().zip(g.data()) {
            *p += coef * x;
        }
    }
    Grid2D::new(w, h, proj.into_iter().map(f64::abs).collect())
}

/// Eigen-CAM: magnitude of the projection onto the first principal direction
/// of the upsampled activations. Ignores detections entirely.
pub fn eigen_cam(image: &RgbImage, detector: &dyn Detector) -> Result<Cam> {
    let (w, h) = image.dims();
    let out = detector.detect(image, true)?;
    let upsampled = upsample_layers(&out.layer_activations, w, h)?;
    Ok(Cam::from_raw(project_principal(&upsampled)?, 0))
}
