//! Localization metrics for explanation rasters.
//!
//! The CAM is binarized at a threshold; ground-truth boxes give a foreground
//! mask and its complement. CAMIoU^FG is the IoU of the CAM mask with the
//! foreground, CAMIoU^BG with the background. Good explanations score high on
//! the first and low on the second.

use serde::{Deserialize, Serialize};

use crate::detector::BBox;
use crate::error::{CamError, Result};
use crate::pipeline::Cam;

pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(CamError::invalid(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// Bits where the normalized CAM reaches `threshold`.
///
/// An all-zero CAM carries no saliency and yields an empty mask for every
/// threshold.
pub fn cam_mask(cam: &Cam, threshold: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CamError::invalid(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let (w, h) = cam.normalized.dims();
    if cam.is_empty() {
        return Ok(BinaryMask::empty(w, h));
    }
    let bits = cam
        .normalized
        .data()
        .iter()
        .map(|&v| v >= threshold)
        .collect();
    BinaryMask::new(w, h, bits)
}

/// Foreground = pixels whose centre lies in any box; background = the rest.
pub fn fg_bg_masks(gt: &[BBox], width: usize, height: usize) -> (BinaryMask, BinaryMask) {
    let mut fg = BinaryMask::empty(width, height);
    for b in gt {
        let Some(b) = b.clip(width, height) else {
            continue;
        };
        // centres x + 0.5 in [x_min, x_max)
        let x0 = (b.x_min - 0.5).ceil().max(0.0) as usize;
        let y0 = (b.y_min - 0.5).ceil().max(0.0) as usize;
        let x1 = ((b.x_max - 0.5).ceil().max(0.0) as usize).min(width);
        let y1 = ((b.y_max - 0.5).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                fg.bits[y * width + x] = true;
            }
        }
    }
    let bg = fg.complement();
    (fg, bg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IouDenominator {
    /// `|A| + |B| - |A ∩ B|`.
    #[default]
    Union,
    /// `|A| + |B|`, the product-over-sum form.
    Sum,
}

/// `|A ∩ B| / |A ∪ B|`, or 0 when the union is empty.
pub fn cam_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    cam_iou_with(a, b, IouDenominator::Union)
}

pub fn cam_iou_with(a: &BinaryMask, b: &BinaryMask, denom: IouDenominator) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(CamError::invalid(format!(
            "mask sizes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (mut inter, mut ca, mut cb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        ca += usize::from(x);
        cb += usize::from(y);
    }
    let d = match denom {
        IouDenominator::Union => ca + cb - inter,
        IouDenominator::Sum => ca + cb,
    };
    Ok(if d == 0 { 0.0 } else { inter as f64 / d as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub camiou_fg: f64,
    pub camiou_bg: f64,
    pub empty_cam: bool,
    pub empty_gt: bool,
}

pub fn score_scene(
    cam: &Cam,
    gt: &[BBox],
    threshold: f64,
    denom: IouDenominator,
) -> Result<SceneScore> {
    let mask = cam_mask(cam, threshold)?;
    let (w, h) = mask.dims();
    let (fg, bg) = fg_bg_masks(gt, w, h);
    Ok(SceneScore {
        camiou_fg: cam_iou_with(&mask, &fg, denom)?,
        camiou_bg: cam_iou_with(&mask, &bg, denom)?,
        empty_cam: mask.count() == 0,
        empty_gt: fg.count() == 0,
    })
}

/// Per-scene scores plus percent-scaled means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// How aggregates are formed.
    pub aggregation: String,
    pub threshold: f64,
    pub iou_denominator: IouDenominator,
    pub scenes: Vec<SceneScore>,
    /// Mean CAMIoU^FG x 100.
    pub camiou_fg: f64,
    /// Mean CAMIoU^BG x 100.
    pub camiou_bg: f64,
    pub empty_cam_count: usize,
    pub empty_gt_count: usize,
}

pub const AGGREGATION: &str = "per-image mean";

impl EvalReport {
    pub fn from_scores(scenes: Vec<SceneScore>, threshold: f64, denom: IouDenominator) -> Self {
        let n = scenes.len().max(1) as f64;
        let camiou_fg = 100.0 * scenes.iter().map(|s| s.camiou_fg).sum::<f64>() / n;
        let camiou_bg = 100.0 * scenes.iter().map(|s| s.camiou_bg).sum::<f64>() / n;
        Self {
            aggregation: AGGREGATION.to_string(),
            threshold,
            iou_denominator: denom,
            camiou_fg,
            camiou_bg,
            empty_cam_count: scenes.iter().filter(|s| s.empty_cam).count(),
            empty_gt_count: scenes.iter().filter(|s| s.empty_gt).count(),
            scenes,
        }
    }
}

pub fn evaluate(scenes: &[(Cam, Vec<BBox>)], threshold: f64) -> Result<EvalReport> {
    evaluate_with(scenes, threshold, IouDenominator::Union)
}

pub fn evaluate_with(
    scenes: &[(Cam, Vec<BBox>)],
    threshold: f64,
    denom: IouDenominator,
) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(CamError::invalid("nothing to evaluate"));
    }
    let scores = scenes
        .iter()
        .map(|(cam, gt)| score_scene(cam, gt, threshold, denom))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(scores, threshold, denom))
}
