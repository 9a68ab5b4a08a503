//! Crown-CAM: KL-based channel selection followed by box-local scoring.
//!
//! 1. Run the detector once on the image, upsample every backbone channel to
//!    image size and rank channels by KL divergence from the mean of the
//!    others. Keep the top fraction.
//! 2. For every kept channel, mask the image with the min-max normalized
//!    channel, rerun the detector and match its boxes to the originals.
//!    Each match deposits a box-shaped Gaussian, scaled by
//!    `IoU + |confidence change|`, into that channel's score map.
//! 3. Drop channels whose score map is identically zero, softmax the rest
//!    across channels per pixel and take the ReLU of the weighted sum of the
//!    surviving activations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{BBox, Detection, DetectionSet, Detector};
use crate::error::{CamError, Result};
use crate::tensor::{
    bilinear_upsample, hadamard_mask, kl_divergence, minmax_normalize, pixelwise_channel_softmax,
    softmax, to_distribution, Grid2D, GridStack, ProbVector, RgbImage,
};

/// How per-pixel score maps become channel weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreReduction {
    /// Softmax across channels independently at every pixel.
    #[default]
    Pixelwise,
    /// Softmax across channels of each score map's total.
    GlobalSum,
}

/// How overlapping Gaussians inside one score map combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverlapCombine {
    #[default]
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub channel_keep_fraction: f64,
    /// Gaussian variance in box-normalized units (box spans [-1, 1]).
    pub sigma_sq: f64,
    pub match_iou_min: f64,
    pub epsilon: f64,
    pub score_reduction: ScoreReduction,
    pub overlap_combine: OverlapCombine,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            channel_keep_fraction: 0.5,
            sigma_sq: 0.7,
            match_iou_min: 0.1,
            epsilon: 1e-8,
            score_reduction: ScoreReduction::Pixelwise,
            overlap_combine: OverlapCombine::Max,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.channel_keep_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(CamError::invalid(format!(
                "channel_keep_fraction must be in (0, 1], got {f}"
            )));
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(CamError::invalid(format!(
                "sigma_sq must be positive, got {}",
                self.sigma_sq
            )));
        }
        if !(0.0..1.0).contains(&self.match_iou_min) {
            return Err(CamError::invalid(format!(
                "match_iou_min must be in [0, 1), got {}",
                self.match_iou_min
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CamError::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Number of channels retained: round-half-up of `fraction * total`, at least 1.
pub fn kept_channel_count(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64 + 0.5).floor() as usize).clamp(1, total.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSelection {
    /// KL score per upsampled channel, layer-major.
    pub kl_scores: Vec<f64>,
    /// Retained channel indices, ascending.
    pub kept_indices: Vec<usize>,
}

impl ChannelSelection {
    pub fn is_kept(&self, channel: usize) -> bool {
        self.kept_indices.binary_search(&channel).is_ok()
    }
}

/// Ranks channels by `KL(channel || mean of all other channels)` and keeps
/// the highest-scoring fraction (ties go to the lower index).
pub fn select_channels(upsampled: &GridStack, cfg: &PipelineConfig) -> Result<ChannelSelection> {
    cfg.validate()?;
    let n = upsampled.channels();
    if n == 0 {
        return Err(CamError::invalid("channel selection over an empty stack"));
    }
    if n == 1 {
        return Ok(ChannelSelection {
            kl_scores: vec![0.0],
            kept_indices: vec![0],
        });
    }

    let pixels = upsampled.width() * upsampled.height();
    let mut total = vec![0.0f64; pixels];
    for g in upsampled.grids() {
        for (t, v) in total.iter_mut().zip(g.data()) {
            *t += v;
        }
    }
    let others = (n - 1) as f64;
    let kl_scores = upsampled
        .grids()
        .par_iter()
        .map(|g| {
            let p = to_distribution(g, cfg.epsilon)?;
            let reference: Vec<f64> = total
                .iter()
                .zip(g.data())
                .map(|(t, v)| (t - v) / others)
                .collect();
            let q = ProbVector::from_samples(&reference, cfg.epsilon)?;
            kl_divergence(&p, &q)
        })
        .collect::<Result<Vec<_>>>()?;

    let keep = kept_channel_count(n, cfg.channel_keep_fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| kl_scores[b].total_cmp(&kl_scores[a]).then(a.cmp(&b)));
    let mut kept_indices = order[..keep].to_vec();
    kept_indices.sort_unstable();
    Ok(ChannelSelection {
        kl_scores,
        kept_indices,
    })
}

/// Upsamples every layer to `width x height` and concatenates layer-major.
pub fn upsample_layers(layers: &[GridStack], width: usize, height: usize) -> Result<GridStack> {
    if layers.is_empty() {
        return Err(CamError::BackendIo(
            "detector returned no activation layers".into(),
        ));
    }
    let jobs: Vec<&Grid2D> = layers.iter().flat_map(|l| l.grids()).collect();
    let grids = jobs
        .par_iter()
        .map(|g| bilinear_upsample(g, width, height))
        .collect::<Result<Vec<_>>>()?;
    GridStack::with_dims(width, height, grids)
}

/// One original detection matched in a masked run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatch {
    /// Index into the original detection set.
    pub original: usize,
    pub masked: Detection,
    pub iou: f64,
    /// Masked minus original confidence; the score uses its magnitude.
    pub confidence_delta: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    /// Upsampled channel index (layer-major).
    pub channel: usize,
    pub matches: Vec<ScoredMatch>,
}

impl ChannelScores {
    pub fn total(&self) -> f64 {
        self.matches.iter().map(|m| m.score).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreAssignment {
    pub channels: Vec<ChannelScores>,
}

impl ScoreAssignment {
    pub fn is_empty(&self) -> bool {
        self.channels.iter().all(|c| c.matches.is_empty())
    }

    /// `(increases, decreases)` of confidence across all matches.
    pub fn confidence_shifts(&self) -> (usize, usize) {
        let deltas = self
            .channels
            .iter()
            .flat_map(|c| &c.matches)
            .map(|m| m.confidence_delta);
        deltas.fold((0, 0), |(up, down), d| {
            if d > 0.0 {
                (up + 1, down)
            } else if d < 0.0 {
                (up, down + 1)
            } else {
                (up, down)
            }
        })
    }
}

/// Greedy one-to-one matching by descending IoU, keeping pairs with
/// `IoU >= iou_min`. Returns `(original, masked, iou)` triples.
pub fn match_detections(
    original: &DetectionSet,
    masked: &DetectionSet,
    iou_min: f64,
) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (i, o) in original.iter().enumerate() {
        for (j, m) in masked.iter().enumerate() {
            let iou = o.bbox.iou(&m.bbox);
            if iou >= iou_min {
                pairs.push((i, j, iou));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_o = vec![false; original.len()];
    let mut used_m = vec![false; masked.len()];
    let mut out = Vec::new();
    for (i, j, iou) in pairs {
        if !used_o[i] && !used_m[j] {
            used_o[i] = true;
            used_m[j] = true;
            out.push((i, j, iou));
        }
    }
    out.sort_by_key(|&(i, _, _)| i);
    out
}

/// `IoU(original, masked) + |Y_original - Y_masked|` for every matched box.
pub fn score_matches(
    original: &DetectionSet,
    masked: &DetectionSet,
    iou_min: f64,
) -> Vec<ScoredMatch> {
    match_detections(original, masked, iou_min)
        .into_iter()
        .map(|(i, j, iou)| {
            let o = original.items()[i];
            let m = masked.items()[j];
            let delta = m.confidence - o.confidence;
            ScoredMatch {
                original: i,
                masked: m,
                iou,
                confidence_delta: delta,
                score: iou + delta.abs(),
            }
        })
        .collect()
}

/// Masks `image` with the normalized `activation` and reruns the detector.
pub fn masked_detections(
    image: &RgbImage,
    activation: &Grid2D,
    detector: &dyn Detector,
) -> Result<DetectionSet> {
    let mask = minmax_normalize(activation);
    let masked = hadamard_mask(image, &mask)?;
    Ok(detector.detect(&masked, false)?.detections)
}

/// Unnormalized Gaussian weight at box-normalized coordinates.
pub fn gaussian_weight(u: f64, v: f64, sigma_sq: f64) -> f64 {
    (-(u * u + v * v) / (2.0 * sigma_sq)).exp()
}

/// A `ceil(w) x ceil(h)` patch of box-normalized Gaussian weights.
///
/// Patch columns sample `u` evenly from -1 (first) to +1 (last); rows
/// likewise for `v`. Odd-sized patches therefore contain the exact centre
/// and every patch contains the exact corners.
pub fn gaussian_kernel(bbox: &BBox, sigma_sq: f64) -> Result<Grid2D> {
    let checked = BBox::new(bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max)?;
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(CamError::invalid(format!(
            "sigma_sq must be positive, got {sigma_sq}"
        )));
    }
    let pw = checked.width().ceil() as usize;
    let ph = checked.height().ceil() as usize;
    let coord = |i: usize, n: usize| {
        if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    Ok(Grid2D::from_fn(pw, ph, |x, y| {
        gaussian_weight(coord(x, pw), coord(y, ph), sigma_sq)
    }))
}

/// Writes `scale * kernel(bbox)` into `z` at the box origin, clipped.
fn deposit(z: &mut Grid2D, bbox: &BBox, scale: f64, cfg: &PipelineConfig) -> Result<()> {
    let patch = gaussian_kernel(bbox, cfg.sigma_sq)?;
    let x0 = bbox.x_min.floor() as i64;
    let y0 = bbox.y_min.floor() as i64;
    let (w, h) = (z.width() as i64, z.height() as i64);
    for py in 0..patch.height() {
        let y = y0 + py as i64;
        if !(0..h).contains(&y) {
            continue;
        }
        for px in 0..patch.width() {
            let x = x0 + px as i64;
            if !(0..w).contains(&x) {
                continue;
            }
            let v = scale * patch.get(px, py);
            let (xu, yu) = (x as usize, y as usize);
            let cur = z.get(xu, yu);
            let next = match cfg.overlap_combine {
                OverlapCombine::Max => cur.max(v),
                OverlapCombine::Sum => cur + v,
            };
            z.set(xu, yu, next);
        }
    }
    Ok(())
}

/// Builds one channel's score map from its scored matches.
pub fn score_map(
    width: usize,
    height: usize,
    matches: &[ScoredMatch],
    cfg: &PipelineConfig,
) -> Result<Grid2D> {
    let mut z = Grid2D::zeros(width, height);
    for m in matches {
        deposit(&mut z, &m.masked.bbox, m.score, cfg)?;
    }
    Ok(z)
}

/// Masked runs and Gaussian score maps for each kept channel.
///
/// `kept` holds the selected upsampled activations in the order of
/// `selection.kept_indices`. Channels are evaluated in parallel; results are
/// gathered in channel order.
pub fn local_score_maps(
    image: &RgbImage,
    original: &DetectionSet,
    kept: &GridStack,
    selection: &ChannelSelection,
    detector: &dyn Detector,
    cfg: &PipelineConfig,
) -> Result<(ScoreAssignment, GridStack)> {
    cfg.validate()?;
    if kept.channels() != selection.kept_indices.len() || kept.channels() == 0 {
        return Err(CamError::invalid(format!(
            "{} kept activations for {} selected channels",
            kept.channels(),
            selection.kept_indices.len()
        )));
    }
    if kept.dims() != image.dims() {
        return Err(CamError::invalid(
            "kept activations do not match the image size",
        ));
    }
    let (w, h) = image.dims();
    if original.is_empty() {
        // Nothing to match against: every map stays zero without a masked run.
        let channels = selection
            .kept_indices
            .iter()
            .map(|&channel| ChannelScores {
                channel,
                matches: Vec::new(),
            })
            .collect();
        let zeros = vec![Grid2D::zeros(w, h); kept.channels()];
        return Ok((
            ScoreAssignment { channels },
            GridStack::with_dims(w, h, zeros)?,
        ));
    }

    let per_channel = selection
        .kept_indices
        .par_iter()
        .zip(kept.grids().par_iter())
        .map(|(&channel, act)| {
            let wrap = |e| CamError::Pipeline {
                channel,
                source: Box::new(e),
            };
            let masked = masked_detections(image, act, detector).map_err(wrap)?;
            let matches = score_matches(original, &masked, cfg.match_iou_min);
            let z = score_map(w, h, &matches, cfg).map_err(wrap)?;
            Ok((ChannelScores { channel, matches }, z))
        })
        .collect::<Result<Vec<_>>>()?;

    let (channels, maps): (Vec<_>, Vec<_>) = per_channel.into_iter().unzip();
    Ok((
        ScoreAssignment { channels },
        GridStack::with_dims(w, h, maps)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suppressed {
    pub scores: GridStack,
    pub activations: GridStack,
    /// Positions (into the input stacks) of the surviving channels.
    pub survivors: Vec<usize>,
    pub suppressed_count: usize,
}

/// Removes every channel whose score map sums to exactly zero.
pub fn suppress_background(scores: &GridStack, activations: &GridStack) -> Result<Suppressed> {
    if scores.channels() != activations.channels() || scores.dims() != activations.dims() {
        return Err(CamError::invalid(
            "score maps and activations are not channel-aligned",
        ));
    }
    let survivors: Vec<usize> = (0..scores.channels())
        .filter(|&c| scores.get(c).sum() != 0.0)
        .collect();
    Ok(Suppressed {
        scores: scores.select(&survivors)?,
        activations: activations.select(&survivors)?,
        suppressed_count: scores.channels() - survivors.len(),
        survivors,
    })
}

/// A final explanation raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    pub raw: Grid2D,
    pub normalized: Grid2D,
    pub suppressed_channels: usize,
}

impl Cam {
    pub fn from_raw(raw: Grid2D, suppressed_channels: usize) -> Self {
        let normalized = minmax_normalize(&raw);
        Self {
            raw,
            normalized,
            suppressed_channels,
        }
    }

    pub fn zeros(width: usize, height: usize, suppressed_channels: usize) -> Self {
        Self::from_raw(Grid2D::zeros(width, height), suppressed_channels)
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_all_zero()
    }
}

/// `ReLU(sum_c weight_c * activation_c)`, accumulated in channel order.
pub(crate) fn weighted_relu(
    activations: &GridStack,
    weight_at: impl Fn(usize, usize) -> f64,
) -> Result<Grid2D> {
    let (w, h) = activations.dims();
    let mut acc = vec![0.0f64; w * h];
    for (c, g) in activations.grids().iter().enumerate() {
        for (i, (a, v)) in acc.iter_mut().zip(g.data()).enumerate() {
            *a += weight_at(c, i) * v;
        }
    }
    Grid2D::new(w, h, acc.into_iter().map(|v| v.max(0.0)).collect())
}

pub fn assemble_cam(
    scores: &GridStack,
    activations: &GridStack,
    suppressed_channels: usize,
    cfg: &PipelineConfig,
) -> Result<Cam> {
    if scores.channels() != activations.channels() || scores.dims() != activations.dims() {
        return Err(CamError::invalid(
            "score maps and activations are not channel-aligned",
        ));
    }
    let (w, h) = activations.dims();
    if scores.is_empty() {
        return Ok(Cam::zeros(w, h, suppressed_channels));
    }
    let raw = match cfg.score_reduction {
        ScoreReduction::Pixelwise => {
            let delta = pixelwise_channel_softmax(scores)?;
            weighted_relu(activations, |c, i| delta.get(c).data()[i])?
        }
        ScoreReduction::GlobalSum => {
            let sums: Vec<f64> = scores.grids().iter().map(Grid2D::sum).collect();
            let weights = softmax(&sums);
            weighted_relu(activations, |c, _| weights[c])?
        }
    };
    Ok(Cam::from_raw(raw, suppressed_channels))
}

/// Everything produced by one Crown-CAM run.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub cam: Cam,
    pub detections: DetectionSet,
    pub selection: ChannelSelection,
    pub scores: ScoreAssignment,
    /// Upsampled channel indices that survived background suppression.
    pub surviving_channels: Vec<usize>,
}

pub fn explain(
    image: &RgbImage,
    detector: &dyn Detector,
    cfg: &PipelineConfig,
) -> Result<Explanation> {
    cfg.validate()?;
    let (w, h) = image.dims();
    let out = detector.detect(image, true)?;
    let upsampled = upsample_layers(&out.layer_activations, w, h)?;
    let selection = select_channels(&upsampled, cfg)?;
    let kept = upsampled.select(&selection.kept_indices)?;
    let (scores, z) = local_score_maps(image, &out.detections, &kept, &selection, detector, cfg)?;
    let suppressed = suppress_background(&z, &kept)?;
    let cam = assemble_cam(
        &suppressed.scores,
        &suppressed.activations,
        suppressed.suppressed_count,
        cfg,
    )?;
    let surviving_channels = suppressed
        .survivors
        .iter()
        .map(|&i| selection.kept_indices[i])
        .collect();
    Ok(Explanation {
        cam,
        detections: out.detections,
        selection,
        scores,
        surviving_channels,
    })
}
