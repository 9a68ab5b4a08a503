//! The four subcommands, callable without going through argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use camforge::baselines::{eigen_cam, score_cam};
use camforge::cct;
use camforge::detector::{
    gen_synthetic_scene, DetectionSet, Detector, ExternalDetector, SyntheticDetector,
};
use camforge::imageio;
use camforge::metrics::{score_scene, EvalReport, SceneScore};
use camforge::pipeline::{explain, select_channels, upsample_layers, Cam, PipelineConfig};
use camforge::tensor::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Backend, Method, RunConfig};
use crate::render::{encode_rgba_png, render_overlay};
use crate::scene_io::{parse_ground_truth, GroundTruthDoc};

pub fn build_detector(backend: &Backend) -> Result<Box<dyn Detector>> {
    Ok(match backend {
        Backend::Synthetic => Box::new(SyntheticDetector::default()),
        Backend::External(dir) => Box::new(
            ExternalDetector::new(dir)
                .with_context(|| format!("opening bridge directory {}", dir.display()))?,
        ),
    })
}

/// One CAM plus the bookkeeping each method can report.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub cam: Cam,
    pub detections: DetectionSet,
    pub kept_channels: Option<Vec<usize>>,
    pub surviving_channels: Option<Vec<usize>>,
    /// Matched boxes whose confidence rose, and fell, under masking.
    pub confidence_shifts: Option<(usize, usize)>,
}

pub fn run_method(
    method: Method,
    image: &RgbImage,
    detector: &dyn Detector,
    cfg: &PipelineConfig,
) -> camforge::Result<MethodOutput> {
    match method {
        Method::CrownCam => {
            let e = explain(image, detector, cfg)?;
            Ok(MethodOutput {
                confidence_shifts: Some(e.scores.confidence_shifts()),
                kept_channels: Some(e.selection.kept_indices),
                surviving_channels: Some(e.surviving_channels),
                detections: e.detections,
                cam: e.cam,
            })
        }
        Method::ScoreCam => {
            let s = score_cam(image, detector, cfg)?;
            Ok(MethodOutput {
                cam: s.cam,
                detections: s.detections,
                kept_channels: None,
                surviving_channels: None,
                confidence_shifts: None,
            })
        }
        Method::EigenCam => {
            let cam = eigen_cam(image, detector)?;
            let detections = detector.detect(image, false)?.detections;
            Ok(MethodOutput {
                cam,
                detections,
                kept_channels: None,
                surviving_channels: None,
                confidence_shifts: None,
            })
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

pub fn scene_stem(index: usize) -> String {
    format!("scene_{index}")
}

/// Writes `count` scenes; scene `i` uses seed `seed + i`.
pub fn cmd_gen(
    seed: u64,
    count: usize,
    trees: usize,
    size: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::with_capacity(count);
    for i in 0..count {
        let s = seed.wrapping_add(i as u64);
        let scene = gen_synthetic_scene(s, trees, size, size)?;
        let png = out.join(format!("{}.png", scene_stem(i)));
        write_file(&png, imageio::encode_png(&scene.image)?)?;
        let gt = GroundTruthDoc::new(s, size, size, &scene.ground_truth);
        write_file(
            &out.join(format!("{}.gt.json", scene_stem(i))),
            gt.to_json(),
        )?;
        written.push(png);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub explain_ms: f64,
    pub render_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainMeta {
    pub method: String,
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub detections: DetectionSet,
    pub kept_channels: Option<Vec<usize>>,
    pub surviving_channels: Option<Vec<usize>>,
    pub suppressed_channels: usize,
    pub confidence_increases: Option<usize>,
    pub confidence_decreases: Option<usize>,
    pub cam_max: f64,
    pub empty_cam: bool,
    pub timings: Timings,
}

/// Explains one image; writes `cam.png`, `cam.cct` and `meta.json` into `out`.
pub fn cmd_explain(cfg: &RunConfig, image_path: &Path, out: &Path) -> Result<ExplainMeta> {
    let image = imageio::load_png(image_path)?;
    explain_image(cfg, &image, &image_path.display().to_string(), out)
}

pub fn explain_image(
    cfg: &RunConfig,
    image: &RgbImage,
    label: &str,
    out: &Path,
) -> Result<ExplainMeta> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let detector = build_detector(&cfg.backend)?;

    let t0 = Instant::now();
    let result = run_method(cfg.method, image, detector.as_ref(), &cfg.pipeline)
        .with_context(|| format!("{} failed on {label}", cfg.method))?;
    let explain_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let overlay = render_overlay(image, &result.cam.normalized).map_err(anyhow::Error::msg)?;
    write_file(&out.join("cam.png"), encode_rgba_png(&overlay)?)?;
    let render_ms = t1.elapsed().as_secs_f64() * 1e3;

    cct::write_file(
        &out.join("cam.cct"),
        &cct::Tensor::from_grid(&result.cam.raw),
    )?;

    let (w, h) = image.dims();
    let meta = ExplainMeta {
        method: cfg.method.to_string(),
        image: label.to_string(),
        width: w,
        height: h,
        detections: result.detections,
        kept_channels: result.kept_channels,
        surviving_channels: result.surviving_channels,
        suppressed_channels: result.cam.suppressed_channels,
        confidence_increases: result.confidence_shifts.map(|s| s.0),
        confidence_decreases: result.confidence_shifts.map(|s| s.1),
        cam_max: result.cam.raw.max(),
        empty_cam: result.cam.is_empty(),
        timings: Timings {
            explain_ms,
            render_ms,
        },
    };
    write_file(&out.join("meta.json"), to_json(&meta))?;
    Ok(meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene: String,
    #[serde(flatten)]
    pub outcome: SceneOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneOutcome {
    Scored {
        camiou_fg: f64,
        camiou_bg: f64,
        empty_cam: bool,
        empty_gt: bool,
        detections: usize,
        confidence_increases: Option<usize>,
        confidence_decreases: Option<usize>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub method: String,
    pub aggregation: String,
    pub threshold: f64,
    pub iou_denominator: camforge::metrics::IouDenominator,
    pub scenes_total: usize,
    pub scenes_scored: usize,
    pub scenes_failed: usize,
    /// Mean CAMIoU^FG x 100 over scored scenes.
    pub camiou_fg: f64,
    /// Mean CAMIoU^BG x 100 over scored scenes.
    pub camiou_bg: f64,
    pub empty_cam_count: usize,
    pub empty_gt_count: usize,
    pub confidence_increases: Option<usize>,
    pub confidence_decreases: Option<usize>,
    pub rows: Vec<SceneRow>,
}

/// `scene_<i>.png` files in `dir`, ordered by `i`.
pub fn list_scenes(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut scenes = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let idx = name
            .strip_prefix("scene_")
            .and_then(|r| r.strip_suffix(".png"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(i) = idx {
            scenes.push((i, path));
        }
    }
    scenes.sort();
    Ok(scenes)
}

fn score_one(
    cfg: &RunConfig,
    detector: &dyn Detector,
    png: &Path,
) -> Result<(SceneScore, SceneOutcome)> {
    let gt_path = png.with_extension("gt.json");
    let text = fs::read_to_string(&gt_path)
        .with_context(|| format!("missing ground truth {}", gt_path.display()))?;
    let (_, boxes) = parse_ground_truth(&text).with_context(|| gt_path.display().to_string())?;
    let image = imageio::load_png(png)?;
    let out = run_method(cfg.method, &image, detector, &cfg.pipeline)?;
    let s = score_scene(&out.cam, &boxes, cfg.threshold, cfg.iou_denominator)?;
    let outcome = SceneOutcome::Scored {
        camiou_fg: s.camiou_fg,
        camiou_bg: s.camiou_bg,
        empty_cam: s.empty_cam,
        empty_gt: s.empty_gt,
        detections: out.detections.len(),
        confidence_increases: out.confidence_shifts.map(|c| c.0),
        confidence_decreases: out.confidence_shifts.map(|c| c.1),
    };
    Ok((s, outcome))
}

/// Scores every scene in `scenes_dir` and writes `report.json` into `out`.
///
/// Scenes that fail get an error row and are left out of the aggregates. The
/// report is still written when every scene fails, but the call errors.
pub fn cmd_evaluate(cfg: &RunConfig, scenes_dir: &Path, out: &Path) -> Result<EvaluateReport> {
    cfg.validate()?;
    let scenes = list_scenes(scenes_dir)?;
    if scenes.is_empty() {
        bail!("no scene_<i>.png files in {}", scenes_dir.display());
    }
    let detector = build_detector(&cfg.backend)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("building worker pool")?;
    let results: Vec<(String, Result<(SceneScore, SceneOutcome)>)> = pool.install(|| {
        scenes
            .par_iter()
            .map(|(i, png)| (scene_stem(*i), score_one(cfg, detector.as_ref(), png)))
            .collect()
    });

    let mut scores = Vec::new();
    let mut rows = Vec::with_capacity(results.len());
    let (mut ups, mut downs, mut any_shift) = (0usize, 0usize, false);
    for (scene, r) in results {
        let outcome = match r {
            Ok((s, outcome)) => {
                scores.push(s);
                if let SceneOutcome::Scored {
                    confidence_increases: Some(u),
                    confidence_decreases: Some(d),
                    ..
                } = outcome
                {
                    ups += u;
                    downs += d;
                    any_shift = true;
                }
                outcome
            }
            Err(e) => SceneOutcome::Failed {
                error: format!("{e:#}"),
            },
        };
        rows.push(SceneRow { scene, outcome });
    }

    let agg = EvalReport::from_scores(scores, cfg.threshold, cfg.iou_denominator);
    let scored = agg.scenes.len();
    let report = EvaluateReport {
        method: cfg.method.to_string(),
        aggregation: agg.aggregation,
        threshold: agg.threshold,
        iou_denominator: agg.iou_denominator,
        scenes_total: rows.len(),
        scenes_scored: scored,
        scenes_failed: rows.len() - scored,
        camiou_fg: agg.camiou_fg,
        camiou_bg: agg.camiou_bg,
        empty_cam_count: agg.empty_cam_count,
        empty_gt_count: agg.empty_gt_count,
        confidence_increases: any_shift.then_some(ups),
        confidence_decreases: any_shift.then_some(downs),
        rows,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("report.json"), to_json(&report))?;
    if scored == 0 {
        bail!("all {} scenes failed", report.scenes_total);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRow {
    pub index: usize,
    pub layer: usize,
    pub layer_channel: usize,
    pub kl: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelsDoc {
    pub image: String,
    pub keep_fraction: f64,
    pub total: usize,
    pub kept: usize,
    pub channels: Vec<ChannelRow>,
}

/// Ranks the upsampled channels of one image and writes `channels.json`.
pub fn cmd_channels(cfg: &RunConfig, image_path: &Path, out: &Path) -> Result<ChannelsDoc> {
    let image = imageio::load_png(image_path)?;
    channels_for_image(cfg, &image, &image_path.display().to_string(), out)
}

pub fn channels_for_image(
    cfg: &RunConfig,
    image: &RgbImage,
    label: &str,
    out: &Path,
) -> Result<ChannelsDoc> {
    cfg.validate()?;
    let detector = build_detector(&cfg.backend)?;
    let (w, h) = image.dims();
    let layers = detector.detect(image, true)?.layer_activations;
    let upsampled = upsample_layers(&layers, w, h)?;
    let selection = select_channels(&upsampled, &cfg.pipeline)?;

    let mut channels = Vec::with_capacity(upsampled.channels());
    for (layer, stack) in layers.iter().enumerate() {
        for layer_channel in 0..stack.channels() {
            let index = channels.len();
            channels.push(ChannelRow {
                index,
                layer,
                layer_channel,
                kl: selection.kl_scores[index],
                kept: selection.is_kept(index),
            });
        }
    }
    let doc = ChannelsDoc {
        image: label.to_string(),
        keep_fraction: cfg.pipeline.channel_keep_fraction,
        total: channels.len(),
        kept: selection.kept_indices.len(),
        channels,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("channels.json"), to_json(&doc))?;
    Ok(doc)
}
