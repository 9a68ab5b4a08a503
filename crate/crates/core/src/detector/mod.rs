//! Detector abstraction: boxes, confidences and backbone activations.

mod external;
mod synthetic;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};
use crate::tensor::{GridStack, RgbImage};

pub use external::{ExternalDetector, RequestDoc, ResponseDetection, ResponseDoc, DEFAULT_TIMEOUT};
pub use synthetic::{
    gen_synthetic_scene, synthetic_activations, Blob, SyntheticDetector, SyntheticScene,
    SYNTHETIC_CHANNELS, SYNTHETIC_STRIDES,
};

/// Axis-aligned box in continuous image coordinates, origin top-left.
///
/// Pixel `(x, y)` covers `[x, x+1) x [y, y+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(CamError::invalid("non-finite box coordinate"));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(CamError::invalid(format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn intersects_extent(&self, width: usize, height: usize) -> bool {
        self.x_max > 0.0
            && self.y_max > 0.0
            && self.x_min < width as f64
            && self.y_min < height as f64
    }

    /// Clips to `[0, width] x [0, height]`; `None` when nothing is left.
    pub fn clip(&self, width: usize, height: usize) -> Option<BBox> {
        BBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(width as f64),
            self.y_max.min(height as f64),
        )
        .ok()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(CamError::invalid(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { bbox, confidence })
    }
}

/// Detections in descending-confidence order. Ties keep insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionSet {
    items: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(mut items: Vec<Detection>) -> Self {
        items.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Self { items }
    }

    pub fn items(&self) -> &[Detection] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Detection> {
        self.items.iter()
    }
}

impl<'a> IntoIterator for &'a DetectionSet {
    type Item = &'a Detection;
    type IntoIter = std::slice::Iter<'a, Detection>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// What a backend returns for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub detections: DetectionSet,
    /// One stack per backbone layer, finest first. Empty unless requested.
    pub layer_activations: Vec<GridStack>,
}

/// A source of detections and backbone activations.
///
/// Implementations must tolerate concurrent `detect` calls; a backend that
/// cannot run requests in parallel serializes internally.
pub trait Detector: Send + Sync {
    fn detect(&self, image: &RgbImage, want_activations: bool) -> Result<DetectorOutput>;
}

impl<D: Detector + ?Sized> Detector for &D {
    fn detect(&self, image: &RgbImage, want_activations: bool) -> Result<DetectorOutput> {
        (**self).detect(image, want_activations)
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&self, image: &RgbImage, want_activations: bool) -> Result<DetectorOutput> {
        (**self).detect(image, want_activations)
    }
}

/// Wraps a backend and counts calls, split by whether activations were asked for.
#[derive(Debug)]
pub struct CountingDetector<D> {
    inner: D,
    with_activations: AtomicUsize,
    without_activations: AtomicUsize,
}

impl<D> CountingDetector<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            with_activations: AtomicUsize::new(0),
            without_activations: AtomicUsize::new(0),
        }
    }

    /// Calls made with `want_activations = false`, i.e. masked runs.
    pub fn masked_calls(&self) -> usize {
        self.without_activations.load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> usize {
        self.masked_calls() + self.with_activations.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.with_activations.store(0, Ordering::SeqCst);
        self.without_activations.store(0, Ordering::SeqCst);
    }
}

impl<D: Detector> Detector for CountingDetector<D> {
    fn detect(&self, image: &RgbImage, want_activations: bool) -> Result<DetectorOutput> {
        let counter = if want_activations {
            &self.with_activations
        } else {
            &self.without_activations
        };
        counter.fetch_add(1, Ordering::SeqCst);
        self.inner.detect(image, want_activations)
    }
}
