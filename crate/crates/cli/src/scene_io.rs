//! Ground-truth files written next to generated scenes.

use camforge::detector::BBox;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroundTruthError {
    #[error("ground truth is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("box {index}: {msg}")]
    Box { index: usize, msg: String },
}

/// `{"seed": 7, "width": 128, "height": 128, "boxes": [[x0, y0, x1, y1], ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthDoc {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<[f64; 4]>,
}

impl GroundTruthDoc {
    pub fn new(seed: u64, width: usize, height: usize, boxes: &[BBox]) -> Self {
        Self {
            seed,
            width,
            height,
            boxes: boxes
                .iter()
                .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
                .collect(),
        }
    }

    pub fn bboxes(&self) -> Result<Vec<BBox>, GroundTruthError> {
        self.boxes
            .iter()
            .enumerate()
            .map(|(index, &[x0, y0, x1, y1])| {
                BBox::new(x0, y0, x1, y1).map_err(|e| GroundTruthError::Box {
                    index,
                    msg: e.to_string(),
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ground truth serializes");
        s.push('\n');
        s
    }
}

/// Parses and validates a ground-truth document.
pub fn parse_ground_truth(text: &str) -> Result<(GroundTruthDoc, Vec<BBox>), GroundTruthError> {
    let doc: GroundTruthDoc = serde_json::from_str(text)?;
    let boxes = doc.bboxes()?;
    Ok((doc, boxes))
}
