//! Client side of the directory-based detector exchange protocol.
//!
//! One request per subdirectory of the watch root:
//!
//! 1. the client writes `image.png` and then `request.json`;
//! 2. the bridge writes `response.json` (or `error.json`) and any CCT1
//!    activation files it references;
//! 3. the bridge creates the empty sentinel `done`.
//!
//! The client polls for `done` until a timeout elapses.

use std::path::{Component, Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BBox, Detection, DetectionSet, Detector, DetectorOutput};
use crate::cct;
use crate::error::{CamError, Result};
use crate::imageio;
use crate::tensor::RgbImage;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const TIMEOUT_ENV: &str = "CAMFORGE_BRIDGE_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDoc {
    pub image: String,
    pub want_activations: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDoc {
    pub detections: Vec<ResponseDetection>,
    #[serde(default)]
    pub activations: Vec<String>,
    /// Layer count declared by the bridge; checked against `activations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_layers: Option<usize>,
}

impl ResponseDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: ResponseDoc = serde_json::from_str(text)
            .map_err(|e| CamError::BackendIo(format!("malformed response.json: {e}")))?;
        if let Some(n) = doc.num_layers {
            if n != doc.activations.len() {
                return Err(CamError::BackendIo(format!(
                    "response declares {n} layers but lists {} activation files",
                    doc.activations.len()
                )));
            }
        }
        for rel in &doc.activations {
            relative_inside(rel)?;
        }
        Ok(doc)
    }

    pub fn detection_set(&self) -> Result<DetectionSet> {
        let items = self
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let [x0, y0, x1, y1] = d.bbox;
                BBox::new(x0, y0, x1, y1)
                    .and_then(|b| Detection::new(b, d.score))
                    .map_err(|e| CamError::BackendIo(format!("detection {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DetectionSet::new(items))
    }
}

/// Accepts only plain relative paths that stay inside the request directory.
fn relative_inside(rel: &str) -> Result<PathBuf> {
    let p = PathBuf::from(rel);
    let ok = !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(p)
    } else {
        Err(CamError::BackendIo(format!(
            "activation path {rel:?} escapes the request directory"
        )))
    }
}

/// Talks to an out-of-process bridge through a watched directory.
///
/// Requests are serialized per client; run several bridges with separate
/// roots and one client each to fan out.
#[derive(Debug)]
pub struct ExternalDetector {
    root: PathBuf,
    timeout: Duration,
    poll_interval: Duration,
    next_id: Mutex<u64>,
}

impl ExternalDetector {
    /// Uses [`DEFAULT_TIMEOUT`] unless `CAMFORGE_BRIDGE_TIMEOUT_SECS` is set.
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let timeout = match std::env::var(TIMEOUT_ENV) {
            Ok(s) => {
                let secs: f64 = s.trim().parse().map_err(|_| {
                    CamError::invalid(format!("{TIMEOUT_ENV}={s:?} is not a number of seconds"))
                })?;
                if !(secs.is_finite() && secs > 0.0) {
                    return Err(CamError::invalid(format!("{TIMEOUT_ENV} must be positive")));
                }
                Duration::from_secs_f64(secs)
            }
            Err(_) => DEFAULT_TIMEOUT,
        };
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| CamError::io(&root, e))?;
        Ok(Self {
            root,
            timeout,
            poll_interval: Duration::from_millis(10),
            next_id: Mutex::new(0),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll_interval = poll;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn run(&self, id: u64, image: &RgbImage, want_activations: bool) -> Result<DetectorOutput> {
        let dir = self
            .root
            .join(format!("req_{}_{id:06}", std::process::id()));
        let io = |p: &Path, e| CamError::BackendIo(format!("{}: {e}", p.display()));
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;

        let image_path = dir.join("image.png");
        imageio::save_png(image, &image_path)?;
        let request = RequestDoc {
            image: image_path.to_string_lossy().into_owned(),
            want_activations,
        };
        let tmp = dir.join("request.json.tmp");
        let body = serde_json::to_vec_pretty(&request).expect("request serializes");
        std::fs::write(&tmp, body).map_err(|e| io(&tmp, e))?;
        let req_path = dir.join("request.json");
        std::fs::rename(&tmp, &req_path).map_err(|e| io(&req_path, e))?;

        let done = dir.join("done");
        let started = Instant::now();
        while !done.exists() {
            if started.elapsed() >= self.timeout {
                return Err(CamError::BackendIo(format!(
                    "bridge did not answer {} within {:.1}s",
                    dir.display(),
                    self.timeout.as_secs_f64()
                )));
            }
            std::thread::sleep(self.poll_interval);
        }

        let err_path = dir.join("error.json");
        if err_path.exists() {
            let msg = std::fs::read_to_string(&err_path).unwrap_or_default();
            return Err(CamError::BackendIo(format!(
                "bridge reported an error for {}: {}",
                dir.display(),
                msg.trim()
            )));
        }
        let resp_path = dir.join("response.json");
        let text = std::fs::read_to_string(&resp_path).map_err(|e| io(&resp_path, e))?;
        let doc = ResponseDoc::parse(&text)?;
        let detections = doc.detection_set()?;

        let mut layers = Vec::new();
        if want_activations {
            if doc.activations.is_empty() {
                return Err(CamError::BackendIo(
                    "activations requested but response lists none".into(),
                ));
            }
            for rel in &doc.activations {
                let path = dir.join(relative_inside(rel)?);
                let stack = cct::read_file(&path)
                    .and_then(|t| t.to_stack())
                    .map_err(|e| CamError::BackendIo(e.to_string()))?;
                if stack.width() > image.width() || stack.height() > image.height() {
                    return Err(CamError::BackendIo(format!(
                        "{} is {}x{}, larger than the {}x{} input",
                        path.display(),
                        stack.width(),
                        stack.height(),
                        image.width(),
                        image.height()
                    )));
                }
                layers.push(stack);
            }
        }
        Ok(DetectorOutput {
            detections,
            layer_activations: layers,
        })
    }
}

impl Detector for ExternalDetector {
    fn detect(&self, image: &RgbImage, want_activations: bool) -> Result<DetectorOutput> {
        // Holding the lock for the whole exchange keeps one request in flight.
        let mut next = self
            .next_id
            .lock()
            .map_err(|_| CamError::BackendIo("request lock poisoned".into()))?;
        let id = *next;
        *next += 1;
        self.run(id, image, want_activations)
    }
}
