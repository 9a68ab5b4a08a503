//! In-process stand-in for the bridge side of the directory protocol.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use camforge::cct;
use camforge::detector::{Detector, RequestDoc, SyntheticDetector};
use camforge::imageio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Answer with the synthetic detector.
    Serve,
    /// Answer every request with `error.json`.
    Fail,
    /// Never answer.
    Silent,
}

pub struct FakeBridge {
    stop: Arc<AtomicBool>,
    served: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl FakeBridge {
    pub fn spawn(root: &Path, mode: Mode) -> Self {
        fs::create_dir_all(root).unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicUsize::new(0));
        let (s, n, root) = (stop.clone(), served.clone(), root.to_path_buf());
        let handle = std::thread::spawn(move || {
            while !s.load(Ordering::SeqCst) {
                for dir in pending(&root) {
                    if mode != Mode::Silent {
                        answer(&dir, mode);
                        n.fetch_add(1, Ordering::SeqCst);
                    }
                }
                std::thread::sleep(Duration::from_millis(2));
            }
        });
        Self {
            stop,
            served,
            handle: Some(handle),
        }
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

impl Drop for FakeBridge {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn pending(root: &Path) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(root) else {
        return Vec::new();
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|d| d.join("request.json").exists() && !d.join("done").exists())
        .collect();
    dirs.sort();
    dirs
}

fn answer(dir: &Path, mode: Mode) {
    if mode == Mode::Fail {
        fs::write(dir.join("error.json"), r#"{"error":"model not loaded"}"#).unwrap();
        fs::write(dir.join("done"), b"").unwrap();
        return;
    }
    let req: RequestDoc =
        serde_json::from_str(&fs::read_to_string(dir.join("request.json")).unwrap()).unwrap();
    let image = imageio::load_png(Path::new(&req.image)).unwrap();
    let out = SyntheticDetector::default()
        .detect(&image, req.want_activations)
        .unwrap();
    let mut files = Vec::new();
    for (i, layer) in out.layer_activations.iter().enumerate() {
        let name = format!("layer{i}.cct");
        cct::write_file(&dir.join(&name), &cct::Tensor::from_stack(layer)).unwrap();
        files.push(name);
    }
    let detections: Vec<serde_json::Value> = out
        .detections
        .iter()
        .map(|d| {
            let b = d.bbox;
            serde_json::json!({"box": [b.x_min, b.y_min, b.x_max, b.y_max], "score": d.confidence})
        })
        .collect();
    let body = serde_json::json!({
        "detections": detections,
        "num_layers": files.len(),
        "activations": files,
    });
    fs::write(dir.join("response.json"), body.to_string()).unwrap();
    fs::write(dir.join("done"), b"").unwrap();
}
