//! Run configuration: a flat `key = value` file overridden by CLI flags.
//!
//! ```text
//! # comments and blank lines are ignored
//! method = crowncam
//! backend = synthetic            # or external:/path/to/watch/dir
//! threshold = 0.4
//! iou_denominator = union
//! jobs = 4
//! pipeline.channel_keep_fraction = 0.5
//! pipeline.sigma_sq = 0.7
//! pipeline.match_iou_min = 0.1
//! pipeline.epsilon = 1e-8
//! pipeline.score_reduction = pixelwise
//! pipeline.overlap_combine = max
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use camforge::metrics::{IouDenominator, DEFAULT_THRESHOLD};
use camforge::pipeline::{OverlapCombine, PipelineConfig, ScoreReduction};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: {msg}")]
    Value { key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    CrownCam,
    ScoreCam,
    EigenCam,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crowncam" => Ok(Method::CrownCam),
            "scorecam" => Ok(Method::ScoreCam),
            "eigencam" => Ok(Method::EigenCam),
            _ => Err(format!("unknown method {s:?} (crowncam|scorecam|eigencam)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::CrownCam => "crowncam",
            Method::ScoreCam => "scorecam",
            Method::EigenCam => "eigencam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Synthetic,
    External(PathBuf),
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "synthetic" {
            return Ok(Backend::Synthetic);
        }
        match s.strip_prefix("external:") {
            Some(dir) if !dir.is_empty() => Ok(Backend::External(PathBuf::from(dir))),
            _ => Err(format!("unknown backend {s:?} (synthetic|external:<dir>)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub method: Method,
    pub backend: Backend,
    pub pipeline: PipelineConfig,
    pub threshold: f64,
    pub iou_denominator: IouDenominator,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::CrownCam,
            backend: Backend::Synthetic,
            pipeline: PipelineConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            iou_denominator: IouDenominator::Union,
            jobs: 1,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ConfigError::Value {
            key: key.into(),
            msg: format!("{v:?} is not a finite number"),
        })
}

fn value_err(key: &str, msg: String) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        msg,
    }
}

impl RunConfig {
    /// Sets one dotted key. Values are validated by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "method" => self.method = v.parse().map_err(|m| value_err(key, m))?,
            "backend" => self.backend = v.parse().map_err(|m| value_err(key, m))?,
            "threshold" => self.threshold = parse_f64(key, v)?,
            "jobs" => {
                self.jobs = v
                    .parse()
                    .map_err(|_| value_err(key, format!("{v:?} is not a count")))?
            }
            "iou_denominator" => {
                self.iou_denominator = match v {
                    "union" => IouDenominator::Union,
                    "sum" => IouDenominator::Sum,
                    _ => return Err(value_err(key, format!("{v:?} (union|sum)"))),
                }
            }
            "pipeline.channel_keep_fraction" => {
                self.pipeline.channel_keep_fraction = parse_f64(key, v)?
            }
            "pipeline.sigma_sq" => self.pipeline.sigma_sq = parse_f64(key, v)?,
            "pipeline.match_iou_min" => self.pipeline.match_iou_min = parse_f64(key, v)?,
            "pipeline.epsilon" => self.pipeline.epsilon = parse_f64(key, v)?,
            "pipeline.score_reduction" => {
                self.pipeline.score_reduction = match v {
                    "pixelwise" => ScoreReduction::Pixelwise,
                    "global_sum" => ScoreReduction::GlobalSum,
                    _ => return Err(value_err(key, format!("{v:?} (pixelwise|global_sum)"))),
                }
            }
            "pipeline.overlap_combine" => {
                self.pipeline.overlap_combine = match v {
                    "max" => OverlapCombine::Max,
                    "sum" => OverlapCombine::Sum,
                    _ => return Err(value_err(key, format!("{v:?} (max|sum)"))),
                }
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Applies a config document on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value, line) in parse_config(text)? {
            self.set(&key, &value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline
            .validate()
            .map_err(|e| value_err("pipeline", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(value_err(
                "threshold",
                format!("{} outside [0, 1]", self.threshold),
            ));
        }
        if self.jobs == 0 {
            return Err(value_err("jobs", "must be at least 1".into()));
        }
        Ok(())
    }

    /// Serializes back to the file format; `from_text(to_text())` restores `self`.
    pub fn to_text(&self) -> String {
        let backend = match &self.backend {
            Backend::Synthetic => "synthetic".to_string(),
            Backend::External(p) => format!("external:{}", p.display()),
        };
        let p = &self.pipeline;
        format!(
            "method = {}\nbackend = {}\nthreshold = {:?}\niou_denominator = {}\njobs = {}\n\
             pipeline.channel_keep_fraction = {:?}\npipeline.sigma_sq = {:?}\n\
             pipeline.match_iou_min = {:?}\npipeline.epsilon = {:?}\n\
             pipeline.score_reduction = {}\npipeline.overlap_combine = {}\n",
            self.method,
            backend,
            self.threshold,
            match self.iou_denominator {
                IouDenominator::Union => "union",
                IouDenominator::Sum => "sum",
            },
            self.jobs,
            p.channel_keep_fraction,
            p.sigma_sq,
            p.match_iou_min,
            p.epsilon,
            match p.score_reduction {
                ScoreReduction::Pixelwise => "pixelwise",
                ScoreReduction::GlobalSum => "global_sum",
            },
            match p.overlap_combine {
                OverlapCombine::Max => "max",
                OverlapCombine::Sum => "sum",
            },
        )
    }
}

/// Splits a config document into `(key, value, line)` triples.
///
/// Purely syntactic: keys are not checked against the known set here.
pub fn parse_config(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() || k.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line });
        }
        if out.iter().any(|(seen, _, _)| seen == k) {
            return Err(ConfigError::Duplicate {
                line,
                key: k.to_string(),
            });
        }
        out.push((k.to_string(), v.to_string(), line));
    }
    Ok(out)
}
