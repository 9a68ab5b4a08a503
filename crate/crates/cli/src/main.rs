use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use camforge::detector::gen_synthetic_scene;
use camforge_cli::commands::{self, channels_for_image, explain_image};
use camforge_cli::{Backend, Method, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "camforge",
    version,
    about = "Gradient-free CAMs for object detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// crowncam, scorecam or eigencam
    #[arg(long)]
    method: Option<Method>,
    /// synthetic or external:<dir>
    #[arg(long)]
    backend: Option<Backend>,
    /// CAM binarization threshold
    #[arg(long)]
    threshold: Option<f64>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
    /// Override any config key, e.g. `--set pipeline.channel_keep_fraction=1.0`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(b) = &self.backend {
            cfg.backend = b.clone();
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// An input image: a PNG on disk or a synthetic scene made on the fly.
#[derive(Args)]
struct Input {
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    image: Option<PathBuf>,
    /// Generate the input from this seed instead of reading `--image`
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    trees: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
}

impl Input {
    fn load(&self) -> Result<(camforge::tensor::RgbImage, String)> {
        match (&self.image, self.seed) {
            (Some(p), _) => Ok((camforge::imageio::load_png(p)?, p.display().to_string())),
            (None, Some(s)) => Ok((
                gen_synthetic_scene(s, self.trees, self.size, self.size)?.image,
                format!("synthetic:{s}"),
            )),
            (None, None) => bail!("either --image or --seed is required"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes with ground truth
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 5)]
        trees: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain one image: cam.png, cam.cct, meta.json
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of scenes against ground truth: report.json
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank backbone channels of one image: channels.json
    Channels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            seed,
            count,
            trees,
            size,
            out,
        } => {
            let files = commands::cmd_gen(seed, count, trees, size, &out)?;
            println!("wrote {} scenes to {}", files.len(), out.display());
        }
        Command::Explain { common, input, out } => {
            let cfg = common.resolve()?;
            let (image, label) = input.load()?;
            let meta = explain_image(&cfg, &image, &label, &out)?;
            println!(
                "{}: {} detections, {} suppressed channels, cam max {:.4} -> {}",
                meta.method,
                meta.detections.len(),
                meta.suppressed_channels,
                meta.cam_max,
                out.display()
            );
        }
        Command::Evaluate {
            common,
            scenes,
            out,
        } => {
            let cfg = common.resolve()?;
            let r = commands::cmd_evaluate(&cfg, &scenes, &out)?;
            println!(
                "{}: CAMIoU fg {:.2} bg {:.2} over {}/{} scenes -> {}",
                r.method,
                r.camiou_fg,
                r.camiou_bg,
                r.scenes_scored,
                r.scenes_total,
                Path::new(&out).join("report.json").display()
            );
        }
        Command::Channels { common, input, out } => {
            let cfg = common.resolve()?;
            let (image, label) = input.load()?;
            let doc = channels_for_image(&cfg, &image, &label, &out)?;
            println!(
                "kept {} of {} channels -> {}",
                doc.kept,
                doc.total,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
