#[path = "../../core/tests/support/fake_bridge.rs"]
mod fake_bridge;

use std::fs;
use std::path::Path;
use std::process::Command;

use camforge::cct;
use camforge::imageio;
use camforge_cli::commands::{
    channels_for_image, cmd_channels, cmd_evaluate, cmd_explain, cmd_gen, EvaluateReport,
    ExplainMeta, SceneOutcome,
};
use camforge_cli::scene_io::parse_ground_truth;
use camforge_cli::{Backend, Method, RunConfig};
use fake_bridge::{FakeBridge, Mode};

fn camforge(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_camforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_scene_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("none");
    assert!(cmd_gen(1, 0, 5, 64, &out).unwrap().is_empty());
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_gen(9, 10, 5, 64, &a).unwrap();
    cmd_gen(9, 10, 5, 64, &b).unwrap();
    assert_eq!(fs::read_dir(&a).unwrap().count(), 20);
    for i in 0..10 {
        for ext in ["png", "gt.json"] {
            let name = format!("scene_{i}.{ext}");
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap()
            );
        }
        let (doc, boxes) =
            parse_ground_truth(&fs::read_to_string(a.join(format!("scene_{i}.gt.json"))).unwrap())
                .unwrap();
        assert_eq!(boxes.len(), 5);
        assert_eq!(doc.seed, 9 + i);
    }
}

#[test]
fn explain_on_empty_scene_leaves_the_image_untouched() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(5, 1, 0, 64, dir.path()).unwrap();
    let input = dir.path().join("scene_0.png");
    let out = dir.path().join("crown");
    let meta = cmd_explain(&RunConfig::default(), &input, &out).unwrap();
    assert!(meta.empty_cam && meta.detections.is_empty());

    let overlay = image::open(out.join("cam.png")).unwrap().to_rgba8();
    let original = imageio::to_rgb8(&imageio::load_png(&input).unwrap());
    for (o, p) in overlay.pixels().zip(original.pixels()) {
        assert_eq!(o.0, [p[0], p[1], p[2], 255]);
    }
    let raw = cct::read_file(&out.join("cam.cct")).unwrap();
    assert_eq!(raw.dims(), &[64, 64]);
    assert!(raw.data().iter().all(|&v| v == 0.0));

    let text = fs::read_to_string(out.join("meta.json")).unwrap();
    let parsed: ExplainMeta = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, meta);

    let eigen = RunConfig {
        method: Method::EigenCam,
        ..RunConfig::default()
    };
    let meta = cmd_explain(&eigen, &input, &dir.path().join("eigen")).unwrap();
    assert!(meta.detections.is_empty());
    assert!(!meta.empty_cam);
}

#[test]
fn explain_reports_channels_and_shifts() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(6, 1, 6, 96, dir.path()).unwrap();
    let meta = cmd_explain(
        &RunConfig::default(),
        &dir.path().join("scene_0.png"),
        &dir.path().join("out"),
    )
    .unwrap();
    assert_eq!(meta.kept_channels.as_ref().unwrap().len(), 12);
    let surviving = meta.surviving_channels.as_ref().unwrap();
    assert_eq!(surviving.len() + meta.suppressed_channels, 12);
    assert!(meta.confidence_increases.is_some());
    assert!(!meta.empty_cam);
}

#[test]
fn evaluate_keeps_failed_scenes_out_of_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    cmd_gen(30, 4, 5, 64, &scenes).unwrap();
    fs::remove_file(scenes.join("scene_2.gt.json")).unwrap();
    let report = cmd_evaluate(&RunConfig::default(), &scenes, &dir.path().join("r")).unwrap();
    assert_eq!(
        (
            report.scenes_total,
            report.scenes_scored,
            report.scenes_failed
        ),
        (4, 3, 1)
    );
    assert!(
        matches!(&report.rows[2].outcome, SceneOutcome::Failed { error } if error.contains("ground truth"))
    );
    let fg: Vec<f64> = report
        .rows
        .iter()
        .filter_map(|r| match r.outcome {
            SceneOutcome::Scored { camiou_fg, .. } => Some(camiou_fg),
            SceneOutcome::Failed { .. } => None,
        })
        .collect();
    let mean = 100.0 * fg.iter().sum::<f64>() / 3.0;
    assert!((report.camiou_fg - mean).abs() < 1e-12);

    let text = fs::read_to_string(dir.path().join("r/report.json")).unwrap();
    let parsed: EvaluateReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, report);

    for i in [0, 1, 3] {
        fs::remove_file(scenes.join(format!("scene_{i}.gt.json"))).unwrap();
    }
    assert!(cmd_evaluate(&RunConfig::default(), &scenes, &dir.path().join("r2")).is_err());
    assert!(dir.path().join("r2/report.json").exists());
}

#[test]
fn evaluate_orders_rows_by_scene_index() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(40, 12, 3, 48, dir.path()).unwrap();
    let cfg = RunConfig {
        jobs: 4,
        method: Method::ScoreCam,
        ..RunConfig::default()
    };
    let report = cmd_evaluate(&cfg, dir.path(), &dir.path().join("r")).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.scene.as_str()).collect();
    let want: Vec<String> = (0..12).map(|i| format!("scene_{i}")).collect();
    assert_eq!(names, want);
    assert!(report.confidence_increases.is_none());
}

#[test]
fn channels_counts_follow_keep_fraction() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(50, 1, 4, 64, dir.path()).unwrap();
    let img = dir.path().join("scene_0.png");
    let doc = cmd_channels(&RunConfig::default(), &img, &dir.path().join("c")).unwrap();
    assert_eq!((doc.total, doc.kept), (24, 12));
    assert_eq!(doc.channels.iter().filter(|c| c.kept).count(), 12);
    assert_eq!(doc.channels[23].layer, 2);
    assert_eq!(doc.channels[23].layer_channel, 7);

    let mut all = RunConfig::default();
    all.pipeline.channel_keep_fraction = 1.0;
    let image = imageio::load_png(&img).unwrap();
    let doc = channels_for_image(&all, &image, "x", &dir.path().join("c2")).unwrap();
    assert!(doc.channels.iter().all(|c| c.kept));
}

#[test]
fn external_backend_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let bridge_root = dir.path().join("bridge");
    let _bridge = FakeBridge::spawn(&bridge_root, Mode::Serve);
    cmd_gen(60, 1, 3, 48, dir.path()).unwrap();
    let cfg = RunConfig {
        backend: Backend::External(bridge_root.clone()),
        ..RunConfig::default()
    };
    let remote = cmd_explain(&cfg, &dir.path().join("scene_0.png"), &dir.path().join("r")).unwrap();
    let local = cmd_explain(
        &RunConfig::default(),
        &dir.path().join("scene_0.png"),
        &dir.path().join("l"),
    )
    .unwrap();
    assert_eq!(remote.detections, local.detections);
    assert!(!remote.empty_cam);
}

#[test]
fn binary_runs_the_whole_flow() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let o = camforge(&[
        "gen",
        "--seed",
        "3",
        "--count",
        "3",
        "--trees",
        "4",
        "--size",
        "64",
        "--out",
        path_str(&scenes),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# evaluation\nmethod = scorecam\npipeline.sigma_sq = 0.7\n",
    )
    .unwrap();
    let out = dir.path().join("eval");
    let o = camforge(&[
        "evaluate",
        "--config",
        path_str(&cfg),
        "--method",
        "crowncam",
        "--jobs",
        "2",
        "--scenes",
        path_str(&scenes),
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: EvaluateReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.method, "crowncam");
    assert_eq!(report.scenes_scored, 3);

    let o = camforge(&[
        "explain",
        "--seed",
        "11",
        "--size",
        "64",
        "--out",
        path_str(&dir.path().join("x")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("x/cam.cct").exists());

    let o = camforge(&[
        "channels",
        "--image",
        path_str(&scenes.join("scene_0.png")),
        "--set",
        "pipeline.channel_keep_fraction=0.25",
        "--out",
        path_str(&dir.path().join("ch")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("kept 6 of 24"));
}

#[test]
fn binary_fails_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "method = crowncam\nsigma = 2\n").unwrap();
    let o = camforge(&[
        "explain",
        "--config",
        path_str(&cfg),
        "--seed",
        "1",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = camforge(&[
        "evaluate",
        "--scenes",
        path_str(dir.path()),
        "--out",
        path_str(dir.path()),
    ]);
    assert!(!o.status.success());

    let o = camforge(&[
        "explain",
        "--method",
        "gradcam",
        "--seed",
        "1",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(!o.status.success());
}
