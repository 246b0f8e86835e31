use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mono3d_cli::{cmd_eval, Config, Failure, RunManifest};
use mono3d_core::kitti::{evaluate_dataset, read_labels, LabelKind};
use mono3d_core::synth::{generate_frame, perturb_detections};

fn mono3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mono3d")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mono3d(args);
    assert!(out.status.success(), "mono3d {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn errors(out: &Output) -> Vec<Failure> {
    assert_eq!(out.status.code(), Some(1));
    serde_json::from_slice(&out.stderr).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Scene {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Scene {
    fn new(frames: usize, seed: u64) -> Scene {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["synth", "--out", &s(&root.join("scene")), "--frames", &frames.to_string(), "--seed", &seed.to_string(), "--detections"]);
        Scene { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> String {
        s(&self.root.join(rel))
    }

    fn inputs(&self) -> Vec<String> {
        ["--boxes", &self.p("scene/label_2"), "--priors", &self.p("scene/priors.json"), "--calib", &self.p("scene/calib")]
            .iter()
            .map(|x| x.to_string())
            .collect()
    }

    fn run(&self, head: &[&str], out: &str) -> String {
        let inputs = self.inputs();
        let mut args: Vec<&str> = head.to_vec();
        args.extend(inputs.iter().map(String::as_str));
        let out = self.p(out);
        args.extend(["--out", &out]);
        ok(&args)
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.root.join(rel)).unwrap()
    }
}

#[test]
fn ground_truth_against_itself_is_all_ones() {
    let sc = Scene::new(6, 1);
    let csv = ok(&["eval", "--pred", &sc.p("scene/label_2"), "--gt", &sc.p("scene/label_2"), "--out", &sc.p("ev"), "--default-score", "1"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("class,metric,iou,easy,moderate,hard"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 3 * 5);
    for r in rows {
        assert!(r.split(',').skip(3).all(|v| v == "1.000000"), "{r}");
    }
    assert_eq!(std::fs::read_to_string(sc.root.join("ev/eval.csv")).unwrap(), csv);
}

#[test]
fn unscored_predictions_need_a_default_score() {
    let sc = Scene::new(2, 1);
    let out = mono3d(&["eval", "--pred", &sc.p("scene/label_2"), "--gt", &sc.p("scene/label_2"), "--out", &sc.p("ev")]);
    let errs = errors(&out);
    assert_eq!(errs.len(), 2);
    assert!(errs[0].message.contains("expected 16 fields"), "{errs:?}");
}

#[test]
fn missing_prediction_frames_are_listed() {
    let sc = Scene::new(5, 2);
    let pred = sc.root.join("scene/detections/label_2");
    for id in ["000001", "000003"] {
        std::fs::remove_file(pred.join(format!("{id}.txt"))).unwrap();
    }
    let out = mono3d(&["eval", "--pred", &s(&pred), "--gt", &sc.p("scene/label_2"), "--out", &sc.p("ev")]);
    let errs = errors(&out);
    let sources: Vec<&str> = errs.iter().map(|e| e.source.as_str()).collect();
    assert_eq!(sources, ["000001", "000003"]);
    assert!(errs.iter().all(|e| e.message.contains("missing prediction file")));
    assert!(!sc.root.join("ev/eval.csv").exists());
}

#[test]
fn cli_matches_library_evaluation() {
    let sc = Scene::new(8, 3);
    let csv = ok(&["eval", "--pred", &sc.p("scene/detections/label_2"), "--gt", &sc.p("scene/label_2"), "--out", &sc.p("ev"), "--seed", "3"]);

    // regenerate the same detections in memory
    let mut cfg = Config { seed: 3, ..Config::default() };
    cfg.synth.scene.seed = 3;
    let k = cfg.synth.scene.camera().unwrap();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for i in 0..8 {
        let frame = generate_frame(&cfg.synth.scene, i).unwrap();
        let dets = perturb_detections(&frame, &cfg.synth.noise, 3 + i as u64).unwrap();
        let labels: Vec<_> = dets
            .iter()
            .zip(&frame.truncation)
            .map(|(d, &t)| mono3d_core::kitti::box3d_to_label(d, &k, t, 0, Some(d.score)).unwrap())
            .collect();
        // files hold six decimals
        let text = mono3d_core::kitti::emit_label_file(&labels);
        preds.push(mono3d_core::kitti::parse_label_file(&text, LabelKind::Prediction).unwrap());
        gts.push(read_labels(&sc.root.join(format!("scene/label_2/{i:06}.txt")), LabelKind::GroundTruth).unwrap());
    }
    let report = evaluate_dataset(&preds, &gts, &cfg.eval.spec().unwrap()).unwrap();
    assert_eq!(report.table.to_csv(), csv);

    let lib = cmd_eval(&cfg, &sc.root.join("scene/detections/label_2"), &sc.root.join("scene/label_2"), &sc.root.join("ev_lib")).unwrap();
    assert_eq!(lib.report, report);
    assert_eq!(sc.read("ev/eval.json"), sc.read("ev_lib/eval.json"));
}

#[test]
fn pseudolabels_are_deterministic_and_need_priors() {
    let sc = Scene::new(4, 4);
    sc.run(&["pseudolabel"], "pl_a");
    sc.run(&["pseudolabel", "--jobs", "2"], "pl_b");
    for i in 0..4 {
        assert_eq!(sc.read(&format!("pl_a/label_2/{i:06}.txt")), sc.read(&format!("pl_b/label_2/{i:06}.txt")));
    }
    std::fs::write(sc.root.join("few.json"), r#"{"Car": [3.88, 1.63, 1.53]}"#).unwrap();
    let out = mono3d(&[
        "pseudolabel", "--boxes", &sc.p("scene/label_2"), "--priors", &sc.p("few.json"),
        "--calib", &sc.p("scene/calib"), "--out", &sc.p("pl_c"),
    ]);
    let errs = errors(&out);
    assert!(errs.iter().any(|e| e.message.contains("Pedestrian") || e.message.contains("Cyclist")), "{errs:?}");
}

#[test]
fn default_intrinsics_replace_missing_calibration() {
    let sc = Scene::new(2, 5);
    ok(&[
        "pseudolabel", "--boxes", &sc.p("scene/label_2"), "--priors", &sc.p("scene/priors.json"),
        "--image-size", "1242", "375", "--yaw-source", "zero", "--out", &sc.p("pl"),
    ]);
    let labels = read_labels(&sc.root.join("pl/label_2/000000.txt"), LabelKind::Prediction).unwrap();
    assert!(labels.iter().all(|l| l.rotation_y == 0.0));
    let out = mono3d(&["pseudolabel", "--boxes", &sc.p("scene/label_2"), "--priors", &sc.p("scene/priors.json"), "--out", &sc.p("pl2")]);
    assert!(errors(&out)[0].message.contains("--calib or --image-size"));
}

#[test]
fn zero_iteration_geogl_is_the_pseudolabel() {
    let sc = Scene::new(4, 6);
    sc.run(&["pseudolabel"], "pl");
    sc.run(&["fit", "--mode", "geogl", "--max-iters", "0"], "fit0");
    for i in 0..4 {
        assert_eq!(sc.read(&format!("pl/label_2/{i:06}.txt")), sc.read(&format!("fit0/label_2/{i:06}.txt")));
    }
}

#[test]
fn fitted_labels_land_on_the_truth() {
    let sc = Scene::new(5, 7);
    for mode in ["minproj", "geogl"] {
        let out = format!("fit_{mode}");
        sc.run(&["fit", "--mode", mode], &out);
        let log = String::from_utf8(sc.read(&format!("{out}/fit_report.jsonl"))).unwrap();
        assert!(log.lines().count() > 0);
        for i in 0..5 {
            let gt = read_labels(&sc.root.join(format!("scene/label_2/{i:06}.txt")), LabelKind::GroundTruth).unwrap();
            let fit = read_labels(&sc.root.join(format!("{out}/label_2/{i:06}.txt")), LabelKind::Prediction).unwrap();
            for (g, f) in gt.iter().zip(&fit) {
                let d: f64 = g.location.iter().zip(&f.location).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(d < 0.05 * g.location[2], "{mode}: {g:?} vs {f:?}");
            }
        }
    }
}

#[test]
fn unknown_fit_mode_is_a_usage_error() {
    let out = mono3d(&["fit", "--mode", "bundle", "--boxes", "a", "--priors", "b", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("minproj"));
}

#[test]
fn outputs_never_overwrite_inputs() {
    let sc = Scene::new(2, 8);
    let out = mono3d(&["eval", "--pred", &sc.p("scene/label_2"), "--gt", &sc.p("scene/label_2"), "--out", &sc.p("scene/label_2"), "--default-score", "1"]);
    assert!(errors(&out)[0].message.contains("would overwrite input"));
    let inputs = sc.inputs();
    let mut args = vec!["pseudolabel"];
    args.extend(inputs.iter().map(String::as_str));
    let scene = sc.p("scene");
    args.extend(["--out", &scene]);
    assert!(errors(&mono3d(&args))[0].message.contains("would overwrite input"));
}

#[test]
fn synth_is_seed_deterministic_and_manifested() {
    let a = Scene::new(3, 9);
    let b = Scene::new(3, 9);
    let c = Scene::new(3, 10);
    let ma = RunManifest::load(&a.root.join("scene/manifest.json")).unwrap();
    let mb = RunManifest::load(&b.root.join("scene/manifest.json")).unwrap();
    let mc = RunManifest::load(&c.root.join("scene/manifest.json")).unwrap();
    assert_eq!(ma.output_digest, mb.output_digest);
    assert_ne!(ma.output_digest, mc.output_digest);
    assert_eq!(ma.command, "synth");
    assert_eq!(ma.seed, 9);
    assert_eq!(ma.config.synth.scene.seed, 9);
    assert_eq!(ma.outputs.len(), 1 + 3 * 3);
    assert_eq!(
        mono3d_cli::manifest::digest_files(&a.root.join("scene"), &ma.outputs).unwrap(),
        ma.output_digest
    );
}

#[test]
fn every_command_writes_a_manifest() {
    let sc = Scene::new(2, 11);
    sc.run(&["pseudolabel"], "pl");
    sc.run(&["fit", "--mode", "minproj"], "fit");
    ok(&["eval", "--pred", &sc.p("fit/label_2"), "--gt", &sc.p("scene/label_2"), "--out", &sc.p("ev")]);
    for (dir, command) in [("scene", "synth"), ("pl", "pseudolabel"), ("fit", "fit-minproj"), ("ev", "eval")] {
        let m = RunManifest::load(&sc.root.join(dir).join("manifest.json")).unwrap();
        assert_eq!(m.command, command);
        assert_eq!(m.version, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn manifest_config_replays_the_run() {
    let sc = Scene::new(3, 12);
    sc.run(&["fit", "--mode", "geogl", "--max-iters", "3"], "fit");
    let m = RunManifest::load(&sc.root.join("fit/manifest.json")).unwrap();
    let cfg_path = sc.root.join("replay.toml");
    std::fs::write(&cfg_path, m.config.to_toml().unwrap()).unwrap();
    sc.run(&["fit", "--mode", "geogl", "--config", &s(&cfg_path)], "replay");
    let r = RunManifest::load(&sc.root.join("replay/manifest.json")).unwrap();
    assert_eq!(r.output_digest, m.output_digest);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 4\njobs = 2\n[eval]\nap_points = 11\niou_thresholds = [0.5]\n").unwrap();
    let dumped = Config::from_toml(&ok(&["--config", &s(&cfg), "--dump-config"])).unwrap();
    assert_eq!((dumped.seed, dumped.jobs, dumped.eval.ap_points), (4, 2, 11));
    assert_eq!(dumped.eval.iou_thresholds, [0.5]);
    let dumped = Config::from_toml(&ok(&["--config", &s(&cfg), "--dump-config", "--seed", "5", "--ap-points", "40", "--iou", "0.1,0.7"])).unwrap();
    assert_eq!((dumped.seed, dumped.eval.ap_points), (5, 40));
    assert_eq!(dumped.eval.iou_thresholds, [0.1, 0.7]);
    assert_eq!(Config::from_toml(&ok(&["--dump-config"])).unwrap(), Config::default());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[fit]\nstep = -1.0\n").unwrap();
    assert!(!errors(&mono3d(&["--config", &s(&cfg), "--dump-config"])).is_empty());
    std::fs::write(&cfg, "colour = 1\n").unwrap();
    assert!(errors(&mono3d(&["--config", &s(&cfg), "--dump-config"]))[0].message.contains("colour"));
}

#[test]
fn gradcheck_reports_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.json");
    let stdout = ok(&["gradcheck", "--report", &s(&report), "--points", "50", "--seed", "2"]);
    assert!(stdout.starts_with("gradcheck: 14 checks"));
    let r: mono3d_core::gradcheck::GradCheckReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(r.max_deviation < 1e-4);
    assert_eq!(r.seed, 2);
    assert!(dir.path().join("grad.json.manifest.json").is_file());
}
