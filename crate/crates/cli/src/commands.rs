//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mono3d_core::kitti::{
    alpha_from_yaw, box3d_to_label, emit_label_file, evaluate_dataset, list_frames, parse_label_file, read_calib,
    EvalReport, KittiLabel, LabelKind,
};
use mono3d_core::synth::{export_kitti, generate_frame, perturb_detections};
use mono3d_core::weak::{default_intrinsics, pseudo_label};
use mono3d_core::{
    fit_geogl, fit_min_proj_err, gradcheck, Box3D, CameraIntrinsics, FitReport, Orientation, PriorTable,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, YawSource};
use crate::failure::Failures;
use crate::manifest::{write_atomic, RunManifest, MANIFEST_FILE};

pub const LABEL_DIR: &str = "label_2";
pub const CALIB_DIR: &str = "calib";
pub const DETECTION_DIR: &str = "detections";

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

/// Runs `f` on every frame on the configured pool. Results keep frame order;
/// every failing frame is reported.
fn per_frame<T, F>(cfg: &Config, ids: &[String], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&str) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = pool(cfg.jobs)?.install(|| ids.par_iter().map(|id| f(id)).collect());
    let mut failures = Failures::default();
    let mut out = Vec::with_capacity(ids.len());
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(v) => out.push(v),
            Err(e) => failures.push(id.clone(), format!("{e:#}")),
        }
    }
    failures.into_result()?;
    Ok(out)
}

/// Creates `out` and refuses to run when any directory written under it is
/// one of the inputs.
fn prepare_out_dir(out: &Path, written: &[&str], inputs: &[&Path]) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let inputs: Vec<PathBuf> = inputs
        .iter()
        .map(|p| p.canonicalize().with_context(|| format!("input {} not found", p.display())))
        .collect::<Result<_>>()?;
    let out = out.canonicalize()?;
    let targets = std::iter::once(out.clone()).chain(written.iter().map(|w| out.join(w)));
    for t in targets {
        if let Some(p) = inputs.iter().find(|p| **p == t) {
            bail!("output directory {} would overwrite input {}", t.display(), p.display());
        }
    }
    Ok(())
}

fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.txt"))
}

/// Ground-truth style labels, or prediction style when every line has a score.
fn read_any_labels(path: &Path) -> Result<Vec<KittiLabel>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match parse_label_file(&text, LabelKind::GroundTruth) {
        Ok(l) => Ok(l),
        Err(e) => parse_label_file(&text, LabelKind::Prediction).map_err(|_| e).context(path.display().to_string()),
    }
}

fn read_predictions(path: &Path, default_score: Option<f64>) -> Result<Vec<KittiLabel>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match (parse_label_file(&text, LabelKind::Prediction), default_score) {
        (Ok(l), _) => Ok(l),
        (Err(e), None) => Err(e).context(path.display().to_string()),
        (Err(e), Some(s)) => {
            let mut labels = parse_label_file(&text, LabelKind::GroundTruth).map_err(|_| e).context(path.display().to_string())?;
            for l in &mut labels {
                l.score = Some(s);
            }
            Ok(labels)
        }
    }
}

fn write_labels(dir: &Path, id: &str, labels: &[KittiLabel]) -> Result<PathBuf> {
    let p = label_path(dir, id);
    std::fs::write(&p, emit_label_file(labels)).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}

fn relative(root: &Path, paths: impl IntoIterator<Item = PathBuf>) -> Vec<PathBuf> {
    paths.into_iter().map(|p| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or(p)).collect()
}

/// Per-frame camera: the frame's calib file, else the default rule for the
/// configured image size.
#[derive(Debug, Clone)]
pub enum CameraSource {
    CalibDir(PathBuf),
    ImageSize([f64; 2]),
}

impl CameraSource {
    pub fn resolve(calib: Option<PathBuf>, cfg: &Config) -> Result<Self> {
        match (calib, cfg.pseudolabel.image_size) {
            (Some(dir), _) => Ok(CameraSource::CalibDir(dir)),
            (None, Some(size)) => Ok(CameraSource::ImageSize(size)),
            (None, None) => bail!("either --calib or --image-size is required"),
        }
    }

    fn camera(&self, id: &str) -> Result<CameraIntrinsics> {
        match self {
            CameraSource::CalibDir(dir) => Ok(read_calib(&label_path(dir, id))?.intrinsics()?),
            CameraSource::ImageSize([w, h]) => Ok(default_intrinsics(*w, *h)?),
        }
    }

    fn input(&self) -> Option<&Path> {
        match self {
            CameraSource::CalibDir(d) => Some(d),
            CameraSource::ImageSize(_) => None,
        }
    }
}

/// A weak label keeps the observed 2D box; everything else follows the box.
fn weak_label(b: &Box3D, source: &KittiLabel) -> KittiLabel {
    KittiLabel {
        class_name: b.class_name.clone(),
        truncated: source.truncated,
        occluded: source.occluded,
        alpha: alpha_from_yaw(b.yaw, b.center),
        bbox: source.bbox,
        dimensions: [b.size.h, b.size.w, b.size.l],
        location: [b.center.x, b.center.y + 0.5 * b.size.h, b.center.z],
        rotation_y: b.yaw,
        score: Some(b.score),
    }
}

fn label_yaw(l: &KittiLabel, source: YawSource, k: &CameraIntrinsics) -> f64 {
    match source {
        YawSource::Alpha => mono3d_core::kitti::yaw_from_alpha(l.alpha, l.box2d().u, k),
        YawSource::Zero => 0.0,
    }
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub manifest: RunManifest,
}

pub fn cmd_eval(cfg: &Config, pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<EvalOutcome> {
    cfg.validate()?;
    let spec = cfg.eval.spec()?;
    prepare_out_dir(out, &[], &[pred_dir, gt_dir])?;
    let ids = list_frames(gt_dir)?;
    let frames = per_frame(cfg, &ids, |id| {
        let pred = label_path(pred_dir, id);
        if !pred.is_file() {
            bail!("missing prediction file {}", pred.display());
        }
        let gt = mono3d_core::kitti::read_labels(&label_path(gt_dir, id), LabelKind::GroundTruth)?;
        Ok((read_predictions(&pred, cfg.eval.default_score)?, gt))
    })?;
    let (preds, gts): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    let report = evaluate_dataset(&preds, &gts, &spec)?;
    write_atomic(&out.join("eval.csv"), report.table.to_csv().as_bytes())?;
    write_atomic(&out.join("eval.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    let manifest = RunManifest::new("eval", cfg, vec![pred_dir.into(), gt_dir.into()]).finish(
        out,
        vec!["eval.csv".into(), "eval.json".into()],
        &out.join(MANIFEST_FILE),
    )?;
    Ok(EvalOutcome { report, manifest })
}

/// Input of the label-producing commands.
#[derive(Debug, Clone)]
pub struct LabelInputs {
    /// KITTI label directory whose `bbox`, class and `alpha` columns are used.
    pub boxes: PathBuf,
    pub priors: PathBuf,
    pub camera: CameraSource,
}

impl LabelInputs {
    fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.boxes.as_path(), self.priors.as_path()];
        v.extend(self.camera.input());
        v
    }
}

struct Relabeled<T> {
    per_frame: Vec<Vec<T>>,
    /// Written files, relative to the output directory.
    written: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
}

/// Applies `f` to every non-DontCare label of every frame and writes the
/// resulting labels under `out/label_2`.
fn relabel<T, F>(cfg: &Config, inputs: &LabelInputs, out: &Path, f: F) -> Result<Relabeled<T>>
where
    T: Send,
    F: Fn(&KittiLabel, &PriorTable, &CameraIntrinsics) -> Result<(KittiLabel, T)> + Sync,
{
    cfg.validate()?;
    prepare_out_dir(out, &[LABEL_DIR], &inputs.paths())?;
    let priors = PriorTable::load(&inputs.priors)?;
    let label_dir = out.join(LABEL_DIR);
    std::fs::create_dir_all(&label_dir)?;
    let ids = list_frames(&inputs.boxes)?;
    let frames = per_frame(cfg, &ids, |id| {
        let k = inputs.camera.camera(id)?;
        let mut labels = Vec::new();
        let mut extra = Vec::new();
        for (i, l) in read_any_labels(&label_path(&inputs.boxes, id))?.iter().enumerate() {
            if l.is_dont_care() {
                continue;
            }
            let (label, x) = f(l, &priors, &k).with_context(|| format!("object {i} ({})", l.class_name))?;
            labels.push(label);
            extra.push(x);
        }
        let p = write_labels(&label_dir, id, &labels)?;
        Ok((p, extra))
    })?;
    let (written, per_frame): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    Ok(Relabeled {
        per_frame,
        written: relative(out, written),
        inputs: inputs.paths().into_iter().map(Path::to_path_buf).collect(),
    })
}

pub fn cmd_pseudolabel(cfg: &Config, inputs: &LabelInputs, out: &Path) -> Result<RunManifest> {
    let yaw_source = cfg.pseudolabel.yaw_source;
    let r = relabel(cfg, inputs, out, |l, priors, k| {
        let prior = priors.get(&l.class_name)?;
        let b = pseudo_label(&l.box2d(), label_yaw(l, yaw_source, k), &prior, k)?.with_score(1.0);
        Ok((weak_label(&b, l), ()))
    })?;
    RunManifest::new("pseudolabel", cfg, r.inputs).finish(out, r.written, &out.join(MANIFEST_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Minproj,
    Geogl,
}

#[derive(Debug, Clone, Serialize)]
struct FitLogLine<'a> {
    frame: &'a str,
    object: usize,
    class: &'a str,
    iterations: usize,
    objective: f64,
    converged: bool,
}

pub fn cmd_fit(cfg: &Config, mode: FitMode, inputs: &LabelInputs, out: &Path) -> Result<RunManifest> {
    let yaw_source = cfg.pseudolabel.yaw_source;
    let name = match mode {
        FitMode::Minproj => "fit-minproj",
        FitMode::Geogl => "fit-geogl",
    };
    let mut r = relabel(cfg, inputs, out, |l, priors, k| {
        let prior = priors.get(&l.class_name)?;
        let b2 = l.box2d();
        let yaw = label_yaw(l, yaw_source, k);
        let report: FitReport = match mode {
            FitMode::Geogl => fit_geogl(&b2, Orientation::Yaw(yaw), &prior, k, &cfg.fit)?,
            FitMode::Minproj => {
                let init = pseudo_label(&b2, yaw, &prior, k)?.center;
                fit_min_proj_err(&b2, yaw, &prior, k, init, &cfg.fit)?
            }
        };
        let b = report.box3d.clone().with_score(1.0);
        Ok((weak_label(&b, l), report))
    })?;
    let ids = list_frames(&inputs.boxes)?;
    let mut log = String::new();
    for (id, frame) in ids.iter().zip(&r.per_frame) {
        for (i, r) in frame.iter().enumerate() {
            let line = FitLogLine {
                frame: id,
                object: i,
                class: &r.box3d.class_name,
                iterations: r.iterations,
                objective: r.objective,
                converged: r.converged,
            };
            log.push_str(&serde_json::to_string(&line)?);
            log.push('\n');
        }
    }
    write_atomic(&out.join("fit_report.jsonl"), log.as_bytes())?;
    r.written.push("fit_report.jsonl".into());
    RunManifest::new(name, cfg, r.inputs).finish(out, r.written, &out.join(MANIFEST_FILE))
}

pub fn cmd_synth(cfg: &Config, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    prepare_out_dir(out, &[], &[])?;
    let mut scene = cfg.synth.scene.clone();
    scene.seed = cfg.seed;
    let ids: Vec<String> = (0..cfg.synth.frames).map(|i| format!("{i:06}")).collect();
    let frames = per_frame(cfg, &ids, |id| Ok(generate_frame(&scene, id.parse::<usize>()?)?))?;
    export_kitti(&frames, &scene, out)?;
    let mut written: Vec<PathBuf> = vec!["priors.json".into()];
    for id in &ids {
        written.push(Path::new(LABEL_DIR).join(format!("{id}.txt")));
        written.push(Path::new(CALIB_DIR).join(format!("{id}.txt")));
    }
    if cfg.synth.detections {
        let k = scene.camera()?;
        let dir = out.join(DETECTION_DIR).join(LABEL_DIR);
        std::fs::create_dir_all(&dir)?;
        let files = per_frame(cfg, &ids, |id| {
            let i: usize = id.parse()?;
            let frame = &frames[i];
            let dets = perturb_detections(frame, &cfg.synth.noise, cfg.seed.wrapping_add(i as u64))?;
            let labels = dets
                .iter()
                .zip(&frame.truncation)
                .map(|(d, &t)| box3d_to_label(d, &k, t, 0, Some(d.score)))
                .collect::<mono3d_core::Result<Vec<_>>>()?;
            write_labels(&dir, id, &labels)
        })?;
        written.extend(relative(out, files));
    }
    RunManifest::new("synth", cfg, Vec::new()).finish(out, written, &out.join(MANIFEST_FILE))
}

pub fn cmd_gradcheck(cfg: &Config, report_path: &Path) -> Result<(gradcheck::GradCheckReport, RunManifest)> {
    cfg.validate()?;
    let g = &cfg.gradcheck;
    let report = gradcheck::run_battery(cfg.seed, g.points, g.step);
    write_atomic(report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    let root = report_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = report_path.file_name().context("report path has no file name")?;
    let manifest_path = root.join(format!("{}.manifest.json", name.to_string_lossy()));
    let manifest = RunManifest::new("gradcheck", cfg, Vec::new()).finish(root, vec![name.into()], &manifest_path)?;
    let mut failures = Failures::default();
    for e in report.entries.iter().filter(|e| e.max_deviation.is_nan() || e.max_deviation >= g.tolerance) {
        failures.push(e.name.clone(), format!("max relative deviation {:e} exceeds {:e}", e.max_deviation, g.tolerance));
    }
    failures.into_result()?;
    Ok((report, manifest))
}
