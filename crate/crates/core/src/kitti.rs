//! KITTI object labels and calibration files, convention conversions, and
//! the per-class, per-difficulty evaluation driver.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box3d_to_box2d, normalize_angle, Box2D, Box3D, BoxSize, CameraIntrinsics, Point3D};
use crate::metrics::{
    evaluate, localization_error_curve, ApInterpolation, Difficulty, DistanceBin, EvalBox, EvalConfig, EvalFrame,
    EvalRow, EvalTable, IouKind, PRCurve,
};

/// Whether a label file carries detection scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// 15 fields per line.
    GroundTruth,
    /// 16 fields per line, the last being the score.
    Prediction,
}

/// One line of a KITTI `label_2` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub class_name: String,
    pub truncated: f64,
    /// 0 fully visible … 3 unknown; `DontCare` rows use −1.
    pub occluded: i32,
    /// Observation angle.
    pub alpha: f64,
    /// `(left, top, right, bottom)` in pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom-center of the box in the camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

pub const DONT_CARE: &str = "DontCare";

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }

    pub fn box2d(&self) -> Box2D {
        let [l, t, r, b] = self.bbox;
        Box2D::from_edges(l, t, r, b)
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

fn parse_f64(tok: &str, line: usize, field: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("{field}: `{tok}` is not a number") })
}

fn parse_label_line(text: &str, line: usize, kind: LabelKind) -> Result<KittiLabel> {
    let tok: Vec<&str> = text.split_whitespace().collect();
    let expected = match kind {
        LabelKind::GroundTruth => 15,
        LabelKind::Prediction => 16,
    };
    if tok.len() != expected {
        return Err(Error::Parse { line, message: format!("expected {expected} fields, found {}", tok.len()) });
    }
    let f = |i: usize, name: &str| parse_f64(tok[i], line, name);
    let occluded = tok[2]
        .parse::<f64>()
        .ok()
        .filter(|o| o.fract() == 0.0)
        .map(|o| o as i32)
        .ok_or_else(|| Error::Parse { line, message: format!("occluded: `{}` is not an integer", tok[2]) })?;
    let label = KittiLabel {
        class_name: tok[0].to_string(),
        truncated: f(1, "truncated")?,
        occluded,
        alpha: f(3, "alpha")?,
        bbox: [f(4, "left")?, f(5, "top")?, f(6, "right")?, f(7, "bottom")?],
        dimensions: [f(8, "height")?, f(9, "width")?, f(10, "length")?],
        location: [f(11, "x")?, f(12, "y")?, f(13, "z")?],
        rotation_y: f(14, "rotation_y")?,
        score: match kind {
            LabelKind::GroundTruth => None,
            LabelKind::Prediction => Some(f(15, "score")?),
        },
    };
    if label.bbox[2] < label.bbox[0] || label.bbox[3] < label.bbox[1] {
        return Err(Error::Parse { line, message: "bbox right/bottom precede left/top".into() });
    }
    Ok(label)
}

/// Parses a label file; blank lines are skipped, line numbers are 1-based.
pub fn parse_label_file(text: &str, kind: LabelKind) -> Result<Vec<KittiLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, i + 1, kind))
        .collect()
}

/// One label per line with six decimals; the occlusion level is an integer.
pub fn emit_label_file(labels: &[KittiLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        write!(out, "{} {:.6} {} {:.6}", l.class_name, l.truncated, l.occluded, l.alpha).unwrap();
        for v in l.bbox.iter().chain(&l.dimensions).chain(&l.location) {
            write!(out, " {v:.6}").unwrap();
        }
        write!(out, " {:.6}", l.rotation_y).unwrap();
        if let Some(s) = l.score {
            write!(out, " {s:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Calibration file: ordered `key: values` rows; only `P2` is interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiCalib {
    pub entries: Vec<(String, Vec<f64>)>,
}

impl KittiCalib {
    /// Calibration holding only `P2 = [K | 0]`.
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        let p2 = vec![k.fu, 0.0, k.pu, 0.0, 0.0, k.fv, k.pv, 0.0, 0.0, 0.0, 1.0, 0.0];
        KittiCalib { entries: vec![("P2".into(), p2)] }
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    pub fn p2(&self) -> Result<&[f64]> {
        match self.get("P2") {
            Some(p) if p.len() == 12 => Ok(p),
            Some(p) => Err(Error::Parse { line: 0, message: format!("P2 needs 12 values, found {}", p.len()) }),
            None => Err(Error::MissingKey("P2".into())),
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let p = self.p2()?;
        CameraIntrinsics::new(p[0], p[5], p[2], p[6])
    }
}

pub fn parse_calib_file(text: &str) -> Result<KittiCalib> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (key, rest) = raw
            .split_once(':')
            .ok_or_else(|| Error::Parse { line, message: "expected `key: values`".into() })?;
        let values = rest
            .split_whitespace()
            .map(|t| parse_f64(t, line, key.trim()))
            .collect::<Result<Vec<_>>>()?;
        entries.push((key.trim().to_string(), values));
    }
    let calib = KittiCalib { entries };
    calib.intrinsics()?;
    Ok(calib)
}

/// C-style `%.12e`: mantissa with twelve decimals, signed two-digit exponent.
fn c_exp(x: f64) -> String {
    let s = format!("{x:.12e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

pub fn emit_calib_file(calib: &KittiCalib) -> String {
    let mut out = String::new();
    for (key, values) in &calib.entries {
        out.push_str(key);
        out.push(':');
        for v in values {
            out.push(' ');
            out.push_str(&c_exp(*v));
        }
        out.push('\n');
    }
    out
}

/// `α = normalize(θ − arctan(x/z))` for a box at `location`.
pub fn alpha_from_yaw(yaw: f64, location: Point3D) -> f64 {
    normalize_angle(yaw - location.x.atan2(location.z))
}

/// Yaw from a KITTI observation angle and the horizontal image position of
/// the object: `θ = normalize(α + arctan((u − p_u)/f_u))`.
pub fn yaw_from_alpha(alpha: f64, u: f64, k: &CameraIntrinsics) -> f64 {
    normalize_angle(alpha + ((u - k.pu) / k.fu).atan())
}

/// Converts a label to a center-based box. The score defaults to 1.
pub fn label_to_box3d(l: &KittiLabel) -> Box3D {
    let [h, w, len] = l.dimensions;
    let [x, y, z] = l.location;
    Box3D::new(Point3D::new(x, y - 0.5 * h, z), BoxSize::new(len, w, h), l.rotation_y, l.class_name.clone())
        .with_score(l.score.unwrap_or(1.0))
}

/// Converts a box to a label, deriving `bbox` by projection and `alpha`
/// from the yaw. `score` is written for prediction files only.
pub fn box3d_to_label(
    b: &Box3D,
    k: &CameraIntrinsics,
    truncated: f64,
    occluded: i32,
    score: Option<f64>,
) -> Result<KittiLabel> {
    let bb = box3d_to_box2d(b, k)?;
    Ok(KittiLabel {
        class_name: b.class_name.clone(),
        truncated,
        occluded,
        alpha: alpha_from_yaw(b.yaw, b.center),
        bbox: bb.edges(),
        dimensions: [b.size.h, b.size.w, b.size.l],
        location: [b.center.x, b.center.y + 0.5 * b.size.h, b.center.z],
        rotation_y: b.yaw,
        score,
    })
}

pub fn read_labels(path: &Path, kind: LabelKind) -> Result<Vec<KittiLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_file(&text, kind).map_err(|e| Error::io(path, e))
}

pub fn read_calib(path: &Path) -> Result<KittiCalib> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calib_file(&text).map_err(|e| Error::io(path, e))
}

/// Frame ids (file stems) of the `.txt` files in a directory, sorted.
pub fn list_frames(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Classes whose ground truth is ignored rather than counted as a miss when
/// evaluating `class`.
pub fn neighbor_classes(class: &str) -> &'static [&'static str] {
    match class {
        "Car" => &["Van"],
        "Pedestrian" => &["Person_sitting"],
        _ => &[],
    }
}

fn overlap_fraction(det: &[f64; 4], region: &[f64; 4]) -> f64 {
    let iw = (det[2].min(region[2]) - det[0].max(region[0])).max(0.0);
    let ih = (det[3].min(region[3]) - det[1].max(region[1])).max(0.0);
    let area = (det[2] - det[0]) * (det[3] - det[1]);
    if area > 0.0 {
        iw * ih / area
    } else {
        0.0
    }
}

/// Builds one evaluation frame for `class` at one difficulty.
///
/// Ground truth of the class outside the difficulty, and of neighbor
/// classes, is ignored. Detections shorter than the minimum height or lying
/// mostly inside a `DontCare` region are dropped unless they match.
pub fn eval_frame(preds: &[KittiLabel], gts: &[KittiLabel], class: &str, difficulty: &Difficulty) -> EvalFrame {
    let neighbors = neighbor_classes(class);
    let ground_truth = gts
        .iter()
        .filter(|g| g.class_name == class || neighbors.contains(&g.class_name.as_str()))
        .map(|g| EvalBox {
            box3d: label_to_box3d(g),
            ignore: g.class_name != class || !difficulty.admits(g.height(), g.occluded, g.truncated),
        })
        .collect();
    let dont_care: Vec<&KittiLabel> = gts.iter().filter(|g| g.is_dont_care()).collect();
    let detections = preds
        .iter()
        .filter(|d| d.class_name == class)
        .map(|d| EvalBox {
            box3d: label_to_box3d(d),
            ignore: d.height() < difficulty.min_height
                || dont_care.iter().any(|r| overlap_fraction(&d.bbox, &r.bbox) > 0.5),
        })
        .collect();
    EvalFrame { detections, ground_truth }
}

/// Which metrics an evaluation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub classes: Vec<String>,
    pub iou_thresholds: Vec<f64>,
    pub interpolation: ApInterpolation,
    pub difficulties: Vec<Difficulty>,
    pub distance_bins: Vec<f64>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        let base = EvalConfig::default();
        EvalSpec {
            classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            iou_thresholds: vec![0.1, 0.2, 0.3, 0.5, 0.7],
            interpolation: base.interpolation,
            difficulties: base.difficulties,
            distance_bins: base.distance_bins,
        }
    }
}

impl EvalSpec {
    pub fn config(&self, iou_threshold: f64, kind: IouKind) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            iou_threshold,
            kind,
            interpolation: self.interpolation,
            difficulties: self.difficulties.clone(),
            distance_bins: self.distance_bins.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// PR curve of one table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub class: String,
    pub metric: String,
    pub iou: f64,
    pub difficulty: String,
    pub curve: PRCurve,
}

/// Localization error of one class, over all non-ignored true positives at
/// the loosest threshold of the first difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEntry {
    pub class: String,
    pub difficulty: String,
    pub iou: f64,
    pub bins: Vec<DistanceBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub table: EvalTable,
    pub curves: Vec<CurveEntry>,
    pub localization: Vec<LocalizationEntry>,
}

/// Evaluates paired prediction / ground-truth frames.
///
/// For every class, threshold and difficulty this reports AP with 3D and
/// BEV matching and AOS over the 3D matching.
pub fn evaluate_dataset(preds: &[Vec<KittiLabel>], gts: &[Vec<KittiLabel>], spec: &EvalSpec) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidConfig(format!(
            "{} prediction frames for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let mut table = EvalTable { difficulties: spec.difficulties.iter().map(|d| d.name.clone()).collect(), rows: vec![] };
    let mut curves = Vec::new();
    let mut localization = Vec::new();
    for class in &spec.classes {
        let frames_at: Vec<Vec<EvalFrame>> = spec
            .difficulties
            .iter()
            .map(|d| preds.iter().zip(gts).map(|(p, g)| eval_frame(p, g, class, d)).collect())
            .collect();
        for kind in [IouKind::ThreeD, IouKind::Bev] {
            for &iou in &spec.iou_thresholds {
                let cfg = spec.config(iou, kind)?;
                let results: Vec<_> = frames_at.iter().map(|frames| evaluate(frames, &cfg)).collect();
                table.rows.push(EvalRow {
                    class: class.clone(),
                    metric: kind.label().into(),
                    iou,
                    values: results.iter().map(|r| r.curve.ap).collect(),
                });
                if kind == IouKind::ThreeD {
                    table.rows.push(EvalRow {
                        class: class.clone(),
                        metric: "AOS".into(),
                        iou,
                        values: results.iter().map(|r| r.aos).collect(),
                    });
                }
                for (d, r) in spec.difficulties.iter().zip(results) {
                    curves.push(CurveEntry {
                        class: class.clone(),
                        metric: kind.label().into(),
                        iou,
                        difficulty: d.name.clone(),
                        curve: r.curve,
                    });
                }
            }
        }
        if let (Some(d), Some(&iou)) =
            (spec.difficulties.first(), spec.iou_thresholds.iter().min_by(|a, b| a.total_cmp(b)))
        {
            let cfg = spec.config(iou, IouKind::ThreeD)?;
            localization.push(LocalizationEntry {
                class: class.clone(),
                difficulty: d.name.clone(),
                iou,
                bins: localization_error_curve(&frames_at[0], &cfg),
            });
        }
    }
    // AP3D / AOS rows are pushed interleaved; keep the table grouped by metric
    table.rows.sort_by(|a, b| {
        let rank = |m: &str| match m {
            "AP3D" => 0,
            "APBEV" => 1,
            _ => 2,
        };
        let class_rank = |c: &str| spec.classes.iter().position(|x| x == c);
        class_rank(&a.class)
            .cmp(&class_rank(&b.class))
            .then(rank(&a.metric).cmp(&rank(&b.metric)))
            .then(a.iou.total_cmp(&b.iou))
    });
    Ok(EvalReport { table, curves, localization })
}
