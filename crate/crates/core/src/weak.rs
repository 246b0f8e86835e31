//! Geometry-guided pseudo labels built from 2D boxes, class size priors and
//! (optionally) video tracks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, box3d_to_box2d, corners_from_pose, view_angle_to_yaw, Box2D, Box3D, BoxSize,
    CameraIntrinsics, LocalCorners, Point3D, ProjectedCenter,
};

/// Average size of a class, standing in for the unknown true size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub class_name: String,
    pub size: BoxSize,
}

impl ClassPrior {
    pub fn new(class_name: impl Into<String>, size: BoxSize) -> Result<Self> {
        size.validate()?;
        Ok(ClassPrior { class_name: class_name.into(), size })
    }

    pub fn height(&self) -> f64 {
        self.size.h
    }
}

/// Class name → prior size.
///
/// Stored on disk as a JSON object mapping each class name to `[l, w, h]`
/// in meters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorTable(pub BTreeMap<String, [f64; 3]>);

impl PriorTable {
    /// Average KITTI object sizes for the three evaluated classes.
    pub fn kitti() -> Self {
        let mut m = BTreeMap::new();
        m.insert("Car".to_string(), [3.88, 1.63, 1.53]);
        m.insert("Pedestrian".to_string(), [0.84, 0.66, 1.76]);
        m.insert("Cyclist".to_string(), [1.76, 0.60, 1.74]);
        PriorTable(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: PriorTable = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("prior table: {e}"),
        })?;
        for (name, s) in &table.0 {
            BoxSize::new(s[0], s[1], s[2]).validate().map_err(|_| {
                Error::InvalidConfig(format!("prior for `{name}` must be positive"))
            })?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PriorTable::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prior table serializes")
    }

    pub fn get(&self, class_name: &str) -> Result<ClassPrior> {
        self.0
            .get(class_name)
            .map(|s| ClassPrior {
                class_name: class_name.to_string(),
                size: BoxSize::new(s[0], s[1], s[2]),
            })
            .ok_or_else(|| Error::MissingPrior(class_name.to_string()))
    }
}

/// Rough instance depth from the 2D box height: `f_v · h̄ / h_2D`.
pub fn pseudo_depth(b: &Box2D, prior: &ClassPrior, k: &CameraIntrinsics) -> Result<f64> {
    if !(b.h > 0.0) {
        return Err(Error::NonPositiveHeight(b.h));
    }
    Ok(k.fv * prior.height() / b.h)
}

/// The 2D box center, used as the projected 3D center.
pub fn pseudo_center(b: &Box2D) -> ProjectedCenter {
    b.center()
}

/// Residual between a ground-truth 2D box and the projection of an estimate,
/// `gt − projected`, as `(Δw, Δh, Δu_b, Δv_b)`.
pub fn box2d_residual(gt: &Box2D, projected: &Box2D) -> Box2D {
    Box2D::new(gt.w - projected.w, gt.h - projected.h, gt.u - projected.u, gt.v - projected.v)
}

/// First-order center correction from a 2D residual at the given estimate
/// depth and projected height. `Δw` is not used.
pub fn delta_from_residual(
    residual: &Box2D,
    depth: f64,
    projected_h: f64,
    prior_h: f64,
    k: &CameraIntrinsics,
) -> Result<Point3D> {
    if !(projected_h > 0.0) {
        return Err(Error::NonPositiveHeight(projected_h));
    }
    Ok(Point3D::new(
        depth / k.fu * residual.u,
        depth / k.fv * residual.v,
        -k.fv * prior_h / (projected_h * projected_h) * residual.h,
    ))
}

/// First-order approximation of the correction that moves `est` toward the
/// location whose projection matches `gt2d`.
pub fn first_order_delta(
    est: &Box3D,
    gt2d: &Box2D,
    prior: &ClassPrior,
    k: &CameraIntrinsics,
) -> Result<Point3D> {
    let projected = box3d_to_box2d(est, k)?;
    let residual = box2d_residual(gt2d, &projected);
    delta_from_residual(&residual, est.center.z, projected.h, prior.height(), k)
}

/// Local corners of the prior-sized box at the yaw implied by a view angle.
pub fn corners_from_teacher(
    phi: f64,
    b: &Box2D,
    prior: &ClassPrior,
    k: &CameraIntrinsics,
) -> Result<LocalCorners> {
    corners_from_pose(prior.size, view_angle_to_yaw(phi, b.u, k))
}

/// Rescales a depth estimated with a prior height and assumed focal length
/// to the true height and focal length: `z̃ · (true_h · true_f_v) / (prior_h · assumed_f_v)`.
pub fn rescale_depth(z: f64, true_h: f64, prior_h: f64, true_f_v: f64, assumed_f_v: f64) -> f64 {
    z * (true_h * true_f_v) / (prior_h * assumed_f_v)
}

/// Intrinsics for an uncalibrated image: `f_u = f_v = 0.8 · width`, principal
/// point at the image center.
pub fn default_intrinsics(image_w: f64, image_h: f64) -> Result<CameraIntrinsics> {
    let f = 0.8 * image_w;
    CameraIntrinsics::new(f, f, 0.5 * image_w, 0.5 * image_h)
}

/// A complete weak 3D label for one 2D box: pseudo center at pseudo depth,
/// prior size, and the given yaw.
pub fn pseudo_label(b: &Box2D, yaw: f64, prior: &ClassPrior, k: &CameraIntrinsics) -> Result<Box3D> {
    let z = pseudo_depth(b, prior, k)?;
    let center = backproject(pseudo_center(b), z, k)?;
    Ok(Box3D::new(center, prior.size, yaw, prior.class_name.clone()))
}

/// How the acceleration vector is reduced to a magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccelNorm {
    #[default]
    Euclidean,
    L1,
}

/// Threshold and clip of the acceleration penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelConfig {
    /// Accelerations at or below this magnitude (m/s²) cost nothing.
    pub alpha_a: f64,
    /// Upper clip of each term.
    pub beta_a: f64,
    #[serde(default)]
    pub norm: AccelNorm,
}

impl Default for AccelConfig {
    fn default() -> Self {
        AccelConfig { alpha_a: 0.3, beta_a: 3.0, norm: AccelNorm::Euclidean }
    }
}

impl AccelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_a >= 0.0 && self.beta_a > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "acceleration config needs alpha_a >= 0 and beta_a > 0 (got {}, {})",
                self.alpha_a, self.beta_a
            )))
        }
    }
}

/// One object followed across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    /// Frame indices in which the object is present.
    pub frames: Vec<usize>,
    /// Timestamps (seconds), strictly increasing.
    pub times: Vec<f64>,
    /// Estimated center per frame (averaged over the object's cells when a
    /// grid is involved).
    pub centers: Vec<Point3D>,
}

/// Value of the acceleration penalty and its gradient per track center.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelLoss {
    pub value: f64,
    pub grad: Vec<Vec<Point3D>>,
}

fn accel_terms(track: &Track, n: usize) -> (Point3D, f64, f64) {
    let c = &track.centers;
    let t = &track.times;
    let d1 = t[n] - t[n + 1];
    let d2 = t[n + 1] - t[n + 2];
    let v0 = (c[n] - c[n + 1]) * (1.0 / d1);
    let v1 = (c[n + 1] - c[n + 2]) * (1.0 / d2);
    ((v0 - v1) * (1.0 / d1), d1, d2)
}

/// Per-triple accelerations of a track.
pub fn track_accelerations(track: &Track) -> Vec<Point3D> {
    let len = track.centers.len().min(track.times.len());
    (0..len.saturating_sub(2)).map(|n| accel_terms(track, n).0).collect()
}

/// Sum over tracks and frame triples of `clip(|a| − α_a, 0, β_a)`.
///
/// The gradient vanishes wherever the clip is flat.
pub fn acceleration_loss(tracks: &[Track], cfg: &AccelConfig) -> Result<AccelLoss> {
    cfg.validate()?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(tracks.len());
    for (ti, track) in tracks.iter().enumerate() {
        if track.times.len() != track.centers.len() {
            return Err(Error::InvalidConfig(format!("track {ti}: times and centers differ in length")));
        }
        if let Some(f) = track.times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonIncreasingTime { track: ti, frame: f + 1 });
        }
        let mut g = vec![Point3D::ZERO; track.centers.len()];
        for n in 0..track.centers.len().saturating_sub(2) {
            let (a, d1, d2) = accel_terms(track, n);
            let mag = match cfg.norm {
                AccelNorm::Euclidean => a.norm(),
                AccelNorm::L1 => a.l1(),
            };
            let excess = mag - cfg.alpha_a;
            value += excess.clamp(0.0, cfg.beta_a);
            if excess > 0.0 && excess < cfg.beta_a {
                let dmag = match cfg.norm {
                    AccelNorm::Euclidean => a * (1.0 / mag),
                    AccelNorm::L1 => a.map(crate::losses::sgn),
                };
                // a = (C_n − C_{n+1})/d1² − (C_{n+1} − C_{n+2})/(d1·d2)
                g[n] += dmag * (1.0 / (d1 * d1));
                g[n + 1] += dmag * (-1.0 / (d1 * d1) - 1.0 / (d1 * d2));
                g[n + 2] += dmag * (1.0 / (d1 * d2));
            }
        }
        grad.push(g);
    }
    Ok(AccelLoss { value, grad })
}

/// Supplies frame-to-frame object correspondences for building tracks.
///
/// The synthetic harness uses exact identities; an optical-flow based
/// matcher can implement the same trait.
pub trait CorrespondenceProvider {
    /// Index in frame `to` of the object at `index` in frame `from`.
    fn correspond(&self, from: usize, to: usize, index: usize) -> Option<usize>;
}

/// Objects keep their index in every frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCorrespondence;

impl CorrespondenceProvider for IdentityCorrespondence {
    fn correspond(&self, _from: usize, _to: usize, index: usize) -> Option<usize> {
        Some(index)
    }
}

/// Chains correspondences from the first frame into tracks of estimated
/// centers. `centers[f][i]` is the center of object `i` in frame `f`.
pub fn build_tracks(
    centers: &[Vec<Point3D>],
    times: &[f64],
    provider: &impl CorrespondenceProvider,
) -> Vec<Track> {
    let Some(first) = centers.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|id| {
            let mut track = Track { id, frames: vec![0], times: vec![times[0]], centers: vec![first[id]] };
            let mut index = id;
            for f in 1..centers.len() {
                match provider.correspond(f - 1, f, index) {
                    Some(i) if i < centers[f].len() => {
                        index = i;
                        track.frames.push(f);
                        track.times.push(times[f]);
                        track.centers.push(centers[f][i]);
                    }
                    _ => break,
                }
            }
            track
        })
        .collect()
}
