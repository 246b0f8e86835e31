//! Deterministic synthetic scenes, tracks and perturbed detections with
//! exact ground truth.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box3d_to_box2d, Box2D, Box3D, BoxSize, CameraIntrinsics, Point3D};
use crate::kitti::{box3d_to_label, emit_calib_file, emit_label_file, KittiCalib, KittiLabel};
use crate::metrics::iou_bev;
use crate::weak::{default_intrinsics, PriorTable, Track};

/// Size distribution of one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Mean `[l, w, h]`, meters.
    pub mean_size: [f64; 3],
    /// Relative standard deviation applied independently to each dimension.
    #[serde(default)]
    pub spread: f64,
}

/// Scene generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    /// Explicit intrinsics; `None` uses the default rule for the image size.
    pub intrinsics: Option<CameraIntrinsics>,
    /// `[width, height]`, pixels.
    pub image_size: [f64; 2],
    pub min_objects: usize,
    pub max_objects: usize,
    /// `[near, far]` object depth, meters.
    pub depth_range: [f64; 2],
    /// Horizontal range of projected centers as fractions of the image width.
    pub u_range: [f64; 2],
    /// Y of the ground plane (box bottoms), meters.
    pub ground_y: f64,
    /// Yaw drawn uniformly from `[lo, hi]`.
    pub yaw_range: [f64; 2],
    pub classes: Vec<ClassSpec>,
    /// Standard deviation of the noise added to each 2D box edge, pixels.
    pub noise_px: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let classes = PriorTable::kitti()
            .0
            .into_iter()
            .map(|(name, mean_size)| ClassSpec { name, mean_size, spread: 0.0 })
            .collect();
        SceneConfig {
            seed: 0,
            intrinsics: Some(CameraIntrinsics { fu: 721.5377, fv: 721.5377, pu: 609.5593, pv: 172.854 }),
            image_size: [1242.0, 375.0],
            min_objects: 1,
            max_objects: 8,
            depth_range: [5.0, 60.0],
            u_range: [0.1, 0.9],
            ground_y: 1.65,
            yaw_range: [-PI, PI],
            classes,
            noise_px: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.depth_range[0] > 0.0 && self.depth_range[1] >= self.depth_range[0]) {
            return bad("depth range must be positive and ordered");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if !(self.image_size[0] > 0.0 && self.image_size[1] > 0.0) {
            return bad("image size must be positive");
        }
        if self.u_range[0] > self.u_range[1] || self.yaw_range[0] > self.yaw_range[1] {
            return bad("ranges must be ordered");
        }
        if !(self.noise_px >= 0.0) {
            return bad("noise must be non-negative");
        }
        if self.classes.is_empty() {
            return bad("at least one class is required");
        }
        for c in &self.classes {
            BoxSize::new(c.mean_size[0], c.mean_size[1], c.mean_size[2]).validate()?;
            if !(c.spread >= 0.0) {
                return bad("size spreads must be non-negative");
            }
        }
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        match self.intrinsics {
            Some(k) => Ok(k),
            None => default_intrinsics(self.image_size[0], self.image_size[1]),
        }
    }

    /// The class means as a prior table.
    pub fn priors(&self) -> PriorTable {
        PriorTable(self.classes.iter().map(|c| (c.name.clone(), c.mean_size)).collect())
    }
}

/// One rendered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub timestamp: f64,
    pub objects: Vec<Box3D>,
    /// Exact projections of `objects`.
    pub boxes2d: Vec<Box2D>,
    /// Edge-noised copies of `boxes2d`, when noise is configured.
    pub noisy2d: Option<Vec<Box2D>>,
    /// Fraction of each 2D box area outside the image.
    pub truncation: Vec<f64>,
}

fn truncation(b: &Box2D, w: f64, h: f64) -> f64 {
    let area = b.w * b.h;
    if !(area > 0.0) {
        return 0.0;
    }
    let iw = (b.right().min(w) - b.left().max(0.0)).max(0.0);
    let ih = (b.bottom().min(h) - b.top().max(0.0)).max(0.0);
    (1.0 - iw * ih / area).clamp(0.0, 1.0)
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// All corners at least this far in front of the camera.
const MIN_CORNER_DEPTH: f64 = 0.5;

fn in_front(b: &Box3D) -> bool {
    b.absolute_corners().iter().all(|c| c.z >= MIN_CORNER_DEPTH)
}

fn render(cfg: &SceneConfig, k: &CameraIntrinsics, objects: Vec<Box3D>, timestamp: f64, rng: &mut ChaCha8Rng) -> Result<SceneFrame> {
    let boxes2d = objects.iter().map(|b| box3d_to_box2d(b, k)).collect::<Result<Vec<_>>>()?;
    let [w, h] = cfg.image_size;
    let truncation = boxes2d.iter().map(|b| truncation(b, w, h)).collect();
    let noisy2d = if cfg.noise_px > 0.0 {
        let n = Normal::new(0.0, cfg.noise_px).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Some(
            boxes2d
                .iter()
                .map(|b| {
                    let [l, t, r, btm] = b.edges();
                    let (l, t) = (l + n.sample(rng), t + n.sample(rng));
                    let (r, btm) = (r + n.sample(rng), btm + n.sample(rng));
                    Box2D::from_edges(l.min(r), t.min(btm), l.max(r), t.max(btm))
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(SceneFrame { timestamp, objects, boxes2d, noisy2d, truncation })
}

fn sample_object(cfg: &SceneConfig, k: &CameraIntrinsics, rng: &mut ChaCha8Rng) -> Result<Box3D> {
    let class = &cfg.classes[rng.random_range(0..cfg.classes.len())];
    let mut dims = class.mean_size;
    if class.spread > 0.0 {
        let n = Normal::new(1.0, class.spread).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for (d, mean) in dims.iter_mut().zip(class.mean_size) {
            *d = mean * n.sample(rng).max(0.2);
        }
    }
    let size = BoxSize::new(dims[0], dims[1], dims[2]);
    let z = uniform(rng, cfg.depth_range);
    let u = uniform(rng, [cfg.u_range[0] * cfg.image_size[0], cfg.u_range[1] * cfg.image_size[0]]);
    let x = (u - k.pu) * z / k.fu;
    let yaw = uniform(rng, cfg.yaw_range);
    Ok(Box3D::new(Point3D::new(x, cfg.ground_y - 0.5 * size.h, z), size, yaw, class.name.clone()))
}

const MAX_PLACEMENT_TRIES: usize = 100;

fn sample_objects(cfg: &SceneConfig, k: &CameraIntrinsics, rng: &mut ChaCha8Rng) -> Result<Vec<Box3D>> {
    let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<Box3D> = Vec::with_capacity(count);
    let mut tries = 0;
    while objects.len() < count {
        tries += 1;
        if tries > MAX_PLACEMENT_TRIES * count.max(1) {
            return Err(Error::InvalidConfig(format!("could not place {count} non-overlapping objects")));
        }
        let b = sample_object(cfg, k, rng)?;
        if in_front(&b) && objects.iter().all(|o| iou_bev(o, &b) == 0.0) {
            objects.push(b);
        }
    }
    Ok(objects)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One static scene. Objects stand on the ground plane, do not overlap in
/// bird's-eye view and lie fully in front of the camera.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneFrame> {
    cfg.validate()?;
    let k = cfg.camera()?;
    let mut rng = rng_for(seed, 0);
    let objects = sample_objects(cfg, &k, &mut rng)?;
    render(cfg, &k, objects, 0.0, &mut rng)
}

/// Frame `index` of a dataset seeded by `cfg.seed`.
pub fn generate_frame(cfg: &SceneConfig, index: usize) -> Result<SceneFrame> {
    cfg.validate()?;
    let k = cfg.camera()?;
    let mut rng = rng_for(cfg.seed, index as u64 + 1);
    let objects = sample_objects(cfg, &k, &mut rng)?;
    render(cfg, &k, objects, 0.0, &mut rng)
}

pub fn generate_dataset(cfg: &SceneConfig, frames: usize) -> Result<Vec<SceneFrame>> {
    (0..frames).map(|i| generate_frame(cfg, i)).collect()
}

/// Largest object speed drawn for tracks, m/s.
const MAX_SPEED: f64 = 10.0;

/// A sequence of frames in which every object moves in the ground plane
/// with per-step accelerations of magnitude strictly below `accel_bound`
/// (exactly zero when the bound is zero), plus one track per object.
///
/// Positions follow `C_{n+2} = 2 C_{n+1} − C_n + a_n dt²`, so the discrete
/// acceleration of consecutive triples is `a_n`.
pub fn generate_track(
    cfg: &SceneConfig,
    seed: u64,
    n_frames: usize,
    dt: f64,
    accel_bound: f64,
) -> Result<(Vec<SceneFrame>, Vec<Track>)> {
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    if !(accel_bound >= 0.0) {
        return Err(Error::InvalidConfig(format!("acceleration bound must be non-negative, got {accel_bound}")));
    }
    let k = cfg.camera()?;
    let mut rng = rng_for(seed, 0);
    let initial = sample_objects(cfg, &k, &mut rng)?;
    let mut paths: Vec<Vec<Box3D>> = Vec::with_capacity(initial.len());
    for obj in &initial {
        let mut attempt = 0;
        let path = loop {
            attempt += 1;
            if attempt > MAX_PLACEMENT_TRIES {
                return Err(Error::InvalidConfig("could not keep a track in front of the camera".into()));
            }
            let heading = rng.random_range(-PI..PI);
            let speed = rng.random_range(0.0..MAX_SPEED);
            let v = Point3D::new(speed * heading.cos(), 0.0, speed * heading.sin());
            let mut path = vec![obj.clone()];
            if n_frames > 1 {
                let mut next = obj.clone();
                next.center += v * dt;
                path.push(next);
            }
            while path.len() < n_frames {
                let dir = rng.random_range(-PI..PI);
                let mag = if accel_bound > 0.0 { rng.random_range(0.0..accel_bound) * (1.0 - 1e-6) } else { 0.0 };
                let a = Point3D::new(mag * dir.cos(), 0.0, mag * dir.sin());
                let n = path.len();
                let mut next = path[n - 1].clone();
                next.center = path[n - 1].center * 2.0 - path[n - 2].center + a * (dt * dt);
                path.push(next);
            }
            if path.iter().all(in_front) {
                break path;
            }
        };
        paths.push(path);
    }
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let objects = paths.iter().map(|p| p[f].clone()).collect();
        frames.push(render(cfg, &k, objects, f as f64 * dt, &mut rng)?);
    }
    let tracks = paths
        .iter()
        .enumerate()
        .map(|(id, p)| Track {
            id,
            frames: (0..n_frames).collect(),
            times: (0..n_frames).map(|f| f as f64 * dt).collect(),
            centers: p.iter().map(|b| b.center).collect(),
        })
        .collect();
    Ok((frames, tracks))
}

/// Detection noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionNoise {
    /// Standard deviation of the X and Y center offsets, meters.
    pub center_sigma: f64,
    /// Standard deviation of the depth offset, meters.
    pub depth_sigma: f64,
    /// Standard deviation of the yaw offset, radians.
    pub yaw_sigma: f64,
    /// Scores are `exp(−|center offset| / score_scale)`.
    pub score_scale: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise { center_sigma: 0.2, depth_sigma: 0.5, yaw_sigma: 0.1, score_scale: 1.0 }
    }
}

/// Noisy detections of a frame's objects, scored by how far each moved.
pub fn perturb_detections(frame: &SceneFrame, noise: &DetectionNoise, seed: u64) -> Result<Vec<Box3D>> {
    if !(noise.center_sigma >= 0.0 && noise.depth_sigma >= 0.0 && noise.yaw_sigma >= 0.0 && noise.score_scale > 0.0) {
        return Err(Error::InvalidConfig("noise sigmas must be non-negative and the score scale positive".into()));
    }
    let mut rng = rng_for(seed, 0);
    let gauss = |rng: &mut ChaCha8Rng, sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
        } else {
            0.0
        }
    };
    Ok(frame
        .objects
        .iter()
        .map(|o| {
            let d = Point3D::new(gauss(&mut rng, noise.center_sigma), gauss(&mut rng, noise.center_sigma), gauss(&mut rng, noise.depth_sigma));
            let dyaw = gauss(&mut rng, noise.yaw_sigma);
            Box3D::new(o.center + d, o.size, o.yaw + dyaw, o.class_name.clone()).with_score((-d.norm() / noise.score_scale).exp())
        })
        .collect())
}

/// KITTI ground-truth labels of a frame.
pub fn frame_labels(frame: &SceneFrame, k: &CameraIntrinsics) -> Result<Vec<KittiLabel>> {
    frame
        .objects
        .iter()
        .zip(&frame.truncation)
        .map(|(b, &t)| box3d_to_label(b, k, t, 0, None))
        .collect()
}

/// Writes `label_2/%06d.txt`, `calib/%06d.txt` and `priors.json` under `dir`.
pub fn export_kitti(frames: &[SceneFrame], cfg: &SceneConfig, dir: &Path) -> Result<()> {
    let k = cfg.camera()?;
    let label_dir = dir.join("label_2");
    let calib_dir = dir.join("calib");
    for d in [&label_dir, &calib_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let calib = emit_calib_file(&KittiCalib::from_intrinsics(&k));
    for (i, frame) in frames.iter().enumerate() {
        let name = format!("{i:06}.txt");
        let labels = emit_label_file(&frame_labels(frame, &k)?);
        let p = label_dir.join(&name);
        std::fs::write(&p, labels).map_err(|e| Error::io(&p, e))?;
        let p = calib_dir.join(&name);
        std::fs::write(&p, &calib).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("priors.json");
    std::fs::write(&p, cfg.priors().to_json()).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Names of the generated classes.
pub fn class_names(cfg: &SceneConfig) -> Vec<String> {
    cfg.classes.iter().map(|c| c.name.clone()).collect()
}
