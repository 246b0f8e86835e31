//! Finite-difference verification of every analytic gradient in the crate.
//!
//! Each check samples random points away from the kinks of its objective
//! (L1 zero crossings, clip boundaries, ties between extreme corners) and
//! records the worst [`grad_check`] deviation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fit::{grad_check, projection_objective};
use crate::geometry::{
    backproject, corners_from_pose, project_corners, Box2D, BoxSize, CameraIntrinsics, LocalCorners, Point3D,
    ProjectedCenter,
};
use crate::grid::CellTarget;
use crate::losses::{
    loss_box2d, loss_center, loss_class, loss_class_logits, loss_corners, loss_depth, loss_refine_center,
    loss_refine_corners, Loss,
};
use crate::weak::{acceleration_loss, delta_from_residual, pseudo_depth, AccelConfig, AccelNorm, ClassPrior, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub points: usize,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub step: f64,
    pub entries: Vec<GradCheckEntry>,
    pub max_deviation: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_deviation < tolerance
    }
}

const CELLS: usize = 2;
const CLASSES: usize = 3;
/// Minimum distance of every sampled point from a kink of its objective.
const MARGIN: f64 = 1e-2;

type Objective = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>;

fn away_from_zero(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let m = rng.random_range(MARGIN..scale);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

fn random_cells(rng: &mut ChaCha8Rng) -> Vec<CellTarget> {
    (0..CELLS)
        .map(|_| {
            let mut c = CellTarget::zeros(CLASSES);
            let flat: Vec<f64> = (0..c.flat_len()).map(|_| rng.random_range(-5.0..5.0)).collect();
            c.set_from_slice(&flat);
            for p in c.class_probs.iter_mut() {
                *p = rng.random_range(0.05..0.95);
            }
            c
        })
        .collect()
}

/// Targets whose regression fields differ from `preds` by at least `MARGIN`.
fn offset_targets(rng: &mut ChaCha8Rng, preds: &[CellTarget]) -> Vec<CellTarget> {
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut t = p.clone();
            let mut flat = p.to_vec();
            for v in flat.iter_mut().skip(p.class_probs.len()) {
                *v += away_from_zero(rng, 3.0);
            }
            t.set_from_slice(&flat);
            let mut probs = vec![0.0; CLASSES + 1];
            probs[rng.random_range(0..=CLASSES)] = 1.0;
            t.class_probs = probs;
            t.foreground = i % 2 == 0 || rng.random::<bool>();
            t
        })
        .collect()
}

fn flatten(cells: &[CellTarget]) -> Vec<f64> {
    cells.iter().flat_map(|c| c.to_vec()).collect()
}

fn unflatten(template: &[CellTarget], flat: &[f64]) -> Vec<CellTarget> {
    let mut out = template.to_vec();
    let mut at = 0;
    for c in out.iter_mut() {
        let n = c.flat_len();
        c.set_from_slice(&flat[at..at + n]);
        at += n;
    }
    out
}

fn cell_loss_objective(
    preds: Vec<CellTarget>,
    targets: Vec<CellTarget>,
    loss: fn(&[CellTarget], &[CellTarget]) -> crate::error::Result<Loss>,
) -> (Vec<f64>, Objective) {
    let x0 = flatten(&preds);
    let f = move |x: &[f64]| {
        let p = unflatten(&preds, x);
        let l = loss(&p, &targets).expect("matching shapes");
        (l.value, flatten(&l.grad))
    };
    (x0, Box::new(f))
}

fn sample_cell_loss(
    rng: &mut ChaCha8Rng,
    loss: fn(&[CellTarget], &[CellTarget]) -> crate::error::Result<Loss>,
) -> (Vec<f64>, Objective) {
    let preds = random_cells(rng);
    let targets = offset_targets(rng, &preds);
    cell_loss_objective(preds, targets, loss)
}

fn sample_class_logits(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let preds = random_cells(rng);
    let mut targets = offset_targets(rng, &preds);
    for t in targets.iter_mut() {
        // soft targets exercise the mass term
        let raw: Vec<f64> = (0..=CLASSES).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        t.class_probs = raw.iter().map(|r| r / s).collect();
    }
    let x0: Vec<f64> = (0..CELLS * (CLASSES + 1)).map(|_| rng.random_range(-4.0..4.0)).collect();
    let f = move |x: &[f64]| {
        let logits: Vec<Vec<f64>> = x.chunks(CLASSES + 1).map(|c| c.to_vec()).collect();
        let (v, g) = loss_class_logits(&logits, &targets).expect("matching shapes");
        (v, g.concat())
    };
    (x0, Box::new(f))
}

fn track_from(x: &[f64], times: &[f64]) -> Track {
    Track {
        id: 0,
        frames: (0..times.len()).collect(),
        times: times.to_vec(),
        centers: x.chunks(3).map(|c| Point3D::new(c[0], c[1], c[2])).collect(),
    }
}

/// A track whose discrete accelerations are drawn directly, each clear of
/// the threshold, the clip and (for L1) the coordinate planes.
fn sample_accel(rng: &mut ChaCha8Rng, norm: AccelNorm) -> (Vec<f64>, Objective) {
    let cfg = AccelConfig { norm, ..AccelConfig::default() };
    let n = 6;
    let mut t = 0.0;
    let times: Vec<f64> = (0..n)
        .map(|_| {
            t += rng.random_range(0.08..0.12);
            t
        })
        .collect();
    let mut centers = vec![
        Point3D::new(rng.random_range(-5.0..5.0), rng.random_range(0.5..1.5), rng.random_range(10.0..40.0)),
    ];
    let v0 = Point3D::new(rng.random_range(-5.0..5.0), 0.0, rng.random_range(-5.0..5.0));
    centers.push(centers[0] + v0 * (times[1] - times[0]));
    while centers.len() < n {
        let a = loop {
            let a = Point3D::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let mag = match norm {
                AccelNorm::Euclidean => a.norm(),
                AccelNorm::L1 => a.l1(),
            };
            let excess = mag - cfg.alpha_a;
            let clear_axes = norm == AccelNorm::Euclidean || a.to_array().iter().all(|c| c.abs() > 0.05);
            if excess.abs() > 0.05 && (excess - cfg.beta_a).abs() > 0.05 && clear_axes {
                break a;
            }
        };
        let m = centers.len() - 2;
        let d1 = times[m] - times[m + 1];
        let d2 = times[m + 1] - times[m + 2];
        let (c0, c1) = (centers[m], centers[m + 1]);
        centers.push(c1 - ((c0 - c1) * (1.0 / (d1 * d1)) - a) * (d1 * d2));
    }
    let x0: Vec<f64> = centers.iter().flat_map(|c| c.to_array()).collect();
    let f = move |x: &[f64]| {
        let l = acceleration_loss(&[track_from(x, &times)], &cfg).expect("valid track");
        (l.value, l.grad[0].iter().flat_map(|p| p.to_array()).collect())
    };
    (x0, Box::new(f))
}

/// Depth correction per pixel of box height from the first-order update,
/// against differences of the pseudo depth itself.
fn sample_pseudo_depth(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let k = random_camera(rng);
    let prior = ClassPrior::new("Car", BoxSize::new(3.9, 1.6, rng.random_range(0.5..2.5))).expect("positive size");
    let x0 = vec![rng.random_range(15.0..300.0)];
    let f = move |x: &[f64]| {
        let b = Box2D::new(50.0, x[0], k.pu, k.pv);
        let z = pseudo_depth(&b, &prior, &k).expect("positive height");
        let unit_dh = Box2D::new(0.0, 1.0, 0.0, 0.0);
        let d = delta_from_residual(&unit_dh, z, x[0], prior.height(), &k).expect("positive height");
        (z, vec![d.z])
    };
    (x0, Box::new(f))
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraIntrinsics {
    let f = rng.random_range(500.0..900.0);
    CameraIntrinsics::new(f, f * rng.random_range(0.95..1.05), rng.random_range(550.0..650.0), rng.random_range(150.0..200.0))
        .expect("positive focal lengths")
}

/// Lateral partials of the back-projection come from the first-order update
/// (a unit pixel residual at depth `z`); the depth partial is direct.
fn sample_backproject(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let k = random_camera(rng);
    let w = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let x0 = vec![rng.random_range(0.0..1242.0), rng.random_range(0.0..375.0), rng.random_range(2.0..80.0)];
    let f = move |x: &[f64]| {
        let (u, v, z) = (x[0], x[1], x[2]);
        let p = backproject(ProjectedCenter::new(u, v), z, &k).expect("positive depth");
        let du = delta_from_residual(&Box2D::new(0.0, 0.0, 1.0, 0.0), z, 1.0, 1.0, &k).expect("positive height");
        let dv = delta_from_residual(&Box2D::new(0.0, 0.0, 0.0, 1.0), z, 1.0, 1.0, &k).expect("positive height");
        let dz = Point3D::new((u - k.pu) / k.fu, (v - k.pv) / k.fv, 1.0);
        let wp = Point3D::from_array(w);
        (wp.dot(p), vec![wp.dot(du), wp.dot(dv), wp.dot(dz)])
    };
    (x0, Box::new(f))
}

/// Smallest gap between the extreme projected coordinate and the runner-up,
/// over the four box edges. Corners differing only in height share their
/// horizontal coordinate everywhere, so only one of each pair counts for `u`.
fn extreme_gap(center: Point3D, corners: &LocalCorners, k: &CameraIntrinsics) -> f64 {
    let pts: Vec<(f64, f64)> = corners
        .iter()
        .map(|o| {
            let p = center + *o;
            (k.fu * p.x / p.z, k.fv * p.y / p.z)
        })
        .collect();
    let gap = |mut xs: Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        (xs[1] - xs[0]).min(xs[xs.len() - 1] - xs[xs.len() - 2])
    };
    let us = pts.iter().enumerate().filter(|(i, _)| i & 2 == 0).map(|(_, p)| p.0).collect();
    gap(us).min(gap(pts.iter().map(|p| p.1).collect()))
}

fn sample_pose(rng: &mut ChaCha8Rng) -> (CameraIntrinsics, Point3D, LocalCorners) {
    loop {
        let k = random_camera(rng);
        let size = BoxSize::new(rng.random_range(0.5..5.0), rng.random_range(0.5..2.0), rng.random_range(1.0..2.0));
        let corners = corners_from_pose(size, rng.random_range(-3.1..3.1)).expect("positive size");
        let center = Point3D::new(rng.random_range(-10.0..10.0), rng.random_range(-1.0..2.5), rng.random_range(6.0..60.0));
        // coordinate ties sit on the kinks of the min/max
        if extreme_gap(center, &corners, &k) > 0.05 {
            return (k, center, corners);
        }
    }
}

fn sample_box_projection(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (k, center, corners) = sample_pose(rng);
    let w = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let f = move |x: &[f64]| {
        let (b, jac) = project_corners(Point3D::new(x[0], x[1], x[2]), &corners, &k).expect("in front");
        let vals = b.to_array();
        let value = (0..4).map(|i| w[i] * vals[i]).sum();
        let grad = (0..3).map(|a| (0..4).map(|i| w[i] * jac[i][a]).sum()).collect();
        (value, grad)
    };
    (center.to_array().to_vec(), Box::new(f))
}

fn sample_projection_objective(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (k, center, corners) = sample_pose(rng);
    let (b, _) = project_corners(center, &corners, &k).expect("in front");
    let target = Box2D::new(
        b.w + away_from_zero(rng, 20.0),
        b.h + away_from_zero(rng, 20.0),
        b.u + away_from_zero(rng, 20.0),
        b.v + away_from_zero(rng, 20.0),
    );
    let f = move |x: &[f64]| {
        let (v, g) = projection_objective(Point3D::new(x[0], x[1], x[2]), &corners, &target, &k).expect("in front");
        (v, g.to_array().to_vec())
    };
    (center.to_array().to_vec(), Box::new(f))
}

type Sampler = fn(&mut ChaCha8Rng) -> (Vec<f64>, Objective);

fn battery() -> Vec<(&'static str, Sampler)> {
    vec![
        ("loss_class", |r| sample_cell_loss(r, loss_class)),
        ("loss_class_logits", sample_class_logits),
        ("loss_box2d", |r| sample_cell_loss(r, loss_box2d)),
        ("loss_depth", |r| sample_cell_loss(r, loss_depth)),
        ("loss_center", |r| sample_cell_loss(r, loss_center)),
        ("loss_corners", |r| sample_cell_loss(r, loss_corners)),
        ("loss_refine_center", |r| sample_cell_loss(r, loss_refine_center)),
        ("loss_refine_corners", |r| sample_cell_loss(r, loss_refine_corners)),
        ("acceleration_loss_euclidean", |r| sample_accel(r, AccelNorm::Euclidean)),
        ("acceleration_loss_l1", |r| sample_accel(r, AccelNorm::L1)),
        ("pseudo_depth", sample_pseudo_depth),
        ("backproject", sample_backproject),
        ("box3d_to_box2d_jacobian", sample_box_projection),
        ("projection_objective", sample_projection_objective),
    ]
}

/// Runs every check at `points` random points each.
pub fn run_battery(seed: u64, points: usize, step: f64) -> GradCheckReport {
    let mut entries = Vec::new();
    for (i, (name, sampler)) in battery().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut worst = 0.0f64;
        for _ in 0..points {
            let (x0, f) = sampler(&mut rng);
            worst = worst.max(grad_check(f, &x0, step));
        }
        entries.push(GradCheckEntry { name: name.to_string(), points, max_deviation: worst });
    }
    let max_deviation = entries.iter().map(|e| e.max_deviation).fold(0.0, f64::max);
    GradCheckReport { seed, step, entries, max_deviation }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_battery_passes() {
        let r = run_battery(7, 20, 1e-5);
        assert_eq!(r.entries.len(), 14);
        for e in &r.entries {
            assert!(e.max_deviation < 1e-4, "{e:?}");
        }
    }
}
