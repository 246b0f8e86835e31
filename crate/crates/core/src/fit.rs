//! Recovery of a 3D box center from 2D evidence.
//!
//! Two fitters share the same inputs (2D box, orientation, class prior,
//! intrinsics):
//!
//! * [`fit_min_proj_err`] minimizes the L1 discrepancy between the projected
//!   box and the observed box by descent with an Armijo backtracking line
//!   search.
//! * [`fit_geogl`] starts from the pseudo label and repeatedly applies the
//!   first-order correction [`first_order_delta`].
//!
//! Only the center is estimated; size and yaw stay fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    box3d_to_box2d, corners_from_pose, project_corners, Box2DJacobian, view_angle_to_yaw, Box2D, Box3D,
    CameraIntrinsics, LocalCorners, Point3D,
};
use crate::losses::sgn;
use crate::weak::{box2d_residual, first_order_delta, pseudo_label, ClassPrior};

/// Iteration controls shared by both fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Upper bound on accepted steps. Zero returns the initialization.
    pub max_iters: usize,
    /// Initial line-search step length, meters.
    pub step: f64,
    /// Stop once a step moves the center by less than this, meters.
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Centers are projected back to at least this depth, meters.
    pub min_depth: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { max_iters: 200, step: 0.5, tol: 1e-4, armijo: 1e-4, min_depth: 0.1 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.tol > 0.0 && self.min_depth > 0.0) {
            return Err(Error::InvalidConfig("fit step, tol and min_depth must be positive".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidConfig("armijo constant must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub box3d: Box3D,
    pub iterations: usize,
    /// L1 distance between the final projected box and the target box.
    pub objective: f64,
    pub converged: bool,
    /// Objective after initialization and after each accepted step.
    pub history: Vec<f64>,
}

/// Which orientation input accompanies the 2D box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Orientation {
    /// Observation angle from a view-angle regressor; converted with the box center.
    ViewAngle(f64),
    /// Yaw about the vertical axis.
    Yaw(f64),
}

impl Orientation {
    pub fn yaw(&self, gt2d: &Box2D, k: &CameraIntrinsics) -> f64 {
        match *self {
            Orientation::ViewAngle(phi) => view_angle_to_yaw(phi, gt2d.u, k),
            Orientation::Yaw(yaw) => yaw,
        }
    }
}

/// L1 distance between the box projected from `center + corners` and
/// `gt2d`, with its gradient with respect to the center.
pub fn projection_objective(
    center: Point3D,
    corners: &LocalCorners,
    gt2d: &Box2D,
    k: &CameraIntrinsics,
) -> Result<(f64, Point3D)> {
    let (bb, jac) = project_corners(center, corners, k)?;
    let r = [bb.w - gt2d.w, bb.h - gt2d.h, bb.u - gt2d.u, bb.v - gt2d.v];
    let mut g = [0.0; 3];
    for (ri, row) in r.iter().zip(jac.iter()) {
        let s = sgn(*ri);
        for a in 0..3 {
            g[a] += s * row[a];
        }
    }
    Ok((r.iter().map(|x| x.abs()).sum(), Point3D::from_array(g)))
}

fn check_gt(gt2d: &Box2D) -> Result<()> {
    if !(gt2d.h > 0.0) {
        return Err(Error::NonPositiveHeight(gt2d.h));
    }
    if !(gt2d.w >= 0.0) {
        return Err(Error::InvalidConfig(format!("2D box width must be non-negative, got {}", gt2d.w)));
    }
    Ok(())
}

/// Gauss–Newton direction `−(JᵀJ)⁻¹ Jᵀ r` of the residual vector, if the
/// normal equations are well conditioned.
fn gauss_newton_direction(r: &[f64; 4], jac: &Box2DJacobian) -> Option<Point3D> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (ri, row) in r.iter().zip(jac.iter()) {
        for i in 0..3 {
            b[i] -= row[i] * ri;
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    let trace = a[0][0] + a[1][1] + a[2][2];
    if !(det.abs() > 1e-12 * trace.powi(3)) {
        return None;
    }
    let solve = |col: usize| {
        let mut m = a;
        for i in 0..3 {
            m[i][col] = b[i];
        }
        (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
            / det
    };
    let d = Point3D::new(solve(0), solve(1), solve(2));
    d.is_finite().then_some(d)
}

/// Fits the center minimizing the projected-box L1 error.
///
/// Each iteration tries the Gauss–Newton direction of the residual vector
/// first, starting from the full step; when that is not a descent direction
/// of the L1 objective it falls back to the negative subgradient scaled per
/// axis by the pixel-to-meter factors at the current depth (`Z/f_u`, `Z/f_v`,
/// `Z²/(f_v·h̄)`), starting from `cfg.step` meters. Both are accepted only
/// under the Armijo condition, so the objective never increases.
pub fn fit_min_proj_err(
    gt2d: &Box2D,
    yaw: f64,
    prior: &ClassPrior,
    k: &CameraIntrinsics,
    init: Point3D,
    cfg: &FitConfig,
) -> Result<FitReport> {
    check_gt(gt2d)?;
    cfg.validate()?;
    if !(init.z > 0.0) {
        return Err(Error::NonPositiveDepth(init.z));
    }
    let corners = corners_from_pose(prior.size, yaw)?;
    let mut x = Point3D { z: init.z.max(cfg.min_depth), ..init };
    let (mut f, mut g) = projection_objective(x, &corners, gt2d, k)?;
    let mut history = vec![f];
    let mut iterations = 0;
    let mut converged = false;

    let line_search = |x: Point3D, f: f64, dir: Point3D, slope: f64, t0: f64| {
        let mut t = t0;
        while t * dir.norm() >= cfg.tol {
            let mut cand = x + dir * t;
            cand.z = cand.z.max(cfg.min_depth);
            if let Ok((fc, gc)) = projection_objective(cand, &corners, gt2d, k) {
                if fc <= f + cfg.armijo * t * slope {
                    return Some((cand, fc, gc));
                }
            }
            t *= 0.5;
        }
        None
    };

    while iterations < cfg.max_iters {
        if f == 0.0 {
            converged = true;
            break;
        }
        let (bb, jac) = project_corners(x, &corners, k)?;
        let r = [bb.w - gt2d.w, bb.h - gt2d.h, bb.u - gt2d.u, bb.v - gt2d.v];

        let mut accepted = None;
        if let Some(d) = gauss_newton_direction(&r, &jac) {
            let slope = g.dot(d);
            if slope < 0.0 {
                accepted = line_search(x, f, d, slope, 1.0);
            }
        }
        if accepted.is_none() {
            let scale = Point3D::new(x.z / k.fu, x.z / k.fv, x.z * x.z / (k.fv * prior.height()));
            let d = Point3D::new(-scale.x * scale.x * g.x, -scale.y * scale.y * g.y, -scale.z * scale.z * g.z);
            let dn = d.norm();
            if dn > 0.0 {
                let dir = d * (1.0 / dn);
                accepted = line_search(x, f, dir, g.dot(dir), cfg.step);
            }
        }
        let Some((cand, fc, gc)) = accepted else {
            // no decrease at the tolerance scale
            converged = true;
            break;
        };
        let moved = (cand - x).norm();
        x = cand;
        f = fc;
        g = gc;
        iterations += 1;
        history.push(f);
        if moved < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(FitReport {
        box3d: Box3D::new(x, prior.size, yaw, prior.class_name.clone()),
        iterations,
        objective: f,
        converged,
        history,
    })
}

/// Geometry-guided fit: pseudo-label initialization followed by repeated
/// first-order corrections until the correction norm drops below `tol`.
pub fn fit_geogl(
    gt2d: &Box2D,
    orientation: Orientation,
    prior: &ClassPrior,
    k: &CameraIntrinsics,
    cfg: &FitConfig,
) -> Result<FitReport> {
    check_gt(gt2d)?;
    cfg.validate()?;
    let yaw = orientation.yaw(gt2d, k);
    let mut est = pseudo_label(gt2d, yaw, prior, k)?;
    let objective = |b: &Box3D| -> Result<f64> {
        let r = box2d_residual(gt2d, &box3d_to_box2d(b, k)?);
        Ok(r.to_array().iter().map(|x| x.abs()).sum())
    };
    let mut history = vec![objective(&est)?];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let delta = first_order_delta(&est, gt2d, prior, k)?;
        est.center += delta;
        est.center.z = est.center.z.max(cfg.min_depth);
        iterations += 1;
        history.push(objective(&est)?);
        if delta.norm() < cfg.tol {
            converged = true;
            break;
        }
    }
    let objective = *history.last().expect("history starts non-empty");
    Ok(FitReport { box3d: est, iterations, objective, converged, history })
}

/// Largest deviation between an analytic gradient and central finite
/// differences, measured as `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(objective: F, params: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = objective(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = objective(&x).0;
        x[i] = orig - step;
        let fm = objective(&x).0;
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let scale = 1f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}
