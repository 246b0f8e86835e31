//! Pinhole camera geometry and 3D box algebra.
//!
//! Camera frame: X right, Y down, Z forward. Yaw is a rotation about +Y with
//! yaw = 0 putting the box length axis along +X, the same convention as the
//! KITTI `rotation_y` field.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics: focal lengths and principal point, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub pu: f64,
    pub pv: f64,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, pu: f64, pv: f64) -> Result<Self> {
        let k = CameraIntrinsics { fu, fv, pu, pv };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0) || !self.fu.is_finite() || !self.fv.is_finite() {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fu = {}, fv = {})",
                self.fu, self.fv
            )));
        }
        if !self.pu.is_finite() || !self.pv.is_finite() {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }
}

/// A point (or displacement) in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub const ZERO: Point3D = Point3D { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3D { x, y, z }
    }

    pub fn dot(self, other: Point3D) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Sum of absolute components.
    pub fn l1(self) -> f64 {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3D::new(a[0], a[1], a[2])
    }

    /// Component-wise map.
    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Point3D::new(f(self.x), f(self.y), f(self.z))
    }
}

impl Add for Point3D {
    type Output = Point3D;
    fn add(self, o: Point3D) -> Point3D {
        Point3D::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3D {
    fn add_assign(&mut self, o: Point3D) {
        *self = *self + o;
    }
}

impl Sub for Point3D {
    type Output = Point3D;
    fn sub(self, o: Point3D) -> Point3D {
        Point3D::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3D {
    type Output = Point3D;
    fn mul(self, s: f64) -> Point3D {
        Point3D::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3D {
    type Output = Point3D;
    fn neg(self) -> Point3D {
        Point3D::new(-self.x, -self.y, -self.z)
    }
}

/// Image-plane point, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectedCenter {
    pub u: f64,
    pub v: f64,
}

impl ProjectedCenter {
    pub const fn new(u: f64, v: f64) -> Self {
        ProjectedCenter { u, v }
    }
}

/// Axis-aligned image box stored as size plus center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Box2D {
    pub w: f64,
    pub h: f64,
    /// Center column.
    pub u: f64,
    /// Center row.
    pub v: f64,
}

impl Box2D {
    pub const fn new(w: f64, h: f64, u: f64, v: f64) -> Self {
        Box2D { w, h, u, v }
    }

    /// Builds a box from its left/top/right/bottom edges.
    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Box2D {
            w: right - left,
            h: bottom - top,
            u: 0.5 * (left + right),
            v: 0.5 * (top + bottom),
        }
    }

    pub fn left(&self) -> f64 {
        self.u - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.u + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.v - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.v + 0.5 * self.h
    }

    pub fn edges(&self) -> [f64; 4] {
        [self.left(), self.top(), self.right(), self.bottom()]
    }

    pub fn center(&self) -> ProjectedCenter {
        ProjectedCenter::new(self.u, self.v)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.h, self.u, self.v]
    }
}

/// Box dimensions in meters: length (along the yaw axis), width, height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxSize {
    pub const fn new(l: f64, w: f64, h: f64) -> Self {
        BoxSize { l, w, h }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l > 0.0 && self.w > 0.0 && self.h > 0.0 {
            Ok(())
        } else {
            Err(Error::NonPositiveSize(self.l, self.w, self.h))
        }
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }
}

/// The eight box vertices relative to the box center.
///
/// Corner `k` carries the sign pattern of `(x, y, z) = (±l/2, ±h/2, ±w/2)`
/// (before rotation) read as a three-bit number, most significant bit on x,
/// a set bit meaning `+`: corner 0 is `(-,-,-)`, corner 1 `(-,-,+)`,
/// corner 2 `(-,+,-)`, ..., corner 7 `(+,+,+)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalCorners(pub [Point3D; 8]);

impl LocalCorners {
    pub fn sum(&self) -> Point3D {
        self.0.iter().fold(Point3D::ZERO, |acc, &p| acc + p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point3D> {
        self.0.iter()
    }

    /// Recovers size and yaw from a set of corners in canonical order.
    ///
    /// Exact for corners produced by [`corners_from_pose`]; for arbitrary
    /// corner sets the axis vectors are averaged over opposite faces.
    pub fn to_pose(&self) -> (BoxSize, f64) {
        let axis = |bit: usize| {
            let mut d = Point3D::ZERO;
            for (k, &p) in self.0.iter().enumerate() {
                if k & bit != 0 {
                    d += p;
                } else {
                    d = d - p;
                }
            }
            d * 0.25
        };
        let ex = axis(4);
        let ey = axis(2);
        let ez = axis(1);
        let size = BoxSize::new(ex.norm(), ez.norm(), ey.norm());
        let yaw = normalize_angle((-ex.z).atan2(ex.x));
        (size, yaw)
    }
}

impl Add for LocalCorners {
    type Output = LocalCorners;
    fn add(self, o: LocalCorners) -> LocalCorners {
        let mut out = self;
        for (a, b) in out.0.iter_mut().zip(o.0) {
            *a += b;
        }
        out
    }
}

impl Sub for LocalCorners {
    type Output = LocalCorners;
    fn sub(self, o: LocalCorners) -> LocalCorners {
        let mut out = self;
        for (a, b) in out.0.iter_mut().zip(o.0) {
            *a = *a - b;
        }
        out
    }
}

/// An oriented 3D box: center in the camera frame, size, and yaw about Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Point3D,
    pub size: BoxSize,
    /// Radians, normalized to (-π, π].
    pub yaw: f64,
    pub class_name: String,
    /// Confidence in [0, 1].
    pub score: f64,
}

impl Box3D {
    pub fn new(center: Point3D, size: BoxSize, yaw: f64, class_name: impl Into<String>) -> Self {
        Box3D {
            center,
            size,
            yaw: normalize_angle(yaw),
            class_name: class_name.into(),
            score: 1.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    /// Local corners; panics never, a degenerate size yields degenerate corners.
    pub fn corners(&self) -> LocalCorners {
        rotated_corners(self.size, self.yaw)
    }

    pub fn absolute_corners(&self) -> [Point3D; 8] {
        let local = self.corners();
        local.0.map(|o| self.center + o)
    }
}

/// Back-projects an image point at depth `z_c` into the camera frame.
pub fn backproject(c: ProjectedCenter, z_c: f64, k: &CameraIntrinsics) -> Result<Point3D> {
    if !(z_c > 0.0) {
        return Err(Error::NonPositiveDepth(z_c));
    }
    Ok(Point3D::new(
        (c.u - k.pu) * z_c / k.fu,
        (c.v - k.pv) * z_c / k.fv,
        z_c,
    ))
}

/// Perspective projection of a camera-frame point.
pub fn project(p: Point3D, k: &CameraIntrinsics) -> Result<ProjectedCenter> {
    if !(p.z > 0.0) {
        return Err(Error::NonPositiveDepth(p.z));
    }
    Ok(ProjectedCenter::new(
        k.fu * p.x / p.z + k.pu,
        k.fv * p.y / p.z + k.pv,
    ))
}

fn rotated_corners(size: BoxSize, yaw: f64) -> LocalCorners {
    let (s, c) = yaw.sin_cos();
    let half = [0.5 * size.l, 0.5 * size.h, 0.5 * size.w];
    let mut out = [Point3D::ZERO; 8];
    for (k, corner) in out.iter_mut().enumerate() {
        let sign = |bit: usize| if k & bit != 0 { 1.0 } else { -1.0 };
        let x = sign(4) * half[0];
        let y = sign(2) * half[1];
        let z = sign(1) * half[2];
        *corner = Point3D::new(x * c + z * s, y, -x * s + z * c);
    }
    LocalCorners(out)
}

/// Corners of a box of the given size rotated by `yaw` about the vertical axis.
pub fn corners_from_pose(size: BoxSize, yaw: f64) -> Result<LocalCorners> {
    size.validate()?;
    Ok(rotated_corners(size, yaw))
}

/// Partial derivatives of `(w, h, u, v)` of a projected box with respect to
/// the box center `(X, Y, Z)`.
pub type Box2DJacobian = [[f64; 3]; 4];

/// Tight image rectangle around the eight projected corners.
pub fn box3d_to_box2d(b: &Box3D, k: &CameraIntrinsics) -> Result<Box2D> {
    project_corners(b.center, &b.corners(), k).map(|(bb, _)| bb)
}

/// [`box3d_to_box2d`] plus the Jacobian of the result with respect to the
/// center. The extreme corners are fixed at the evaluation point, so the
/// Jacobian is the one-sided derivative where two corners tie.
pub fn box3d_to_box2d_with_jacobian(
    b: &Box3D,
    k: &CameraIntrinsics,
) -> Result<(Box2D, Box2DJacobian)> {
    project_corners(b.center, &b.corners(), k)
}

/// Projects `center + corners` and returns the enclosing box with its
/// center Jacobian.
pub fn project_corners(
    center: Point3D,
    corners: &LocalCorners,
    k: &CameraIntrinsics,
) -> Result<(Box2D, Box2DJacobian)> {
    let mut us = [0.0; 8];
    let mut vs = [0.0; 8];
    let mut abs = [Point3D::ZERO; 8];
    for (i, o) in corners.iter().enumerate() {
        let p = center + *o;
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { corner: i, z: p.z });
        }
        abs[i] = p;
        us[i] = k.fu * p.x / p.z + k.pu;
        vs[i] = k.fv * p.y / p.z + k.pv;
    }
    let argmin = |xs: &[f64; 8]| (0..8).fold(0, |best, i| if xs[i] < xs[best] { i } else { best });
    let argmax = |xs: &[f64; 8]| (0..8).fold(0, |best, i| if xs[i] > xs[best] { i } else { best });
    let (ul, ur) = (argmin(&us), argmax(&us));
    let (vt, vb) = (argmin(&vs), argmax(&vs));

    let du = |i: usize| {
        let p = abs[i];
        [k.fu / p.z, 0.0, -k.fu * p.x / (p.z * p.z)]
    };
    let dv = |i: usize| {
        let p = abs[i];
        [0.0, k.fv / p.z, -k.fv * p.y / (p.z * p.z)]
    };
    let (dl, dr, dt, db) = (du(ul), du(ur), dv(vt), dv(vb));
    let mut jac = [[0.0; 3]; 4];
    for a in 0..3 {
        jac[0][a] = dr[a] - dl[a];
        jac[1][a] = db[a] - dt[a];
        jac[2][a] = 0.5 * (dr[a] + dl[a]);
        jac[3][a] = 0.5 * (db[a] + dt[a]);
    }
    let bb = Box2D::from_edges(us[ul], vs[vt], us[ur], vs[vb]);
    Ok((bb, jac))
}

/// Converts an observed view angle into a yaw: `θ = φ − arctan((u_b − p_u)/f_u)`.
pub fn view_angle_to_yaw(phi: f64, u_b: f64, k: &CameraIntrinsics) -> f64 {
    normalize_angle(phi - ((u_b - k.pu) / k.fu).atan())
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}
