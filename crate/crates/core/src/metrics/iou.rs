//! Rotated-box overlap in bird's-eye view and in 3D.

use serde::{Deserialize, Serialize};

use crate::geometry::Box3D;

/// Intersections smaller than this (m²) count as empty.
pub const SLIVER_AREA: f64 = 1e-12;

/// Which overlap defines a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    #[serde(rename = "3d")]
    ThreeD,
    Bev,
}

impl IouKind {
    pub fn label(&self) -> &'static str {
        match self {
            IouKind::ThreeD => "AP3D",
            IouKind::Bev => "APBEV",
        }
    }
}

pub type Point2 = [f64; 2];

/// Ground-plane footprint as `(x, z)` vertices in counter-clockwise order.
pub fn bev_polygon(b: &Box3D) -> [Point2; 4] {
    let c = b.corners().0;
    // bottom face, (−l,−w) → (−l,+w) → (+l,+w) → (+l,−w)
    let mut poly = [0, 1, 5, 4].map(|k| [b.center.x + c[k].x, b.center.z + c[k].z]);
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Shoelace area, positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

#[inline]
fn cross(a: Point2, b: Point2, p: Point2) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Keeps the part of `poly` on the left of the directed edge `a → b`.
fn clip_half_plane(poly: &[Point2], a: Point2, b: Point2) -> Vec<Point2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let (cs, ce) = (cross(a, b, s), cross(a, b, e));
        let (s_in, e_in) = (cs >= 0.0, ce >= 0.0);
        if s_in != e_in {
            let t = cs / (cs - ce);
            out.push([s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]);
        }
        if e_in {
            out.push(e);
        }
    }
    out
}

/// Sutherland–Hodgman intersection of two convex counter-clockwise polygons.
pub fn convex_intersection(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.len() < 3 {
            return Vec::new();
        }
        out = clip_half_plane(&out, clip[i], clip[(i + 1) % clip.len()]);
    }
    if out.len() < 3 {
        Vec::new()
    } else {
        out
    }
}

/// Area of the intersection of the two ground-plane footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let area = signed_area(&convex_intersection(&bev_polygon(a), &bev_polygon(b)));
    if area < SLIVER_AREA {
        0.0
    } else {
        area
    }
}

fn same_geometry(a: &Box3D, b: &Box3D) -> bool {
    a.center == b.center && a.size == b.size && a.yaw == b.yaw
}

/// Bird's-eye-view IoU of the yaw-rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let (aa, ab) = (a.size.l * a.size.w, b.size.l * b.size.w);
    if !(aa > 0.0 && ab > 0.0) {
        return 0.0;
    }
    if same_geometry(a, b) {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    (inter / (aa + ab - inter)).clamp(0.0, 1.0)
}

/// Vertical overlap of the two boxes along Y.
pub fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let lo = (a.center.y - 0.5 * a.size.h).max(b.center.y - 0.5 * b.size.h);
    let hi = (a.center.y + 0.5 * a.size.h).min(b.center.y + 0.5 * b.size.h);
    (hi - lo).max(0.0)
}

/// Volumetric IoU: footprint intersection times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (va, vb) = (a.size.volume(), b.size.volume());
    if !(va > 0.0 && vb > 0.0) {
        return 0.0;
    }
    if same_geometry(a, b) {
        return 1.0;
    }
    let dy = vertical_overlap(a, b);
    if dy == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dy;
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}

pub fn iou(a: &Box3D, b: &Box3D, kind: IouKind) -> f64 {
    match kind {
        IouKind::ThreeD => iou_3d(a, b),
        IouKind::Bev => iou_bev(a, b),
    }
}
