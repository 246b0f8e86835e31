//! Image grid partitioning, ground-truth cell assignment, and the residual
//! encoding of per-cell regression targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, box3d_to_box2d, project, Box2D, Box3D, CameraIntrinsics, LocalCorners, Point3D,
    ProjectedCenter,
};

/// A uniform `cols × rows` tiling of the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cells along u.
    pub cols: usize,
    /// Cells along v.
    pub rows: usize,
    pub image_w: f64,
    pub image_h: f64,
}

impl GridSpec {
    pub fn new(cols: usize, rows: usize, image_w: f64, image_h: f64) -> Result<Self> {
        if cols == 0 || rows == 0 {
            return Err(Error::InvalidConfig("grid needs at least one cell per axis".into()));
        }
        if !(image_w > 0.0 && image_h > 0.0) {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        Ok(GridSpec { cols, rows, image_w, image_h })
    }

    /// The 39 × 12 grid used for KITTI-sized inputs.
    pub fn kitti(image_w: f64, image_h: f64) -> Result<Self> {
        GridSpec::new(39, 12, image_w, image_h)
    }

    pub fn num_cells(&self) -> usize {
        self.cols * self.rows
    }

    pub fn stride(&self) -> (f64, f64) {
        (self.image_w / self.cols as f64, self.image_h / self.rows as f64)
    }

    /// Default assignment radius: twice the cell diagonal.
    pub fn default_sigma_scope(&self) -> f64 {
        let (su, sv) = self.stride();
        2.0 * su.hypot(sv)
    }

    /// Row-major cell index of `(col, row)`.
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn cell_center(&self, index: usize) -> ProjectedCenter {
        let (col, row) = (index % self.cols, index / self.cols);
        let (su, sv) = self.stride();
        ProjectedCenter::new((col as f64 + 0.5) * su, (row as f64 + 0.5) * sv)
    }

    /// Cell containing a pixel; `None` outside the image.
    pub fn cell_of_pixel(&self, u: f64, v: f64) -> Option<usize> {
        if !(u >= 0.0 && u < self.image_w && v >= 0.0 && v < self.image_h) {
            return None;
        }
        let (su, sv) = self.stride();
        let col = ((u / su) as usize).min(self.cols - 1);
        let row = ((v / sv) as usize).min(self.rows - 1);
        Some(self.index(col, row))
    }
}

/// Cell-to-object assignment for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub cells: Vec<Option<usize>>,
}

impl Assignment {
    /// Indices of foreground cells, ascending.
    pub fn foreground(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.map(|_| i))
            .collect()
    }

    pub fn object_of(&self, cell: usize) -> Option<usize> {
        self.cells.get(cell).copied().flatten()
    }
}

/// Assigns each cell to the nearest-depth object whose 2D box center lies
/// strictly within `sigma_scope` pixels of the cell center.
///
/// `objects` holds each object's 2D box and instance depth. Exact depth ties
/// go to the lower object index.
pub fn assign(objects: &[(Box2D, f64)], grid: &GridSpec, sigma_scope: f64) -> Result<Assignment> {
    if !(sigma_scope > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma_scope must be positive, got {sigma_scope}")));
    }
    let cells = (0..grid.num_cells())
        .map(|cell| {
            let g = grid.cell_center(cell);
            let mut best: Option<(usize, f64)> = None;
            for (i, (b, z)) in objects.iter().enumerate() {
                if (b.u - g.u).hypot(b.v - g.v) >= sigma_scope {
                    continue;
                }
                match best {
                    Some((_, bz)) if *z >= bz => {}
                    _ => best = Some((i, *z)),
                }
            }
            best.map(|(i, _)| i)
        })
        .collect();
    Ok(Assignment { cells })
}

/// Per-cell targets or predictions in the network's output parametrization.
///
/// Box and center fields are residuals relative to the cell center.
/// `class_probs[0]` is the background class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTarget {
    pub class_probs: Vec<f64>,
    pub w2d: f64,
    pub h2d: f64,
    pub du_b: f64,
    pub dv_b: f64,
    pub z_c: f64,
    pub du_c: f64,
    pub dv_c: f64,
    pub corners: LocalCorners,
    pub delta_center: Point3D,
    pub delta_corners: LocalCorners,
    pub foreground: bool,
}

/// Number of scalar fields besides the class probabilities.
const REGRESSION_FIELDS: usize = 7 + 24 + 3 + 24;

impl CellTarget {
    /// A background cell: all mass on class 0, no regression targets.
    pub fn background(num_classes: usize) -> Self {
        let mut class_probs = vec![0.0; num_classes + 1];
        class_probs[0] = 1.0;
        CellTarget {
            class_probs,
            ..CellTarget::zeros(num_classes)
        }
    }

    /// All-zero cell (used as a gradient accumulator).
    pub fn zeros(num_classes: usize) -> Self {
        CellTarget {
            class_probs: vec![0.0; num_classes + 1],
            w2d: 0.0,
            h2d: 0.0,
            du_b: 0.0,
            dv_b: 0.0,
            z_c: 0.0,
            du_c: 0.0,
            dv_c: 0.0,
            corners: LocalCorners::default(),
            delta_center: Point3D::ZERO,
            delta_corners: LocalCorners::default(),
            foreground: false,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_probs.len() - 1
    }

    pub fn flat_len(&self) -> usize {
        self.class_probs.len() + REGRESSION_FIELDS
    }

    /// Flattens every numeric field; the layout is stable and mirrors
    /// [`CellTarget::set_from_slice`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&self.class_probs);
        out.extend_from_slice(&[self.w2d, self.h2d, self.du_b, self.dv_b, self.z_c, self.du_c, self.dv_c]);
        for p in self.corners.iter() {
            out.extend_from_slice(&p.to_array());
        }
        out.extend_from_slice(&self.delta_center.to_array());
        for p in self.delta_corners.iter() {
            out.extend_from_slice(&p.to_array());
        }
        out
    }

    pub fn set_from_slice(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.flat_len(), "flat cell length mismatch");
        let n = self.class_probs.len();
        self.class_probs.copy_from_slice(&values[..n]);
        let r = &values[n..];
        [self.w2d, self.h2d, self.du_b, self.dv_b, self.z_c, self.du_c, self.dv_c] =
            [r[0], r[1], r[2], r[3], r[4], r[5], r[6]];
        let point = |i: usize| Point3D::new(r[i], r[i + 1], r[i + 2]);
        for k in 0..8 {
            self.corners.0[k] = point(7 + 3 * k);
        }
        self.delta_center = point(31);
        for k in 0..8 {
            self.delta_corners.0[k] = point(34 + 3 * k);
        }
    }
}

/// Ground truth for one object, in the quantities the grid regresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridObject {
    pub box2d: Box2D,
    /// Projection of the 3D center.
    pub center2d: ProjectedCenter,
    pub depth: f64,
    pub corners: LocalCorners,
    /// 1-based class index into `CellTarget::class_probs`.
    pub class_index: usize,
}

impl GridObject {
    /// Fully supervised ground truth from a 3D box.
    pub fn from_box3d(b: &Box3D, k: &CameraIntrinsics, class_index: usize) -> Result<Self> {
        Ok(GridObject {
            box2d: box3d_to_box2d(b, k)?,
            center2d: project(b.center, k)?,
            depth: b.center.z,
            corners: b.corners(),
            class_index,
        })
    }
}

/// Encodes an object as the target of cell center `g`.
pub fn encode(obj: &GridObject, g: ProjectedCenter, num_classes: usize) -> CellTarget {
    let mut class_probs = vec![0.0; num_classes + 1];
    class_probs[obj.class_index.min(num_classes)] = 1.0;
    CellTarget {
        class_probs,
        w2d: obj.box2d.w,
        h2d: obj.box2d.h,
        du_b: obj.box2d.u - g.u,
        dv_b: obj.box2d.v - g.v,
        z_c: obj.depth,
        du_c: obj.center2d.u - g.u,
        dv_c: obj.center2d.v - g.v,
        corners: obj.corners,
        delta_center: Point3D::ZERO,
        delta_corners: LocalCorners::default(),
        foreground: true,
    }
}

/// Targets for every cell of the grid.
pub fn build_targets(
    objects: &[GridObject],
    grid: &GridSpec,
    sigma_scope: f64,
    num_classes: usize,
) -> Result<Vec<CellTarget>> {
    let keys: Vec<(Box2D, f64)> = objects.iter().map(|o| (o.box2d, o.depth)).collect();
    let assignment = assign(&keys, grid, sigma_scope)?;
    Ok(assignment
        .cells
        .iter()
        .enumerate()
        .map(|(cell, obj)| match obj {
            Some(i) => encode(&objects[*i], grid.cell_center(cell), num_classes),
            None => CellTarget::background(num_classes),
        })
        .collect())
}

/// The cell's unrefined 3D center: back-projection of `g + (Δu_c, Δv_c)`.
pub fn coarse_center(t: &CellTarget, g: ProjectedCenter, k: &CameraIntrinsics) -> Result<Point3D> {
    backproject(ProjectedCenter::new(g.u + t.du_c, g.v + t.dv_c), t.z_c, k)
}

/// The cell's 2D box in absolute pixel coordinates.
pub fn decode_box2d(t: &CellTarget, g: ProjectedCenter) -> Box2D {
    Box2D::new(t.w2d, t.h2d, g.u + t.du_b, g.v + t.dv_b)
}

/// Decodes a cell into a refined 3D box.
///
/// `classes[i]` names class index `i + 1`; the score is the highest
/// foreground class probability.
pub fn decode(t: &CellTarget, g: ProjectedCenter, k: &CameraIntrinsics, classes: &[String]) -> Result<Box3D> {
    let center = coarse_center(t, g, k)? + t.delta_center;
    let corners = t.corners + t.delta_corners;
    let (size, yaw) = corners.to_pose();
    let (best, score) = t
        .class_probs
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    let class_name = classes.get(best - 1).cloned().unwrap_or_else(|| format!("class{best}"));
    Ok(Box3D {
        center,
        size,
        yaw,
        class_name,
        score: score.max(0.0),
    })
}
