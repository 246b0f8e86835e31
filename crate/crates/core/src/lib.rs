//! Geometric building blocks for monocular 3D object detection: camera
//! geometry, grid encoding, losses with analytic gradients, weak supervision
//! from 2D boxes, box fitters, KITTI-style evaluation and I/O, and a
//! synthetic scene generator.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod geometry;
pub mod gradcheck;
pub mod grid;
pub mod kitti;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod weak;

pub use error::{Error, Result};
pub use fit::{fit_geogl, fit_min_proj_err, grad_check, FitConfig, FitReport, Orientation};
pub use geometry::{
    backproject, box3d_to_box2d, corners_from_pose, normalize_angle, project, view_angle_to_yaw, Box2D, Box3D,
    BoxSize, CameraIntrinsics, LocalCorners, Point3D, ProjectedCenter,
};
pub use grid::{CellTarget, GridSpec};
pub use kitti::{KittiCalib, KittiLabel, LabelKind};
pub use metrics::{ApInterpolation, EvalConfig, IouKind, PRCurve};
pub use synth::{SceneConfig, SceneFrame};
pub use weak::{ClassPrior, PriorTable, Track};
