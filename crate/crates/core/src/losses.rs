//! Training losses over grid cells, with analytic gradients taken with respect
//! to the predicted cell quantities.
//!
//! Classification is summed over every cell; all regression terms are L1 and
//! summed over foreground cells only (`targets[i].foreground`). Accumulation
//! runs in ascending cell order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraIntrinsics, LocalCorners, Point3D, ProjectedCenter};
use crate::grid::{coarse_center, CellTarget};

/// Lower clamp applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// A loss value and its gradient, laid out like the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad: Vec<CellTarget>,
}

/// L1 subgradient with `sgn(0) = 0`.
#[inline]
pub(crate) fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check(preds: &[CellTarget], targets: &[CellTarget]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
        if p.class_probs.len() != t.class_probs.len() {
            return Err(Error::InvalidConfig(format!("cell {i}: class count mismatch")));
        }
    }
    Ok(())
}

fn zero_grad(preds: &[CellTarget]) -> Vec<CellTarget> {
    preds.iter().map(|p| CellTarget::zeros(p.num_classes())).collect()
}

/// L1 over foreground cells of the scalars picked by `fields`.
fn l1_over_fg<const N: usize>(
    preds: &[CellTarget],
    targets: &[CellTarget],
    get: impl Fn(&CellTarget) -> [f64; N],
    set: impl Fn(&mut CellTarget, [f64; N]),
) -> Result<Loss> {
    check(preds, targets)?;
    let mut grad = zero_grad(preds);
    let mut value = 0.0;
    for ((p, t), g) in preds.iter().zip(targets).zip(grad.iter_mut()) {
        if !t.foreground {
            continue;
        }
        let (pv, tv) = (get(p), get(t));
        let mut d = [0.0; N];
        for i in 0..N {
            let r = pv[i] - tv[i];
            value += r.abs();
            d[i] = sgn(r);
        }
        set(g, d);
    }
    Ok(Loss { value, grad })
}

fn corners_flat(c: &LocalCorners) -> [f64; 24] {
    let mut out = [0.0; 24];
    for (k, p) in c.iter().enumerate() {
        out[3 * k..3 * k + 3].copy_from_slice(&p.to_array());
    }
    out
}

fn corners_from_flat(v: [f64; 24]) -> LocalCorners {
    let mut c = LocalCorners::default();
    for k in 0..8 {
        c.0[k] = Point3D::new(v[3 * k], v[3 * k + 1], v[3 * k + 2]);
    }
    c
}

/// Cross entropy between predicted probabilities and target distributions,
/// summed over all cells. Gradient is with respect to the probabilities.
pub fn loss_class(preds: &[CellTarget], targets: &[CellTarget]) -> Result<Loss> {
    check(preds, targets)?;
    let mut grad = zero_grad(preds);
    let mut value = 0.0;
    for ((p, t), g) in preds.iter().zip(targets).zip(grad.iter_mut()) {
        for (c, (&pc, &tc)) in p.class_probs.iter().zip(&t.class_probs).enumerate() {
            if tc == 0.0 {
                continue;
            }
            let clamped = pc.clamp(PROB_FLOOR, 1.0);
            value -= tc * clamped.ln();
            if pc > PROB_FLOOR && pc < 1.0 {
                g.class_probs[c] = -tc / pc;
            }
        }
    }
    Ok(Loss { value, grad })
}

/// Softmax cross entropy evaluated from logits; the gradient is with respect
/// to the logits (`softmax − target`).
pub fn loss_class_logits(logits: &[Vec<f64>], targets: &[CellTarget]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != targets.len() {
        return Err(Error::InvalidConfig("logit/target count mismatch".into()));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, t) in logits.iter().zip(targets) {
        if z.len() != t.class_probs.len() {
            return Err(Error::InvalidConfig("class count mismatch".into()));
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let mut g = Vec::with_capacity(z.len());
        let mass: f64 = t.class_probs.iter().sum();
        for (&zc, &tc) in z.iter().zip(&t.class_probs) {
            value -= tc * (zc - lse);
            g.push((zc - lse).exp() * mass - tc);
        }
        grads.push(g);
    }
    Ok((value, grads))
}

/// L1 on `(w, h, Δu_b, Δv_b)`.
pub fn loss_box2d(preds: &[CellTarget], targets: &[CellTarget]) -> Result<Loss> {
    l1_over_fg(
        preds,
        targets,
        |c| [c.w2d, c.h2d, c.du_b, c.dv_b],
        |g, d| {
            [g.w2d, g.h2d, g.du_b, g.dv_b] = d;
        },
    )
}

/// L1 on instance depth.
pub fn loss_depth(preds: &[CellTarget], targets: &[CellTarget]) -> Result<Loss> {
    l1_over_fg(preds, targets, |c| [c.z_c], |g, d| g.z_c = d[0])
}

/// L1 on the projected-center residuals `(Δu_c, Δv_c)`.
pub fn loss_center(preds: &[CellTarget], targets: &[CellTarget]) -> Result<Loss> {
    l1_over_fg(
        preds,
        targets,
        |c| [c.du_c, c.dv_c],
        |g, d| {
            [g.du_c, g.dv_c] = d;
        },
    )
}

/// Component-wise L1 over the eight local corners.
pub fn loss_corners(preds: &[CellTarget], targets: &[CellTarget]) -> Result<Loss> {
    l1_over_fg(preds, targets, |c| corners_flat(&c.corners), |g, d| g.corners = corners_from_flat(d))
}

/// Component-wise L1 between the predicted center refinement and the target
/// stored in `targets[i].delta_center`.
pub fn loss_refine_center(preds: &[CellTarget], targets: &[CellTarget]) -> Result<Loss> {
    l1_over_fg(
        preds,
        targets,
        |c| c.delta_center.to_array(),
        |g, d| g.delta_center = Point3D::from_array(d),
    )
}

/// Component-wise L1 between predicted corner refinements and
/// `targets[i].delta_corners`.
pub fn loss_refine_corners(preds: &[CellTarget], targets: &[CellTarget]) -> Result<Loss> {
    l1_over_fg(
        preds,
        targets,
        |c| corners_flat(&c.delta_corners),
        |g, d| g.delta_corners = corners_from_flat(d),
    )
}

/// Both refinement losses, `(L_ΔC, L_ΔO)`.
pub fn loss_refine(preds: &[CellTarget], targets: &[CellTarget]) -> Result<(Loss, Loss)> {
    Ok((loss_refine_center(preds, targets)?, loss_refine_corners(preds, targets)?))
}

/// Fully supervised refinement targets for one cell: the residuals between
/// the ground-truth box and the cell's coarse prediction.
pub fn refine_target_supervised(
    pred: &CellTarget,
    g: ProjectedCenter,
    k: &CameraIntrinsics,
    gt: &Box3D,
) -> Result<(Point3D, LocalCorners)> {
    let coarse = coarse_center(pred, g, k)?;
    Ok((gt.center - coarse, gt.corners() - pred.corners))
}

/// Weakly supervised refinement targets: the first-order center correction
/// and the residual to the teacher-derived corners.
pub fn refine_target_weak(
    pred: &CellTarget,
    first_order_delta: Point3D,
    teacher_corners: &LocalCorners,
) -> (Point3D, LocalCorners) {
    (first_order_delta, *teacher_corners - pred.corners)
}

/// Per-term multipliers applied when summing. All default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub class: f64,
    pub box2d: f64,
    pub depth: f64,
    pub center: f64,
    pub corners: f64,
    pub refine_center: f64,
    pub refine_corners: f64,
    pub accel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            class: 1.0,
            box2d: 1.0,
            depth: 1.0,
            center: 1.0,
            corners: 1.0,
            refine_center: 1.0,
            refine_corners: 1.0,
            accel: 1.0,
        }
    }
}

/// The individual loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class: f64,
    pub box2d: f64,
    pub depth: f64,
    pub center: f64,
    pub corners: f64,
    pub refine_center: f64,
    pub refine_corners: f64,
    pub accel: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Components in the order `[L_P, L_B2D, L_Zc, L_c, L_O, L_ΔC, L_ΔO, L_a]`.
    pub fn from_components(c: [f64; 8], w: &LossWeights) -> Self {
        let mut b = LossBreakdown {
            class: c[0],
            box2d: c[1],
            depth: c[2],
            center: c[3],
            corners: c[4],
            refine_center: c[5],
            refine_corners: c[6],
            accel: c[7],
            total: 0.0,
        };
        b.total = w.class * b.class
            + w.box2d * b.box2d
            + w.depth * b.depth
            + w.center * b.center
            + w.corners * b.corners
            + w.refine_center * b.refine_center
            + w.refine_corners * b.refine_corners
            + w.accel * b.accel;
        b
    }

    pub fn components(&self) -> [f64; 8] {
        [
            self.class,
            self.box2d,
            self.depth,
            self.center,
            self.corners,
            self.refine_center,
            self.refine_corners,
            self.accel,
        ]
    }
}

/// Evaluates every per-cell loss and sums them. `accel` is the acceleration
/// term computed separately over tracks (zero when no video is available).
pub fn loss_total(
    preds: &[CellTarget],
    targets: &[CellTarget],
    accel: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let (rc, ro) = loss_refine(preds, targets)?;
    Ok(LossBreakdown::from_components(
        [
            loss_class(preds, targets)?.value,
            loss_box2d(preds, targets)?.value,
            loss_depth(preds, targets)?.value,
            loss_center(preds, targets)?.value,
            loss_corners(preds, targets)?.value,
            rc.value,
            ro.value,
            accel,
        ],
        weights,
    ))
}
