//! Independent reference implementations used to cross-check the library.
#![allow(dead_code)]

use mono3d_core::geometry::Box3D;
use mono3d_core::metrics::{iou, ApInterpolation, IouKind};
use mono3d_core::normalize_angle;

/// xorshift64* generator: fast, reproducible, no shared code with the library.
pub struct XorShift(u64);

impl XorShift {
    pub fn new(seed: u64) -> Self {
        XorShift(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

/// A footprint in its own frame: center, half extents and the rotation that
/// maps world offsets into box coordinates.
struct Footprint {
    cx: f64,
    cz: f64,
    hl: f64,
    hw: f64,
    cos: f64,
    sin: f64,
}

impl Footprint {
    fn new(b: &Box3D) -> Self {
        let (sin, cos) = b.yaw.sin_cos();
        Footprint { cx: b.center.x, cz: b.center.z, hl: 0.5 * b.size.l, hw: 0.5 * b.size.w, cos, sin }
    }

    #[inline]
    fn contains(&self, x: f64, z: f64) -> bool {
        let (dx, dz) = (x - self.cx, z - self.cz);
        // inverse of X = x cos + z sin, Z = −x sin + z cos
        let lx = dx * self.cos - dz * self.sin;
        let lz = dx * self.sin + dz * self.cos;
        lx.abs() <= self.hl && lz.abs() <= self.hw
    }

    /// Axis-aligned bounds `(xmin, xmax, zmin, zmax)`.
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let ex = self.hl * self.cos.abs() + self.hw * self.sin.abs();
        let ez = self.hl * self.sin.abs() + self.hw * self.cos.abs();
        (self.cx - ex, self.cx + ex, self.cz - ez, self.cz + ez)
    }
}

/// Monte-Carlo estimate of the footprint intersection area from jittered
/// stratified samples over the overlap of the two bounding rectangles.
pub fn mc_bev_intersection(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let (fa, fb) = (Footprint::new(a), Footprint::new(b));
    let (a0, a1, a2, a3) = fa.bounds();
    let (b0, b1, b2, b3) = fb.bounds();
    let (x0, x1, z0, z1) = (a0.max(b0), a1.min(b1), a2.max(b2), a3.min(b3));
    if x1 <= x0 || z1 <= z0 {
        return 0.0;
    }
    let n = (samples as f64).sqrt().ceil() as usize;
    let (dx, dz) = ((x1 - x0) / n as f64, (z1 - z0) / n as f64);
    let mut rng = XorShift::new(seed);
    let mut hits = 0u64;
    for i in 0..n {
        let xi = x0 + i as f64 * dx;
        for j in 0..n {
            let x = xi + rng.unit() * dx;
            let z = z0 + (j as f64 + rng.unit()) * dz;
            if fa.contains(x, z) && fb.contains(x, z) {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * n) as f64 * (x1 - x0) * (z1 - z0)
}

pub fn mc_iou_bev(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let inter = mc_bev_intersection(a, b, samples, seed);
    let union = a.size.l * a.size.w + b.size.l * b.size.w - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn score_order(dets: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // insertion sort keeps the oracle free of the library's comparator
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && dets[order[j]].score > dets[order[j - 1]].score {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    order
}

/// Per-detection `(iou, −gt index)` in score order.
type Key = Vec<(f64, i64)>;

/// Matching oracle: among all injective partial assignments of detections
/// to ground truth with IoU ≥ threshold, pick the one whose per-detection
/// IoU sequence (in score order, unmatched = −1) is lexicographically
/// largest, breaking exact ties toward lower ground-truth indices.
/// Returns `(det_index, matched_gt)` in score order.
pub fn brute_force_match(dets: &[Box3D], gts: &[Box3D], thr: f64, kind: IouKind) -> Vec<(usize, Option<usize>)> {
    let order = score_order(dets);
    let ious: Vec<Vec<f64>> = order.iter().map(|&d| gts.iter().map(|g| iou(&dets[d], g, kind)).collect()).collect();

    fn key(seq: &[Option<usize>], ious: &[Vec<f64>]) -> Key {
        seq.iter()
            .enumerate()
            .map(|(r, m)| match m {
                Some(g) => (ious[r][*g], -(*g as i64)),
                None => (-1.0, 0),
            })
            .collect()
    }

    fn better(a: &[(f64, i64)], b: &[(f64, i64)]) -> bool {
        for (x, y) in a.iter().zip(b) {
            if x != y {
                return x.0 > y.0 || (x.0 == y.0 && x.1 > y.1);
            }
        }
        false
    }

    fn recurse(
        r: usize,
        used: &mut Vec<bool>,
        seq: &mut Vec<Option<usize>>,
        ious: &[Vec<f64>],
        thr: f64,
        best: &mut Option<(Key, Vec<Option<usize>>)>,
    ) {
        if r == ious.len() {
            let k = key(seq, ious);
            if best.as_ref().is_none_or(|(bk, _)| better(&k, bk)) {
                *best = Some((k, seq.clone()));
            }
            return;
        }
        for g in 0..used.len() {
            if !used[g] && ious[r][g] >= thr {
                used[g] = true;
                seq.push(Some(g));
                recurse(r + 1, used, seq, ious, thr, best);
                seq.pop();
                used[g] = false;
            }
        }
        seq.push(None);
        recurse(r + 1, used, seq, ious, thr, best);
        seq.pop();
    }

    let mut best = None;
    recurse(0, &mut vec![false; gts.len()], &mut Vec::new(), &ious, thr, &mut best);
    let (_, seq) = best.expect("the empty assignment always exists");
    order.into_iter().zip(seq).collect()
}

fn levels(interp: ApInterpolation) -> Vec<(u64, u64)> {
    match interp {
        ApInterpolation::Points11 => (0..=10).map(|i| (i, 10)).collect(),
        ApInterpolation::Points40 => (1..=40).map(|i| (i, 40)).collect(),
    }
}

/// Interpolated AP straight from the definition: for every recall level,
/// the largest precision over all ranks whose recall reaches it.
pub fn brute_force_ap(flags: &[bool], num_gt: usize, interp: ApInterpolation) -> f64 {
    weighted_brute_force(flags, &vec![1.0; flags.len()], num_gt, interp)
}

/// Same as [`brute_force_ap`] with each true positive weighted by its
/// orientation similarity.
pub fn brute_force_aos(flags: &[bool], similarities: &[f64], num_gt: usize, interp: ApInterpolation) -> f64 {
    weighted_brute_force(flags, similarities, num_gt, interp)
}

fn weighted_brute_force(flags: &[bool], weights: &[f64], num_gt: usize, interp: ApInterpolation) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let lv = levels(interp);
    let mut sum = 0.0;
    for &(i, d) in &lv {
        let mut best = 0.0f64;
        for k in 0..flags.len() {
            let tp = flags[..=k].iter().filter(|&&f| f).count() as u64;
            if tp * d >= i * num_gt as u64 {
                let mut s = 0.0;
                for j in 0..=k {
                    if flags[j] {
                        s += weights[j];
                    }
                }
                best = best.max(s / (k + 1) as f64);
            }
        }
        sum += best;
    }
    sum / lv.len() as f64
}

pub fn similarity(a: f64, b: f64) -> f64 {
    0.5 * (1.0 + normalize_angle(a - b).cos())
}

/// NMS oracle by its fixpoint characterization: a box survives iff no
/// surviving box ranked above it overlaps it at or above the threshold.
pub fn brute_force_nms(dets: &[Box3D], thr: f64, kind: IouKind) -> Vec<Box3D> {
    let order = score_order(dets);
    fn survives(r: usize, order: &[usize], dets: &[Box3D], thr: f64, kind: IouKind, memo: &mut Vec<Option<bool>>) -> bool {
        if let Some(v) = memo[r] {
            return v;
        }
        let v = (0..r).all(|q| !survives(q, order, dets, thr, kind, memo) || iou(&dets[order[q]], &dets[order[r]], kind) < thr);
        memo[r] = Some(v);
        v
    }
    let mut memo = vec![None; order.len()];
    (0..order.len())
        .filter(|&r| survives(r, &order, dets, thr, kind, &mut memo))
        .map(|r| dets[order[r]].clone())
        .collect()
}
