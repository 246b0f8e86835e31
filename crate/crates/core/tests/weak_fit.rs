use mono3d_core::grid::{assign, GridSpec};
use mono3d_core::synth::{generate_dataset, generate_scene, generate_track, perturb_detections, ClassSpec, DetectionNoise};
use mono3d_core::weak::{acceleration_loss, box2d_residual, first_order_delta, pseudo_depth, AccelConfig};
use mono3d_core::{
    box3d_to_box2d, fit_geogl, normalize_angle, fit_min_proj_err, project, Box2D, Box3D, ClassPrior, FitConfig, Orientation, Point3D,
    SceneConfig, Track,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn residual_triple(gt: &Box2D, est: &Box3D, k: &mono3d_core::CameraIntrinsics) -> f64 {
    let r = box2d_residual(gt, &box3d_to_box2d(est, k).unwrap());
    r.u.abs() + r.v.abs() + r.h.abs()
}

fn varied_sizes() -> SceneConfig {
    let mut cfg = SceneConfig::default();
    for c in &mut cfg.classes {
        c.spread = 0.15;
    }
    cfg
}

#[test]
fn pseudo_depth_recovers_segment_depth() {
    let cfg = SceneConfig::default();
    let k = cfg.camera().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (h, z) = (rng.random_range(0.5..4.0), rng.random_range(2.0..90.0));
        let (x, y) = (rng.random_range(-10.0..10.0), rng.random_range(-1.0..2.0));
        let top = project(Point3D::new(x, y - h, z), &k).unwrap();
        let bottom = project(Point3D::new(x, y, z), &k).unwrap();
        let b = Box2D::from_edges(top.u - 10.0, top.v, top.u + 10.0, bottom.v);
        let prior = ClassPrior::new("Car", mono3d_core::BoxSize::new(3.9, 1.6, h)).unwrap();
        assert!((pseudo_depth(&b, &prior, &k).unwrap() / z - 1.0).abs() < 1e-12);
    }
}

#[test]
fn relative_depth_error_transfers_from_height() {
    let cfg = varied_sizes();
    let k = cfg.camera().unwrap();
    let priors = cfg.priors();
    for frame in generate_dataset(&cfg, 50).unwrap() {
        for o in &frame.objects {
            // nearest vertical edge of the box, projected exactly
            let near = o.absolute_corners().into_iter().min_by(|a, b| a.z.total_cmp(&b.z)).unwrap();
            let top = project(Point3D::new(near.x, o.center.y - 0.5 * o.size.h, near.z), &k).unwrap();
            let bottom = project(Point3D::new(near.x, o.center.y + 0.5 * o.size.h, near.z), &k).unwrap();
            let b = Box2D::from_edges(top.u - 5.0, top.v, top.u + 5.0, bottom.v);
            let prior = priors.get(&o.class_name).unwrap();
            let rel = (pseudo_depth(&b, &prior, &k).unwrap() - near.z).abs() / near.z;
            assert!((rel - (prior.height() / o.size.h - 1.0).abs()).abs() < 1e-6);
        }
    }
}

#[test]
fn first_order_step_reduces_residual() {
    let cfg = SceneConfig::default();
    let k = cfg.camera().unwrap();
    let priors = cfg.priors();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut total, mut improved) = (0, 0);
    for frame in generate_dataset(&cfg, 100).unwrap() {
        for (o, gt) in frame.objects.iter().zip(&frame.boxes2d) {
            let z = o.center.z;
            let off = Point3D::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let est = Box3D { center: o.center + off * (0.05 * z / off.norm() * rng.random::<f64>()), ..o.clone() };
            let prior = priors.get(&o.class_name).unwrap();
            let d = first_order_delta(&est, gt, &prior, &k).unwrap();
            let next = Box3D { center: est.center + d, ..est.clone() };
            total += 1;
            if residual_triple(gt, &next, &k) < residual_triple(gt, &est, &k) {
                improved += 1;
            }
        }
    }
    assert!(improved as f64 >= 0.95 * total as f64, "{improved}/{total}");
}

#[test]
fn geogl_drives_residual_below_half_pixel() {
    let cfg = SceneConfig::default();
    let k = cfg.camera().unwrap();
    let priors = cfg.priors();
    for frame in generate_dataset(&cfg, 50).unwrap() {
        for (o, gt) in frame.objects.iter().zip(&frame.boxes2d) {
            let prior = priors.get(&o.class_name).unwrap();
            let report = fit_geogl(gt, Orientation::Yaw(o.yaw), &prior, &k, &FitConfig::default()).unwrap();
            assert!(residual_triple(gt, &report.box3d, &k) < 0.5, "{o:?}: {}", report.objective);
            assert!(report.objective <= report.history[0]);
        }
    }
}

#[test]
fn geogl_without_iterations_is_the_pseudo_label() {
    let cfg = SceneConfig::default();
    let k = cfg.camera().unwrap();
    let frame = generate_scene(&cfg, 2).unwrap();
    let prior = cfg.priors().get(&frame.objects[0].class_name).unwrap();
    let zero = FitConfig { max_iters: 0, ..FitConfig::default() };
    let report = fit_geogl(&frame.boxes2d[0], Orientation::Yaw(0.3), &prior, &k, &zero).unwrap();
    let label = mono3d_core::weak::pseudo_label(&frame.boxes2d[0], 0.3, &prior, &k).unwrap();
    assert_eq!(report.box3d, label);
    assert_eq!(report.iterations, 0);
}

#[test]
fn minproj_recovers_noiseless_centers() {
    let cfg = SceneConfig::default();
    let k = cfg.camera().unwrap();
    let priors = cfg.priors();
    let (mut total, mut ok) = (0, 0);
    for frame in generate_dataset(&cfg, 100).unwrap() {
        for (o, gt) in frame.objects.iter().zip(&frame.boxes2d) {
            let prior = priors.get(&o.class_name).unwrap();
            let init = mono3d_core::weak::pseudo_label(gt, o.yaw, &prior, &k).unwrap().center;
            let report = fit_min_proj_err(gt, o.yaw, &prior, &k, init, &FitConfig::default()).unwrap();
            total += 1;
            if (report.box3d.center - o.center).norm() < 1e-2 {
                ok += 1;
            }
        }
    }
    assert!(ok as f64 >= 0.99 * total as f64, "{ok}/{total}");
}

#[test]
fn generated_tracks_cost_nothing_below_threshold() {
    let cfg = SceneConfig::default();
    let accel = AccelConfig::default();
    for seed in 0..50 {
        let (_, tracks) = generate_track(&cfg, seed, 12, 0.1, accel.alpha_a).unwrap();
        assert_eq!(acceleration_loss(&tracks, &accel).unwrap().value, 0.0);
    }
}

#[test]
fn constant_velocity_tracks_have_zero_acceleration() {
    let cfg = SceneConfig::default();
    let (frames, tracks) = generate_track(&cfg, 4, 10, 0.1, 0.0).unwrap();
    assert_eq!(frames.len(), 10);
    for t in &tracks {
        for a in mono3d_core::weak::track_accelerations(t) {
            assert!(a.norm() < 1e-9);
        }
    }
}

#[test]
fn finite_difference_accelerations_respect_bound() {
    let cfg = SceneConfig::default();
    let (frames, _) = generate_track(&cfg, 9, 15, 0.1, 0.25).unwrap();
    for i in 0..frames[0].objects.len() {
        for w in frames.windows(3) {
            let c: Vec<Point3D> = w.iter().map(|f| f.objects[i].center).collect();
            let a = (c[0] - c[1] * 2.0 + c[2]) * (1.0 / 0.01);
            assert!(a.norm() <= 0.25 + 1e-9, "{}", a.norm());
        }
    }
}

#[test]
fn extreme_tracks_are_clipped() {
    let accel = AccelConfig::default();
    let centers: Vec<Point3D> = (0..6).map(|i| Point3D::new(if i % 2 == 0 { 0.0 } else { 5.0 }, 1.0, 20.0)).collect();
    let track = Track { id: 0, frames: (0..6).collect(), times: (0..6).map(|i| i as f64 * 0.1).collect(), centers };
    let loss = acceleration_loss(&[track], &accel).unwrap();
    assert_eq!(loss.value, 4.0 * accel.beta_a);
    assert!(loss.grad[0].iter().all(|g| *g == Point3D::ZERO));
}

proptest! {
    #[test]
    fn acceleration_loss_ignores_constant_velocity(
        seed in 0u64..1000, vx in -20.0..20.0f64, vy in -2.0..2.0f64, vz in -20.0..20.0f64,
    ) {
        let (_, tracks) = generate_track(&SceneConfig::default(), seed, 8, 0.1, 5.0).unwrap();
        let v = Point3D::new(vx, vy, vz);
        let shifted: Vec<Track> = tracks
            .iter()
            .map(|t| Track { centers: t.centers.iter().zip(&t.times).map(|(c, tt)| *c + v * *tt).collect(), ..t.clone() })
            .collect();
        let cfg = AccelConfig::default();
        let (a, b) = (acceleration_loss(&tracks, &cfg).unwrap(), acceleration_loss(&shifted, &cfg).unwrap());
        prop_assert!((a.value - b.value).abs() <= 1e-9 * a.value.max(1.0));
    }

    #[test]
    fn foreground_grows_with_scope(seed in 0u64..1000, s1 in 1.0..200.0f64, extra in 0.0..200.0f64) {
        let cfg = SceneConfig::default();
        let frame = generate_scene(&cfg, seed).unwrap();
        let grid = GridSpec::kitti(cfg.image_size[0], cfg.image_size[1]).unwrap();
        let objects: Vec<(Box2D, f64)> = frame.boxes2d.iter().zip(&frame.objects).map(|(b, o)| (*b, o.center.z)).collect();
        let small = assign(&objects, &grid, s1).unwrap().foreground();
        let large = assign(&objects, &grid, s1 + extra).unwrap().foreground();
        prop_assert!(small.iter().all(|c| large.contains(c)));
    }

    #[test]
    fn scenes_are_consistent_and_deterministic(seed in 0u64..10_000) {
        let cfg = SceneConfig { noise_px: 1.5, ..varied_sizes() };
        let k = cfg.camera().unwrap();
        let a = generate_scene(&cfg, seed).unwrap();
        prop_assert_eq!(&a, &generate_scene(&cfg, seed).unwrap());
        prop_assert!((cfg.min_objects..=cfg.max_objects).contains(&a.objects.len()));
        for (o, b) in a.objects.iter().zip(&a.boxes2d) {
            prop_assert_eq!(*b, box3d_to_box2d(o, &k).unwrap());
            prop_assert!(o.absolute_corners().iter().all(|c| c.z > 0.0));
        }
        prop_assert_eq!(a.noisy2d.as_ref().map(|n| n.len()), Some(a.objects.len()));
    }
}

#[test]
fn zero_noise_detections_are_the_objects() {
    let frame = generate_scene(&SceneConfig::default(), 5).unwrap();
    let none = DetectionNoise { center_sigma: 0.0, depth_sigma: 0.0, yaw_sigma: 0.0, score_scale: 1.0 };
    let dets = perturb_detections(&frame, &none, 1).unwrap();
    for (d, o) in dets.iter().zip(&frame.objects) {
        assert_eq!(d.center, o.center);
        assert_eq!(d.yaw, o.yaw);
        assert_eq!(d.score, 1.0);
    }
}

#[test]
fn detection_noise_matches_configuration() {
    let cfg = SceneConfig { min_objects: 8, max_objects: 8, ..SceneConfig::default() };
    let noise = DetectionNoise::default();
    let (mut dx, mut dz, mut dyaw) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..1250 {
        let frame = generate_scene(&cfg, seed).unwrap();
        let dets = perturb_detections(&frame, &noise, seed).unwrap();
        assert_eq!(dets, perturb_detections(&frame, &noise, seed).unwrap());
        for (d, o) in dets.iter().zip(&frame.objects) {
            dx.push(d.center.x - o.center.x);
            dz.push(d.center.z - o.center.z);
            dyaw.push(normalize_angle(d.yaw - o.yaw));
        }
    }
    assert!(dx.len() >= 10_000);
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    for (got, want) in [(sd(&dx), noise.center_sigma), (sd(&dz), noise.depth_sigma), (sd(&dyaw), noise.yaw_sigma)] {
        assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
    }
}

#[test]
fn size_spread_is_honoured() {
    let cfg = SceneConfig {
        classes: vec![ClassSpec { name: "Car".into(), mean_size: [3.9, 1.6, 1.56], spread: 0.0 }],
        ..SceneConfig::default()
    };
    for f in generate_dataset(&cfg, 10).unwrap() {
        assert!(f.objects.iter().all(|o| o.size.h == 1.56 && o.class_name == "Car"));
    }
}
