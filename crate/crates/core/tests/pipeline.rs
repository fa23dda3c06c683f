mod support;

use rand::Rng;
use ripnerf_core::data::{load_blender, make_multiscale, toy_scene, write_blender, Split, ToyScene, ToySpec};
use ripnerf_core::field::FieldConfig;
use ripnerf_core::geometry::{Ray, Vec3};
use ripnerf_core::render::{composite, march, OccupancyConfig, OccupancyGrid, RenderConfig};
use ripnerf_core::train::{adamw_step, AdamWConfig, Checkpoint, CheckpointError, Moments, TrainConfig, TrainSet, Trainer};
use support::*;

fn tiny_spec() -> ToySpec {
    ToySpec { train_views: 4, eval_views: 2, resolution: 16, ..ToySpec::default() }
}

fn tiny_field() -> FieldConfig {
    FieldConfig { grid_h: 16, grid_w: 16, channels: 4, mlp_width: 16, ..FieldConfig::default() }
}

fn tiny_render() -> RenderConfig {
    RenderConfig {
        steps: 64,
        occupancy: OccupancyConfig { resolution: 16, warmup: 2, update_every: 2, ..OccupancyConfig::default() },
        chunk_rays: 32,
        ..RenderConfig::default()
    }
}

fn tiny_train(iterations: u64) -> TrainConfig {
    TrainConfig { iterations, batch_rays: 64, seed: 5, ..TrainConfig::default() }
}

#[test]
fn march_matches_filtered_uniform_tiling() {
    let mut grid = OccupancyGrid::new(12, 1.5);
    let cell = 3.0 / 12.0;
    let occupied: Vec<bool> = (0..grid.len()).map(|i| ((i % 12) as f64 + 0.5) * cell - 1.5 < 0.0).collect();
    grid.set_state(occupied, vec![0.0; grid.len()]).unwrap();
    let mut g = rng(31);
    for _ in 0..50 {
        let origin = Vec3::new(g.random_range(-3.0..3.0), g.random_range(-3.0..3.0), -4.0);
        let target = Vec3::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0), g.random_range(-1.0..1.0));
        let ray = Ray::new(origin, (target - origin) * g.random_range(0.5..2.0), 1e-3).unwrap();
        let step = 0.05;
        let got = march(&ray, &grid, step, 10_000, 1e-3);

        let d = ray.direction;
        let (a, b, c) = (d.dot(&d), 2.0 * ray.origin.dot(&d), ray.origin.dot(&ray.origin) - 2.25);
        let disc = b * b - 4.0 * a * c;
        let mut want = Vec::new();
        if disc > 0.0 {
            let t0 = ((-b - disc.sqrt()) / (2.0 * a)).max(1e-3);
            let t1 = (-b + disc.sqrt()) / (2.0 * a);
            let dt = step / d.norm();
            let mut k = 0;
            while t0 + k as f64 * dt < t1 {
                let lo = t0 + k as f64 * dt;
                let hi = (t0 + (k + 1) as f64 * dt).min(t1);
                let p = ray.at(0.5 * (lo + hi));
                // Midpoints of the chord lie inside the sphere, so only the
                // half-space test remains.
                if p.x < 0.0 && hi > lo {
                    want.push((lo, hi));
                }
                k += 1;
            }
        }
        assert_eq!(got.len(), want.len());
        for (iv, (lo, hi)) in got.iter().zip(&want) {
            assert!((iv.t_near - lo).abs() < 1e-12 && (iv.t_far - hi).abs() < 1e-12);
        }
    }
}

#[test]
fn occupancy_refresh_is_sound_for_a_ball() {
    let mut grid = OccupancyGrid::new(16, 1.5);
    let density = |ps: &[Vec3]| ps.iter().map(|p| if p.norm() < 0.6 { 10.0 } else { 0.0 }).collect::<Vec<_>>();
    grid.refresh(density, 0.95, 0.01, &mut rng(32));
    let cell = grid.cell_size();
    for i in 0..grid.len() {
        let lo = grid.cell_min_corner(i);
        let hi = lo + Vec3::repeat(cell);
        let nearest = Vec3::new(0.0f64.clamp(lo.x, hi.x), 0.0f64.clamp(lo.y, hi.y), 0.0f64.clamp(lo.z, hi.z));
        let farthest = Vec3::new(lo.x.abs().max(hi.x.abs()), lo.y.abs().max(hi.y.abs()), lo.z.abs().max(hi.z.abs()));
        if nearest.norm() >= 0.6 {
            assert!(!grid.is_occupied(i), "cell {i} has no density but is occupied");
        }
        if farthest.norm() < 0.6 {
            assert!(grid.is_occupied(i), "cell {i} is filled but unoccupied");
        }
    }
}

#[test]
fn toy_trace_agrees_with_numerical_compositing() {
    let spec = ToySpec { resolution: 12, ..ToySpec::default() };
    let scene = ToyScene::new(spec.clone()).unwrap();
    let grid = OccupancyGrid::new(8, spec.scene_radius);
    let cam = spec.cameras(Split::Train).unwrap()[3];
    let step = 2.0 * 3f64.sqrt() * spec.scene_radius / 4096.0;
    let mut mae = 0.0;
    let mut n = 0;
    for row in 0..12 {
        for col in 0..12 {
            for (su, sv) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let ray = cam.ray_through(col as f64 + su, row as f64 + sv);
                let ivs = march(&ray, &grid, step, 1 << 20, 1e-3);
                let mids: Vec<Vec3> = ivs.iter().map(|iv| ray.at(iv.mid())).collect();
                let density: Vec<f64> = mids.iter().map(|p| scene.density(p)).collect();
                let delta: Vec<f64> = ivs.iter().map(|iv| iv.width() * ray.direction.norm()).collect();
                let color: Vec<[f64; 3]> = mids.iter().map(|p| scene.color(p)).collect();
                let numeric = composite(&density, &delta, &color, [0.0; 3], 0.0);
                let (exact, alpha) = scene.trace(&ray);
                for k in 0..3 {
                    mae += (numeric.color[k] - exact[k]).abs();
                }
                mae += (numeric.opacity - alpha).abs();
                n += 4;
            }
        }
    }
    let mae = mae / n as f64;
    assert!(mae < 0.005, "mae {mae}");
}

#[test]
fn coarse_view_equals_downsampled_fine_view() {
    let spec = ToySpec { resolution: 64, ..ToySpec::striped() };
    let scene = ToyScene::new(spec.clone()).unwrap();
    let cam = spec.cameras(Split::Eval).unwrap()[0];
    let fine = scene.render(&cam, 8).box_downsample(8).unwrap();
    let coarse = scene.render(&cam.scaled(8).unwrap(), 64);
    let mae = fine.mean_abs_diff(&coarse).unwrap();
    assert!(mae < 0.01, "mae {mae}");
}

#[test]
fn blender_round_trip() {
    let (train, _, _) = toy_scene(&tiny_spec()).unwrap();
    let multi = make_multiscale(&train, &[1, 2]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_blender(&multi, dir.path()).unwrap();
    let a = load_blender(dir.path(), Split::Train, 1.5).unwrap();
    assert_eq!(a.views.len(), multi.views.len());
    for (x, y) in a.views.iter().zip(&multi.views) {
        assert_eq!(x.scale, y.scale);
        let (kx, ky) = (&x.camera.intrinsics, &y.camera.intrinsics);
        assert_eq!((kx.width, kx.height), (ky.width, ky.height));
        for (p, q) in [kx.fx, kx.fy, kx.cx, kx.cy].iter().zip([ky.fx, ky.fy, ky.cx, ky.cy]) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((x.camera.rotation - y.camera.rotation).abs().max() < 1e-12);
        assert!((x.camera.translation - y.camera.translation).abs().max() < 1e-12);
        // 8-bit storage.
        assert!(x.image.mean_abs_diff(&y.image).unwrap() < 1.0 / 255.0);
    }
    let dir2 = tempfile::tempdir().unwrap();
    write_blender(&a, dir2.path()).unwrap();
    let b = load_blender(dir2.path(), Split::Train, 1.5).unwrap();
    for (x, y) in a.views.iter().zip(&b.views) {
        assert_eq!(x.image, y.image);
    }
}

#[test]
fn adamw_first_step_matches_reference() {
    let cfg = AdamWConfig::default();
    let mut p = [0.5];
    let mut m = Moments::zeros(1);
    adamw_step(&mut p, &[1.0], &mut m, 1e-3, 1, &cfg);
    // m̂ = v̂ = 1 after bias correction.
    let want = 0.5 * (1.0 - 1e-3 * cfg.weight_decay) - 1e-3 * 1.0 / (1.0 + cfg.eps);
    assert!((p[0] - want).abs() < 1e-12);
    assert!((p[0] - 0.5 + 1e-3).abs() < 1e-8);

    let mut g = rng(33);
    let mut x: Vec<f64> = (0..10).map(|_| g.random_range(-1.0..1.0)).collect();
    let mut r = x.clone();
    let (mut rm, mut rv) = (vec![0.0; 10], vec![0.0; 10]);
    let mut mom = Moments::zeros(10);
    for step in 1..=5u64 {
        let grad: Vec<f64> = (0..10).map(|_| g.random_range(-1.0..1.0)).collect();
        adamw_step(&mut x, &grad, &mut mom, 1e-2, step, &cfg);
        for i in 0..10 {
            r[i] -= 1e-2 * cfg.weight_decay * r[i];
            rm[i] = 0.9 * rm[i] + 0.1 * grad[i];
            rv[i] = 0.999 * rv[i] + 0.001 * grad[i] * grad[i];
            let mh = rm[i] / (1.0 - 0.9f64.powi(step as i32));
            let vh = rv[i] / (1.0 - 0.999f64.powi(step as i32));
            r[i] -= 1e-2 * mh / (vh.sqrt() + cfg.eps);
        }
    }
    for (a, b) in x.iter().zip(&r) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn resume_reproduces_uninterrupted_training() {
    let (train, _, _) = toy_scene(&tiny_spec()).unwrap();
    let set = TrainSet::new(&make_multiscale(&train, &[1, 2]).unwrap(), [1.0; 3]);

    let mut full = Trainer::new(tiny_field(), tiny_train(10), tiny_render()).unwrap();
    let full_losses: Vec<f64> = (0..10).map(|_| full.step(&set).unwrap().loss).collect();

    let mut first = Trainer::new(tiny_field(), tiny_train(10), tiny_render()).unwrap();
    let mut losses: Vec<f64> = (0..5).map(|_| first.step(&set).unwrap().loss).collect();
    let bytes = first.checkpoint(first.config_json()).to_bytes();
    let ck = Checkpoint::from_bytes(&bytes, Some(&tiny_field())).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ck, tiny_train(10), tiny_render()).unwrap();
    losses.extend((0..5).map(|_| resumed.step(&set).unwrap().loss));

    for (a, b) in losses.iter().zip(&full_losses) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    assert_eq!(resumed.field(), full.field());
    assert_eq!(resumed.grid(), full.grid());
    assert_eq!(resumed.checkpoint(String::new()).to_bytes(), full.checkpoint(String::new()).to_bytes());
}

#[test]
fn checkpoint_corruption_is_reported() {
    let t = Trainer::new(tiny_field(), tiny_train(1), tiny_render()).unwrap();
    let bytes = t.checkpoint(t.config_json()).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes, Some(&tiny_field())).is_ok());
    for cut in [0, 3, 20, 60, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut], None).unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic | CheckpointError::Truncated(_)), "cut {cut}: {err}");
    }
    let mut v = bytes.clone();
    v[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&v, None), Err(CheckpointError::Version(_))));
    let other = FieldConfig { channels: 2, ..tiny_field() };
    assert!(matches!(Checkpoint::from_bytes(&bytes, Some(&other)), Err(CheckpointError::ConfigMismatch)));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra, None).is_err());
}

#[test]
fn repeated_steps_on_one_batch_reduce_the_loss() {
    let (train, _, _) = toy_scene(&tiny_spec()).unwrap();
    let set = TrainSet::new(&train, [1.0; 3]);
    let mut t = Trainer::new(tiny_field(), tiny_train(20), tiny_render()).unwrap();
    let batch = t.sample_batch(&set).unwrap();
    let first = t.step_batch(&batch).unwrap().loss;
    let mut last = first;
    for _ in 0..19 {
        last = t.step_batch(&batch).unwrap().loss;
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}
