mod support;

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::Rng;
use ripnerf_core::field::{sh_encode, FieldConfig, FieldGrad, RadianceField, SH_DIM};
use ripnerf_core::geometry::{cone_cast_gaussian, FrustumInterval, Ray, Vec3};
use ripnerf_core::render::{composite, composite_backward, OccupancyGrid, RenderConfig};
use ripnerf_core::ripmap::{FeatureGrid, Ripmap, RipmapQuery};
use ripnerf_core::train::{loss_and_grad, Batch, LossKind};
use support::*;

fn small_field(seed: u64, width: usize) -> RadianceField {
    let cfg = FieldConfig { grid_h: 8, grid_w: 8, channels: 4, mlp_width: width, grid_init: 0.5, ..FieldConfig::default() };
    RadianceField::new(cfg, &mut rng(seed)).unwrap()
}

#[test]
fn query_backward_matches_finite_differences() {
    let mut g = rng(21);
    let mut rm = Ripmap::build(FeatureGrid::uniform(8, 8, 3, 1.0, &mut g).unwrap());
    for _ in 0..10 {
        let q = RipmapQuery { pos: [g.random(), g.random()], level: [g.random_range(0.0..3.0), g.random_range(0.0..3.0)] };
        let up: Vec<f64> = (0..3).map(|_| g.random_range(-1.0..1.0)).collect();
        let sparse = rm.query_backward(&q, &up).unwrap();

        let mut dense = vec![0.0; rm.pyramid_len()];
        rm.scatter(&rm.stencil(&q), &up, &mut dense);
        rm.reduce_pyramid_grad(&mut dense);
        for &(i, v) in &sparse {
            assert!((dense[i] - v).abs() < 1e-14);
        }

        for &(i, analytic) in &sparse {
            let x0 = rm.base().values()[i];
            let fd = central_diff(
                |x| {
                    rm.base_values_mut()[i] = x;
                    rm.refresh();
                    rm.query(&q).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
                },
                x0,
                1e-5,
            );
            rm.base_values_mut()[i] = x0;
            rm.refresh();
            assert!(rel_err(analytic, fd) < 1e-6, "cell {i}: {analytic} vs {fd}");
        }
    }
}

#[test]
fn decode_gradients_match_finite_differences() {
    let mut field = small_field(22, 16);
    let ray = Ray::new(Vec3::new(0.2, -0.1, -3.0), Vec3::new(0.05, 0.02, 1.0), 0.01).unwrap();
    let gauss = cone_cast_gaussian(&ray, &FrustumInterval::new(2.9, 3.0).unwrap());
    let sh_row = sh_encode(&ray.direction).unwrap();
    let sh = Array2::from_shape_vec((1, SH_DIM), sh_row.to_vec()).unwrap();
    let (wd, wc) = (0.3, [0.7, -0.4, 0.2]);
    let objective = |f: &RadianceField, feat: &[f64]| {
        let s = f.decode(feat, &ray.direction).unwrap();
        wd * s.density + (0..3).map(|c| wc[c] * s.color[c]).sum::<f64>()
    };

    let fwd = field.forward_batch(&[gauss], sh.view());
    let mut grad = FieldGrad::zeros(&field);
    let d_feat = field.backward_with_features(&fwd, &Array1::from_elem(1, wd), &Array2::from_shape_vec((1, 3), wc.to_vec()).unwrap(), &mut grad);
    let feature = field.featurize(&gauss);

    for (i, &analytic) in d_feat.row(0).iter().enumerate() {
        let mut f = feature.clone();
        let fd = central_diff(
            |x| {
                f[i] = x;
                objective(&field, &f)
            },
            feature[i],
            1e-6,
        );
        assert!(rel_err(analytic, fd) < 1e-5 || (analytic - fd).abs() < 1e-10, "input {i}: {analytic} vs {fd}");
    }

    let grads: Vec<Vec<f64>> = grad.mlp.slices().iter().map(|s| s.to_vec()).collect();
    let mut g = rng(23);
    for (t, gs) in grads.iter().enumerate() {
        for _ in 0..8 {
            let i = g.random_range(0..gs.len());
            let x0 = field.mlp().slices()[t][i];
            let fd = central_diff(
                |x| {
                    field.mlp_mut().slices_mut()[t][i] = x;
                    objective(&field, &feature)
                },
                x0,
                1e-6,
            );
            field.mlp_mut().slices_mut()[t][i] = x0;
            assert!(rel_err(gs[i], fd) < 1e-5 || (gs[i] - fd).abs() < 1e-10, "tensor {t}[{i}]: {} vs {fd}", gs[i]);
        }
    }
}

#[test]
fn compositing_gradients_match_finite_differences() {
    let mut g = rng(24);
    for _ in 0..20 {
        let n = 8;
        let density: Vec<f64> = (0..n).map(|_| g.random_range(0.0..1.5)).collect();
        let delta: Vec<f64> = (0..n).map(|_| g.random_range(0.05..0.4)).collect();
        let color: Vec<[f64; 3]> = (0..n).map(|_| [g.random(), g.random(), g.random()]).collect();
        let bg = [g.random(), g.random(), g.random()];
        let dc = [g.random_range(-1.0..1.0), g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)];
        let dop = g.random_range(-1.0..1.0);
        let objective = |d: &[f64], c: &[[f64; 3]]| {
            let r = composite(d, &delta, c, bg, 0.0);
            (0..3).map(|k| dc[k] * r.color[k]).sum::<f64>() + dop * r.opacity
        };
        let fwd = composite(&density, &delta, &color, bg, 0.0);
        let (g_tau, g_col) = composite_backward(&fwd, &delta, &color, bg, dc, dop);
        for k in 0..n {
            let mut d = density.clone();
            let fd = central_diff(
                |x| {
                    d[k] = x;
                    objective(&d, &color)
                },
                density[k],
                1e-6,
            );
            assert!(rel_err(g_tau[k], fd) < 1e-6 || (g_tau[k] - fd).abs() < 1e-11, "density {k}: {} vs {fd}", g_tau[k]);
            for ch in 0..3 {
                let mut c = color.clone();
                let fd = central_diff(
                    |x| {
                        c[k][ch] = x;
                        objective(&density, &c)
                    },
                    color[k][ch],
                    1e-6,
                );
                assert!(rel_err(g_col[k][ch], fd) < 1e-6 || (g_col[k][ch] - fd).abs() < 1e-11);
            }
        }
    }
}

/// Parameters addressed as (group, tensor, index): group 0 is the MLP,
/// group 1 the ripmap base grids.
fn get(field: &RadianceField, p: (usize, usize, usize)) -> f64 {
    match p.0 {
        0 => field.mlp().slices()[p.1][p.2],
        _ => field.ripmaps()[p.1].base().values()[p.2],
    }
}

fn set(field: &mut RadianceField, p: (usize, usize, usize), v: f64) {
    match p.0 {
        0 => field.mlp_mut().slices_mut()[p.1][p.2] = v,
        _ => {
            field.ripmaps_mut()[p.1].base_values_mut()[p.2] = v;
            field.refresh();
        }
    }
}

/// Pick `count` parameters per group at random among those whose gradient
/// is not negligible.
fn pick(grad: &FieldGrad, field: &RadianceField, count: usize, seed: u64) -> Vec<((usize, usize, usize), f64)> {
    let mut out = Vec::new();
    let groups: [Vec<Vec<f64>>; 2] = [grad.mlp.slices().iter().map(|s| s.to_vec()).collect(), grad.base_grads(field)];
    let mut g = rng(seed);
    for (gi, tensors) in groups.iter().enumerate() {
        let max = tensors.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut cands = Vec::new();
        for (t, ts) in tensors.iter().enumerate() {
            for (i, v) in ts.iter().enumerate() {
                if v.abs() > 1e-3 * max {
                    cands.push(((gi, t, i), *v));
                }
            }
        }
        out.extend(cands.choose_multiple(&mut g, count).cloned());
    }
    out
}

#[test]
fn pixel_loss_gradient_matches_finite_differences() {
    let mut field = small_field(25, 16);
    let grid = OccupancyGrid::new(8, 1.5);
    let render = RenderConfig { steps: 48, early_stop: 0.0, background: [1.0; 3], ..RenderConfig::default() };
    let ray = Ray::new(Vec3::new(0.3, 0.2, -4.0), Vec3::new(-0.05, -0.02, 1.0), 0.004).unwrap();
    let batch = Batch { rays: vec![ray], targets: vec![[0.2, 0.6, 0.4]], alphas: vec![1.0], ratios: vec![2.0] };
    let loss = |f: &RadianceField| loss_and_grad(f, &grid, &batch, &render, LossKind::AreaWeightedL2, 0.5).0.loss;
    let (_, grad) = loss_and_grad(&field, &grid, &batch, &render, LossKind::AreaWeightedL2, 0.5);
    let picks = pick(&grad, &field, 20, 26);
    assert_eq!(picks.len(), 40);
    for (p, analytic) in picks {
        let x0 = get(&field, p);
        let fd = central_diff(
            |x| {
                set(&mut field, p, x);
                loss(&field)
            },
            x0,
            1e-6,
        );
        set(&mut field, p, x0);
        assert!(rel_err(analytic, fd) < 1e-4, "{p:?}: {analytic} vs {fd}");
    }
}
