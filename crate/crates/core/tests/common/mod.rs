#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringshift::gauss2d::{rasterize, Gaussian2D, GaussianScene, CULL_MAHALANOBIS_SQ, N_PARAMS};
use ringshift::metrics::LossSpec;
use ringshift::ImageGrid;

/// Sum of every Gaussian over the whole image, ignoring patches.
pub fn global_render(scene: &GaussianScene) -> ImageGrid {
    let (h, w) = (scene.height(), scene.width());
    let mut out = ImageGrid::zeros(3, h, w).unwrap();
    for g in scene.iter() {
        for y in 0..h {
            for x in 0..w {
                let m = g.mahalanobis_sq([x as f64, y as f64], scene.beta());
                if m <= CULL_MAHALANOBIS_SQ {
                    let v = g.value_at([x as f64, y as f64], scene.beta());
                    for c in 0..3 {
                        let cur = out.get(c, y, x);
                        out.set(c, y, x, cur + v[c]);
                    }
                }
            }
        }
    }
    out
}

/// Smallest `|m - 9|` over every pixel of each Gaussian's extended region.
fn cull_margin(scene: &GaussianScene) -> f64 {
    let mut best = f64::INFINITY;
    for (k, list) in scene.patches().iter().enumerate() {
        let (x0, x1, y0, y1) = scene.extended_bounds(k);
        for g in list {
            for y in y0..y1 {
                for x in x0..x1 {
                    let m = g.mahalanobis_sq([x as f64, y as f64], scene.beta());
                    best = best.min((m - CULL_MAHALANOBIS_SQ).abs());
                }
            }
        }
    }
    best
}

/// Random 8x8 scene, 2x2 patches of 4 px with a 1 px margin and one Gaussian
/// per patch, plus a random target. Draws are rejected until no pixel sits
/// within reach of the culling boundary or an L1 kink, so the loss is smooth
/// around the returned point.
pub fn smooth_scene(seed: u64) -> (GaussianScene, ImageGrid) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let patches: Vec<Vec<Gaussian2D>> = (0..4)
            .map(|k| {
                let (ox, oy) = ((k % 2) as f64 * 4.0, (k / 2) as f64 * 4.0);
                vec![Gaussian2D {
                    mu_fix: [ox + r.random_range(-0.5..3.5), oy + r.random_range(-0.5..3.5)],
                    offset_raw: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                    log_l11: r.random_range(0.6f64..2.0).ln(),
                    l21: r.random_range(-0.5..0.5),
                    log_l22: r.random_range(0.6f64..2.0).ln(),
                    color: [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)],
                    opacity: r.random_range(0.2..1.0),
                }]
            })
            .collect();
        let scene = GaussianScene::from_patches(8, 8, 4, 1, 1.0, patches).unwrap();
        let target = ImageGrid::from_vec(3, 8, 8, (0..192).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let render = rasterize(&scene).unwrap().image;
        let kink = render.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min);
        if cull_margin(&scene) > 0.05 && kink > 1e-3 {
            return (scene, target);
        }
    }
}

pub const FD_STEP: f64 = 1e-4;

/// Worst disagreement between analytic and central-difference gradients over
/// every parameter: `(max relative error, parameter index)` where entries with
/// absolute error below `1e-6` count as zero.
pub fn gradient_check(scene: &GaussianScene, target: &ImageGrid, loss: &LossSpec) -> (f64, usize) {
    let (_, _, grads) = ringshift::gauss2d::rasterize_with_grads(scene, target, loss).unwrap();
    let eval = |s: &GaussianScene| loss.value(&rasterize(s).unwrap().image, target).unwrap();
    let mut worst = (0.0, 0);
    for (k, list) in scene.patches().iter().enumerate() {
        for (i, _) in list.iter().enumerate() {
            let analytic = grads.patches[k][i].to_array();
            for j in 0..N_PARAMS {
                let bump = |d: f64| {
                    let mut s = scene.clone();
                    let g = &mut s.patches_mut()[k][i];
                    let mut p = g.params();
                    p[j] += d;
                    g.set_params(&p);
                    eval(&s)
                };
                let numeric = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
                let abs = (analytic[j] - numeric).abs();
                let rel = if abs < 1e-6 { 0.0 } else { abs / analytic[j].abs().max(numeric.abs()) };
                if rel > worst.0 {
                    worst = (rel, j);
                }
            }
        }
    }
    worst
}
