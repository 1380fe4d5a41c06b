use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::GeometricTransform;

use super::GaussianScene;

/// Largest `|tanh(raw)|` written back after a perturbation.
const TANH_LIMIT: f64 = 1.0 - 1e-9;

/// Composite frames this close to the identity are snapped to it.
const FRAME_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerturbDiagnostics {
    /// Offset components that left `[-beta, beta]` and were clamped.
    pub clamped: usize,
    /// Gaussians whose mean left the image.
    pub outside: usize,
}

fn snap(t: GeometricTransform) -> GeometricTransform {
    let id = GeometricTransform::identity();
    let near = (t.translation_x_px - id.translation_x_px).abs() < FRAME_SNAP
        && (t.translation_y_px - id.translation_y_px).abs() < FRAME_SNAP
        && (t.rotation_deg - id.rotation_deg).abs() < FRAME_SNAP
        && (t.scale - id.scale).abs() < FRAME_SNAP;
    if near {
        id
    } else {
        t
    }
}

/// Push every Gaussian through `t`.
///
/// Anchors go through the full map and the bounded offsets through its linear
/// part `A = s R(theta)`, so every mean lands exactly at `t(mu)` unless an
/// offset has to be clamped. Covariances become `A S A^T`. Gaussians keep
/// their patch and the scene frame is composed with `t`, so patch windows and
/// blend weights move with the content.
pub fn perturb_means(scene: &GaussianScene, t: &GeometricTransform) -> Result<(GaussianScene, PerturbDiagnostics)> {
    t.validate()?;
    let mut diag = PerturbDiagnostics::default();
    if t.is_identity() {
        return Ok((scene.clone(), diag));
    }
    let (w, h) = (scene.width(), scene.height());
    let beta = scene.beta();
    let a = t.linear();
    let inside = |p: [f64; 2]| p[0] >= -0.5 && p[0] <= w as f64 - 0.5 && p[1] >= -0.5 && p[1] <= h as f64 - 0.5;
    let mut patches = scene.patches().to_vec();
    for g in patches.iter_mut().flatten() {
        let o = [beta * g.offset_raw[0].tanh(), beta * g.offset_raw[1].tanh()];
        g.mu_fix = t.map_point(g.mu_fix, w, h);
        let o2 = [a[0] * o[0] + a[1] * o[1], a[2] * o[0] + a[3] * o[1]];
        for i in 0..2 {
            let r = o2[i] / beta;
            if r.abs() > TANH_LIMIT {
                diag.clamped += 1;
            }
            g.offset_raw[i] = r.clamp(-TANH_LIMIT, TANH_LIMIT).atanh();
        }
        let (s11, s12, s22) = g.covariance();
        // A S A^T for symmetric S
        let t11 = a[0] * s11 + a[1] * s12;
        let t12 = a[0] * s12 + a[1] * s22;
        let t21 = a[2] * s11 + a[3] * s12;
        let t22 = a[2] * s12 + a[3] * s22;
        let n11 = t11 * a[0] + t12 * a[1];
        let n12 = t11 * a[2] + t12 * a[3];
        let n22 = t21 * a[2] + t22 * a[3];
        let l11 = n11.sqrt();
        let l21 = n12 / l11;
        let l22 = (n22 - l21 * l21).max(0.0).sqrt();
        g.log_l11 = l11.ln();
        g.l21 = l21;
        g.log_l22 = l22.ln();
        if !inside(g.mean(beta)) {
            diag.outside += 1;
        }
    }
    let frame = snap(scene.frame().then(t));
    let mut out =
        GaussianScene::from_patches_in_frame(h, w, scene.patch_size(), scene.margin(), beta, frame, patches)?;
    out.per_patch = scene.per_patch;
    Ok((out, diag))
}
