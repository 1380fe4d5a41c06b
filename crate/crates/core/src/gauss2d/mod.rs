//! Patch-organized 2-D Gaussian splatting.
//!
//! A Gaussian is anchored at a fixed point `mu_fix` and carries a bounded
//! offset `beta * tanh(offset_raw)`. Its covariance is `L L^T` with
//! `L = [[exp(log_l11), 0], [l21, exp(log_l22)]]`. The image is tiled into
//! `p x p` patches; each patch renders only its own Gaussians over the patch
//! grown by `a` pixels on every side, and overlapping renders are blended with
//! weights that fall off linearly away from each patch's core.
//!
//! A scene also carries a similarity `frame` mapping the patch grid into the
//! image. It is the identity for fitted scenes; [`perturb_means`] moves the
//! Gaussians and composes the frame so the tiling travels with them.

mod fit;
mod io;
mod perturb;
mod raster;

pub use fit::{fit, AdamConfig, FitConfig, FitResult};
pub use io::{SCENE_MAGIC, SCENE_RECORD_LEN};
pub use perturb::{perturb_means, PerturbDiagnostics};
pub use raster::{
    axis_weights, blend_weight, rasterize, rasterize_with_grads, GaussianGrad, GradientSet, Render,
    CULL_MAHALANOBIS_SQ, MAX_CONDITION,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometricTransform;
use crate::rng;

/// Slack for anchors checked through a non-identity frame.
const FRAME_SLACK: f64 = 1e-3;

/// Initial opacity. A square lattice with spacing `s` and `sigma = s / 2`
/// sums to `pi / 2` per unit area, so this makes initial coverage about 1.
pub const INIT_OPACITY: f64 = std::f64::consts::FRAC_2_PI;
pub const INIT_GRAY: f64 = 0.5;
pub const INIT_COLOR_JITTER: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub mu_fix: [f64; 2],
    pub offset_raw: [f64; 2],
    pub log_l11: f64,
    pub l21: f64,
    pub log_l22: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Number of trainable values per Gaussian.
pub const N_PARAMS: usize = 9;

impl Gaussian2D {
    /// Isotropic Gaussian with zero offset.
    pub fn isotropic(mu: [f64; 2], sigma: f64, color: [f64; 3], opacity: f64) -> Self {
        Self {
            mu_fix: mu,
            offset_raw: [0.0; 2],
            log_l11: sigma.ln(),
            l21: 0.0,
            log_l22: sigma.ln(),
            color,
            opacity,
        }
    }

    pub fn mean(&self, beta: f64) -> [f64; 2] {
        [
            self.mu_fix[0] + beta * self.offset_raw[0].tanh(),
            self.mu_fix[1] + beta * self.offset_raw[1].tanh(),
        ]
    }

    /// `(l11, l21, l22)`.
    pub fn cholesky(&self) -> (f64, f64, f64) {
        (self.log_l11.exp(), self.l21, self.log_l22.exp())
    }

    /// Covariance as `(s11, s12, s22)`.
    pub fn covariance(&self) -> (f64, f64, f64) {
        let (a, b, c) = self.cholesky();
        (a * a, a * b, b * b + c * c)
    }

    pub fn condition_number(&self) -> f64 {
        let (s11, s12, s22) = self.covariance();
        let tr = s11 + s22;
        let disc = ((s11 - s22).powi(2) + 4.0 * s12 * s12).sqrt();
        let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }

    /// Squared Mahalanobis distance of point `p`.
    pub fn mahalanobis_sq(&self, p: [f64; 2], beta: f64) -> f64 {
        let mu = self.mean(beta);
        let (l11, l21, l22) = self.cholesky();
        let w1 = (p[0] - mu[0]) / l11;
        let w2 = (p[1] - mu[1] - l21 * w1) / l22;
        w1 * w1 + w2 * w2
    }

    /// Unculled contribution `c * alpha * exp(-m / 2)` at point `p`.
    pub fn value_at(&self, p: [f64; 2], beta: f64) -> [f64; 3] {
        let e = self.opacity * (-0.5 * self.mahalanobis_sq(p, beta)).exp();
        self.color.map(|c| c * e)
    }

    pub fn params(&self) -> [f64; N_PARAMS] {
        [
            self.offset_raw[0],
            self.offset_raw[1],
            self.log_l11,
            self.l21,
            self.log_l22,
            self.color[0],
            self.color[1],
            self.color[2],
            self.opacity,
        ]
    }

    pub fn set_params(&mut self, p: &[f64; N_PARAMS]) {
        self.offset_raw = [p[0], p[1]];
        self.log_l11 = p[2];
        self.l21 = p[3];
        self.log_l22 = p[4];
        self.color = [p[5], p[6], p[7]];
        self.opacity = p[8];
    }

    pub fn is_finite(&self) -> bool {
        self.mu_fix.iter().all(|v| v.is_finite()) && self.params().iter().all(|v| v.is_finite())
    }
}

/// Layout parameters for [`init_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub patch_px: usize,
    pub margin_px: usize,
    pub per_patch: usize,
    /// Offset bound in pixels; `None` means half the lattice spacing.
    pub beta_px: Option<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            patch_px: 16,
            margin_px: 2,
            per_patch: 64,
            beta_px: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    height: usize,
    width: usize,
    patch: usize,
    margin: usize,
    per_patch: usize,
    beta: f64,
    frame: GeometricTransform,
    patches: Vec<Vec<Gaussian2D>>,
}

impl GaussianScene {
    /// Build a scene from explicit patch lists (patch-major).
    pub fn from_patches(
        height: usize,
        width: usize,
        patch: usize,
        margin: usize,
        beta: f64,
        patches: Vec<Vec<Gaussian2D>>,
    ) -> Result<Self> {
        Self::from_patches_in_frame(height, width, patch, margin, beta, GeometricTransform::identity(), patches)
    }

    /// As [`GaussianScene::from_patches`], with anchors given in image
    /// coordinates and the patch grid placed by `frame`.
    pub fn from_patches_in_frame(
        height: usize,
        width: usize,
        patch: usize,
        margin: usize,
        beta: f64,
        frame: GeometricTransform,
        patches: Vec<Vec<Gaussian2D>>,
    ) -> Result<Self> {
        check_layout(height, width, patch, margin)?;
        if !frame.is_identity() && (!(frame.scale > 0.0) || !frame.theta().is_finite() || !frame.translation_norm().is_finite()) {
            return Err(Error::SceneConstraint(format!("bad frame {frame:?}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::SceneConstraint(format!("offset bound beta must be positive, got {beta}")));
        }
        let n = (height / patch) * (width / patch);
        if patches.len() != n {
            return Err(Error::SceneConstraint(format!("expected {n} patch lists, got {}", patches.len())));
        }
        let per_patch = patches.iter().map(Vec::len).max().unwrap_or(0);
        let scene = Self {
            height,
            width,
            patch,
            margin,
            per_patch,
            beta,
            frame,
            patches,
        };
        let slack = if frame.is_identity() { 0.0 } else { FRAME_SLACK };
        for (k, list) in scene.patches.iter().enumerate() {
            let (x0, x1, y0, y1) = scene.extended_bounds_f(k);
            for g in list {
                if !g.is_finite() {
                    return Err(Error::NonFinite("gaussian parameters"));
                }
                let [x, y] = if frame.is_identity() {
                    g.mu_fix
                } else {
                    frame.unmap_point(g.mu_fix, width, height)
                };
                if x < x0 - slack || x > x1 + slack || y < y0 - slack || y > y1 + slack {
                    return Err(Error::SceneConstraint(format!(
                        "anchor ({x}, {y}) lies outside the extended region of patch {k}"
                    )));
                }
            }
        }
        Ok(scene)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn patch_size(&self) -> usize {
        self.patch
    }
    pub fn margin(&self) -> usize {
        self.margin
    }
    /// Nominal Gaussians per patch (the largest patch list).
    pub fn per_patch(&self) -> usize {
        self.per_patch
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn frame(&self) -> &GeometricTransform {
        &self.frame
    }
    pub fn patches_x(&self) -> usize {
        self.width / self.patch
    }
    pub fn patches_y(&self) -> usize {
        self.height / self.patch
    }
    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }
    pub fn patches(&self) -> &[Vec<Gaussian2D>] {
        &self.patches
    }
    pub fn patches_mut(&mut self) -> &mut [Vec<Gaussian2D>] {
        &mut self.patches
    }
    pub fn len(&self) -> usize {
        self.patches.iter().map(Vec::len).sum()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Gaussian2D> {
        self.patches.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Gaussian2D> {
        self.patches.iter_mut().flatten()
    }

    /// Top-left pixel of patch `k`.
    pub fn patch_origin(&self, k: usize) -> (usize, usize) {
        let px = self.patches_x();
        ((k % px) * self.patch, (k / px) * self.patch)
    }

    /// Pixel range `[x0, x1) x [y0, y1)` of the extended region, clipped to
    /// the image.
    pub fn extended_bounds(&self, k: usize) -> (usize, usize, usize, usize) {
        let (ox, oy) = self.patch_origin(k);
        let a = self.margin;
        (
            ox.saturating_sub(a),
            (ox + self.patch + a).min(self.width),
            oy.saturating_sub(a),
            (oy + self.patch + a).min(self.height),
        )
    }

    /// Continuous extent of the unclipped extended region (pixel edges).
    fn extended_bounds_f(&self, k: usize) -> (f64, f64, f64, f64) {
        let (ox, oy) = self.patch_origin(k);
        let a = self.margin as f64;
        let p = self.patch as f64;
        (
            ox as f64 - a - 0.5,
            ox as f64 + p + a - 0.5,
            oy as f64 - a - 0.5,
            oy as f64 + p + a - 0.5,
        )
    }
}

fn check_layout(height: usize, width: usize, patch: usize, margin: usize) -> Result<()> {
    if patch == 0 || height == 0 || width == 0 {
        return Err(Error::SceneConstraint("image and patch sizes must be positive".into()));
    }
    if height % patch != 0 || width % patch != 0 {
        return Err(Error::SceneConstraint(format!(
            "image {height}x{width} is not divisible by patch size {patch}"
        )));
    }
    if 2 * margin >= patch {
        return Err(Error::SceneConstraint(format!(
            "overlap margin {margin} must satisfy 2a < p = {patch}"
        )));
    }
    Ok(())
}

/// Square lattice of `per_patch` Gaussians in every patch.
pub fn init_scene(height: usize, width: usize, cfg: &SceneConfig, seed: u64) -> Result<GaussianScene> {
    check_layout(height, width, cfg.patch_px, cfg.margin_px)?;
    let side = (cfg.per_patch as f64).sqrt().round() as usize;
    if side == 0 || side * side != cfg.per_patch {
        return Err(Error::SceneConstraint(format!(
            "Gaussians per patch must be a positive perfect square, got {}",
            cfg.per_patch
        )));
    }
    let p = cfg.patch_px;
    let spacing = p as f64 / side as f64;
    let beta = cfg.beta_px.unwrap_or(spacing / 2.0);
    let n = (height / p) * (width / p);
    let px = width / p;
    let patches = (0..n)
        .map(|k| {
            let (ox, oy) = ((k % px) * p, (k / px) * p);
            let mut r = rng::stream(seed, &[k as u64]);
            let mut list = Vec::with_capacity(cfg.per_patch);
            for j in 0..side {
                for i in 0..side {
                    let mu = [
                        ox as f64 + (i as f64 + 0.5) * spacing - 0.5,
                        oy as f64 + (j as f64 + 0.5) * spacing - 0.5,
                    ];
                    let mut color = [0.0; 3];
                    for c in &mut color {
                        *c = INIT_GRAY + r.random_range(-INIT_COLOR_JITTER..=INIT_COLOR_JITTER);
                    }
                    list.push(Gaussian2D::isotropic(mu, spacing / 2.0, color, INIT_OPACITY));
                }
            }
            list
        })
        .collect();
    GaussianScene::from_patches(height, width, p, cfg.margin_px, beta, patches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_layout() {
        let cfg = SceneConfig {
            per_patch: 16,
            ..SceneConfig::default()
        };
        let s = init_scene(64, 64, &cfg, 1).unwrap();
        assert_eq!(s.n_patches(), 16);
        assert_eq!(s.patches()[0].len(), 16);
        let xs: Vec<f64> = s.patches()[0].iter().take(4).map(|g| g.mu_fix[0]).collect();
        assert_eq!(xs, vec![1.5, 5.5, 9.5, 13.5]);
        assert_eq!(s, init_scene(64, 64, &cfg, 1).unwrap());
        assert_ne!(s, init_scene(64, 64, &cfg, 2).unwrap());
    }

    #[test]
    fn init_rejects_bad_layouts() {
        let base = SceneConfig::default();
        let e = init_scene(60, 64, &base, 0).unwrap_err().to_string();
        assert!(e.contains("divisible"), "{e}");
        let e = init_scene(64, 64, &SceneConfig { margin_px: 8, ..base }, 0).unwrap_err().to_string();
        assert!(e.contains("2a < p"), "{e}");
        let e = init_scene(64, 64, &SceneConfig { per_patch: 10, ..base }, 0).unwrap_err().to_string();
        assert!(e.contains("perfect square"), "{e}");
    }

    #[test]
    fn params_round_trip() {
        let mut g = Gaussian2D::isotropic([1.0, 2.0], 1.5, [0.1, 0.2, 0.3], 0.7);
        g.offset_raw = [0.3, -0.2];
        g.l21 = 0.4;
        let mut h = Gaussian2D::isotropic([1.0, 2.0], 1.0, [0.0; 3], 0.0);
        h.set_params(&g.params());
        assert_eq!(g, h);
    }
}
