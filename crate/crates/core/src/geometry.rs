//! Composite micro-geometric attacks and the closed-form phase predictors.
//!
//! Pixel centers sit at integer coordinates and the image center is
//! `c = ((W-1)/2, (H-1)/2)`. The forward map of a transform is
//! `F(p) = c + s * (R(theta) (p - c) + delta)`: rotate about the center, then
//! translate, then scale about the center. The output keeps the input size and
//! is produced by one bilinear pass through `F^-1`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::par;
use crate::rng;

pub const MAX_ROTATION_DEG: f64 = 45.0;
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricTransform {
    pub translation_x_px: f64,
    pub translation_y_px: f64,
    pub rotation_deg: f64,
    pub scale: f64,
}

impl Default for GeometricTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl GeometricTransform {
    pub fn identity() -> Self {
        Self {
            translation_x_px: 0.0,
            translation_y_px: 0.0,
            rotation_deg: 0.0,
            scale: 1.0,
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            translation_x_px: dx,
            translation_y_px: dy,
            ..Self::identity()
        }
    }

    pub fn new(dx: f64, dy: f64, rotation_deg: f64, scale: f64) -> Result<Self> {
        let t = Self {
            translation_x_px: dx,
            translation_y_px: dy,
            rotation_deg,
            scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.translation_x_px, self.translation_y_px, self.rotation_deg, self.scale];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("geometric transform"));
        }
        if self.rotation_deg.abs() > MAX_ROTATION_DEG {
            return Err(Error::invalid(format!(
                "rotation {} deg outside +/-{MAX_ROTATION_DEG}",
                self.rotation_deg
            )));
        }
        if !(self.scale > SCALE_RANGE.0 && self.scale < SCALE_RANGE.1) {
            return Err(Error::invalid(format!("scale {} outside (0.5, 2)", self.scale)));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn theta(&self) -> f64 {
        self.rotation_deg.to_radians()
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation_x_px.hypot(self.translation_y_px)
    }

    /// Linear part `s * R(theta)` as row-major `[a00, a01, a10, a11]`.
    pub fn linear(&self) -> [f64; 4] {
        let (sn, cs) = self.theta().sin_cos();
        let s = self.scale;
        [s * cs, -s * sn, s * sn, s * cs]
    }

    /// Forward map for an image of the given size.
    pub fn map_point(&self, p: [f64; 2], width: usize, height: usize) -> [f64; 2] {
        let c = center(width, height);
        let a = self.linear();
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let s = self.scale;
        [
            c[0] + a[0] * dx + a[1] * dy + s * self.translation_x_px,
            c[1] + a[2] * dx + a[3] * dy + s * self.translation_y_px,
        ]
    }

    /// Inverse map.
    pub fn unmap_point(&self, q: [f64; 2], width: usize, height: usize) -> [f64; 2] {
        let c = center(width, height);
        let (sn, cs) = self.theta().sin_cos();
        let x = (q[0] - c[0]) / self.scale - self.translation_x_px;
        let y = (q[1] - c[1]) / self.scale - self.translation_y_px;
        [c[0] + cs * x + sn * y, c[1] - sn * x + cs * y]
    }

    /// `self` followed by `next`, as one transform. Not validated: the
    /// composite may leave the micro bounds.
    pub fn then(&self, next: &Self) -> Self {
        let (sn, cs) = next.theta().sin_cos();
        let (dx, dy) = (self.translation_x_px, self.translation_y_px);
        Self {
            translation_x_px: cs * dx - sn * dy + next.translation_x_px / self.scale,
            translation_y_px: sn * dx + cs * dy + next.translation_y_px / self.scale,
            rotation_deg: self.rotation_deg + next.rotation_deg,
            scale: self.scale * next.scale,
        }
    }

    /// The transform whose forward map is this one's inverse.
    pub fn inverse(&self) -> Self {
        let (sn, cs) = self.theta().sin_cos();
        let (dx, dy) = (self.translation_x_px, self.translation_y_px);
        let s = self.scale;
        Self {
            translation_x_px: -s * (cs * dx + sn * dy),
            translation_y_px: -s * (-sn * dx + cs * dy),
            rotation_deg: -self.rotation_deg,
            scale: 1.0 / s,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let t: Self = crate::io::read_json(path)?;
        t.validate()?;
        Ok(t)
    }
}

fn center(width: usize, height: usize) -> [f64; 2] {
    [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0]
}

/// What to do with output pixels whose preimage falls outside the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    /// Copy the pixel from the pad source.
    #[default]
    Pad,
    /// Sample the source periodically.
    Wrap,
}

const EDGE_SLACK: f64 = 1e-9;

/// Bilinear sample of one plane at `(x, y)`; `None` outside the pixel hull.
#[inline]
pub fn bilinear(plane: &[f64], width: usize, height: usize, x: f64, y: f64, wrap: bool) -> Option<f64> {
    let (wf, hf) = ((width - 1) as f64, (height - 1) as f64);
    let (x, y) = if wrap {
        (x.rem_euclid(width as f64), y.rem_euclid(height as f64))
    } else {
        if x < -EDGE_SLACK || y < -EDGE_SLACK || x > wf + EDGE_SLACK || y > hf + EDGE_SLACK {
            return None;
        }
        (x.clamp(0.0, wf), y.clamp(0.0, hf))
    };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize % width, y0 as usize % height);
    let (x1, y1) = if wrap {
        ((x0 + 1) % width, (y0 + 1) % height)
    } else {
        ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1))
    };
    let at = |yy: usize, xx: usize| plane[yy * width + xx];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

/// Apply `t` to every channel; uncovered pixels come from `pad_source`.
pub fn apply_transform(img: &ImageGrid, t: &GeometricTransform, pad_source: &ImageGrid) -> Result<ImageGrid> {
    img.same_shape(pad_source)?;
    apply_with(img, t, Coverage::Pad, Some(pad_source))
}

/// Apply `t` with periodic sampling of the source.
pub fn apply_transform_wrapped(img: &ImageGrid, t: &GeometricTransform) -> Result<ImageGrid> {
    apply_with(img, t, Coverage::Wrap, None)
}

fn apply_with(
    img: &ImageGrid,
    t: &GeometricTransform,
    coverage: Coverage,
    pad: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    t.validate()?;
    if t.is_identity() {
        return Ok(img.clone());
    }
    let (c, h, w) = img.shape();
    let wrap = coverage == Coverage::Wrap;
    let rows = par::map_range(h, |y| {
        let mut out = vec![0.0; c * w];
        for x in 0..w {
            let [sx, sy] = t.unmap_point([x as f64, y as f64], w, h);
            for k in 0..c {
                out[k * w + x] = match bilinear(img.plane(k), w, h, sx, sy, wrap) {
                    Some(v) => v,
                    None => pad.map_or(0.0, |p| p.get(k, y, x)),
                };
            }
        }
        out
    });
    let mut res = img.clone();
    for (y, row) in rows.into_iter().enumerate() {
        for k in 0..c {
            res.plane_mut(k)[y * w..(y + 1) * w].copy_from_slice(&row[k * w..(k + 1) * w]);
        }
    }
    Ok(res)
}

/// Latent phase change at frequency `(u, v)` from a pixel translation.
pub fn phase_ramp(u: f64, v: f64, dx: f64, dy: f64, stride: usize, w: usize, h: usize) -> f64 {
    -2.0 * PI * (u * dx / (stride * w) as f64 + v * dy / (stride * h) as f64)
}

/// Spread of the phase ramp across a disk of radius `r_max`.
pub fn phase_range(r_max: f64, delta_norm: f64, stride: usize, w: usize) -> f64 {
    4.0 * PI * r_max * delta_norm / (stride * w) as f64
}

/// Frequency-bin displacement at radius `r` under a rotation of `theta_rad`.
pub fn coord_drift(r: f64, theta_rad: f64) -> f64 {
    r * theta_rad
}

pub fn sinc(a: f64) -> f64 {
    if a.abs() < 1e-8 {
        1.0 - a * a / 6.0
    } else {
        a.sin() / a
    }
}

/// `sinc(alpha) * coherence`.
pub fn expected_attenuation(alpha: f64, coherence: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&coherence) {
        return Err(Error::invalid(format!("coherence must be in [0, 1], got {coherence}")));
    }
    Ok(sinc(alpha) * coherence)
}

/// Analytic columns for one transform at one geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePrediction {
    pub phase_range_rad: f64,
    pub alpha_rad: f64,
    pub coord_drift: f64,
    pub attenuation: f64,
}

pub fn predict(t: &GeometricTransform, r_max: f64, stride: usize, w: usize, coherence: f64) -> Result<PhasePrediction> {
    let range = phase_range(r_max, t.translation_norm(), stride, w);
    let alpha = range / 2.0;
    Ok(PhasePrediction {
        phase_range_rad: range,
        alpha_rad: alpha,
        coord_drift: coord_drift(r_max, t.theta().abs()),
        attenuation: expected_attenuation(alpha, coherence)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationBounds {
    pub max_translation_px: f64,
    pub max_rotation_deg: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for PerturbationBounds {
    fn default() -> Self {
        Self {
            max_translation_px: 10.0,
            max_rotation_deg: 5.0,
            min_scale: 0.97,
            max_scale: 1.03,
        }
    }
}

impl PerturbationBounds {
    pub fn zero() -> Self {
        Self {
            max_translation_px: 0.0,
            max_rotation_deg: 0.0,
            min_scale: 1.0,
            max_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_translation_px >= 0.0
            && self.max_translation_px.is_finite()
            && (0.0..=MAX_ROTATION_DEG).contains(&self.max_rotation_deg)
            && self.min_scale > SCALE_RANGE.0
            && self.max_scale < SCALE_RANGE.1
            && self.min_scale <= self.max_scale;
        if !ok {
            return Err(Error::invalid(format!("perturbation bounds out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, t: &GeometricTransform) -> bool {
        let eps = 1e-12;
        t.translation_x_px.abs() <= self.max_translation_px + eps
            && t.translation_y_px.abs() <= self.max_translation_px + eps
            && t.rotation_deg.abs() <= self.max_rotation_deg + eps
            && t.scale >= self.min_scale - eps
            && t.scale <= self.max_scale + eps
    }
}

/// Uniform draw of each component within `bounds`.
pub fn sample_micro_perturbation(bounds: &PerturbationBounds, seed: u64) -> Result<GeometricTransform> {
    bounds.validate()?;
    let mut r = rng::stream(seed, &[0x6765_6f6d]);
    let mut sym = |m: f64| if m > 0.0 { r.random_range(-m..=m) } else { 0.0 };
    let dx = sym(bounds.max_translation_px);
    let dy = sym(bounds.max_translation_px);
    let th = sym(bounds.max_rotation_deg);
    let scale = if bounds.max_scale > bounds.min_scale {
        r.random_range(bounds.min_scale..=bounds.max_scale)
    } else {
        bounds.min_scale
    };
    GeometricTransform::new(dx, dy, th, scale)
}
