use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss2d::{fit, init_scene, perturb_means, rasterize, FitConfig, PerturbDiagnostics, SceneConfig};
use crate::geometry::{sample_micro_perturbation, GeometricTransform, PerturbationBounds};
use crate::grid::ImageGrid;
use crate::metrics::{aligned_psnr, psnr};
use crate::rng::derive_seed;
use crate::surrogate::{Surrogate, SurrogateConfig};
use crate::watermark::{decide, detection_distance, embed_key, sample_key, DetectionResult, RingMask, WatermarkKey};

pub const REMOVAL_METHOD: &str = "direct optimization";

const KEY_STREAM: u64 = 1;
const SCENE_STREAM: u64 = 2;
const PERTURB_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemovalConfig {
    pub surrogate: SurrogateConfig,
    pub r_min: f64,
    pub r_max: f64,
    pub mask_channel: usize,
    /// Standard deviation of the key values.
    pub key_scale: f64,
    pub threshold: f64,
    pub scene: SceneConfig,
    pub fit: FitConfig,
    pub bounds: PerturbationBounds,
    pub align_radius_px: usize,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateConfig::default(),
            r_min: 1.0,
            r_max: 4.0,
            mask_channel: 0,
            key_scale: 0.1,
            threshold: 0.05,
            scene: SceneConfig::default(),
            fit: FitConfig::default(),
            bounds: PerturbationBounds::default(),
            align_radius_px: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RemovalDiagnostics {
    pub perturb: PerturbDiagnostics,
    /// Ill-conditioned Gaussians skipped in the perturbed render.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub method: String,
    pub transform: GeometricTransform,
    /// Distance on the re-encoded watermarked image.
    pub pre: DetectionResult,
    /// Distance on the re-encoded unperturbed fit.
    pub control: DetectionResult,
    /// Distance on the re-encoded perturbed render.
    pub post: DetectionResult,
    pub fit_psnr_db: f64,
    pub raw_psnr_db: f64,
    pub aligned_psnr_db: f64,
    pub recovered_shift: (i64, i64),
    pub loss_trace: Vec<f64>,
    pub diagnostics: RemovalDiagnostics,
}

/// A watermarked image and its fitted scene, reusable across perturbations.
#[derive(Debug, Clone)]
pub struct RemovalSession {
    cfg: RemovalConfig,
    sur: Surrogate,
    mask: RingMask,
    key: WatermarkKey,
    watermarked: ImageGrid,
    scene: crate::gauss2d::GaussianScene,
    trace: Vec<f64>,
    pre: DetectionResult,
    control: DetectionResult,
    fit_psnr_db: f64,
    seed: u64,
}

impl RemovalSession {
    /// Encode `image`, embed the key, decode, and fit a scene to the result.
    pub fn new(image: &ImageGrid, cfg: &RemovalConfig, seed: u64) -> Result<Self> {
        if cfg.mask_channel >= image.channels() {
            return Err(Error::invalid(format!(
                "mask channel {} out of range for a {}-channel image",
                cfg.mask_channel,
                image.channels()
            )));
        }
        if !(cfg.key_scale > 0.0 && cfg.key_scale.is_finite()) {
            return Err(Error::invalid(format!("key scale must be positive, got {}", cfg.key_scale)));
        }
        cfg.bounds.validate()?;
        let (h, w) = (image.height(), image.width());
        let s = cfg.surrogate.stride;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::invalid(format!("image {h}x{w} is not a multiple of stride {s}")));
        }
        let sur = Surrogate::new(cfg.surrogate, h / s, w / s)?;
        let mask = RingMask::new(w / s, h / s, cfg.r_min, cfg.r_max, cfg.mask_channel)?;
        let mut key = sample_key(&mask, derive_seed(seed, &[KEY_STREAM]));
        key.eta.iter_mut().for_each(|v| *v *= cfg.key_scale);
        let z = embed_key(&sur.encode(image)?, &mask, &key)?;
        let watermarked = sur.decode(&z)?;
        let pre = decide(detection_distance(&sur.encode(&watermarked)?, &mask, &key)?, cfg.threshold)?;

        let init = init_scene(h, w, &cfg.scene, derive_seed(seed, &[SCENE_STREAM]))?;
        let fitted = fit(&init, &watermarked, &cfg.fit)?;
        let render = rasterize(&fitted.scene)?.image;
        let control = decide(detection_distance(&sur.encode(&render)?, &mask, &key)?, cfg.threshold)?;
        let fit_psnr_db = psnr(&watermarked, &render)?;
        Ok(Self {
            cfg: cfg.clone(),
            sur,
            mask,
            key,
            watermarked,
            scene: fitted.scene,
            trace: fitted.trace,
            pre,
            control,
            fit_psnr_db,
            seed,
        })
    }

    pub fn watermarked(&self) -> &ImageGrid {
        &self.watermarked
    }

    pub fn scene(&self) -> &crate::gauss2d::GaussianScene {
        &self.scene
    }

    pub fn mask(&self) -> &RingMask {
        &self.mask
    }

    pub fn key(&self) -> &WatermarkKey {
        &self.key
    }

    /// Draw a perturbation within the configured bounds for `draw`.
    pub fn sample(&self, draw: u64) -> Result<GeometricTransform> {
        sample_micro_perturbation(&self.cfg.bounds, derive_seed(self.seed, &[PERTURB_STREAM, draw]))
    }

    /// Re-render under `t` and detect.
    pub fn perturb(&self, t: &GeometricTransform) -> Result<(RemovalReport, ImageGrid)> {
        let (moved, perturb) = perturb_means(&self.scene, t)?;
        let render = rasterize(&moved)?;
        let post = decide(
            detection_distance(&self.sur.encode(&render.image)?, &self.mask, &self.key)?,
            self.cfg.threshold,
        )?;
        let raw = psnr(&self.watermarked, &render.image)?;
        let aligned = aligned_psnr(&self.watermarked, &render.image, self.cfg.align_radius_px)?;
        let report = RemovalReport {
            method: REMOVAL_METHOD.into(),
            transform: *t,
            pre: self.pre,
            control: self.control,
            post,
            fit_psnr_db: self.fit_psnr_db,
            raw_psnr_db: raw,
            aligned_psnr_db: aligned.psnr_db,
            recovered_shift: aligned.shift,
            loss_trace: self.trace.clone(),
            diagnostics: RemovalDiagnostics {
                perturb,
                degenerate: render.degenerate,
            },
        };
        Ok((report, render.image))
    }
}

/// Fit, draw one perturbation, re-render and detect.
pub fn run_removal(image: &ImageGrid, cfg: &RemovalConfig, seed: u64) -> Result<(RemovalReport, ImageGrid)> {
    let session = RemovalSession::new(image, cfg, seed)?;
    let t = session.sample(0)?;
    session.perturb(&t)
}

/// [`run_removal`] on an image file.
pub fn run_removal_pipeline(
    image_path: impl AsRef<Path>,
    cfg: &RemovalConfig,
    seed: u64,
) -> Result<(RemovalReport, ImageGrid)> {
    let image = ImageGrid::read_any(image_path)?;
    run_removal(&image, cfg, seed)
}
