use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, apply_transform, apply_transform_wrapped, GeometricTransform};
use crate::grid::{normal_plane, LatentGrid};
use crate::metrics::{aligned_psnr, psnr, tpr_at_fpr, RocInput};
use crate::par;
use crate::rng::derive_seed;
use crate::spectrum::Spectrum;
use crate::surrogate::{Surrogate, SurrogateConfig};
use crate::watermark::{distance_from_coeffs, embed_key, sample_key, sign_agreement, DistanceMode, RingMask};

const KEY_STREAM: u64 = 0x6b65_79;
const PHASE_STREAM: u64 = 0x7068_6173;

/// Sweep configuration. Field names carry their units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub latent_width: usize,
    pub latent_height: usize,
    pub latent_channels: usize,
    pub surrogate: SurrogateConfig,
    pub r_min: f64,
    pub r_max: f64,
    pub mask_channel: usize,
    /// Key seed; derived from `seed` when absent.
    pub key_seed: Option<u64>,
    /// Horizontal translations, applied as `(translation_px, 0)`.
    pub translations_px: Vec<f64>,
    pub rotations_deg: Vec<f64>,
    pub trials: usize,
    pub threshold: f64,
    pub target_fpr: f64,
    pub distance_mode: DistanceMode,
    /// Upper bound for the aligned-PSNR search radius.
    pub align_radius_px: usize,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            latent_width: 64,
            latent_height: 64,
            latent_channels: 4,
            surrogate: SurrogateConfig::default(),
            r_min: 0.0,
            r_max: 16.0,
            mask_channel: 0,
            key_seed: None,
            translations_px: vec![0.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            rotations_deg: vec![0.0],
            trials: 200,
            threshold: 0.5,
            target_fpr: 0.01,
            distance_mode: DistanceMode::RealPart,
            align_radius_px: 32,
            seed: 0,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials per cell must be at least 1"));
        }
        if self.latent_channels == 0 || self.mask_channel >= self.latent_channels {
            return Err(Error::invalid(format!(
                "mask channel {} needs at least {} latent channels",
                self.mask_channel,
                self.mask_channel + 1
            )));
        }
        if self.translations_px.is_empty() || self.rotations_deg.is_empty() {
            return Err(Error::invalid("transform grid is empty"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid("detection threshold must be positive"));
        }
        self.surrogate.validate()?;
        for t in self.transforms() {
            t.validate()?;
        }
        Ok(())
    }

    /// One transform per grid cell, translations outer.
    pub fn transforms(&self) -> Vec<GeometricTransform> {
        self.translations_px
            .iter()
            .flat_map(|&d| {
                self.rotations_deg.iter().map(move |&th| GeometricTransform {
                    rotation_deg: th,
                    ..GeometricTransform::translation(d, 0.0)
                })
            })
            .collect()
    }

    pub fn mask(&self) -> Result<RingMask> {
        RingMask::new(self.latent_width, self.latent_height, self.r_min, self.r_max, 0)
    }

    pub fn key_seed(&self) -> u64 {
        self.key_seed.unwrap_or_else(|| derive_seed(self.seed, &[KEY_STREAM]))
    }

    /// The masked channel of the latent drawn for `seed`; equal to channel
    /// `mask_channel` of `LatentGrid::standard_normal(c, h, w, seed)`.
    fn masked_channel(&self, seed: u64) -> Result<LatentGrid> {
        let (h, w) = (self.latent_height, self.latent_width);
        LatentGrid::from_vec(1, h, w, normal_plane(h * w, seed, self.mask_channel as u64))
    }
}

/// Measurements of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub distance: f64,
    pub clean_distance: f64,
    pub bit_accuracy: f64,
    /// `sum eta Re Z / sum eta^2`.
    pub correlation: f64,
    /// Same with `Re Z` divided by the surrogate's round-trip response.
    pub compensated_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub transform: GeometricTransform,
    pub trials: usize,
    pub mean_distance: f64,
    pub std_distance: f64,
    pub mean_clean_distance: f64,
    pub tpr: f64,
    pub detection_rate: f64,
    pub bit_accuracy: f64,
    pub correlation: f64,
    pub compensated_correlation: f64,
    /// Correlation relative to the identity cell, when the grid has one.
    pub correlation_ratio: Option<f64>,
    pub compensated_ratio: Option<f64>,
    pub prediction: geometry::PhasePrediction,
    pub raw_psnr_db: f64,
    pub aligned_psnr_db: f64,
    pub align_shift: (i64, i64),
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: TrialConfig,
    pub mask_size: usize,
    pub cells: Vec<CellReport>,
}

struct Chain<'a> {
    cfg: &'a TrialConfig,
    sur: Surrogate,
    mask: RingMask,
    eta: Vec<f64>,
    key: crate::watermark::WatermarkKey,
    transfer: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn new(cfg: &'a TrialConfig) -> Result<Self> {
        let sur = Surrogate::new(cfg.surrogate, cfg.latent_height, cfg.latent_width)?;
        let mask = cfg.mask()?;
        let key = sample_key(&mask, cfg.key_seed());
        let eta = key.canonical_values(&mask);
        let full = sur.round_trip_transfer()?;
        let probe = Spectrum::zeros(cfg.latent_height, cfg.latent_width);
        let transfer = mask
            .canonical_coords()
            .map(|(u, v)| full[probe.index_of(u, v).expect("mask inside grid")])
            .collect();
        Ok(Self {
            cfg,
            sur,
            mask,
            eta,
            key,
            transfer,
        })
    }

    /// Decode, attack with padding from the unattacked image, encode.
    fn attack(&self, z: &LatentGrid, t: &GeometricTransform) -> Result<(LatentGrid, f64, crate::ImageGrid)> {
        let img = self.sur.decode(z)?;
        let attacked = apply_transform(&img, t, &img)?;
        let raw = psnr(&img, &attacked)?;
        Ok((self.sur.encode(&attacked)?, raw, attacked))
    }

    fn read(&self, z: &LatentGrid) -> Result<Vec<rustfft::num_complex::Complex64>> {
        self.mask.read(z)
    }

    fn trial(&self, cell: usize, trial: usize, t: &GeometricTransform) -> Result<TrialRecord> {
        let zw = self.cfg.masked_channel(derive_seed(self.cfg.seed, &[cell as u64, trial as u64, 0]))?;
        let zw = embed_key(&zw, &self.mask, &self.key)?;
        let zc = self.cfg.masked_channel(derive_seed(self.cfg.seed, &[cell as u64, trial as u64, 1]))?;
        let (rw, _, _) = self.attack(&zw, t)?;
        let (rc, _, _) = self.attack(&zc, t)?;
        let zhat = self.read(&rw)?;
        let zclean = self.read(&rc)?;
        let e2: f64 = self.eta.iter().map(|e| e * e).sum();
        let corr: f64 = self.eta.iter().zip(&zhat).map(|(e, z)| e * z.re).sum::<f64>() / e2;
        let comp: f64 = self
            .eta
            .iter()
            .zip(&zhat)
            .zip(&self.transfer)
            .map(|((e, z), h)| e * z.re / h)
            .sum::<f64>()
            / e2;
        let rec = TrialRecord {
            distance: distance_from_coeffs(&self.eta, &zhat, self.cfg.distance_mode),
            clean_distance: distance_from_coeffs(&self.eta, &zclean, self.cfg.distance_mode),
            bit_accuracy: sign_agreement(&self.eta, &zhat),
            correlation: corr,
            compensated_correlation: comp,
        };
        let vals = [rec.distance, rec.clean_distance, rec.correlation, rec.compensated_correlation];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite measurement in cell {cell}, trial {trial}: {rec:?}")));
        }
        Ok(rec)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Run every `(translation, rotation)` cell for `cfg.trials` trials.
///
/// Trials are independent and seeded by `(seed, cell, trial)`, so the report
/// is identical for any worker count.
pub fn run_detection_sweep(cfg: &TrialConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let chain = Chain::new(cfg)?;
    let transforms = cfg.transforms();
    let n = cfg.trials;
    let results = par::map_range(transforms.len() * n, |i| chain.trial(i / n, i % n, &transforms[i / n]));
    let records: Vec<TrialRecord> = results.into_iter().collect::<Result<_>>()?;

    let aligns = par::map_range(transforms.len(), |c| -> Result<(f64, f64, (i64, i64))> {
        let t = &transforms[c];
        let z = cfg.masked_channel(derive_seed(cfg.seed, &[c as u64, 0, 0]))?;
        let z = embed_key(&z, &chain.mask, &chain.key)?;
        let img = chain.sur.decode(&z)?;
        let (_, raw, attacked) = chain.attack(&z, t)?;
        let reach = t.translation_norm() + geometry::coord_drift(img.width().max(img.height()) as f64 / 2.0, t.theta().abs());
        let radius = (reach.ceil() as usize).min(cfg.align_radius_px);
        let al = aligned_psnr(&img, &attacked, radius)?;
        Ok((raw, al.psnr_db, al.shift))
    });
    let aligns: Vec<_> = aligns.into_iter().collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(transforms.len());
    for (c, t) in transforms.iter().enumerate() {
        let recs = records[c * n..(c + 1) * n].to_vec();
        let md = mean(recs.iter().map(|r| r.distance));
        let var = mean(recs.iter().map(|r| (r.distance - md).powi(2)));
        let tpr = tpr_at_fpr(&RocInput {
            clean: recs.iter().map(|r| r.clean_distance).collect(),
            watermarked: recs.iter().map(|r| r.distance).collect(),
            fpr: cfg.target_fpr,
        })?;
        let prediction = geometry::predict(t, cfg.r_max, cfg.surrogate.stride, cfg.latent_width, 1.0)?;
        let (raw, aligned, shift) = aligns[c];
        cells.push(CellReport {
            transform: *t,
            trials: n,
            mean_distance: md,
            std_distance: var.sqrt(),
            mean_clean_distance: mean(recs.iter().map(|r| r.clean_distance)),
            tpr,
            detection_rate: mean(recs.iter().map(|r| (r.distance < cfg.threshold) as u8 as f64)),
            bit_accuracy: mean(recs.iter().map(|r| r.bit_accuracy)),
            correlation: mean(recs.iter().map(|r| r.correlation)),
            compensated_correlation: mean(recs.iter().map(|r| r.compensated_correlation)),
            correlation_ratio: None,
            compensated_ratio: None,
            prediction,
            raw_psnr_db: raw,
            aligned_psnr_db: aligned,
            align_shift: shift,
            records: recs,
        });
    }
    let reference = cells
        .iter()
        .find(|c| c.transform.is_identity())
        .map(|c| (c.correlation, c.compensated_correlation));
    if let Some((r0, c0)) = reference {
        for cell in &mut cells {
            cell.correlation_ratio = Some(cell.correlation / r0);
            cell.compensated_ratio = Some(cell.compensated_correlation / c0);
        }
    }
    Ok(SweepReport {
        mask_size: chain.mask.len(),
        config: cfg.clone(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRampMeasurement {
    pub translation_px: f64,
    pub mean_abs_error_rad: f64,
    pub coefficients: usize,
}

/// Mean absolute difference between the measured latent phase change under a
/// periodic horizontal shift and [`geometry::phase_ramp`], over the canonical
/// coordinates of the ring (DC excluded).
pub fn phase_ramp_error(cfg: &TrialConfig, translation_px: f64, trials: usize) -> Result<PhaseRampMeasurement> {
    cfg.validate()?;
    let chain = Chain::new(cfg)?;
    let t = GeometricTransform::translation(translation_px, 0.0);
    let per = par::map_range(trials, |i| -> Result<(f64, usize)> {
        let z = cfg.masked_channel(derive_seed(cfg.seed, &[PHASE_STREAM, i as u64]))?;
        let z = embed_key(&z, &chain.mask, &chain.key)?;
        let img = chain.sur.decode(&z)?;
        let base = chain.read(&chain.sur.encode(&img)?)?;
        let moved = chain.read(&chain.sur.encode(&apply_transform_wrapped(&img, &t)?)?)?;
        let mut err = 0.0;
        let mut n = 0;
        for (((u, v), a), b) in chain.mask.canonical_coords().zip(&base).zip(&moved) {
            if u == 0 && v == 0 {
                continue;
            }
            let measured = (b * a.conj()).arg();
            let want = geometry::phase_ramp(
                u as f64,
                v as f64,
                translation_px,
                0.0,
                cfg.surrogate.stride,
                cfg.latent_width,
                cfg.latent_height,
            );
            let d = (measured - want + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            err += d.abs();
            n += 1;
        }
        Ok((err, n))
    });
    let (mut err, mut n) = (0.0, 0);
    for r in per {
        let (e, k) = r?;
        err += e;
        n += k;
    }
    Ok(PhaseRampMeasurement {
        translation_px,
        mean_abs_error_rad: err / n.max(1) as f64,
        coefficients: n,
    })
}
