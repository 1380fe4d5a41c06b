//! Frequency-band and spatial random masking of images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Planes};
use crate::par;
use crate::rng;
use crate::spectrum::{fft2_centered, ifft2_complex};

pub const MASK_FILL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandMode {
    /// Keep `|(u, v)| <= r_f`.
    LowPass,
    /// Keep `|(u, v)| > r_f`.
    HighPass,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mode: BandMode,
    pub radius: f64,
    pub ratio: f64,
    pub region_px: (usize, usize),
    pub seed: u64,
}

impl MaskSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        check_radius(self.radius, height, width)?;
        check_ratio(self.ratio)?;
        check_region(self.region_px)
    }

    /// Band mask followed by spatial mask.
    pub fn apply(&self, img: &ImageGrid) -> Result<(ImageGrid, Vec<bool>)> {
        self.validate(img.height(), img.width())?;
        let banded = frequency_band_mask(img, self.mode, self.radius)?;
        spatial_random_mask(&banded, self.ratio, self.region_px, self.seed)
    }
}

fn check_radius(r: f64, h: usize, w: usize) -> Result<()> {
    let half = h.min(w) as f64 / 2.0;
    if !(r > 0.0 && r <= half) {
        return Err(Error::invalid(format!("band radius {r} outside (0, {half}]")));
    }
    Ok(())
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside [0, 1]")));
    }
    Ok(())
}

fn check_region((lo, hi): (usize, usize)) -> Result<()> {
    if lo == 0 || lo > hi {
        return Err(Error::invalid(format!("region size range ({lo}, {hi}) is invalid")));
    }
    Ok(())
}

/// Zero the spectrum outside (low-pass) or inside (high-pass) radius `r_f`.
pub fn frequency_band_mask(img: &ImageGrid, mode: BandMode, r_f: f64) -> Result<ImageGrid> {
    let (c, h, w) = img.shape();
    check_radius(r_f, h, w)?;
    if mode == BandMode::None {
        return Ok(img.clone());
    }
    let planes = par::map_range(c, |k| -> Result<Vec<f64>> {
        let mut s = fft2_centered(img.plane(k), h, w)?;
        for i in 0..h * w {
            let (u, v) = s.offset_of(i);
            let inside = ((u * u + v * v) as f64).sqrt() <= r_f;
            if inside != (mode == BandMode::LowPass) {
                s.coeffs_mut()[i] = Default::default();
            }
        }
        Ok(ifft2_complex(&s).into_iter().map(|z| z.re).collect())
    });
    let planes = planes.into_iter().collect::<Result<Vec<_>>>()?;
    Planes::from_planes(h, w, planes).map(ImageGrid)
}

/// Fill random rectangles with mid-gray until at least `ratio` of the pixels
/// are covered. Each rectangle is anchored at a random uncovered pixel, so
/// every placement makes progress.
pub fn spatial_random_mask(
    img: &ImageGrid,
    ratio: f64,
    region_px: (usize, usize),
    seed: u64,
) -> Result<(ImageGrid, Vec<bool>)> {
    check_ratio(ratio)?;
    check_region(region_px)?;
    let (c, h, w) = img.shape();
    let n = h * w;
    let mut mask = vec![false; n];
    if ratio >= 1.0 {
        mask.fill(true);
    } else {
        let target = (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize;
        let mut free: Vec<usize> = (0..n).collect();
        let mut slot: Vec<usize> = (0..n).collect();
        let mut r = rng::stream(seed, &[0x6d61_736b]);
        while n - free.len() < target {
            let anchor = free[r.random_range(0..free.len())];
            let rh = r.random_range(region_px.0..=region_px.1);
            let rw = r.random_range(region_px.0..=region_px.1);
            let (y0, x0) = (anchor / w, anchor % w);
            for y in y0..(y0 + rh).min(h) {
                for x in x0..(x0 + rw).min(w) {
                    let i = y * w + x;
                    if !mask[i] {
                        mask[i] = true;
                        let at = slot[i];
                        let last = *free.last().expect("uncovered pixel");
                        free.swap_remove(at);
                        if last != i {
                            slot[last] = at;
                        }
                    }
                }
            }
        }
    }
    let mut out = img.clone();
    for k in 0..c {
        for (v, &m) in out.plane_mut(k).iter_mut().zip(&mask) {
            if m {
                *v = MASK_FILL;
            }
        }
    }
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::normal_plane;

    fn noise(h: usize, w: usize, seed: u64) -> ImageGrid {
        ImageGrid::from_vec(1, h, w, normal_plane(h * w, seed, 0)).unwrap()
    }

    #[test]
    fn high_pass_kills_constants() {
        let img = ImageGrid::filled(2, 8, 8, 0.7).unwrap();
        let hp = frequency_band_mask(&img, BandMode::HighPass, 2.0).unwrap();
        assert!(hp.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn bands_are_complementary() {
        let img = noise(16, 12, 3);
        for r in [1.0, 2.5, 6.0] {
            let lo = frequency_band_mask(&img, BandMode::LowPass, r).unwrap();
            let hi = frequency_band_mask(&img, BandMode::HighPass, r).unwrap();
            for ((a, b), c) in lo.data().iter().zip(hi.data()).zip(img.data()) {
                assert!((a + b - c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn low_pass_energy_is_in_disk_fraction() {
        let (h, w) = (32, 32);
        let img = noise(h, w, 8);
        let s = fft2_centered(img.plane(0), h, w).unwrap();
        let in_disk: f64 = (0..h * w)
            .filter(|&i| {
                let (u, v) = s.offset_of(i);
                ((u * u + v * v) as f64).sqrt() <= 4.0
            })
            .map(|i| s.coeffs()[i].norm_sqr())
            .sum();
        let lo = frequency_band_mask(&img, BandMode::LowPass, 4.0).unwrap();
        let e: f64 = lo.data().iter().map(|v| v * v).sum();
        assert!((e - in_disk).abs() < 1e-6 * in_disk.max(1.0));
    }

    #[test]
    fn spatial_extremes() {
        let img = noise(10, 10, 1);
        let (out, m) = spatial_random_mask(&img, 0.0, (1, 3), 5).unwrap();
        assert_eq!(out, img);
        assert!(m.iter().all(|&b| !b));
        let (out, m) = spatial_random_mask(&img, 1.0, (1, 3), 5).unwrap();
        assert!(out.data().iter().all(|&v| v == MASK_FILL));
        assert!(m.iter().all(|&b| b));
    }

    #[test]
    fn unit_regions_hit_ratio_exactly() {
        let img = noise(20, 20, 2);
        let (_, m) = spatial_random_mask(&img, 0.3, (1, 1), 9).unwrap();
        let frac = m.iter().filter(|&&b| b).count() as f64 / 400.0;
        assert!((0.3..=0.3 + 1.0 / 400.0).contains(&frac), "{frac}");
    }
}
