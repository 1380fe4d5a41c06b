//! Fourier-ring watermark keys in latent space.
//!
//! A [`RingMask`] selects integer frequency offsets in an annulus around DC.
//! Coordinates come in Hermitian pairs `(u, v)` / `(-u, -v)`. The first member
//! of each pair in mask order is *canonical*; embedding writes `eta + 0i` at
//! both members so the spatial latent stays real, and every statistic reads
//! canonical coordinates only.

use std::collections::HashMap;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng;
use crate::spectrum::{fft2_centered, ifft2_centered, Spectrum};

/// Annular set of frequency offsets in one latent channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RingMask {
    width: usize,
    height: usize,
    r_min: f64,
    r_max: f64,
    channel: usize,
    coords: Vec<(i64, i64)>,
    partner: Vec<Option<usize>>,
    canonical: Vec<usize>,
}

impl RingMask {
    /// All lattice offsets with `r_min <= |(u, v)| <= r_max`, in row-major
    /// order (`v` outer, `u` inner).
    pub fn new(width: usize, height: usize, r_min: f64, r_max: f64, channel: usize) -> Result<Self> {
        if !(r_min.is_finite() && r_max.is_finite()) || r_min < 0.0 || r_min >= r_max {
            return Err(Error::invalid(format!("need 0 <= r_min < r_max, got {r_min}, {r_max}")));
        }
        let half = width.min(height) as f64 / 2.0;
        if r_max > half {
            return Err(Error::invalid(format!(
                "r_max={r_max} exceeds min(w,h)/2={half} on a {width}x{height} grid"
            )));
        }
        let probe = Spectrum::zeros(height, width);
        let mut coords = Vec::new();
        for idx in 0..width * height {
            let (u, v) = probe.offset_of(idx);
            let r = ((u * u + v * v) as f64).sqrt();
            if r >= r_min && r <= r_max {
                coords.push((u, v));
            }
        }
        if coords.is_empty() {
            return Err(Error::EmptyMask { r_min, r_max });
        }
        Ok(Self::with_coords(width, height, r_min, r_max, channel, coords))
    }

    fn with_coords(
        width: usize,
        height: usize,
        r_min: f64,
        r_max: f64,
        channel: usize,
        coords: Vec<(i64, i64)>,
    ) -> Self {
        let probe = Spectrum::zeros(height, width);
        let pos: HashMap<usize, usize> = coords
            .iter()
            .enumerate()
            .map(|(k, &(u, v))| (probe.index_of(u, v).expect("in range"), k))
            .collect();
        let mut partner = Vec::with_capacity(coords.len());
        let mut canonical = Vec::new();
        for (k, &(u, v)) in coords.iter().enumerate() {
            let m = probe.mirror_index(probe.index_of(u, v).expect("in range"));
            let p = pos.get(&m).copied();
            partner.push(p);
            if p.is_none_or(|p| p >= k) {
                canonical.push(k);
            }
        }
        Self {
            width,
            height,
            r_min,
            r_max,
            channel,
            coords,
            partner,
            canonical,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn r_min(&self) -> f64 {
        self.r_min
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn channel(&self) -> usize {
        self.channel
    }
    pub fn coords(&self) -> &[(i64, i64)] {
        &self.coords
    }
    pub fn len(&self) -> usize {
        self.coords.len()
    }
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Positions (into [`Self::coords`]) of the canonical coordinates.
    pub fn canonical(&self) -> &[usize] {
        &self.canonical
    }

    /// Position of the Hermitian partner of coordinate `k`, if it is masked.
    pub fn partner(&self, k: usize) -> Option<usize> {
        self.partner[k]
    }

    /// Canonical offsets `(u, v)`.
    pub fn canonical_coords(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.canonical.iter().map(|&k| self.coords[k])
    }

    fn check_latent(&self, latent: &LatentGrid) -> Result<()> {
        if latent.width() != self.width || latent.height() != self.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} latent", self.height, self.width),
                found: format!("{}x{}", latent.height(), latent.width()),
            });
        }
        if self.channel >= latent.channels() {
            return Err(Error::invalid(format!(
                "mask channel {} but latent has {} channels",
                self.channel,
                latent.channels()
            )));
        }
        Ok(())
    }

    /// Spectrum of the masked channel.
    pub fn spectrum(&self, latent: &LatentGrid) -> Result<Spectrum> {
        self.check_latent(latent)?;
        fft2_centered(latent.plane(self.channel), self.height, self.width)
    }

    /// Recovered coefficients at the canonical coordinates.
    pub fn read(&self, latent: &LatentGrid) -> Result<Vec<Complex64>> {
        let s = self.spectrum(latent)?;
        Ok(self
            .canonical_coords()
            .map(|(u, v)| s.at(u, v).expect("mask inside grid"))
            .collect())
    }
}

/// Real key values, one per mask coordinate (Hermitian partners share a value).
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    pub eta: Vec<f64>,
    pub seed: u64,
}

impl WatermarkKey {
    /// Key values at the canonical coordinates, in canonical order.
    pub fn canonical_values(&self, mask: &RingMask) -> Vec<f64> {
        mask.canonical().iter().map(|&k| self.eta[k]).collect()
    }

    fn check(&self, mask: &RingMask) -> Result<()> {
        if self.eta.len() != mask.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} key values", mask.len()),
                found: format!("{}", self.eta.len()),
            });
        }
        if self.eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("watermark key"));
        }
        Ok(())
    }
}

/// Draw i.i.d. N(0, 1) values for the canonical coordinates and copy them to
/// their partners. Value `j` depends only on `(seed, j)`.
pub fn sample_key(mask: &RingMask, seed: u64) -> WatermarkKey {
    let mut eta = vec![0.0; mask.len()];
    for (j, &k) in mask.canonical().iter().enumerate() {
        let x = rng::counter_normal(seed, j as u64);
        eta[k] = x;
        if let Some(p) = mask.partner(k) {
            eta[p] = x;
        }
    }
    WatermarkKey { eta, seed }
}

/// Overwrite the masked coefficients of the mask channel with `eta + 0i`.
pub fn embed_key(latent: &LatentGrid, mask: &RingMask, key: &WatermarkKey) -> Result<LatentGrid> {
    key.check(mask)?;
    let mut s = mask.spectrum(latent)?;
    for &k in mask.canonical() {
        let (u, v) = mask.coords()[k];
        let i = s.index_of(u, v).expect("mask inside grid");
        let m = s.mirror_index(i);
        let z = Complex64::new(key.eta[k], 0.0);
        s.coeffs_mut()[i] = z;
        s.coeffs_mut()[m] = z;
    }
    let plane = ifft2_centered(&s)?;
    let mut out = latent.clone();
    out.plane_mut(mask.channel()).copy_from_slice(&plane);
    Ok(out)
}

/// How the recovered coefficient is compared with the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// `|eta - Re Z|`
    #[default]
    RealPart,
    /// `|eta - Z|`
    Complex,
}

pub fn distance_from_coeffs(eta: &[f64], z: &[Complex64], mode: DistanceMode) -> f64 {
    let sum: f64 = eta
        .iter()
        .zip(z)
        .map(|(&e, z)| match mode {
            DistanceMode::RealPart => (e - z.re).abs(),
            DistanceMode::Complex => (Complex64::new(e, 0.0) - z).norm(),
        })
        .sum();
    sum / eta.len() as f64
}

/// Mean absolute deviation between key and recovered real parts over the
/// canonical coordinates.
pub fn detection_distance(latent: &LatentGrid, mask: &RingMask, key: &WatermarkKey) -> Result<f64> {
    detection_distance_with(latent, mask, key, DistanceMode::RealPart)
}

pub fn detection_distance_with(
    latent: &LatentGrid,
    mask: &RingMask,
    key: &WatermarkKey,
    mode: DistanceMode,
) -> Result<f64> {
    key.check(mask)?;
    let z = mask.read(latent)?;
    Ok(distance_from_coeffs(&key.canonical_values(mask), &z, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub distance: f64,
    pub detected: bool,
    pub threshold: f64,
}

pub fn decide(distance: f64, threshold: f64) -> Result<DetectionResult> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold}")));
    }
    Ok(DetectionResult {
        distance,
        detected: distance < threshold,
        threshold,
    })
}

/// Fraction of canonical coordinates where `sign(Re Z) == sign(eta)`.
pub fn bit_accuracy(latent: &LatentGrid, mask: &RingMask, key: &WatermarkKey) -> Result<f64> {
    key.check(mask)?;
    let eta = key.canonical_values(mask);
    if eta.iter().any(|&e| e == 0.0) {
        return Err(Error::invalid("bit accuracy needs a key with no zero values"));
    }
    let z = mask.read(latent)?;
    Ok(sign_agreement(&eta, &z))
}

pub fn sign_agreement(eta: &[f64], z: &[Complex64]) -> f64 {
    let hits = eta.iter().zip(z).filter(|(e, z)| (z.re > 0.0) == (**e > 0.0)).count();
    hits as f64 / eta.len() as f64
}

/// On-disk form of a mask plus key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub width: usize,
    pub height: usize,
    pub channel: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
    pub coordinates: Vec<[i64; 2]>,
    pub eta: Vec<f64>,
}

impl KeyFile {
    pub fn new(mask: &RingMask, key: &WatermarkKey) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            channel: mask.channel,
            r_min: mask.r_min,
            r_max: mask.r_max,
            seed: key.seed,
            coordinates: mask.coords.iter().map(|&(u, v)| [u, v]).collect(),
            eta: key.eta.clone(),
        }
    }

    /// Rebuild the mask from the stored coordinate list and validate it.
    pub fn into_parts(self) -> Result<(RingMask, WatermarkKey)> {
        let coords: Vec<(i64, i64)> = self.coordinates.iter().map(|c| (c[0], c[1])).collect();
        if coords.is_empty() {
            return Err(Error::EmptyMask {
                r_min: self.r_min,
                r_max: self.r_max,
            });
        }
        let probe = Spectrum::zeros(self.height.max(1), self.width.max(1));
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &coords {
            if probe.index_of(u, v).is_none() || !seen.insert((u, v)) {
                return Err(Error::Format(format!("bad or duplicate mask coordinate ({u}, {v})")));
            }
        }
        let mask = RingMask::with_coords(self.width, self.height, self.r_min, self.r_max, self.channel, coords);
        let key = WatermarkKey {
            eta: self.eta,
            seed: self.seed,
        };
        key.check(&mask)?;
        Ok((mask, key))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice_count(r_min: f64, r_max: f64) -> usize {
        let r = r_max.ceil() as i64;
        let mut n = 0;
        for v in -r..=r {
            for u in -r..=r {
                let d = ((u * u + v * v) as f64).sqrt();
                if d >= r_min && d <= r_max {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn ring_sizes() {
        let m = RingMask::new(64, 64, 0.0, 0.5, 0).unwrap();
        assert_eq!(m.coords(), &[(0, 0)]);
        let m = RingMask::new(64, 64, 0.0, 16.0, 0).unwrap();
        assert_eq!(m.len(), lattice_count(0.0, 16.0));
        assert_eq!(m.len(), 797);
        assert_eq!(m.canonical().len(), 399);
        assert!(RingMask::new(64, 64, 0.0, 33.0, 0).is_err());
        assert!(matches!(RingMask::new(64, 64, 1.1, 1.2, 0), Err(Error::EmptyMask { .. })));
    }

    #[test]
    fn ring_is_row_major() {
        let m = RingMask::new(16, 16, 1.0, 3.0, 0).unwrap();
        let keys: Vec<(i64, i64)> = m.coords().iter().map(|&(u, v)| (v, u)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn embed_reads_back_exactly() {
        let mask = RingMask::new(32, 32, 2.0, 8.0, 1).unwrap();
        let key = sample_key(&mask, 11);
        let z = LatentGrid::standard_normal(2, 32, 32, 5).unwrap();
        let zw = embed_key(&z, &mask, &key).unwrap();
        assert_eq!(zw.plane(0), z.plane(0));
        let d = detection_distance(&zw, &mask, &key).unwrap();
        assert!(d < 1e-12, "{d}");
        assert_eq!(bit_accuracy(&zw, &mask, &key).unwrap(), 1.0);
    }

    #[test]
    fn negated_key_has_zero_accuracy() {
        let mask = RingMask::new(16, 16, 1.0, 4.0, 0).unwrap();
        let key = sample_key(&mask, 2);
        let neg = WatermarkKey {
            eta: key.eta.iter().map(|v| -v).collect(),
            seed: 0,
        };
        let z = embed_key(&LatentGrid::zeros(1, 16, 16).unwrap(), &mask, &neg).unwrap();
        assert_eq!(bit_accuracy(&z, &mask, &key).unwrap(), 0.0);
    }

    #[test]
    fn single_coordinate_distance() {
        let mask = RingMask::new(8, 8, 0.0, 0.5, 0).unwrap();
        let key = WatermarkKey {
            eta: vec![1.0],
            seed: 0,
        };
        let z = LatentGrid::zeros(1, 8, 8).unwrap();
        assert_eq!(detection_distance(&z, &mask, &key).unwrap(), 1.0);
    }

    #[test]
    fn decide_is_strict() {
        assert!(decide(0.0, 0.1).unwrap().detected);
        assert!(!decide(0.1, 0.1).unwrap().detected);
        assert!(!decide(0.886, 0.3).unwrap().detected);
        assert!(decide(0.1, 0.0).is_err());
    }

    #[test]
    fn zero_key_value_rejected_for_accuracy() {
        let mask = RingMask::new(8, 8, 0.0, 1.0, 0).unwrap();
        let key = WatermarkKey {
            eta: vec![0.0; mask.len()],
            seed: 0,
        };
        let z = LatentGrid::zeros(1, 8, 8).unwrap();
        assert!(bit_accuracy(&z, &mask, &key).is_err());
    }

    #[test]
    fn key_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = RingMask::new(16, 16, 1.0, 5.0, 0).unwrap();
        let key = sample_key(&mask, 77);
        let path = dir.path().join("key.json");
        KeyFile::new(&mask, &key).write(&path).unwrap();
        let (m2, k2) = KeyFile::read(&path).unwrap().into_parts().unwrap();
        assert_eq!(m2, mask);
        assert_eq!(k2, key);
    }
}
