//! Reconstruction losses, image quality, and ROC evaluation.
//!
//! Losses are mean-reduced over pixels and channels.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Planes;
use crate::io::fmt_f64;
use crate::par;
use crate::spectrum::{fft2_centered, ifft2_complex};

/// PSNR reported when the mean squared error is below [`PSNR_MSE_FLOOR`].
pub const PSNR_CAP_DB: f64 = 99.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

pub fn l1_loss(a: &Planes, b: &Planes) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

pub fn mse(a: &Planes, b: &Planes) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrequencyLossSpec {
    pub gamma: f64,
    pub weight: f64,
}

impl Default for FrequencyLossSpec {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            weight: 1.0,
        }
    }
}

impl FrequencyLossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("frequency exponent must be positive, got {}", self.gamma)));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::invalid(format!("frequency weight must be >= 0, got {}", self.weight)));
        }
        Ok(())
    }
}

/// Spectrum of `a - b` per channel (the transform is linear).
fn diff_spectra(a: &Planes, b: &Planes) -> Result<Vec<crate::spectrum::Spectrum>> {
    a.same_shape(b)?;
    let (c, h, w) = a.shape();
    let specs = par::map_range(c, |k| {
        let d: Vec<f64> = a.plane(k).iter().zip(b.plane(k)).map(|(x, y)| x - y).collect();
        fft2_centered(&d, h, w)
    });
    specs.into_iter().collect()
}

/// `(1 / HW) sum |F(a) - F(b)|^gamma`, averaged over channels.
pub fn frequency_loss(a: &Planes, b: &Planes, spec: &FrequencyLossSpec) -> Result<f64> {
    spec.validate()?;
    let specs = diff_spectra(a, b)?;
    let n = a.data().len() as f64;
    let total: f64 = specs
        .iter()
        .map(|s| s.coeffs().iter().map(|z| z.norm().powf(spec.gamma)).sum::<f64>())
        .sum();
    Ok(total / n)
}

/// Combined reconstruction objective `l1_weight * L1 + weight * L_freq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub l1_weight: f64,
    pub frequency: Option<FrequencyLossSpec>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            l1_weight: 1.0,
            frequency: Some(FrequencyLossSpec::default()),
        }
    }
}

impl LossSpec {
    pub fn l1() -> Self {
        Self {
            l1_weight: 1.0,
            frequency: None,
        }
    }

    pub fn frequency_only(gamma: f64) -> Self {
        Self {
            l1_weight: 0.0,
            frequency: Some(FrequencyLossSpec { gamma, weight: 1.0 }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1_weight >= 0.0 && self.l1_weight.is_finite()) {
            return Err(Error::invalid("l1 weight must be >= 0"));
        }
        if let Some(f) = &self.frequency {
            f.validate()?;
        }
        Ok(())
    }

    pub fn value(&self, output: &Planes, target: &Planes) -> Result<f64> {
        self.validate()?;
        let mut v = 0.0;
        if self.l1_weight > 0.0 {
            v += self.l1_weight * l1_loss(output, target)?;
        }
        if let Some(f) = &self.frequency {
            if f.weight > 0.0 {
                v += f.weight * frequency_loss(output, target, f)?;
            }
        }
        Ok(v)
    }

    /// Loss and its gradient with respect to every value of `output`.
    pub fn value_and_grad(&self, output: &Planes, target: &Planes) -> Result<(f64, Vec<f64>)> {
        self.validate()?;
        output.same_shape(target)?;
        let n = output.data().len() as f64;
        let mut grad = vec![0.0; output.data().len()];
        let mut loss = 0.0;
        if self.l1_weight > 0.0 {
            let g = self.l1_weight / n;
            for ((gi, o), t) in grad.iter_mut().zip(output.data()).zip(target.data()) {
                let d = o - t;
                loss += d.abs();
                *gi += if d > 0.0 {
                    g
                } else if d < 0.0 {
                    -g
                } else {
                    0.0
                };
            }
            loss *= self.l1_weight / n;
        }
        if let Some(f) = self.frequency.filter(|f| f.weight > 0.0) {
            let specs = diff_spectra(output, target)?;
            let plane = output.plane_len();
            let mut acc = 0.0;
            for (k, s) in specs.iter().enumerate() {
                let mut weighted = s.clone();
                for z in weighted.coeffs_mut() {
                    let m = z.norm();
                    acc += m.powf(f.gamma);
                    *z = if m > 0.0 { *z * m.powf(f.gamma - 2.0) } else { Complex64::new(0.0, 0.0) };
                }
                let back = ifft2_complex(&weighted);
                let scale = f.weight * f.gamma / n;
                for (gi, z) in grad[k * plane..(k + 1) * plane].iter_mut().zip(&back) {
                    *gi += scale * z.re;
                }
            }
            loss += f.weight * acc / n;
        }
        Ok((loss, grad))
    }
}

fn psnr_from_mse(m: f64) -> f64 {
    if m < PSNR_MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        -10.0 * m.log10()
    }
}

/// PSNR with unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Planes, b: &Planes) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR over the region that excludes a `border`-pixel frame.
pub fn psnr_interior(a: &Planes, b: &Planes, border: usize) -> Result<f64> {
    aligned_search(a, b, border, |_, _| false).map(|r| r.psnr_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPsnr {
    pub psnr_db: f64,
    /// `(dx, dy)` such that `b(x + dx, y + dy) ~ a(x, y)`.
    pub shift: (i64, i64),
}

/// Best PSNR between `a` and circular shifts of `b` within `radius` pixels
/// per axis, on the interior that excludes a `radius`-pixel frame. Ties go to
/// the smallest shift norm, then row-major order.
pub fn aligned_psnr(a: &Planes, b: &Planes, radius: usize) -> Result<AlignedPsnr> {
    aligned_search(a, b, radius, |_, _| true)
}

fn aligned_search(
    a: &Planes,
    b: &Planes,
    radius: usize,
    search: impl Fn(i64, i64) -> bool + Sync,
) -> Result<AlignedPsnr> {
    a.same_shape(b)?;
    let (c, h, w) = a.shape();
    if 2 * radius >= h || 2 * radius >= w {
        return Err(Error::invalid(format!("search radius {radius} leaves no interior in {h}x{w}")));
    }
    let r = radius as i64;
    let cands: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| (dx == 0 && dy == 0) || search(dx, dy))
        .collect();
    let count = (c * (h - 2 * radius) * (w - 2 * radius)) as f64;
    let mses = par::map_slice(&cands, |&(dx, dy)| {
        let mut acc = 0.0;
        for k in 0..c {
            let (pa, pb) = (a.plane(k), b.plane(k));
            for y in radius..h - radius {
                let yb = (y as i64 + dy).rem_euclid(h as i64) as usize;
                for x in radius..w - radius {
                    let xb = (x as i64 + dx).rem_euclid(w as i64) as usize;
                    acc += (pa[y * w + x] - pb[yb * w + xb]).powi(2);
                }
            }
        }
        acc / count
    });
    let mut best = 0;
    for i in 1..cands.len() {
        let (m, mb) = (mses[i], mses[best]);
        let n = |(x, y): (i64, i64)| x * x + y * y;
        if m < mb || (m == mb && n(cands[i]) < n(cands[best])) {
            best = i;
        }
    }
    Ok(AlignedPsnr {
        psnr_db: psnr_from_mse(mses[best]),
        shift: cands[best],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocInput {
    pub clean: Vec<f64>,
    pub watermarked: Vec<f64>,
    pub fpr: f64,
}

impl RocInput {
    pub fn validate(&self) -> Result<()> {
        if self.clean.is_empty() || self.watermarked.is_empty() {
            return Err(Error::invalid("ROC needs non-empty score lists"));
        }
        if self.clean.iter().chain(&self.watermarked).any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("ROC scores must be finite and non-negative"));
        }
        if !(self.fpr > 0.0 && self.fpr < 1.0) {
            return Err(Error::invalid(format!("target FPR must be in (0, 1), got {}", self.fpr)));
        }
        Ok(())
    }

    /// The `ceil(fpr * N)`-th smallest clean score.
    pub fn threshold(&self) -> Result<f64> {
        self.validate()?;
        let mut sorted = self.clean.clone();
        sorted.sort_by(f64::total_cmp);
        let k = ((self.fpr * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
        Ok(sorted[k - 1])
    }
}

/// Fraction of watermarked scores strictly below the clean-score threshold.
pub fn tpr_at_fpr(roc: &RocInput) -> Result<f64> {
    let tau = roc.threshold()?;
    let hits = roc.watermarked.iter().filter(|&&s| s < tau).count();
    Ok(hits as f64 / roc.watermarked.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub trial_id: u64,
    pub metric_name: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(trial_id: u64, metric_name: impl Into<String>, value: f64) -> Self {
        Self {
            trial_id,
            metric_name: metric_name.into(),
            value,
        }
    }
}

pub fn metric_csv(records: &[MetricRecord]) -> String {
    let mut s = String::from("trial_id,metric_name,value\n");
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.trial_id, r.metric_name, fmt_f64(r.value));
    }
    s
}

pub fn write_metric_csv(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    crate::io::write_text(path, &metric_csv(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(h: usize, w: usize, data: Vec<f64>) -> Planes {
        Planes::from_vec(1, h, w, data).unwrap()
    }

    #[test]
    fn l1_examples() {
        let z = Planes::zeros(2, 3, 3).unwrap();
        let o = Planes::filled(2, 3, 3, 1.0).unwrap();
        assert_eq!(l1_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(l1_loss(&z, &o).unwrap(), 1.0);
        let mut d = vec![0.0; 16];
        d[5] = 0.8;
        assert!((l1_loss(&p(4, 4, d), &p(4, 4, vec![0.0; 16])).unwrap() - 0.05).abs() < 1e-15);
        assert!(l1_loss(&z, &Planes::zeros(1, 3, 3).unwrap()).is_err());
    }

    #[test]
    fn frequency_of_single_pixel() {
        let mut d = vec![0.0; 16];
        d[6] = 1.0;
        let f = frequency_loss(&p(4, 4, d), &p(4, 4, vec![0.0; 16]), &FrequencyLossSpec::default()).unwrap();
        assert!((f - 0.25).abs() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let a = Planes::filled(1, 4, 4, 0.2).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = Planes::filled(1, 4, 4, 0.3).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = Planes::filled(1, 4, 4, 1.2).unwrap();
        assert!(psnr(&a, &c).unwrap().abs() < 1e-9);
    }

    #[test]
    fn aligned_recovers_integer_shift() {
        let (h, w) = (20, 24);
        let a = p(h, w, crate::grid::normal_plane(h * w, 4, 0));
        let mut b = a.clone();
        for y in 0..h {
            for x in 0..w {
                b.set(0, (y + 3) % h, (x + 2) % w, a.get(0, y, x));
            }
        }
        let r = aligned_psnr(&a, &b, 4).unwrap();
        assert_eq!(r.shift, (2, 3));
        assert_eq!(r.psnr_db, PSNR_CAP_DB);
        let r0 = aligned_psnr(&a, &b, 0).unwrap();
        assert_eq!(r0.shift, (0, 0));
        assert_eq!(r0.psnr_db, psnr(&a, &b).unwrap());
    }

    #[test]
    fn roc_examples() {
        let clean: Vec<f64> = (0..10).map(|i| 0.5 + 0.1 * i as f64).collect();
        let roc = RocInput {
            clean: clean.clone(),
            watermarked: vec![0.1, 0.9],
            fpr: 0.1,
        };
        assert_eq!(roc.threshold().unwrap(), 0.5);
        assert_eq!(tpr_at_fpr(&roc).unwrap(), 0.5);
        let none = RocInput {
            watermarked: vec![1.4, 2.0],
            ..roc.clone()
        };
        assert_eq!(tpr_at_fpr(&none).unwrap(), 0.0);
        let all = RocInput {
            watermarked: vec![0.0; 5],
            ..roc
        };
        assert_eq!(tpr_at_fpr(&all).unwrap(), 1.0);
    }

    #[test]
    fn csv_layout() {
        assert_eq!(metric_csv(&[]), "trial_id,metric_name,value\n");
        let s = metric_csv(&[MetricRecord::new(3, "psnr", 12.5)]);
        assert_eq!(s, "trial_id,metric_name,value\n3,psnr,12.500000000\n");
    }
}
