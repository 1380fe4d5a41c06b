//! Linear stand-in for a VAE: Gaussian blur plus strided sampling.
//!
//! Latent cell `n` sits at pixel `stride * n`. Decoding spreads each cell over
//! a centered box of width `stride` (for even strides the two end pixels get
//! half weight, which keeps the box symmetric) and blurs with the Gaussian
//! `psi`. Encoding blurs with `psi` and samples every `stride` pixels.
//!
//! Both directions are separable, so each is built once per axis as a sparse
//! matrix and applied row-wise then column-wise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, LatentGrid, Planes};
use crate::par;
use crate::spectrum::fft2_centered;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Circular,
    Replicate,
}

impl Boundary {
    #[inline]
    fn map(self, i: i64, n: usize) -> usize {
        match self {
            Boundary::Circular => i.rem_euclid(n as i64) as usize,
            Boundary::Replicate => i.clamp(0, n as i64 - 1) as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub stride: usize,
    pub sigma_px: f64,
    pub radius_px: usize,
    pub boundary: Boundary,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self::with_stride(8)
    }
}

impl SurrogateConfig {
    /// `sigma = stride / 2`, radius `ceil(3 sigma)`, circular boundary.
    pub fn with_stride(stride: usize) -> Self {
        let sigma_px = stride as f64 / 2.0;
        Self {
            stride,
            sigma_px,
            radius_px: (3.0 * sigma_px).ceil() as usize,
            boundary: Boundary::Circular,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if !(self.sigma_px > 0.0 && self.sigma_px.is_finite()) {
            return Err(Error::invalid(format!("kernel sigma must be positive, got {}", self.sigma_px)));
        }
        let need = (3.0 * self.sigma_px).ceil() as usize;
        if self.radius_px < need {
            return Err(Error::invalid(format!(
                "kernel radius {} is below ceil(3 sigma) = {need}",
                self.radius_px
            )));
        }
        Ok(())
    }

    /// Normalized 1-D kernel, index `radius + t` holds the weight at offset `t`.
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.radius_px as i64;
        let two_s2 = 2.0 * self.sigma_px * self.sigma_px;
        let raw: Vec<f64> = (-r..=r).map(|t| (-((t * t) as f64) / two_s2).exp()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    /// Weight of latent cell offset `t` pixels away from the cell position.
    fn box_weight(&self, t: i64) -> f64 {
        let s = self.stride as i64;
        let a = 2 * t.abs();
        if a < s {
            1.0
        } else if a == s {
            0.5
        } else {
            0.0
        }
    }
}

/// Sparse `out_len x in_len` matrix, one row of `(column, weight)` per output.
#[derive(Debug, Clone)]
struct AxisOp {
    in_len: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl AxisOp {
    fn push(row: &mut Vec<(usize, f64)>, col: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        match row.iter_mut().find(|(c, _)| *c == col) {
            Some(e) => e.1 += w,
            None => row.push((col, w)),
        }
    }

    fn finish(mut rows: Vec<Vec<(usize, f64)>>, in_len: usize) -> Self {
        for r in &mut rows {
            r.sort_by_key(|e| e.0);
        }
        Self { in_len, rows }
    }

    /// Decoder along one axis: `n` cells to `stride * n` pixels.
    fn decoder(cfg: &SurrogateConfig, n: usize) -> Self {
        let s = cfg.stride as i64;
        let len = cfg.stride * n;
        let psi = cfg.kernel();
        let r = cfg.radius_px as i64;
        let half = s / 2 + 1;
        let mut rows = vec![Vec::new(); len];
        for (x, row) in rows.iter_mut().enumerate() {
            for j in -r..=r {
                let t = cfg.boundary.map(x as i64 + j, len) as i64;
                let wj = psi[(j + r) as usize];
                let base = t.div_euclid(s);
                for m in base - half..=base + half {
                    let b = cfg.box_weight(t - s * m);
                    if b != 0.0 {
                        Self::push(row, cfg.boundary.map(m, n), wj * b);
                    }
                }
            }
        }
        Self::finish(rows, n)
    }

    /// Encoder along one axis: `stride * n` pixels to `n` samples.
    fn encoder(cfg: &SurrogateConfig, n: usize) -> Self {
        let len = cfg.stride * n;
        let psi = cfg.kernel();
        let r = cfg.radius_px as i64;
        let mut rows = vec![Vec::new(); n];
        for (k, row) in rows.iter_mut().enumerate() {
            let c = (cfg.stride * k) as i64;
            for j in -r..=r {
                Self::push(row, cfg.boundary.map(c + j, len), psi[(j + r) as usize]);
            }
        }
        Self::finish(rows, len)
    }

    /// Apply along both axes of an `in_h x in_w` plane.
    fn apply2(&self, cols: &AxisOp, plane: &[f64], in_h: usize) -> Vec<f64> {
        let in_w = cols.in_len;
        let out_w = cols.rows.len();
        let mut tmp = vec![0.0; in_h * out_w];
        for y in 0..in_h {
            let src = &plane[y * in_w..(y + 1) * in_w];
            for (x, row) in cols.rows.iter().enumerate() {
                tmp[y * out_w + x] = row.iter().map(|&(c, w)| w * src[c]).sum();
            }
        }
        let out_h = self.rows.len();
        let mut out = vec![0.0; out_h * out_w];
        for (y, row) in self.rows.iter().enumerate() {
            let dst = &mut out[y * out_w..(y + 1) * out_w];
            for &(c, w) in row {
                let src = &tmp[c * out_w..(c + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

/// Prebuilt operators for a fixed latent size.
#[derive(Debug, Clone)]
pub struct Surrogate {
    cfg: SurrogateConfig,
    h: usize,
    w: usize,
    dec_rows: AxisOp,
    dec_cols: AxisOp,
    enc_rows: AxisOp,
    enc_cols: AxisOp,
}

impl Surrogate {
    /// Operators for an `h x w` latent (image `stride*h x stride*w`).
    pub fn new(cfg: SurrogateConfig, h: usize, w: usize) -> Result<Self> {
        cfg.validate()?;
        if h == 0 || w == 0 {
            return Err(Error::invalid("latent size must be positive"));
        }
        Ok(Self {
            cfg,
            h,
            w,
            dec_rows: AxisOp::decoder(&cfg, h),
            dec_cols: AxisOp::decoder(&cfg, w),
            enc_rows: AxisOp::encoder(&cfg, h),
            enc_cols: AxisOp::encoder(&cfg, w),
        })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.cfg
    }

    pub fn latent_size(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.cfg.stride * self.h, self.cfg.stride * self.w)
    }

    pub fn decode_plane(&self, plane: &[f64]) -> Vec<f64> {
        self.dec_rows.apply2(&self.dec_cols, plane, self.h)
    }

    pub fn encode_plane(&self, plane: &[f64]) -> Vec<f64> {
        self.enc_rows.apply2(&self.enc_cols, plane, self.cfg.stride * self.h)
    }

    pub fn decode(&self, z: &LatentGrid) -> Result<ImageGrid> {
        if (z.height(), z.width()) != (self.h, self.w) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} latent", self.h, self.w),
                found: format!("{}x{}", z.height(), z.width()),
            });
        }
        let planes = par::map_range(z.channels(), |c| self.decode_plane(z.plane(c)));
        let (hh, ww) = self.image_size();
        Planes::from_planes(hh, ww, planes).map(ImageGrid)
    }

    pub fn encode(&self, img: &ImageGrid) -> Result<LatentGrid> {
        if (img.height(), img.width()) != self.image_size() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?} image", self.image_size()),
                found: format!("{}x{}", img.height(), img.width()),
            });
        }
        let planes = par::map_range(img.channels(), |c| self.encode_plane(img.plane(c)));
        Planes::from_planes(self.h, self.w, planes).map(LatentGrid)
    }

    /// Frequency response of `encode(decode(.))` on the latent grid, as a
    /// row-major array in centered order. Exact in circular mode.
    pub fn round_trip_transfer(&self) -> Result<Vec<f64>> {
        let mut delta = vec![0.0; self.h * self.w];
        delta[0] = 1.0;
        let resp = self.encode_plane(&self.decode_plane(&delta));
        let s = fft2_centered(&resp, self.h, self.w)?;
        let scale = ((self.h * self.w) as f64).sqrt();
        Ok(s.coeffs().iter().map(|z| z.re * scale).collect())
    }
}

/// Decode a latent with a one-off operator.
pub fn decode_upsample(z: &LatentGrid, cfg: &SurrogateConfig) -> Result<ImageGrid> {
    Surrogate::new(*cfg, z.height(), z.width())?.decode(z)
}

/// Encode an image with a one-off operator.
pub fn encode_downsample(img: &ImageGrid, cfg: &SurrogateConfig) -> Result<LatentGrid> {
    cfg.validate()?;
    let s = cfg.stride;
    if img.height() % s != 0 || img.width() % s != 0 {
        return Err(Error::invalid(format!(
            "image {}x{} is not divisible by stride {s}",
            img.height(),
            img.width()
        )));
    }
    Surrogate::new(*cfg, img.height() / s, img.width() / s)?.encode(img)
}
