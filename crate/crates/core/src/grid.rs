//! Multi-channel planar arrays and their on-disk formats.
//!
//! Both latents and images are stored channel-major, row-major within a
//! channel. The binary "GML1" layout is: the four magic bytes `GML1`, then
//! `c`, `h`, `w` as little-endian `u32`, then `c*h*w` little-endian `f32`.

use std::fs;
use std::io::Write;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

pub const GML1_MAGIC: &[u8; 4] = b"GML1";

/// `channels x height x width` real array.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        check_dims(channels, height, width)?;
        Ok(Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", channels * height * width),
                found: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Stack single-channel planes of equal size.
    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        let data: Vec<f64> = planes.into_iter().flatten().collect();
        Self::from_vec(channels, height, width, data)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Planes) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.shape()),
                found: format!("{:?}", other.shape()),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Planes {
        Planes {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> Planes {
        Planes {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn write_gml1(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        buf.extend_from_slice(GML1_MAGIC);
        for d in [self.channels, self.height, self.width] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_gml1(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_gml1(&bytes)
    }

    pub fn decode_gml1(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != GML1_MAGIC {
            return Err(Error::Format("missing GML1 header".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (c, h, w) = (dim(0), dim(1), dim(2));
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Format("GML1 dimensions overflow".into()))?;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::Format(format!(
                "GML1 payload is {} bytes, header implies {}",
                bytes.len() - 16,
                4 * n
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Self::from_vec(c, h, w, data)
    }
}

fn check_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("grid dimensions must be positive, got {c}x{h}x{w}")));
    }
    Ok(())
}

/// Latent array: `c x h x w` at stride-reduced resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid(pub Planes);

/// Pixel-resolution array. Display channels live in [0, 1]; channels that
/// carry a decoded latent are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid(pub Planes);

macro_rules! planes_newtype {
    ($t:ident) => {
        impl Deref for $t {
            type Target = Planes;
            fn deref(&self) -> &Planes {
                &self.0
            }
        }
        impl DerefMut for $t {
            fn deref_mut(&mut self) -> &mut Planes {
                &mut self.0
            }
        }
        impl From<Planes> for $t {
            fn from(p: Planes) -> Self {
                $t(p)
            }
        }
        impl $t {
            pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
                Planes::zeros(channels, height, width).map($t)
            }
            pub fn filled(channels: usize, height: usize, width: usize, v: f64) -> Result<Self> {
                Planes::filled(channels, height, width, v).map($t)
            }
            pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
                Planes::from_vec(channels, height, width, data).map($t)
            }
            pub fn into_planes(self) -> Planes {
                self.0
            }
            pub fn read_gml1(path: impl AsRef<Path>) -> Result<Self> {
                Planes::read_gml1(path).map($t)
            }
        }
    };
}

planes_newtype!(LatentGrid);
planes_newtype!(ImageGrid);

impl LatentGrid {
    /// i.i.d. standard normal latent. Channel `k` is drawn from its own
    /// stream, so a channel's values do not depend on how many channels exist.
    pub fn standard_normal(channels: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        check_dims(channels, height, width)?;
        let mut planes = Vec::with_capacity(channels);
        for c in 0..channels {
            planes.push(normal_plane(height * width, seed, c as u64));
        }
        Planes::from_planes(height, width, planes).map(LatentGrid)
    }
}

pub(crate) fn normal_plane(n: usize, seed: u64, channel: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[channel]);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl ImageGrid {
    /// Load an 8-bit PNG (or anything the `image` crate decodes) into [0, 1].
    /// Grayscale stays 1-channel, everything else becomes RGB.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let planes = match img.color().channel_count() {
            1 | 2 => {
                let g = img.to_luma8();
                vec![g.pixels().map(|p| p.0[0] as f64 / 255.0).collect()]
            }
            _ => {
                let rgb = img.to_rgb8();
                (0..3)
                    .map(|c| rgb.pixels().map(|p| p.0[c] as f64 / 255.0).collect())
                    .collect()
            }
        };
        Planes::from_planes(h, w, planes).map(ImageGrid)
    }

    /// Write channels 1, 3 or 4 as an 8-bit PNG, clamping to [0, 1].
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (c, h, w) = self.shape();
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let wrap = |source| Error::Image {
            path: path.to_path_buf(),
            source,
        };
        match c {
            1 => {
                let buf: Vec<u8> = self.plane(0).iter().map(|&v| q(v)).collect();
                image::GrayImage::from_raw(w as u32, h as u32, buf)
                    .expect("buffer size")
                    .save(path)
                    .map_err(wrap)
            }
            3 | 4 => {
                let mut buf = Vec::with_capacity(h * w * c);
                for i in 0..h * w {
                    for k in 0..c {
                        buf.push(q(self.plane(k)[i]));
                    }
                }
                if c == 3 {
                    image::RgbImage::from_raw(w as u32, h as u32, buf)
                        .expect("buffer size")
                        .save(path)
                        .map_err(wrap)
                } else {
                    image::RgbaImage::from_raw(w as u32, h as u32, buf)
                        .expect("buffer size")
                        .save(path)
                        .map_err(wrap)
                }
            }
            _ => Err(Error::invalid(format!("cannot write a {c}-channel image as PNG"))),
        }
    }

    /// Read `.png` files through [`Self::read_png`], anything else as GML1.
    pub fn read_any(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_png(path) {
            Self::read_png(path)
        } else {
            Self::read_gml1(path)
        }
    }

    pub fn write_any(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_png(path) {
            self.write_png(path)
        } else {
            self.write_gml1(path)
        }
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Write a binary mask as a 1-bit grayscale PNG (set pixels are white).
pub fn write_mask_png(mask: &[bool], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if mask.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: format!("{} mask entries", width * height),
            found: format!("{}", mask.len()),
        });
    }
    let stride = width.div_ceil(8);
    let mut packed = vec![0u8; stride * height];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e.to_string()));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&packed).map_err(to_io)?;
    writer.finish().map_err(to_io)
}
