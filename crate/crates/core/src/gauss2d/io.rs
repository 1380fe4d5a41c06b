//! Scene files: magic `GMS1`; little-endian `u32` patch size, margin,
//! Gaussians per patch, height, width; `f64` offset bound; `f64` frame
//! translation x, translation y, rotation (degrees), scale; `u32` record count;
//! then one record of 12 `f32` per Gaussian in patch-major order:
//! `patch, mu_fix.x, mu_fix.y, raw.x, raw.y, log_l11, l21, log_l22, r, g, b, alpha`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::GeometricTransform;

use super::{Gaussian2D, GaussianScene};

pub const SCENE_MAGIC: &[u8; 4] = b"GMS1";
pub const SCENE_RECORD_LEN: usize = 12;
const HEADER_LEN: usize = 4 + 5 * 4 + 8 + 4 * 8 + 4;

impl GaussianScene {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.len() * SCENE_RECORD_LEN * 4);
        buf.extend_from_slice(SCENE_MAGIC);
        for v in [self.patch, self.margin, self.per_patch, self.height, self.width] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.beta.to_le_bytes());
        let f = &self.frame;
        for v in [f.translation_x_px, f.translation_y_px, f.rotation_deg, f.scale] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (k, list) in self.patches.iter().enumerate() {
            for g in list {
                let rec = [
                    k as f64,
                    g.mu_fix[0],
                    g.mu_fix[1],
                    g.offset_raw[0],
                    g.offset_raw[1],
                    g.log_l11,
                    g.l21,
                    g.log_l22,
                    g.color[0],
                    g.color[1],
                    g.color[2],
                    g.opacity,
                ];
                for v in rec {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != SCENE_MAGIC {
            return Err(Error::Format("missing GMS1 scene header".into()));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (patch, margin, per_patch, height, width) = (u(0), u(1), u(2), u(3), u(4));
        let f = |i: usize| f64::from_le_bytes(bytes[24 + 8 * i..32 + 8 * i].try_into().unwrap());
        let beta = f(0);
        let frame = GeometricTransform {
            translation_x_px: f(1),
            translation_y_px: f(2),
            rotation_deg: f(3),
            scale: f(4),
        };
        let count = u32::from_le_bytes(bytes[64..68].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != count * SCENE_RECORD_LEN * 4 {
            return Err(Error::Format(format!(
                "scene body is {} bytes, header implies {count} records",
                body.len()
            )));
        }
        if patch == 0 || height % patch.max(1) != 0 || width % patch.max(1) != 0 {
            return Err(Error::Format(format!("bad scene layout p={patch} H={height} W={width}")));
        }
        let n_patches = (height / patch) * (width / patch);
        let mut patches = vec![Vec::new(); n_patches];
        for rec in body.chunks_exact(SCENE_RECORD_LEN * 4) {
            let v: Vec<f64> = rec
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            let k = v[0] as usize;
            if v[0] < 0.0 || v[0].fract() != 0.0 || k >= n_patches {
                return Err(Error::Format(format!("record names patch {} of {n_patches}", v[0])));
            }
            patches[k].push(Gaussian2D {
                mu_fix: [v[1], v[2]],
                offset_raw: [v[3], v[4]],
                log_l11: v[5],
                l21: v[6],
                log_l22: v[7],
                color: [v[8], v[9], v[10]],
                opacity: v[11],
            });
        }
        let mut scene = Self::from_patches_in_frame(height, width, patch, margin, beta, frame, patches)?;
        scene.per_patch = per_patch;
        Ok(scene)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_bytes(path, &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{init_scene, SceneConfig};
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let cfg = SceneConfig {
            per_patch: 4,
            ..SceneConfig::default()
        };
        let s = init_scene(32, 48, &cfg, 3).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"GMS1");
        assert_eq!(bytes.len(), HEADER_LEN + s.len() * 48);
        let back = GaussianScene::from_bytes(&bytes).unwrap();
        assert_eq!(back.per_patch(), 4);
        assert_eq!(back.beta(), s.beta());
        for (a, b) in s.iter().zip(back.iter()) {
            for (x, y) in a.params().iter().zip(b.params()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn truncated_rejected() {
        let s = init_scene(16, 16, &SceneConfig::default(), 0).unwrap();
        let bytes = s.to_bytes();
        assert!(GaussianScene::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(GaussianScene::from_bytes(b"GML1").is_err());
    }
}
