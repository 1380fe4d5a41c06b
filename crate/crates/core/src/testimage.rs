//! Deterministic synthetic RGB images with natural-image-like statistics:
//! a smooth background gradient, a few soft-edged ellipses, and a band of
//! low-amplitude texture with a `1/f` amplitude falloff.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::Result;
use crate::grid::{ImageGrid, Planes};
use crate::rng;

pub fn natural(height: usize, width: usize, seed: u64) -> Result<ImageGrid> {
    let mut r = rng::stream(seed, &[0x696d_6167]);
    let (hf, wf) = (height as f64, width as f64);
    let base: [[f64; 3]; 2] = [
        [r.random_range(0.2..0.5), r.random_range(0.2..0.5), r.random_range(0.2..0.5)],
        [r.random_range(0.5..0.8), r.random_range(0.5..0.8), r.random_range(0.5..0.8)],
    ];
    let angle = r.random_range(0.0..TAU);
    let (ga, gb) = (angle.cos(), angle.sin());

    struct Blob {
        c: [f64; 2],
        r: [f64; 2],
        rot: f64,
        color: [f64; 3],
        soft: f64,
    }
    let blobs: Vec<Blob> = (0..5)
        .map(|_| Blob {
            c: [r.random_range(0.0..wf), r.random_range(0.0..hf)],
            r: [r.random_range(0.08..0.3) * wf, r.random_range(0.08..0.3) * hf],
            rot: r.random_range(0.0..TAU),
            color: [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)],
            soft: r.random_range(0.05..0.2),
        })
        .collect();

    let waves: Vec<([f64; 2], f64, f64)> = (0..24)
        .map(|_| {
            let f = r.random_range(1.0..(wf.min(hf) / 4.0));
            let th = r.random_range(0.0..TAU);
            ([f * th.cos() / wf, f * th.sin() / hf], r.random_range(0.0..TAU), 0.06 / f.sqrt())
        })
        .collect();

    let mut planes = vec![vec![0.0; height * width]; 3];
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let t = (((xf / wf - 0.5) * ga + (yf / hf - 0.5) * gb) + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = base[0][c] * (1.0 - t) + base[1][c] * t;
            }
            for b in &blobs {
                let (dx, dy) = (xf - b.c[0], yf - b.c[1]);
                let (s, co) = b.rot.sin_cos();
                let u = (co * dx + s * dy) / b.r[0];
                let v = (-s * dx + co * dy) / b.r[1];
                let d = (u * u + v * v).sqrt();
                let a = 1.0 / (1.0 + ((d - 1.0) / b.soft).exp());
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + b.color[c] * a;
                }
            }
            let tex: f64 = waves
                .iter()
                .map(|(k, ph, amp)| amp * (TAU * (k[0] * xf + k[1] * yf) + ph).sin())
                .sum();
            for c in 0..3 {
                planes[c][y * width + x] = (px[c] + tex).clamp(0.0, 1.0);
            }
        }
    }
    Planes::from_planes(height, width, planes).map(ImageGrid)
}
