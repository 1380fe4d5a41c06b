//! Centered, unitary 2-D discrete Fourier transform.
//!
//! Frequency offsets are written `(u, v)`: `u` pairs with the horizontal
//! (column) axis and `v` with the vertical (row) axis. The DC coefficient sits
//! at row `h/2`, column `w/2` (integer division), i.e. the same placement as
//! `fftshift`. Both directions are scaled by `1/sqrt(h*w)`, so Parseval holds
//! without extra factors.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Hermitian-symmetry tolerance accepted by [`ifft2_centered`], relative to
/// the largest coefficient magnitude (floored at 1).
pub const HERMITIAN_TOLERANCE: f64 = 1e-6;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unnormalized 2-D FFT of a row-major `h x w` buffer.
fn fft2_in_place(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let row = plan(w, inverse);
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = plan(h, inverse);
    let mut tmp = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            tmp[y] = buf[y * w + x];
        }
        col.process(&mut tmp);
        for y in 0..h {
            buf[y * w + x] = tmp[y];
        }
    }
}

/// Move index `i` of an unshifted length-`n` axis to its centered position.
#[inline]
fn shift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// DC-centered complex spectrum of one `h x w` channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn from_coeffs(height: usize, width: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != height * width || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} coefficients", height * width),
                found: format!("{}", coeffs.len()),
            });
        }
        Ok(Self {
            height,
            width,
            coeffs,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            coeffs: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }
    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Row and column of the DC coefficient.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Storage index of frequency offset `(u, v)`, if it exists on this grid.
    pub fn index_of(&self, u: i64, v: i64) -> Option<usize> {
        let (cy, cx) = self.center();
        let x = cx as i64 + u;
        let y = cy as i64 + v;
        (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
            .then(|| y as usize * self.width + x as usize)
    }

    /// Frequency offset `(u, v)` of a storage index.
    pub fn offset_of(&self, index: usize) -> (i64, i64) {
        let (cy, cx) = self.center();
        let (y, x) = (index / self.width, index % self.width);
        (x as i64 - cx as i64, y as i64 - cy as i64)
    }

    /// Storage index of the Hermitian partner `(-u, -v)` (modulo the grid).
    pub fn mirror_index(&self, index: usize) -> usize {
        let (cy, cx) = self.center();
        let (y, x) = (index / self.width, index % self.width);
        let my = (2 * cy + self.height - y) % self.height;
        let mx = (2 * cx + self.width - x) % self.width;
        my * self.width + mx
    }

    pub fn at(&self, u: i64, v: i64) -> Option<Complex64> {
        self.index_of(u, v).map(|i| self.coeffs[i])
    }

    pub fn magnitude(&self, index: usize) -> f64 {
        self.coeffs[index].norm()
    }

    pub fn angle(&self, index: usize) -> f64 {
        self.coeffs[index].arg()
    }

    /// Largest `|Z(k) - conj(Z(-k))|` over the grid.
    pub fn hermitian_residual(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[i] - self.coeffs[self.mirror_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Forward transform of a real `h x w` channel. Requires `h, w >= 2`.
pub fn fft2_centered(channel: &[f64], height: usize, width: usize) -> Result<Spectrum> {
    if height < 2 || width < 2 {
        return Err(Error::invalid(format!(
            "fft2_centered needs at least 2x2, got {height}x{width}"
        )));
    }
    if channel.len() != height * width {
        return Err(Error::DimensionMismatch {
            expected: format!("{} values", height * width),
            found: format!("{}", channel.len()),
        });
    }
    if channel.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fft2_centered input"));
    }
    let mut buf: Vec<Complex64> = channel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Ok(spectrum_from_unshifted(&mut buf, height, width))
}

fn spectrum_from_unshifted(buf: &mut [Complex64], height: usize, width: usize) -> Spectrum {
    fft2_in_place(buf, height, width, false);
    let scale = 1.0 / ((height * width) as f64).sqrt();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); height * width];
    for y in 0..height {
        let sy = shift_index(y, height);
        for x in 0..width {
            coeffs[sy * width + shift_index(x, width)] = buf[y * width + x] * scale;
        }
    }
    Spectrum {
        height,
        width,
        coeffs,
    }
}

/// Inverse transform returning the full complex field.
pub fn ifft2_complex(s: &Spectrum) -> Vec<Complex64> {
    let (h, w) = (s.height, s.width);
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        let sy = shift_index(y, h);
        for x in 0..w {
            buf[y * w + x] = s.coeffs[sy * w + shift_index(x, w)];
        }
    }
    fft2_in_place(&mut buf, h, w, true);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for z in &mut buf {
        *z *= scale;
    }
    buf
}

/// Inverse transform of a Hermitian-symmetric spectrum to a real channel.
pub fn ifft2_centered(s: &Spectrum) -> Result<Vec<f64>> {
    let peak = s.coeffs.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let residual = s.hermitian_residual();
    if residual > HERMITIAN_TOLERANCE * peak {
        return Err(Error::SymmetryViolation { residual });
    }
    Ok(ifft2_complex(s).into_iter().map(|z| z.re).collect())
}

/// Largest imaginary part produced by the inverse transform.
pub fn imaginary_residue(s: &Spectrum) -> f64 {
    ifft2_complex(s).iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}
