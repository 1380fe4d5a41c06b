use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Planes};
use crate::metrics::LossSpec;
use crate::par;

use super::{Gaussian2D, GaussianScene, N_PARAMS};

/// Pixels beyond this squared Mahalanobis distance are skipped (3 sigma).
pub const CULL_MAHALANOBIS_SQ: f64 = 9.0;
/// Covariances worse-conditioned than this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

const CHANNELS: usize = 3;

/// Normalized 1-D blend weights `(patch index, weight)` at pixel `pos` for
/// `n` patches of size `p` grown by `a`.
pub fn axis_weights(pos: usize, n: usize, p: usize, a: usize) -> Vec<(usize, f64)> {
    let i = pos / p;
    let mut out = Vec::with_capacity(2);
    for j in i.saturating_sub(1)..=(i + 1).min(n - 1) {
        let lo = (j * p) as i64 - a as i64;
        let hi = (j * p + p + a) as i64;
        let x = pos as i64;
        if x < lo || x >= hi {
            continue;
        }
        let (c0, c1) = ((j * p + a) as i64, (j * p + p - a) as i64 - 1);
        let dist = if x < c0 {
            c0 - x
        } else if x > c1 {
            x - c1
        } else {
            0
        };
        out.push((j, (2 * a as i64 + 1 - dist) as f64));
    }
    let total: f64 = out.iter().map(|e| e.1).sum();
    for e in &mut out {
        e.1 /= total;
    }
    out
}

/// Continuous form of [`axis_weights`] for patch `j` at grid coordinate `q`.
/// Coordinates beyond the grid are clamped to its edge.
fn axis_weight_at(q: f64, j: usize, n: usize, p: usize, a: usize) -> f64 {
    let q = q.clamp(0.0, (n * p - 1) as f64);
    let raw = |i: usize| {
        let c0 = (i * p + a) as f64;
        let c1 = (i * p + p - a - 1) as f64;
        let dist = (c0 - q).max(q - c1).max(0.0);
        (2.0 * a as f64 + 1.0 - dist).max(0.0)
    };
    let i0 = ((q / p as f64) as usize).min(n - 1);
    let (lo, hi) = (i0.saturating_sub(1), (i0 + 1).min(n - 1));
    if j < lo || j > hi {
        return 0.0;
    }
    raw(j) / (lo..=hi).map(raw).sum::<f64>()
}

/// Weight of patch `k` at pixel `(x, y)`; zero outside its extended region.
pub fn blend_weight(scene: &GaussianScene, k: usize, x: usize, y: usize) -> f64 {
    let (p, a) = (scene.patch_size(), scene.margin());
    let (ix, iy) = (k % scene.patches_x(), k / scene.patches_x());
    if scene.frame().is_identity() {
        let pick = |ws: Vec<(usize, f64)>, j: usize| ws.into_iter().find(|e| e.0 == j).map_or(0.0, |e| e.1);
        return pick(axis_weights(x, scene.patches_x(), p, a), ix)
            * pick(axis_weights(y, scene.patches_y(), p, a), iy);
    }
    let q = scene.frame().unmap_point([x as f64, y as f64], scene.width(), scene.height());
    axis_weight_at(q[0], ix, scene.patches_x(), p, a) * axis_weight_at(q[1], iy, scene.patches_y(), p, a)
}

/// Per-pixel weight of the owning patch along one axis, indexed by pixel and
/// then by patch offset relative to `pos / p` (-1, 0, +1).
struct AxisTable {
    w: Vec<[f64; 3]>,
    p: usize,
}

impl AxisTable {
    fn new(len: usize, p: usize, a: usize) -> Self {
        let n = len / p;
        let w = (0..len)
            .map(|pos| {
                let mut row = [0.0; 3];
                let base = (pos / p) as i64;
                for (j, v) in axis_weights(pos, n, p, a) {
                    row[(j as i64 - base + 1) as usize] = v;
                }
                row
            })
            .collect();
        Self { w, p }
    }

    #[inline]
    fn get(&self, pos: usize, patch: usize) -> f64 {
        let d = patch as i64 - (pos / self.p) as i64;
        if (-1..=1).contains(&d) {
            self.w[pos][(d + 1) as usize]
        } else {
            0.0
        }
    }
}

/// Blend weights and per-patch pixel windows for one scene.
enum Blend {
    Grid {
        tx: AxisTable,
        ty: AxisTable,
        bounds: Vec<(usize, usize, usize, usize)>,
    },
    /// Weights evaluated at the preimage of every pixel under the frame.
    Warped {
        grid: Vec<[f64; 2]>,
        width: usize,
        p: usize,
        a: usize,
        n: (usize, usize),
        bounds: Vec<(usize, usize, usize, usize)>,
    },
}

impl Blend {
    fn new(scene: &GaussianScene) -> Self {
        let (h, w) = (scene.height(), scene.width());
        let (p, a) = (scene.patch_size(), scene.margin());
        if scene.frame().is_identity() {
            return Blend::Grid {
                tx: AxisTable::new(w, p, a),
                ty: AxisTable::new(h, p, a),
                bounds: (0..scene.n_patches()).map(|k| scene.extended_bounds(k)).collect(),
            };
        }
        let frame = *scene.frame();
        let n = (scene.patches_x(), scene.patches_y());
        let grid: Vec<[f64; 2]> = (0..h * w)
            .map(|i| frame.unmap_point([(i % w) as f64, (i / w) as f64], w, h))
            .collect();
        let mut bounds = vec![(usize::MAX, 0, usize::MAX, 0); scene.n_patches()];
        let candidates = |q: f64, n: usize| {
            let i0 = ((q.clamp(0.0, (n * p - 1) as f64) / p as f64) as usize).min(n - 1);
            (i0.saturating_sub(1), (i0 + 1).min(n - 1))
        };
        for (i, q) in grid.iter().enumerate() {
            let (x, y) = (i % w, i / w);
            let (cx, cy) = (candidates(q[0], n.0), candidates(q[1], n.1));
            for iy in cy.0..=cy.1 {
                if axis_weight_at(q[1], iy, n.1, p, a) == 0.0 {
                    continue;
                }
                for ix in cx.0..=cx.1 {
                    if axis_weight_at(q[0], ix, n.0, p, a) == 0.0 {
                        continue;
                    }
                    let b = &mut bounds[iy * n.0 + ix];
                    *b = (b.0.min(x), b.1.max(x + 1), b.2.min(y), b.3.max(y + 1));
                }
            }
        }
        for b in &mut bounds {
            if b.0 == usize::MAX {
                *b = (0, 0, 0, 0);
            }
        }
        Blend::Warped {
            grid,
            width: w,
            p,
            a,
            n,
            bounds,
        }
    }

    fn bounds(&self, k: usize) -> (usize, usize, usize, usize) {
        match self {
            Blend::Grid { bounds, .. } | Blend::Warped { bounds, .. } => bounds[k],
        }
    }

    #[inline]
    fn weight(&self, ix: usize, iy: usize, x: usize, y: usize) -> f64 {
        match self {
            Blend::Grid { tx, ty, .. } => ty.get(y, iy) * tx.get(x, ix),
            Blend::Warped {
                grid, width, p, a, n, ..
            } => {
                let q = grid[y * width + x];
                axis_weight_at(q[1], iy, n.1, *p, *a) * axis_weight_at(q[0], ix, n.0, *p, *a)
            }
        }
    }
}

/// Per-Gaussian values shared by the forward and backward passes.
struct Prepared {
    mu: [f64; 2],
    l11: f64,
    l21: f64,
    l22: f64,
    x: (usize, usize),
    y: (usize, usize),
}

fn prepare(g: &Gaussian2D, beta: f64, bounds: (usize, usize, usize, usize)) -> Option<Prepared> {
    let cond = g.condition_number();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return None;
    }
    let mu = g.mean(beta);
    let (l11, l21, l22) = g.cholesky();
    let (s11, _, s22) = g.covariance();
    let r = CULL_MAHALANOBIS_SQ.sqrt();
    let span = |c: f64, s: f64, lo: usize, hi: usize| -> (usize, usize) {
        let a = (c - r * s.sqrt()).ceil().max(lo as f64);
        let b = (c + r * s.sqrt()).floor() + 1.0;
        let b = b.min(hi as f64);
        if a >= b {
            (lo, lo)
        } else {
            (a as usize, b as usize)
        }
    };
    let (x0, x1, y0, y1) = bounds;
    Some(Prepared {
        mu,
        l11,
        l21,
        l22,
        x: span(mu[0], s11, x0, x1),
        y: span(mu[1], s22, y0, y1),
    })
}

impl Prepared {
    /// `(m, w1, w2)` at pixel `(x, y)`, or `None` if culled.
    #[inline]
    fn eval(&self, x: usize, y: usize) -> Option<(f64, f64, f64)> {
        let w1 = (x as f64 - self.mu[0]) / self.l11;
        let w2 = (y as f64 - self.mu[1] - self.l21 * w1) / self.l22;
        let m = w1 * w1 + w2 * w2;
        (m <= CULL_MAHALANOBIS_SQ).then_some((m, w1, w2))
    }
}

struct PatchRender {
    bounds: (usize, usize, usize, usize),
    data: Vec<f64>,
    degenerate: usize,
}

fn render_patch(scene: &GaussianScene, k: usize, blend: &Blend) -> PatchRender {
    let bounds = blend.bounds(k);
    let (x0, x1, y0, y1) = bounds;
    let ew = x1 - x0;
    let plane = ew * (y1 - y0);
    let mut data = vec![0.0; CHANNELS * plane];
    let mut degenerate = 0;
    for g in &scene.patches()[k] {
        let Some(pg) = prepare(g, scene.beta(), bounds) else {
            degenerate += 1;
            continue;
        };
        for y in pg.y.0..pg.y.1 {
            for x in pg.x.0..pg.x.1 {
                if let Some((m, _, _)) = pg.eval(x, y) {
                    let e = g.opacity * (-0.5 * m).exp();
                    let i = (y - y0) * ew + (x - x0);
                    for c in 0..CHANNELS {
                        data[c * plane + i] += g.color[c] * e;
                    }
                }
            }
        }
    }
    PatchRender {
        bounds,
        data,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub image: ImageGrid,
    /// Gaussians skipped for an ill-conditioned covariance.
    pub degenerate: usize,
}

fn merge(scene: &GaussianScene, parts: &[PatchRender], blend: &Blend) -> Result<ImageGrid> {
    let (h, w) = (scene.height(), scene.width());
    let mut out = Planes::zeros(CHANNELS, h, w)?;
    let px = scene.patches_x();
    for (k, part) in parts.iter().enumerate() {
        let (x0, x1, y0, y1) = part.bounds;
        let ew = x1 - x0;
        let plane = ew * (y1 - y0);
        let (ix, iy) = (k % px, k / px);
        for y in y0..y1 {
            for x in x0..x1 {
                let wgt = blend.weight(ix, iy, x, y);
                let i = (y - y0) * ew + (x - x0);
                for c in 0..CHANNELS {
                    let o = (c * h + y) * w + x;
                    out.data_mut()[o] += wgt * part.data[c * plane + i];
                }
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("rendered image"));
    }
    Ok(ImageGrid(out))
}

/// Render a scene to a 3-channel image. Values are not clamped.
pub fn rasterize(scene: &GaussianScene) -> Result<Render> {
    render_with(scene, &Blend::new(scene))
}

fn render_with(scene: &GaussianScene, blend: &Blend) -> Result<Render> {
    let parts = par::map_range(scene.n_patches(), |k| render_patch(scene, k, blend));
    let image = merge(scene, &parts, blend)?;
    Ok(Render {
        image,
        degenerate: parts.iter().map(|p| p.degenerate).sum(),
    })
}

/// Loss partials for one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub offset_raw: [f64; 2],
    pub log_l11: f64,
    pub l21: f64,
    pub log_l22: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl GaussianGrad {
    /// Same layout as [`Gaussian2D::params`].
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.offset_raw[0],
            self.offset_raw[1],
            self.log_l11,
            self.l21,
            self.log_l22,
            self.color[0],
            self.color[1],
            self.color[2],
            self.opacity,
        ]
    }
}

/// Gradients laid out like the scene's patch lists.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub patches: Vec<Vec<GaussianGrad>>,
}

impl GradientSet {
    pub fn iter(&self) -> impl Iterator<Item = &GaussianGrad> {
        self.patches.iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.to_array().iter().all(|v| v.is_finite()))
    }
}

fn backward_patch(
    scene: &GaussianScene,
    k: usize,
    upstream: &[f64],
    blend: &Blend,
) -> Vec<GaussianGrad> {
    let (h, w) = (scene.height(), scene.width());
    let bounds = blend.bounds(k);
    let (ix, iy) = (k % scene.patches_x(), k / scene.patches_x());
    let beta = scene.beta();
    scene.patches()[k]
        .iter()
        .map(|g| {
            let mut out = GaussianGrad::default();
            let Some(pg) = prepare(g, beta, bounds) else {
                return out;
            };
            let (l11, l21, l22) = (pg.l11, pg.l21, pg.l22);
            let (mut dm1, mut dm2) = (0.0, 0.0);
            let (mut ds1, mut dl21, mut ds2) = (0.0, 0.0, 0.0);
            for y in pg.y.0..pg.y.1 {
                for x in pg.x.0..pg.x.1 {
                    let Some((m, w1, w2)) = pg.eval(x, y) else {
                        continue;
                    };
                    let wgt = blend.weight(ix, iy, x, y);
                    if wgt == 0.0 {
                        continue;
                    }
                    let e = (-0.5 * m).exp();
                    let mut gc = 0.0;
                    for c in 0..CHANNELS {
                        let up = upstream[(c * h + y) * w + x] * wgt;
                        out.color[c] += up * g.opacity * e;
                        gc += up * g.color[c];
                    }
                    out.opacity += gc * e;
                    let dl_dm = -0.5 * g.opacity * e * gc;
                    // m = w1^2 + w2^2 with w1 = d1/l11, w2 = (d2 - l21 w1)/l22
                    dm1 += dl_dm * (2.0 * w1 / l11 - 2.0 * w2 * l21 / (l11 * l22));
                    dm2 += dl_dm * (2.0 * w2 / l22);
                    ds1 += dl_dm * (-2.0 * w1 * w1 + 2.0 * w1 * w2 * l21 / l22);
                    dl21 += dl_dm * (-2.0 * w1 * w2 / l22);
                    ds2 += dl_dm * (-2.0 * w2 * w2);
                }
            }
            // d = p - mu and mu = mu_fix + beta tanh(raw)
            let sech2 = |r: f64| 1.0 - r.tanh().powi(2);
            out.offset_raw = [
                -dm1 * beta * sech2(g.offset_raw[0]),
                -dm2 * beta * sech2(g.offset_raw[1]),
            ];
            out.log_l11 = ds1;
            out.l21 = dl21;
            out.log_l22 = ds2;
            out
        })
        .collect()
}

/// Render, evaluate `loss` against `target`, and backpropagate to every
/// Gaussian parameter.
pub fn rasterize_with_grads(
    scene: &GaussianScene,
    target: &ImageGrid,
    loss: &LossSpec,
) -> Result<(Render, f64, GradientSet)> {
    if target.shape() != (CHANNELS, scene.height(), scene.width()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", (CHANNELS, scene.height(), scene.width())),
            found: format!("{:?}", target.shape()),
        });
    }
    let blend = Blend::new(scene);
    let render = render_with(scene, &blend)?;
    let (value, upstream) = loss.value_and_grad(&render.image, target)?;
    let patches = par::map_range(scene.n_patches(), |k| backward_patch(scene, k, &upstream, &blend));
    Ok((render, value, GradientSet { patches }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_weights_partition_unity() {
        for (len, p, a) in [(64, 16, 2), (12, 4, 1), (16, 8, 0), (30, 6, 2)] {
            for pos in 0..len {
                let ws = axis_weights(pos, len / p, p, a);
                let s: f64 = ws.iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-15);
                assert!(ws.iter().any(|e| e.0 == pos / p));
            }
        }
    }

    #[test]
    fn core_pixels_have_single_owner() {
        let ws = axis_weights(20, 4, 16, 2);
        assert_eq!(ws, vec![(1, 1.0)]);
        let ws = axis_weights(17, 4, 16, 2);
        assert_eq!(ws.len(), 2);
        assert!((ws[1].1 - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_gaussian_is_counted() {
        let mut g = Gaussian2D::isotropic([3.0, 3.0], 1.0, [1.0; 3], 1.0);
        g.log_l22 = -20.0;
        let scene = GaussianScene::from_patches(8, 8, 8, 1, 1.0, vec![vec![g]]).unwrap();
        let r = rasterize(&scene).unwrap();
        assert_eq!(r.degenerate, 1);
        assert!(r.image.data().iter().all(|&v| v == 0.0));
    }
}
