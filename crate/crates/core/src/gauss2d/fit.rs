use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::metrics::LossSpec;

use super::{rasterize_with_grads, GaussianScene, N_PARAMS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub adam: AdamConfig,
    pub iterations: usize,
    pub loss: LossSpec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            iterations: 2000,
            loss: LossSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: GaussianScene,
    /// Loss before each update.
    pub trace: Vec<f64>,
}

/// Adam on every trainable parameter. Colors are clamped to [0, 1] after each
/// step.
pub fn fit(scene: &GaussianScene, target: &ImageGrid, cfg: &FitConfig) -> Result<FitResult> {
    if cfg.iterations == 0 {
        return Err(Error::invalid("fit needs at least one iteration"));
    }
    let a = cfg.adam;
    if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
        return Err(Error::invalid(format!("bad optimizer settings: {a:?}")));
    }
    let mut scene = scene.clone();
    let n = scene.len();
    let mut m1 = vec![[0.0; N_PARAMS]; n];
    let mut m2 = vec![[0.0; N_PARAMS]; n];
    let mut trace = Vec::with_capacity(cfg.iterations);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for it in 0..cfg.iterations {
        let (_, loss, grads) = rasterize_with_grads(&scene, target, &cfg.loss)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged { iteration: it, trace });
        }
        trace.push(loss);
        b1t *= a.beta1;
        b2t *= a.beta2;
        for (((g, gr), m), v) in scene.iter_mut().zip(grads.iter()).zip(&mut m1).zip(&mut m2) {
            let grad = gr.to_array();
            let mut p = g.params();
            for i in 0..N_PARAMS {
                m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * grad[i];
                v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * grad[i] * grad[i];
                let mh = m[i] / (1.0 - b1t);
                let vh = v[i] / (1.0 - b2t);
                p[i] -= a.learning_rate * mh / (vh.sqrt() + a.epsilon);
            }
            for c in &mut p[5..8] {
                *c = c.clamp(0.0, 1.0);
            }
            g.set_params(&p);
        }
    }
    Ok(FitResult { scene, trace })
}
