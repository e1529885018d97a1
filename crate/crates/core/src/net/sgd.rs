use std::collections::BTreeMap;

use super::layers::Parameterized;
use crate::error::{Error, Result};

/// One momentum-SGD update on flat slices:
/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: grads.len().min(velocity.len()),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over named parameters, velocities keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    /// Rescales the global gradient when its L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            clip_norm: None,
            velocity: BTreeMap::new(),
        }
    }

    pub fn with_clip_norm(mut self, clip: f64) -> Self {
        self.clip_norm = Some(clip);
        self
    }

    /// Applies the accumulated gradients of `model`. Parameters are left
    /// untouched if any gradient is non-finite.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut sq = 0.0;
        let mut finite = true;
        model.visit_params(&mut |_, _, g| {
            for v in g.data() {
                finite &= v.is_finite();
                sq += v * v;
            }
        });
        if !finite {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        let scale = match self.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };
        let (lr, momentum) = (self.lr, self.momentum);
        let velocity = &mut self.velocity;
        let mut result = Ok(());
        model.visit_params_mut(&mut |name, p, g| {
            if result.is_err() {
                return;
            }
            let v = velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; p.len()]);
            if scale == 1.0 {
                result = sgd_step(p.data_mut(), g.data(), v, lr, momentum);
            } else {
                let scaled: Vec<f64> = g.data().iter().map(|x| x * scale).collect();
                result = sgd_step(p.data_mut(), &scaled, v, lr, momentum);
            }
        });
        result
    }
}
