use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::networks::{Classifier, MdnPrior, ViewSet};
use crate::domain::GraspSample;
use crate::error::{Error, Result};
use crate::net::{Parameterized, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOpts {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    /// Learning rate of the prior network; `lr` when unset.
    pub prior_lr: Option<f64>,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            epochs: 5,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            clip_norm: Some(10.0),
            prior_lr: None,
        }
    }
}

/// Inverse-frequency weights so both classes carry equal total weight.
pub fn class_weights(samples: &[&GraspSample]) -> Vec<f64> {
    let n = samples.len() as f64;
    let pos = samples.iter().filter(|s| s.success()).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return vec![1.0; samples.len()];
    }
    let (wp, wn) = (n / (2.0 * pos), n / (2.0 * neg));
    samples.iter().map(|s| if s.success() { wp } else { wn }).collect()
}

/// Shuffled minibatch SGD; `step` computes a batch loss and accumulates
/// gradients. Returns the per-epoch mean loss.
fn run_epochs<M, R, F, C>(
    model: &mut M,
    samples: &[&GraspSample],
    opts: &TrainOpts,
    rng: &mut R,
    mut step: F,
    mut after_step: C,
) -> Result<Vec<f64>>
where
    M: Parameterized,
    R: Rng + ?Sized,
    F: FnMut(&mut M, &[usize]) -> Result<f64>,
    C: FnMut(&M),
{
    let mut sgd = Sgd::new(opts.lr, opts.momentum);
    sgd.clip_norm = opts.clip_norm;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size.max(1)) {
            model.zero_grad();
            let loss = step(model, chunk)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss in epoch {epoch}")));
            }
            sgd.step(model)?;
            after_step(model);
            total += loss * chunk.len() as f64;
        }
        trace.push(total / samples.len() as f64);
    }
    Ok(trace)
}

/// Minibatch SGD on class-weighted binary cross-entropy.
pub fn train_classifier<R: Rng + ?Sized>(
    model: &mut Classifier,
    samples: &[&GraspSample],
    views: &ViewSet,
    opts: &TrainOpts,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("classifier training set is empty".into()));
    }
    let weights = class_weights(samples);
    run_epochs(
        model,
        samples,
        opts,
        rng,
        |m, idx| {
            let batch: Vec<&GraspSample> = idx.iter().map(|&i| samples[i]).collect();
            let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            m.loss_and_grad(&batch, &w, views)
        },
        |_| {},
    )
}

/// Minibatch SGD on the mixture negative log-likelihood of successful grasps.
pub fn train_mdn<R: Rng + ?Sized>(
    model: &mut MdnPrior,
    samples: &[&GraspSample],
    views: &ViewSet,
    opts: &TrainOpts,
    rng: &mut R,
) -> Result<Vec<f64>> {
    train_mdn_observed(model, samples, views, opts, rng, |_| {})
}

/// [`train_mdn`] with a hook invoked after every parameter update.
pub fn train_mdn_observed<R: Rng + ?Sized>(
    model: &mut MdnPrior,
    samples: &[&GraspSample],
    views: &ViewSet,
    opts: &TrainOpts,
    rng: &mut R,
    after_step: impl FnMut(&MdnPrior),
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySuccessSet);
    }
    if samples.iter().any(|s| !s.success()) {
        return Err(Error::InvalidArgument("MDN training data must contain only successful grasps".into()));
    }
    let opts = TrainOpts {
        lr: opts.prior_lr.unwrap_or(opts.lr),
        ..opts.clone()
    };
    run_epochs(
        model,
        samples,
        &opts,
        rng,
        |m, idx| {
            let batch: Vec<&GraspSample> = idx.iter().map(|&i| samples[i]).collect();
            m.loss_and_grad(&batch, views)
        },
        after_step,
    )
}
