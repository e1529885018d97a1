//! The grasp model: a success classifier and a mixture-density prior over
//! successful grasp configurations, both conditioned on the object view.

mod mixture;
mod networks;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use mixture::{log_sum_exp, MixtureParams};
pub use networks::{Classifier, ClassifierFeatures, MdnPrior, ModelConfig, PreparedView, ViewSet, SIZE_SCALE};
pub use train::{class_weights, train_classifier, train_mdn, train_mdn_observed, TrainOpts};

use crate::domain::{Bounds, GraspConfig, GraspSample};
use crate::error::{Error, Result};
use crate::net::{log_sigmoid, sigmoid, Parameterized, Tensor};
use crate::persist::{load_checkpoint, save_checkpoint};

/// Classifier plus prior. Parameter names are prefixed `classifier/` and `mdn/`.
#[derive(Debug, Clone)]
pub struct GraspModel {
    pub classifier: Classifier,
    pub mdn: MdnPrior,
}

/// Losses from one supervised update; `mdn_nll` is `None` when the slice had
/// no successful grasps and the prior update was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub classifier_loss: Vec<f64>,
    pub mdn_nll: Option<Vec<f64>>,
}

impl GraspModel {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, bounds: &Bounds, rng: &mut R) -> Self {
        let classifier = Classifier::new(cfg, rng);
        let spread = 0.25 * (0..bounds.dim()).map(|i| bounds.width(i)).fold(f64::INFINITY, f64::min);
        let mdn = MdnPrior::new(cfg, &bounds.midpoint(), spread, rng);
        GraspModel { classifier, mdn }
    }

    pub fn config(&self) -> &ModelConfig {
        self.classifier.config()
    }

    /// Caches everything that depends only on the object.
    pub fn context(&self, view: &PreparedView) -> Result<ObjectContext<'_>> {
        Ok(ObjectContext {
            object_id: view.object_id,
            classifier: &self.classifier,
            features: self.classifier.features(view)?,
            mixture: self.mdn.mixture(view)?,
        })
    }

    /// Classifier on every sample, prior on the successful ones.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        samples: &[&GraspSample],
        views: &ViewSet,
        opts: &TrainOpts,
        rng: &mut R,
    ) -> Result<TrainReport> {
        let classifier_loss = train_classifier(&mut self.classifier, samples, views, opts, rng)?;
        let successes: Vec<&GraspSample> = samples.iter().copied().filter(|s| s.success()).collect();
        let mdn_nll = if successes.is_empty() {
            log::info!("no successful grasps in training slice; skipping prior update");
            None
        } else {
            Some(train_mdn(&mut self.mdn, &successes, views, opts, rng)?)
        };
        Ok(TrainReport {
            classifier_loss,
            mdn_nll,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.to_param_arrays(), path)
    }

    /// Builds a model with `cfg`'s architecture and loads parameters from `path`.
    pub fn load(cfg: &ModelConfig, bounds: &Bounds, path: impl AsRef<Path>) -> Result<Self> {
        let mut m = GraspModel::new(cfg, bounds, &mut ChaCha8Rng::seed_from_u64(0));
        m.load_param_arrays(&load_checkpoint(path)?)?;
        Ok(m)
    }
}

impl Parameterized for GraspModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        self.classifier.visit_params(f);
        self.mdn.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        self.classifier.visit_params_mut(f);
        self.mdn.visit_params_mut(f);
    }
}

/// Model evaluated on one object: classifier trunk features and the prior's
/// mixture are computed once, leaving only `q`-dependent work per query.
#[derive(Debug, Clone)]
pub struct ObjectContext<'a> {
    pub object_id: u32,
    classifier: &'a Classifier,
    features: ClassifierFeatures,
    pub mixture: MixtureParams,
}

impl ObjectContext<'_> {
    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    pub fn logit(&self, q: &[f64]) -> Result<f64> {
        self.classifier.logit(&self.features, q)
    }

    pub fn logit_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.classifier.logit_grad(&self.features, q)
    }

    /// `p(Y=1 | q, z)`.
    pub fn predict_success(&self, q: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(q)?))
    }

    /// `ln p(Y=1 | q, z)` via the stable log-sigmoid of the logit.
    pub fn log_success(&self, q: &[f64]) -> Result<f64> {
        Ok(log_sigmoid(self.logit(q)?))
    }

    pub fn log_prior(&self, q: &[f64]) -> f64 {
        self.mixture.log_density(q)
    }

    pub fn log_prior_grad(&self, q: &[f64]) -> (f64, Vec<f64>) {
        self.mixture.log_density_grad(q)
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<GraspConfig>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        self.mixture.sample_n(n, rng).into_iter().map(GraspConfig::new).collect()
    }
}

/// `p(Y=1 | q, z, W)`.
pub fn predict_success(classifier: &Classifier, view: &PreparedView, q: &GraspConfig) -> Result<f64> {
    classifier.predict_success(view, q.as_slice())
}

/// `ln p(q | z, Φ)`.
pub fn log_prior(mdn: &MdnPrior, view: &PreparedView, q: &GraspConfig) -> Result<f64> {
    Ok(mdn.mixture(view)?.log_density(q.as_slice()))
}

/// `n` ancestral samples from `p(q | z, Φ)`.
pub fn sample_prior<R: Rng + ?Sized>(mdn: &MdnPrior, view: &PreparedView, n: usize, rng: &mut R) -> Result<Vec<GraspConfig>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    mdn.mixture(view)?.sample_n(n, rng).into_iter().map(GraspConfig::new).collect()
}
