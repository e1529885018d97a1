use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mixture::MixtureParams;
use crate::domain::{GraspSample, ObjectView};
use crate::error::{Error, Result};
use crate::net::{concat_cols, log_sigmoid, sigmoid, softmax_in_place, split_cols, Parameterized, Sequential, Tensor};

/// Object sizes are multiplied by this before entering the networks.
pub const SIZE_SCALE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    /// Voxel resolution seen by the networks; views are max-pooled down to it.
    pub resolution: usize,
    pub components: usize,
    pub sigma_floor: f64,
    pub trunk_filters: [usize; 2],
    pub trunk_dense: usize,
    pub config_dense: usize,
    pub head_dense: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: crate::domain::DEFAULT_DIM,
            resolution: 32,
            components: 3,
            sigma_floor: 1e-3,
            trunk_filters: [8, 16],
            trunk_dense: 64,
            config_dense: 32,
            head_dense: 32,
        }
    }
}

impl ModelConfig {
    fn trunk_flat(&self) -> usize {
        let s1 = (self.resolution - 1) / 2 + 1;
        let s2 = (s1 - 1) / 2 + 1;
        self.trunk_filters[1] * s2.pow(3)
    }
}

/// Network-ready form of an [`ObjectView`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedView {
    pub object_id: u32,
    pub voxels: Vec<f64>,
    pub size: [f64; 3],
}

impl PreparedView {
    pub fn new(view: &ObjectView, resolution: usize) -> Result<Self> {
        let r = view.voxels.resolution();
        let grid = if r == resolution {
            view.voxels.clone()
        } else if resolution > 0 && r.is_multiple_of(resolution) {
            view.voxels.downsample(r / resolution)?
        } else {
            return Err(Error::InvalidArgument(format!(
                "view resolution {r} is not a multiple of model resolution {resolution}"
            )));
        };
        Ok(PreparedView {
            object_id: view.object_id,
            voxels: grid.to_f64(),
            size: view.size.map(|s| s * SIZE_SCALE),
        })
    }
}

/// Prepared views keyed by object id.
#[derive(Debug, Clone, Default)]
pub struct ViewSet(BTreeMap<u32, PreparedView>);

impl ViewSet {
    pub fn new<'a>(views: impl IntoIterator<Item = &'a ObjectView>, resolution: usize) -> Result<Self> {
        let mut map = BTreeMap::new();
        for v in views {
            map.insert(v.object_id, PreparedView::new(v, resolution)?);
        }
        Ok(ViewSet(map))
    }

    pub fn get(&self, id: u32) -> Result<&PreparedView> {
        self.0.get(&id).ok_or(Error::UnknownObject(id))
    }

    pub fn insert(&mut self, view: PreparedView) {
        self.0.insert(view.object_id, view);
    }
}

fn voxel_trunk<R: Rng + ?Sized>(name: &str, cfg: &ModelConfig, rng: &mut R) -> Sequential {
    let [f1, f2] = cfg.trunk_filters;
    Sequential::new(name)
        .conv3d(1, f1, 2, rng)
        .elu()
        .conv3d(f1, f2, 2, rng)
        .elu()
        .flatten()
        .dense(cfg.trunk_flat(), cfg.trunk_dense, rng)
        .elu()
}

/// Batch layout shared by both networks: one trunk row per distinct object,
/// and a per-sample index into those rows.
struct Grouped {
    voxels: Tensor,
    rows: Vec<usize>,
    sizes: Tensor,
    configs: Tensor,
    unique: usize,
}

fn group(batch: &[&GraspSample], views: &ViewSet, resolution: usize) -> Result<Grouped> {
    let mut ids: Vec<u32> = Vec::new();
    let mut rows = Vec::with_capacity(batch.len());
    for s in batch {
        let row = match ids.iter().position(|&i| i == s.object_id) {
            Some(r) => r,
            None => {
                ids.push(s.object_id);
                ids.len() - 1
            }
        };
        rows.push(row);
    }
    let r3 = resolution.pow(3);
    let mut vox = Vec::with_capacity(ids.len() * r3);
    for &id in &ids {
        let v = views.get(id)?;
        if v.voxels.len() != r3 {
            return Err(Error::shape("trunk", format!("object {id} has {} voxels, expected {r3}", v.voxels.len())));
        }
        vox.extend_from_slice(&v.voxels);
    }
    let mut sizes = Vec::with_capacity(batch.len() * 3);
    let mut configs = Vec::new();
    let dim = batch.first().map_or(0, |s| s.config.dim());
    for s in batch {
        sizes.extend_from_slice(&views.get(s.object_id)?.size);
        if s.config.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.config.dim(),
            });
        }
        configs.extend_from_slice(s.config.as_slice());
    }
    Ok(Grouped {
        voxels: Tensor::new(vec![ids.len(), 1, resolution, resolution, resolution], vox)?,
        unique: ids.len(),
        sizes: Tensor::new(vec![batch.len(), 3], sizes)?,
        configs: Tensor::new(vec![batch.len(), dim], configs)?,
        rows,
    })
}

fn gather(features: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let w = features.row_len();
    let mut out = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        out.extend_from_slice(features.row(r));
    }
    Tensor::new(vec![rows.len(), w], out)
}

fn scatter_add(grad: &Tensor, rows: &[usize], unique: usize) -> Result<Tensor> {
    let w = grad.row_len();
    let mut out = Tensor::zeros(&[unique, w]);
    for (i, &r) in rows.iter().enumerate() {
        for (a, b) in out.row_mut(r).iter_mut().zip(grad.row(i)) {
            *a += b;
        }
    }
    Ok(out)
}

fn view_tensors(view: &PreparedView, resolution: usize) -> Result<(Tensor, Tensor)> {
    let r = resolution;
    if view.voxels.len() != r.pow(3) {
        return Err(Error::shape("trunk", format!("expected {} voxels, got {}", r.pow(3), view.voxels.len())));
    }
    Ok((
        Tensor::new(vec![1, 1, r, r, r], view.voxels.clone())?,
        Tensor::new(vec![1, 3], view.size.to_vec())?,
    ))
}

/// Grasp success classifier `p(Y=1 | q, z)`: voxel trunk and a configuration
/// branch joined with the size vector, ending in a single logit.
#[derive(Debug, Clone)]
pub struct Classifier {
    cfg: ModelConfig,
    trunk: Sequential,
    config_branch: Sequential,
    head: Sequential,
}

/// Classifier quantities that depend only on the object.
#[derive(Debug, Clone)]
pub struct ClassifierFeatures {
    trunk: Tensor,
    size: Tensor,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let trunk = voxel_trunk("classifier/trunk", cfg, rng);
        let config_branch = Sequential::new("classifier/config").dense(cfg.dim, cfg.config_dense, rng).elu();
        let joined = cfg.trunk_dense + cfg.config_dense + 3;
        let head = Sequential::new("classifier/head")
            .dense(joined, cfg.head_dense, rng)
            .elu()
            .dense(cfg.head_dense, 1, rng);
        Classifier {
            cfg: cfg.clone(),
            trunk,
            config_branch,
            head,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Zeroes the output layer so the classifier predicts exactly 0.5 everywhere.
    pub fn zero_output_layer(&mut self) {
        if let Some(d) = self.head.last_dense_mut() {
            d.weight_mut().fill(0.0);
            d.bias_mut().fill(0.0);
        }
    }

    pub fn features(&self, view: &PreparedView) -> Result<ClassifierFeatures> {
        let (vox, size) = view_tensors(view, self.cfg.resolution)?;
        Ok(ClassifierFeatures {
            trunk: self.trunk.forward(&vox)?,
            size,
        })
    }

    fn config_tensor(&self, q: &[f64]) -> Result<Tensor> {
        if q.len() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.dim,
                actual: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grasp configuration"));
        }
        Tensor::new(vec![1, q.len()], q.to_vec())
    }

    /// Pre-sigmoid output for configuration `q`.
    pub fn logit(&self, f: &ClassifierFeatures, q: &[f64]) -> Result<f64> {
        let c = self.config_branch.forward(&self.config_tensor(q)?)?;
        let h = concat_cols(&[&f.trunk, &c, &f.size])?;
        Ok(self.head.forward(&h)?.data()[0])
    }

    /// Logit and its gradient w.r.t. `q`.
    pub fn logit_grad(&self, f: &ClassifierFeatures, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let qt = self.config_tensor(q)?;
        let c = self.config_branch.forward(&qt)?;
        let h = concat_cols(&[&f.trunk, &c, &f.size])?;
        let (y, gh) = self.head.input_gradient(&h, |y| Tensor::filled(y.shape(), 1.0))?;
        let parts = split_cols(&gh, &[f.trunk.row_len(), c.row_len(), 3])?;
        let (_, gq) = self.config_branch.input_gradient(&qt, |_| parts[1].clone())?;
        Ok((y.data()[0], gq.into_data()))
    }

    pub fn predict_success(&self, view: &PreparedView, q: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(&self.features(view)?, q)?))
    }

    /// Weighted binary cross-entropy on a minibatch; accumulates parameter
    /// gradients and returns `Σ wᵢ·bceᵢ / B`.
    pub fn loss_and_grad(&mut self, batch: &[&GraspSample], weights: &[f64], views: &ViewSet) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let g = group(batch, views, self.cfg.resolution)?;
        let trunk = self.trunk.forward_train(&g.voxels)?;
        let fs = gather(&trunk, &g.rows)?;
        let c = self.config_branch.forward_train(&g.configs)?;
        let h = concat_cols(&[&fs, &c, &g.sizes])?;
        let logits = self.head.forward_train(&h)?;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(batch.len());
        for ((s, &z), &w) in batch.iter().zip(logits.data()).zip(weights) {
            let y = f64::from(s.label);
            // -[y ln σ(z) + (1-y) ln σ(-z)]
            loss -= w * (y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z));
            grad.push(w * (sigmoid(z) - y) / n);
        }
        let gh = self.head.backward(&Tensor::new(vec![batch.len(), 1], grad)?)?;
        let parts = split_cols(&gh, &[fs.row_len(), c.row_len(), 3])?;
        self.config_branch.backward(&parts[1])?;
        self.trunk.backward(&scatter_add(&parts[0], &g.rows, g.unique)?)?;
        Ok(loss / n)
    }
}

impl Parameterized for Classifier {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        self.trunk.visit_params(f);
        self.config_branch.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        self.trunk.visit_params_mut(f);
        self.config_branch.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

/// Mixture density network `p(q | z)`: voxel trunk joined with the size
/// vector, emitting mixture logits, means and log-scale pre-activations.
#[derive(Debug, Clone)]
pub struct MdnPrior {
    cfg: ModelConfig,
    trunk: Sequential,
    head: Sequential,
}

impl MdnPrior {
    /// `init_mean` seeds the mean outputs (e.g. the middle of the grasp box);
    /// components are spread around it by `init_spread`.
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, init_mean: &[f64], init_spread: f64, rng: &mut R) -> Self {
        let trunk = voxel_trunk("mdn/trunk", cfg, rng);
        let (k, d) = (cfg.components, cfg.dim);
        let mut head = Sequential::new("mdn/head")
            .dense(cfg.trunk_dense + 3, cfg.head_dense, rng)
            .elu()
            .dense(cfg.head_dense, k + 2 * k * d, rng);
        if let Some(out) = head.last_dense_mut() {
            out.weight_mut().data_mut().iter_mut().for_each(|w| *w *= 0.1);
            let b = out.bias_mut().data_mut();
            for c in 0..k {
                for i in 0..d {
                    let jitter: f64 = rng.gen_range(-1.0..1.0) * init_spread;
                    b[k + c * d + i] = init_mean.get(i).copied().unwrap_or(0.0) + jitter;
                    b[k + k * d + c * d + i] = (0.3f64 - cfg.sigma_floor).max(1e-6).ln();
                }
            }
        }
        MdnPrior {
            cfg: cfg.clone(),
            trunk,
            head,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn decode(&self, out: &[f64]) -> Result<MixtureParams> {
        let (k, d) = (self.cfg.components, self.cfg.dim);
        let mut weights = out[..k].to_vec();
        softmax_in_place(&mut weights);
        let means = (0..k).map(|c| out[k + c * d..k + (c + 1) * d].to_vec()).collect();
        let sigmas = (0..k)
            .map(|c| {
                out[k + k * d + c * d..k + k * d + (c + 1) * d]
                    .iter()
                    .map(|s| self.cfg.sigma_floor + s.exp())
                    .collect()
            })
            .collect();
        MixtureParams::new(weights, means, sigmas)
    }

    pub fn mixture(&self, view: &PreparedView) -> Result<MixtureParams> {
        let (vox, size) = view_tensors(view, self.cfg.resolution)?;
        let f = self.trunk.forward(&vox)?;
        let out = self.head.forward(&concat_cols(&[&f, &size])?)?;
        self.decode(out.data())
    }

    /// Mean negative log-likelihood of a minibatch; accumulates gradients.
    pub fn loss_and_grad(&mut self, batch: &[&GraspSample], views: &ViewSet) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let (k, d) = (self.cfg.components, self.cfg.dim);
        let g = group(batch, views, self.cfg.resolution)?;
        let trunk = self.trunk.forward_train(&g.voxels)?;
        let fs = gather(&trunk, &g.rows)?;
        let out = self.head.forward_train(&concat_cols(&[&fs, &g.sizes])?)?;
        let n = batch.len() as f64;
        let width = out.row_len();
        let mut grad = vec![0.0; batch.len() * width];
        let mut loss = 0.0;
        for (b, s) in batch.iter().enumerate() {
            let row = out.row(b);
            let mix = self.decode(row)?;
            let q = s.config.as_slice();
            let resp = mix.responsibilities(q);
            loss -= mix.log_density(q);
            let gr = &mut grad[b * width..(b + 1) * width];
            for c in 0..k {
                gr[c] = (mix.weights[c] - resp[c]) / n;
                for i in 0..d {
                    let sigma = mix.sigmas[c][i];
                    let z = (q[i] - mix.means[c][i]) / sigma;
                    gr[k + c * d + i] = -resp[c] * z / sigma / n;
                    let dsigma = -resp[c] * (z * z - 1.0) / sigma;
                    // σ = floor + exp(s)
                    gr[k + k * d + c * d + i] = dsigma * (sigma - self.cfg.sigma_floor) / n;
                }
            }
        }
        let gh = self.head.backward(&Tensor::new(out.shape().to_vec(), grad)?)?;
        let parts = split_cols(&gh, &[fs.row_len(), 3])?;
        self.trunk.backward(&scatter_add(&parts[0], &g.rows, g.unique)?)?;
        Ok(loss / n)
    }

    /// Mean NLL over `samples` without touching gradients.
    pub fn nll(&self, samples: &[&GraspSample], views: &ViewSet) -> Result<f64> {
        let mut cache: BTreeMap<u32, MixtureParams> = BTreeMap::new();
        let mut total = 0.0;
        for s in samples {
            if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(s.object_id) {
                e.insert(self.mixture(views.get(s.object_id)?)?);
            }
            total -= cache[&s.object_id].log_density(s.config.as_slice());
        }
        Ok(total / samples.len().max(1) as f64)
    }
}

impl Parameterized for MdnPrior {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, &Tensor)) {
        self.trunk.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, &mut Tensor)) {
        self.trunk.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}
