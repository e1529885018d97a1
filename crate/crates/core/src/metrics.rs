//! Diversity (fitted-Gaussian differential entropy) and grasp success evaluation.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::Serialize;

use crate::domain::{Dataset, GraspConfig, POSE_BLOCK};
use crate::error::{Error, Result};
use crate::inference::{map_grasp, InferenceOpts};
use crate::model::{GraspModel, PreparedView};
use crate::world::World;

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// `0.5 · ln((2πe)^d · det(Σ + εI))`.
pub fn entropy_from_covariance(cov: &DMatrix<f64>, ridge: f64) -> Result<f64> {
    let d = cov.nrows();
    if d == 0 || cov.ncols() != d {
        return Err(Error::InvalidArgument("covariance must be square and non-empty".into()));
    }
    let reg = cov + DMatrix::identity(d, d) * ridge;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::DegenerateCovariance(format!("{d}x{d} covariance is not positive definite")))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let c = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    Ok(0.5 * (d as f64 * c + log_det))
}

/// Sample mean and unbiased covariance.
pub fn fit_gaussian<S: AsRef<[f64]>>(samples: &[S]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    let d = samples.first().map_or(0, |s| s.as_ref().len());
    if d == 0 || n < d + 1 {
        return Err(Error::InvalidArgument(format!("need at least d+1 samples, got {n} of dimension {d}")));
    }
    if samples.iter().any(|s| s.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: samples.iter().map(|s| s.as_ref().len()).find(|&l| l != d).unwrap_or(d),
        });
    }
    let x = DMatrix::from_fn(n, d, |i, j| samples[i].as_ref()[j]);
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// Differential entropy of a Gaussian fitted to `samples`.
pub fn gaussian_entropy<S: AsRef<[f64]>>(samples: &[S], ridge: f64) -> Result<f64> {
    let (_, cov) = fit_gaussian(samples)?;
    if ridge > 0.0 && cov.clone().cholesky().is_none() {
        log::info!("fitted covariance is singular; relying on ridge {ridge}");
    }
    entropy_from_covariance(&cov, ridge)
}

/// Which coordinates of a configuration an entropy row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Config,
    Pose,
    Joint,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Config, Block::Pose, Block::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Block::Config => "config",
            Block::Pose => "pose",
            Block::Joint => "joint",
        }
    }

    pub fn slice(self, q: &[f64]) -> Vec<f64> {
        match self {
            Block::Config => q.to_vec(),
            Block::Pose => q[..POSE_BLOCK.min(q.len())].to_vec(),
            Block::Joint => q[POSE_BLOCK.min(q.len())..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub block: &'static str,
    pub active: f64,
    pub heuristic_mean: f64,
    pub heuristic_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
    pub ridge: f64,
    pub subsets: usize,
    pub subset_size: usize,
}

impl EntropyReport {
    pub fn row(&self, block: Block) -> &EntropyRow {
        self.rows.iter().find(|r| r.block == block.name()).expect("all blocks present")
    }

    /// `block,active,heuristic_mean,heuristic_std`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("entropy report", e))?;
        Ok(())
    }
}

fn block_entropy(configs: &[&[f64]], block: Block, ridge: f64) -> Result<f64> {
    let rows: Vec<Vec<f64>> = configs.iter().map(|q| block.slice(q)).collect();
    gaussian_entropy(&rows, ridge)
}

/// Compares active configurations against `subsets` random heuristic subsets
/// of the same size, each drawn without replacement.
pub fn diversity_report<R: Rng + ?Sized>(
    active: &Dataset,
    heuristic: &Dataset,
    subsets: usize,
    ridge: f64,
    rng: &mut R,
) -> Result<EntropyReport> {
    let size = active.len();
    if subsets == 0 {
        return Err(Error::InvalidArgument("need at least one heuristic subset".into()));
    }
    if heuristic.len() < size {
        return Err(Error::InvalidArgument(format!(
            "heuristic dataset has {} samples, fewer than the {size} active ones",
            heuristic.len()
        )));
    }
    let active_q: Vec<&[f64]> = active.iter().map(|s| s.config.as_slice()).collect();
    let draws: Vec<Vec<&[f64]>> = (0..subsets)
        .map(|_| {
            sample_indices(rng, heuristic.len(), size)
                .into_iter()
                .map(|i| heuristic.samples()[i].config.as_slice())
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(3);
    for block in Block::ALL {
        let a = block_entropy(&active_q, block, ridge)?;
        let h = draws
            .iter()
            .map(|d| block_entropy(d, block, ridge))
            .collect::<Result<Vec<f64>>>()?;
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let std = if h.len() > 1 {
            (h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (h.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        rows.push(EntropyRow {
            block: block.name(),
            active: a,
            heuristic_mean: mean,
            heuristic_std: std,
        });
    }
    Ok(EntropyReport {
        rows,
        ridge,
        subsets,
        subset_size: size,
    })
}

/// Anything that proposes a grasp for an object.
pub trait GraspPlanner {
    fn plan(&self, world: &World, object_id: u32, rng: &mut dyn rand::RngCore) -> Result<GraspConfig>;
}

/// MAP inference with a trained model.
pub struct ModelPlanner<'a> {
    pub model: &'a GraspModel,
    pub opts: InferenceOpts,
}

impl GraspPlanner for ModelPlanner<'_> {
    fn plan(&self, world: &World, object_id: u32, rng: &mut dyn rand::RngCore) -> Result<GraspConfig> {
        let view = PreparedView::new(world.view(object_id)?, self.model.config().resolution)?;
        let ctx = self.model.context(&view)?;
        Ok(map_grasp(&ctx, &world.bounds(), &self.opts, rng)?.config)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RateRow {
    pub key: String,
    pub attempts: usize,
    pub successes: usize,
    pub rate: f64,
}

impl RateRow {
    fn new(key: String, attempts: usize, successes: usize) -> Self {
        RateRow {
            key,
            attempts,
            successes,
            rate: if attempts == 0 { 0.0 } else { successes as f64 / attempts as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_object: Vec<RateRow>,
    /// Attempts keyed by the approach side of the success box the grasp fell
    /// in, `none` when it missed every box.
    pub per_region: Vec<RateRow>,
    pub attempts: usize,
    pub successes: usize,
    /// Attempts where planning failed twice.
    pub planning_failures: usize,
    pub executed: Vec<GraspConfig>,
    /// Entropy of executed grasps; `None` when there are too few of them.
    pub executed_entropy: Option<f64>,
}

impl EvalReport {
    pub fn success_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }

    /// `key,attempts,successes,rate`: one row per object, then `all`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.per_object {
            w.serialize(r)?;
        }
        w.serialize(RateRow::new("all".into(), self.attempts, self.successes))?;
        w.flush().map_err(|e| Error::io("eval report", e))?;
        Ok(())
    }

    pub fn write_region_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.per_region {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("region report", e))?;
        Ok(())
    }
}

/// Plans and executes `attempts` grasps on each object. A planning error is
/// retried once, then counted as a failed attempt.
pub fn eval_success_rate<P: GraspPlanner + ?Sized, R: Rng>(
    planner: &P,
    world: &World,
    objects: &[u32],
    attempts: usize,
    ridge: f64,
    rng: &mut R,
) -> Result<EvalReport> {
    let mut per_object = Vec::with_capacity(objects.len());
    let mut regions: BTreeMap<&'static str, (usize, usize)> = BTreeMap::new();
    let mut executed = Vec::new();
    let (mut total, mut wins, mut failures) = (0, 0, 0);
    for &id in objects {
        let object = world.object(id)?;
        let mut ok = 0;
        for _ in 0..attempts {
            let plan = planner.plan(world, id, rng).or_else(|e| {
                log::warn!("planning on object {id} failed ({e}); retrying");
                planner.plan(world, id, rng)
            });
            let q = match plan {
                Ok(q) => q,
                Err(e) => {
                    log::warn!("planning on object {id} failed twice ({e}); counted as a miss");
                    failures += 1;
                    continue;
                }
            };
            let label = world.label(id, &q, rng)?;
            let key = object.region_of(q.as_slice()).map_or("none", |r| object.regions[r].side.name());
            let e = regions.entry(key).or_default();
            e.0 += 1;
            e.1 += usize::from(label);
            ok += usize::from(label);
            executed.push(q);
        }
        total += attempts;
        wins += ok;
        per_object.push(RateRow::new(id.to_string(), attempts, ok));
    }
    let executed_entropy = if executed.len() > world.config.dim {
        gaussian_entropy(&executed, ridge).ok()
    } else {
        None
    };
    Ok(EvalReport {
        per_object,
        per_region: regions.into_iter().map(|(k, (a, s))| RateRow::new(k.into(), a, s)).collect(),
        attempts: total,
        successes: wins,
        planning_failures: failures,
        executed,
        executed_entropy,
    })
}
