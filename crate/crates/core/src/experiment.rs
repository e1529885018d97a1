//! End-to-end pipelines shared by the command line and the acceptance tests.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::active::{run_active, ActiveRun, LoopConfig};
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{diversity_report, eval_success_rate, gaussian_entropy, Block, EntropyReport, EvalReport, ModelPlanner, DEFAULT_RIDGE};
use crate::model::{GraspModel, ModelConfig, TrainOpts, TrainReport, ViewSet};
use crate::world::{bootstrap_geodata, World, WorldConfig};

/// First object id of the held-out evaluation pool.
pub const EVAL_ID_OFFSET: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyOpts {
    pub subsets: usize,
    pub ridge: f64,
}

impl Default for EntropyOpts {
    fn default() -> Self {
        EntropyOpts {
            subsets: 4,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOpts {
    /// Held-out objects generated for evaluation.
    pub objects: usize,
    pub attempts: usize,
}

impl Default for EvalOpts {
    fn default() -> Self {
        EvalOpts {
            objects: 20,
            attempts: 5,
        }
    }
}

/// Every tunable of a run. Serialized with all defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    /// Training objects in the pool.
    pub pool_objects: usize,
    /// Heuristic samples in GeoData.
    pub geo_samples: usize,
    /// Supervised training on GeoData before the active loop.
    pub bootstrap_train: TrainOpts,
    pub active: LoopConfig,
    pub eval: EvalOpts,
    pub entropy: EntropyOpts,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            pool_objects: 10,
            geo_samples: 1000,
            bootstrap_train: TrainOpts {
                epochs: 100,
                lr: 0.05,
                batch_size: 64,
                prior_lr: Some(1e-2),
                ..TrainOpts::default()
            },
            active: LoopConfig::default(),
            eval: EvalOpts::default(),
            entropy: EntropyOpts::default(),
        }
    }
}

impl ExperimentConfig {
    /// Smaller settings that finish in minutes on one core.
    pub fn desk_scale() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.world.resolution = 16;
        cfg.model.resolution = 16;
        cfg.active.rounds = 32;
        cfg.active.per_round = 8;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.world.dim != self.model.dim {
            return Err(Error::InvalidArgument(format!(
                "world dimension {} differs from model dimension {}",
                self.world.dim, self.model.dim
            )));
        }
        if self.model.resolution == 0 || !self.world.resolution.is_multiple_of(self.model.resolution) {
            return Err(Error::InvalidArgument(
                "world voxel resolution must be a multiple of the model resolution".into(),
            ));
        }
        if self.pool_objects == 0 || self.geo_samples == 0 {
            return Err(Error::InvalidArgument("object pool and GeoData must be non-empty".into()));
        }
        self.world.validate()?;
        self.active.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Independent random stream `stream` derived from the run seed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const WORLD: u64 = 1;
    pub const EVAL_WORLD: u64 = 2;
    pub const GEODATA: u64 = 3;
    pub const INIT: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const ACTIVE: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const ENTROPY: u64 = 8;
}

pub fn training_world(cfg: &ExperimentConfig, seed: u64) -> Result<World> {
    World::generate(cfg.world.clone(), cfg.pool_objects, 0, stream(seed, streams::WORLD).gen())
}

pub fn eval_world(cfg: &ExperimentConfig, seed: u64) -> Result<World> {
    World::generate(cfg.world.clone(), cfg.eval.objects, EVAL_ID_OFFSET, stream(seed, streams::EVAL_WORLD).gen())
}

pub fn geodata(world: &World, n: usize, seed: u64) -> Result<Dataset> {
    bootstrap_geodata(n, world, seed, &mut stream(seed, streams::GEODATA))
}

/// Fresh model trained on `geo`. Models started from the same seed share
/// their initial parameters.
pub fn bootstrap_model(cfg: &ExperimentConfig, world: &World, geo: &Dataset, seed: u64) -> Result<(GraspModel, TrainReport)> {
    let mut model = GraspModel::new(&cfg.model, &world.bounds(), &mut stream(seed, streams::INIT));
    let views = ViewSet::new(&world.views, cfg.model.resolution)?;
    let refs: Vec<_> = geo.iter().collect();
    let report = model.train(&refs, &views, &cfg.bootstrap_train, &mut stream(seed, streams::BOOTSTRAP))?;
    Ok((model, report))
}

pub fn active_run(cfg: &ExperimentConfig, model: GraspModel, world: &World, geo: &Dataset, seed: u64) -> Result<ActiveRun> {
    run_active(&cfg.active, model, world, geo, &mut stream(seed, streams::ACTIVE))
}

/// Success rate on the held-out pool. Every model sees the same random
/// stream so differences come from the model alone.
pub fn evaluate(cfg: &ExperimentConfig, model: &GraspModel, eval: &World, seed: u64) -> Result<EvalReport> {
    let planner = ModelPlanner {
        model,
        opts: cfg.active.arms.inference.clone(),
    };
    let ids: Vec<u32> = eval.objects.iter().map(|o| o.id).collect();
    eval_success_rate(&planner, eval, &ids, cfg.eval.attempts, cfg.entropy.ridge, &mut stream(seed, streams::EVAL))
}

pub fn entropy(cfg: &ExperimentConfig, active: &Dataset, heuristic: &Dataset, seed: u64) -> Result<EntropyReport> {
    diversity_report(active, heuristic, cfg.entropy.subsets, cfg.entropy.ridge, &mut stream(seed, streams::ENTROPY))
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub name: &'static str,
    pub training_labels: usize,
    pub eval: EvalReport,
    /// Entropy of executed evaluation grasps per block; `None` if too few.
    pub executed_entropy: Vec<(Block, Option<f64>)>,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub methods: Vec<MethodResult>,
    pub diversity: EntropyReport,
    pub active: ActiveRun,
    pub geo: Dataset,
}

impl CompareReport {
    pub fn rate(&self, name: &str) -> Option<f64> {
        self.methods.iter().find(|m| m.name == name).map(|m| m.eval.success_rate())
    }

    /// `object_id,active,passive_2x,passive_1x`, ending with an `all` row.
    pub fn write_rates<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["object_id".to_string()];
        header.extend(self.methods.iter().map(|m| m.name.to_string()));
        w.write_record(&header)?;
        let n = self.methods[0].eval.per_object.len();
        for i in 0..n {
            let mut row = vec![self.methods[0].eval.per_object[i].key.clone()];
            row.extend(self.methods.iter().map(|m| m.eval.per_object[i].rate.to_string()));
            w.write_record(&row)?;
        }
        let mut all = vec!["all".to_string()];
        all.extend(self.methods.iter().map(|m| m.eval.success_rate().to_string()));
        w.write_record(&all)?;
        w.flush().map_err(|e| Error::io("compare rates", e))?;
        Ok(())
    }

    /// `method,block,entropy`: one block of rows per method.
    pub fn write_entropy<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "block", "entropy"])?;
        for m in &self.methods {
            for (b, h) in &m.executed_entropy {
                let v = h.map_or_else(|| "nan".to_string(), |v| v.to_string());
                w.write_record([m.name, b.name(), v.as_str()])?;
            }
        }
        w.flush().map_err(|e| Error::io("compare entropy", e))?;
        Ok(())
    }
}

fn block_entropies(eval: &EvalReport, ridge: f64) -> Vec<(Block, Option<f64>)> {
    Block::ALL
        .iter()
        .map(|&b| {
            let rows: Vec<Vec<f64>> = eval.executed.iter().map(|q| b.slice(q.as_slice())).collect();
            (b, gaussian_entropy(&rows, ridge).ok())
        })
        .collect()
}

/// Trains the actively trained model and two passive baselines (twice and
/// once the GeoData budget) from the same seed lineage and evaluates all
/// three on the same held-out objects.
pub fn compare(cfg: &ExperimentConfig, seed: u64) -> Result<CompareReport> {
    cfg.validate()?;
    let world = training_world(cfg, seed)?;
    let held_out = eval_world(cfg, seed)?;
    let geo2 = geodata(&world, 2 * cfg.geo_samples, seed)?;
    let geo = geo2.prefix(cfg.geo_samples);

    let (passive1, _) = bootstrap_model(cfg, &world, &geo, seed)?;
    let (passive2, _) = bootstrap_model(cfg, &world, &geo2, seed)?;
    let active = active_run(cfg, passive1.clone(), &world, &geo, seed)?;

    let mut methods = Vec::with_capacity(3);
    for (name, model, labels) in [
        ("active", &active.model, geo.len() + active.active.len()),
        ("passive_2x", &passive2, geo2.len()),
        ("passive_1x", &passive1, geo.len()),
    ] {
        let eval = evaluate(cfg, model, &held_out, seed)?;
        log::info!("{name}: success rate {:.3} on {} attempts", eval.success_rate(), eval.attempts);
        methods.push(MethodResult {
            name,
            training_labels: labels,
            executed_entropy: block_entropies(&eval, cfg.entropy.ridge),
            eval,
        });
    }
    let diversity = entropy(cfg, &active.active, &geo2, seed)?;
    Ok(CompareReport {
        methods,
        diversity,
        active,
        geo,
    })
}
