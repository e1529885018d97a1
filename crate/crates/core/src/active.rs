//! The active learning loop: UCB picks an arm, the arm synthesizes a query,
//! the world labels it, and the model is updated after every round.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arms::{run_arm, Arm, ArmOpts};
use crate::bandit::{BanditState, DEFAULT_OFFSETS};
use crate::domain::{Dataset, GraspConfig, GraspSample};
use crate::error::{Error, Result};
use crate::model::{GraspModel, ObjectContext, TrainOpts, TrainReport, ViewSet};
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// N: number of rounds.
    pub rounds: usize,
    /// M: queries per round.
    pub per_round: usize,
    /// K: every K-th round retrains on all data instead of the round's samples.
    pub full_every: usize,
    /// The queried object is redrawn every this many queries.
    pub switch_every: usize,
    /// Online update settings; `epochs` is E.
    pub train: TrainOpts,
    pub arms: ArmOpts,
    pub ucb_c: f64,
    /// Reward offsets for the success, uncertainty and explore arms.
    pub offsets: [f64; 3],
    /// Measure wall time per query. Off by default so logs are reproducible.
    pub record_timing: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            rounds: 128,
            per_round: 16,
            full_every: 4,
            switch_every: 5,
            train: TrainOpts::default(),
            arms: ArmOpts::default(),
            ucb_c: 1.0,
            offsets: DEFAULT_OFFSETS,
            record_timing: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rounds", self.rounds),
            ("per_round", self.per_round),
            ("full_every", self.full_every),
            ("switch_every", self.switch_every),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        self.arms.inference.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub round: usize,
    pub query_idx: usize,
    pub object_id: u32,
    pub arm: Arm,
    pub raw_reward: f64,
    pub offset_reward: f64,
    pub label: bool,
    pub solve_iters: usize,
    pub wall_ms: f64,
    /// Both attempts failed; the query was recorded as a failure.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub queries: Vec<QueryRecord>,
    /// Running mean offset reward per arm after the round.
    pub arm_means: Vec<Option<f64>>,
    pub full_retrain: bool,
    pub train: TrainReport,
}

#[derive(Debug, Clone)]
pub struct ActiveRun {
    pub model: GraspModel,
    pub active: Dataset,
    pub rounds: Vec<RoundLog>,
    pub bandit: BanditState,
}

impl ActiveRun {
    pub fn full_retrain_rounds(&self) -> Vec<usize> {
        self.rounds.iter().filter(|r| r.full_retrain).map(|r| r.round).collect()
    }

    pub fn mdn_skipped_rounds(&self) -> Vec<usize> {
        self.rounds.iter().filter(|r| r.train.mdn_nll.is_none()).map(|r| r.round).collect()
    }
}

/// Runs the loop from a model already trained on `geo`.
pub fn run_active<R: Rng + ?Sized>(
    cfg: &LoopConfig,
    mut model: GraspModel,
    world: &World,
    geo: &Dataset,
    rng: &mut R,
) -> Result<ActiveRun> {
    cfg.validate()?;
    if world.is_empty() {
        return Err(Error::InvalidArgument("empty object pool".into()));
    }
    let bounds = world.bounds();
    let views = ViewSet::new(&world.views, model.config().resolution)?;
    let mut bandit = BanditState::new(cfg.offsets.to_vec(), cfg.ucb_c)?;
    let mut active = Dataset::new(*geo.meta());
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut object = world.random_object(rng)?;
    let mut global = 0usize;

    for round in 1..=cfg.rounds {
        let mut queries = Vec::with_capacity(cfg.per_round);
        let mut current = Vec::with_capacity(cfg.per_round);
        {
            let mut contexts: BTreeMap<u32, ObjectContext<'_>> = BTreeMap::new();
            for query_idx in 0..cfg.per_round {
                if global > 0 && global.is_multiple_of(cfg.switch_every) {
                    object = world.random_object(rng)?;
                }
                global += 1;
                if let std::collections::btree_map::Entry::Vacant(e) = contexts.entry(object) {
                    e.insert(model.context(views.get(object)?)?);
                }
                let ctx = &contexts[&object];
                let arm = Arm::from_index(bandit.select()).expect("three arms");
                let started = cfg.record_timing.then(Instant::now);

                let mut outcome = run_arm(arm, ctx, &bounds, &cfg.arms, rng);
                if let Err(e) = &outcome {
                    log::warn!("round {round} query {query_idx}: {arm} arm failed ({e}); retrying");
                    outcome = run_arm(arm, ctx, &bounds, &cfg.arms, rng);
                }
                let (config, raw, iters, label, failed) = match outcome {
                    Ok(q) => {
                        let label = world.label(object, &q.config, rng)?;
                        let iters = q.report.as_ref().map_or(0, |r| r.iterations);
                        (q.config, q.raw_reward, iters, label, false)
                    }
                    Err(e) => {
                        log::warn!("round {round} query {query_idx}: {arm} arm failed twice ({e}); recording failure");
                        (GraspConfig::new(bounds.midpoint())?, 0.0, 0, false, true)
                    }
                };
                let wall_ms = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
                let offset_reward = bandit.update(arm.index(), raw)?;
                bandit.add_time(arm.index(), wall_ms);
                current.push(GraspSample::new(object, config, label, arm.source(), round as u32));
                queries.push(QueryRecord {
                    round,
                    query_idx,
                    object_id: object,
                    arm,
                    raw_reward: raw,
                    offset_reward,
                    label,
                    solve_iters: iters,
                    wall_ms,
                    failed,
                });
            }
        }
        for s in &current {
            active.push(s.clone())?;
        }
        let full_retrain = round % cfg.full_every == 0;
        let slice: Vec<&GraspSample> = if full_retrain {
            geo.iter().chain(active.iter()).collect()
        } else {
            current.iter().collect()
        };
        let train = model.train(&slice, &views, &cfg.train, rng)?;
        if train.mdn_nll.is_none() {
            log::info!("round {round}: no successful grasps, prior update skipped");
        }
        log::debug!(
            "round {round}: {} successes, full retrain {full_retrain}",
            current.iter().filter(|s| s.success()).count()
        );
        rounds.push(RoundLog {
            round,
            queries,
            arm_means: bandit.means(),
            full_retrain,
            train,
        });
    }
    Ok(ActiveRun {
        model,
        active,
        rounds,
        bandit,
    })
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    query_idx: usize,
    arm: &'static str,
    raw_reward: f64,
    offset_reward: f64,
    label: u8,
    solve_iters: usize,
    wall_ms: f64,
}

#[derive(Serialize)]
struct ArmRow {
    arm: &'static str,
    mean_reward: f64,
    mean_time_ms: f64,
    pulls: u64,
}

/// One row per query: `round,query_idx,arm,raw_reward,offset_reward,label,solve_iters,wall_ms`.
pub fn write_round_log<W: Write>(out: W, rounds: &[RoundLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for q in rounds.iter().flat_map(|r| &r.queries) {
        w.serialize(RoundRow {
            round: q.round,
            query_idx: q.query_idx,
            arm: q.arm.name(),
            raw_reward: q.raw_reward,
            offset_reward: q.offset_reward,
            label: u8::from(q.label),
            solve_iters: q.solve_iters,
            wall_ms: q.wall_ms,
        })?;
    }
    w.flush().map_err(|e| Error::io("round log", e))?;
    Ok(())
}

/// One row per arm: `arm,mean_reward,mean_time_ms,pulls`. Unpulled arms report zeros.
pub fn write_arm_summary<W: Write>(out: W, bandit: &BanditState) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for arm in Arm::ALL {
        let i = arm.index();
        let n = bandit.counts[i];
        let denom = n.max(1) as f64;
        w.serialize(ArmRow {
            arm: arm.name(),
            mean_reward: bandit.mean(i).unwrap_or(0.0),
            mean_time_ms: bandit.time_ms[i] / denom,
            pulls: n,
        })?;
    }
    w.flush().map_err(|e| Error::io("arm summary", e))?;
    Ok(())
}

pub fn save_round_log(path: impl AsRef<Path>, rounds: &[RoundLog]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_round_log(f, rounds)
}

pub fn save_arm_summary(path: impl AsRef<Path>, bandit: &BanditState) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_arm_summary(f, bandit)
}
