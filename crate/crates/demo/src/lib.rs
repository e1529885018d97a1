//! WebAssembly bindings for the browser demo. Every export returns a JSON string.

use active_grasp::bandit::BanditState;
use active_grasp::experiment::{self, ExperimentConfig};
use active_grasp::model::ModelConfig;
use active_grasp::world::{World, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct ObjectSummary {
    kind: String,
    extents: [f64; 3],
    resolution: usize,
    /// Highest occupied layer per (x, y) column, -1 when empty.
    height: Vec<Vec<i32>>,
    regions: Vec<RegionSummary>,
    heuristic_success: f64,
}

#[derive(Serialize)]
struct RegionSummary {
    side: &'static str,
    center: Vec<f64>,
    tolerance: Vec<f64>,
}

/// Generates one synthetic object and measures how often the heuristic
/// planner grasps it.
pub fn object_summary(seed: u64, resolution: usize) -> Result<String, String> {
    let cfg = WorldConfig {
        resolution,
        ..WorldConfig::default()
    };
    let world = World::generate(cfg, 1, 0, seed).map_err(|e| e.to_string())?;
    let object = &world.objects[0];
    let g = &world.views[0].voxels;
    let r = g.resolution();
    let height = (0..r)
        .map(|x| {
            (0..r)
                .map(|y| (0..r).rev().find(|&z| g.get(x, y, z)).map_or(-1, |z| z as i32))
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = 400;
    let wins = (0..trials)
        .filter(|_| {
            let q = world.heuristic_plan(0, &mut rng).expect("object 0 exists");
            world.label(0, &q, &mut rng).expect("planner stays in bounds")
        })
        .count();
    let summary = ObjectSummary {
        kind: format!("{:?}", object.kind),
        extents: object.extents,
        resolution: r,
        height,
        regions: object
            .regions
            .iter()
            .map(|reg| RegionSummary {
                side: reg.side.name(),
                center: reg.center.clone(),
                tolerance: reg.tolerance.clone(),
            })
            .collect(),
        heuristic_success: wins as f64 / trials as f64,
    };
    serde_json::to_string(&summary).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BanditTrace {
    pulls: Vec<u64>,
    means: Vec<Option<f64>>,
    /// Arm chosen at each step.
    choices: Vec<usize>,
}

/// UCB on Bernoulli arms with success probabilities `probs`.
pub fn bandit_trace(probs: &[f64], offsets: &[f64], ucb_c: f64, steps: usize, seed: u64) -> Result<String, String> {
    if probs.len() != offsets.len() {
        return Err("need one offset per arm".into());
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err("arm probabilities must lie in [0, 1]".into());
    }
    let mut state = BanditState::new(offsets.to_vec(), ucb_c).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut choices = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = state.select();
        let r = if rng.gen_bool(probs[a]) { 1.0 } else { 0.0 };
        state.update(a, r).map_err(|e| e.to_string())?;
        choices.push(a);
    }
    serde_json::to_string(&BanditTrace {
        pulls: state.counts.clone(),
        means: state.means(),
        choices,
    })
    .map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct QueryRow {
    round: usize,
    object: u32,
    arm: &'static str,
    raw_reward: f64,
    label: bool,
}

#[derive(Serialize)]
struct ActiveSummary {
    geodata: usize,
    geodata_successes: usize,
    queries: Vec<QueryRow>,
    pulls: Vec<u64>,
    rate_before: f64,
    rate_after: f64,
}

/// Small configuration that runs in a browser tab within seconds.
pub fn demo_config(rounds: usize, per_round: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.world.resolution = 8;
    cfg.model = ModelConfig {
        resolution: 4,
        components: 2,
        trunk_filters: [2, 4],
        trunk_dense: 8,
        config_dense: 8,
        head_dense: 8,
        ..ModelConfig::default()
    };
    cfg.pool_objects = 3;
    cfg.geo_samples = 200;
    cfg.bootstrap_train.epochs = 30;
    cfg.active.rounds = rounds;
    cfg.active.per_round = per_round;
    cfg.eval.objects = 3;
    cfg.eval.attempts = 4;
    cfg
}

/// Bootstrap on heuristic grasps, run the active loop, and report held-out
/// success before and after.
pub fn active_summary(seed: u64, rounds: usize, per_round: usize) -> Result<String, String> {
    let cfg = demo_config(rounds, per_round);
    cfg.validate().map_err(|e| e.to_string())?;
    let run = || -> active_grasp::Result<ActiveSummary> {
        let world = experiment::training_world(&cfg, seed)?;
        let held_out = experiment::eval_world(&cfg, seed)?;
        let geo = experiment::geodata(&world, cfg.geo_samples, seed)?;
        let (model, _) = experiment::bootstrap_model(&cfg, &world, &geo, seed)?;
        let before = experiment::evaluate(&cfg, &model, &held_out, seed)?;
        let active = experiment::active_run(&cfg, model, &world, &geo, seed)?;
        let after = experiment::evaluate(&cfg, &active.model, &held_out, seed)?;
        Ok(ActiveSummary {
            geodata: geo.len(),
            geodata_successes: geo.successes(),
            queries: active
                .rounds
                .iter()
                .flat_map(|r| &r.queries)
                .map(|q| QueryRow {
                    round: q.round,
                    object: q.object_id,
                    arm: q.arm.name(),
                    raw_reward: q.raw_reward,
                    label: q.label,
                })
                .collect(),
            pulls: active.bandit.counts.clone(),
            rate_before: before.success_rate(),
            rate_after: after.success_rate(),
        })
    };
    let summary = run().map_err(|e| e.to_string())?;
    serde_json::to_string(&summary).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn object(seed: u32, resolution: u32) -> Result<String, JsValue> {
    object_summary(seed.into(), resolution as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bandit(probs: Vec<f64>, offsets: Vec<f64>, ucb_c: f64, steps: u32, seed: u32) -> Result<String, JsValue> {
    bandit_trace(&probs, &offsets, ucb_c, steps as usize, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn active(seed: u32, rounds: u32, per_round: u32) -> Result<String, JsValue> {
    active_summary(seed.into(), rounds as usize, per_round as usize).map_err(|e| JsValue::from_str(&e))
}
