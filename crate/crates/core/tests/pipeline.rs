use std::fs;

use active_grasp::active::{run_active, LoopConfig};
use active_grasp::arms::{explore_query, run_arm, Arm, ArmOpts};
use active_grasp::cli::cli_main;
use active_grasp::domain::{Bounds, Dataset, GraspConfig};
use active_grasp::experiment::ExperimentConfig;
use active_grasp::inference::{log_posterior, map_grasp, InferenceOpts};
use active_grasp::metrics::{diversity_report, eval_success_rate, gaussian_entropy, Block, GraspPlanner};
use active_grasp::model::{GraspModel, ModelConfig, TrainOpts, ViewSet};
use active_grasp::world::{bootstrap_geodata, World, WorldConfig};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn small_model() -> ModelConfig {
    ModelConfig {
        resolution: 4,
        components: 2,
        trunk_filters: [2, 3],
        trunk_dense: 6,
        config_dense: 5,
        head_dense: 6,
        ..ModelConfig::default()
    }
}

fn small_world(objects: usize, seed: u64) -> World {
    let cfg = WorldConfig {
        resolution: 8,
        ..WorldConfig::default()
    };
    World::generate(cfg, objects, 0, seed).unwrap()
}

fn trained(world: &World, geo: &Dataset) -> (GraspModel, ViewSet) {
    let cfg = small_model();
    let views = ViewSet::new(&world.views, cfg.resolution).unwrap();
    let mut m = GraspModel::new(&cfg, &world.bounds(), &mut ChaCha8Rng::seed_from_u64(3));
    let refs: Vec<_> = geo.iter().collect();
    let opts = TrainOpts {
        epochs: 10,
        lr: 0.05,
        ..TrainOpts::default()
    };
    m.train(&refs, &views, &opts, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    (m, views)
}

fn fixture() -> (World, Dataset, GraspModel, ViewSet) {
    let world = small_world(3, 1);
    let geo = bootstrap_geodata(120, &world, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (m, views) = trained(&world, &geo);
    (world, geo, m, views)
}

fn uniform<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    (0..bounds.dim())
        .map(|i| rng.gen_range(bounds.lower()[i]..bounds.upper()[i]))
        .collect()
}

#[test]
fn heuristic_success_rate_is_calibrated() {
    let world = small_world(10, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 4000;
    let wins = (0..n)
        .filter(|i| {
            let id = world.objects[i % world.len()].id;
            let q = world.heuristic_plan(id, &mut rng).unwrap();
            world.label(id, &q, &mut rng).unwrap()
        })
        .count();
    let rate = wins as f64 / n as f64;
    assert!((rate - 0.255).abs() < 0.03, "heuristic success {rate}");
}

#[test]
fn heuristic_grasps_are_less_spread_than_uniform_ones() {
    let world = small_world(10, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let heur: Vec<Vec<f64>> = (0..500)
        .map(|i| world.heuristic_plan(world.objects[i % 10].id, &mut rng).unwrap().into_vec())
        .collect();
    let unif: Vec<Vec<f64>> = (0..500).map(|_| uniform(&world.bounds(), &mut rng)).collect();
    let (h, u) = (gaussian_entropy(&heur, 1e-6).unwrap(), gaussian_entropy(&unif, 1e-6).unwrap());
    assert!(h < u, "heuristic {h} vs uniform {u}");
}

#[test]
fn map_grasp_stays_feasible_and_improves_on_its_start() {
    let (world, _, m, views) = fixture();
    let bounds = world.bounds();
    let opts = InferenceOpts::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for o in &world.objects {
        let ctx = m.context(views.get(o.id).unwrap()).unwrap();
        for _ in 0..5 {
            let g = map_grasp(&ctx, &bounds, &opts, &mut rng).unwrap();
            assert!(bounds.contains(g.config.as_slice()).unwrap());
            let j0 = log_posterior(&ctx, opts.prior_gain, &g.start).unwrap();
            assert!(g.value >= j0 - 1e-12, "{} < {j0}", g.value);
            let j = log_posterior(&ctx, opts.prior_gain, g.config.as_slice()).unwrap();
            assert!((j - g.value).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_classifier_leaves_only_the_prior() {
    let (world, _, mut m, views) = fixture();
    m.classifier.zero_output_layer();
    let bounds = world.bounds();
    let ctx = m.context(views.get(0).unwrap()).unwrap();
    let g = map_grasp(&ctx, &bounds, &InferenceOpts::default(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let q = g.config.as_slice();
    let expected = 0.5f64.ln() + 0.5 * ctx.log_prior(q);
    assert!((g.value - expected).abs() < 1e-12);
    // stationary for the prior along every free coordinate
    let (_, grad) = ctx.log_prior_grad(q);
    for i in 0..q.len() {
        let free = q[i] > bounds.lower()[i] && q[i] < bounds.upper()[i];
        if free {
            assert!(grad[i].abs() < 1e-3, "coordinate {i}: gradient {}", grad[i]);
        }
    }
}

#[test]
fn explore_picks_the_least_likely_candidate() {
    let (world, _, m, views) = fixture();
    let bounds = world.bounds();
    let ctx = m.context(views.get(1).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut replay = rng.clone();
    let q = explore_query(&ctx, &bounds, 50, &mut rng).unwrap();
    let mut best = (Vec::new(), f64::INFINITY);
    for _ in 0..50 {
        let mut c = ctx.mixture.sample(&mut replay);
        bounds.project(&mut c).unwrap();
        let lp = ctx.log_prior(&c);
        if lp < best.1 {
            best = (c, lp);
        }
    }
    assert_eq!(q.config.as_slice(), best.0.as_slice());
    assert_eq!(q.objective, best.1);
    assert!(q.raw_reward < 1.0 && q.raw_reward > 0.0);
}

#[test]
fn every_arm_returns_a_feasible_query_with_bounded_reward() {
    let (world, _, m, views) = fixture();
    let bounds = world.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for o in &world.objects {
        let ctx = m.context(views.get(o.id).unwrap()).unwrap();
        for arm in Arm::ALL {
            let q = run_arm(arm, &ctx, &bounds, &ArmOpts::default(), &mut rng).unwrap();
            assert_eq!(q.arm, arm);
            assert!(bounds.contains(q.config.as_slice()).unwrap());
            assert!((0.0..=1.0).contains(&q.raw_reward), "{arm}: {}", q.raw_reward);
        }
    }
}

#[test]
fn standard_normal_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let xs: Vec<[f64; 1]> = (0..20_000).map(|_| [StandardNormal.sample(&mut rng)]).collect();
    let h = gaussian_entropy(&xs, 0.0).unwrap();
    // 0.5 ln(2πe)
    assert!((h - 1.418_938_533).abs() < 0.02, "{h}");
}

#[test]
fn scaling_shifts_entropy_by_d_log_a() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let scaled: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| 3.0 * v).collect()).collect();
    let d = gaussian_entropy(&scaled, 0.0).unwrap() - gaussian_entropy(&xs, 0.0).unwrap();
    assert!((d - 4.0 * 3f64.ln()).abs() < 1e-9, "{d}");
}

#[test]
fn diversity_against_itself_and_against_a_tight_cluster() {
    let world = small_world(4, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spread = bootstrap_geodata(120, &world, 0, &mut rng).unwrap();
    let same = diversity_report(&spread, &spread, 3, 1e-6, &mut rng).unwrap();
    for b in Block::ALL {
        let r = same.row(b);
        assert!((r.active - r.heuristic_mean).abs() < 1e-9, "{b:?}");
        assert!(r.heuristic_std < 1e-9);
    }
    // one object only, so every grasp sits around one success box
    let mut tight = Dataset::new(*spread.meta());
    for s in spread.iter().filter(|s| s.object_id == spread.samples()[0].object_id) {
        tight.push(s.clone()).unwrap();
    }
    let mut wide = Dataset::new(*spread.meta());
    for s in spread.iter().take(tight.len()) {
        let mut s = s.clone();
        s.config = GraspConfig::new(uniform(&world.bounds(), &mut rng)).unwrap();
        wide.push(s).unwrap();
    }
    let r = diversity_report(&wide, &tight, 2, 1e-6, &mut rng).unwrap();
    for b in Block::ALL {
        assert!(r.row(b).active > r.row(b).heuristic_mean, "{b:?}");
    }
    assert!(diversity_report(&spread, &tight, 2, 1e-6, &mut rng).is_err());
}

struct Cheat;
impl GraspPlanner for Cheat {
    fn plan(&self, world: &World, id: u32, _: &mut dyn RngCore) -> active_grasp::Result<GraspConfig> {
        GraspConfig::new(world.object(id)?.regions[0].center.clone())
    }
}

struct Uniform;
impl GraspPlanner for Uniform {
    fn plan(&self, world: &World, _: u32, rng: &mut dyn RngCore) -> active_grasp::Result<GraspConfig> {
        GraspConfig::new(uniform(&world.bounds(), rng))
    }
}

#[test]
fn success_rate_brackets_uniform_and_perfect_planners() {
    let world = small_world(5, 17);
    let ids: Vec<u32> = world.objects.iter().map(|o| o.id).collect();
    let noise = world.oracle.noise;
    let cheat = eval_success_rate(&Cheat, &world, &ids, 200, 1e-6, &mut ChaCha8Rng::seed_from_u64(18)).unwrap();
    let rand = eval_success_rate(&Uniform, &world, &ids, 200, 1e-6, &mut ChaCha8Rng::seed_from_u64(19)).unwrap();
    assert_eq!(cheat.attempts, 1000);
    assert!((cheat.success_rate() - (1.0 - noise)).abs() < 0.02, "{}", cheat.success_rate());
    assert!(rand.success_rate() < noise + 0.02, "{}", rand.success_rate());
    assert!(cheat.per_region.iter().all(|r| r.key != "none"));
}

fn loop_cfg(rounds: usize, per_round: usize, full_every: usize) -> LoopConfig {
    LoopConfig {
        rounds,
        per_round,
        full_every,
        train: TrainOpts {
            epochs: 1,
            ..TrainOpts::default()
        },
        ..LoopConfig::default()
    }
}

#[test]
fn loop_bookkeeping() {
    let (world, geo, m, _) = fixture();
    let run = run_active(&loop_cfg(2, 2, 4), m.clone(), &world, &geo, &mut ChaCha8Rng::seed_from_u64(20)).unwrap();
    assert_eq!(run.active.len(), 4);
    let rounds: Vec<u32> = run.active.iter().map(|s| s.round).collect();
    assert_eq!(rounds, [1, 1, 2, 2]);
    assert_eq!(run.bandit.total, 4);
    assert!(run.full_retrain_rounds().is_empty());

    let run = run_active(&loop_cfg(8, 4, 4), m, &world, &geo, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    assert_eq!(run.active.len(), 32);
    assert_eq!(run.full_retrain_rounds(), [4, 8]);
    assert_eq!(run.bandit.counts.iter().sum::<u64>(), 32);
    let queries: Vec<_> = run.rounds.iter().flat_map(|r| &r.queries).collect();
    // objects change only every fifth query
    for (i, w) in queries.windows(2).enumerate() {
        if (i + 1) % 5 != 0 {
            assert_eq!(w[0].object_id, w[1].object_id, "query {}", i + 1);
        }
    }
    assert!(queries.iter().all(|q| q.wall_ms == 0.0));
}

fn cli(args: &[&str]) -> i32 {
    cli_main(std::iter::once("active-grasp").chain(args.iter().copied()))
}

fn tiny_config(dir: &std::path::Path) -> String {
    let mut cfg = ExperimentConfig::default();
    cfg.world.resolution = 8;
    cfg.model = small_model();
    cfg.pool_objects = 3;
    cfg.geo_samples = 60;
    cfg.bootstrap_train.epochs = 3;
    cfg.active.train.epochs = 1;
    cfg.active.rounds = 4;
    cfg.active.per_round = 5;
    cfg.eval.objects = 2;
    cfg.eval.attempts = 2;
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_world_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(cli(&["gen-world", "--seed", "7", "--objects", "10", "--config", &cfg, "--out", d.to_str().unwrap()]), 0);
    }
    for f in ["world.json", "objects.jsonl", "eval_world.json", "eval_objects.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let world: serde_json::Value = serde_json::from_slice(&fs::read(a.join("world.json")).unwrap()).unwrap();
    assert_eq!(world["objects"].as_array().unwrap().len(), 10);
}

#[test]
fn active_command_writes_one_row_per_query() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let code = cli(&["--config", &cfg, "--out", out.to_str().unwrap(), "active", "--rounds", "2", "--per-round", "2"]);
    assert_eq!(code, 0);
    let log = fs::read_to_string(out.join("round_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "round,query_idx,arm,raw_reward,offset_reward,label,solve_iters,wall_ms");
    assert_eq!(lines.len(), 5);
    let data = active_grasp::persist::load_dataset(out.join("active.jsonl")).unwrap();
    assert_eq!(data.len(), 4);
    let summary = fs::read_to_string(out.join("arm_summary.csv")).unwrap();
    assert!(summary.starts_with("arm,mean_reward,mean_time_ms,pulls\n"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["active"]["rounds"], 2);
    assert!(manifest["outputs"]["active"].is_array());

    // downstream commands reuse what is on disk
    assert_eq!(cli(&["--config", &cfg, "--out", out.to_str().unwrap(), "eval"]), 0);
    let eval = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(eval.starts_with("key,attempts,successes,rate\n"));
    assert!(eval.lines().last().unwrap().starts_with("all,4,"));
    // four queries are too few to fit a 15-dimensional Gaussian
    assert_eq!(cli(&["--config", &cfg, "--out", out.to_str().unwrap(), "entropy"]), 1);
    assert_eq!(cli(&["--config", &cfg, "--out", out.to_str().unwrap(), "active"]), 0);
    assert_eq!(cli(&["--config", &cfg, "--out", out.to_str().unwrap(), "entropy"]), 0);
    let entropy = fs::read_to_string(out.join("entropy.csv")).unwrap();
    assert_eq!(entropy.lines().count(), 4);
}

#[test]
fn compare_output_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    assert_eq!(cli(&["--seed", "3", "--config", &cfg, "--out", out.to_str().unwrap(), "compare"]), 0);
    let rates = fs::read_to_string(out.join("compare_rates.csv")).unwrap();
    let lines: Vec<&str> = rates.lines().collect();
    assert_eq!(lines[0], "object_id,active,passive_2x,passive_1x");
    assert_eq!(lines.len(), 1 + 2 + 1);
    assert!(lines[3].starts_with("all,"));
    let entropy = fs::read_to_string(out.join("compare_entropy.csv")).unwrap();
    let rows: Vec<Vec<&str>> = entropy.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for method in ["active", "passive_2x", "passive_1x"] {
        let blocks: Vec<&str> = rows.iter().filter(|r| r[0] == method).map(|r| r[1]).collect();
        assert_eq!(blocks, ["config", "pose", "joint"], "{method}");
    }
}

#[test]
fn usage_errors_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(cli(&["--out", out, "gen-world", "--bogus"]), 2);
    assert_eq!(cli(&["--out", out, "frobnicate"]), 2);
    assert_ne!(cli(&["--out", out, "--config", "/nonexistent/config.json", "gen-world"]), 0);
    assert_eq!(cli(&["config"]), 0);
}
