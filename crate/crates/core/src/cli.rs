//! Command-line front end. Every stage writes into one run directory and
//! regenerates missing inputs from the seed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::active::{save_arm_summary, save_round_log};
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig};
use crate::model::GraspModel;
use crate::persist::{load_dataset, load_objects, save_dataset, save_objects};
use crate::world::World;

#[derive(Debug, Parser)]
#[command(name = "active-grasp", version, about = "Bandit-driven active grasp learning in a synthetic grasp world")]
struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Experiment configuration (JSON); missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the full configuration with defaults filled in.
    Config {
        /// Start from the reduced single-core settings.
        #[arg(long)]
        desk_scale: bool,
    },
    /// Generate the training object pool and the held-out evaluation pool.
    GenWorld {
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        eval_objects: Option<usize>,
    },
    /// Collect heuristic GeoData and train the initial model on it.
    Bootstrap {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run the bandit-driven active learning loop.
    Active(ActiveArgs),
    /// Success rate of a model on the held-out objects.
    Eval {
        #[arg(long)]
        attempts: Option<usize>,
        /// Checkpoint to evaluate (path without extension); defaults to the actively trained model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Differential entropy of active queries against heuristic subsets.
    Entropy {
        #[arg(long)]
        subsets: Option<usize>,
    },
    /// Active model against passive models trained on twice and once the GeoData budget.
    Compare(ActiveArgs),
}

#[derive(Debug, Args)]
struct ActiveArgs {
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    per_round: Option<usize>,
    /// Record wall time per query (makes logs non-reproducible).
    #[arg(long)]
    timing: bool,
}

impl ActiveArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(n) = self.rounds {
            cfg.active.rounds = n;
        }
        if let Some(m) = self.per_round {
            cfg.active.per_round = m;
        }
        cfg.active.record_timing = self.timing;
    }
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct Manifest {
    format: String,
    seed: u64,
    config: Option<ExperimentConfig>,
    /// Files written by each command.
    outputs: BTreeMap<String, Vec<String>>,
}

struct Run {
    dir: PathBuf,
    seed: u64,
    cfg: ExperimentConfig,
}

const WORLD: &str = "world.json";
const OBJECTS: &str = "objects.jsonl";
const EVAL_WORLD: &str = "eval_world.json";
const EVAL_OBJECTS: &str = "eval_objects.jsonl";
const GEODATA: &str = "geodata.jsonl";
const MODEL_INIT: &str = "model_init";
const ACTIVE: &str = "active.jsonl";
const MODEL_ACTIVE: &str = "model_active";
const ROUND_LOG: &str = "round_log.csv";
const ARM_SUMMARY: &str = "arm_summary.csv";

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&self, name: &str) -> Result<File> {
        let p = self.path(name);
        File::create(&p).map_err(|e| Error::io(p, e))
    }

    fn record(&self, command: &str, outputs: &[&str]) -> Result<()> {
        let path = self.path("manifest.json");
        let mut manifest: Manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(_) => Manifest::default(),
        };
        manifest.format = "active-grasp/manifest".into();
        manifest.seed = self.seed;
        manifest.config = Some(self.cfg.clone());
        manifest
            .outputs
            .insert(command.into(), outputs.iter().map(|s| s.to_string()).collect());
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    fn save_world(&self, world: &World, json: &str, objects: &str) -> Result<()> {
        let text = serde_json::to_string_pretty(world)? + "\n";
        fs::write(self.path(json), text).map_err(|e| Error::io(self.path(json), e))?;
        save_objects(&world.views, self.path(objects))
    }

    fn load_world(&self, json: &str, objects: &str) -> Result<Option<World>> {
        let p = self.path(json);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut world: World = serde_json::from_str(&text)?;
        if self.path(objects).exists() {
            world.views = load_objects(self.path(objects))?;
        } else {
            world.rebuild_views();
        }
        Ok(Some(world))
    }

    fn worlds(&self) -> Result<(World, World)> {
        if let (Some(w), Some(e)) = (self.load_world(WORLD, OBJECTS)?, self.load_world(EVAL_WORLD, EVAL_OBJECTS)?) {
            return Ok((w, e));
        }
        self.gen_world()
    }

    fn gen_world(&self) -> Result<(World, World)> {
        let world = experiment::training_world(&self.cfg, self.seed)?;
        let eval = experiment::eval_world(&self.cfg, self.seed)?;
        self.save_world(&world, WORLD, OBJECTS)?;
        self.save_world(&eval, EVAL_WORLD, EVAL_OBJECTS)?;
        self.record("gen-world", &[WORLD, OBJECTS, EVAL_WORLD, EVAL_OBJECTS])?;
        Ok((world, eval))
    }

    fn bootstrap(&self, world: &World) -> Result<(Dataset, GraspModel)> {
        let geo = experiment::geodata(world, self.cfg.geo_samples, self.seed)?;
        let (model, report) = experiment::bootstrap_model(&self.cfg, world, &geo, self.seed)?;
        log::info!(
            "bootstrap: {} samples, {} successes, final classifier loss {:?}",
            geo.len(),
            geo.successes(),
            report.classifier_loss.last()
        );
        save_dataset(&geo, self.path(GEODATA))?;
        model.save(self.path(MODEL_INIT))?;
        self.record("bootstrap", &[GEODATA, "model_init.json", "model_init.bin"])?;
        Ok((geo, model))
    }

    fn bootstrapped(&self, world: &World) -> Result<(Dataset, GraspModel)> {
        let ckpt = self.path(&format!("{MODEL_INIT}.json"));
        if self.path(GEODATA).exists() && ckpt.exists() {
            let geo = load_dataset(self.path(GEODATA))?;
            let model = GraspModel::load(&self.cfg.model, &world.bounds(), self.path(MODEL_INIT))?;
            return Ok((geo, model));
        }
        self.bootstrap(world)
    }

    fn active(&self) -> Result<(Dataset, GraspModel)> {
        let (world, _) = self.worlds()?;
        let (geo, model) = self.bootstrapped(&world)?;
        let run = experiment::active_run(&self.cfg, model, &world, &geo, self.seed)?;
        save_dataset(&run.active, self.path(ACTIVE))?;
        save_round_log(self.path(ROUND_LOG), &run.rounds)?;
        save_arm_summary(self.path(ARM_SUMMARY), &run.bandit)?;
        run.model.save(self.path(MODEL_ACTIVE))?;
        let skipped = run.mdn_skipped_rounds();
        if !skipped.is_empty() {
            log::info!("prior update skipped in rounds {skipped:?}");
        }
        self.record(
            "active",
            &[ACTIVE, ROUND_LOG, ARM_SUMMARY, "model_active.json", "model_active.bin"],
        )?;
        Ok((run.active, run.model))
    }

    fn active_outputs(&self) -> Result<(Dataset, GraspModel)> {
        if self.path(ACTIVE).exists() && self.path(&format!("{MODEL_ACTIVE}.json")).exists() {
            let (world, _) = self.worlds()?;
            let model = GraspModel::load(&self.cfg.model, &world.bounds(), self.path(MODEL_ACTIVE))?;
            return Ok((load_dataset(self.path(ACTIVE))?, model));
        }
        self.active()
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Command::Config { desk_scale } = &cli.command {
        let shown = if *desk_scale && cli.config.is_none() {
            ExperimentConfig::desk_scale()
        } else {
            cfg
        };
        println!("{}", serde_json::to_string_pretty(&shown)?);
        return Ok(());
    }
    match &cli.command {
        Command::GenWorld { objects, eval_objects } => {
            if let Some(n) = objects {
                cfg.pool_objects = *n;
            }
            if let Some(n) = eval_objects {
                cfg.eval.objects = *n;
            }
        }
        Command::Bootstrap { samples: Some(n) } => cfg.geo_samples = *n,
        Command::Active(a) | Command::Compare(a) => a.apply(&mut cfg),
        Command::Eval { attempts: Some(n), .. } => cfg.eval.attempts = *n,
        Command::Entropy { subsets: Some(n) } => cfg.entropy.subsets = *n,
        _ => {}
    }
    cfg.validate()?;
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let run = Run {
        dir: cli.out.clone(),
        seed: cli.seed,
        cfg,
    };

    match cli.command {
        Command::Config { .. } => unreachable!("handled above"),
        Command::GenWorld { .. } => {
            let (w, e) = run.gen_world()?;
            println!("{} training objects, {} held-out objects in {}", w.len(), e.len(), run.dir.display());
        }
        Command::Bootstrap { .. } => {
            let (world, _) = run.worlds()?;
            let (geo, _) = run.bootstrap(&world)?;
            println!("GeoData: {} samples, {} successful", geo.len(), geo.successes());
        }
        Command::Active(_) => {
            let (active, _) = run.active()?;
            println!("ActiveData: {} samples, {} successful", active.len(), active.successes());
        }
        Command::Eval { model, .. } => {
            let (world, eval_world) = run.worlds()?;
            let model = match model {
                Some(p) => GraspModel::load(&run.cfg.model, &world.bounds(), p)?,
                None => run.active_outputs()?.1,
            };
            let report = experiment::evaluate(&run.cfg, &model, &eval_world, run.seed)?;
            report.write_csv(run.create("eval.csv")?)?;
            report.write_region_csv(run.create("eval_regions.csv")?)?;
            run.record("eval", &["eval.csv", "eval_regions.csv"])?;
            println!(
                "success rate {:.3} over {} attempts ({} planning failures)",
                report.success_rate(),
                report.attempts,
                report.planning_failures
            );
        }
        Command::Entropy { .. } => {
            let (world, _) = run.worlds()?;
            let (active, _) = run.active_outputs()?;
            let n = (2 * run.cfg.geo_samples).max(active.len());
            let heuristic = experiment::geodata(&world, n, run.seed)?;
            let report = experiment::entropy(&run.cfg, &active, &heuristic, run.seed)?;
            report.write_csv(run.create("entropy.csv")?)?;
            run.record("entropy", &["entropy.csv"])?;
            for r in &report.rows {
                println!(
                    "{:<7} active {:>9.3}  heuristic {:>9.3} ± {:.3}",
                    r.block, r.active, r.heuristic_mean, r.heuristic_std
                );
            }
        }
        Command::Compare(_) => {
            let report = experiment::compare(&run.cfg, run.seed)?;
            report.write_rates(run.create("compare_rates.csv")?)?;
            report.write_entropy(run.create("compare_entropy.csv")?)?;
            report.diversity.write_csv(run.create("compare_diversity.csv")?)?;
            save_dataset(&report.active.active, run.path("compare_active.jsonl"))?;
            save_round_log(run.path("compare_round_log.csv"), &report.active.rounds)?;
            save_arm_summary(run.path("compare_arm_summary.csv"), &report.active.bandit)?;
            run.record(
                "compare",
                &[
                    "compare_rates.csv",
                    "compare_entropy.csv",
                    "compare_diversity.csv",
                    "compare_active.jsonl",
                    "compare_round_log.csv",
                    "compare_arm_summary.csv",
                ],
            )?;
            for m in &report.methods {
                println!(
                    "{:<11} success {:.3}  ({} training labels)",
                    m.name,
                    m.eval.success_rate(),
                    m.training_labels
                );
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
