//! Seeded multi-trial execution and CSV output.
//!
//! Trial `i` uses seed `base_seed + i`. From that seed, ChaCha8 stream 0
//! draws the environment (field, then landmarks), stream 1 sensing and
//! actuation noise, stream 2 planner sampling and stream 3 the hyperparameter
//! survey. Every combination of a sweep therefore sees the same environments.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use amap_core::gp::{train_hyperparams, KernelMode, KernelSpec, TrainOptions};
use amap_core::planner::{run_mission, CmaesSettings, Lattice, MissionOutput, MissionSetup, PlannerConfig, RigSettings};
use amap_core::sim::{build_environment, survey_samples, Environment};
use amap_core::uncertain::gauss_hermite_rule;
use amap_core::utility::UtilityKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Combination, ExperimentConfig, MappingMode, UtilityChoice};
use crate::dump;

/// RNG stream for the hyperparameter survey.
pub const SURVEY_STREAM: u64 = 3;

/// Fraction of failed trials above which a run is reported as failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

pub const CSV_HEADER: [&str; 10] =
    ["trial_id", "env_seed", "time", "tr_P", "map_rmse", "tr_Sigma", "pose_err", "planner", "utility", "mapping_mode"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("trial failure threshold exceeded: {failed} of {total} trials failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial_id: usize,
    pub env_seed: u64,
    pub time: f64,
    pub tr_p: f64,
    pub map_rmse: f64,
    pub tr_sigma: f64,
    pub pose_err: f64,
    pub planner: String,
    pub utility: String,
    pub mapping_mode: String,
}

#[derive(Debug, Clone)]
pub struct CombinationReport {
    pub combination: Combination,
    pub csv: PathBuf,
    pub rows: usize,
    pub failed_trials: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub combinations: Vec<CombinationReport>,
    pub manifest: PathBuf,
}

impl ExperimentReport {
    pub fn failed(&self) -> usize {
        self.combinations.iter().map(|c| c.failed_trials.len()).sum()
    }
}

/// Worker count from `AMAP_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("AMAP_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|n: &usize| *n > 0)
}

/// Seed of trial `i`.
pub fn trial_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    cfg.base_seed.wrapping_add(i as u64)
}

pub fn environment(cfg: &ExperimentConfig, seed: u64) -> Result<Environment, String> {
    build_environment(&cfg.world, &cfg.kernel, seed).map_err(|e| e.to_string())
}

/// Kernel the robot maps with: fitted to a noisy survey of the environment
/// when training is enabled, starting from the survey's sample variance.
pub fn robot_kernel(cfg: &ExperimentConfig, env: &Environment, seed: u64) -> Result<KernelSpec, String> {
    if !cfg.training.enabled {
        return Ok(cfg.kernel);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SURVEY_STREAM);
    let survey = survey_samples(env, cfg.training.samples, &mut rng);
    let ys = survey.targets();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).max(1e-6);
    let mut start = cfg.kernel;
    start.hyperparams.signal_variance = var;
    start.hyperparams.length_scale = 0.25 * cfg.world.extent.max().max(1e-3);
    start.hyperparams.noise_variance = 0.01 * var;
    let opts = TrainOptions {
        restarts: cfg.training.restarts,
        max_evals_per_start: cfg.training.max_evaluations,
        seed,
        prior_mean: cfg.world.field_mean,
        bounds: [(1e-2 * var, 1e2 * var), (1e-2, 10.0 * cfg.world.diagonal().max(1e-3)), (1e-6 * var, 10.0 * var)],
    };
    let h = train_hyperparams(&survey, &start, &opts).map_err(|e| e.to_string())?;
    Ok(start.with_hyperparams(h))
}

pub fn planner_config(cfg: &ExperimentConfig) -> Result<PlannerConfig, String> {
    let (lower, upper) = (cfg.world.lower(), cfg.world.upper());
    Ok(PlannerConfig {
        n_waypoints: cfg.planner.n_waypoints,
        lattice: Lattice::uniform(&lower, &upper, cfg.planner.lattice_per_axis).map_err(|e| e.to_string())?,
        cmaes: CmaesSettings {
            sigma0: cfg.planner.cmaes_sigma0,
            max_evaluations: cfg.planner.cmaes_evaluations,
            population: cfg.planner.cmaes_population,
        },
        rig: RigSettings { step: cfg.planner.rig_step, iterations: cfg.planner.rig_iterations },
        utility: UtilityKind::RenyiCoupled,
        backend: cfg.backend,
        v_ref: cfg.motion.v_ref,
        a_ref: cfg.motion.a_ref,
        node_rate: cfg.motion.node_rate,
        sensor_rate: cfg.world.sensor_rate,
        lower,
        upper,
        noise: cfg.motion.noise,
    })
}

fn utility_kind(cfg: &ExperimentConfig, choice: UtilityChoice, spec: &KernelSpec, grid_len: usize) -> UtilityKind {
    match choice {
        UtilityChoice::Renyi => UtilityKind::RenyiCoupled,
        UtilityChoice::Shannon => UtilityKind::ShannonOnly,
        UtilityChoice::Rate => UtilityKind::UncertaintyRate,
        UtilityChoice::Linear => UtilityKind::WeightedLinear {
            w_map: cfg.w_map,
            w_pose: cfg.w_pose,
            map_bound: grid_len as f64 * spec.signal_variance(),
            // resolved per replan
            pose_bound: 1.0,
        },
    }
}

/// Run one trial of one combination.
pub fn run_trial(cfg: &ExperimentConfig, combo: &Combination, trial: usize) -> Result<(Environment, MissionOutput), String> {
    let seed = trial_seed(cfg, trial);
    let env = environment(cfg, seed)?;
    let spec = robot_kernel(cfg, &env, seed)?;
    let mode = match combo.mapping {
        MappingMode::Plain => KernelMode::Plain,
        MappingMode::Expected => KernelMode::Expected(gauss_hermite_rule(cfg.quadrature_order).map_err(|e| e.to_string())?),
    };
    let pcfg = planner_config(cfg)?;
    let utility = utility_kind(cfg, combo.utility, &spec, env.field.grid.len());
    let setup = MissionSetup {
        spec,
        mode,
        planner: combo.planner,
        utility,
        cfg: PlannerConfig { utility, ..pcfg },
        camera: cfg.camera,
        initial_pose_sigma: cfg.motion.initial_sigma,
        budget: cfg.world.budget,
    };
    let out = run_mission(&env, &setup, seed).map_err(|e| e.to_string())?;
    Ok((env, out))
}

fn rows_for(cfg: &ExperimentConfig, combo: &Combination, trial: usize, out: &MissionOutput) -> Vec<TrialRow> {
    out.records
        .iter()
        .map(|r| TrialRow {
            trial_id: trial,
            env_seed: trial_seed(cfg, trial),
            time: r.time,
            tr_p: r.metrics.tr_p,
            map_rmse: r.metrics.map_rmse,
            tr_sigma: r.metrics.tr_sigma,
            pose_err: r.metrics.pose_err,
            planner: combo.planner.name().to_string(),
            utility: combo.utility.name().to_string(),
            mapping_mode: combo.mapping.name().to_string(),
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[TrialRow], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.trial_id.to_string(),
            r.env_seed.to_string(),
            r.time.to_string(),
            r.tr_p.to_string(),
            r.map_rmse.to_string(),
            r.tr_sigma.to_string(),
            r.pose_err.to_string(),
            r.planner.clone(),
            r.utility.clone(),
            r.mapping_mode.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses `AMAP_THREADS` or the rayon default.
    pub threads: Option<usize>,
    /// Write field and trajectory dumps for the first trial of each combination.
    pub dump_first_trial: bool,
}

/// Run every combination and write `<name>_<combo>.csv` files plus
/// `<name>_manifest.txt` into `cfg.output`. Failed trials are logged and
/// skipped; more than 10% failures overall is an error after all output is
/// written.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport, ExperimentError> {
    let out_dir = cfg.output.clone();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads.or_else(threads_from_env) {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;

    let mut reports = Vec::new();
    for combo in cfg.combinations() {
        let results: Vec<Result<(Environment, MissionOutput), String>> =
            pool.install(|| (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, &combo, i)).collect());
        let mut rows = Vec::new();
        let mut failed = Vec::new();
        for (i, res) in results.iter().enumerate() {
            match res {
                Ok((env, out)) => {
                    rows.extend(rows_for(cfg, &combo, i, out));
                    if opts.dump_first_trial && i == 0 {
                        let stem = out_dir.join(format!("{}_{}_trial0", cfg.name, combo.label()));
                        dump::write_mission_dumps(&stem, env, out).map_err(|source| ExperimentError::Io { path: stem.clone(), source })?;
                    }
                }
                Err(e) => {
                    log::error!("{} trial {i} (seed {}) failed: {e}", combo.label(), trial_seed(cfg, i));
                    failed.push((i, e.clone()));
                }
            }
        }
        let path = out_dir.join(format!("{}_{}.csv", cfg.name, combo.label()));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_csv(&rows, std::io::BufWriter::new(file))
            .map_err(|e| ExperimentError::Io { path: path.clone(), source: std::io::Error::other(e.to_string()) })?;
        log::info!("wrote {} ({} rows, {} failed trials)", path.display(), rows.len(), failed.len());
        reports.push(CombinationReport { combination: combo, csv: path, rows: rows.len(), failed_trials: failed });
    }

    let manifest = out_dir.join(format!("{}_manifest.txt", cfg.name));
    let mut text = format!("# amap {} manifest\n", env!("CARGO_PKG_VERSION"));
    text.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    for r in &reports {
        let failed: Vec<String> = r.failed_trials.iter().map(|(i, _)| i.to_string()).collect();
        text.push_str(&format!(
            "artifact = {} rows={} failed=[{}]\n",
            r.csv.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            r.rows,
            failed.join(" ")
        ));
    }
    text.push_str("\n# resolved configuration\n");
    text.push_str(&cfg.to_kv());
    fs::write(&manifest, text).map_err(io_err(&manifest))?;

    let report = ExperimentReport { combinations: reports, manifest };
    let total = cfg.trials * report.combinations.len();
    let failed = report.failed();
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(ExperimentError::TooManyFailures { failed, total });
    }
    Ok(report)
}
