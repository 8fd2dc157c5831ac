//! Seeded experiment execution: builds the problem and surrogate from the
//! resolved configuration, runs the requested loop per seed, persists
//! records and results, and aggregates the summary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use tobo_core::bench::{self, SyntheticProblem, SyntheticSpec};
use tobo_core::kernels::{BaseKernelParam, InputDomain, TensorKernel};
use tobo_core::ptogp::SelectionVector;
use tobo_core::sample::{self, stream_rng, streams};
use tobo_core::tensor::TensorShape;
use tobo_core::tobo::{
    self, BetaSchedule, Problem, Scalarization, SearchConfig, ToboConfig, TruthInfo,
};
use tobo_core::tocbbo::{self, SuperarmMode, TocbboConfig};
use tobo_core::togp::{self, CoreStructure, Dataset, FitConfig, TOGPHyper};

use crate::config::{
    BetaKind, CoreConfig, ExperimentConfig, KernelClass, ProblemKind, ScalarizationKind,
    SuperarmModeConfig, Task,
};
use crate::persist::{
    self, DatasetRef, MetricsDoc, RecordWriter, SeedResult, SurrogateCheckpoint, TruthDoc,
    RESULT_SCHEMA, SURROGATE_SCHEMA,
};
use crate::summary;

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "TOBO_OUTPUT_ROOT";

/// Resolves the output directory: CLI override, then config, with relative
/// paths joined under `TOBO_OUTPUT_ROOT` when set.
pub fn resolve_output_dir(
    cfg: &ExperimentConfig,
    cli_override: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    let dir = cli_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: set output_dir in the config or pass --output-dir")?;
    if dir.is_relative() {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            return Ok(PathBuf::from(root).join(dir));
        }
    }
    Ok(dir)
}

/// Derives the per-seed problem instance seed.
fn instance_seed(cfg: &ExperimentConfig, run_seed: u64) -> u64 {
    cfg.problem.problem_seed.expect("resolved") ^ run_seed
}

pub fn build_synthetic(cfg: &ExperimentConfig, run_seed: u64) -> anyhow::Result<SyntheticProblem> {
    let spec = SyntheticSpec {
        output_dims: cfg.problem.output_dims.clone().expect("resolved"),
        latent_dims: cfg.problem.latent_dims.clone().expect("resolved"),
        noise_std: cfg.problem.noise_std.expect("resolved"),
        seed: instance_seed(cfg, run_seed),
    };
    Ok(bench::make_synthetic(&spec)?)
}

fn core_structure(core: &CoreConfig) -> CoreStructure {
    match core {
        CoreConfig::Full => CoreStructure::Full,
        CoreConfig::Cp(rank) => CoreStructure::Cp { rank: *rank },
        CoreConfig::Tt(ranks) => CoreStructure::Tt {
            ranks: ranks.clone(),
        },
    }
}

/// Builds the initial surrogate hyperparameters; core entries are drawn from
/// the seed's fit stream.
pub fn build_hyper(
    cfg: &ExperimentConfig,
    shape: &TensorShape,
    d: usize,
    run_seed: u64,
) -> anyhow::Result<TOGPHyper> {
    let mut rng = stream_rng(run_seed, streams::FIT);
    let base = BaseKernelParam::isotropic(
        cfg.surrogate.base.into(),
        d,
        cfg.surrogate.init_lengthscale,
    )?;
    let structure = core_structure(&cfg.surrogate.core);
    let kernel = match cfg.surrogate.kernel {
        KernelClass::Separable => TensorKernel::Separable {
            shape: shape.clone(),
            core: structure.instantiate(shape, &mut rng),
            base,
        },
        KernelClass::Nonseparable => {
            let cores = (0..shape.mode_count())
                .map(|_| structure.instantiate(shape, &mut rng))
                .collect();
            let bases = shape
                .dims()
                .iter()
                .map(|&t| (0..t).map(|_| base.clone()).collect())
                .collect();
            TensorKernel::NonSeparable {
                shape: shape.clone(),
                cores,
                bases,
            }
        }
    };
    Ok(TOGPHyper::new(
        kernel,
        cfg.surrogate.init_signal_var,
        cfg.surrogate.init_noise_var,
    )?)
}

pub fn build_scalarization(cfg: &ExperimentConfig, total: usize) -> Scalarization {
    let weights = |cfg: &ExperimentConfig| -> Vec<f64> {
        cfg.scalarization.weights.clone().unwrap_or_else(|| {
            use rand::Rng;
            let mut rng = stream_rng(cfg.scalarization.weight_seed, streams::PROBLEM);
            (0..total).map(|_| rng.random_range(0.0..1.0)).collect()
        })
    };
    match cfg.scalarization.kind {
        ScalarizationKind::Sum => Scalarization::Sum,
        ScalarizationKind::WeightedSum => Scalarization::WeightedSum {
            weights: weights(cfg),
        },
        ScalarizationKind::ExpWeighted => Scalarization::ExpWeighted {
            weights: weights(cfg),
            p: cfg.scalarization.p,
        },
    }
}

pub fn build_beta(cfg: &ExperimentConfig, domain: &InputDomain) -> BetaSchedule {
    match cfg.schedules.beta.kind {
        BetaKind::Practical => BetaSchedule::Practical {
            c0: cfg.schedules.beta.c0,
            c1: cfg.schedules.beta.c1,
        },
        BetaKind::Theoretical => BetaSchedule::Theoretical {
            delta: cfg.schedules.beta.delta,
            r: cfg.schedules.beta.r.unwrap_or(domain.max_side()),
            d: domain.dim(),
            a: cfg.schedules.beta.a,
            b: cfg.schedules.beta.b,
            c_grad: cfg.schedules.beta.c_grad,
            sqrt_form: cfg.schedules.beta.sqrt_form,
        },
    }
}

fn fit_config(cfg: &ExperimentConfig) -> FitConfig {
    let mut fit = FitConfig {
        normalize_core: cfg.surrogate.normalize_core,
        ..Default::default()
    };
    fit.lbfgs.max_iters = cfg.fit.max_iters;
    fit.lbfgs.grad_tol = cfg.fit.grad_tol;
    fit.lbfgs.history = cfg.fit.history;
    fit
}

fn search_config(cfg: &ExperimentConfig) -> SearchConfig {
    SearchConfig {
        starts_per_dim: cfg.search.starts_per_dim,
        refine_iters: cfg.search.refine_iters,
        fd_step: cfg.search.fd_step,
    }
}

fn superarm_mode(cfg: &ExperimentConfig) -> SuperarmMode {
    match cfg.loop_config.superarm_mode.expect("resolved") {
        SuperarmModeConfig::Greedy => SuperarmMode::Greedy,
        SuperarmModeConfig::Exact => SuperarmMode::Exact,
    }
}

/// Outcome of `run_experiment`: which seeds completed and which failed.
#[derive(Debug, Clone)]
pub struct RunStatus {
    pub completed: Vec<u64>,
    pub failed: Vec<(u64, String)>,
}

impl RunStatus {
    pub fn all_ok(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Runs every seed of the experiment, writing artifacts into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<RunStatus> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    std::fs::write(
        out_dir.join("resolved_config.toml"),
        cfg.to_toml()?.as_bytes(),
    )?;

    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let mut status = RunStatus {
        completed: Vec::new(),
        failed: Vec::new(),
    };
    for &seed in &seeds {
        let outcome = match cfg.task {
            Task::Bo => run_seed_bo(cfg, seed, out_dir),
            Task::Cbbo => run_seed_cbbo(cfg, seed, out_dir),
            Task::Surrogate => run_seed_surrogate(cfg, seed, out_dir),
        };
        match outcome {
            Ok(()) => status.completed.push(seed),
            Err(err) => {
                let msg = format!("{err:#}");
                persist::write_failure_marker(out_dir, seed, &msg)?;
                status.failed.push((seed, msg));
            }
        }
    }

    if cfg.task != Task::Surrogate {
        summary::summarize_dir(out_dir)?;
    } else {
        summary::summarize_surrogate_dir(out_dir)?;
    }
    Ok(status)
}

fn run_seed_bo(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    let mut problem = build_synthetic(cfg, seed)?;
    let d = cfg.input_dim();
    let t = cfg.tensor_total();
    let scalarization = build_scalarization(cfg, t);
    let shape = problem.shape().clone();
    let init = build_hyper(cfg, &shape, d, seed)?;

    let (x_star, truth_value) = bench::true_optimum(&problem, &scalarization)?;
    let truth = TruthInfo { value: truth_value };

    let mut loop_cfg = ToboConfig::new(
        cfg.loop_config.rounds.expect("resolved"),
        cfg.loop_config.initial_design.expect("resolved"),
        seed,
    );
    loop_cfg.beta = build_beta(cfg, problem.domain());
    loop_cfg.scalarization = scalarization.clone();
    loop_cfg.search = search_config(cfg);
    loop_cfg.fit = fit_config(cfg);
    loop_cfg.refit_every = cfg.loop_config.refit_every.expect("resolved");
    loop_cfg.fit_restarts = cfg.fit.restarts;

    let mut writer = RecordWriter::create(out_dir, seed, d, t)?;
    let mut write_err: Option<anyhow::Error> = None;
    let outcome = tobo::run_tobo(&mut problem, &init, &loop_cfg, Some(&truth), |record| {
        if write_err.is_none() {
            if let Err(e) = writer.write_bo(record) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = outcome?;

    let f_star = problem
        .evaluate_noiseless(&x_star)
        .expect("synthetic problems are noiseless-capable");
    let f_rec = problem.evaluate_noiseless(&outcome.best_input).unwrap();
    let report = bench::optimization_metrics(
        &x_star,
        f_star.as_slice(),
        &outcome.best_input,
        f_rec.as_slice(),
        None,
        None,
    )?;
    let final_regret = truth_value - scalarization.apply(f_rec.as_slice())?;

    persist::write_json(
        &persist::result_path(out_dir, seed),
        &SeedResult {
            schema: RESULT_SCHEMA.to_string(),
            seed,
            task: "bo".to_string(),
            best_round: Some(outcome.best_round),
            best_input: Some(outcome.best_input.clone()),
            best_lambda: None,
            truth: Some(TruthDoc {
                x_star,
                lambda_star: None,
                value: truth_value,
            }),
            metrics: MetricsDoc {
                mse_x: report.mse_x,
                mae_y: report.mae_y,
                acc: None,
                final_regret: Some(final_regret),
                excluded_entries: report.excluded_entries,
                ..Default::default()
            },
        },
    )?;
    persist::write_json(
        &persist::surrogate_path(out_dir, seed),
        &SurrogateCheckpoint {
            schema: SURROGATE_SCHEMA.to_string(),
            seed,
            hyper: outcome.surrogate,
            dataset: DatasetRef {
                kind: "records".to_string(),
                path: persist::records_path(Path::new(""), seed)
                    .to_string_lossy()
                    .into_owned(),
                rows: outcome.records.len(),
            },
            selections: None,
        },
    )?;
    Ok(())
}

fn run_seed_cbbo(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    let mut problem = build_synthetic(cfg, seed)?;
    let d = cfg.input_dim();
    let t = cfg.tensor_total();
    let k = cfg.loop_config.k.expect("resolved");
    let scalarization = build_scalarization(cfg, t);
    let shape = problem.shape().clone();
    let init = build_hyper(cfg, &shape, d, seed)?;

    let (x_star, lambda_star, truth_value) =
        bench::true_optimum_cbbo(&problem, &scalarization, k, tocbbo::ENUMERATION_GUARD)?;
    let truth = TruthInfo { value: truth_value };

    let mut loop_cfg = TocbboConfig::new(
        cfg.loop_config.rounds.expect("resolved"),
        cfg.loop_config.initial_design.expect("resolved"),
        k,
        seed,
    );
    loop_cfg.beta = build_beta(cfg, problem.domain());
    loop_cfg.rho_delta = cfg.schedules.rho.delta;
    loop_cfg.scalarization = scalarization.clone();
    loop_cfg.search = search_config(cfg);
    loop_cfg.fit = fit_config(cfg);
    loop_cfg.refit_every = cfg.loop_config.refit_every.expect("resolved");
    loop_cfg.fit_restarts = cfg.fit.restarts;
    loop_cfg.superarm_mode = superarm_mode(cfg);

    let mut writer = RecordWriter::create(out_dir, seed, d, t)?;
    let mut write_err: Option<anyhow::Error> = None;
    let outcome = tocbbo::run_tocbbo(&mut problem, &init, &loop_cfg, Some(&truth), |record| {
        if write_err.is_none() {
            if let Err(e) = writer.write_cbbo(record) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = outcome?;

    let f_star_full = problem.evaluate_noiseless(&x_star).unwrap();
    let f_rec_full = problem.evaluate_noiseless(&outcome.best_input).unwrap();
    let f_star = lambda_star.select(f_star_full.as_slice());
    let f_rec = outcome.best_selection.select(f_rec_full.as_slice());
    let report = bench::optimization_metrics(
        &x_star,
        &f_star,
        &outcome.best_input,
        &f_rec,
        Some(&lambda_star),
        Some(&outcome.best_selection),
    )?;
    let final_regret = truth_value
        - scalarization.apply_selected(&f_rec, &outcome.best_selection.indices());

    let selections: Vec<SelectionVector> = outcome
        .records
        .iter()
        .map(|r| r.selection.clone())
        .collect();
    persist::write_json(
        &persist::result_path(out_dir, seed),
        &SeedResult {
            schema: RESULT_SCHEMA.to_string(),
            seed,
            task: "cbbo".to_string(),
            best_round: Some(outcome.best_round),
            best_input: Some(outcome.best_input.clone()),
            best_lambda: Some(outcome.best_selection.bitstring()),
            truth: Some(TruthDoc {
                x_star,
                lambda_star: Some(lambda_star.bitstring()),
                value: truth_value,
            }),
            metrics: MetricsDoc {
                mse_x: report.mse_x,
                mae_y: report.mae_y,
                acc: report.acc,
                final_regret: Some(final_regret),
                excluded_entries: report.excluded_entries,
                ..Default::default()
            },
        },
    )?;
    persist::write_json(
        &persist::surrogate_path(out_dir, seed),
        &SurrogateCheckpoint {
            schema: SURROGATE_SCHEMA.to_string(),
            seed,
            hyper: outcome.surrogate,
            dataset: DatasetRef {
                kind: "records".to_string(),
                path: persist::records_path(Path::new(""), seed)
                    .to_string_lossy()
                    .into_owned(),
                rows: outcome.records.len(),
            },
            selections: Some(selections),
        },
    )?;
    Ok(())
}

/// Loads a delimited text dataset: `input_cols` inputs then `T` outputs per
/// row; separator is comma or whitespace.
pub fn load_dataset(path: &Path, input_cols: usize, total: usize) -> anyhow::Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dataset {}", path.display()))?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != input_cols + total {
            bail!(
                "{}:{}: expected {} columns ({} inputs + {} outputs), found {}",
                path.display(),
                lineno + 1,
                input_cols + total,
                input_cols,
                total,
                fields.len()
            );
        }
        let values: Vec<f64> = fields
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .with_context(|| format!("{}:{}: bad number {s:?}", path.display(), lineno + 1))
            })
            .collect::<anyhow::Result<_>>()?;
        inputs.push(values[..input_cols].to_vec());
        outputs.push(values[input_cols..].to_vec());
    }
    if inputs.is_empty() {
        bail!("{}: dataset has no rows", path.display());
    }
    Ok(Dataset::new(inputs, outputs)?)
}

fn run_seed_surrogate(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    let d = cfg.input_dim();
    let t = cfg.tensor_total();
    let shape = TensorShape::new(cfg.problem.output_dims.as_ref().expect("resolved"))?;

    // Assemble the train/test designs.
    let (train, test, dataset_ref) = match cfg.problem.kind {
        ProblemKind::Synthetic => {
            let mut problem = build_synthetic(cfg, seed)?;
            let n_train = cfg.loop_config.train.expect("resolved");
            let n_test = cfg.loop_config.test.expect("resolved");
            let mut design_rng = stream_rng(seed, streams::DESIGN);
            let train_x = sample::latin_hypercube(n_train, problem.domain(), &mut design_rng);
            let test_x = sample::latin_hypercube(n_test, problem.domain(), &mut design_rng);
            let observe = |problem: &mut SyntheticProblem, xs: &[Vec<f64>]| -> Dataset {
                let obs: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|x| problem.evaluate(x).as_slice().to_vec())
                    .collect();
                Dataset::new(xs.to_vec(), obs).expect("consistent by construction")
            };
            let train = observe(&mut problem, &train_x);
            let test = observe(&mut problem, &test_x);
            let reference = DatasetRef {
                kind: "synthetic".to_string(),
                path: String::new(),
                rows: train.n(),
            };
            (train, test, reference)
        }
        ProblemKind::Dataset => {
            let path = cfg.problem.path.as_ref().expect("resolved");
            let all = load_dataset(path, d, t)?;
            if all.n() < 2 {
                bail!("dataset needs at least two rows to split");
            }
            let mut rng = stream_rng(seed, streams::SPLIT);
            let (train_idx, test_idx) = sample::holdout_split(all.n(), 0.2, &mut rng);
            let pick = |idx: &[usize]| -> Dataset {
                Dataset::new(
                    idx.iter().map(|&i| all.inputs()[i].clone()).collect(),
                    idx.iter().map(|&i| all.observations()[i].clone()).collect(),
                )
                .expect("consistent by construction")
            };
            let reference = DatasetRef {
                kind: "file".to_string(),
                path: path.to_string_lossy().into_owned(),
                rows: all.n(),
            };
            (pick(&train_idx), pick(&test_idx), reference)
        }
    };

    let mut init = build_hyper(cfg, &shape, d, seed)?;
    let fit_cfg = fit_config(cfg);
    if cfg.surrogate.rank_candidates.len() >= 2 {
        let candidates: Vec<CoreStructure> = cfg
            .surrogate
            .rank_candidates
            .iter()
            .map(core_structure)
            .collect();
        let selection = togp::select_rank(&train, &candidates, &init, &fit_cfg, seed)?;
        let mut rng = stream_rng(seed, streams::FIT);
        match &mut init.kernel {
            TensorKernel::Separable { core, .. } => {
                *core = selection.structure.instantiate(&shape, &mut rng);
            }
            TensorKernel::NonSeparable { cores, .. } => {
                for slot in cores.iter_mut() {
                    *slot = selection.structure.instantiate(&shape, &mut rng);
                }
            }
        }
    }
    let (fitted, _) = togp::fit(&train, &init, &fit_cfg)?;
    let report = bench::surrogate_metrics(&fitted, &train, &test)?;

    persist::write_json(
        &persist::result_path(out_dir, seed),
        &SeedResult {
            schema: RESULT_SCHEMA.to_string(),
            seed,
            task: "surrogate".to_string(),
            best_round: None,
            best_input: None,
            best_lambda: None,
            truth: None,
            metrics: MetricsDoc {
                nll: report.nll,
                mae: report.mae,
                cov_norm: report.cov_norm,
                excluded_entries: report.excluded_entries,
                ..Default::default()
            },
        },
    )?;
    persist::write_json(
        &persist::surrogate_path(out_dir, seed),
        &SurrogateCheckpoint {
            schema: SURROGATE_SCHEMA.to_string(),
            seed,
            hyper: fitted,
            dataset: dataset_ref,
            selections: None,
        },
    )?;
    Ok(())
}
