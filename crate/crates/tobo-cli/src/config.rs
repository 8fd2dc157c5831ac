//! Experiment configuration: a single TOML document, schema-versioned,
//! fail-closed (unknown keys are errors). `ExperimentConfig::resolve`
//! materializes every default so the run directory carries the exact
//! configuration that executed.

use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use tobo_core::kernels::KernelFamily;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    /// Output directory; relative paths are joined under the
    /// `TOBO_OUTPUT_ROOT` environment variable when it is set.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub scalarization: ScalarizationConfig,
    #[serde(default)]
    pub schedules: ScheduleConfig,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Fully observed Bayesian optimization.
    Bo,
    /// Combinatorial-bandit optimization with partial observations.
    Cbbo,
    /// Fit the surrogate on a fixed design and report prediction metrics.
    Surrogate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Stock synthetic setting (1, 2 or 3); alternative to explicit dims.
    #[serde(default)]
    pub setting: Option<usize>,
    #[serde(default)]
    pub output_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub latent_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub noise_std: Option<f64>,
    /// Base seed of the problem instance; each run seed derives its own
    /// instance from `problem_seed ^ run_seed`.
    #[serde(default)]
    pub problem_seed: Option<u64>,
    /// Delimited text file (dataset problems): `input_cols` input columns
    /// followed by `prod(output_dims)` output columns per row.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub input_cols: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Synthetic,
    Dataset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub kernel: KernelClass,
    pub base: BaseFamily,
    pub core: CoreConfig,
    pub init_signal_var: f64,
    pub init_noise_var: f64,
    pub init_lengthscale: f64,
    pub normalize_core: bool,
    /// Core structures compared by holdout cross-validation before fitting
    /// (surrogate and bo tasks).
    pub rank_candidates: Vec<CoreConfig>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kernel: KernelClass::Separable,
            base: BaseFamily::Matern52,
            core: CoreConfig::Full,
            init_signal_var: 1.0,
            init_noise_var: 0.01,
            init_lengthscale: 0.3,
            normalize_core: true,
            rank_candidates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelClass {
    Separable,
    Nonseparable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseFamily {
    Matern52,
    Gaussian,
}

impl From<BaseFamily> for KernelFamily {
    fn from(value: BaseFamily) -> Self {
        match value {
            BaseFamily::Matern52 => KernelFamily::Matern52,
            BaseFamily::Gaussian => KernelFamily::Gaussian,
        }
    }
}

/// Core-tensor structure. In TOML: `core = "full"`,
/// `core = { cp = 2 }`, or `core = { tt = [1, 2, 1] }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreConfig {
    Full,
    Cp(usize),
    Tt(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarizationConfig {
    pub kind: ScalarizationKind,
    /// Explicit weights; when omitted for the weighted kinds, weights are
    /// drawn i.i.d. `U(0, 1)` from `weight_seed`.
    pub weights: Option<Vec<f64>>,
    pub weight_seed: u64,
    pub p: f64,
}

impl Default for ScalarizationConfig {
    fn default() -> Self {
        Self {
            kind: ScalarizationKind::Sum,
            weights: None,
            weight_seed: 0,
            p: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarizationKind {
    Sum,
    WeightedSum,
    ExpWeighted,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub beta: BetaSection,
    pub rho: RhoSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSection {
    pub kind: BetaKind,
    pub c0: f64,
    pub c1: f64,
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub c_grad: f64,
    pub r: Option<f64>,
    pub sqrt_form: bool,
}

impl Default for BetaSection {
    fn default() -> Self {
        Self {
            kind: BetaKind::Practical,
            c0: 1.0,
            c1: 2.0,
            delta: 0.1,
            a: 1.0,
            b: 1.0,
            c_grad: 1.0,
            r: None,
            sqrt_form: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaKind {
    Practical,
    Theoretical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RhoSection {
    pub delta: f64,
}

impl Default for RhoSection {
    fn default() -> Self {
        Self { delta: 0.1 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    /// Initial design size `n0`; defaults to `5 d`.
    pub initial_design: Option<usize>,
    /// Sequential rounds `N`; defaults to `10 d`.
    pub rounds: Option<usize>,
    /// Super-arm size (cbbo); defaults to `max(floor(T / 6), 1)`.
    pub k: Option<usize>,
    pub refit_every: Option<usize>,
    pub superarm_mode: Option<SuperarmModeConfig>,
    /// Train/test sizes for the surrogate task; default `10 d` / `5 d`.
    pub train: Option<usize>,
    pub test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuperarmModeConfig {
    Greedy,
    Exact,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub starts_per_dim: usize,
    pub refine_iters: usize,
    pub fd_step: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            starts_per_dim: 32,
            refine_iters: 40,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub history: usize,
    /// Initializations tried for the first fit of each run.
    pub restarts: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-5,
            history: 10,
            restarts: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("failed to parse config")?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Validates the configuration and materializes every default.
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = self.clone();
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                cfg.schema_version
            );
        }
        if cfg.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }

        // Problem section.
        match cfg.problem.kind {
            ProblemKind::Synthetic => {
                if let Some(setting) = cfg.problem.setting {
                    if !(1..=3).contains(&setting) {
                        bail!("problem.setting: must be 1, 2 or 3");
                    }
                    let spec = tobo_core::bench::SyntheticSpec::setting(setting, 0)
                        .expect("setting validated");
                    // Explicit dims may accompany a setting only if they
                    // agree (keeps resolution idempotent).
                    if let Some(out) = &cfg.problem.output_dims {
                        if *out != spec.output_dims {
                            bail!("problem.output_dims: conflicts with setting {setting}");
                        }
                    }
                    if let Some(lat) = &cfg.problem.latent_dims {
                        if *lat != spec.latent_dims {
                            bail!("problem.latent_dims: conflicts with setting {setting}");
                        }
                    }
                    cfg.problem.output_dims = Some(spec.output_dims);
                    cfg.problem.latent_dims = Some(spec.latent_dims);
                }
                let (Some(out), Some(lat)) =
                    (&cfg.problem.output_dims, &cfg.problem.latent_dims)
                else {
                    bail!("problem: synthetic problems need setting or output_dims + latent_dims");
                };
                if out.len() != lat.len() || out.is_empty() {
                    bail!("problem.output_dims/latent_dims: must be nonempty and equal length");
                }
                if *out.last().unwrap() != 2 {
                    bail!("problem.output_dims: the last output mode must be 2");
                }
                if cfg.problem.path.is_some() || cfg.problem.input_cols.is_some() {
                    bail!("problem.path/input_cols: only valid for dataset problems");
                }
            }
            ProblemKind::Dataset => {
                if cfg.problem.path.is_none() {
                    bail!("problem.path: dataset problems need a file path");
                }
                if cfg.problem.input_cols.is_none() {
                    bail!("problem.input_cols: dataset problems need the input column count");
                }
                if cfg.problem.output_dims.is_none() {
                    bail!("problem.output_dims: dataset problems need the output shape");
                }
                if cfg.task != Task::Surrogate {
                    bail!("task: dataset problems support only the surrogate task");
                }
            }
        }
        cfg.problem.noise_std = Some(cfg.problem.noise_std.unwrap_or(0.1));
        if cfg.problem.noise_std.unwrap() < 0.0 {
            bail!("problem.noise_std: must be nonnegative");
        }
        cfg.problem.problem_seed = Some(cfg.problem.problem_seed.unwrap_or(0));

        let d = match cfg.problem.kind {
            ProblemKind::Synthetic => *cfg.problem.latent_dims.as_ref().unwrap().last().unwrap(),
            ProblemKind::Dataset => cfg.problem.input_cols.unwrap(),
        };
        let t: usize = cfg.problem.output_dims.as_ref().unwrap().iter().product();

        // Loop section defaults.
        cfg.loop_config.initial_design = Some(cfg.loop_config.initial_design.unwrap_or(5 * d));
        cfg.loop_config.rounds = Some(cfg.loop_config.rounds.unwrap_or(10 * d));
        cfg.loop_config.refit_every = Some(cfg.loop_config.refit_every.unwrap_or(1));
        if cfg.loop_config.refit_every == Some(0) {
            bail!("loop.refit_every: must be at least 1");
        }
        cfg.loop_config.superarm_mode = Some(
            cfg.loop_config
                .superarm_mode
                .unwrap_or(SuperarmModeConfig::Greedy),
        );
        cfg.loop_config.train = Some(cfg.loop_config.train.unwrap_or(10 * d));
        cfg.loop_config.test = Some(cfg.loop_config.test.unwrap_or(5 * d));
        match cfg.task {
            Task::Cbbo => {
                let k = cfg.loop_config.k.unwrap_or((t / 6).max(1));
                if k == 0 || k > t {
                    bail!("loop.k: must satisfy 1 <= k <= T = {t}, got {k}");
                }
                cfg.loop_config.k = Some(k);
            }
            Task::Bo | Task::Surrogate => {
                // k is ignored; normalize to the full tensor for clarity.
                cfg.loop_config.k = Some(cfg.loop_config.k.unwrap_or(t));
                if cfg.loop_config.k.unwrap() > t {
                    bail!("loop.k: must satisfy 1 <= k <= T = {t}");
                }
            }
        }

        // Surrogate section.
        if !(cfg.surrogate.init_signal_var > 0.0 && cfg.surrogate.init_noise_var > 0.0) {
            bail!("surrogate.init_signal_var/init_noise_var: must be positive");
        }
        if !(cfg.surrogate.init_lengthscale > 0.0) {
            bail!("surrogate.init_lengthscale: must be positive");
        }
        if !cfg.surrogate.rank_candidates.is_empty() && cfg.task == Task::Cbbo {
            bail!("surrogate.rank_candidates: not supported for the cbbo task");
        }

        // Scalarization.
        if let Some(w) = &cfg.scalarization.weights {
            if w.len() != t {
                bail!(
                    "scalarization.weights: length {} does not match T = {t}",
                    w.len()
                );
            }
        }
        if cfg.scalarization.kind == ScalarizationKind::ExpWeighted && !(cfg.scalarization.p > 0.0)
        {
            bail!("scalarization.p: must be positive");
        }

        // Schedules.
        if !(cfg.schedules.rho.delta > 0.0 && cfg.schedules.rho.delta < 1.0) {
            bail!("schedules.rho.delta: must lie in (0, 1)");
        }
        if cfg.schedules.beta.kind == BetaKind::Theoretical
            && !(cfg.schedules.beta.delta > 0.0 && cfg.schedules.beta.delta < 1.0)
        {
            bail!("schedules.beta.delta: must lie in (0, 1)");
        }
        cfg.schedules.beta.r = Some(cfg.schedules.beta.r.unwrap_or(1.0));

        if cfg.search.starts_per_dim == 0 {
            bail!("search.starts_per_dim: must be at least 1");
        }
        if cfg.fit.max_iters == 0 {
            bail!("fit.max_iters: must be at least 1");
        }
        Ok(cfg)
    }

    /// Input dimension implied by the problem section (valid post-resolve).
    pub fn input_dim(&self) -> usize {
        match self.problem.kind {
            ProblemKind::Synthetic => *self
                .problem
                .latent_dims
                .as_ref()
                .expect("resolved")
                .last()
                .unwrap(),
            ProblemKind::Dataset => self.problem.input_cols.expect("resolved"),
        }
    }

    /// Total tensor size `T` (valid post-resolve).
    pub fn tensor_total(&self) -> usize {
        self.problem
            .output_dims
            .as_ref()
            .expect("resolved")
            .iter()
            .product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_bo() -> String {
        r#"
schema_version = 1
task = "bo"
seeds = [1]

[problem]
kind = "synthetic"
setting = 2
"#
        .to_string()
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg = ExperimentConfig::from_toml(&minimal_bo()).unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.loop_config.initial_design, Some(10));
        assert_eq!(resolved.loop_config.rounds, Some(20));
        assert_eq!(resolved.problem.noise_std, Some(0.1));
        assert_eq!(resolved.tensor_total(), 6);
        assert_eq!(resolved.input_dim(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_bo() + "\nunknown_key = 3\n";
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let nested = minimal_bo().replace("kind = \"synthetic\"", "kind = \"synthetic\"\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&nested).is_err());
    }

    #[test]
    fn oversized_k_names_the_field() {
        let text = minimal_bo().replace("task = \"bo\"", "task = \"cbbo\"")
            + "\n[loop]\nk = 99\n";
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("loop.k"), "error was: {err}");
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let resolved = ExperimentConfig::from_toml(&minimal_bo())
            .unwrap()
            .resolve()
            .unwrap();
        let text = resolved.to_toml().unwrap();
        let again = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert_eq!(text, again.to_toml().unwrap());
    }

    #[test]
    fn dataset_requires_surrogate_task() {
        let text = r#"
schema_version = 1
task = "bo"
seeds = [1]

[problem]
kind = "dataset"
path = "data.csv"
input_cols = 2
output_dims = [3, 2]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("surrogate task"), "error was: {err}");
    }

    #[test]
    fn core_config_toml_forms() {
        for (toml_frag, expect) in [
            ("core = \"full\"", CoreConfig::Full),
            ("core = { cp = 2 }", CoreConfig::Cp(2)),
            ("core = { tt = [1, 2, 1] }", CoreConfig::Tt(vec![1, 2, 1])),
        ] {
            let text = minimal_bo() + "\n[surrogate]\n" + toml_frag + "\n";
            let cfg = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(cfg.surrogate.core, expect);
        }
    }
}
