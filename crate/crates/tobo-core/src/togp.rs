//! Tensor-output Gaussian process surrogate.
//!
//! The prior puts `vec(f(x)) ~ GP(mu, sigma^2 K(x, x'))` with a tensor-output
//! kernel `K`. Conditioning on `n` full observations gives the posterior
//!
//! ```text
//! mu_n(x) = mu + K_n(x)^T (K_n + eta I)^{-1} (Y_n - 1_n (x) mu)
//! C_n(x)  = sigma^2 [ K(x,x) - K_n(x)^T (K_n + eta I)^{-1} K_n(x) ]
//! ```
//!
//! with `eta = tau^2 / sigma^2`. Internally the solves run against
//! `sigma^2 K_n + tau^2 I`, which is the same matrix scaled by `sigma^2`, so
//! the full and partially observed code paths are literally shared.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood
//! `-1/2 log|S_n| - 1/2 Y^T S_n^{-1} Y` (`S_n = sigma^2 K_n + tau^2 I`) with
//! L-BFGS in log-space for the positive parameters. The gradients follow
//! `d logL = -1/2 tr(S^{-1} dS) + 1/2 Y^T S^{-1} dS S^{-1} Y` with
//! `dS/d sigma^2 = K_n`, `dS/d tau^2 = I` and `dS/dp = sigma^2 dK_n/dp`,
//! which is the form consistent with the stated `S_n`; correctness is gated
//! on finite differences.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_err, shape_err};
use crate::gp::{full_selection, Conditioned};
use crate::kernels::{KernelParamId, TensorKernel, MIN_LENGTHSCALE};
use crate::linalg::{symmetrize, SymFactor};
use crate::opt::{self, LbfgsConfig, Termination};
use crate::sample::{holdout_split, stream_rng, streams};
use crate::tensor::{CoreTensorParam, TensorShape};
use crate::Result;

/// Hyperparameters of the surrogate: the tensor-output kernel (lengthscales
/// and core tensors), signal variance `sigma^2`, noise variance `tau^2`, and
/// the prior mean vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TOGPHyper {
    pub kernel: TensorKernel,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Prior mean of `vec(f(x))`, constant over the domain. Defaults to zero.
    pub mean: Vec<f64>,
}

impl TOGPHyper {
    pub fn new(kernel: TensorKernel, signal_var: f64, noise_var: f64) -> Result<Self> {
        let t = kernel.shape().total();
        let me = Self {
            kernel,
            signal_var,
            noise_var,
            mean: vec![0.0; t],
        };
        me.validate()?;
        Ok(me)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_var > 0.0) || !(self.noise_var > 0.0) {
            return Err(invalid_err("signal and noise variances must be positive"));
        }
        if self.mean.len() != self.kernel.shape().total() {
            return Err(shape_err("prior mean length must equal the tensor size"));
        }
        self.kernel.validate()
    }

    /// Noise-to-signal ratio `eta = tau^2 / sigma^2`.
    pub fn eta(&self) -> f64 {
        self.noise_var / self.signal_var
    }

    pub fn shape(&self) -> &TensorShape {
        self.kernel.shape()
    }
}

/// Fully observed training data: inputs and one length-`T` vectorized
/// observation per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    observations: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn new(inputs: Vec<Vec<f64>>, observations: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != observations.len() {
            return Err(shape_err("one observation per input required"));
        }
        if let Some(first) = observations.first() {
            if observations.iter().any(|o| o.len() != first.len()) {
                return Err(shape_err("observations must all have the same length"));
            }
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(shape_err("inputs must all have the same dimension"));
            }
        }
        Ok(Self {
            inputs,
            observations,
        })
    }

    pub fn push(&mut self, x: Vec<f64>, y: Vec<f64>) {
        self.inputs.push(x);
        self.observations.push(y);
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    /// Stacked `nT` vector `(vec(y_1)^T, ..., vec(y_n)^T)^T`.
    pub fn stacked(&self) -> Vec<f64> {
        self.observations.iter().flatten().copied().collect()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            observations: idx.iter().map(|&i| self.observations[i].clone()).collect(),
        }
    }
}

/// Posterior of `vec(f(x))` at one query point.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Posterior {
    /// Largest eigenvalue of the covariance, clamped at zero.
    pub fn spectral_norm(&self) -> f64 {
        crate::linalg::spectral_norm_psd(&self.cov)
    }
}

fn conditioned<'h>(hyper: &'h TOGPHyper, data: &Dataset) -> Result<Conditioned<'h>> {
    let t = hyper.shape().total();
    if data
        .observations()
        .first()
        .is_some_and(|o| o.len() != t)
    {
        return Err(shape_err(format!(
            "observations have length {}, tensor size is {t}",
            data.observations()[0].len()
        )));
    }
    let sels: Vec<Vec<usize>> = (0..data.n()).map(|_| full_selection(t)).collect();
    Conditioned::new(hyper, data.inputs(), &sels, &data.stacked())
}

/// Exact posterior at `x`. With no data this is the prior
/// `(mu, sigma^2 K(x, x))`.
pub fn posterior(hyper: &TOGPHyper, data: &Dataset, x: &[f64]) -> Result<Posterior> {
    let cond = conditioned(hyper, data)?;
    let t = hyper.shape().total();
    let sel = full_selection(t);
    Ok(Posterior {
        mean: cond.posterior_mean(x, &sel),
        cov: cond.posterior_cov(x, &sel, x, &sel),
    })
}

/// Log marginal likelihood `-1/2 log|S_n| - 1/2 Y^T S_n^{-1} Y` with
/// `S_n = sigma^2 K_n + tau^2 I`; observations are centered by the prior
/// mean first.
pub fn log_marginal_likelihood(hyper: &TOGPHyper, data: &Dataset) -> Result<f64> {
    Ok(conditioned(hyper, data)?.log_marginal())
}

/// Gradient of the log marginal likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrad {
    pub signal_var: f64,
    pub noise_var: f64,
    /// One entry per [`TensorKernel::param_ids`] element (lengthscales then
    /// core parameters).
    pub kernel: Vec<f64>,
}

/// Log marginal likelihood and its analytic gradient.
pub fn grad_log_marginal_likelihood(
    hyper: &TOGPHyper,
    data: &Dataset,
) -> Result<(f64, LikelihoodGrad)> {
    let cond = conditioned(hyper, data)?;
    let (value, grads) = cond.log_marginal_grad()?;
    Ok((
        value,
        LikelihoodGrad {
            signal_var: grads[0],
            noise_var: grads[1],
            kernel: grads[2..].to_vec(),
        },
    ))
}

/// Controls for the likelihood optimizer.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub lbfgs: LbfgsConfig,
    /// Fix the gauge `||vec(A)|| = 1` for separable kernels by projecting the
    /// core after every step and absorbing the norm into `sigma^2` (the
    /// product `sigma^2 ||vec(A)||^2` is the identifiable quantity).
    pub normalize_core: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsConfig::default(),
            normalize_core: true,
        }
    }
}

/// Result of a fit: the status is reported, never raised as an error.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log likelihood after every accepted step (nondecreasing).
    pub likelihood_trace: Vec<f64>,
}

/// Log-space packing of the positive hyperparameters shared by the TOGP and
/// PTOGP fitters: `z = [ln sigma^2, ln tau^2, ln theta..., core...]`.
pub(crate) struct HyperPacking {
    template: TOGPHyper,
    ids: Vec<KernelParamId>,
}

impl HyperPacking {
    pub fn new(template: &TOGPHyper) -> Self {
        Self {
            template: template.clone(),
            ids: template.kernel.param_ids(),
        }
    }

    pub fn pack(&self, hyper: &TOGPHyper) -> Vec<f64> {
        let mut z = vec![Float::ln(hyper.signal_var), Float::ln(hyper.noise_var)];
        let flat = hyper.kernel.params_flat();
        for (id, v) in self.ids.iter().zip(flat) {
            match id {
                KernelParamId::Lengthscale { .. } => z.push(Float::ln(v)),
                KernelParamId::Core { .. } => z.push(v),
            }
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> TOGPHyper {
        let mut hyper = self.template.clone();
        hyper.signal_var = Float::exp(z[0]);
        hyper.noise_var = Float::exp(z[1]);
        let mut flat = Vec::with_capacity(self.ids.len());
        for (id, v) in self.ids.iter().zip(&z[2..]) {
            match id {
                KernelParamId::Lengthscale { .. } => flat.push(Float::exp(*v)),
                KernelParamId::Core { .. } => flat.push(*v),
            }
        }
        hyper
            .kernel
            .set_params_flat(&flat)
            .expect("packing preserves arity");
        hyper
    }

    /// Chain rule from parameter space to `z`-space.
    pub fn grad_to_z(&self, hyper: &TOGPHyper, grads: &[f64]) -> Vec<f64> {
        let mut gz = vec![
            grads[0] * hyper.signal_var,
            grads[1] * hyper.noise_var,
        ];
        let flat = hyper.kernel.params_flat();
        for ((id, g), v) in self.ids.iter().zip(&grads[2..]).zip(flat) {
            match id {
                KernelParamId::Lengthscale { .. } => gz.push(g * v),
                KernelParamId::Core { .. } => gz.push(*g),
            }
        }
        gz
    }

    /// Projection hook: clamps lengthscales away from zero and, when asked,
    /// renormalizes a separable core to unit norm while rescaling
    /// `sigma^2` so the likelihood is unchanged.
    pub fn project(&self, z: &mut Vec<f64>, normalize_core: bool) {
        let ln_min = Float::ln(MIN_LENGTHSCALE);
        for (id, v) in self.ids.iter().zip(z[2..].iter_mut()) {
            if matches!(id, KernelParamId::Lengthscale { .. }) && *v < ln_min {
                *v = ln_min;
            }
        }
        if !normalize_core {
            return;
        }
        if let TensorKernel::Separable { .. } = self.template.kernel {
            let hyper = self.unpack(z);
            let TensorKernel::Separable { core, shape, .. } = &hyper.kernel else {
                unreachable!()
            };
            let a = core.materialize(shape).expect("validated core");
            let norm = Float::sqrt(a.iter().map(|v| v * v).sum::<f64>());
            if norm > 1e-12 && Float::abs(norm - 1.0) > 1e-12 {
                let mut rescaled = core.clone();
                rescaled.scale(1.0 / norm);
                z[0] += 2.0 * Float::ln(norm);
                let core_start = 2 + self
                    .ids
                    .iter()
                    .take_while(|id| matches!(id, KernelParamId::Lengthscale { .. }))
                    .count();
                for (slot, v) in z[core_start..].iter_mut().zip(rescaled.params()) {
                    *slot = v;
                }
            }
        }
    }
}

/// Maximizes the log marginal likelihood starting from `init`.
///
/// The returned hyperparameters satisfy
/// `logL(fitted) >= logL(init) - 1e-9`; non-convergence is reported in the
/// [`FitReport`], numerical failures are errors.
pub fn fit(data: &Dataset, init: &TOGPHyper, cfg: &FitConfig) -> Result<(TOGPHyper, FitReport)> {
    init.validate()?;
    let packing = HyperPacking::new(init);
    let z0 = packing.pack(init);
    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let hyper = packing.unpack(z);
        let (value, grad) = conditioned(&hyper, data)?.log_marginal_grad()?;
        let gz = packing.grad_to_z(&hyper, &grad);
        Ok((-value, gz.into_iter().map(|g| -g).collect()))
    };
    let outcome = opt::minimize(objective, &z0, &cfg.lbfgs, |z| {
        packing.project(z, cfg.normalize_core)
    })?;
    let fitted = packing.unpack(&outcome.x);
    Ok((
        fitted,
        FitReport {
            converged: outcome.reason == Termination::GradientTolerance,
            iterations: outcome.iterations,
            log_likelihood: -outcome.value,
            likelihood_trace: outcome.trace.iter().map(|v| -v).collect(),
        },
    ))
}

/// Dominant direction of the stacked observations: the top right-singular
/// vector of the `n x T` observation matrix, unit norm, sign fixed so the
/// largest-magnitude entry is positive. `None` for empty or degenerate data.
pub fn dominant_direction(observations: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = observations.len();
    let t = observations.first()?.len();
    let mat = DMatrix::from_fn(n, t, |i, j| observations[i][j]);
    let svd = mat.svd(false, true);
    let vt = svd.v_t?;
    let mut v: Vec<f64> = (0..t).map(|j| vt[(0, j)]).collect();
    let norm = Float::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if !(norm > 1e-12) {
        return None;
    }
    let lead = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)?;
    let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
    for x in v.iter_mut() {
        *x *= sign / norm;
    }
    Some(v)
}

/// Per-entry second moments summed over entries, for moment-matched variance
/// initialization: roughly `sigma^2 + T tau^2` under the model.
pub(crate) fn total_second_moment(observations: &[Vec<f64>]) -> Option<f64> {
    let n = observations.len();
    if n == 0 {
        return None;
    }
    let total: f64 = observations
        .iter()
        .flat_map(|o| o.iter().map(|v| v * v))
        .sum();
    Some(total / n as f64)
}

/// Structure of an existing core parametrization.
fn structure_of(core: &CoreTensorParam) -> CoreStructure {
    match core {
        CoreTensorParam::Full { .. } => CoreStructure::Full,
        CoreTensorParam::Cp { factors } => CoreStructure::Cp {
            rank: factors.len(),
        },
        CoreTensorParam::Tt { ranks, .. } => CoreStructure::Tt {
            ranks: ranks.clone(),
        },
    }
}

/// Builds restart candidates for the likelihood fit: the provided
/// initialization, a data-driven one (dominant observation direction for
/// full separable cores, moment-matched variances), and reseeded random
/// cores with rescaled lengthscales. Deterministic given `seed`.
pub(crate) fn restart_candidates(
    init: &TOGPHyper,
    scale: Option<f64>,
    direction: Option<Vec<f64>>,
    restarts: usize,
    seed: u64,
) -> Vec<TOGPHyper> {
    let mut candidates = Vec::with_capacity(restarts.max(1));
    candidates.push(init.clone());
    if restarts <= 1 {
        return candidates;
    }

    // Data-driven candidate.
    let mut data_driven = init.clone();
    if let Some(total) = scale {
        let t = init.shape().total() as f64;
        data_driven.signal_var = Float::max(0.9 * total, 1e-4);
        data_driven.noise_var = Float::max(0.1 * total / t, 1e-6);
    }
    if let (Some(dir), TensorKernel::Separable { core, .. }) =
        (&direction, &mut data_driven.kernel)
    {
        if matches!(core, CoreTensorParam::Full { .. }) {
            *core = CoreTensorParam::Full {
                entries: dir.clone(),
            };
        }
    }
    candidates.push(data_driven);

    // Reseeded random cores with rescaled lengthscales.
    let factors = [0.5, 2.0, 0.25, 4.0];
    for extra in 0..restarts.saturating_sub(2) {
        let mut cand = init.clone();
        if let Some(total) = scale {
            let t = init.shape().total() as f64;
            cand.signal_var = Float::max(0.9 * total, 1e-4);
            cand.noise_var = Float::max(0.1 * total / t, 1e-6);
        }
        let mut rng = stream_rng(seed.wrapping_add(extra as u64 + 1), streams::FIT);
        let shape = cand.shape().clone();
        match &mut cand.kernel {
            TensorKernel::Separable { core, base, .. } => {
                *core = structure_of(core).instantiate(&shape, &mut rng);
                for l in base.lengthscales.iter_mut() {
                    *l *= factors[extra % factors.len()];
                }
            }
            TensorKernel::NonSeparable { cores, bases, .. } => {
                for slot in cores.iter_mut() {
                    *slot = structure_of(slot).instantiate(&shape, &mut rng);
                }
                for group in bases.iter_mut() {
                    for b in group.iter_mut() {
                        for l in b.lengthscales.iter_mut() {
                            *l *= factors[extra % factors.len()];
                        }
                    }
                }
            }
        }
        candidates.push(cand);
    }
    candidates
}

/// [`fit`] from several initializations, keeping the best final likelihood
/// (earliest candidate wins ties). Candidates that fail numerically are
/// skipped; if every candidate fails the last error is returned.
pub fn fit_with_restarts(
    data: &Dataset,
    init: &TOGPHyper,
    cfg: &FitConfig,
    restarts: usize,
    seed: u64,
) -> Result<(TOGPHyper, FitReport)> {
    let direction = dominant_direction(data.observations());
    let scale = total_second_moment(data.observations());
    let candidates = restart_candidates(init, scale, direction, restarts, seed);
    let mut best: Option<(TOGPHyper, FitReport)> = None;
    let mut last_err = None;
    for cand in &candidates {
        match fit(data, cand, cfg) {
            Ok((hyper, report)) => {
                let better = best
                    .as_ref()
                    .map_or(true, |(_, b)| report.log_likelihood > b.log_likelihood);
                if better {
                    best = Some((hyper, report));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one candidate attempted"))
}

/// Candidate structure for the kernel core, compared by cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreStructure {
    Full,
    Cp { rank: usize },
    Tt { ranks: Vec<usize> },
}

impl CoreStructure {
    /// Instantiates the structure with small random entries (scaled so the
    /// materialized core has roughly unit norm).
    pub fn instantiate(&self, shape: &TensorShape, rng: &mut rand_chacha::ChaCha12Rng) -> CoreTensorParam {
        use rand::Rng;
        let mut core = match self {
            CoreStructure::Full => CoreTensorParam::full_zeros(shape),
            CoreStructure::Cp { rank } => CoreTensorParam::cp_zeros(shape, *rank),
            CoreStructure::Tt { ranks } => CoreTensorParam::tt_zeros(shape, ranks),
        };
        let m = shape.mode_count() as f64;
        let rank_factor = match self {
            CoreStructure::Full => 1.0,
            CoreStructure::Cp { rank } => *rank as f64,
            CoreStructure::Tt { ranks } => {
                ranks.iter().map(|&r| r as f64).fold(1.0, f64::max)
            }
        };
        let scale = match self {
            CoreStructure::Full => 1.0 / Float::sqrt(shape.total() as f64),
            _ => Float::powf(shape.total() as f64 * rank_factor, -1.0 / (2.0 * m)),
        };
        let vals: Vec<f64> = (0..core.param_count())
            .map(|_| {
                let mag: f64 = rng.random_range(0.3..1.0);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * mag * scale
            })
            .collect();
        core.set_params(&vals);
        core
    }
}

/// Outcome of [`select_rank`].
#[derive(Debug, Clone)]
pub struct RankSelection {
    pub index: usize,
    pub structure: CoreStructure,
    /// Holdout MAE per candidate; `None` where fitting failed.
    pub mae: Vec<Option<f64>>,
}

/// Relative mean absolute error on a holdout set:
/// `(1/n) sum_i || (y_i - yhat_i) / y_i ||`, skipping entries with
/// `|y| < 1e-12`.
pub fn relative_mae(truth: &[Vec<f64>], predicted: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (y, yhat) in truth.iter().zip(predicted) {
        let mut sq = 0.0;
        for (a, b) in y.iter().zip(yhat) {
            if Float::abs(*a) >= 1e-12 {
                let r = (a - b) / a;
                sq += r * r;
            }
        }
        total += Float::sqrt(sq);
    }
    total / truth.len() as f64
}

/// Selects a core structure by a fixed-seed 80/20 holdout: each candidate is
/// fitted on the train split and scored by [`relative_mae`] on the holdout;
/// ties break toward fewer parameters. Candidates that fail to fit are
/// skipped; if all fail, an error is returned.
pub fn select_rank(
    data: &Dataset,
    candidates: &[CoreStructure],
    template: &TOGPHyper,
    cfg: &FitConfig,
    seed: u64,
) -> Result<RankSelection> {
    if candidates.is_empty() {
        return Err(invalid_err("select_rank needs at least one candidate"));
    }
    if candidates.len() == 1 {
        return Ok(RankSelection {
            index: 0,
            structure: candidates[0].clone(),
            mae: vec![None],
        });
    }
    if data.n() < 2 {
        return Err(invalid_err("select_rank needs at least two observations"));
    }
    let shape = template.shape().clone();
    let mut split_rng = stream_rng(seed, streams::SPLIT);
    let (train_idx, test_idx) = holdout_split(data.n(), 0.2, &mut split_rng);
    let train = data.subset(&train_idx);
    let test = data.subset(&test_idx);

    let mut mae: Vec<Option<f64>> = Vec::with_capacity(candidates.len());
    let mut counts = Vec::with_capacity(candidates.len());
    for (c, cand) in candidates.iter().enumerate() {
        let mut init_rng = stream_rng(seed.wrapping_add(c as u64), streams::FIT);
        let core = cand.instantiate(&shape, &mut init_rng);
        counts.push(core.param_count());
        let mut init = template.clone();
        match &mut init.kernel {
            TensorKernel::Separable { core: slot, .. } => *slot = core,
            TensorKernel::NonSeparable { cores, .. } => {
                for slot in cores.iter_mut() {
                    let mut rng = stream_rng(seed.wrapping_add(c as u64).wrapping_add(101), streams::FIT);
                    *slot = cand.instantiate(&shape, &mut rng);
                }
            }
        }
        let score = fit(&train, &init, cfg).ok().and_then(|(fitted, _)| {
            let preds: Result<Vec<Vec<f64>>> = test
                .inputs()
                .iter()
                .map(|x| posterior(&fitted, &train, x).map(|p| p.mean.iter().copied().collect()))
                .collect();
            preds.ok().map(|p| relative_mae(test.observations(), &p))
        });
        mae.push(score);
    }
    let mut best: Option<usize> = None;
    for (c, score) in mae.iter().enumerate() {
        let Some(s) = score else { continue };
        best = match best {
            None => Some(c),
            Some(b) => {
                let sb = mae[b].unwrap();
                if *s < sb || (*s == sb && counts[c] < counts[b]) {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        };
    }
    let index = best.ok_or_else(|| invalid_err("every rank candidate failed to fit"))?;
    Ok(RankSelection {
        index,
        structure: candidates[index].clone(),
        mae,
    })
}

/// How the Nyström rank is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NystromRank {
    /// Uniformly sampled landmark columns.
    Landmarks(usize),
    /// Use the full spectrum and keep the smallest leading set of
    /// eigenvalues whose cumulative share reaches `c` in `(0, 1]`.
    VarianceThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NystromConfig {
    pub enabled: bool,
    pub rank: NystromRank,
    pub seed: u64,
}

/// Status of a Nyström solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromReport {
    /// The requested landmark count exceeded `nT` and was clamped.
    pub clamped: bool,
    pub effective_rank: usize,
}

/// Posterior with `(K_n + eta I)^{-1}` replaced by the Woodbury inverse of a
/// low-rank approximation `K_n ~ Z Z^T` built from landmark columns (or a
/// truncated eigendecomposition in variance-threshold mode).
pub fn nystrom_posterior(
    hyper: &TOGPHyper,
    data: &Dataset,
    x: &[f64],
    cfg: &NystromConfig,
) -> Result<(Posterior, NystromReport)> {
    if !cfg.enabled {
        return Err(invalid_err("nystrom_posterior called with enabled = false"));
    }
    hyper.validate()?;
    let t = hyper.shape().total();
    if data.n() == 0 {
        let post = posterior(hyper, data, x)?;
        return Ok((
            post,
            NystromReport {
                clamped: false,
                effective_rank: 0,
            },
        ));
    }
    let nt = data.n() * t;
    let gram = hyper.kernel.gram(data.inputs())?;
    let eta = hyper.eta();

    // Factor K_n ~ Z Z^T.
    let (z, clamped) = match cfg.rank {
        NystromRank::Landmarks(requested) => {
            let clamped = requested > nt;
            let n_l = requested.min(nt).max(1);
            let mut rng = stream_rng(cfg.seed, streams::SPLIT);
            let landmarks = crate::sample::sample_subset(nt, n_l, &mut rng);
            let c = gram.select_columns(landmarks.iter());
            let w = DMatrix::from_fn(n_l, n_l, |r, s| gram[(landmarks[r], landmarks[s])]);
            let eig = w.symmetric_eigen();
            let lam_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
            let keep: Vec<usize> = (0..n_l)
                .filter(|&i| eig.eigenvalues[i] > 1e-12 * lam_max.max(1e-300))
                .collect();
            let mut z = DMatrix::zeros(nt, keep.len());
            for (col, &i) in keep.iter().enumerate() {
                let scale = 1.0 / Float::sqrt(eig.eigenvalues[i]);
                let u_i = eig.eigenvectors.column(i);
                let cu = &c * u_i;
                for r in 0..nt {
                    z[(r, col)] = cu[r] * scale;
                }
            }
            (z, clamped)
        }
        NystromRank::VarianceThreshold(c) => {
            if !(c > 0.0 && c <= 1.0) {
                return Err(invalid_err("variance threshold must lie in (0, 1]"));
            }
            let eig = gram.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..nt).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[b]
                    .partial_cmp(&eig.eigenvalues[a])
                    .unwrap()
            });
            let total: f64 = order
                .iter()
                .map(|&i| eig.eigenvalues[i].max(0.0))
                .sum();
            let mut cum = 0.0;
            let mut rank = 0;
            for &i in &order {
                let v = eig.eigenvalues[i].max(0.0);
                if v <= 0.0 {
                    break;
                }
                cum += v;
                rank += 1;
                if total > 0.0 && cum / total >= c - 1e-15 {
                    break;
                }
            }
            let mut z = DMatrix::zeros(nt, rank);
            for (col, &i) in order[..rank].iter().enumerate() {
                let scale = Float::sqrt(eig.eigenvalues[i].max(0.0));
                for r in 0..nt {
                    z[(r, col)] = eig.eigenvectors[(r, i)] * scale;
                }
            }
            (z, false)
        }
    };
    let rank = z.ncols();

    // (eta I + Z Z^T)^{-1} v = (v - Z (eta I_r + Z^T Z)^{-1} Z^T v) / eta.
    let mut inner = z.transpose() * &z;
    for i in 0..rank {
        inner[(i, i)] += eta;
    }
    let inner_factor = SymFactor::new(inner)?;
    let apply = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let zt_v = z.transpose() * v;
        let solved = inner_factor.solve_mat(&zt_v);
        (v - &z * solved) / eta
    };

    // Assemble K_n(x) (block i = K(x_i, x)) and the centered observations.
    let compiled = crate::kernels::CompiledKernel::new(&hyper.kernel)?;
    let sel = full_selection(t);
    let mut kn_x = DMatrix::zeros(nt, t);
    for (i, xi) in data.inputs().iter().enumerate() {
        let block = compiled.eval_selected(xi, x, &sel, &sel);
        for r in 0..t {
            for c in 0..t {
                kn_x[(i * t + r, c)] = block[(r, c)];
            }
        }
    }
    let mut yc = DMatrix::zeros(nt, 1);
    for (i, obs) in data.observations().iter().enumerate() {
        for (r, v) in obs.iter().enumerate() {
            yc[(i * t + r, 0)] = v - hyper.mean[r];
        }
    }

    let mean_corr = kn_x.transpose() * apply(&yc);
    let mut mean = DVector::from_iterator(t, hyper.mean.iter().copied());
    for r in 0..t {
        mean[r] += mean_corr[(r, 0)];
    }
    let prior = compiled.eval_selected(x, x, &sel, &sel);
    let mut cov = hyper.signal_var * (prior - kn_x.transpose() * apply(&kn_x));
    symmetrize(&mut cov);

    Ok((
        Posterior { mean, cov },
        NystromReport {
            clamped,
            effective_rank: rank,
        },
    ))
}

/// Exact posterior through the Kronecker structure of a separable kernel:
/// the Gram is `K_x (x) a a^T`, so solves reduce to an `n x n` system via
/// the Woodbury identity. Agrees with [`posterior`] to machine precision.
pub fn separable_posterior(hyper: &TOGPHyper, data: &Dataset, x: &[f64]) -> Result<Posterior> {
    hyper.validate()?;
    let TensorKernel::Separable { core, base, shape } = &hyper.kernel else {
        return Err(invalid_err("separable_posterior needs a separable kernel"));
    };
    let t = shape.total();
    let a = DVector::from_vec(core.materialize(shape)?);
    if data.n() == 0 {
        let mut cov = hyper.signal_var * (&a * a.transpose());
        symmetrize(&mut cov);
        return Ok(Posterior {
            mean: DVector::from_iterator(t, hyper.mean.iter().copied()),
            cov,
        });
    }
    let n = data.n();
    let (s2, t2) = (hyper.signal_var, hyper.noise_var);
    let kx = DMatrix::from_fn(n, n, |i, j| {
        base.eval_unchecked(&data.inputs()[i], &data.inputs()[j])
    });
    let kx_factor = SymFactor::new(kx)?;
    let l = kx_factor.lower();
    let a_sq = a.dot(&a);

    // S = tau^2 I + sigma^2 (L (x) a)(L (x) a)^T; Woodbury gives
    // S^{-1} v = (v - Z M^{-1} Z^T v / tau^2) / tau^2 with
    // M = I/sigma^2 + (L^T L) ||a||^2 / tau^2 and Z = L (x) a.
    let mut m = (l.transpose() * &l) * (a_sq / t2);
    for i in 0..n {
        m[(i, i)] += 1.0 / s2;
    }
    let m_factor = SymFactor::new(m)?;
    let zt = |v: &DVector<f64>| -> DVector<f64> {
        // (L^T (x) a^T) v = L^T s with s_i = a . v_i.
        let s = DVector::from_fn(n, |i, _| {
            let mut acc = 0.0;
            for r in 0..t {
                acc += a[r] * v[i * t + r];
            }
            acc
        });
        l.transpose() * s
    };
    let z_mul = |w: &DVector<f64>| -> DVector<f64> {
        let lw = &l * w;
        let mut out = DVector::zeros(n * t);
        for i in 0..n {
            for r in 0..t {
                out[i * t + r] = lw[i] * a[r];
            }
        }
        out
    };
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let w = m_factor.solve_vec(&zt(v)) / t2;
        (v - z_mul(&w)) / t2
    };

    let mut yc = DVector::zeros(n * t);
    for (i, obs) in data.observations().iter().enumerate() {
        for (r, v) in obs.iter().enumerate() {
            yc[i * t + r] = v - hyper.mean[r];
        }
    }
    // K_n(x) = k_x (x) a a^T = (k_x (x) a) a^T, an outer product.
    let kvec = DVector::from_fn(n, |i, _| base.eval_unchecked(&data.inputs()[i], x));
    let mut zcol = DVector::zeros(n * t);
    for i in 0..n {
        for r in 0..t {
            zcol[i * t + r] = kvec[i] * a[r];
        }
    }
    let mean_scalar = s2 * zcol.dot(&apply(&yc));
    let mut mean = DVector::from_iterator(t, hyper.mean.iter().copied());
    mean += &a * mean_scalar;
    let kxx = base.eval_unchecked(x, x);
    let cov_scalar = s2 * (kxx - s2 * zcol.dot(&apply(&zcol)));
    let mut cov = cov_scalar * (&a * a.transpose());
    symmetrize(&mut cov);
    Ok(Posterior { mean, cov })
}
