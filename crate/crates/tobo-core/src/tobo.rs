//! UCB-based Bayesian optimization over the tensor-output surrogate.
//!
//! Each round maximizes the acquisition
//! `a(x) = L_f mu_n(x) + beta_n || C_n(x, x) ||^{1/2}`
//! over the box (`|| . ||` the spectral norm), observes the tensor output at
//! the maximizer, refits the surrogate, and tracks the incumbent. The final
//! recommendation is the round with the best scalarized observation.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_err, shape_err};
use crate::gp::full_selection;
use crate::kernels::{InputDomain, TensorKernel};
use crate::linalg::SymFactor;
use crate::sample::{halton, latin_hypercube, stream_rng, streams};
use crate::tensor::{DenseTensor, TensorShape};
use crate::togp::{self, Dataset, FitConfig, Posterior, TOGPHyper};
use crate::Result;

/// Maps a (selected) output vector to the scalar objective.
///
/// `Sum` and `WeightedSum` are the bounded linear operators; `ExpWeighted`
/// is the monotone exponential operator `sum_i e^{p w_i - 1} e^{p v_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scalarization {
    Sum,
    WeightedSum { weights: Vec<f64> },
    ExpWeighted { weights: Vec<f64>, p: f64 },
}

impl Scalarization {
    pub fn validate(&self, total: usize) -> Result<()> {
        match self {
            Scalarization::Sum => Ok(()),
            Scalarization::WeightedSum { weights } => {
                if weights.len() != total {
                    return Err(shape_err("weight vector length must equal tensor size"));
                }
                Ok(())
            }
            Scalarization::ExpWeighted { weights, p } => {
                if weights.len() != total {
                    return Err(shape_err("weight vector length must equal tensor size"));
                }
                if !(*p > 0.0) {
                    return Err(invalid_err("exponential weight p must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Applies the operator to a full length-`T` vector.
    pub fn apply(&self, v: &[f64]) -> Result<f64> {
        match self {
            Scalarization::Sum => Ok(v.iter().sum()),
            Scalarization::WeightedSum { weights } => {
                if weights.len() != v.len() {
                    return Err(shape_err("weighted sum: length mismatch"));
                }
                Ok(weights.iter().zip(v).map(|(w, x)| w * x).sum())
            }
            Scalarization::ExpWeighted { weights, p } => {
                if weights.len() != v.len() {
                    return Err(shape_err("exponential weighted: length mismatch"));
                }
                Ok(weights
                    .iter()
                    .zip(v)
                    .map(|(w, x)| Float::exp(p * w - 1.0) * Float::exp(p * x))
                    .sum())
            }
        }
    }

    /// Applies the operator to the entries of `v` sitting at tensor
    /// coordinates `coords` (the partial-observation variant `H_f`).
    pub fn apply_selected(&self, v: &[f64], coords: &[usize]) -> f64 {
        debug_assert_eq!(v.len(), coords.len());
        match self {
            Scalarization::Sum => v.iter().sum(),
            Scalarization::WeightedSum { weights } => coords
                .iter()
                .zip(v)
                .map(|(&c, x)| weights[c] * x)
                .sum(),
            Scalarization::ExpWeighted { weights, p } => coords
                .iter()
                .zip(v)
                .map(|(&c, x)| Float::exp(p * weights[c] - 1.0) * Float::exp(p * x))
                .sum(),
        }
    }
}

/// Exploration weight schedule for the UCB acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BetaSchedule {
    /// `beta_n = c0 + c1 sqrt(log(n + 1))`.
    Practical { c0: f64, c1: f64 },
    /// The constructive schedule
    /// `beta_n = sqrt(C_n) + 2 d log(r d n^2 (b sqrt(log(d a / delta)) + c_grad) / delta)`
    /// with `C_n = sup_x tr(C_n(x,x)) / lambda_max(C_n(x,x))` estimated on a
    /// quasi-random sample. The constants `a`, `b`, `c_grad` are not
    /// constructive and are plain configuration. With `sqrt_form` the last
    /// term is replaced by the tail-bound form
    /// `sqrt(2 log(tau_n^d / delta))`, `tau_n = r d n^2 (b sqrt(log(d a / delta)) + c_grad)`.
    Theoretical {
        delta: f64,
        r: f64,
        d: usize,
        a: f64,
        b: f64,
        c_grad: f64,
        sqrt_form: bool,
    },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            BetaSchedule::Practical { c0, c1 } => {
                if !(c0.is_finite() && c1.is_finite() && *c0 >= 0.0 && *c1 >= 0.0) {
                    return Err(invalid_err("practical beta constants must be >= 0"));
                }
            }
            BetaSchedule::Theoretical {
                delta, r, a, b, c_grad, ..
            } => {
                if !(*delta > 0.0 && *delta < 1.0) {
                    return Err(invalid_err("delta must lie in (0, 1)"));
                }
                if [r, a, b, c_grad].iter().any(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(invalid_err("beta constants must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Whether evaluating the schedule needs the posterior trace ratio `C_n`.
    pub fn needs_cn(&self) -> bool {
        matches!(self, BetaSchedule::Theoretical { .. })
    }

    /// Evaluates `beta_n` at round `n >= 1`; `c_n` is ignored by the
    /// practical schedule.
    pub fn value(&self, n: usize, c_n: f64) -> f64 {
        match *self {
            BetaSchedule::Practical { c0, c1 } => c0 + c1 * Float::sqrt(Float::ln(n as f64 + 1.0)),
            BetaSchedule::Theoretical {
                delta,
                r,
                d,
                a,
                b,
                c_grad,
                sqrt_form,
            } => {
                let df = d as f64;
                let inner = Float::max(Float::ln(df * a / delta), 0.0);
                let tau = r * df * (n as f64) * (n as f64) * (b * Float::sqrt(inner) + c_grad);
                let tail = if sqrt_form {
                    Float::sqrt(2.0 * (df * Float::ln(tau) - Float::ln(delta)))
                } else {
                    2.0 * df * Float::ln(tau / delta)
                };
                Float::sqrt(c_n) + tail
            }
        }
    }
}

/// One optimization round (initial design rounds included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// 1-based round index; rounds `1..=n0` are the initial design.
    pub round: usize,
    pub input: Vec<f64>,
    /// Vectorized noisy observation.
    pub observation: Vec<f64>,
    /// Scalarized observation `L_f y_n`.
    pub scalarized: f64,
    /// Running best scalarized observation.
    pub incumbent: f64,
    /// Instantaneous regret `L_f f(x*) - L_f f(x_n)` when the truth is known.
    pub regret: Option<f64>,
    /// Prefix sum of instantaneous regrets.
    pub cumulative_regret: Option<f64>,
}

/// A black-box tensor-output objective that the loops can query.
pub trait Problem {
    fn domain(&self) -> &InputDomain;
    fn shape(&self) -> &TensorShape;
    /// Noisy evaluation.
    fn evaluate(&mut self, x: &[f64]) -> DenseTensor;
    /// Noise-free evaluation when available (synthetic benchmarks); used for
    /// regret bookkeeping only.
    fn evaluate_noiseless(&self, x: &[f64]) -> Option<DenseTensor>;

    /// Noisy evaluation of the selected entries: the full tensor is drawn
    /// (same noise stream as [`Problem::evaluate`]) and then restricted.
    fn evaluate_selected(&mut self, x: &[f64], coords: &[usize]) -> Vec<f64> {
        let full = self.evaluate(x);
        coords.iter().map(|&c| full.as_slice()[c]).collect()
    }
}

/// Known optimum of the scalarized objective, for regret bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthInfo {
    pub value: f64,
}

/// Multi-start acquisition search controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Quasi-random starts per input dimension.
    pub starts_per_dim: usize,
    /// Refinement iterations per start.
    pub refine_iters: usize,
    /// Finite-difference step for acquisition gradients, relative to each
    /// box side.
    pub fd_step: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            starts_per_dim: 32,
            refine_iters: 40,
            fd_step: 1e-5,
        }
    }
}

/// UCB acquisition value `L_f mu + beta ||C||^{1/2}`.
pub fn ucb(scalarization: &Scalarization, posterior: &Posterior, beta: f64) -> Result<f64> {
    let mean: Vec<f64> = posterior.mean.iter().copied().collect();
    Ok(scalarization.apply(&mean)? + beta * Float::sqrt(posterior.spectral_norm()))
}

/// Maximizes an objective over the box by quasi-random multi-start with
/// projected finite-difference gradient ascent. Deterministic: ties resolve
/// to the earliest start. `halton_offset` shifts the start sequence so
/// successive rounds probe fresh points.
pub(crate) fn maximize_over_box(
    domain: &InputDomain,
    search: &SearchConfig,
    halton_offset: usize,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = domain.dim();
    let n_starts = (search.starts_per_dim * d).max(1);
    let starts = halton(n_starts, halton_offset, domain);
    let sides: Vec<f64> = (0..d)
        .map(|j| domain.upper()[j] - domain.lower()[j])
        .collect();
    let mut best_x = starts[0].clone();
    let mut best_val = f64::NEG_INFINITY;
    for start in starts {
        let mut x = start;
        let mut val = objective(&x);
        let mut step = 0.25;
        for _ in 0..search.refine_iters {
            // Central finite differences, clamped to the box.
            let mut grad = vec![0.0; d];
            let mut grad_norm = 0.0f64;
            for j in 0..d {
                let h = search.fd_step * sides[j];
                let mut xp = x.clone();
                xp[j] = (xp[j] + h).min(domain.upper()[j]);
                let mut xm = x.clone();
                xm[j] = (xm[j] - h).max(domain.lower()[j]);
                let denom = xp[j] - xm[j];
                if denom > 0.0 {
                    // Move in normalized coordinates: scale by the side.
                    grad[j] = (objective(&xp) - objective(&xm)) / denom * sides[j];
                }
                grad_norm = grad_norm.max(grad[j].abs());
            }
            if grad_norm < 1e-14 {
                break;
            }
            let mut cand = x.clone();
            for j in 0..d {
                cand[j] += step * grad[j] / grad_norm * sides[j];
            }
            domain.clamp(&mut cand);
            let cv = objective(&cand);
            if cv > val {
                val = cv;
                x = cand;
                step = (step * 1.6).min(0.5);
            } else {
                step *= 0.5;
                if step < 1e-9 {
                    break;
                }
            }
        }
        if val > best_val {
            best_val = val;
            best_x = x;
        }
    }
    (best_x, best_val)
}

/// Selects the next query input by maximizing the UCB acquisition over the
/// box (Eq.-9-style rule). `halton_offset` keeps restarts fresh per round.
pub fn select_input(
    hyper: &TOGPHyper,
    data: &Dataset,
    domain: &InputDomain,
    scalarization: &Scalarization,
    beta: f64,
    search: &SearchConfig,
    halton_offset: usize,
) -> Result<Vec<f64>> {
    scalarization.validate(hyper.shape().total())?;
    if beta < 0.0 {
        return Err(invalid_err("beta must be nonnegative"));
    }
    let surrogate = Surrogate::new(hyper, data)?;
    let (x, _) = maximize_over_box(domain, search, halton_offset, |x| {
        let post = surrogate.posterior(x);
        scalarization
            .apply(post.mean.as_slice())
            .map(|m| m + beta * Float::sqrt(post.spectral_norm()))
            .unwrap_or(f64::NEG_INFINITY)
    });
    Ok(x)
}

/// A conditioned surrogate whose factorization is reused across many
/// posterior queries (one acquisition search evaluates hundreds).
pub struct Surrogate<'h> {
    cond: crate::gp::Conditioned<'h>,
    sel: Vec<usize>,
}

impl<'h> Surrogate<'h> {
    pub fn new(hyper: &'h TOGPHyper, data: &Dataset) -> Result<Self> {
        let t = hyper.shape().total();
        let sels: Vec<Vec<usize>> = (0..data.n()).map(|_| full_selection(t)).collect();
        Ok(Self {
            cond: crate::gp::Conditioned::new(hyper, data.inputs(), &sels, &data.stacked())?,
            sel: full_selection(t),
        })
    }

    /// Posterior at `x`; `x` must have the surrogate's input dimension.
    pub fn posterior(&self, x: &[f64]) -> Posterior {
        Posterior {
            mean: self.cond.posterior_mean(x, &self.sel),
            cov: self.cond.posterior_cov(x, &self.sel, x, &self.sel),
        }
    }
}

/// Estimates `C_n = sup_x tr(C(x,x)) / lambda_max(C(x,x))` on a quasi-random
/// sample of the box.
pub fn estimate_trace_ratio(
    hyper: &TOGPHyper,
    data: &Dataset,
    domain: &InputDomain,
    sample_size: usize,
) -> Result<f64> {
    let surrogate = Surrogate::new(hyper, data)?;
    let mut best = 1.0f64;
    for x in halton(sample_size, 0, domain) {
        let post = surrogate.posterior(&x);
        let lam = post.spectral_norm();
        if lam > 1e-12 {
            best = best.max(post.cov.trace() / lam);
        }
    }
    Ok(best)
}

/// Loop configuration for [`run_tobo`].
#[derive(Debug, Clone)]
pub struct ToboConfig {
    /// Sequential rounds `N` after the initial design.
    pub rounds: usize,
    /// Initial Latin-hypercube design size `n0`.
    pub initial_design: usize,
    pub beta: BetaSchedule,
    pub scalarization: Scalarization,
    pub search: SearchConfig,
    pub fit: FitConfig,
    /// Refit the hyperparameters every this many rounds (1 = every round).
    pub refit_every: usize,
    /// Initializations tried for the first fit after the initial design
    /// (1 = just the provided one); later refits warm-start.
    pub fit_restarts: usize,
    /// Maintain the prior mean at the per-entry empirical mean of the
    /// observations (the likelihood centers the data by it).
    pub center_mean: bool,
    /// Sample size for the trace-ratio estimate of the theoretical schedule.
    pub cn_sample: usize,
    pub seed: u64,
}

impl ToboConfig {
    pub fn new(rounds: usize, initial_design: usize, seed: u64) -> Self {
        Self {
            rounds,
            initial_design,
            beta: BetaSchedule::Practical { c0: 1.0, c1: 2.0 },
            scalarization: Scalarization::Sum,
            search: SearchConfig::default(),
            fit: FitConfig::default(),
            refit_every: 1,
            fit_restarts: 4,
            center_mean: true,
            cn_sample: 256,
            seed,
        }
    }
}

/// Outcome of a TOBO run.
#[derive(Debug, Clone)]
pub struct ToboOutcome {
    pub records: Vec<RunRecord>,
    /// 1-based round of the recommendation `argmax_n L_f y_n`.
    pub best_round: usize,
    pub best_input: Vec<f64>,
    pub surrogate: TOGPHyper,
    pub dataset: Dataset,
}

struct RegretTracker {
    cumulative: f64,
    alive: bool,
}

impl RegretTracker {
    fn new() -> Self {
        Self {
            cumulative: 0.0,
            alive: true,
        }
    }

    fn step(
        &mut self,
        truth: Option<&TruthInfo>,
        noiseless_scalar: Option<f64>,
    ) -> (Option<f64>, Option<f64>) {
        if !self.alive {
            return (None, None);
        }
        match (truth, noiseless_scalar) {
            (Some(t), Some(v)) => {
                let r = t.value - v;
                self.cumulative += r;
                (Some(r), Some(self.cumulative))
            }
            _ => {
                self.alive = false;
                (None, None)
            }
        }
    }
}

/// Runs the UCB loop: initial Latin-hypercube design, then for each round
/// posterior update, UCB input selection, observation, hyperparameter refit
/// (warm-started), and record emission through `on_record` (so partial runs
/// survive a numerical failure).
pub fn run_tobo<P: Problem>(
    problem: &mut P,
    init: &TOGPHyper,
    config: &ToboConfig,
    truth: Option<&TruthInfo>,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<ToboOutcome> {
    init.validate()?;
    config.beta.validate()?;
    let t = init.shape().total();
    config.scalarization.validate(t)?;
    if problem.shape().total() != t {
        return Err(shape_err("problem and surrogate tensor sizes disagree"));
    }
    if config.refit_every == 0 {
        return Err(invalid_err("refit_every must be at least 1"));
    }
    let domain = problem.domain().clone();

    let mut records: Vec<RunRecord> = Vec::new();
    let mut data = Dataset::empty();
    let mut incumbent = f64::NEG_INFINITY;
    let mut tracker = RegretTracker::new();
    let observe = |problem: &mut P,
                       x: Vec<f64>,
                       round: usize,
                       data: &mut Dataset,
                       incumbent: &mut f64,
                       tracker: &mut RegretTracker,
                       records: &mut Vec<RunRecord>,
                       on_record: &mut dyn FnMut(&RunRecord)|
     -> Result<()> {
        let y = problem.evaluate(&x);
        let obs: Vec<f64> = y.as_slice().to_vec();
        let scalarized = config.scalarization.apply(&obs)?;
        if scalarized > *incumbent {
            *incumbent = scalarized;
        }
        let noiseless = problem
            .evaluate_noiseless(&x)
            .map(|f| config.scalarization.apply(f.as_slice()))
            .transpose()?;
        let (regret, cumulative) = tracker.step(truth, noiseless);
        let record = RunRecord {
            round,
            input: x.clone(),
            observation: obs.clone(),
            scalarized,
            incumbent: *incumbent,
            regret,
            cumulative_regret: cumulative,
        };
        on_record(&record);
        records.push(record);
        data.push(x, obs);
        Ok(())
    };

    // Initial design.
    let mut design_rng = stream_rng(config.seed, streams::DESIGN);
    let design = latin_hypercube(config.initial_design, &domain, &mut design_rng);
    for (i, x) in design.into_iter().enumerate() {
        observe(
            problem,
            x,
            i + 1,
            &mut data,
            &mut incumbent,
            &mut tracker,
            &mut records,
            &mut on_record,
        )?;
    }

    let mut hyper = init.clone();
    if config.rounds > 0 && data.n() > 0 {
        if config.center_mean {
            hyper.mean = empirical_mean(&data, t);
        }
        let (fitted, _) = togp::fit_with_restarts(
            &data,
            &hyper,
            &config.fit,
            config.fit_restarts,
            config.seed,
        )?;
        hyper = fitted;
    }

    for j in 1..=config.rounds {
        let c_n = if config.beta.needs_cn() {
            estimate_trace_ratio(&hyper, &data, &domain, config.cn_sample)?
        } else {
            0.0
        };
        let beta = config.beta.value(j, c_n);
        let x = select_input(
            &hyper,
            &data,
            &domain,
            &config.scalarization,
            beta,
            &config.search,
            (config.initial_design + j) * 131,
        )?;
        observe(
            problem,
            x,
            config.initial_design + j,
            &mut data,
            &mut incumbent,
            &mut tracker,
            &mut records,
            &mut on_record,
        )?;
        if j % config.refit_every == 0 {
            if config.center_mean {
                hyper.mean = empirical_mean(&data, t);
            }
            let (fitted, _) = togp::fit(&data, &hyper, &config.fit)?;
            hyper = fitted;
        }
    }

    let best_round = records
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.scalarized.partial_cmp(&b.scalarized).unwrap())
        .map(|(i, _)| i + 1)
        .ok_or_else(|| invalid_err("run produced no records (n0 = 0 and N = 0)"))?;
    let best_input = records[best_round - 1].input.clone();
    Ok(ToboOutcome {
        records,
        best_round,
        best_input,
        surrogate: hyper,
        dataset: data,
    })
}

/// Per-entry empirical mean of the observations.
fn empirical_mean(data: &Dataset, t: usize) -> Vec<f64> {
    let n = data.n();
    let mut mean = vec![0.0; t];
    for obs in data.observations() {
        for (r, v) in obs.iter().enumerate() {
            mean[r] += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    mean
}

/// Information gain of a fixed design:
/// `1/2 log det(I + eta^{-1} K_N)`.
pub fn information_gain(kernel: &TensorKernel, inputs: &[Vec<f64>], eta: f64) -> Result<f64> {
    if inputs.is_empty() {
        return Err(invalid_err("information gain needs at least one input"));
    }
    if !(eta > 0.0) {
        return Err(invalid_err("eta must be positive"));
    }
    let gram = kernel.gram(inputs)?;
    let n = gram.nrows();
    let mut m = gram / eta;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let factor = SymFactor::new(m)?;
    Ok(0.5 * factor.log_det())
}

/// Kronecker-eigenvalue route for the separable class:
/// `sum_{i,j} 1/2 log(1 + eta^{-1} alpha_i beta_j)` over the eigenvalues of
/// the input Gram and of `B = vec(A) vec(A)^T` (used as the diagnostic
/// cross-check of [`information_gain`]).
pub fn separable_information_gain(
    kernel: &TensorKernel,
    inputs: &[Vec<f64>],
    eta: f64,
) -> Result<f64> {
    let TensorKernel::Separable { core, base, shape } = kernel else {
        return Err(invalid_err("separable information gain needs a separable kernel"));
    };
    let n = inputs.len();
    let kx = DMatrix::from_fn(n, n, |i, j| base.eval_unchecked(&inputs[i], &inputs[j]));
    let alphas = crate::linalg::sym_eigenvalues(&kx);
    let a = core.materialize(shape)?;
    let norm_sq: f64 = a.iter().map(|v| v * v).sum();
    // B is rank one: eigenvalues (||a||^2, 0, ..., 0).
    let mut gain = 0.0;
    for &alpha in &alphas {
        let lam = Float::max(alpha, 0.0) * norm_sq;
        gain += 0.5 * Float::ln(1.0 + lam / eta);
    }
    Ok(gain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BaseKernelParam, KernelFamily};
    use crate::tensor::CoreTensorParam;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::Rng;

    fn unit_shape(t: usize) -> TensorShape {
        TensorShape::new(&[t]).unwrap()
    }

    #[test]
    fn scalarize_sum_of_ones() {
        let s = Scalarization::Sum;
        assert_abs_diff_eq!(s.apply(&[1.0; 5]).unwrap(), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn scalarize_exp_weighted_closed_form() {
        let t = 4;
        let s = Scalarization::ExpWeighted {
            weights: vec![0.0; t],
            p: 2.0,
        };
        let got = s.apply(&vec![0.0; t]).unwrap();
        assert_abs_diff_eq!(got, t as f64 * (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn scalarize_weighted_projection() {
        let s = Scalarization::WeightedSum {
            weights: vec![1.0, 0.0, 0.0],
        };
        assert_abs_diff_eq!(s.apply(&[7.0, 1.0, 2.0]).unwrap(), 7.0, epsilon = 1e-15);
    }

    #[test]
    fn scalarize_selected_pulls_weights_by_coordinate() {
        let s = Scalarization::WeightedSum {
            weights: vec![1.0, 10.0, 100.0, 1000.0],
        };
        let got = s.apply_selected(&[2.0, 3.0], &[1, 3]);
        assert_abs_diff_eq!(got, 2.0 * 10.0 + 3.0 * 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn ucb_beta_zero_is_scalarized_mean() {
        let post = Posterior {
            mean: DVector::from_vec(vec![1.0, 2.0]),
            cov: DMatrix::identity(2, 2),
        };
        assert_abs_diff_eq!(
            ucb(&Scalarization::Sum, &post, 0.0).unwrap(),
            3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ucb_identity_covariance() {
        let t = 3;
        let post = Posterior {
            mean: DVector::zeros(t),
            cov: DMatrix::identity(t, t),
        };
        assert_abs_diff_eq!(
            ucb(&Scalarization::Sum, &post, 1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ucb_diagonal_spectral_norm() {
        let post = Posterior {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]),
        };
        assert_abs_diff_eq!(
            ucb(&Scalarization::Sum, &post, 2.0).unwrap(),
            4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn beta_schedules_match_hand_computation() {
        let practical = BetaSchedule::Practical { c0: 1.0, c1: 2.0 };
        assert_abs_diff_eq!(practical.value(3, 0.0), 3.3548200450309493, epsilon = 1e-12);
        let printed = BetaSchedule::Theoretical {
            delta: 0.1,
            r: 1.0,
            d: 2,
            a: 1.0,
            b: 1.0,
            c_grad: 1.0,
            sqrt_form: false,
        };
        assert_abs_diff_eq!(printed.value(2, 4.0), 23.546511891178156, epsilon = 1e-9);
        let sqrt_form = BetaSchedule::Theoretical {
            delta: 0.1,
            r: 1.0,
            d: 2,
            a: 1.0,
            b: 1.0,
            c_grad: 1.0,
            sqrt_form: true,
        };
        assert_abs_diff_eq!(sqrt_form.value(2, 4.0), 6.115986115767407, epsilon = 1e-9);
    }

    fn scalar_hyper(lengthscale: f64) -> TOGPHyper {
        let kernel = TensorKernel::Separable {
            shape: unit_shape(1),
            core: CoreTensorParam::Full {
                entries: vec![1.0],
            },
            base: BaseKernelParam::isotropic(KernelFamily::Matern52, 1, lengthscale).unwrap(),
        };
        TOGPHyper::new(kernel, 1.0, 1e-6).unwrap()
    }

    #[test]
    fn select_input_returns_point_in_box_for_zero_data() {
        let hyper = scalar_hyper(0.3);
        let domain = InputDomain::new(&[-1.0], &[2.0]).unwrap();
        let x = select_input(
            &hyper,
            &Dataset::empty(),
            &domain,
            &Scalarization::Sum,
            1.0,
            &SearchConfig::default(),
            0,
        )
        .unwrap();
        assert!(domain.contains(&x));
    }

    #[test]
    fn select_input_finds_posterior_mean_peak() {
        // Near-noiseless observations of a peaked function; with beta = 0 the
        // acquisition is the posterior mean.
        let hyper = scalar_hyper(0.15);
        let domain = InputDomain::unit(1);
        let f = |x: f64| -(x - 0.37) * (x - 0.37);
        let inputs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let obs: Vec<Vec<f64>> = inputs.iter().map(|x| vec![f(x[0])]).collect();
        let data = Dataset::new(inputs, obs).unwrap();
        let got = select_input(
            &hyper,
            &data,
            &domain,
            &Scalarization::Sum,
            0.0,
            &SearchConfig::default(),
            0,
        )
        .unwrap();
        // Grid oracle over the posterior mean.
        let surrogate = Surrogate::new(&hyper, &data).unwrap();
        let (oracle_x, _) = crate::oracle::grid_maximize(&domain, 10_000, |x| {
            surrogate.posterior(x).mean[0]
        });
        assert!(
            (got[0] - oracle_x[0]).abs() < 1e-3,
            "got {} oracle {}",
            got[0],
            oracle_x[0]
        );
    }

    #[test]
    fn select_input_large_beta_tracks_variance() {
        let hyper = scalar_hyper(0.2);
        let domain = InputDomain::unit(1);
        // Observations clustered on the left: variance peaks on the right.
        let inputs: Vec<Vec<f64>> = (0..6).map(|i| vec![0.05 * i as f64]).collect();
        let obs: Vec<Vec<f64>> = inputs.iter().map(|_| vec![0.0]).collect();
        let data = Dataset::new(inputs, obs).unwrap();
        let beta = 1e6;
        let got = select_input(
            &hyper,
            &data,
            &domain,
            &Scalarization::Sum,
            beta,
            &SearchConfig::default(),
            0,
        )
        .unwrap();
        let surrogate = Surrogate::new(&hyper, &data).unwrap();
        let (oracle_x, _) = crate::oracle::grid_maximize(&domain, 10_000, |x| {
            surrogate.posterior(x).spectral_norm()
        });
        assert!(
            (got[0] - oracle_x[0]).abs() < 1e-3,
            "got {} oracle {}",
            got[0],
            oracle_x[0]
        );
    }

    #[test]
    fn weight_scaling_does_not_move_argmax() {
        let hyper = scalar_hyper(0.2);
        let domain = InputDomain::unit(1);
        let inputs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let obs: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| vec![(3.0 * x[0]).sin()])
            .collect();
        let data = Dataset::new(inputs, obs).unwrap();
        let base = Scalarization::WeightedSum {
            weights: vec![1.0],
        };
        let scaled = Scalarization::WeightedSum {
            weights: vec![4.0],
        };
        let search = SearchConfig::default();
        let x1 = select_input(&hyper, &data, &domain, &base, 0.5, &search, 0).unwrap();
        // Scaling weights by c > 0 and beta by the same factor leaves the
        // argmax unchanged (the acquisition is scaled by c).
        let x2 = select_input(&hyper, &data, &domain, &scaled, 2.0, &search, 0).unwrap();
        assert_abs_diff_eq!(x1[0], x2[0], epsilon = 1e-9);
    }

    #[test]
    fn information_gain_zero_kernel() {
        let kernel = TensorKernel::Separable {
            shape: unit_shape(2),
            core: CoreTensorParam::Full {
                entries: vec![0.0, 0.0],
            },
            base: BaseKernelParam::isotropic(KernelFamily::Gaussian, 1, 1.0).unwrap(),
        };
        let gain = information_gain(&kernel, &[vec![0.1], vec![0.5]], 1.0).unwrap();
        assert_abs_diff_eq!(gain, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn information_gain_identity_gram() {
        // One observation, core vector of unit norm, k(x,x) = 1: the Gram is
        // the rank-one matrix a a^T; with a = e_1 it is diag(1, 0), so the
        // gain is 1/2 log 2.
        let kernel = TensorKernel::Separable {
            shape: unit_shape(2),
            core: CoreTensorParam::Full {
                entries: vec![1.0, 0.0],
            },
            base: BaseKernelParam::isotropic(KernelFamily::Gaussian, 1, 1.0).unwrap(),
        };
        let gain = information_gain(&kernel, &[vec![0.3]], 1.0).unwrap();
        assert_abs_diff_eq!(gain, 0.5 * (2.0f64).ln(), epsilon = 1e-10);
    }

    #[test]
    fn information_gain_matches_kronecker_eigen_route() {
        let mut rng = stream_rng(5, streams::PROBLEM);
        let sh = TensorShape::new(&[2, 2]).unwrap();
        let entries: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel = TensorKernel::Separable {
            shape: sh,
            core: CoreTensorParam::Full { entries },
            base: BaseKernelParam::isotropic(KernelFamily::Gaussian, 2, 0.6).unwrap(),
        };
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let eta = 0.37;
        let dense = information_gain(&kernel, &inputs, eta).unwrap();
        let eigen = separable_information_gain(&kernel, &inputs, eta).unwrap();
        assert_abs_diff_eq!(dense, eigen, epsilon = 1e-8);
    }

    #[test]
    fn information_gain_monotone_in_design() {
        let mut rng = stream_rng(6, streams::PROBLEM);
        let kernel = TensorKernel::Separable {
            shape: unit_shape(2),
            core: CoreTensorParam::Full {
                entries: vec![0.8, -0.6],
            },
            base: BaseKernelParam::isotropic(KernelFamily::Matern52, 1, 0.4).unwrap(),
        };
        let mut inputs: Vec<Vec<f64>> = vec![vec![rng.random_range(0.0..1.0)]];
        let mut prev = information_gain(&kernel, &inputs, 0.5).unwrap();
        for _ in 0..5 {
            inputs.push(vec![rng.random_range(0.0..1.0)]);
            let next = information_gain(&kernel, &inputs, 0.5).unwrap();
            assert!(next >= prev - 1e-10);
            prev = next;
        }
    }

    #[test]
    fn proposition_style_comparison_bound() {
        // gamma_n(K, eta) <= T gamma_n(beta_max k, eta) for the separable
        // class with a Gaussian base, beta_max the top eigenvalue of B.
        let mut rng = stream_rng(7, streams::PROBLEM);
        for trial in 0..10 {
            let sh = TensorShape::new(&[2, 2]).unwrap();
            let entries: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm_sq: f64 = entries.iter().map(|v| v * v).sum();
            let kernel = TensorKernel::Separable {
                shape: sh,
                core: CoreTensorParam::Full { entries },
                base: BaseKernelParam::isotropic(KernelFamily::Gaussian, 1, 0.5).unwrap(),
            };
            let inputs: Vec<Vec<f64>> = (0..4)
                .map(|_| vec![rng.random_range(0.0..1.0)])
                .collect();
            let eta = 0.4;
            let lhs = information_gain(&kernel, &inputs, eta).unwrap();
            // Scalar-kernel gain with the base rescaled by beta_max = ||a||^2.
            let base = BaseKernelParam::isotropic(KernelFamily::Gaussian, 1, 0.5).unwrap();
            let n = inputs.len();
            let kx = DMatrix::from_fn(n, n, |i, j| {
                norm_sq * base.eval(&inputs[i], &inputs[j]).unwrap()
            });
            let scalar_gain: f64 = crate::linalg::sym_eigenvalues(&kx)
                .iter()
                .map(|&l| 0.5 * (1.0 + l.max(0.0) / eta).ln())
                .sum();
            let t = 4.0;
            assert!(
                lhs <= t * scalar_gain + 1e-8,
                "trial {trial}: {lhs} > {}",
                t * scalar_gain
            );
        }
    }

    struct Quadratic1d {
        domain: InputDomain,
        shape: TensorShape,
        noise: rand_chacha::ChaCha12Rng,
        noise_std: f64,
    }

    impl Problem for Quadratic1d {
        fn domain(&self) -> &InputDomain {
            &self.domain
        }
        fn shape(&self) -> &TensorShape {
            &self.shape
        }
        fn evaluate(&mut self, x: &[f64]) -> DenseTensor {
            let mut f = self.evaluate_noiseless(x).unwrap();
            if self.noise_std > 0.0 {
                let e = crate::sample::standard_normals(1, &mut self.noise);
                *f.get_mut(&[0]) += self.noise_std * e[0];
            }
            f
        }
        fn evaluate_noiseless(&self, x: &[f64]) -> Option<DenseTensor> {
            Some(DenseTensor::from_vec(self.shape.clone(), vec![-(x[0] - 0.3) * (x[0] - 0.3)]).unwrap())
        }
    }

    fn quadratic_problem(seed: u64, noise_std: f64) -> Quadratic1d {
        Quadratic1d {
            domain: InputDomain::unit(1),
            shape: unit_shape(1),
            noise: stream_rng(seed, streams::NOISE),
            noise_std,
        }
    }

    #[test]
    fn zero_rounds_runs_only_initial_design() {
        let mut problem = quadratic_problem(1, 0.0);
        let hyper = scalar_hyper(0.3);
        let cfg = ToboConfig::new(0, 5, 42);
        let out = run_tobo(&mut problem, &hyper, &cfg, None, |_| {}).unwrap();
        assert_eq!(out.records.len(), 5);
        let best = out
            .records
            .iter()
            .map(|r| r.scalarized)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(
            out.records[out.best_round - 1].scalarized,
            best,
            epsilon = 1e-15
        );
    }

    #[test]
    fn noiseless_quadratic_regret_improves() {
        let mut problem = quadratic_problem(2, 0.0);
        let mut hyper = scalar_hyper(0.3);
        hyper.noise_var = 1e-6;
        let mut cfg = ToboConfig::new(30, 4, 7);
        cfg.fit.lbfgs.max_iters = 40;
        let truth = TruthInfo { value: 0.0 };
        let out = run_tobo(&mut problem, &hyper, &cfg, Some(&truth), |_| {}).unwrap();
        assert_eq!(out.records.len(), 34);
        let first = out.records[0].regret.unwrap();
        let last = out.records.last().unwrap().regret.unwrap();
        assert!(
            last < first,
            "regret did not improve: first {first}, last {last}"
        );
        // Incumbent is nondecreasing.
        for w in out.records.windows(2) {
            assert!(w[1].incumbent >= w[0].incumbent);
        }
        // Cumulative regret is the prefix sum.
        let mut acc = 0.0;
        for r in &out.records {
            acc += r.regret.unwrap();
            assert_abs_diff_eq!(r.cumulative_regret.unwrap(), acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn records_are_emitted_incrementally() {
        let mut problem = quadratic_problem(3, 0.05);
        let hyper = scalar_hyper(0.3);
        let mut cfg = ToboConfig::new(2, 3, 11);
        cfg.fit.lbfgs.max_iters = 20;
        let mut seen = Vec::new();
        let out = run_tobo(&mut problem, &hyper, &cfg, None, |r| seen.push(r.round)).unwrap();
        assert_eq!(seen, vec![1, 2, 3, 4, 5]);
        assert_eq!(out.records.len(), 5);
    }
}
