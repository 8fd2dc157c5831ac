//! Combinatorial-bandit Bayesian optimization over partially observed
//! tensor outputs.
//!
//! Each round decouples the joint maximization over inputs and super-arms
//! into two UCB steps: first the input is selected under the incumbent
//! super-arm,
//! `x_{n+1} = argmax_x H_f mu_n(x, l*) + beta_n ||C_n(x, x; l*, l*)||^{1/2}`,
//! then the super-arm at that input,
//! `l_{n+1} = argmax_l H_f mu_n(x_{n+1}, l) + rho_n ||C_n(x_{n+1}, x_{n+1}; l, l)||^{1/2}`,
//! by exact enumeration or a greedy top-`k` construction.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_err, shape_err, Error};
use crate::kernels::InputDomain;
use crate::oracle::binomial;
use crate::ptogp::{self, PartialDataset, PartialSurrogate, SelectionVector};
use crate::sample::{halton, latin_hypercube, sample_subset, stream_rng, streams};
use crate::tobo::{maximize_over_box, BetaSchedule, Problem, Scalarization, SearchConfig, TruthInfo};
use crate::togp::{FitConfig, Posterior, TOGPHyper};
use crate::Result;

/// Default cap on exact super-arm enumeration.
pub const ENUMERATION_GUARD: u128 = 1_000_000;

/// Exploration schedule for the super-arm UCB:
/// `rho_n = sqrt(2 log(N T pi_n / delta))` with `pi_n = pi^2 n^2 / 6`
/// (so that `sum_n 1/pi_n = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub delta: f64,
    /// Query horizon `N`.
    pub horizon: usize,
}

impl RhoSchedule {
    pub fn new(delta: f64, horizon: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid_err("delta must lie in (0, 1)"));
        }
        Ok(Self { delta, horizon })
    }

    /// `pi_n = pi^2 n^2 / 6`.
    pub fn pi(n: usize) -> f64 {
        core::f64::consts::PI * core::f64::consts::PI * (n as f64) * (n as f64) / 6.0
    }

    /// `rho_n` for round `n >= 1` with `arm_count = T` base arms.
    pub fn value(&self, n: usize, arm_count: usize) -> f64 {
        let inner =
            (self.horizon.max(1) as f64) * (arm_count as f64) * Self::pi(n) / self.delta;
        Float::sqrt(2.0 * Float::ln(inner))
    }
}

/// Best (input, super-arm) pair observed so far, by scalarized observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub input: Vec<f64>,
    pub selection: SelectionVector,
    pub value: f64,
}

/// One CBBO round (initial design included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CBBORunRecord {
    pub round: usize,
    pub input: Vec<f64>,
    pub selection: SelectionVector,
    /// Observed `k`-vector (selected entries).
    pub observation: Vec<f64>,
    /// `H_f y_n`.
    pub scalarized: f64,
    pub incumbent: f64,
    pub regret: Option<f64>,
    pub cumulative_regret: Option<f64>,
}

/// Super-arm search mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuperarmMode {
    Greedy,
    Exact,
}

/// Selects the next input under a fixed (incumbent) super-arm by maximizing
/// the partial UCB over the box; same search contract as
/// [`crate::tobo::select_input`].
pub fn select_input_cbbo(
    hyper: &TOGPHyper,
    data: &PartialDataset,
    domain: &InputDomain,
    scalarization: &Scalarization,
    beta: f64,
    incumbent_selection: &SelectionVector,
    search: &SearchConfig,
    halton_offset: usize,
) -> Result<Vec<f64>> {
    scalarization.validate(hyper.shape().total())?;
    if beta < 0.0 {
        return Err(invalid_err("beta must be nonnegative"));
    }
    let surrogate = PartialSurrogate::new(hyper, data)?;
    let coords = incumbent_selection.indices();
    let (x, _) = maximize_over_box(domain, search, halton_offset, |x| {
        let post = surrogate.posterior_at(x, &coords);
        let m = scalarization.apply_selected(post.mean.as_slice(), &coords);
        m + beta * Float::sqrt(post.spectral_norm())
    });
    Ok(x)
}

/// UCB objective of one subset under a full-entry posterior:
/// `H_f mu[coords] + rho || cov[coords, coords] ||^{1/2}`.
pub fn subset_objective(
    posterior: &Posterior,
    scalarization: &Scalarization,
    rho: f64,
    coords: &[usize],
) -> f64 {
    let mean: Vec<f64> = coords.iter().map(|&c| posterior.mean[c]).collect();
    let m = scalarization.apply_selected(&mean, coords);
    let cov = nalgebra::DMatrix::from_fn(coords.len(), coords.len(), |r, c| {
        posterior.cov[(coords[r], coords[c])]
    });
    m + rho * Float::sqrt(crate::linalg::spectral_norm_psd(&cov))
}

fn exact_superarm(
    posterior: &Posterior,
    scalarization: &Scalarization,
    rho: f64,
    t: usize,
    k: usize,
    guard: u128,
) -> Result<Vec<usize>> {
    let combos = binomial(t, k);
    if combos > guard {
        return Err(Error::EnumerationGuard {
            combinations: combos,
            limit: guard,
        });
    }
    // Depth-first walk over ascending index combinations (independent of the
    // iterative next-combination oracle used by the tests).
    fn recurse(
        posterior: &Posterior,
        scalarization: &Scalarization,
        rho: f64,
        t: usize,
        k: usize,
        start: usize,
        current: &mut Vec<usize>,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if current.len() == k {
            let val = subset_objective(posterior, scalarization, rho, current);
            let better = match best {
                None => true,
                Some((_, bv)) => val > *bv,
            };
            if better {
                *best = Some((current.clone(), val));
            }
            return;
        }
        let remaining = k - current.len();
        for arm in start..=(t - remaining) {
            current.push(arm);
            recurse(posterior, scalarization, rho, t, k, arm + 1, current, best);
            current.pop();
        }
    }
    let mut best = None;
    recurse(
        posterior,
        scalarization,
        rho,
        t,
        k,
        0,
        &mut Vec::with_capacity(k),
        &mut best,
    );
    Ok(best.expect("k >= 1 guarantees at least one subset").0)
}

fn greedy_superarm(
    posterior: &Posterior,
    scalarization: &Scalarization,
    rho: f64,
    t: usize,
    k: usize,
) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best_arm = None;
        let mut best_val = f64::NEG_INFINITY;
        for arm in 0..t {
            if chosen.contains(&arm) {
                continue;
            }
            let mut cand = chosen.clone();
            cand.push(arm);
            cand.sort_unstable();
            let val = subset_objective(posterior, scalarization, rho, &cand);
            if val > best_val {
                best_val = val;
                best_arm = Some(arm);
            }
        }
        chosen.push(best_arm.expect("k <= t leaves a free arm"));
        chosen.sort_unstable();
    }
    chosen
}

/// Super-arm selection from an already computed full-entry posterior.
pub fn select_superarm_from_posterior(
    posterior: &Posterior,
    scalarization: &Scalarization,
    rho: f64,
    k: usize,
    mode: SuperarmMode,
    guard: u128,
) -> Result<SelectionVector> {
    let t = posterior.mean.len();
    if k == 0 || k > t {
        return Err(invalid_err("super-arm size k must satisfy 1 <= k <= T"));
    }
    scalarization.validate(t)?;
    if k == t {
        return Ok(SelectionVector::all(t));
    }
    let coords = match mode {
        SuperarmMode::Exact => exact_superarm(posterior, scalarization, rho, t, k, guard)?,
        SuperarmMode::Greedy => greedy_superarm(posterior, scalarization, rho, t, k),
    };
    SelectionVector::from_indices(t, &coords)
}

/// Selects the super-arm at a fixed input by maximizing
/// `H_f mu + rho ||C||^{1/2}` over all size-`k` subsets, either exactly
/// (guarded enumeration) or greedily one arm at a time (ties to the lowest
/// arm index).
pub fn select_superarm(
    hyper: &TOGPHyper,
    data: &PartialDataset,
    x: &[f64],
    scalarization: &Scalarization,
    rho: f64,
    k: usize,
    mode: SuperarmMode,
    guard: u128,
) -> Result<SelectionVector> {
    let t = hyper.shape().total();
    if k == 0 || k > t {
        return Err(invalid_err("super-arm size k must satisfy 1 <= k <= T"));
    }
    scalarization.validate(t)?;
    if k == t {
        return Ok(SelectionVector::all(t));
    }
    let surrogate = PartialSurrogate::new(hyper, data)?;
    let posterior = surrogate.full_posterior(x);
    select_superarm_from_posterior(&posterior, scalarization, rho, k, mode, guard)
}

/// Fraction of the optimal super-arm recovered:
/// `|selected n optimal| / k`.
pub fn superarm_accuracy(selected: &SelectionVector, optimal: &SelectionVector) -> Result<f64> {
    if selected.len() != optimal.len() || selected.k() != optimal.k() {
        return Err(shape_err("super-arms must have equal T and k"));
    }
    let overlap = selected
        .indices()
        .iter()
        .filter(|&&i| optimal.contains(i))
        .count();
    Ok(overlap as f64 / selected.k() as f64)
}

/// Loop configuration for [`run_tocbbo`].
#[derive(Debug, Clone)]
pub struct TocbboConfig {
    pub rounds: usize,
    pub initial_design: usize,
    /// Super-arm size.
    pub k: usize,
    pub beta: BetaSchedule,
    /// `delta` for the rho schedule; the horizon is `rounds`.
    pub rho_delta: f64,
    pub scalarization: Scalarization,
    pub search: SearchConfig,
    pub fit: FitConfig,
    pub refit_every: usize,
    /// Initializations tried for the first fit (see
    /// [`crate::togp::fit_with_restarts`]); later refits warm-start.
    pub fit_restarts: usize,
    /// Maintain the prior mean at the per-entry empirical mean of the
    /// observed entries.
    pub center_mean: bool,
    pub cn_sample: usize,
    pub superarm_mode: SuperarmMode,
    pub enum_guard: u128,
    pub seed: u64,
}

impl TocbboConfig {
    pub fn new(rounds: usize, initial_design: usize, k: usize, seed: u64) -> Self {
        Self {
            rounds,
            initial_design,
            k,
            beta: BetaSchedule::Practical { c0: 1.0, c1: 2.0 },
            rho_delta: 0.1,
            scalarization: Scalarization::Sum,
            search: SearchConfig::default(),
            fit: FitConfig::default(),
            refit_every: 1,
            fit_restarts: 4,
            center_mean: true,
            cn_sample: 256,
            superarm_mode: SuperarmMode::Greedy,
            enum_guard: ENUMERATION_GUARD,
            seed,
        }
    }
}

/// Outcome of a TOCBBO run.
#[derive(Debug, Clone)]
pub struct TocbboOutcome {
    pub records: Vec<CBBORunRecord>,
    pub best_round: usize,
    pub best_input: Vec<f64>,
    pub best_selection: SelectionVector,
    pub surrogate: TOGPHyper,
    pub dataset: PartialDataset,
}

/// Per-entry empirical mean over the rounds that observed each entry
/// (entries never observed keep mean zero).
fn partial_empirical_mean(data: &PartialDataset, t: usize) -> Vec<f64> {
    let mut sum = vec![0.0f64; t];
    let mut count = vec![0usize; t];
    for (sel, obs) in data.selections().iter().zip(data.observations()) {
        for (slot, &coord) in sel.indices().iter().enumerate() {
            sum[coord] += obs[slot];
            count[coord] += 1;
        }
    }
    for (m, &c) in sum.iter_mut().zip(&count) {
        if c > 0 {
            *m /= c as f64;
        }
    }
    sum
}

/// Trace-ratio estimate under a fixed selection, for the theoretical beta
/// schedule.
pub fn estimate_trace_ratio_partial(
    hyper: &TOGPHyper,
    data: &PartialDataset,
    selection: &SelectionVector,
    domain: &InputDomain,
    sample_size: usize,
) -> Result<f64> {
    let surrogate = PartialSurrogate::new(hyper, data)?;
    let coords = selection.indices();
    let mut best = 1.0f64;
    for x in halton(sample_size, 0, domain) {
        let post = surrogate.posterior_at(&x, &coords);
        let lam = post.spectral_norm();
        if lam > 1e-12 {
            best = best.max(post.cov.trace() / lam);
        }
    }
    Ok(best)
}

/// Runs the CMAB-UCB2 loop: Latin-hypercube initial inputs with uniform
/// initial super-arms, then per round input selection under the incumbent
/// super-arm, super-arm selection at the chosen input, observation, refit,
/// and incumbent update. Records are emitted through `on_record` as they
/// complete.
pub fn run_tocbbo<P: Problem>(
    problem: &mut P,
    init: &TOGPHyper,
    config: &TocbboConfig,
    truth: Option<&TruthInfo>,
    mut on_record: impl FnMut(&CBBORunRecord),
) -> Result<TocbboOutcome> {
    init.validate()?;
    config.beta.validate()?;
    let t = init.shape().total();
    config.scalarization.validate(t)?;
    if problem.shape().total() != t {
        return Err(shape_err("problem and surrogate tensor sizes disagree"));
    }
    if config.k == 0 || config.k > t {
        return Err(invalid_err("super-arm size k must satisfy 1 <= k <= T"));
    }
    if config.refit_every == 0 {
        return Err(invalid_err("refit_every must be at least 1"));
    }
    let rho = RhoSchedule::new(config.rho_delta, config.rounds.max(1))?;
    let domain = problem.domain().clone();

    let mut records: Vec<CBBORunRecord> = Vec::new();
    let mut data = PartialDataset::empty();
    let mut incumbent: Option<Incumbent> = None;
    let mut cumulative = 0.0;
    let mut regret_alive = true;

    let observe = |problem: &mut P,
                       x: Vec<f64>,
                       selection: SelectionVector,
                       round: usize,
                       data: &mut PartialDataset,
                       incumbent: &mut Option<Incumbent>,
                       cumulative: &mut f64,
                       regret_alive: &mut bool,
                       records: &mut Vec<CBBORunRecord>,
                       on_record: &mut dyn FnMut(&CBBORunRecord)|
     -> Result<()> {
        let coords = selection.indices();
        let obs = problem.evaluate_selected(&x, &coords);
        let scalarized = config.scalarization.apply_selected(&obs, &coords);
        let is_better = incumbent.as_ref().map_or(true, |inc| scalarized > inc.value);
        if is_better {
            *incumbent = Some(Incumbent {
                input: x.clone(),
                selection: selection.clone(),
                value: scalarized,
            });
        }
        let (regret, cum) = if *regret_alive {
            match (truth, problem.evaluate_noiseless(&x)) {
                (Some(tr), Some(f)) => {
                    let val = config
                        .scalarization
                        .apply_selected(&selection.select(f.as_slice()), &coords);
                    let r = tr.value - val;
                    *cumulative += r;
                    (Some(r), Some(*cumulative))
                }
                _ => {
                    *regret_alive = false;
                    (None, None)
                }
            }
        } else {
            (None, None)
        };
        let record = CBBORunRecord {
            round,
            input: x.clone(),
            selection: selection.clone(),
            observation: obs.clone(),
            scalarized,
            incumbent: incumbent.as_ref().unwrap().value,
            regret,
            cumulative_regret: cum,
        };
        on_record(&record);
        records.push(record);
        data.push(x, selection, obs)?;
        Ok(())
    };

    // Initial design: Latin-hypercube inputs, uniform super-arms.
    let mut design_rng = stream_rng(config.seed, streams::DESIGN);
    let mut superarm_rng = stream_rng(config.seed, streams::SUPERARM);
    let design = latin_hypercube(config.initial_design, &domain, &mut design_rng);
    for (i, x) in design.into_iter().enumerate() {
        let idx = sample_subset(t, config.k, &mut superarm_rng);
        let selection = SelectionVector::from_indices(t, &idx)?;
        observe(
            problem,
            x,
            selection,
            i + 1,
            &mut data,
            &mut incumbent,
            &mut cumulative,
            &mut regret_alive,
            &mut records,
            &mut on_record,
        )?;
    }

    let mut hyper = init.clone();
    if config.rounds > 0 && data.n() > 0 {
        if config.center_mean {
            hyper.mean = partial_empirical_mean(&data, t);
        }
        let (fitted, _) = ptogp::fit_partial_with_restarts(
            &data,
            &hyper,
            &config.fit,
            config.fit_restarts,
            config.seed,
        )?;
        hyper = fitted;
    }

    for j in 1..=config.rounds {
        let incumbent_selection = match &incumbent {
            Some(inc) => inc.selection.clone(),
            // No observation yet (n0 = 0): a uniformly sampled super-arm
            // stands in for the incumbent.
            None => {
                let idx = sample_subset(t, config.k, &mut superarm_rng);
                SelectionVector::from_indices(t, &idx)?
            }
        };
        let c_n = if config.beta.needs_cn() {
            estimate_trace_ratio_partial(
                &hyper,
                &data,
                &incumbent_selection,
                &domain,
                config.cn_sample,
            )?
        } else {
            0.0
        };
        let beta = config.beta.value(j, c_n);
        let x = select_input_cbbo(
            &hyper,
            &data,
            &domain,
            &config.scalarization,
            beta,
            &incumbent_selection,
            &config.search,
            (config.initial_design + j) * 131,
        )?;
        let selection = select_superarm(
            &hyper,
            &data,
            &x,
            &config.scalarization,
            rho.value(j, t),
            config.k,
            config.superarm_mode,
            config.enum_guard,
        )?;
        observe(
            problem,
            x,
            selection,
            config.initial_design + j,
            &mut data,
            &mut incumbent,
            &mut cumulative,
            &mut regret_alive,
            &mut records,
            &mut on_record,
        )?;
        if j % config.refit_every == 0 {
            if config.center_mean {
                hyper.mean = partial_empirical_mean(&data, t);
            }
            let (fitted, _) = ptogp::fit_partial(&data, &hyper, &config.fit)?;
            hyper = fitted;
        }
    }

    let best_round = records
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.scalarized.partial_cmp(&b.scalarized).unwrap())
        .map(|(i, _)| i + 1)
        .ok_or_else(|| invalid_err("run produced no records (n0 = 0 and N = 0)"))?;
    let best = &records[best_round - 1];
    Ok(TocbboOutcome {
        best_input: best.input.clone(),
        best_selection: best.selection.clone(),
        best_round,
        records,
        surrogate: hyper,
        dataset: data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BaseKernelParam, KernelFamily, TensorKernel};
    use crate::oracle;
    use crate::tensor::{CoreTensorParam, TensorShape};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    #[test]
    fn rho_schedule_hand_values() {
        let rho = RhoSchedule::new(0.1, 10).unwrap();
        assert_abs_diff_eq!(rho.value(1, 6), 3.713389276035275, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.value(3, 6), 4.26423604764631, epsilon = 1e-12);
    }

    #[test]
    fn rho_is_monotone_increasing() {
        let rho = RhoSchedule::new(0.05, 40).unwrap();
        let mut prev = 0.0;
        for n in 1..=40 {
            let v = rho.value(n, 8);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn pi_rule_partial_sums_approach_one() {
        let mut sum = 0.0;
        for n in 1..=1_000_000usize {
            sum += 1.0 / RhoSchedule::pi(n);
        }
        assert!(sum >= 0.999, "partial sum {sum}");
        assert!(sum <= 1.0 + 1e-9);
    }

    #[test]
    fn accuracy_identical_disjoint_partial() {
        let a = SelectionVector::from_indices(6, &[0, 2, 4]).unwrap();
        let b = SelectionVector::from_indices(6, &[1, 3, 5]).unwrap();
        let c = SelectionVector::from_indices(6, &[0, 2, 5]).unwrap();
        assert_abs_diff_eq!(superarm_accuracy(&a, &a).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(superarm_accuracy(&a, &b).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            superarm_accuracy(&a, &c).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn accuracy_rejects_mismatched_k() {
        let a = SelectionVector::from_indices(4, &[0]).unwrap();
        let b = SelectionVector::from_indices(4, &[0, 1]).unwrap();
        assert!(superarm_accuracy(&a, &b).is_err());
    }

    fn hyper(dims: &[usize], d: usize, seed: u64) -> TOGPHyper {
        let sh = TensorShape::new(dims).unwrap();
        let mut rng = stream_rng(seed, streams::PROBLEM);
        let entries: Vec<f64> = (0..sh.total()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel = TensorKernel::Separable {
            shape: sh,
            core: CoreTensorParam::Full { entries },
            base: BaseKernelParam::isotropic(KernelFamily::Matern52, d, 0.5).unwrap(),
        };
        TOGPHyper::new(kernel, 1.0, 0.05).unwrap()
    }

    fn random_partial(h: &TOGPHyper, n: usize, d: usize, k: usize, seed: u64) -> PartialDataset {
        let mut rng = stream_rng(seed, streams::NOISE);
        let t = h.shape().total();
        let mut data = PartialDataset::empty();
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let idx = sample_subset(t, k, &mut rng);
            let sel = SelectionVector::from_indices(t, &idx).unwrap();
            let y: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            data.push(x, sel, y).unwrap();
        }
        data
    }

    #[test]
    fn superarm_k_equals_t_is_all_ones() {
        let h = hyper(&[2, 2], 1, 1);
        let data = random_partial(&h, 3, 1, 4, 2);
        for mode in [SuperarmMode::Greedy, SuperarmMode::Exact] {
            let sel = select_superarm(
                &h,
                &data,
                &[0.5],
                &Scalarization::Sum,
                1.0,
                4,
                mode,
                ENUMERATION_GUARD,
            )
            .unwrap();
            assert_eq!(sel, SelectionVector::all(4));
        }
    }

    #[test]
    fn superarm_diagonal_zero_rho_is_topk_means() {
        // With a diagonal posterior covariance and rho = 0 the objective is
        // additive, so both modes pick the k largest posterior means.
        let post = Posterior {
            mean: DVector::from_vec(vec![0.1, 2.0, -1.0, 1.5, 0.3]),
            cov: DMatrix::identity(5, 5),
        };
        let exact = exact_superarm(&post, &Scalarization::Sum, 0.0, 5, 2, 1000).unwrap();
        let greedy = greedy_superarm(&post, &Scalarization::Sum, 0.0, 5, 2);
        assert_eq!(exact, vec![1, 3]);
        assert_eq!(greedy, vec![1, 3]);
    }

    #[test]
    fn exact_matches_independent_enumeration_oracle() {
        let mut rng = stream_rng(3, streams::PROBLEM);
        for _ in 0..10 {
            let t = 8;
            let k = 3;
            let mean = DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0));
            // Random PSD covariance.
            let raw = DMatrix::from_fn(t, t, |_, _| rng.random_range(-1.0..1.0));
            let cov = &raw * raw.transpose();
            let post = Posterior {
                mean: mean.clone(),
                cov: cov.clone(),
            };
            let s = Scalarization::Sum;
            let rho = 1.0;
            let ours = exact_superarm(&post, &s, rho, t, k, ENUMERATION_GUARD).unwrap();
            let (oracle_best, oracle_val) =
                oracle::best_subset_by_enumeration(t, k, ENUMERATION_GUARD, |idx| {
                    subset_objective(&post, &s, rho, idx)
                })
                .unwrap();
            let ours_val = subset_objective(&post, &s, rho, &ours);
            assert_abs_diff_eq!(ours_val, oracle_val, epsilon = 1e-12);
            assert_eq!(ours, oracle_best);
        }
    }

    #[test]
    fn greedy_equals_exact_on_diagonal_covariance() {
        let mut rng = stream_rng(4, streams::PROBLEM);
        for trial in 0..30 {
            let t = 3 + (trial % 8);
            let k = 1 + trial % t.min(4);
            let mean = DVector::from_fn(t, |_, _| rng.random_range(-2.0..2.0));
            let diag = DMatrix::from_fn(t, t, |r, c| {
                if r == c {
                    rng.random_range(0.0..3.0)
                } else {
                    0.0
                }
            });
            let post = Posterior { mean, cov: diag };
            for s in [
                Scalarization::Sum,
                Scalarization::WeightedSum {
                    weights: (0..t).map(|i| 0.2 + i as f64 * 0.3).collect(),
                },
            ] {
                let rho = 0.8;
                let greedy = greedy_superarm(&post, &s, rho, t, k);
                let exact = exact_superarm(&post, &s, rho, t, k, ENUMERATION_GUARD).unwrap();
                let gv = subset_objective(&post, &s, rho, &greedy);
                let ev = subset_objective(&post, &s, rho, &exact);
                assert_abs_diff_eq!(gv, ev, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn exact_mode_over_guard_instructs_greedy() {
        let h = hyper(&[5, 5], 1, 5);
        let data = random_partial(&h, 2, 1, 10, 6);
        let err = select_superarm(
            &h,
            &data,
            &[0.5],
            &Scalarization::Sum,
            1.0,
            10,
            SuperarmMode::Exact,
            100,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EnumerationGuard { .. }));
    }

    #[test]
    fn select_input_cbbo_finds_mean_peak() {
        let h = hyper(&[2], 1, 7);
        let mut data = PartialDataset::empty();
        let sel = SelectionVector::from_indices(2, &[0]).unwrap();
        for i in 0..10 {
            let x = i as f64 / 9.0;
            let y = -(x - 0.62) * (x - 0.62);
            data.push(vec![x], sel.clone(), vec![y]).unwrap();
        }
        let got = select_input_cbbo(
            &h,
            &data,
            &InputDomain::unit(1),
            &Scalarization::Sum,
            0.0,
            &sel,
            &SearchConfig::default(),
            0,
        )
        .unwrap();
        let surrogate = PartialSurrogate::new(&h, &data).unwrap();
        let coords = sel.indices();
        let (oracle_x, _) = oracle::grid_maximize(&InputDomain::unit(1), 10_000, |x| {
            surrogate.posterior_at(x, &coords).mean[0]
        });
        assert!((got[0] - oracle_x[0]).abs() < 1e-3);
    }

    #[test]
    fn zero_data_select_input_stays_in_box() {
        let h = hyper(&[2, 2], 2, 8);
        let domain = InputDomain::new(&[0.0, -2.0], &[1.0, 2.0]).unwrap();
        let sel = SelectionVector::from_indices(4, &[1, 2]).unwrap();
        let x = select_input_cbbo(
            &h,
            &PartialDataset::empty(),
            &domain,
            &Scalarization::Sum,
            2.0,
            &sel,
            &SearchConfig::default(),
            0,
        )
        .unwrap();
        assert!(domain.contains(&x));
    }

    struct TinyProblem {
        domain: InputDomain,
        shape: TensorShape,
        noise: rand_chacha::ChaCha12Rng,
    }

    impl Problem for TinyProblem {
        fn domain(&self) -> &InputDomain {
            &self.domain
        }
        fn shape(&self) -> &TensorShape {
            &self.shape
        }
        fn evaluate(&mut self, x: &[f64]) -> crate::tensor::DenseTensor {
            let mut f = self.evaluate_noiseless(x).unwrap();
            let e = crate::sample::standard_normals(2, &mut self.noise);
            for (i, ei) in e.iter().enumerate() {
                *f.get_mut(&[i]) += 0.05 * ei;
            }
            f
        }
        fn evaluate_noiseless(&self, x: &[f64]) -> Option<crate::tensor::DenseTensor> {
            let v = vec![(4.0 * x[0]).sin(), -(x[0] - 0.4) * (x[0] - 0.4)];
            Some(crate::tensor::DenseTensor::from_vec(self.shape.clone(), v).unwrap())
        }
    }

    #[test]
    fn zero_rounds_is_initial_design_only() {
        let mut problem = TinyProblem {
            domain: InputDomain::unit(1),
            shape: TensorShape::new(&[2]).unwrap(),
            noise: stream_rng(9, streams::NOISE),
        };
        let h = hyper(&[2], 1, 10);
        let cfg = TocbboConfig::new(0, 4, 1, 33);
        let out = run_tocbbo(&mut problem, &h, &cfg, None, |_| {}).unwrap();
        assert_eq!(out.records.len(), 4);
        for r in &out.records {
            assert_eq!(r.selection.k(), 1);
            assert_eq!(r.observation.len(), 1);
        }
        // Incumbent equals the running max of scalarized observations.
        let mut best = f64::NEG_INFINITY;
        for r in &out.records {
            best = best.max(r.scalarized);
            assert_abs_diff_eq!(r.incumbent, best, epsilon = 1e-15);
        }
    }

    #[test]
    fn loop_runs_and_tracks_incumbent() {
        let mut problem = TinyProblem {
            domain: InputDomain::unit(1),
            shape: TensorShape::new(&[2]).unwrap(),
            noise: stream_rng(11, streams::NOISE),
        };
        let h = hyper(&[2], 1, 12);
        let mut cfg = TocbboConfig::new(6, 4, 1, 13);
        cfg.fit.lbfgs.max_iters = 30;
        let out = run_tocbbo(&mut problem, &h, &cfg, None, |_| {}).unwrap();
        assert_eq!(out.records.len(), 10);
        let mut best = f64::NEG_INFINITY;
        for r in &out.records {
            best = best.max(r.scalarized);
            assert_abs_diff_eq!(r.incumbent, best, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(
            out.records[out.best_round - 1].scalarized,
            best,
            epsilon = 1e-15
        );
    }
}
