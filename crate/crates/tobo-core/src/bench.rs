//! Synthetic tensor-output benchmark problems, ground-truth optimum oracles,
//! and the evaluation metrics reported by the CLI.
//!
//! The synthetic family contracts a random latent tensor `B` (entries i.i.d.
//! `U(0, 1)`) along every mode: deterministic matrices
//! `U_l[i, j] = l i cos(i j l / 2) + sin(l i)` (1-based indices) for the
//! leading modes, and the input-dependent factor
//! `g(x) = (sin(5 x), cos(x))` of shape `d x 2` for the last mode. Inputs
//! live in `[0, 1]^d` with `d` equal to the last latent dimension, so the
//! last output mode always has size two.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_err, shape_err};
use crate::kernels::InputDomain;
use crate::oracle;
use crate::ptogp::SelectionVector;
use crate::sample::{standard_normals, stream_rng, streams};
use crate::tensor::{DenseTensor, TensorShape};
use crate::tobo::{Problem, Scalarization};
use crate::togp::{self, Dataset, TOGPHyper};
use crate::Result;

/// Parameters of one synthetic problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Output mode sizes `(T_1, ..., T_m)`; the last must be 2.
    pub output_dims: Vec<usize>,
    /// Latent mode sizes `(P_1, ..., P_m)`; the last equals the input
    /// dimension `d`.
    pub latent_dims: Vec<usize>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The three stock settings: `1`, `2`, `3`.
    pub fn setting(which: usize, seed: u64) -> Result<Self> {
        let (output_dims, latent_dims) = match which {
            1 => (vec![2, 4, 2], vec![3, 3, 3]),
            2 => (vec![3, 2], vec![3, 2]),
            3 => (vec![4, 5, 2], vec![3, 3, 3]),
            other => return Err(invalid_err(format!("unknown setting {other}"))),
        };
        Ok(Self {
            output_dims,
            latent_dims,
            noise_std: 0.1,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.output_dims.len();
        if m == 0 || self.latent_dims.len() != m {
            return Err(shape_err("output and latent dims must be nonempty and equal length"));
        }
        if self.output_dims[m - 1] != 2 {
            return Err(shape_err("the last output mode must have size 2"));
        }
        if self.output_dims.iter().chain(&self.latent_dims).any(|&v| v == 0) {
            return Err(shape_err("all dims must be at least 1"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid_err("noise std must be nonnegative"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        *self.latent_dims.last().unwrap()
    }

    pub fn output_shape(&self) -> TensorShape {
        TensorShape::new(&self.output_dims).unwrap()
    }

    /// The stock super-arm size `k = floor(T / 6)`, at least 1.
    pub fn default_k(&self) -> usize {
        (self.output_shape().total() / 6).max(1)
    }
}

/// Contracts `mode` of `t` with a matrix given entrywise as
/// `entry(row, col)`, where `row` indexes the old mode size and `col` the
/// new one.
fn mode_contract(
    t: &DenseTensor,
    mode: usize,
    new_size: usize,
    entry: impl Fn(usize, usize) -> f64,
) -> DenseTensor {
    let mut dims = t.shape().dims().to_vec();
    let old_size = dims[mode];
    dims[mode] = new_size;
    let out_shape = TensorShape::new(&dims).unwrap();
    DenseTensor::from_fn(out_shape, |idx| {
        let mut src = idx.to_vec();
        let mut acc = 0.0;
        for i in 0..old_size {
            src[mode] = i;
            acc += t.get(&src) * entry(i, idx[mode]);
        }
        acc
    })
}

/// A synthetic problem instance with its own seeded noise stream.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    spec: SyntheticSpec,
    domain: InputDomain,
    shape: TensorShape,
    /// `B` contracted through every input-independent mode: shape
    /// `T_1 x ... x T_{m-1} x d`.
    partial: DenseTensor,
    noise: ChaCha12Rng,
}

/// Builds the synthetic problem: `B` is drawn from the spec seed; the noise
/// stream is also derived from it (reproducible given the spec).
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticProblem> {
    spec.validate()?;
    let m = spec.output_dims.len();
    let latent_shape = TensorShape::new(&spec.latent_dims)?;
    let mut b_rng = stream_rng(spec.seed, streams::PROBLEM);
    let b_entries: Vec<f64> = (0..latent_shape.total())
        .map(|_| b_rng.random_range(0.0..1.0))
        .collect();
    let mut partial = DenseTensor::from_vec(latent_shape, b_entries)?;
    // Contract each leading mode with U_l^T (1-based formula indices).
    for l in 0..m - 1 {
        let lf = (l + 1) as f64;
        partial = mode_contract(&partial, l, spec.output_dims[l], |i, j| {
            let (i1, j1) = ((i + 1) as f64, (j + 1) as f64);
            lf * i1 * Float::cos(i1 * j1 * lf / 2.0) + Float::sin(lf * i1)
        });
    }
    Ok(SyntheticProblem {
        domain: InputDomain::unit(spec.input_dim()),
        shape: spec.output_shape(),
        partial,
        noise: stream_rng(spec.seed, streams::NOISE),
        spec: spec.clone(),
    })
}

impl SyntheticProblem {
    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }
}

impl Problem for SyntheticProblem {
    fn domain(&self) -> &InputDomain {
        &self.domain
    }

    fn shape(&self) -> &TensorShape {
        &self.shape
    }

    fn evaluate(&mut self, x: &[f64]) -> DenseTensor {
        let mut f = self.evaluate_noiseless(x).expect("synthetic is noiseless-capable");
        if self.spec.noise_std > 0.0 {
            let eps = standard_normals(self.shape.total(), &mut self.noise);
            let data = f.as_slice().to_vec();
            let noisy: Vec<f64> = data
                .iter()
                .zip(&eps)
                .map(|(v, e)| v + self.spec.noise_std * e)
                .collect();
            f = DenseTensor::from_vec(self.shape.clone(), noisy).unwrap();
        }
        f
    }

    fn evaluate_noiseless(&self, x: &[f64]) -> Option<DenseTensor> {
        assert_eq!(x.len(), self.spec.input_dim(), "input dimension mismatch");
        let m = self.spec.output_dims.len();
        // g(x) has column 0 = sin(5 x) and column 1 = cos(x), elementwise.
        let out = mode_contract(&self.partial, m - 1, 2, |i, j| {
            if j == 0 {
                Float::sin(5.0 * x[i])
            } else {
                Float::cos(x[i])
            }
        });
        Some(out)
    }
}

/// Ground-truth optimum of the scalarized noiseless objective: a dense grid
/// for `d <= 2` (`400^d` points), multi-start pattern search (512 starts)
/// otherwise. An oracle, not exact.
pub fn true_optimum<P: Problem>(
    problem: &P,
    scalarization: &Scalarization,
) -> Result<(Vec<f64>, f64)> {
    scalarization.validate(problem.shape().total())?;
    let objective = |x: &[f64]| -> f64 {
        let f = problem
            .evaluate_noiseless(x)
            .expect("true_optimum needs noiseless access");
        scalarization.apply(f.as_slice()).unwrap_or(f64::NEG_INFINITY)
    };
    let domain = problem.domain();
    let found = if domain.dim() <= 2 {
        oracle::grid_maximize(domain, 400, objective)
    } else {
        oracle::multistart_maximize(domain, 512, objective)
    };
    Ok(found)
}

/// Ground-truth optimum of the combinatorial objective: at every evaluated
/// input the best size-`k` super-arm is found by exact enumeration (guarded).
pub fn true_optimum_cbbo<P: Problem>(
    problem: &P,
    scalarization: &Scalarization,
    k: usize,
    guard: u128,
) -> Result<(Vec<f64>, SelectionVector, f64)> {
    let t = problem.shape().total();
    if k == 0 || k > t {
        return Err(invalid_err("super-arm size k must satisfy 1 <= k <= T"));
    }
    scalarization.validate(t)?;
    if oracle::binomial(t, k) > guard {
        return Err(crate::Error::EnumerationGuard {
            combinations: oracle::binomial(t, k),
            limit: guard,
        });
    }
    let best_at = |x: &[f64]| -> (Vec<usize>, f64) {
        let f = problem
            .evaluate_noiseless(x)
            .expect("true_optimum needs noiseless access");
        let vals = f.as_slice();
        oracle::best_subset_by_enumeration(t, k, guard, |idx| {
            let selected: Vec<f64> = idx.iter().map(|&c| vals[c]).collect();
            scalarization.apply_selected(&selected, idx)
        })
        .expect("guard checked above")
    };
    let objective = |x: &[f64]| best_at(x).1;
    let domain = problem.domain();
    let (x_star, value) = if domain.dim() <= 2 {
        oracle::grid_maximize(domain, 400, objective)
    } else {
        oracle::multistart_maximize(domain, 512, objective)
    };
    let (idx, _) = best_at(&x_star);
    Ok((x_star, SelectionVector::from_indices(t, &idx)?, value))
}

/// Metrics of one experiment, surrogate-side and optimization-side.
/// Fields are `None` when the corresponding ingredient was unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Negative log marginal likelihood of the test data (internally
    /// consistent form `S = sigma^2 K + tau^2 I`).
    pub nll: Option<f64>,
    /// Mean relative prediction error on the test set.
    pub mae: Option<f64>,
    /// Largest posterior-covariance spectral norm over the test points.
    pub cov_norm: Option<f64>,
    /// `||x* - x_rec||^2`.
    pub mse_x: Option<f64>,
    /// `||(f* - f_rec) / f*||`.
    pub mae_y: Option<f64>,
    /// Super-arm overlap fraction (CBBO only).
    pub acc: Option<f64>,
    /// Entries dropped from relative errors because `|denominator| < 1e-12`.
    pub excluded_entries: usize,
}

impl MetricReport {
    pub fn empty() -> Self {
        Self {
            nll: None,
            mae: None,
            cov_norm: None,
            mse_x: None,
            mae_y: None,
            acc: None,
            excluded_entries: 0,
        }
    }
}

/// Squared distance between the true and recommended inputs.
pub fn mse_x(x_star: &[f64], x_rec: &[f64]) -> f64 {
    x_star
        .iter()
        .zip(x_rec)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Relative l2 error `||(truth - found) / truth||`, skipping entries with
/// `|truth| < 1e-12`; returns the error and the skip count.
pub fn relative_l2(truth: &[f64], found: &[f64]) -> (f64, usize) {
    let mut sq = 0.0;
    let mut skipped = 0;
    for (a, b) in truth.iter().zip(found) {
        if Float::abs(*a) < 1e-12 {
            skipped += 1;
        } else {
            let r = (a - b) / a;
            sq += r * r;
        }
    }
    (Float::sqrt(sq), skipped)
}

/// Surrogate-side metrics: test-set NLL, mean relative prediction error of
/// the posterior mean (conditioned on `train`), and the worst posterior
/// covariance norm over the test inputs.
pub fn surrogate_metrics(
    hyper: &TOGPHyper,
    train: &Dataset,
    test: &Dataset,
) -> Result<MetricReport> {
    if test.n() == 0 {
        return Err(invalid_err("surrogate metrics need a nonempty test set"));
    }
    let nll = -togp::log_marginal_likelihood(hyper, test)?;
    let mut preds = Vec::with_capacity(test.n());
    let mut cov_norm = 0.0f64;
    for x in test.inputs() {
        let post = togp::posterior(hyper, train, x)?;
        preds.push(post.mean.iter().copied().collect::<Vec<f64>>());
        cov_norm = cov_norm.max(post.spectral_norm());
    }
    let mut excluded = 0;
    let mut total = 0.0;
    for (y, yhat) in test.observations().iter().zip(&preds) {
        let (err, skip) = relative_l2(y, yhat);
        total += err;
        excluded += skip;
    }
    Ok(MetricReport {
        nll: Some(nll),
        mae: Some(total / test.n() as f64),
        cov_norm: Some(cov_norm),
        mse_x: None,
        mae_y: None,
        acc: None,
        excluded_entries: excluded,
    })
}

/// Optimization-side metrics against the ground truth. For CBBO runs pass
/// the selections; `f_star`/`f_rec` then hold the selected entries at the
/// respective points (both noiseless).
pub fn optimization_metrics(
    x_star: &[f64],
    f_star: &[f64],
    x_rec: &[f64],
    f_rec: &[f64],
    selection_star: Option<&SelectionVector>,
    selection_rec: Option<&SelectionVector>,
) -> Result<MetricReport> {
    if x_star.len() != x_rec.len() || f_star.len() != f_rec.len() {
        return Err(shape_err("truth and recommendation dimensions disagree"));
    }
    let (mae_y, excluded) = relative_l2(f_star, f_rec);
    let acc = match (selection_star, selection_rec) {
        (Some(a), Some(b)) => Some(crate::tocbbo::superarm_accuracy(b, a)?),
        _ => None,
    };
    Ok(MetricReport {
        nll: None,
        mae: None,
        cov_norm: None,
        mse_x: Some(mse_x(x_star, x_rec)),
        mae_y: Some(mae_y),
        acc,
        excluded_entries: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn setting_two_shape_and_k() {
        let spec = SyntheticSpec::setting(2, 0).unwrap();
        assert_eq!(spec.output_dims, vec![3, 2]);
        assert_eq!(spec.latent_dims, vec![3, 2]);
        assert_eq!(spec.input_dim(), 2);
        assert_eq!(spec.output_shape().total(), 6);
        assert_eq!(spec.default_k(), 1);
    }

    #[test]
    fn zero_input_kills_the_sine_slice() {
        let spec = SyntheticSpec::setting(2, 5).unwrap();
        let problem = make_synthetic(&spec).unwrap();
        let f = problem.evaluate_noiseless(&[0.0, 0.0]).unwrap();
        // Last mode index 0 is the sin(5x) column: identically zero at x=0.
        // Last mode index 1 is the cos column: the plain latent sum.
        for j in 0..3 {
            assert_abs_diff_eq!(f.get(&[j, 0]), 0.0, epsilon = 1e-14);
            let expect: f64 = (0..2).map(|i| problem.partial.get(&[j, i])).sum();
            assert_abs_diff_eq!(f.get(&[j, 1]), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_matches_nested_loop_oracle() {
        for which in [1, 2, 3] {
            let spec = SyntheticSpec::setting(which, 7).unwrap();
            let problem = make_synthetic(&spec).unwrap();
            let d = spec.input_dim();
            let x: Vec<f64> = (0..d).map(|i| 0.1 + 0.17 * i as f64).collect();
            let fast = problem.evaluate_noiseless(&x).unwrap();

            // Independent nested-loop contraction straight from the factors.
            let m = spec.output_dims.len();
            let latent = TensorShape::new(&spec.latent_dims).unwrap();
            let mut b_rng = stream_rng(spec.seed, streams::PROBLEM);
            let b: Vec<f64> = (0..latent.total())
                .map(|_| b_rng.random_range(0.0..1.0))
                .collect();
            let u = |l: usize, i: usize, j: usize| -> f64 {
                let lf = (l + 1) as f64;
                let (i1, j1) = ((i + 1) as f64, (j + 1) as f64);
                lf * i1 * (i1 * j1 * lf / 2.0).cos() + (lf * i1).sin()
            };
            let g = |i: usize, j: usize| -> f64 {
                if j == 0 {
                    (5.0 * x[i]).sin()
                } else {
                    x[i].cos()
                }
            };
            let out_shape = spec.output_shape();
            for out_idx in out_shape.indices() {
                let mut acc = 0.0;
                for lat_idx in latent.indices() {
                    let mut term = b[latent.offset(&lat_idx)];
                    for l in 0..m - 1 {
                        term *= u(l, lat_idx[l], out_idx[l]);
                    }
                    term *= g(lat_idx[m - 1], out_idx[m - 1]);
                    acc += term;
                }
                let got = fast.get(&out_idx);
                assert!(
                    (got - acc).abs() < 1e-12,
                    "setting {which} idx {out_idx:?}: {got} vs {acc}"
                );
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let spec = SyntheticSpec::setting(1, 99).unwrap();
        let p1 = make_synthetic(&spec).unwrap();
        let p2 = make_synthetic(&spec).unwrap();
        assert_eq!(p1.partial.as_slice(), p2.partial.as_slice());
        let x = vec![0.3, 0.6, 0.9];
        assert_eq!(
            p1.evaluate_noiseless(&x).unwrap().as_slice(),
            p2.evaluate_noiseless(&x).unwrap().as_slice()
        );
        let mut p1 = p1;
        let mut p2 = p2;
        assert_eq!(p1.evaluate(&x).as_slice(), p2.evaluate(&x).as_slice());
    }

    struct Scalar1d<F: Fn(f64) -> f64> {
        domain: InputDomain,
        shape: TensorShape,
        f: F,
    }

    impl<F: Fn(f64) -> f64> Problem for Scalar1d<F> {
        fn domain(&self) -> &InputDomain {
            &self.domain
        }
        fn shape(&self) -> &TensorShape {
            &self.shape
        }
        fn evaluate(&mut self, x: &[f64]) -> DenseTensor {
            self.evaluate_noiseless(x).unwrap()
        }
        fn evaluate_noiseless(&self, x: &[f64]) -> Option<DenseTensor> {
            Some(DenseTensor::from_vec(self.shape.clone(), vec![(self.f)(x[0])]).unwrap())
        }
    }

    #[test]
    fn optimum_of_shifted_quadratic() {
        let problem = Scalar1d {
            domain: InputDomain::unit(1),
            shape: TensorShape::new(&[1]).unwrap(),
            f: |x| -(x - 0.3) * (x - 0.3),
        };
        let (x, _) = true_optimum(&problem, &Scalarization::Sum).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn optimum_of_linear_function_is_a_vertex() {
        let problem = Scalar1d {
            domain: InputDomain::new(&[-1.0], &[2.0]).unwrap(),
            shape: TensorShape::new(&[1]).unwrap(),
            f: |x| 3.0 * x + 1.0,
        };
        let (x, v) = true_optimum(&problem, &Scalarization::Sum).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 7.0, epsilon = 1e-9);
    }

    #[test]
    fn optimum_is_stable_across_search_configurations() {
        let spec = SyntheticSpec::setting(2, 3).unwrap();
        let problem = make_synthetic(&spec).unwrap();
        let s = Scalarization::Sum;
        let (_, v_grid) = true_optimum(&problem, &s).unwrap();
        // Independent configuration: pattern search instead of the grid.
        let objective = |x: &[f64]| {
            let f = problem.evaluate_noiseless(x).unwrap();
            s.apply(f.as_slice()).unwrap()
        };
        let (_, v_ms) = oracle::multistart_maximize(problem.domain(), 512, objective);
        assert!(
            (v_grid - v_ms).abs() < 1e-4,
            "grid {v_grid} vs multistart {v_ms}"
        );
    }

    #[test]
    fn cbbo_optimum_selects_best_entries() {
        let spec = SyntheticSpec::setting(2, 11).unwrap();
        let problem = make_synthetic(&spec).unwrap();
        let (x, sel, value) =
            true_optimum_cbbo(&problem, &Scalarization::Sum, 2, 1_000_000).unwrap();
        // At the returned input, the selected pair must be the top-2 entries.
        let f = problem.evaluate_noiseless(&x).unwrap();
        let mut vals: Vec<(usize, f64)> =
            f.as_slice().iter().copied().enumerate().collect();
        vals.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let top2: Vec<usize> = {
            let mut v = vec![vals[0].0, vals[1].0];
            v.sort_unstable();
            v
        };
        assert_eq!(sel.indices(), top2);
        assert_abs_diff_eq!(value, vals[0].1 + vals[1].1, epsilon = 1e-12);
    }

    #[test]
    fn perfect_recommendation_scores_perfectly() {
        let report = optimization_metrics(
            &[0.2, 0.8],
            &[1.0, 2.0],
            &[0.2, 0.8],
            &[1.0, 2.0],
            Some(&SelectionVector::from_indices(4, &[1, 2]).unwrap()),
            Some(&SelectionVector::from_indices(4, &[1, 2]).unwrap()),
        )
        .unwrap();
        assert_abs_diff_eq!(report.mse_x.unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.mae_y.unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.acc.unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn relative_error_formula() {
        let report =
            optimization_metrics(&[0.0], &[2.0, 2.0], &[0.0], &[1.0, 1.0], None, None).unwrap();
        assert_abs_diff_eq!(report.mae_y.unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert!((report.mae_y.unwrap() - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn near_zero_denominators_are_excluded_and_counted() {
        let (err, skipped) = relative_l2(&[0.0, 2.0], &[5.0, 1.0]);
        assert_eq!(skipped, 1);
        assert_abs_diff_eq!(err, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fitted_surrogate_beats_init_nll() {
        use crate::kernels::{BaseKernelParam, KernelFamily, TensorKernel};
        use crate::tensor::CoreTensorParam;
        let spec = SyntheticSpec::setting(2, 21).unwrap();
        let mut problem = make_synthetic(&spec).unwrap();
        let d = spec.input_dim();
        let mut design_rng = stream_rng(5, streams::DESIGN);
        let train_x = crate::sample::latin_hypercube(10 * d, problem.domain(), &mut design_rng);
        let test_x = crate::sample::latin_hypercube(5 * d, problem.domain(), &mut design_rng);
        let observe = |problem: &mut SyntheticProblem, xs: &[Vec<f64>]| -> Dataset {
            let obs: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| problem.evaluate(x).as_slice().to_vec())
                .collect();
            Dataset::new(xs.to_vec(), obs).unwrap()
        };
        let train = observe(&mut problem, &train_x);
        let test = observe(&mut problem, &test_x);
        let t = spec.output_shape().total();
        let init = TOGPHyper::new(
            TensorKernel::Separable {
                shape: spec.output_shape(),
                core: CoreTensorParam::Full {
                    entries: vec![1.0 / (t as f64).sqrt(); t],
                },
                base: BaseKernelParam::isotropic(KernelFamily::Matern52, d, 0.3).unwrap(),
            },
            1.0,
            0.05,
        )
        .unwrap();
        let (fitted, _) = togp::fit(&train, &init, &Default::default()).unwrap();
        let before = surrogate_metrics(&init, &train, &test).unwrap();
        let after = surrogate_metrics(&fitted, &train, &test).unwrap();
        assert!(
            after.nll.unwrap() < before.nll.unwrap(),
            "fitted NLL {} not below init NLL {}",
            after.nll.unwrap(),
            before.nll.unwrap()
        );
    }
}
