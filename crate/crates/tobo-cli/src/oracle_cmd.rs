//! The `oracle` verb: brute-force reference computations exposed on the
//! command line (joint-Gaussian conditioning check, super-arm enumeration,
//! ground-truth optimum search). The test suite and acceptance checks drive
//! the same code through the library.

use anyhow::bail;
use serde::Serialize;

use rand::Rng;
use tobo_core::bench;
use tobo_core::kernels::{BaseKernelParam, KernelFamily, TensorKernel};
use tobo_core::oracle;
use tobo_core::ptogp::{self, PartialDataset, SelectionVector};
use tobo_core::sample::{sample_subset, stream_rng, streams};
use tobo_core::tensor::{CoreTensorParam, TensorShape};
use tobo_core::tobo::Problem;
use tobo_core::togp::{self, Dataset, TOGPHyper};

use crate::config::{ExperimentConfig, Task};
use crate::runner::{build_scalarization, build_synthetic};

/// Result of the conditioning self-check.
#[derive(Debug, Serialize)]
pub struct ConditioningReport {
    pub trials: usize,
    pub max_mean_error: f64,
    pub max_cov_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the TOGP and PTOGP posteriors against dense joint-Gaussian
/// conditioning on random instances (n <= 5, T <= 8, k <= T).
pub fn conditioning_check(trials: usize, seed: u64) -> anyhow::Result<ConditioningReport> {
    let mut rng = stream_rng(seed, streams::PROBLEM);
    let mut max_mean = 0.0f64;
    let mut max_cov = 0.0f64;
    for trial in 0..trials {
        let dims: Vec<usize> = match trial % 3 {
            0 => vec![2, 2],
            1 => vec![2, 3],
            _ => vec![2, 2, 2],
        };
        let shape = TensorShape::new(&dims)?;
        let t = shape.total();
        let d = 1 + trial % 2;
        let n = 1 + trial % 5;
        let entries: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel = TensorKernel::Separable {
            shape: shape.clone(),
            core: CoreTensorParam::Full { entries },
            base: BaseKernelParam::isotropic(
                KernelFamily::Matern52,
                d,
                rng.random_range(0.3..1.0),
            )?,
        };
        let hyper = TOGPHyper::new(kernel, rng.random_range(0.5..2.0), rng.random_range(0.01..0.2))?;
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();

        // Fully observed comparison.
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = Dataset::new(inputs.clone(), obs.clone())?;
        let post = togp::posterior(&hyper, &data, &x)?;
        let full: Vec<usize> = (0..t).collect();
        let sels: Vec<Vec<usize>> = (0..n).map(|_| full.clone()).collect();
        let stacked: Vec<f64> = obs.iter().flatten().copied().collect();
        let (mean, cov) =
            oracle::joint_conditioning(&hyper, &inputs, &sels, &stacked, &x, &full)?;
        max_mean = max_mean.max((post.mean - mean).abs().max());
        max_cov = max_cov.max((post.cov - cov).abs().max());

        // Partially observed comparison.
        let k = 1 + trial % t;
        let mut pdata = PartialDataset::empty();
        let mut plists = Vec::new();
        for xi in &inputs {
            let idx = sample_subset(t, k, &mut rng);
            let sel = SelectionVector::from_indices(t, &idx)?;
            let y: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            plists.push(idx);
            pdata.push(xi.clone(), sel, y)?;
        }
        let qsel = sample_subset(t, k, &mut rng);
        let q = SelectionVector::from_indices(t, &qsel)?;
        let ppost = ptogp::partial_posterior(&hyper, &pdata, &x, &q)?;
        let (pmean, pcov) = oracle::joint_conditioning(
            &hyper,
            &inputs,
            &plists,
            &pdata.stacked(),
            &x,
            &qsel,
        )?;
        max_mean = max_mean.max((ppost.mean - pmean).abs().max());
        max_cov = max_cov.max((ppost.cov - pcov).abs().max());
    }
    let tolerance = 1e-8;
    Ok(ConditioningReport {
        trials,
        max_mean_error: max_mean,
        max_cov_error: max_cov,
        tolerance,
        pass: max_mean < tolerance && max_cov < tolerance,
    })
}

#[derive(Debug, Serialize)]
pub struct OptimumReport {
    pub x_star: Vec<f64>,
    pub lambda_star: Option<String>,
    pub value: f64,
}

/// Ground-truth optimum of the configured problem (first seed's instance).
pub fn optimum(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<OptimumReport> {
    let resolved = cfg.resolve()?;
    let problem = build_synthetic(&resolved, seed)?;
    let scalarization = build_scalarization(&resolved, resolved.tensor_total());
    if resolved.task == Task::Cbbo {
        let k = resolved.loop_config.k.expect("resolved");
        let (x, lambda, value) = bench::true_optimum_cbbo(
            &problem,
            &scalarization,
            k,
            tobo_core::tocbbo::ENUMERATION_GUARD,
        )?;
        Ok(OptimumReport {
            x_star: x,
            lambda_star: Some(lambda.bitstring()),
            value,
        })
    } else {
        let (x, value) = bench::true_optimum(&problem, &scalarization)?;
        Ok(OptimumReport {
            x_star: x,
            lambda_star: None,
            value,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct SuperarmReport {
    pub input: Vec<f64>,
    pub lambda: String,
    pub value: f64,
    pub combinations: u128,
}

/// Exhaustively enumerates the best super-arm of the noiseless objective at
/// a fixed input.
pub fn superarm_at(cfg: &ExperimentConfig, seed: u64, x: &[f64]) -> anyhow::Result<SuperarmReport> {
    let resolved = cfg.resolve()?;
    let problem = build_synthetic(&resolved, seed)?;
    if x.len() != resolved.input_dim() {
        bail!(
            "--input has {} components, problem needs {}",
            x.len(),
            resolved.input_dim()
        );
    }
    let t = resolved.tensor_total();
    let k = resolved.loop_config.k.expect("resolved");
    let scalarization = build_scalarization(&resolved, t);
    let f = problem
        .evaluate_noiseless(x)
        .expect("synthetic problems are noiseless-capable");
    let vals = f.as_slice();
    let (idx, value) = oracle::best_subset_by_enumeration(
        t,
        k,
        tobo_core::tocbbo::ENUMERATION_GUARD,
        |subset| {
            let selected: Vec<f64> = subset.iter().map(|&c| vals[c]).collect();
            scalarization.apply_selected(&selected, subset)
        },
    )?;
    Ok(SuperarmReport {
        input: x.to_vec(),
        lambda: SelectionVector::from_indices(t, &idx)?.bitstring(),
        value,
        combinations: oracle::binomial(t, k),
    })
}
