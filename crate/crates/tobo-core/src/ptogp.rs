//! Partially observed tensor-output Gaussian process.
//!
//! Each round observes only a `k`-subset of the `T` tensor entries, encoded
//! by a binary selection vector. With `E_n` the block-diagonal stack of the
//! per-round selection matrices, conditioning runs against
//! `S_n = sigma^2 E_n K_n E_n^T + tau^2 I_{nk}`; the posterior over the
//! selected entries of a query is
//!
//! ```text
//! mu_n(x, l)  = e(l) mu + sigma^2 e(l) K_n(x)^T E_n^T S_n^{-1} (y - E_n (1 (x) mu))
//! C_n(x, l)   = sigma^2 [ e(l) K(x,x) e(l)^T
//!               - sigma^2 e(l) K_n(x)^T E_n^T S_n^{-1} E_n K_n(x) e(l)^T ]
//! ```
//!
//! With every entry observed this collapses to the fully observed surrogate
//! exactly (the same conditioning engine runs in both cases).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_err, shape_err};
use crate::gp::{full_selection, Conditioned};
use crate::opt::{self, Termination};
use crate::togp::{
    FitConfig, FitReport, HyperPacking, LikelihoodGrad, Posterior, TOGPHyper,
};
use crate::Result;

/// Binary indicator of a size-`k` subset of the `T` tensor entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionVector {
    bits: Vec<bool>,
}

impl SelectionVector {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() || !bits.iter().any(|&b| b) {
            return Err(invalid_err("selection must pick at least one entry"));
        }
        Ok(Self { bits })
    }

    pub fn from_indices(total: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; total];
        for &i in indices {
            if i >= total {
                return Err(invalid_err(format!("arm index {i} out of range {total}")));
            }
            if bits[i] {
                return Err(invalid_err(format!("duplicate arm index {i}")));
            }
            bits[i] = true;
        }
        Self::new(bits)
    }

    pub fn all(total: usize) -> Self {
        Self {
            bits: vec![true; total],
        }
    }

    /// Number of arms `T`.
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of selected arms `k`.
    pub fn k(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, arm: usize) -> bool {
        self.bits[arm]
    }

    /// Selected coordinates in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// `"0110..."` ordering arm 0 first.
    pub fn bitstring(&self) -> alloc::string::String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let bits: Result<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(invalid_err(format!("invalid bit {other:?}"))),
            })
            .collect();
        Self::new(bits?)
    }

    /// Extracts the selected entries of a length-`T` vector.
    pub fn select(&self, v: &[f64]) -> Vec<f64> {
        self.indices().iter().map(|&i| v[i]).collect()
    }
}

/// Dense `k x T` selection matrix `e(l)`; row `j` has a single one at the
/// `j`-th selected coordinate (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    rows: Vec<usize>,
    total: usize,
}

/// Builds `e(l)` from a selection vector.
pub fn selection_matrix(selection: &SelectionVector) -> SelectionMatrix {
    SelectionMatrix {
        rows: selection.indices(),
        total: selection.len(),
    }
}

impl SelectionMatrix {
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// The selected coordinate of each row.
    pub fn selected(&self) -> &[usize] {
        &self.rows
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.total);
        for (r, &c) in self.rows.iter().enumerate() {
            m[(r, c)] = 1.0;
        }
        m
    }

    /// `e(l) v`: extraction of the selected entries.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&c| v[c]).collect()
    }
}

/// Partially observed training data: inputs, one selection per round, and
/// the observed `k`-vectors. `k` is fixed across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDataset {
    inputs: Vec<Vec<f64>>,
    selections: Vec<SelectionVector>,
    observations: Vec<Vec<f64>>,
}

impl PartialDataset {
    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            selections: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn new(
        inputs: Vec<Vec<f64>>,
        selections: Vec<SelectionVector>,
        observations: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if inputs.len() != selections.len() || inputs.len() != observations.len() {
            return Err(shape_err(
                "inputs, selections and observations must have equal length",
            ));
        }
        let mut me = Self::empty();
        for ((x, sel), y) in inputs.into_iter().zip(selections).zip(observations) {
            me.push(x, sel, y)?;
        }
        Ok(me)
    }

    pub fn push(&mut self, x: Vec<f64>, selection: SelectionVector, y: Vec<f64>) -> Result<()> {
        if y.len() != selection.k() {
            return Err(shape_err(format!(
                "observation has {} entries, selection picks {}",
                y.len(),
                selection.k()
            )));
        }
        if let Some(first) = self.selections.first() {
            if selection.len() != first.len() || selection.k() != first.k() {
                return Err(shape_err("selection size k must stay fixed across rounds"));
            }
        }
        self.inputs.push(x);
        self.selections.push(selection);
        self.observations.push(y);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn selections(&self) -> &[SelectionVector] {
        &self.selections
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    /// Stacked `nk` observation vector.
    pub fn stacked(&self) -> Vec<f64> {
        self.observations.iter().flatten().copied().collect()
    }

    fn selection_lists(&self) -> Vec<Vec<usize>> {
        self.selections.iter().map(|s| s.indices()).collect()
    }
}

/// Posterior over the selected entries at one query.
#[derive(Debug, Clone)]
pub struct PartialPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl PartialPosterior {
    pub fn spectral_norm(&self) -> f64 {
        crate::linalg::spectral_norm_psd(&self.cov)
    }
}

fn conditioned<'h>(hyper: &'h TOGPHyper, data: &PartialDataset) -> Result<Conditioned<'h>> {
    let t = hyper.shape().total();
    if data.selections().first().is_some_and(|s| s.len() != t) {
        return Err(shape_err(format!(
            "selections are over {} arms, tensor size is {t}",
            data.selections()[0].len()
        )));
    }
    Conditioned::new(
        hyper,
        data.inputs(),
        &data.selection_lists(),
        &data.stacked(),
    )
}

/// Posterior of the `selection`-restricted output at `x` given partial data.
pub fn partial_posterior(
    hyper: &TOGPHyper,
    data: &PartialDataset,
    x: &[f64],
    selection: &SelectionVector,
) -> Result<PartialPosterior> {
    let cond = conditioned(hyper, data)?;
    let sel = selection.indices();
    Ok(PartialPosterior {
        mean: cond.posterior_mean(x, &sel),
        cov: cond.posterior_cov(x, &sel, x, &sel),
    })
}

/// Posterior over all `T` entries at `x` given partial data. Restricting it
/// to a selection reproduces [`partial_posterior`] exactly, which is how the
/// super-arm search evaluates many selections at one query cheaply.
pub fn full_entry_posterior(
    hyper: &TOGPHyper,
    data: &PartialDataset,
    x: &[f64],
) -> Result<Posterior> {
    let cond = conditioned(hyper, data)?;
    let sel = full_selection(hyper.shape().total());
    Ok(Posterior {
        mean: cond.posterior_mean(x, &sel),
        cov: cond.posterior_cov(x, &sel, x, &sel),
    })
}

/// Cross-covariance `C(x, l; x', l')` between two query/selection pairs.
pub fn partial_cross_cov(
    hyper: &TOGPHyper,
    data: &PartialDataset,
    x: &[f64],
    selection: &SelectionVector,
    x2: &[f64],
    selection2: &SelectionVector,
) -> Result<DMatrix<f64>> {
    let cond = conditioned(hyper, data)?;
    Ok(cond.posterior_cov(x, &selection.indices(), x2, &selection2.indices()))
}

/// A conditioned partial surrogate whose factorization is reused across many
/// posterior queries (acquisition searches, super-arm scans).
pub struct PartialSurrogate<'h> {
    cond: Conditioned<'h>,
    total: usize,
}

impl<'h> PartialSurrogate<'h> {
    pub fn new(hyper: &'h TOGPHyper, data: &PartialDataset) -> Result<Self> {
        let total = hyper.shape().total();
        Ok(Self {
            cond: conditioned(hyper, data)?,
            total,
        })
    }

    /// Posterior over the given ascending coordinate list at `x`.
    pub fn posterior_at(&self, x: &[f64], coords: &[usize]) -> PartialPosterior {
        PartialPosterior {
            mean: self.cond.posterior_mean(x, coords),
            cov: self.cond.posterior_cov(x, coords, x, coords),
        }
    }

    /// Posterior over all `T` entries at `x`.
    pub fn full_posterior(&self, x: &[f64]) -> Posterior {
        let sel = full_selection(self.total);
        Posterior {
            mean: self.cond.posterior_mean(x, &sel),
            cov: self.cond.posterior_cov(x, &sel, x, &sel),
        }
    }
}

/// Log marginal likelihood of the partial data:
/// `-1/2 log|S_n| - 1/2 y^T S_n^{-1} y` with
/// `S_n = sigma^2 E_n K_n E_n^T + tau^2 I`.
pub fn partial_log_marginal_likelihood(hyper: &TOGPHyper, data: &PartialDataset) -> Result<f64> {
    Ok(conditioned(hyper, data)?.log_marginal())
}

/// Likelihood and analytic gradient; `dS = E_n d(sigma^2 K_n) E_n^T` plus
/// the identity for the noise term.
pub fn grad_partial_log_marginal_likelihood(
    hyper: &TOGPHyper,
    data: &PartialDataset,
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

/// Maximizes the partial log marginal likelihood; same contract as
/// [`crate::togp::fit`].
pub fn fit_partial(
    data: &PartialDataset,
    init: &TOGPHyper,
    cfg: &FitConfig,
) -> Result<(TOGPHyper, FitReport)> {
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

/// Per-entry RMS direction of partially observed data: entry `r` gets the
/// root mean square over the rounds that observed it (zero if never
/// observed), normalized to unit length. With fully observed rounds the
/// SVD-based [`crate::togp::dominant_direction`] is used instead.
pub fn partial_dominant_direction(data: &PartialDataset) -> Option<Vec<f64>> {
    if data.n() == 0 {
        return None;
    }
    let t = data.selections()[0].len();
    if data.selections().iter().all(|s| s.k() == t) {
        return crate::togp::dominant_direction(data.observations());
    }
    let mut sq = alloc::vec![0.0f64; t];
    let mut count = alloc::vec![0usize; t];
    for (sel, obs) in data.selections().iter().zip(data.observations()) {
        for (slot, &coord) in sel.indices().iter().enumerate() {
            sq[coord] += obs[slot] * obs[slot];
            count[coord] += 1;
        }
    }
    let mut v: Vec<f64> = sq
        .iter()
        .zip(&count)
        .map(|(&s, &c)| {
            if c > 0 {
                num_traits::Float::sqrt(s / c as f64)
            } else {
                0.0
            }
        })
        .collect();
    let norm = num_traits::Float::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if !(norm > 1e-12) {
        return None;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Some(v)
}

fn partial_second_moment(data: &PartialDataset) -> Option<f64> {
    if data.n() == 0 {
        return None;
    }
    let t = data.selections()[0].len();
    if data.selections().iter().all(|s| s.k() == t) {
        return crate::togp::total_second_moment(data.observations());
    }
    let mut sq = alloc::vec![0.0f64; t];
    let mut count = alloc::vec![0usize; t];
    for (sel, obs) in data.selections().iter().zip(data.observations()) {
        for (slot, &coord) in sel.indices().iter().enumerate() {
            sq[coord] += obs[slot] * obs[slot];
            count[coord] += 1;
        }
    }
    let total: f64 = sq
        .iter()
        .zip(&count)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / c as f64)
        .sum();
    Some(total)
}

/// [`fit_partial`] from several initializations; same contract as
/// [`crate::togp::fit_with_restarts`].
pub fn fit_partial_with_restarts(
    data: &PartialDataset,
    init: &TOGPHyper,
    cfg: &FitConfig,
    restarts: usize,
    seed: u64,
) -> Result<(TOGPHyper, FitReport)> {
    let direction = partial_dominant_direction(data);
    let scale = partial_second_moment(data);
    let candidates = crate::togp::restart_candidates(init, scale, direction, restarts, seed);
    let mut best: Option<(TOGPHyper, FitReport)> = None;
    let mut last_err = None;
    for cand in &candidates {
        match fit_partial(data, cand, cfg) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BaseKernelParam, KernelFamily, TensorKernel};
    use crate::oracle;
    use crate::sample::{stream_rng, streams};
    use crate::tensor::{CoreTensorParam, TensorShape};
    use crate::togp::{self, Dataset};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn hyper(dims: &[usize], d: usize, seed: u64) -> TOGPHyper {
        let sh = TensorShape::new(dims).unwrap();
        let mut rng = stream_rng(seed, streams::PROBLEM);
        let entries: Vec<f64> = (0..sh.total()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel = TensorKernel::Separable {
            shape: sh,
            core: CoreTensorParam::Full { entries },
            base: BaseKernelParam::isotropic(KernelFamily::Matern52, d, 0.5).unwrap(),
        };
        TOGPHyper::new(kernel, 1.1, 0.07).unwrap()
    }

    fn random_partial(
        hyper: &TOGPHyper,
        n: usize,
        d: usize,
        k: usize,
        seed: u64,
    ) -> PartialDataset {
        let mut rng = stream_rng(seed, streams::NOISE);
        let t = hyper.shape().total();
        let mut data = PartialDataset::empty();
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let idx = crate::sample::sample_subset(t, k, &mut rng);
            let sel = SelectionVector::from_indices(t, &idx).unwrap();
            let y: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            data.push(x, sel, y).unwrap();
        }
        data
    }

    #[test]
    fn selection_matrix_full_is_identity() {
        let sel = SelectionVector::all(3);
        let e = selection_matrix(&sel);
        assert_eq!(e.to_matrix(), DMatrix::identity(3, 3));
    }

    #[test]
    fn selection_matrix_orders_rows_ascending() {
        let sel = SelectionVector::new(vec![false, true, false, true]).unwrap();
        let e = selection_matrix(&sel);
        assert_eq!(e.selected(), &[1, 3]);
        let applied = e.apply(&[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(applied, vec![20.0, 40.0]);
    }

    #[test]
    fn selection_matrix_rows_are_orthonormal() {
        let mut rng = stream_rng(9, streams::SUPERARM);
        for _ in 0..10 {
            let idx = crate::sample::sample_subset(6, 3, &mut rng);
            let sel = SelectionVector::from_indices(6, &idx).unwrap();
            let e = selection_matrix(&sel).to_matrix();
            let prod = &e * e.transpose();
            assert!((prod - DMatrix::identity(3, 3)).abs().max() < 1e-15);
        }
    }

    #[test]
    fn full_selection_collapses_to_togp() {
        let h = hyper(&[2, 2], 2, 1);
        let mut rng = stream_rng(2, streams::NOISE);
        let n = 4;
        let t = 4;
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let full = Dataset::new(inputs.clone(), obs.clone()).unwrap();
        let partial = PartialDataset::new(
            inputs,
            (0..n).map(|_| SelectionVector::all(t)).collect(),
            obs,
        )
        .unwrap();
        let x = [0.3, 0.7];
        let reference = togp::posterior(&h, &full, &x).unwrap();
        let got = partial_posterior(&h, &partial, &x, &SelectionVector::all(t)).unwrap();
        assert!((got.mean - reference.mean).abs().max() < 1e-8);
        assert!((got.cov - reference.cov).abs().max() < 1e-8);
        let lml_full = togp::log_marginal_likelihood(&h, &full).unwrap();
        let lml_partial = partial_log_marginal_likelihood(&h, &partial).unwrap();
        assert_abs_diff_eq!(lml_full, lml_partial, epsilon = 1e-10);
    }

    #[test]
    fn no_data_returns_restricted_prior() {
        let h = hyper(&[2, 2], 2, 3);
        let sel = SelectionVector::from_indices(4, &[0, 2]).unwrap();
        let x = [0.4, 0.1];
        let post = partial_posterior(&h, &PartialDataset::empty(), &x, &sel).unwrap();
        let prior = h.kernel.eval(&x, &x).unwrap();
        for (r, &cr) in sel.indices().iter().enumerate() {
            assert_abs_diff_eq!(post.mean[r], h.mean[cr], epsilon = 1e-14);
            for (c, &cc) in sel.indices().iter().enumerate() {
                assert_abs_diff_eq!(
                    post.cov[(r, c)],
                    h.signal_var * prior[(cr, cc)],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn partial_posterior_matches_joint_conditioning_oracle() {
        let h = hyper(&[2, 3], 2, 11);
        let data = random_partial(&h, 4, 2, 2, 12);
        let x = [0.55, 0.25];
        let q = SelectionVector::from_indices(6, &[1, 4]).unwrap();
        let got = partial_posterior(&h, &data, &x, &q).unwrap();
        let sels = data.selection_lists();
        let (mean, cov) = oracle::joint_conditioning(
            &h,
            data.inputs(),
            &sels,
            &data.stacked(),
            &x,
            &q.indices(),
        )
        .unwrap();
        assert!((got.mean - mean).abs().max() < 1e-8);
        assert!((got.cov - cov).abs().max() < 1e-8);
    }

    #[test]
    fn full_entry_posterior_restriction_is_consistent() {
        let h = hyper(&[2, 3], 1, 13);
        let data = random_partial(&h, 3, 1, 3, 14);
        let x = [0.6];
        let full = full_entry_posterior(&h, &data, &x).unwrap();
        let sel = SelectionVector::from_indices(6, &[0, 2, 5]).unwrap();
        let restricted = partial_posterior(&h, &data, &x, &sel).unwrap();
        for (r, &cr) in sel.indices().iter().enumerate() {
            assert_abs_diff_eq!(restricted.mean[r], full.mean[cr], epsilon = 1e-10);
            for (c, &cc) in sel.indices().iter().enumerate() {
                assert_abs_diff_eq!(restricted.cov[(r, c)], full.cov[(cr, cc)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn marginalization_consistency_for_nested_selections() {
        let h = hyper(&[2, 3], 1, 15);
        let data = random_partial(&h, 4, 1, 2, 16);
        let x = [0.35];
        let big = SelectionVector::from_indices(6, &[0, 2, 4]).unwrap();
        let small = SelectionVector::from_indices(6, &[0, 4]).unwrap();
        let post_big = partial_posterior(&h, &data, &x, &big).unwrap();
        let post_small = partial_posterior(&h, &data, &x, &small).unwrap();
        // Positions of the small selection inside the big one.
        let pos: Vec<usize> = small
            .indices()
            .iter()
            .map(|c| big.indices().iter().position(|b| b == c).unwrap())
            .collect();
        for (r_s, &r_b) in pos.iter().enumerate() {
            assert_abs_diff_eq!(post_small.mean[r_s], post_big.mean[r_b], epsilon = 1e-8);
            for (c_s, &c_b) in pos.iter().enumerate() {
                assert_abs_diff_eq!(
                    post_small.cov[(r_s, c_s)],
                    post_big.cov[(r_b, c_b)],
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn covariances_are_psd() {
        let h = hyper(&[2, 2], 1, 17);
        let data = random_partial(&h, 4, 1, 2, 18);
        let x = [0.45];
        let sel = SelectionVector::from_indices(4, &[1, 3]).unwrap();
        let post = partial_posterior(&h, &data, &x, &sel).unwrap();
        let min_eig = crate::linalg::sym_eigenvalues(&post.cov)
            .into_iter()
            .last()
            .unwrap();
        assert!(min_eig >= -1e-8);
    }

    #[test]
    fn zero_observations_leave_only_logdet() {
        let h = hyper(&[2], 1, 19);
        let mut data = PartialDataset::empty();
        let sel = SelectionVector::from_indices(2, &[1]).unwrap();
        for i in 0..3 {
            data.push(vec![i as f64 * 0.3], sel.clone(), vec![0.0]).unwrap();
        }
        let lml = partial_log_marginal_likelihood(&h, &data).unwrap();
        // Quadratic term vanishes; compare against dense log-determinant.
        let lists = data.selection_lists();
        let mut s = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let block = h.kernel.eval(&data.inputs()[i], &data.inputs()[j]).unwrap();
                s[(i, j)] = h.signal_var * block[(lists[i][0], lists[j][0])];
            }
        }
        for i in 0..3 {
            s[(i, i)] += h.noise_var;
        }
        assert_abs_diff_eq!(lml, -0.5 * s.determinant().ln(), epsilon = 1e-10);
    }

    #[test]
    fn partial_gradients_match_finite_differences() {
        let h = hyper(&[2, 2], 2, 20);
        let data = random_partial(&h, 3, 2, 2, 21);
        oracle::check_likelihood_gradients(
            &h,
            |hh| partial_log_marginal_likelihood(hh, &data),
            |hh| grad_partial_log_marginal_likelihood(hh, &data).map(|(_, g)| g),
            1e-6,
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn fit_partial_improves_likelihood() {
        let h = hyper(&[2, 2], 1, 22);
        let data = random_partial(&h, 8, 1, 2, 23);
        let before = partial_log_marginal_likelihood(&h, &data).unwrap();
        let (fitted, report) = fit_partial(&data, &h, &FitConfig::default()).unwrap();
        let after = partial_log_marginal_likelihood(&fitted, &data).unwrap();
        assert!(after >= before - 1e-9);
        assert!(report.log_likelihood >= before - 1e-9);
    }

    #[test]
    fn ragged_k_is_rejected() {
        let mut data = PartialDataset::empty();
        data.push(
            vec![0.1],
            SelectionVector::from_indices(4, &[0, 1]).unwrap(),
            vec![1.0, 2.0],
        )
        .unwrap();
        let err = data.push(
            vec![0.2],
            SelectionVector::from_indices(4, &[2]).unwrap(),
            vec![1.0],
        );
        assert!(err.is_err());
    }
}
