//! Shared Gaussian-process machinery over selected tensor coordinates.
//!
//! Both the fully observed surrogate and the partially observed one condition
//! through this engine: a fully observed round is simply a round whose
//! selection is every coordinate. Keeping one code path makes the
//! full-selection collapse exact rather than approximate.
//!
//! All formulas work with the noise-inclusive matrix
//! `S = sigma^2 E K_n E^T + tau^2 I`, which equals `sigma^2 (K_n + eta I)`
//! when every coordinate is observed, so the textbook posterior expressed via
//! `(K_n + eta I)^{-1}` is recovered algebraically.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::shape_err;
use crate::kernels::CompiledKernel;
use crate::linalg::{symmetrize, SymFactor};
use crate::togp::TOGPHyper;
use crate::Result;

/// A surrogate conditioned on observations of selected coordinates.
pub(crate) struct Conditioned<'h> {
    pub hyper: &'h TOGPHyper,
    pub compiled: CompiledKernel<'h>,
    inputs: Vec<Vec<f64>>,
    /// Ascending selected-coordinate lists, one per observation.
    sels: Vec<Vec<usize>>,
    /// Row offset of each observation block inside the stacked system.
    offsets: Vec<usize>,
    total_rows: usize,
    factor: Option<SymFactor>,
    /// `S^{-1} (y - E (1 (x) mu))`; empty when there are no observations.
    alpha: DVector<f64>,
    resid: DVector<f64>,
}

pub(crate) fn full_selection(t: usize) -> Vec<usize> {
    (0..t).collect()
}

impl<'h> Conditioned<'h> {
    /// Conditions `hyper` on observations `obs` of coordinates `sels` at
    /// `inputs`. `obs` stacks the selected entries per observation.
    pub fn new(
        hyper: &'h TOGPHyper,
        inputs: &[Vec<f64>],
        sels: &[Vec<usize>],
        obs: &[f64],
    ) -> Result<Self> {
        hyper.validate()?;
        let compiled = CompiledKernel::new(&hyper.kernel)?;
        if inputs.len() != sels.len() {
            return Err(shape_err("one selection per observation required"));
        }
        let mut offsets = Vec::with_capacity(sels.len());
        let mut total_rows = 0;
        for sel in sels {
            offsets.push(total_rows);
            total_rows += sel.len();
        }
        if obs.len() != total_rows {
            return Err(shape_err(format!(
                "stacked observations have length {}, selections sum to {total_rows}",
                obs.len()
            )));
        }
        let mut me = Self {
            hyper,
            compiled,
            inputs: inputs.to_vec(),
            sels: sels.to_vec(),
            offsets,
            total_rows,
            factor: None,
            alpha: DVector::zeros(0),
            resid: DVector::zeros(0),
        };
        if total_rows > 0 {
            let sigma = me.noise_matrix();
            let factor = SymFactor::new(sigma)?;
            let mut resid = DVector::from_column_slice(obs);
            for (i, sel) in me.sels.iter().enumerate() {
                for (r, &coord) in sel.iter().enumerate() {
                    resid[me.offsets[i] + r] -= me.hyper.mean[coord];
                }
            }
            me.alpha = factor.solve_vec(&resid);
            me.resid = resid;
            me.factor = Some(factor);
        }
        Ok(me)
    }

    /// Selected prior Gram `E K_n E^T` (no variance scaling, no noise).
    pub fn selected_gram(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.total_rows, self.total_rows);
        for i in 0..self.inputs.len() {
            for j in i..self.inputs.len() {
                let block = self.compiled.eval_selected(
                    &self.inputs[i],
                    &self.inputs[j],
                    &self.sels[i],
                    &self.sels[j],
                );
                let (oi, oj) = (self.offsets[i], self.offsets[j]);
                for r in 0..block.nrows() {
                    for c in 0..block.ncols() {
                        out[(oi + r, oj + c)] = block[(r, c)];
                        out[(oj + c, oi + r)] = block[(r, c)];
                    }
                }
            }
        }
        out
    }

    /// `S = sigma^2 E K_n E^T + tau^2 I`.
    fn noise_matrix(&self) -> DMatrix<f64> {
        let mut s = self.selected_gram();
        s *= self.hyper.signal_var;
        for i in 0..self.total_rows {
            s[(i, i)] += self.hyper.noise_var;
        }
        s
    }

    /// The cross matrix `E K_n(x) e(q)^T` factors through the rank-1 core
    /// couplings: with `u_l[(i,s)] = s_l(x_i, x) a_l[sel_i[s]]` and
    /// `v_l[c] = a_l[q[c]]` it equals `sum_l u_l v_l^T`. Queries then cost
    /// one vector solve per core instead of one per query coordinate.
    fn cross_factors(&self, x: &[f64], query_sel: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.compiled.core_vecs.len();
        let mut u = DMatrix::zeros(self.total_rows, m);
        let mut v = DMatrix::zeros(query_sel.len(), m);
        for (l, a) in self.compiled.core_vecs.iter().enumerate() {
            for (i, sel) in self.sels.iter().enumerate() {
                let s_l = self.compiled.mode_scalars(&self.inputs[i], x)[l];
                let oi = self.offsets[i];
                for (r, &coord) in sel.iter().enumerate() {
                    u[(oi + r, l)] = s_l * a[coord];
                }
            }
            for (c, &coord) in query_sel.iter().enumerate() {
                v[(c, l)] = a[coord];
            }
        }
        (u, v)
    }

    /// Posterior mean over the selected query coordinates.
    pub fn posterior_mean(&self, x: &[f64], query_sel: &[usize]) -> DVector<f64> {
        let mut mean = DVector::from_iterator(
            query_sel.len(),
            query_sel.iter().map(|&c| self.hyper.mean[c]),
        );
        if self.factor.is_some() {
            let (u, v) = self.cross_factors(x, query_sel);
            let weights = u.transpose() * &self.alpha;
            mean += self.hyper.signal_var * v * weights;
        }
        mean
    }

    /// Posterior covariance between `(x, query_sel)` and `(x2, query_sel2)`.
    /// Symmetrized when both sides coincide.
    pub fn posterior_cov(
        &self,
        x: &[f64],
        query_sel: &[usize],
        x2: &[f64],
        query_sel2: &[usize],
    ) -> DMatrix<f64> {
        let prior = self.compiled.eval_selected(x, x2, query_sel, query_sel2);
        let mut cov = prior;
        if let Some(factor) = &self.factor {
            let same = x == x2 && query_sel == query_sel2;
            let (u1, v1) = self.cross_factors(x, query_sel);
            let (u2, v2) = if same {
                (u1.clone(), v1.clone())
            } else {
                self.cross_factors(x2, query_sel2)
            };
            let solved = factor.solve_mat(&u2);
            let middle = u1.transpose() * solved;
            cov -= self.hyper.signal_var * (&v1 * middle * v2.transpose());
        }
        cov *= self.hyper.signal_var;
        if x == x2 && query_sel == query_sel2 {
            symmetrize(&mut cov);
        }
        cov
    }

    /// Log marginal likelihood of the conditioning data:
    /// `-1/2 log|S| - 1/2 y^T S^{-1} y` with `y` centered by the prior mean.
    pub fn log_marginal(&self) -> f64 {
        match &self.factor {
            None => 0.0,
            Some(factor) => -0.5 * factor.log_det() - 0.5 * self.resid.dot(&self.alpha),
        }
    }

    /// Log marginal likelihood and its gradient with respect to
    /// `[signal_var, noise_var, kernel params...]` (kernel order per
    /// [`TensorKernel::param_ids`]).
    pub fn log_marginal_grad(&self) -> Result<(f64, Vec<f64>)> {
        let value = self.log_marginal();
        let ids = self.hyper.kernel.param_ids();
        let Some(factor) = &self.factor else {
            return Ok((value, alloc::vec![0.0; 2 + ids.len()]));
        };
        let sigma_inv = factor.inverse();
        let alpha = &self.alpha;
        let gram = self.selected_gram();

        // d logL = -1/2 tr(S^{-1} dS) + 1/2 alpha^T dS alpha, with
        // dS/d sigma^2 = E K_n E^T, dS/d tau^2 = I, and
        // dS/d p = sigma^2 E (dK_n/dp) E^T for kernel parameters.
        let mut grads = Vec::with_capacity(2 + ids.len());
        let g_signal = -0.5 * frob_dot(&sigma_inv, &gram) + 0.5 * quad(alpha, &gram);
        grads.push(g_signal);
        let g_noise = -0.5 * sigma_inv.trace() + 0.5 * alpha.dot(alpha);
        grads.push(g_noise);

        let n = self.inputs.len();
        let mut dgram = DMatrix::zeros(self.total_rows, self.total_rows);
        for id in ids {
            dgram.fill(0.0);
            for i in 0..n {
                for j in i..n {
                    let (oi, oj) = (self.offsets[i], self.offsets[j]);
                    let mut block = DMatrix::zeros(self.sels[i].len(), self.sels[j].len());
                    self.compiled.accumulate_grad_selected(
                        &self.inputs[i],
                        &self.inputs[j],
                        id,
                        &self.sels[i],
                        &self.sels[j],
                        &mut block,
                    );
                    for r in 0..block.nrows() {
                        for c in 0..block.ncols() {
                            dgram[(oi + r, oj + c)] = block[(r, c)];
                            dgram[(oj + c, oi + r)] = block[(r, c)];
                        }
                    }
                }
            }
            let g = self.hyper.signal_var
                * (-0.5 * frob_dot(&sigma_inv, &dgram) + 0.5 * quad(alpha, &dgram));
            grads.push(g);
        }
        Ok((value, grads))
    }
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn quad(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}
