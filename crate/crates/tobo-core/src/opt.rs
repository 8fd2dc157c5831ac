//! A compact limited-memory BFGS minimizer with backtracking line search and
//! an optional projection hook applied after every accepted step.
//!
//! Used for likelihood fitting in log-space (positivity of variances and
//! lengthscales is handled by the parametrization plus a clamp projection).

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::numerical_err;
use crate::Result;

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    /// Convergence on the infinity norm of the gradient.
    pub grad_tol: f64,
    /// Number of curvature pairs kept.
    pub history: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-5,
            history: 10,
            c1: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No improving step found along the search direction.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub reason: Termination,
    /// Objective value after every accepted step, starting with the initial
    /// value. Strictly decreasing by construction.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the value and gradient at a point. The
/// `project` hook is applied to every trial point before evaluation; it must
/// map candidates into the feasible set (clamps, gauge fixing).
pub fn minimize<F, P>(
    mut f: F,
    x0: &[f64],
    cfg: &LbfgsConfig,
    mut project: P,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: FnMut(&mut Vec<f64>),
{

    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut grad) = f(&x)?;
    if !fx.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(numerical_err("objective not finite at the initial point"));
    }
    let mut trace = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for iter in 0..cfg.max_iters {
        if inf_norm(&grad) < cfg.grad_tol {
            return Ok(LbfgsOutcome {
                x,
                value: fx,
                iterations: iter,
                reason: Termination::GradientTolerance,
                trace,
            });
        }

        // Two-loop recursion for the search direction.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let scale = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= scale;
            }
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            // Curvature information unusable; fall back to steepest descent.
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
            pairs.clear();
        }

        // Backtracking Armijo line search over the projected candidate. If
        // the unit step already satisfies the decrease condition, grow the
        // step while it keeps improving (guards against creeping along a
        // valley with a badly scaled initial Hessian).
        let mut evaluate = |step: f64| -> Option<(Vec<f64>, f64, Vec<f64>)> {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut cand);
            match f(&cand) {
                Ok((fc, gc))
                    if fc.is_finite()
                        && gc.iter().all(|g| g.is_finite())
                        && fc <= fx + cfg.c1 * step * slope =>
                {
                    Some((cand, fc, gc))
                }
                _ => None,
            }
        };
        let mut step = 1.0;
        let mut accepted = None;
        for k in 0..cfg.max_backtracks {
            if let Some(hit) = evaluate(step) {
                accepted = Some(hit);
                if k == 0 {
                    for _ in 0..12 {
                        let grown = step * 2.0;
                        match evaluate(grown) {
                            Some(better)
                                if better.1 < accepted.as_ref().unwrap().1 =>
                            {
                                step = grown;
                                accepted = Some(better);
                            }
                            _ => break,
                        }
                    }
                }
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Ok(LbfgsOutcome {
                x,
                value: fx,
                iterations: iter,
                reason: Termination::LineSearchStalled,
                trace,
            });
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let threshold = 1e-9 * Float::sqrt(dot(&s, &s)) * Float::sqrt(dot(&y, &y));
        if sy > threshold && sy > 0.0 {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        grad = g_new;
        trace.push(fx);
    }

    Ok(LbfgsOutcome {
        x,
        value: fx,
        iterations: cfg.max_iters,
        reason: Termination::MaxIterations,
        trace,
    })
}
