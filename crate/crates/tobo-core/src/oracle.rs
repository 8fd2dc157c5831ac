//! Brute-force reference implementations used to validate the fast paths:
//! dense joint-Gaussian conditioning, exhaustive super-arm enumeration,
//! dense-grid / pattern-search maximization, and finite-difference gradient
//! checks. These deliberately avoid the factorizations and assembly code of
//! the main implementation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid_err, numerical_err, Error};
use crate::kernels::InputDomain;
use crate::sample::halton;
use crate::togp::{LikelihoodGrad, TOGPHyper};
use crate::Result;

/// Binomial coefficient with saturation, for enumeration guards.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Conditions the dense joint Gaussian of (noisy selected observations,
/// noiseless selected query entries) by explicit matrix inversion.
///
/// `sels[i]` lists the observed coordinates of round `i` (ascending) and
/// `obs` stacks the selected values. Returns the posterior mean and
/// covariance over `query_sel` at `x`.
pub fn joint_conditioning(
    hyper: &TOGPHyper,
    inputs: &[Vec<f64>],
    sels: &[Vec<usize>],
    obs: &[f64],
    x: &[f64],
    query_sel: &[usize],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    hyper.validate()?;
    let q = query_sel.len();
    let n_obs: usize = sels.iter().map(Vec::len).sum();
    if obs.len() != n_obs {
        return Err(invalid_err("stacked observations disagree with selections"));
    }
    let prior_q = hyper.kernel.eval(x, x)?;
    let mut mean_q = DVector::from_iterator(q, query_sel.iter().map(|&c| hyper.mean[c]));
    let mut cov_qq = DMatrix::from_fn(q, q, |r, c| {
        hyper.signal_var * prior_q[(query_sel[r], query_sel[c])]
    });
    if n_obs == 0 {
        return Ok((mean_q, cov_qq));
    }

    // Aggregate covariance of the stacked observed entries.
    let mut cov_oo = DMatrix::zeros(n_obs, n_obs);
    let mut offsets = Vec::with_capacity(sels.len());
    let mut off = 0;
    for sel in sels {
        offsets.push(off);
        off += sel.len();
    }
    for i in 0..inputs.len() {
        for j in 0..inputs.len() {
            let block = hyper.kernel.eval(&inputs[i], &inputs[j])?;
            for (r, &cr) in sels[i].iter().enumerate() {
                for (c, &cc) in sels[j].iter().enumerate() {
                    cov_oo[(offsets[i] + r, offsets[j] + c)] =
                        hyper.signal_var * block[(cr, cc)];
                }
            }
        }
    }
    for i in 0..n_obs {
        cov_oo[(i, i)] += hyper.noise_var;
    }
    // Cross covariance between observations and the query entries.
    let mut cov_oq = DMatrix::zeros(n_obs, q);
    for i in 0..inputs.len() {
        let block = hyper.kernel.eval(&inputs[i], x)?;
        for (r, &cr) in sels[i].iter().enumerate() {
            for (c, &cc) in query_sel.iter().enumerate() {
                cov_oq[(offsets[i] + r, c)] = hyper.signal_var * block[(cr, cc)];
            }
        }
    }
    let mut resid = DVector::from_column_slice(obs);
    for (i, sel) in sels.iter().enumerate() {
        for (r, &coord) in sel.iter().enumerate() {
            resid[offsets[i] + r] -= hyper.mean[coord];
        }
    }
    let inv = cov_oo
        .try_inverse()
        .ok_or_else(|| numerical_err("joint-conditioning oracle: singular covariance"))?;
    mean_q += cov_oq.transpose() * &inv * resid;
    cov_qq -= cov_oq.transpose() * inv * cov_oq;
    Ok((mean_q, cov_qq))
}

/// Visits every size-`k` subset of `0..t` in lexicographic order, keeping the
/// maximizer of `objective` (first maximizer wins ties, i.e. lowest indices).
pub fn best_subset_by_enumeration(
    t: usize,
    k: usize,
    guard: u128,
    mut objective: impl FnMut(&[usize]) -> f64,
) -> Result<(Vec<usize>, f64)> {
    if k == 0 || k > t {
        return Err(invalid_err(format!("subset size {k} out of range for {t} arms")));
    }
    let combos = binomial(t, k);
    if combos > guard {
        return Err(Error::EnumerationGuard {
            combinations: combos,
            limit: guard,
        });
    }
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best = subset.clone();
    let mut best_val = objective(&subset);
    loop {
        // Advance to the next lexicographic combination.
        let mut i = k;
        loop {
            if i == 0 {
                return Ok((best, best_val));
            }
            i -= 1;
            if subset[i] != i + t - k {
                break;
            }
            if i == 0 {
                return Ok((best, best_val));
            }
        }
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
        let val = objective(&subset);
        if val > best_val {
            best_val = val;
            best = subset.clone();
        }
    }
}

/// Dense-grid maximization over the box (`points_per_dim^d` evaluations).
/// Suitable for `d <= 2`; ties resolve to the first point visited.
pub fn grid_maximize(
    domain: &InputDomain,
    points_per_dim: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = domain.dim();
    let total = points_per_dim.pow(d as u32);
    let mut best_x = vec![0.0; d];
    let mut best_val = f64::NEG_INFINITY;
    let mut x = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for j in 0..d {
            let i = rem % points_per_dim;
            rem /= points_per_dim;
            let u = if points_per_dim == 1 {
                0.5
            } else {
                i as f64 / (points_per_dim - 1) as f64
            };
            x[j] = domain.lower()[j] + u * (domain.upper()[j] - domain.lower()[j]);
        }
        let v = f(&x);
        if v > best_val {
            best_val = v;
            best_x.copy_from_slice(&x);
        }
    }
    (best_x, best_val)
}

/// Multi-start compass (pattern) search: Halton starts, axis-aligned moves
/// with step halving. Deterministic; independent of the acquisition
/// optimizer used by the main loops.
pub fn multistart_maximize(
    domain: &InputDomain,
    starts: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = domain.dim();
    let start_points = halton(starts, 0, domain);
    let mut best_x = vec![0.0; d];
    let mut best_val = f64::NEG_INFINITY;
    for start in start_points {
        let mut x = start;
        let mut val = f(&x);
        let mut step: Vec<f64> = (0..d)
            .map(|j| 0.25 * (domain.upper()[j] - domain.lower()[j]))
            .collect();
        for _ in 0..60 {
            let mut improved = false;
            for j in 0..d {
                for sign in [1.0, -1.0] {
                    let mut cand = x.clone();
                    cand[j] += sign * step[j];
                    domain.clamp(&mut cand);
                    let cv = f(&cand);
                    if cv > val {
                        val = cv;
                        x = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                for s in step.iter_mut() {
                    *s *= 0.5;
                }
                if step.iter().all(|&s| s < 1e-7) {
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

/// Central finite-difference check of the analytic likelihood gradient over
/// every hyperparameter (signal variance, noise variance, each lengthscale,
/// each core entry). Fails with a descriptive error on the first mismatch.
pub fn check_likelihood_gradients<V, G>(
    hyper: &TOGPHyper,
    value: V,
    grad: G,
    step: f64,
    rtol: f64,
) -> Result<()>
where
    V: Fn(&TOGPHyper) -> Result<f64>,
    G: Fn(&TOGPHyper) -> Result<LikelihoodGrad>,
{
    let analytic = grad(hyper)?;
    let check = |name: &str, got: f64, fd: f64| -> Result<()> {
        let ok = if fd.abs() > 1e-8 {
            ((got - fd) / fd).abs() < rtol
        } else {
            (got - fd).abs() < 1e-6
        };
        if ok {
            Ok(())
        } else {
            Err(invalid_err(format!(
                "gradient mismatch for {name}: analytic {got}, finite difference {fd}"
            )))
        }
    };

    let mut plus = hyper.clone();
    plus.signal_var += step;
    let mut minus = hyper.clone();
    minus.signal_var -= step;
    let fd = (value(&plus)? - value(&minus)?) / (2.0 * step);
    check("signal_var", analytic.signal_var, fd)?;

    let mut plus = hyper.clone();
    plus.noise_var += step;
    let mut minus = hyper.clone();
    minus.noise_var -= step;
    let fd = (value(&plus)? - value(&minus)?) / (2.0 * step);
    check("noise_var", analytic.noise_var, fd)?;

    for (slot, id) in hyper.kernel.param_ids().into_iter().enumerate() {
        let v = hyper.kernel.get_param(id)?;
        let mut plus = hyper.clone();
        plus.kernel.set_param(id, v + step)?;
        let mut minus = hyper.clone();
        minus.kernel.set_param(id, v - step)?;
        let fd = (value(&plus)? - value(&minus)?) / (2.0 * step);
        check(&format!("{id:?}"), analytic.kernel[slot], fd)?;
    }
    Ok(())
}
