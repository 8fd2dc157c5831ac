//! Input-space base kernels (Matérn-5/2, Gaussian) with ARD lengthscales and
//! the two tensor-output kernel classes built on them.
//!
//! A separable kernel couples tensor entries through a single core tensor,
//! `K(x, x') = vec(A) vec(A)^T k(x, x')`, so cross-entry correlations are
//! fixed. A non-separable kernel mixes one rank-1 coupling per mode over
//! `t_l` base kernels, `K(x, x') = sum_l sum_j vec(A_l) vec(A_l)^T
//! k_{lj}(x, x')`, letting the correlations vary with the input.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_err, shape_err, Error};
use crate::tensor::{CoreTensorParam, TensorShape};
use crate::Result;

/// Lengthscales this small are treated as degenerate and clamped during
/// optimization.
pub const MIN_LENGTHSCALE: f64 = 1e-6;

const SQRT_5: f64 = 2.236_067_977_499_79;

/// Compact box domain for the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputDomain {
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(shape_err("domain bounds must be nonempty and equal length"));
        }
        if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
            return Err(invalid_err("domain requires lower < upper elementwise"));
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        })
    }

    /// The unit box `[0, 1]^d`.
    pub fn unit(d: usize) -> Self {
        Self {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v >= l && v <= u)
    }

    /// Projects a point onto the box.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.max(*l).min(*u);
        }
    }

    /// Largest side length; the `r` of an enclosing `[0, r]^d` box.
    pub fn max_side(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .fold(0.0, f64::max)
    }
}

/// Base kernel family on the input space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    Matern52,
    Gaussian,
}

/// A stationary base kernel with per-dimension (ARD) lengthscales,
/// normalized so that `k(x, x) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseKernelParam {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
}

impl BaseKernelParam {
    pub fn new(family: KernelFamily, lengthscales: &[f64]) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(invalid_err("kernel needs at least one lengthscale"));
        }
        if lengthscales.iter().any(|&t| !(t > 0.0)) {
            return Err(invalid_err("lengthscales must be strictly positive"));
        }
        Ok(Self {
            family,
            lengthscales: lengthscales.to_vec(),
        })
    }

    /// Isotropic constructor: the same lengthscale in all `d` dimensions.
    pub fn isotropic(family: KernelFamily, d: usize, lengthscale: f64) -> Result<Self> {
        Self::new(family, &vec![lengthscale; d])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn scaled_sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for i in 0..x.len() {
            let u = (x[i] - y[i]) / self.lengthscales[i];
            r2 += u * u;
        }
        r2
    }

    /// Evaluates the kernel; `eval(x, x) = 1` for both families.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(shape_err(format!(
                "kernel dimension {} vs inputs of length {} and {}",
                self.dim(),
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2 = self.scaled_sq_dist(x, y);
        match self.family {
            KernelFamily::Gaussian => Float::exp(-0.5 * r2),
            KernelFamily::Matern52 => {
                let r = Float::sqrt(r2);
                (1.0 + SQRT_5 * r + (5.0 / 3.0) * r2) * Float::exp(-SQRT_5 * r)
            }
        }
    }

    /// Partial derivatives with respect to each lengthscale.
    pub fn grad_lengthscales(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(shape_err("input dimension mismatch in kernel gradient"));
        }
        let d = self.dim();
        let r2 = self.scaled_sq_dist(x, y);
        let mut out = vec![0.0; d];
        match self.family {
            KernelFamily::Gaussian => {
                let k = Float::exp(-0.5 * r2);
                for i in 0..d {
                    let u = (x[i] - y[i]) / self.lengthscales[i];
                    out[i] = k * u * u / self.lengthscales[i];
                }
            }
            KernelFamily::Matern52 => {
                let r = Float::sqrt(r2);
                let common = (5.0 / 3.0) * (1.0 + SQRT_5 * r) * Float::exp(-SQRT_5 * r);
                for i in 0..d {
                    let u = (x[i] - y[i]) / self.lengthscales[i];
                    out[i] = common * u * u / self.lengthscales[i];
                }
            }
        }
        Ok(out)
    }
}

/// Identifier of one scalar kernel hyperparameter.
///
/// For the separable class `mode` and `member` are always 0 and `core` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelParamId {
    /// Lengthscale `dim` of base kernel `member` attached to tensor mode
    /// `mode`.
    Lengthscale {
        mode: usize,
        member: usize,
        dim: usize,
    },
    /// Free parameter `index` of core tensor `core` (see
    /// [`CoreTensorParam::params`] for the flat order).
    Core { core: usize, index: usize },
}

/// Covariance over the `T` tensor entries, indexed by input pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TensorKernel {
    Separable {
        shape: TensorShape,
        core: CoreTensorParam,
        base: BaseKernelParam,
    },
    NonSeparable {
        shape: TensorShape,
        /// One core tensor per mode.
        cores: Vec<CoreTensorParam>,
        /// `bases[l]` holds the `t_l` base kernels of mode `l`, each with its
        /// own lengthscale vector.
        bases: Vec<Vec<BaseKernelParam>>,
    },
}

impl TensorKernel {
    pub fn shape(&self) -> &TensorShape {
        match self {
            TensorKernel::Separable { shape, .. } => shape,
            TensorKernel::NonSeparable { shape, .. } => shape,
        }
    }

    /// Input dimension, taken from the lengthscale vectors.
    pub fn input_dim(&self) -> usize {
        match self {
            TensorKernel::Separable { base, .. } => base.dim(),
            TensorKernel::NonSeparable { bases, .. } => bases[0][0].dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TensorKernel::Separable { shape, core, base } => {
                core.validate(shape)?;
                if base.dim() == 0 {
                    return Err(invalid_err("base kernel has no lengthscales"));
                }
            }
            TensorKernel::NonSeparable {
                shape,
                cores,
                bases,
            } => {
                let m = shape.mode_count();
                if cores.len() != m {
                    return Err(shape_err(format!(
                        "non-separable kernel needs {m} cores, got {}",
                        cores.len()
                    )));
                }
                if bases.len() != m {
                    return Err(shape_err(format!(
                        "non-separable kernel needs {m} base-kernel groups, got {}",
                        bases.len()
                    )));
                }
                let d = bases[0][0].dim();
                for (l, (core, group)) in cores.iter().zip(bases).enumerate() {
                    core.validate(shape)?;
                    if group.len() != shape.dims()[l] {
                        return Err(shape_err(format!(
                            "mode {l} needs {} base kernels, got {}",
                            shape.dims()[l],
                            group.len()
                        )));
                    }
                    if group.iter().any(|b| b.dim() != d) {
                        return Err(shape_err("base kernels disagree on input dimension"));
                    }
                }
            }
        }
        Ok(())
    }

    /// All kernel hyperparameter identifiers, in the canonical order used by
    /// the likelihood gradient: lengthscales first (mode-major, then member,
    /// then dimension), core parameters after.
    pub fn param_ids(&self) -> Vec<KernelParamId> {
        let mut ids = Vec::new();
        match self {
            TensorKernel::Separable { base, core, .. } => {
                for dim in 0..base.dim() {
                    ids.push(KernelParamId::Lengthscale {
                        mode: 0,
                        member: 0,
                        dim,
                    });
                }
                for index in 0..core.param_count() {
                    ids.push(KernelParamId::Core { core: 0, index });
                }
            }
            TensorKernel::NonSeparable { cores, bases, .. } => {
                for (mode, group) in bases.iter().enumerate() {
                    for (member, b) in group.iter().enumerate() {
                        for dim in 0..b.dim() {
                            ids.push(KernelParamId::Lengthscale { mode, member, dim });
                        }
                    }
                }
                for (c, core) in cores.iter().enumerate() {
                    for index in 0..core.param_count() {
                        ids.push(KernelParamId::Core { core: c, index });
                    }
                }
            }
        }
        ids
    }

    /// Reads one hyperparameter.
    pub fn get_param(&self, id: KernelParamId) -> Result<f64> {
        match (self, id) {
            (
                TensorKernel::Separable { base, .. },
                KernelParamId::Lengthscale {
                    mode: 0,
                    member: 0,
                    dim,
                },
            ) if dim < base.dim() => Ok(base.lengthscales[dim]),
            (TensorKernel::Separable { core, .. }, KernelParamId::Core { core: 0, index })
                if index < core.param_count() =>
            {
                Ok(core.params()[index])
            }
            (
                TensorKernel::NonSeparable { bases, .. },
                KernelParamId::Lengthscale { mode, member, dim },
            ) if mode < bases.len() && member < bases[mode].len() && dim < bases[mode][member].dim() => {
                Ok(bases[mode][member].lengthscales[dim])
            }
            (TensorKernel::NonSeparable { cores, .. }, KernelParamId::Core { core, index })
                if core < cores.len() && index < cores[core].param_count() =>
            {
                Ok(cores[core].params()[index])
            }
            _ => Err(Error::UnknownParam(format!("{id:?}"))),
        }
    }

    /// Writes one hyperparameter.
    pub fn set_param(&mut self, id: KernelParamId, value: f64) -> Result<()> {
        match (&mut *self, id) {
            (
                TensorKernel::Separable { base, .. },
                KernelParamId::Lengthscale {
                    mode: 0,
                    member: 0,
                    dim,
                },
            ) if dim < base.dim() => {
                base.lengthscales[dim] = value;
                Ok(())
            }
            (TensorKernel::Separable { core, .. }, KernelParamId::Core { core: 0, index })
                if index < core.param_count() =>
            {
                let mut p = core.params();
                p[index] = value;
                core.set_params(&p);
                Ok(())
            }
            (
                TensorKernel::NonSeparable { bases, .. },
                KernelParamId::Lengthscale { mode, member, dim },
            ) if mode < bases.len() && member < bases[mode].len() && dim < bases[mode][member].dim() => {
                bases[mode][member].lengthscales[dim] = value;
                Ok(())
            }
            (TensorKernel::NonSeparable { cores, .. }, KernelParamId::Core { core, index })
                if core < cores.len() && index < cores[core].param_count() =>
            {
                let mut p = cores[core].params();
                p[index] = value;
                cores[core].set_params(&p);
                Ok(())
            }
            _ => Err(Error::UnknownParam(format!("{id:?}"))),
        }
    }

    /// All kernel hyperparameters as a flat vector in [`TensorKernel::param_ids`]
    /// order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            TensorKernel::Separable { base, core, .. } => {
                out.extend_from_slice(&base.lengthscales);
                out.extend(core.params());
            }
            TensorKernel::NonSeparable { cores, bases, .. } => {
                for group in bases {
                    for b in group {
                        out.extend_from_slice(&b.lengthscales);
                    }
                }
                for core in cores {
                    out.extend(core.params());
                }
            }
        }
        out
    }

    /// Overwrites all hyperparameters from a flat vector (inverse of
    /// [`TensorKernel::params_flat`]).
    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params_flat().len() {
            return Err(shape_err("flat parameter vector has the wrong length"));
        }
        let mut it = values.iter();
        match self {
            TensorKernel::Separable { base, core, .. } => {
                for l in base.lengthscales.iter_mut() {
                    *l = *it.next().unwrap();
                }
                let np = core.param_count();
                let vals: Vec<f64> = it.by_ref().take(np).copied().collect();
                core.set_params(&vals);
            }
            TensorKernel::NonSeparable { cores, bases, .. } => {
                for group in bases.iter_mut() {
                    for b in group.iter_mut() {
                        for l in b.lengthscales.iter_mut() {
                            *l = *it.next().unwrap();
                        }
                    }
                }
                for core in cores.iter_mut() {
                    let np = core.param_count();
                    let vals: Vec<f64> = it.by_ref().take(np).copied().collect();
                    core.set_params(&vals);
                }
            }
        }
        Ok(())
    }

    /// Evaluates the `T x T` covariance block for an input pair.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let compiled = CompiledKernel::new(self)?;
        Ok(compiled.eval(x, y))
    }

    /// Analytic partial derivative of [`TensorKernel::eval`] with respect to
    /// one scalar hyperparameter.
    pub fn eval_grad(&self, x: &[f64], y: &[f64], which: KernelParamId) -> Result<DMatrix<f64>> {
        // Validate the id up front so unknown ids error rather than zero out.
        self.get_param(which)?;
        let compiled = CompiledKernel::new(self)?;
        Ok(compiled.eval_grad(x, y, which))
    }

    /// Assembles the `nT x nT` Gram matrix with block `(i, j)` equal to
    /// `eval(x_i, x_j)`; outer index is the observation, inner index the
    /// tensor entry.
    pub fn gram(&self, inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let compiled = CompiledKernel::new(self)?;
        let t = self.shape().total();
        let n = inputs.len();
        let mut out = DMatrix::zeros(n * t, n * t);
        for i in 0..n {
            for j in i..n {
                let block = compiled.eval(&inputs[i], &inputs[j]);
                for p in 0..t {
                    for q in 0..t {
                        out[(i * t + p, j * t + q)] = block[(p, q)];
                        out[(j * t + q, i * t + p)] = block[(p, q)];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Precomputed materializations shared by every pairwise evaluation of one
/// kernel instance.
pub(crate) struct CompiledKernel<'k> {
    kernel: &'k TensorKernel,
    /// `vec(A_l)` per core (one entry for the separable class).
    pub(crate) core_vecs: Vec<DVector<f64>>,
    /// Materialization Jacobians, row-major `T x P_l`.
    jacobians: Vec<Vec<f64>>,
}

impl<'k> CompiledKernel<'k> {
    pub(crate) fn new(kernel: &'k TensorKernel) -> Result<Self> {
        kernel.validate()?;
        let shape = kernel.shape();
        let mut core_vecs = Vec::new();
        let mut jacobians = Vec::new();
        let cores: Vec<&CoreTensorParam> = match kernel {
            TensorKernel::Separable { core, .. } => vec![core],
            TensorKernel::NonSeparable { cores, .. } => cores.iter().collect(),
        };
        for core in cores {
            let (value, jac) = core.materialize_with_jacobian(shape)?;
            core_vecs.push(DVector::from_vec(value));
            jacobians.push(jac);
        }
        Ok(Self {
            kernel,
            core_vecs,
            jacobians,
        })
    }

    /// Scalar base-kernel mixture per mode: `k(x,y)` for separable,
    /// `sum_j k_{lj}(x,y)` per mode `l` for non-separable.
    pub(crate) fn mode_scalars(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match self.kernel {
            TensorKernel::Separable { base, .. } => vec![base.eval_unchecked(x, y)],
            TensorKernel::NonSeparable { bases, .. } => bases
                .iter()
                .map(|group| group.iter().map(|b| b.eval_unchecked(x, y)).sum())
                .collect(),
        }
    }

    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let t = self.kernel.shape().total();
        let scalars = self.mode_scalars(x, y);
        let mut out = DMatrix::zeros(t, t);
        for (a, &s) in self.core_vecs.iter().zip(&scalars) {
            if s != 0.0 {
                out.syger(s, a, a, 1.0);
            }
        }
        // syger fills one triangle; mirror it.
        for p in 0..t {
            for q in (p + 1)..t {
                out[(p, q)] = out[(q, p)];
            }
        }
        out
    }

    /// Selected sub-block of `eval`, rows `rows` by columns `cols`.
    pub(crate) fn eval_selected(
        &self,
        x: &[f64],
        y: &[f64],
        rows: &[usize],
        cols: &[usize],
    ) -> DMatrix<f64> {
        let scalars = self.mode_scalars(x, y);
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (a, &s) in self.core_vecs.iter().zip(&scalars) {
            if s == 0.0 {
                continue;
            }
            for (ri, &r) in rows.iter().enumerate() {
                let ar = a[r] * s;
                for (ci, &c) in cols.iter().enumerate() {
                    out[(ri, ci)] += ar * a[c];
                }
            }
        }
        out
    }

    pub(crate) fn eval_grad(&self, x: &[f64], y: &[f64], which: KernelParamId) -> DMatrix<f64> {
        let t = self.kernel.shape().total();
        let mut out = DMatrix::zeros(t, t);
        self.accumulate_grad_selected(
            x,
            y,
            which,
            &(0..t).collect::<Vec<_>>(),
            &(0..t).collect::<Vec<_>>(),
            &mut out,
        );
        out
    }

    /// Writes the selected block of `d eval / d which` into `out`.
    pub(crate) fn accumulate_grad_selected(
        &self,
        x: &[f64],
        y: &[f64],
        which: KernelParamId,
        rows: &[usize],
        cols: &[usize],
        out: &mut DMatrix<f64>,
    ) {
        match which {
            KernelParamId::Lengthscale { mode, member, dim } => {
                let dk = match self.kernel {
                    TensorKernel::Separable { base, .. } => {
                        base.grad_lengthscales(x, y).expect("validated dims")[dim]
                    }
                    TensorKernel::NonSeparable { bases, .. } => bases[mode][member]
                        .grad_lengthscales(x, y)
                        .expect("validated dims")[dim],
                };
                let a = &self.core_vecs[mode];
                for (ri, &r) in rows.iter().enumerate() {
                    for (ci, &c) in cols.iter().enumerate() {
                        out[(ri, ci)] = a[r] * a[c] * dk;
                    }
                }
            }
            KernelParamId::Core { core, index } => {
                let s = self.mode_scalars(x, y)[core];
                let a = &self.core_vecs[core];
                let np = self.jacobians[core].len() / a.len();
                let jac = &self.jacobians[core];
                // d(a a^T)/dp = g a^T + a g^T with g the Jacobian column.
                for (ri, &r) in rows.iter().enumerate() {
                    let g_r = jac[r * np + index];
                    for (ci, &c) in cols.iter().enumerate() {
                        let g_c = jac[c * np + index];
                        out[(ri, ci)] = (g_r * a[c] + a[r] * g_c) * s;
                    }
                }
            }
        }
    }
}
