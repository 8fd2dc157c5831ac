//! Dense multi-mode tensors, canonical vectorization, and the low-rank
//! parametrizations (full / CP / tensor-train) used for kernel core tensors.
//!
//! The canonical layout is first-mode-fastest: entry `(i_1, ..., i_m)` of a
//! tensor with mode sizes `(t_1, ..., t_m)` lands at flat offset
//! `i_1 + t_1 (i_2 + t_2 (i_3 + ...))`. For matrices this is column-major,
//! which is what makes the separable Gram matrix a plain Kronecker product.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::Result;

/// Mode sizes `(t_1, ..., t_m)` of an `m`-mode tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    /// Builds a shape from mode sizes. Every mode must be at least 1 and
    /// there must be at least one mode.
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(shape_err("a tensor needs at least one mode"));
        }
        if dims.iter().any(|&t| t == 0) {
            return Err(shape_err(format!("zero-sized mode in {dims:?}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    /// Shape of a scalar-output problem: one mode of size 1.
    pub fn scalar() -> Self {
        Self { dims: vec![1] }
    }

    /// Mode sizes.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of modes `m`.
    pub fn mode_count(&self) -> usize {
        self.dims.len()
    }

    /// Total number of entries `T = prod t_l`.
    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat offset of a multi-index under the first-mode-fastest layout.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (i, t) in index.iter().zip(&self.dims) {
            debug_assert!(i < t);
            off += i * stride;
            stride *= t;
        }
        off
    }

    /// Multi-index of a flat offset; inverse of [`TensorShape::offset`].
    pub fn multi_index(&self, mut offset: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dims.len());
        for &t in &self.dims {
            idx.push(offset % t);
            offset /= t;
        }
        idx
    }

    /// Iterates over all multi-indices in canonical (flat) order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.total()).map(|off| self.multi_index(off))
    }
}

/// An `m`-mode tensor stored flat in the canonical layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Wraps flat data already in canonical order.
    pub fn from_vec(shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.total() {
            return Err(shape_err(format!(
                "data length {} does not match shape total {}",
                data.len(),
                shape.total()
            )));
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: TensorShape) -> Self {
        let total = shape.total();
        Self {
            shape,
            data: vec![0.0; total],
        }
    }

    /// Builds a tensor entry by entry from its multi-index.
    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let data = (0..shape.total())
            .map(|off| f(&shape.multi_index(off)))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.shape.offset(index)]
    }

    pub fn get_mut(&mut self, index: &[usize]) -> &mut f64 {
        &mut self.data[self.shape.offset(index)]
    }

    /// Canonical vectorization: the flat entries in first-mode-fastest order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Consumes the tensor, returning the canonical flat data.
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Canonical vectorization of a tensor.
pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.as_slice().to_vec()
}

/// Inverse of [`vectorize`]: interprets flat data as a tensor of `shape`.
pub fn unvectorize(shape: TensorShape, data: Vec<f64>) -> Result<DenseTensor> {
    DenseTensor::from_vec(shape, data)
}

/// Parametrization of a kernel core tensor.
///
/// `Full` stores every entry; `Cp` stores `R` rank-1 terms with one factor
/// vector per mode; `Tt` stores a tensor-train with three-mode cores of
/// shape `r_{j-1} x t_j x r_j` and boundary ranks `r_0 = r_m = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoreTensorParam {
    Full {
        entries: Vec<f64>,
    },
    Cp {
        /// `factors[r][i]` is the mode-`i` vector of the `r`-th rank-1 term,
        /// of length `t_i`.
        factors: Vec<Vec<Vec<f64>>>,
    },
    Tt {
        /// Ranks `(r_0, ..., r_m)` with `r_0 = r_m = 1`.
        ranks: Vec<usize>,
        /// `cores[j]` holds `r_{j-1} * t_j * r_j` entries, laid out with the
        /// leading rank fastest: `G_j[alpha, t, beta]` at
        /// `alpha + r_{j-1} (t + t_j beta)`.
        cores: Vec<Vec<f64>>,
    },
}

impl CoreTensorParam {
    /// Full parametrization with all entries zero.
    pub fn full_zeros(shape: &TensorShape) -> Self {
        CoreTensorParam::Full {
            entries: vec![0.0; shape.total()],
        }
    }

    /// CP parametrization of the given rank with all factors zero.
    pub fn cp_zeros(shape: &TensorShape, rank: usize) -> Self {
        let factors = (0..rank)
            .map(|_| shape.dims().iter().map(|&t| vec![0.0; t]).collect())
            .collect();
        CoreTensorParam::Cp { factors }
    }

    /// TT parametrization with the given ranks and all cores zero.
    pub fn tt_zeros(shape: &TensorShape, ranks: &[usize]) -> Self {
        let cores = shape
            .dims()
            .iter()
            .enumerate()
            .map(|(j, &t)| vec![0.0; ranks[j] * t * ranks[j + 1]])
            .collect();
        CoreTensorParam::Tt {
            ranks: ranks.to_vec(),
            cores,
        }
    }

    /// Checks internal consistency against a target shape.
    pub fn validate(&self, shape: &TensorShape) -> Result<()> {
        match self {
            CoreTensorParam::Full { entries } => {
                if entries.len() != shape.total() {
                    return Err(shape_err(format!(
                        "full core has {} entries, shape needs {}",
                        entries.len(),
                        shape.total()
                    )));
                }
            }
            CoreTensorParam::Cp { factors } => {
                for (r, term) in factors.iter().enumerate() {
                    if term.len() != shape.mode_count() {
                        return Err(shape_err(format!(
                            "CP term {r} has {} factors, expected {}",
                            term.len(),
                            shape.mode_count()
                        )));
                    }
                    for (i, (factor, &t)) in term.iter().zip(shape.dims()).enumerate() {
                        if factor.len() != t {
                            return Err(shape_err(format!(
                                "CP factor ({r},{i}) has length {}, mode size is {t}",
                                factor.len()
                            )));
                        }
                    }
                }
            }
            CoreTensorParam::Tt { ranks, cores } => {
                let m = shape.mode_count();
                if ranks.len() != m + 1 {
                    return Err(shape_err(format!(
                        "TT needs {} ranks for {m} modes, got {}",
                        m + 1,
                        ranks.len()
                    )));
                }
                if ranks[0] != 1 || ranks[m] != 1 {
                    return Err(shape_err("TT boundary ranks must be 1"));
                }
                if cores.len() != m {
                    return Err(shape_err(format!(
                        "TT has {} cores, expected {m}",
                        cores.len()
                    )));
                }
                for (j, core) in cores.iter().enumerate() {
                    let expect = ranks[j] * shape.dims()[j] * ranks[j + 1];
                    if core.len() != expect {
                        return Err(shape_err(format!(
                            "TT core {j} has {} entries, expected {expect}",
                            core.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of free parameters: `T` for full, `R * sum t_i` for CP and
    /// `sum_j r_{j-1} t_j r_j` for TT.
    pub fn param_count(&self) -> usize {
        match self {
            CoreTensorParam::Full { entries } => entries.len(),
            CoreTensorParam::Cp { factors } => factors
                .iter()
                .map(|term| term.iter().map(Vec::len).sum::<usize>())
                .sum(),
            CoreTensorParam::Tt { cores, .. } => cores.iter().map(Vec::len).sum(),
        }
    }

    /// Flat view of the free parameters, in the order used by
    /// [`CoreTensorParam::materialize_with_jacobian`] columns.
    pub fn params(&self) -> Vec<f64> {
        match self {
            CoreTensorParam::Full { entries } => entries.clone(),
            CoreTensorParam::Cp { factors } => factors
                .iter()
                .flat_map(|term| term.iter().flatten().copied())
                .collect(),
            CoreTensorParam::Tt { cores, .. } => cores.iter().flatten().copied().collect(),
        }
    }

    /// Overwrites the free parameters from a flat slice (inverse of
    /// [`CoreTensorParam::params`]).
    pub fn set_params(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.param_count());
        let mut it = values.iter();
        match self {
            CoreTensorParam::Full { entries } => {
                for e in entries.iter_mut() {
                    *e = *it.next().unwrap();
                }
            }
            CoreTensorParam::Cp { factors } => {
                for term in factors.iter_mut() {
                    for factor in term.iter_mut() {
                        for v in factor.iter_mut() {
                            *v = *it.next().unwrap();
                        }
                    }
                }
            }
            CoreTensorParam::Tt { cores, .. } => {
                for core in cores.iter_mut() {
                    for v in core.iter_mut() {
                        *v = *it.next().unwrap();
                    }
                }
            }
        }
    }

    /// Reconstructs the core tensor as a canonical flat vector of length `T`.
    pub fn materialize(&self, shape: &TensorShape) -> Result<Vec<f64>> {
        self.validate(shape)?;
        let total = shape.total();
        match self {
            CoreTensorParam::Full { entries } => Ok(entries.clone()),
            CoreTensorParam::Cp { factors } => {
                let mut out = vec![0.0; total];
                for term in factors {
                    for (off, out_v) in out.iter_mut().enumerate() {
                        let idx = shape.multi_index(off);
                        let mut prod = 1.0;
                        for (l, &i) in idx.iter().enumerate() {
                            prod *= term[l][i];
                        }
                        *out_v += prod;
                    }
                }
                Ok(out)
            }
            CoreTensorParam::Tt { ranks, cores } => {
                let mut out = vec![0.0; total];
                for (off, out_v) in out.iter_mut().enumerate() {
                    let idx = shape.multi_index(off);
                    // Left-to-right chain: row vector times each core slice.
                    let mut row = vec![1.0];
                    for (j, &i) in idx.iter().enumerate() {
                        let (r_in, r_out) = (ranks[j], ranks[j + 1]);
                        let mut next = vec![0.0; r_out];
                        for (b, next_b) in next.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for (a, row_a) in row.iter().enumerate() {
                                acc += row_a * cores[j][a + r_in * (i + shape.dims()[j] * b)];
                            }
                            *next_b = acc;
                        }
                        row = next;
                    }
                    *out_v = row[0];
                }
                Ok(out)
            }
        }
    }

    /// Materializes the core and the Jacobian of the materialization:
    /// column `p` of the returned matrix (stored row-major as `T` rows of
    /// `param_count` entries) is the derivative of the flat core vector with
    /// respect to the `p`-th free parameter.
    pub fn materialize_with_jacobian(&self, shape: &TensorShape) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate(shape)?;
        let total = shape.total();
        let np = self.param_count();
        let value = self.materialize(shape)?;
        let mut jac = vec![0.0; total * np];
        match self {
            CoreTensorParam::Full { .. } => {
                for i in 0..total {
                    jac[i * np + i] = 1.0;
                }
            }
            CoreTensorParam::Cp { factors } => {
                let m = shape.mode_count();
                // Parameter offset of factor (r, l): sum of earlier term sizes.
                let term_size: usize = shape.dims().iter().sum();
                let mode_off: Vec<usize> = shape
                    .dims()
                    .iter()
                    .scan(0, |acc, &t| {
                        let cur = *acc;
                        *acc += t;
                        Some(cur)
                    })
                    .collect();
                for (off, row) in jac.chunks_mut(np).enumerate() {
                    let idx = shape.multi_index(off);
                    for (r, term) in factors.iter().enumerate() {
                        // prefix[l] = prod_{l' < l} factor value, suffix likewise.
                        let vals: Vec<f64> =
                            (0..m).map(|l| term[l][idx[l]]).collect();
                        let mut prefix = vec![1.0; m];
                        for l in 1..m {
                            prefix[l] = prefix[l - 1] * vals[l - 1];
                        }
                        let mut suffix = vec![1.0; m];
                        for l in (0..m - 1).rev() {
                            suffix[l] = suffix[l + 1] * vals[l + 1];
                        }
                        for l in 0..m {
                            let p = r * term_size + mode_off[l] + idx[l];
                            row[p] += prefix[l] * suffix[l];
                        }
                    }
                }
            }
            CoreTensorParam::Tt { ranks, cores } => {
                let m = shape.mode_count();
                let core_off: Vec<usize> = cores
                    .iter()
                    .scan(0, |acc, c| {
                        let cur = *acc;
                        *acc += c.len();
                        Some(cur)
                    })
                    .collect();
                for (off, row) in jac.chunks_mut(np).enumerate() {
                    let idx = shape.multi_index(off);
                    // left[j]: 1 x r_j row vector of the partial chain product
                    // over cores 0..j; right[j]: r_j x 1 column over cores j..m.
                    let mut left: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
                    left.push(vec![1.0]);
                    for (j, &i) in idx.iter().enumerate() {
                        let (r_in, r_out) = (ranks[j], ranks[j + 1]);
                        let prev = &left[j];
                        let mut next = vec![0.0; r_out];
                        for (b, next_b) in next.iter_mut().enumerate() {
                            for (a, prev_a) in prev.iter().enumerate() {
                                *next_b +=
                                    prev_a * cores[j][a + r_in * (i + shape.dims()[j] * b)];
                            }
                        }
                        left.push(next);
                    }
                    let mut right: Vec<Vec<f64>> = vec![Vec::new(); m + 1];
                    right[m] = vec![1.0];
                    for j in (0..m).rev() {
                        let (r_in, _r_out) = (ranks[j], ranks[j + 1]);
                        let i = idx[j];
                        let nxt = right[j + 1].clone();
                        let mut cur = vec![0.0; r_in];
                        for (a, cur_a) in cur.iter_mut().enumerate() {
                            for (b, nxt_b) in nxt.iter().enumerate() {
                                *cur_a +=
                                    cores[j][a + r_in * (i + shape.dims()[j] * b)] * nxt_b;
                            }
                        }
                        right[j] = cur;
                    }
                    for j in 0..m {
                        let (r_in, _r_out) = (ranks[j], ranks[j + 1]);
                        for (a, l_a) in left[j].iter().enumerate() {
                            for (b, r_b) in right[j + 1].iter().enumerate() {
                                let p = core_off[j] + a + r_in * (idx[j] + shape.dims()[j] * b);
                                row[p] = l_a * r_b;
                            }
                        }
                    }
                }
            }
        }
        Ok((value, jac))
    }

    /// Scales the materialized tensor by `c` by rescaling one parameter
    /// group (full entries, every CP mode-1 factor, or the first TT core).
    pub fn scale(&mut self, c: f64) {
        match self {
            CoreTensorParam::Full { entries } => {
                for e in entries.iter_mut() {
                    *e *= c;
                }
            }
            CoreTensorParam::Cp { factors } => {
                for term in factors.iter_mut() {
                    for v in term[0].iter_mut() {
                        *v *= c;
                    }
                }
            }
            CoreTensorParam::Tt { cores, .. } => {
                for v in cores[0].iter_mut() {
                    *v *= c;
                }
            }
        }
    }
}
