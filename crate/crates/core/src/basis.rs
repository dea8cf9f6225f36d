//! Graded multi-indices and weighted monomial bases.
//!
//! Monomials are ordered by total degree, and within one degree by reverse
//! lexicographic order on the exponent vector, so in two dimensions the
//! degree-2 block reads `x₁², x₁x₂, x₂²`. Every block of equal total degree
//! is contiguous, which is what the spectral routines rely on.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Exponent vector `α ∈ ℕⁿ` of a monomial `x^α`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    exponents: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Result<Self> {
        if exponents.is_empty() {
            return Err(Error::InvalidArgument(
                "a multi-index needs at least one exponent".into(),
            ));
        }
        Ok(Self { exponents })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            exponents: vec![0; n.max(1)],
        }
    }

    /// The unit multi-index with a one at position `j`.
    pub fn unit(n: usize, j: usize) -> Self {
        let mut exponents = vec![0; n];
        exponents[j] = 1;
        Self { exponents }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn dimension(&self) -> usize {
        self.exponents.len()
    }

    /// `|α| = α₁ + ⋯ + αₙ`
    pub fn total_degree(&self) -> usize {
        self.exponents.iter().map(|&a| a as usize).sum()
    }

    /// `α! = ∏ αᵢ!`
    pub fn factorial(&self) -> f64 {
        self.exponents
            .iter()
            .map(|&a| (1..=a).map(f64::from).product::<f64>())
            .product()
    }

    /// `x^α` with exact integer powers. `point` must have length `n`.
    pub fn monomial(&self, point: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(point)
            .map(|(&a, &x)| x.powi(a as i32))
            .product()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, a) in self.exponents.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// Binomial coefficient `C(n, k)`, exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Pushes all exponent vectors of total degree `degree` in `n` variables, in
/// reverse lexicographic order.
fn push_degree(n: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if n == 1 {
        prefix.push(degree);
        out.push(MultiIndex {
            exponents: prefix.clone(),
        });
        prefix.pop();
        return;
    }
    for first in (0..=degree).rev() {
        prefix.push(first);
        push_degree(n - 1, degree - first, prefix, out);
        prefix.pop();
    }
}

/// All multi-indices of exactly total degree `degree`, reverse lexicographic.
pub fn multiindices_of_degree(n: usize, degree: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(binomial(n + degree - 1, degree));
    push_degree(n, degree as u32, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Every multi-index with `|α| ≤ d` in graded order. The result has
/// `C(n+d, d)` entries.
pub fn enumerate_multiindices(n: usize, d: usize) -> Result<Vec<MultiIndex>> {
    if n < 1 {
        return Err(Error::InvalidArgument(format!(
            "state dimension must be at least 1, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(binomial(n + d, d));
    for r in 0..=d {
        push_degree(n, r as u32, &mut Vec::with_capacity(n), &mut out);
    }
    Ok(out)
}

/// A contiguous run of basis functions sharing one total degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeBlock {
    pub degree: usize,
    /// Zero-based index of the first basis function of the block.
    pub start: usize,
    pub size: usize,
}

impl DegreeBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.size
    }
}

/// Anything that can be evaluated on a point set to give a data matrix.
///
/// Rows of `points` are samples; the returned matrix has one row per sample
/// and one column per basis function.
pub trait FunctionBasis {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dimension of the points the functions accept.
    fn dimension(&self) -> usize;

    fn evaluate(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// Weighted monomials `{β_α x^α : |α| ≤ d}` in graded order.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    dimension: usize,
    max_degree: usize,
    indices: Vec<MultiIndex>,
    weights: Vec<f64>,
}

impl MonomialBasis {
    /// Unit weights: the orthonormal basis of the Szegő (Hardy) space.
    pub fn new(n: usize, d: usize) -> Result<Self> {
        let indices = enumerate_multiindices(n, d)?;
        let weights = vec![1.0; indices.len()];
        Ok(Self {
            dimension: n,
            max_degree: d,
            indices,
            weights,
        })
    }

    /// Weights `β_α = 1/√(α!)`, orthonormal for the kernel `exp(xᵀy)`.
    pub fn exponential(n: usize, d: usize) -> Result<Self> {
        let indices = enumerate_multiindices(n, d)?;
        let weights = indices.iter().map(|a| 1.0 / a.factorial().sqrt()).collect();
        Ok(Self {
            dimension: n,
            max_degree: d,
            indices,
            weights,
        })
    }

    /// Custom positive weights, one per graded multi-index.
    pub fn with_weights(n: usize, d: usize, weights: Vec<f64>) -> Result<Self> {
        let indices = enumerate_multiindices(n, d)?;
        if weights.len() != indices.len() {
            return Err(Error::DimensionMismatch {
                context: "basis weights",
                expected: indices.len(),
                found: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "basis weights must be positive and finite, got {w}"
            )));
        }
        Ok(Self {
            dimension: n,
            max_degree: d,
            indices,
            weights,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Entry `(k, i)` is `β_{α(i)} · points[k]^{α(i)}`.
    pub fn evaluate(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != self.dimension {
            return Err(Error::DimensionMismatch {
                context: "evaluate_basis point length",
                expected: self.dimension,
                found: points.ncols(),
            });
        }
        let m = points.nrows();
        let mut out = DMatrix::zeros(m, self.len());
        let mut row = vec![0.0; self.dimension];
        for k in 0..m {
            for (c, v) in row.iter_mut().enumerate() {
                *v = points[(k, c)];
            }
            for (i, (alpha, w)) in self.indices.iter().zip(&self.weights).enumerate() {
                out[(k, i)] = w * alpha.monomial(&row);
            }
        }
        Ok(out)
    }

    /// Partition of `0..N` into blocks of equal total degree.
    pub fn degree_offsets(&self) -> Vec<DegreeBlock> {
        let n = self.dimension;
        let mut start = 0;
        (0..=self.max_degree)
            .map(|r| {
                let size = binomial(n + r - 1, r);
                let block = DegreeBlock {
                    degree: r,
                    start,
                    size,
                };
                start += size;
                block
            })
            .collect()
    }

    /// Position of `alpha` in the graded order, if it belongs to the basis.
    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        if alpha.dimension() != self.dimension || alpha.total_degree() > self.max_degree {
            return None;
        }
        let block = self.degree_offsets()[alpha.total_degree()];
        self.indices[block.range()]
            .iter()
            .position(|a| a == alpha)
            .map(|p| block.start + p)
    }

    pub fn degree_of(&self, i: usize) -> usize {
        self.indices[i].total_degree()
    }
}

impl FunctionBasis for MonomialBasis {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        MonomialBasis::evaluate(self, points)
    }
}
