//! Empirical RKHS inner products and data-driven Taylor projection.
//!
//! With `G` the Gram matrix on the samples, `⟨f, g⟩_H ≈ fᵀ G⁻¹ g` and the
//! orthogonal projection onto the monomial subspace has coefficients
//! `fᵀ G⁻¹ eᵢ`.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};

use crate::basis::MonomialBasis;
use crate::edmd::solve_normal;
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, InversionPolicy};

/// Values of a function at a set of sample points (rows of `points`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    points: DMatrix<f64>,
    values: DVector<f64>,
}

impl SampledFunction {
    pub fn new(points: DMatrix<f64>, values: DVector<f64>) -> Result<Self> {
        if points.nrows() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "sampled function values vs points",
                expected: points.nrows(),
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sampled value {k} is not finite"
            )));
        }
        Ok(Self { points, values })
    }

    /// Samples `f` at every row of `points`.
    pub fn from_fn(points: DMatrix<f64>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = DVector::from_iterator(
            points.nrows(),
            (0..points.nrows()).map(|k| {
                let row: Vec<f64> = points.row(k).iter().copied().collect();
                f(&row)
            }),
        );
        Self::new(points, values)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Coefficients of a function in a weighted monomial basis.
///
/// The represented function is `Σᵢ cᵢ · βᵢ · x^{α(i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorCoefficients<T = f64> {
    basis: MonomialBasis,
    coefficients: DVector<T>,
}

impl<T: ComplexField<RealField = f64> + Copy> TaylorCoefficients<T> {
    pub fn new(basis: MonomialBasis, coefficients: DVector<T>) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                context: "Taylor coefficients vs basis size",
                expected: basis.len(),
                found: coefficients.len(),
            });
        }
        Ok(Self {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<T> {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> DVector<T> {
        self.coefficients
    }

    /// Evaluates the expansion at one point (already translated).
    pub fn evaluate_at(&self, point: &[f64]) -> T {
        let mut acc = T::zero();
        for ((alpha, w), c) in self
            .basis
            .indices()
            .iter()
            .zip(self.basis.weights())
            .zip(self.coefficients.iter())
        {
            acc += *c * T::from_real(w * alpha.monomial(point));
        }
        acc
    }
}

impl TaylorCoefficients<f64> {
    pub fn to_complex(&self) -> TaylorCoefficients<Complex<f64>> {
        TaylorCoefficients {
            basis: self.basis.clone(),
            coefficients: self.coefficients.map(|c| Complex::new(c, 0.0)),
        }
    }
}

fn check_against_gram(f: &SampledFunction, g: &GramMatrix) -> Result<()> {
    if f.len() != g.size() {
        return Err(Error::DimensionMismatch {
            context: "sampled function length vs Gram size",
            expected: g.size(),
            found: f.len(),
        });
    }
    Ok(())
}

/// `fᵀ G⁻¹ g`.
pub fn rkhs_inner_product(
    f: &SampledFunction,
    g: &SampledFunction,
    gram: &GramMatrix,
    policy: InversionPolicy,
) -> Result<f64> {
    check_against_gram(f, gram)?;
    check_against_gram(g, gram)?;
    let rhs = DMatrix::from_column_slice(g.len(), 1, g.values().as_slice());
    let solved = gram.apply_inverse(&rhs, policy)?;
    Ok(f.values().dot(&solved.column(0)))
}

/// Coefficient `i` is `fᵀ G⁻¹ eᵢ`, with `eᵢ` the i-th basis function sampled
/// at the Gram points.
pub fn taylor_project(
    f: &SampledFunction,
    basis: &MonomialBasis,
    gram: &GramMatrix,
    policy: InversionPolicy,
) -> Result<TaylorCoefficients> {
    check_against_gram(f, gram)?;
    if basis.dimension() != f.points().ncols() {
        return Err(Error::DimensionMismatch {
            context: "basis dimension vs sample points",
            expected: f.points().ncols(),
            found: basis.dimension(),
        });
    }
    let rhs = DMatrix::from_column_slice(f.len(), 1, f.values().as_slice());
    let c = gram.basis_projection(basis, &rhs, policy)?;
    TaylorCoefficients::new(basis.clone(), c.column(0).into_owned())
}

/// Oblique variant `(XᵀG⁻¹X)⁻¹ XᵀG⁻¹ f`, which reproduces any `f` in the
/// span of the basis exactly even when the basis is far from orthonormal in
/// the empirical inner product (few samples).
pub fn taylor_project_nonortho(
    f: &SampledFunction,
    basis: &MonomialBasis,
    gram: &GramMatrix,
    policy: InversionPolicy,
) -> Result<TaylorCoefficients> {
    let ortho = taylor_project(f, basis, gram, policy)?;
    let xgx = gram.basis_gram(basis, policy)?;
    let rhs = DMatrix::from_column_slice(basis.len(), 1, ortho.coefficients().as_slice());
    let c = solve_normal(&xgx, &rhs)?;
    TaylorCoefficients::new(basis.clone(), c.column(0).into_owned())
}
