//! Finite-section Koopman matrices: analytic EDMD and the comparison baselines.
//!
//! All fits translate the snapshot pairs by the equilibrium exactly once, up
//! front. Callers pass data in original coordinates.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::basis::{DegreeBlock, FunctionBasis, MonomialBasis};
use crate::error::{Error, Result, SampleRole};
use crate::kernel::{
    kernel_block, max_translated_magnitude, GramMatrix, InversionPolicy, KernelFamily, KernelSpec,
};
use crate::linalg::lstsq_min_norm;

/// Relative singular-value cutoff of the least-squares baselines.
const LSTSQ_RTOL: f64 = 1e-13;

/// Data pairs `(x_k, y_k = φ(x_k))`, one pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    xs: DMatrix<f64>,
    ys: DMatrix<f64>,
    dt: Option<f64>,
    equilibrium: DVector<f64>,
}

impl SnapshotSet {
    /// Pairs with the equilibrium at the origin.
    pub fn new(xs: DMatrix<f64>, ys: DMatrix<f64>, dt: Option<f64>) -> Result<Self> {
        let n = xs.ncols();
        Self::with_equilibrium(xs, ys, dt, DVector::zeros(n))
    }

    pub fn with_equilibrium(
        xs: DMatrix<f64>,
        ys: DMatrix<f64>,
        dt: Option<f64>,
        equilibrium: DVector<f64>,
    ) -> Result<Self> {
        if xs.nrows() == 0 || xs.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "a snapshot set needs at least one pair of nonzero dimension".into(),
            ));
        }
        if ys.shape() != xs.shape() {
            return Err(Error::DimensionMismatch {
                context: "snapshot ys vs xs",
                expected: xs.nrows() * xs.ncols(),
                found: ys.nrows() * ys.ncols(),
            });
        }
        if equilibrium.len() != xs.ncols() {
            return Err(Error::DimensionMismatch {
                context: "equilibrium vs state dimension",
                expected: xs.ncols(),
                found: equilibrium.len(),
            });
        }
        if let Some(dt) = dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sampling time must be positive, got {dt}"
                )));
            }
        }
        Ok(Self {
            xs,
            ys,
            dt,
            equilibrium,
        })
    }

    pub fn xs(&self) -> &DMatrix<f64> {
        &self.xs
    }

    pub fn ys(&self) -> &DMatrix<f64> {
        &self.ys
    }

    pub fn dt(&self) -> Option<f64> {
        self.dt
    }

    pub fn equilibrium(&self) -> &DVector<f64> {
        &self.equilibrium
    }

    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }

    pub fn dimension(&self) -> usize {
        self.xs.ncols()
    }

    /// Same pairs, different equilibrium.
    pub fn at_equilibrium(&self, equilibrium: DVector<f64>) -> Result<Self> {
        Self::with_equilibrium(self.xs.clone(), self.ys.clone(), self.dt, equilibrium)
    }

    /// `(xs − x*, ys − x*)`
    pub fn translated(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let shift = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - self.equilibrium[j])
        };
        (shift(&self.xs), shift(&self.ys))
    }

    /// Largest `|coordinate − x*|` over both xs and ys.
    pub fn max_translated_magnitude(&self) -> f64 {
        max_translated_magnitude(&self.xs, &self.equilibrium)
            .max(max_translated_magnitude(&self.ys, &self.equilibrium))
    }

    /// Maps every point `p ↦ x* + ρ (p − x*)`. Eigenvalues are invariant under
    /// this conjugacy; eigenfunction coefficients pick up `ρ^{|α|}`.
    pub fn rescaled(&self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rescale factor must be positive, got {rho}"
            )));
        }
        let (zx, zy) = self.translated();
        let back = |z: DMatrix<f64>| {
            DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
                self.equilibrium[j] + rho * z[(i, j)]
            })
        };
        Self::with_equilibrium(back(zx), back(zy), self.dt, self.equilibrium.clone())
    }

    /// Factor `margin / max |p − x*|` that brings all points inside a box of
    /// half-width `margin`. Returns 1 when every point sits on the equilibrium.
    pub fn auto_rescale_factor(&self, margin: f64) -> f64 {
        let m = self.max_translated_magnitude();
        if m > 0.0 {
            margin / m
        } else {
            1.0
        }
    }

    /// Drops pairs where either point leaves the open box of half-width
    /// `radius` around the equilibrium. Returns the kept set and the number dropped.
    pub fn retain_in_domain(&self, radius: f64) -> Result<(Self, usize)> {
        let (zx, zy) = self.translated();
        let inside = |z: &DMatrix<f64>, k: usize| z.row(k).iter().all(|v| v.abs() < radius);
        let keep: Vec<usize> = (0..self.len())
            .filter(|&k| inside(&zx, k) && inside(&zy, k))
            .collect();
        let dropped = self.len() - keep.len();
        if keep.is_empty() {
            return Err(Error::InvalidArgument(
                "no snapshot pair lies inside the kernel domain".into(),
            ));
        }
        let pick =
            |m: &DMatrix<f64>| DMatrix::from_fn(keep.len(), m.ncols(), |i, j| m[(keep[i], j)]);
        Ok((
            Self::with_equilibrium(
                pick(&self.xs),
                pick(&self.ys),
                self.dt,
                self.equilibrium.clone(),
            )?,
            dropped,
        ))
    }
}

/// How a Koopman matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    AnalyticEdmd,
    AnalyticEdmdNonOrtho,
    Edmd,
    KernelEdmd,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::AnalyticEdmd => "analytic-EDMD",
            Method::AnalyticEdmdNonOrtho => "analytic-EDMD-nonortho",
            Method::Edmd => "EDMD",
            Method::KernelEdmd => "kernel-EDMD",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic-EDMD" => Ok(Method::AnalyticEdmd),
            "analytic-EDMD-nonortho" => Ok(Method::AnalyticEdmdNonOrtho),
            "EDMD" => Ok(Method::Edmd),
            "kernel-EDMD" => Ok(Method::KernelEdmd),
            other => Err(Error::InvalidArgument(format!(
                "unknown method tag {other:?}"
            ))),
        }
    }
}

/// `N×N` finite section on a graded monomial basis.
///
/// Column `j` holds the coefficients of `K e_j` in the basis, so a coefficient
/// vector `v` of an eigenfunction satisfies `K v = μ v`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanMatrix {
    values: DMatrix<f64>,
    basis: MonomialBasis,
    blocks: Vec<DegreeBlock>,
    method: Method,
}

impl KoopmanMatrix {
    pub fn new(values: DMatrix<f64>, basis: MonomialBasis, method: Method) -> Result<Self> {
        if values.nrows() != basis.len() || values.ncols() != basis.len() {
            return Err(Error::DimensionMismatch {
                context: "Koopman matrix vs basis size",
                expected: basis.len(),
                found: if values.nrows() != basis.len() {
                    values.nrows()
                } else {
                    values.ncols()
                },
            });
        }
        let blocks = basis.degree_offsets();
        Ok(Self {
            values,
            basis,
            blocks,
            method,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn blocks(&self) -> &[DegreeBlock] {
        &self.blocks
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// `K̄_rs`: rows of degree `r`, columns of degree `s`.
    pub fn block(&self, r: usize, s: usize) -> DMatrix<f64> {
        let br = self.blocks[r];
        let bs = self.blocks[s];
        self.values
            .view((br.start, bs.start), (br.size, bs.size))
            .into_owned()
    }

    pub fn max_degree(&self) -> usize {
        self.blocks.len() - 1
    }
}

fn check_basis_dimension(data: &SnapshotSet, basis_dim: usize) -> Result<()> {
    if basis_dim != data.dimension() {
        return Err(Error::DimensionMismatch {
            context: "basis dimension vs snapshot dimension",
            expected: data.dimension(),
            found: basis_dim,
        });
    }
    Ok(())
}

/// Translates the data, checks both point sets against the kernel domain and
/// builds the Gram matrix on the translated `xs`.
fn translated_gram(data: &SnapshotSet, family: KernelFamily) -> Result<(GramMatrix, DMatrix<f64>)> {
    let (zx, zy) = data.translated();
    let origin = KernelSpec::centered(family, data.dimension())?;
    let zx = origin.translate_points(&zx, SampleRole::Source)?;
    let zy = origin.translate_points(&zy, SampleRole::Image)?;
    Ok((GramMatrix::from_translated(family, zx), zy))
}

/// `K = Xᵀ G⁻¹ Y` on translated data.
pub fn fit_analytic_edmd(
    data: &SnapshotSet,
    basis: &MonomialBasis,
    family: KernelFamily,
    policy: InversionPolicy,
) -> Result<KoopmanMatrix> {
    check_basis_dimension(data, basis.dimension())?;
    let (gram, zy) = translated_gram(data, family)?;
    let y = basis.evaluate(&zy)?;
    let k = gram.basis_projection(basis, &y, policy)?;
    KoopmanMatrix::new(k, basis.clone(), Method::AnalyticEdmd)
}

/// `K = (Xᵀ G⁻¹ X)⁻¹ Xᵀ G⁻¹ Y` for an arbitrary basis, evaluated on the
/// translated data.
pub fn fit_analytic_edmd_nonortho_matrix<B: FunctionBasis + ?Sized>(
    data: &SnapshotSet,
    basis: &B,
    family: KernelFamily,
    policy: InversionPolicy,
) -> Result<DMatrix<f64>> {
    check_basis_dimension(data, basis.dimension())?;
    let (gram, zy) = translated_gram(data, family)?;
    let x = basis.evaluate(gram.points())?;
    let y = basis.evaluate(&zy)?;
    let gx = gram.apply_inverse(&x, policy)?;
    let gy = gram.apply_inverse(&y, policy)?;
    solve_normal(&(x.transpose() * gx), &(x.transpose() * gy))
}

/// Monomial-basis version of [`fit_analytic_edmd_nonortho_matrix`].
pub fn fit_analytic_edmd_nonortho(
    data: &SnapshotSet,
    basis: &MonomialBasis,
    family: KernelFamily,
    policy: InversionPolicy,
) -> Result<KoopmanMatrix> {
    check_basis_dimension(data, basis.dimension())?;
    let (gram, zy) = translated_gram(data, family)?;
    let y = basis.evaluate(&zy)?;
    let xgx = gram.basis_gram(basis, policy)?;
    let xgy = gram.basis_projection(basis, &y, policy)?;
    let k = solve_normal(&xgx, &xgy)?;
    KoopmanMatrix::new(k, basis.clone(), Method::AnalyticEdmdNonOrtho)
}

pub(crate) fn solve_normal(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = a.clone().singular_values();
    let smax = s.max();
    let smin = s.min();
    if !(smin > 1e-14 * smax) {
        return Err(Error::RankDeficient(format!(
            "basis Gram matrix XᵀG⁻¹X (singular values {smax:e} .. {smin:e})"
        )));
    }
    match a.clone().lu().solve(b) {
        Some(k) if k.iter().all(|v| v.is_finite()) => Ok(k),
        _ => Err(Error::RankDeficient("basis Gram matrix XᵀG⁻¹X".into())),
    }
}

/// Least-squares EDMD, `K = X⁺ Y` on translated data.
pub fn fit_edmd(data: &SnapshotSet, basis: &MonomialBasis) -> Result<KoopmanMatrix> {
    check_basis_dimension(data, basis.dimension())?;
    let (zx, zy) = data.translated();
    let x = basis.evaluate(&zx)?;
    let y = basis.evaluate(&zy)?;
    let k = lstsq_min_norm(&x, &y, LSTSQ_RTOL);
    KoopmanMatrix::new(k, basis.clone(), Method::Edmd)
}

/// Kernel EDMD representation `G⁻¹ A` (`M×M`), with `A_{ij} = k(yᵢ, xⱼ)`.
pub fn fit_kernel_edmd(
    data: &SnapshotSet,
    family: KernelFamily,
    policy: InversionPolicy,
) -> Result<DMatrix<f64>> {
    let (gram, zy) = translated_gram(data, family)?;
    let a = kernel_block(family, &zy, gram.points());
    gram.apply_inverse(&a, policy)
}

/// Linear DMD on raw (translated) states: `A` minimizing `‖A X − Y‖` with
/// states as columns. Returns an `n×n` matrix.
pub fn fit_dmd(data: &SnapshotSet) -> Result<DMatrix<f64>> {
    if data.len() < data.dimension() {
        return Err(Error::InvalidArgument(format!(
            "DMD needs at least n = {} pairs, got {}",
            data.dimension(),
            data.len()
        )));
    }
    let (zx, zy) = data.translated();
    // rows are states: zx Aᵀ ≈ zy
    Ok(lstsq_min_norm(&zx, &zy, LSTSQ_RTOL).transpose())
}

/// Size of the part of `K` that breaks the graded triangular structure, i.e.
/// entries `K_ij` with `|α(i)| < |α(j)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularityResidual {
    pub max_abs: f64,
    /// Frobenius norm of those entries over `‖K‖_F`.
    pub relative_frobenius: f64,
}

pub fn triangularity_residual(k: &KoopmanMatrix) -> TriangularityResidual {
    let basis = k.basis();
    let mut max_abs: f64 = 0.0;
    let mut off = 0.0;
    let v = k.values();
    for i in 0..v.nrows() {
        for j in 0..v.ncols() {
            if basis.degree_of(i) < basis.degree_of(j) {
                max_abs = max_abs.max(v[(i, j)].abs());
                off += v[(i, j)] * v[(i, j)];
            }
        }
    }
    let total = v.norm();
    TriangularityResidual {
        max_abs,
        relative_frobenius: if total > 0.0 { off.sqrt() / total } else { 0.0 },
    }
}

/// Kernel sections `eᵢ = k(cᵢ, ·)` around given centers (translated
/// coordinates). Not orthonormal; use with the non-orthonormal fit.
#[derive(Debug, Clone)]
pub struct KernelSectionBasis {
    family: KernelFamily,
    centers: DMatrix<f64>,
}

impl KernelSectionBasis {
    pub fn new(family: KernelFamily, centers: DMatrix<f64>) -> Self {
        Self { family, centers }
    }
}

impl FunctionBasis for KernelSectionBasis {
    fn len(&self) -> usize {
        self.centers.nrows()
    }

    fn dimension(&self) -> usize {
        self.centers.ncols()
    }

    fn evaluate(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != self.dimension() {
            return Err(Error::DimensionMismatch {
                context: "kernel-section basis point length",
                expected: self.dimension(),
                found: points.ncols(),
            });
        }
        Ok(kernel_block(self.family, points, &self.centers))
    }
}
